//! Run configuration: a sectioned TOML file plus `section.key=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sylvopt::discretize::{DesiredKind, Domain};
use sylvopt::problem::CaseTag;
use sylvopt::solver::{Direction, SolverConfig, Truncation, DEFAULT_TRUNCATION_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Solve,
    Oracle,
    Both,
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pde {
    Heat,
    ConvectionDiffusion,
}

impl fmt::Display for Pde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pde::Heat => "heat",
            Pde::ConvectionDiffusion => "convection_diffusion",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSpec {
    UnitSquare,
    SymmetricSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesiredSpec {
    ConstantRank1,
    Rank6Modes,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Export {
    None,
    Factored,
    Dense,
}

/// `"off"` or a relative threshold; `"on"` selects the default threshold.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TruncationSpec {
    Threshold(f64),
    Named(String),
}

impl TruncationSpec {
    pub fn resolve(&self) -> Result<Truncation> {
        match self {
            TruncationSpec::Threshold(t) => Ok(Truncation::Threshold(*t)),
            TruncationSpec::Named(s) => match s.trim().to_ascii_lowercase().as_str() {
                "off" | "none" => Ok(Truncation::Off),
                "on" => Ok(Truncation::Threshold(DEFAULT_TRUNCATION_THRESHOLD)),
                other => match other.parse::<f64>() {
                    Ok(t) => Ok(Truncation::Threshold(t)),
                    Err(_) => bail!("truncation must be `off`, `on` or a threshold, got `{s}`"),
                },
            },
        }
    }
}

impl Default for TruncationSpec {
    fn default() -> Self {
        TruncationSpec::Named("off".into())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub pde: Pde,
    pub level: u32,
    /// Defaults to the unit square for heat and `[-1,1]²` for convection-diffusion.
    pub domain: Option<DomainSpec>,
    pub epsilon: f64,
    /// Number of unobserved nodes, taken from the corner at the upper right.
    pub unobserved: usize,
    pub boundary_control: bool,
    pub desired: DesiredSpec,
    pub desired_fraction: f64,
    pub desired_y1: Option<PathBuf>,
    pub desired_y2: Option<PathBuf>,
    pub t_final: f64,
    pub n_t: usize,
    pub beta: f64,
    /// Forces the case tag instead of detecting it.
    pub case: Option<String>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            pde: Pde::Heat,
            level: 5,
            domain: None,
            epsilon: 1.0,
            unobserved: 0,
            boundary_control: false,
            desired: DesiredSpec::ConstantRank1,
            desired_fraction: 0.25,
            desired_y1: None,
            desired_y2: None,
            t_final: 1.0,
            n_t: 100,
            beta: 1e-4,
            case: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iters: usize,
    pub truncation: TruncationSpec,
    /// Seed of the start vector of the spectral estimate.
    pub seed: Option<u64>,
    /// Subspace recipe (`i`..`iv`); defaults to the detected case.
    pub recipe: Option<String>,
    /// `nested` or `residual`; defaults by recipe.
    pub direction: Option<String>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            tol: d.tol,
            max_iters: d.max_iters,
            truncation: TruncationSpec::default(),
            seed: None,
            recipe: None,
            direction: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: Mode,
    pub out: PathBuf,
    pub workers: usize,
    pub export: Export,
    /// Largest `n·n_T` for the direct solver.
    pub oracle_limit: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: Mode::Solve,
            out: PathBuf::from("out"),
            workers: 1,
            export: Export::None,
            oracle_limit: sylvopt::oracle::DEFAULT_GUARD,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub level: Vec<u32>,
    pub n_t: Vec<usize>,
    pub beta: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub unobserved: Vec<usize>,
    pub truncation: Vec<TruncationSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub solver: SolverSection,
    pub run: RunSection,
    pub sweep: SweepSection,
}

/// One point of a sweep: the problem and solver sections with the axes applied.
#[derive(Debug, Clone)]
pub struct Cell {
    pub problem: ProblemSection,
    pub solver: SolverSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("config {} is not valid TOML", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for cell in self.cells() {
            cell.validate()?;
        }
        if self.run.workers == 0 {
            bail!("run.workers must be at least 1");
        }
        Ok(())
    }

    /// Cross product of the sweep axes in row-major order
    /// (level, n_t, beta, epsilon, unobserved, truncation); a single cell when no axis is set.
    pub fn cells(&self) -> Vec<Cell> {
        fn axis<T: Clone>(v: &[T], base: T) -> Vec<T> {
            if v.is_empty() {
                vec![base]
            } else {
                v.to_vec()
            }
        }
        let (p, s, w) = (&self.problem, &self.solver, &self.sweep);
        let mut out = Vec::new();
        for level in axis(&w.level, p.level) {
            for n_t in axis(&w.n_t, p.n_t) {
                for beta in axis(&w.beta, p.beta) {
                    for epsilon in axis(&w.epsilon, p.epsilon) {
                        for unobserved in axis(&w.unobserved, p.unobserved) {
                            for truncation in axis(&w.truncation, s.truncation.clone()) {
                                out.push(Cell {
                                    problem: ProblemSection { level, n_t, beta, epsilon, unobserved, ..p.clone() },
                                    solver: SolverSection { truncation, ..s.clone() },
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

impl Cell {
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if !(p.beta > 0.0 && p.beta.is_finite()) {
            bail!("problem.beta must be positive, got {}", p.beta);
        }
        if !(p.t_final > 0.0 && p.t_final.is_finite()) {
            bail!("problem.t_final must be positive, got {}", p.t_final);
        }
        if p.n_t == 0 {
            bail!("problem.n_t must be at least 1");
        }
        if p.pde == Pde::ConvectionDiffusion && !(p.epsilon > 0.0 && p.epsilon.is_finite()) {
            bail!("problem.epsilon must be positive, got {}", p.epsilon);
        }
        if p.desired == DesiredSpec::File && (p.desired_y1.is_none() || p.desired_y2.is_none()) {
            bail!("problem.desired = \"file\" needs problem.desired_y1 and problem.desired_y2");
        }
        if p.unobserved > 0 && p.boundary_control {
            bail!("partial observation and boundary control cannot be combined");
        }
        if let Some(c) = &p.case {
            c.parse::<CaseTag>()?;
        }
        self.solver_config()?.validate()?;
        Ok(())
    }

    pub fn domain(&self) -> Domain {
        match (self.problem.domain, self.problem.pde) {
            (Some(DomainSpec::UnitSquare), _) => Domain::UnitSquare,
            (Some(DomainSpec::SymmetricSquare), _) => Domain::SymmetricSquare,
            (None, Pde::Heat) => Domain::UnitSquare,
            (None, Pde::ConvectionDiffusion) => Domain::SymmetricSquare,
        }
    }

    pub fn desired_kind(&self) -> DesiredKind {
        let p = &self.problem;
        match p.desired {
            DesiredSpec::ConstantRank1 => DesiredKind::ConstantRank1 { fraction: p.desired_fraction },
            DesiredSpec::Rank6Modes => DesiredKind::Rank6Modes,
            DesiredSpec::File => DesiredKind::FromFile {
                y1: p.desired_y1.clone().unwrap_or_default(),
                y2: p.desired_y2.clone().unwrap_or_default(),
            },
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        let recipe = s.recipe.as_deref().map(str::parse::<CaseTag>).transpose()?;
        let direction = match s.direction.as_deref().map(|d| d.trim().to_ascii_lowercase()) {
            None => None,
            Some(d) if d == "nested" => Some(Direction::Nested),
            Some(d) if d == "residual" => Some(Direction::Residual),
            Some(d) => bail!("solver.direction must be `nested` or `residual`, got `{d}`"),
        };
        Ok(SolverConfig {
            tol: s.tol,
            max_iters: s.max_iters,
            truncation: s.truncation.resolve()?,
            recipe,
            direction,
            check_projections: false,
        })
    }
}

/// Sets `section.key` in `table`; the value is parsed as TOML and falls back to a string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override `{spec}` is not of the form section.key=value");
    };
    let key = key.trim();
    let Some((section, field)) = key.split_once('.') else {
        bail!("override key `{key}` must be section.key");
    };
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let Some(sec) = entry.as_table_mut() else {
        bail!("`{section}` is not a section");
    };
    sec.insert(field.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from(text: &str, overrides: &[&str]) -> Result<RunConfig> {
        let mut table: toml::Table = text.parse()?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Ok(toml::Value::Table(table).try_into()?)
    }

    #[test]
    fn defaults_describe_a_heat_run() {
        let c = from("", &[]).unwrap();
        assert_eq!(c.problem.pde, Pde::Heat);
        assert_eq!(c.solver.tol, 1e-4);
        assert_eq!(c.cells().len(), 1);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn overrides_parse_typed_values() {
        let c = from(
            "[problem]\nlevel = 3\n",
            &["problem.level=4", "problem.pde=convection_diffusion", "sweep.beta=[0.1, 1e-3]", "solver.truncation=1e-10"],
        )
        .unwrap();
        assert_eq!(c.problem.level, 4);
        assert_eq!(c.problem.pde, Pde::ConvectionDiffusion);
        assert_eq!(c.sweep.beta, vec![0.1, 1e-3]);
        assert_eq!(c.solver.truncation.resolve().unwrap(), Truncation::Threshold(1e-10));
    }

    #[test]
    fn malformed_overrides_are_rejected() {
        let mut t = toml::Table::new();
        assert!(apply_override(&mut t, "level=3").is_err());
        assert!(apply_override(&mut t, "problem.level").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(from("[problem]\nlevle = 3\n", &[]).is_err());
    }

    #[test]
    fn sweep_is_a_cross_product_in_fixed_order() {
        let c = from(
            "[sweep]\nbeta = [0.1, 0.001, 1e-5]\nlevel = [5, 6, 7]\n",
            &[],
        )
        .unwrap();
        let cells = c.cells();
        assert_eq!(cells.len(), 9);
        let order: Vec<_> = cells.iter().map(|x| (x.problem.level, x.problem.beta)).collect();
        assert_eq!(order[0], (5, 0.1));
        assert_eq!(order[1], (5, 0.001));
        assert_eq!(order[3], (6, 0.1));
    }

    #[test]
    fn mixed_truncation_axis() {
        let c = from("[sweep]\nunobserved = [0, 100]\ntruncation = [\"off\", 1e-12, 1e-10]\n", &[]).unwrap();
        let t: Vec<_> = c.cells().iter().map(|x| x.solver.truncation.resolve().unwrap()).collect();
        assert_eq!(t.len(), 6);
        assert_eq!(t[0], Truncation::Off);
        assert_eq!(t[1], Truncation::Threshold(1e-12));
    }

    #[test]
    fn validation_messages() {
        let tiny = from("", &["solver.tol=1e-12"]).unwrap();
        let msg = format!("{:#}", tiny.validate().unwrap_err());
        assert!(msg.contains("1e-8"), "{msg}");
        assert!(from("", &["problem.beta=0"]).unwrap().validate().is_err());
        assert!(from("", &["problem.desired=\"file\""]).unwrap().validate().is_err());
        assert!(from("", &["problem.unobserved=10", "problem.boundary_control=true"])
            .unwrap()
            .validate()
            .is_err());
        assert!(from("", &["solver.direction=sideways"]).unwrap().validate().is_err());
        assert!(from("", &["run.workers=0"]).unwrap().validate().is_err());
    }
}
