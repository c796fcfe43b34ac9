//! Galerkin projection onto rational Krylov spaces.
//!
//! Each iteration expands the basis with shifted solves, solves the projected
//! equation for `Z`, evaluates the residual norms of both optimality
//! equations and optionally truncates the basis via an SVD of `Z`.

mod reduced;
mod shifts;
mod state;

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

pub use reduced::{workspace_bytes, ReducedCoefficients};
pub use shifts::{adaptive_shift, pencil_values, ritz_values};
pub use state::{Direction, KrylovState, SHIFTED_SOLVE_TOL};

use crate::linalg::dense_svd;
use crate::problem::{CaseTag, SylvesterOperator};
use crate::residual::ResidualNorms;
use crate::{Error, Result};

/// Smallest accepted tolerance; direct solutions of the full system do not
/// get much below this either.
pub const MIN_TOL: f64 = 1e-8;
/// Relative singular value cut used for the reported solution rank.
pub const RANK_TOL: f64 = 1e-12;
/// Consecutive expansions that append nothing new while the residual drops
/// by under 1% before giving up.
pub const STAGNATION_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Truncation {
    #[default]
    Off,
    /// Drop directions with `σᵢ < threshold·σ₁`.
    Threshold(f64),
}

/// Threshold used when truncation is enabled without an explicit value.
pub const DEFAULT_TRUNCATION_THRESHOLD: f64 = 1e-12;

impl fmt::Display for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Truncation::Off => write!(f, "off"),
            Truncation::Threshold(t) => write!(f, "{t:e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub truncation: Truncation,
    /// Subspace recipe; defaults to the operator's case.
    pub recipe: Option<CaseTag>,
    /// Source of the next expansion vector; defaults by recipe.
    pub direction: Option<Direction>,
    /// Compare incremental projections against a recomputation every iteration.
    pub check_projections: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iters: 200,
            truncation: Truncation::default(),
            recipe: None,
            direction: None,
            check_projections: cfg!(debug_assertions),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= MIN_TOL && self.tol < 1.0) {
            return Err(Error::InvalidInput(format!(
                "tol must lie in [{MIN_TOL:e}, 1), got {:e}: the attainable residual of the \
                 discrete system is limited to about 1e-9, so smaller tolerances cannot be met",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be positive".into()));
        }
        if let Truncation::Threshold(t) = self.truncation {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "truncation threshold must lie in (0, 1), got {t:e}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub p: usize,
    pub norms: ResidualNorms,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `F₁ = 0`, so `X = 0`.
    Trivial,
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub p: usize,
    pub rank: usize,
    pub history: Vec<IterationRecord>,
    pub wall_time: Duration,
    pub memory_bytes: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub shifts: (Vec<f64>, Vec<f64>),
}

impl SolveReport {
    pub fn final_norms(&self) -> ResidualNorms {
        self.history.last().map(|r| r.norms).unwrap_or_default()
    }
}

/// Low-rank solution `X ≈ V Z` with `V` orthonormal.
#[derive(Debug, Clone)]
pub struct Solution {
    pub v: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub report: SolveReport,
}

/// `left · right`, kept factored.
#[derive(Debug, Clone, PartialEq)]
pub struct Factored {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

impl Factored {
    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.left * &self.right
    }

    pub fn rank(&self) -> usize {
        self.left.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    pub y: Factored,
    pub lambda: Factored,
    pub u: Factored,
}

/// `Y = V Z_Y`, `Λ = V Z_Λ`, `U = ((1/β) M_b⁻¹ Nᵀ V) Z_Λ`.
pub fn recover_solution(v: &DMatrix<f64>, z: &DMatrix<f64>, op: &SylvesterOperator) -> Recovered {
    let nt = op.n_t();
    let zy = z.columns(0, nt).into_owned();
    let zl = z.columns(nt, nt).into_owned();
    let mut ul = op.control().tr_mul_dense(v);
    let mb = op.control_mass();
    let beta = op.beta();
    for mut col in ul.column_iter_mut() {
        col.iter_mut().zip(mb).for_each(|(x, m)| *x /= m * beta);
    }
    Recovered {
        y: Factored {
            left: v.clone(),
            right: zy,
        },
        lambda: Factored {
            left: v.clone(),
            right: zl.clone(),
        },
        u: Factored { left: ul, right: zl },
    }
}

/// Numerical rank of `z` at relative level [`RANK_TOL`].
pub fn numerical_rank(z: &DMatrix<f64>) -> usize {
    if z.is_empty() {
        return 0;
    }
    let s = dense_svd(z).singular_values;
    let s1 = s.get(0).copied().unwrap_or(0.0);
    if s1 == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > RANK_TOL * s1).count()
}

pub fn solve(op: &SylvesterOperator, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let start = Instant::now();
    let recipe = cfg.recipe.unwrap_or(op.case());
    let direction = cfg.direction.unwrap_or(Direction::default_for(recipe));
    let Some(mut st) = KrylovState::initialize(op, recipe, direction) else {
        return Ok(Solution {
            v: DMatrix::zeros(op.n(), 0),
            z: DMatrix::zeros(0, 2 * op.n_t()),
            report: SolveReport {
                iterations: 0,
                p: 0,
                rank: 0,
                history: Vec::new(),
                wall_time: start.elapsed(),
                memory_bytes: 0,
                converged: true,
                stop: StopReason::Trivial,
                shifts: (Vec::new(), Vec::new()),
            },
        });
    };

    let mut history = Vec::new();
    let mut stalled = 0;
    let mut prev_residual = f64::INFINITY;
    let mut stop = StopReason::MaxIterations;
    for k in 1..=cfg.max_iters {
        let added = if k > 1 { st.expand()? } else { st.p() };
        let p = st.p();
        if cfg.check_projections {
            let defect = st.projection_defect();
            debug_assert!(defect <= 1e-10, "projection defect {defect:e} at iteration {k}");
        }
        st.solve_reduced(k)?;
        let norms = st.residual_norms();
        history.push(IterationRecord {
            iteration: k,
            p,
            norms,
            elapsed: start.elapsed(),
        });
        let residual = norms.max();
        if residual <= cfg.tol {
            stop = StopReason::Converged;
            break;
        }
        if !residual.is_finite() {
            return Err(Error::SingularReduced { iteration: k, p });
        }
        if k > 1 && added == 0 && residual > 0.99 * prev_residual {
            stalled += 1;
            if stalled >= STAGNATION_WINDOW {
                return Err(Error::Stagnation {
                    iteration: k,
                    stalled,
                    residual,
                });
            }
        } else {
            stalled = 0;
        }
        prev_residual = residual;
        if let Truncation::Threshold(t) = cfg.truncation {
            st.truncate(t);
        }
    }

    let (s1, s2) = st.shifts();
    let report = SolveReport {
        iterations: history.len(),
        p: st.p(),
        rank: numerical_rank(st.z()),
        wall_time: start.elapsed(),
        memory_bytes: st.peak_bytes(),
        converged: stop == StopReason::Converged,
        stop,
        shifts: (s1.to_vec(), s2.to_vec()),
        history,
    };
    Ok(Solution {
        v: st.basis(),
        z: st.z().clone(),
        report,
    })
}
