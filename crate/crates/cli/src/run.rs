//! Execution of single cells and of whole sweeps.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use sylvopt::discretize::{
    apply_observation_mask, assemble_convection_diffusion, assemble_heat, corner_mask, make_desired_state,
    restrict_control_to_boundary, Grid,
};
use sylvopt::linalg::market::write_dense;
use sylvopt::oracle::{assemble_full_with_guard, solve_full};
use sylvopt::problem::{build_operator_with, CaseTag, OperatorOptions, SylvesterOperator, TimeGrid};
use sylvopt::solver::{recover_solution, solve, Recovered, StopReason};
use sylvopt::Error;

use crate::config::{Cell, Export, Mode, Pde};
use crate::output::{ConvergenceRow, ReportRow};

/// Largest `n·n_T` written as a dense MatrixMarket file.
pub const DENSE_EXPORT_LIMIT: usize = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Converged,
    NotConverged,
    Failed,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Converged => 0,
            Status::NotConverged => 2,
            Status::Failed => 1,
        }
    }
}

pub struct CellOutcome {
    pub status: Status,
    pub report: ReportRow,
    pub convergence: Vec<ConvergenceRow>,
    /// Human-readable failure or non-convergence reason.
    pub message: Option<String>,
}

pub struct Exports<'a> {
    pub dir: &'a Path,
    pub kind: Export,
}

pub fn build(cell: &Cell) -> Result<SylvesterOperator> {
    let p = &cell.problem;
    let grid = Grid::new(p.level, cell.domain()).context("assembly failed")?;
    let mut pde = match p.pde {
        Pde::Heat => assemble_heat(&grid),
        Pde::ConvectionDiffusion => assemble_convection_diffusion(&grid, p.epsilon),
    }
    .context("assembly failed")?;
    if p.unobserved > 0 {
        let mask = corner_mask(&pde.grid, p.unobserved).context("assembly failed")?;
        pde = apply_observation_mask(&pde, &mask).context("assembly failed")?;
    }
    if p.boundary_control {
        pde = restrict_control_to_boundary(&pde).context("assembly failed")?;
    }
    let desired = make_desired_state(&cell.desired_kind(), &pde.grid, p.n_t, p.t_final)
        .context("desired state could not be built")?;
    let opts = OperatorOptions {
        case: p.case.as_deref().map(str::parse::<CaseTag>).transpose()?,
        seed: cell.solver.seed,
        ..Default::default()
    };
    let time = TimeGrid::new(p.t_final, p.n_t).context("assembly failed")?;
    build_operator_with(&pde, time, p.beta, &desired, &opts).context("assembly failed")
}

fn base_row(index: usize, mode: Mode, cell: &Cell) -> ReportRow {
    let p = &cell.problem;
    ReportRow {
        cell: index,
        mode: format!("{mode:?}").to_ascii_lowercase(),
        pde: p.pde.to_string(),
        level: p.level,
        n_t: p.n_t,
        beta: p.beta,
        epsilon: (p.pde == Pde::ConvectionDiffusion).then_some(p.epsilon),
        unobserved: p.unobserved,
        truncation: cell
            .solver
            .truncation
            .resolve()
            .map(|t| t.to_string())
            .unwrap_or_default(),
        ..Default::default()
    }
}

fn relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = (a - b).norm();
    let s = b.norm();
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

/// Runs one cell. Errors are folded into the returned row.
pub fn run_cell(index: usize, mode: Mode, cell: &Cell, oracle_limit: usize, exports: Option<&Exports<'_>>) -> CellOutcome {
    let mut report = base_row(index, mode, cell);
    let mut convergence = Vec::new();
    match execute(mode, cell, oracle_limit, exports, &mut report, &mut convergence, index) {
        Ok((status, message)) => {
            report.status = match status {
                Status::Converged => "converged".into(),
                Status::NotConverged => message.clone().unwrap_or_else(|| "not converged".into()),
                Status::Failed => "failed".into(),
            };
            CellOutcome { status, report, convergence, message }
        }
        Err(e) => {
            let msg = format!("{e:#}");
            report.status = format!("error: {msg}");
            CellOutcome { status: Status::Failed, report, convergence, message: Some(msg) }
        }
    }
}

fn execute(
    mode: Mode,
    cell: &Cell,
    oracle_limit: usize,
    exports: Option<&Exports<'_>>,
    report: &mut ReportRow,
    convergence: &mut Vec<ConvergenceRow>,
    index: usize,
) -> Result<(Status, Option<String>)> {
    cell.validate().context("config validation failed")?;
    let op = build(cell)?;
    report.n = op.n();
    report.case = op.case().to_string();
    let mut status = Status::Converged;
    let mut message = None;
    let mut recovered: Option<Recovered> = None;

    if mode != Mode::Oracle {
        let cfg = cell.solver_config()?;
        match solve(&op, &cfg) {
            Ok(sol) => {
                let r = &sol.report;
                let last = r.final_norms();
                report.p = Some(r.p);
                report.rank = Some(r.rank);
                report.iterations = Some(r.iterations);
                report.time_s = Some(r.wall_time.as_secs_f64());
                report.memory_mb = Some(r.memory_bytes as f64 / (1u64 << 20) as f64);
                report.converged = Some(r.converged);
                report.r1 = Some(last.r1);
                report.r2 = Some(last.r2);
                report.rho3 = Some(last.rho3);
                for h in &r.history {
                    convergence.push(ConvergenceRow {
                        cell: index,
                        iteration: h.iteration,
                        p: h.p,
                        r1: h.norms.r1,
                        r2: h.norms.r2,
                        rho3: h.norms.rho3,
                        time_s: h.elapsed.as_secs_f64(),
                    });
                }
                if !r.converged {
                    status = Status::NotConverged;
                    message = Some(match r.stop {
                        StopReason::MaxIterations => format!(
                            "not converged: iteration limit {} reached with residual {:.3e}",
                            cfg.max_iters,
                            last.max()
                        ),
                        other => format!("not converged: {other:?}"),
                    });
                }
                recovered = Some(recover_solution(&sol.v, &sol.z, &op));
            }
            Err(e @ Error::Stagnation { .. }) => {
                report.converged = Some(false);
                return Ok((Status::NotConverged, Some(format!("solver stagnated: {e}"))));
            }
            Err(e) => return Err(e).context("solver failed"),
        }
    }

    if mode == Mode::Oracle || mode == Mode::Both {
        let t = Instant::now();
        let sys = assemble_full_with_guard(&op, oracle_limit).context("oracle failed")?;
        let full = solve_full(&sys, &op).context("oracle failed")?;
        report.oracle_time_s = Some(t.elapsed().as_secs_f64());
        report.oracle_residual = Some(full.relative_residual);
        if let Some(rec) = &recovered {
            report.err_y = Some(relative(&rec.y.to_dense(), &full.y));
            report.err_l = Some(relative(&rec.lambda.to_dense(), &full.lambda));
            report.err_u = Some(relative(&rec.u.to_dense(), &full.u));
        }
        if let Some(x) = exports.filter(|x| x.kind != Export::None && recovered.is_none()) {
            for (name, m) in [("Y", &full.y), ("L", &full.lambda), ("U", &full.u)] {
                write_dense(x.dir.join(format!("oracle_{name}.mm")), m)?;
            }
        }
    }

    if let (Some(x), Some(rec)) = (exports, &recovered) {
        export_solution(x, rec, op.n() * op.n_t())?;
    }
    Ok((status, message))
}

fn export_solution(x: &Exports<'_>, rec: &Recovered, size: usize) -> Result<()> {
    let parts = [("Y", &rec.y), ("L", &rec.lambda), ("U", &rec.u)];
    match x.kind {
        Export::None => {}
        Export::Factored => {
            for (name, f) in parts {
                write_dense(x.dir.join(format!("solution_{name}_left.mm")), &f.left)?;
                write_dense(x.dir.join(format!("solution_{name}_right.mm")), &f.right)?;
            }
        }
        Export::Dense => {
            anyhow::ensure!(
                size <= DENSE_EXPORT_LIMIT,
                "dense export of {size} entries exceeds the limit {DENSE_EXPORT_LIMIT}; use export = \"factored\""
            );
            for (name, f) in parts {
                write_dense(x.dir.join(format!("solution_{name}.mm")), &f.to_dense())?;
            }
        }
    }
    Ok(())
}

/// Runs `count` independent jobs on up to `workers` threads; results keep job order.
pub fn parallel<T: Send>(count: usize, workers: usize, job: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, count.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= count {
                    break;
                }
                let out = job(i);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|x| x.expect("every job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_keeps_order() {
        let out = parallel(17, 4, |i| i * i);
        assert_eq!(out, (0..17).map(|i| i * i).collect::<Vec<_>>());
        assert!(parallel(0, 3, |i| i).is_empty());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Status::Converged.exit_code(), 0);
        assert_eq!(Status::NotConverged.exit_code(), 2);
        assert_eq!(Status::Failed.exit_code(), 1);
    }
}
