mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{Cell, Mode, RunConfig};
use run::{parallel, run_cell, CellOutcome, Exports, Status};

/// Low-rank solver for space-time optimality systems of parabolic control problems.
#[derive(Parser, Debug)]
#[command(name = "sylvopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set problem.level=6`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (`run.out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallel sweep cells (`run.workers`).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Low-rank solve.
    Solve,
    /// Direct solve of the full space-time system.
    Oracle,
    /// Both, with the relative difference in the report.
    Both,
    /// Cross product of the `[sweep]` axes, solver only.
    Sweep,
}

impl From<Command> for Mode {
    fn from(c: Command) -> Self {
        match c {
            Command::Solve => Mode::Solve,
            Command::Oracle => Mode::Oracle,
            Command::Both => Mode::Both,
            Command::Sweep => Mode::Sweep,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(c) = cli.command {
        cfg.run.mode = c.into();
    }
    if let Some(o) = &cli.out {
        cfg.run.out = o.clone();
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w;
    }
    cfg.validate().context("config validation failed")?;
    Ok(cfg)
}

fn execute(cfg: &RunConfig) -> Result<Status> {
    let out = &cfg.run.out;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let (cells, mode) = match cfg.run.mode {
        Mode::Sweep => (cfg.cells(), Mode::Solve),
        m => (vec![Cell { problem: cfg.problem.clone(), solver: cfg.solver.clone() }], m),
    };
    let exports = Exports { dir: out, kind: cfg.run.export };
    let single = cells.len() == 1 && cfg.run.mode != Mode::Sweep;
    let outcomes: Vec<CellOutcome> = parallel(cells.len(), cfg.run.workers, |i| {
        run_cell(i, mode, &cells[i], cfg.run.oracle_limit, single.then_some(&exports))
    });

    let mut reports = Vec::new();
    let mut convergence = Vec::new();
    for o in &outcomes {
        print_outcome(o);
        reports.push(o.report.clone());
        convergence.extend(o.convergence.iter().cloned());
    }
    output::write_report(out, &reports)?;
    output::write_convergence(out, &convergence)?;
    Ok(outcomes.iter().map(|o| o.status).max().unwrap_or(Status::Converged))
}

fn print_outcome(o: &CellOutcome) {
    let r = &o.report;
    let mut line = format!("cell {}: {} n={} n_T={} β={:e}", r.cell, r.pde, r.n, r.n_t, r.beta);
    if let Some(e) = r.epsilon {
        line.push_str(&format!(" ε={e:e}"));
    }
    if let (Some(p), Some(it), Some(t)) = (r.p, r.iterations, r.time_s) {
        line.push_str(&format!(" p={p} iterations={it} time={t:.3}s"));
    }
    if let Some(t) = r.oracle_time_s {
        line.push_str(&format!(" oracle={t:.3}s"));
    }
    if let (Some(y), Some(l), Some(u)) = (r.err_y, r.err_l, r.err_u) {
        line.push_str(&format!(" err(Y,Λ,U)=({y:.2e}, {l:.2e}, {u:.2e})"));
    }
    match (&o.status, &o.message) {
        (Status::Converged, _) => println!("{line}: ok"),
        (_, Some(m)) => {
            println!("{line}: {}", if o.status == Status::Failed { "error" } else { "not converged" });
            eprintln!("cell {}: {m}", r.cell);
        }
        (_, None) => println!("{line}: not converged"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|cfg| execute(&cfg));
    match result {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Status::Failed.exit_code())
        }
    }
}
