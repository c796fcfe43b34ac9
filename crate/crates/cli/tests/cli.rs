use std::path::Path;
use std::process::{Command, Output};

use sylvopt::discretize::{assemble_heat, make_desired_state, DesiredKind, Domain, Grid};
use sylvopt::linalg::market::read_dense;
use sylvopt::problem::{build_operator, TimeGrid};
use sylvopt::residual::dense_norms;

fn sylvopt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sylvopt"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Rows of a CSV table as maps from column name to value.
fn table(path: &Path) -> Vec<std::collections::BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("# sylvopt "), "{text}");
    let body = text.split_once('\n').unwrap().1;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().unwrap().clone();
    r.records()
        .map(|rec| header.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

fn without_times(rows: &mut [std::collections::BTreeMap<String, String>]) {
    for r in rows {
        r.retain(|k, _| !k.contains("time"));
    }
}

fn num(row: &std::collections::BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {:?}", row[key]))
}

#[test]
fn heat_solve_converges_with_small_subspace() {
    let dir = tempfile::tempdir().unwrap();
    let o = sylvopt(&["solve", "--set", "problem.level=5", "--set", "problem.n_t=100", "--set", "problem.beta=1e-4"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = table(&dir.path().join("report.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["converged"], "true");
    assert!(num(&rows[0], "p") <= 15.0);
    let conv = table(&dir.path().join("convergence.csv"));
    assert_eq!(conv.len() as f64, num(&rows[0], "iterations"));
}

#[test]
fn both_mode_reports_oracle_difference() {
    let dir = tempfile::tempdir().unwrap();
    let o = sylvopt(&["both", "--set", "problem.level=3", "--set", "problem.n_t=10"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let row = &table(&dir.path().join("report.csv"))[0];
    for k in ["err_y", "err_l", "err_u"] {
        assert!(num(row, k) <= 10.0 * 1e-4, "{k} = {}", row[k]);
    }
}

#[test]
fn tolerance_below_floor_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sylvopt(&["solve", "--set", "solver.tol=1e-12"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("config validation") && e.contains("1e-8"), "{e}");
}

#[test]
fn unknown_keys_and_bad_files_fail() {
    let dir = tempfile::tempdir().unwrap();
    let o = sylvopt(&["solve", "--set", "problem.levle=3"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = sylvopt(&["solve", "--config", "/nonexistent/run.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot read config"));
}

#[test]
fn iteration_limit_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = sylvopt(
        &["solve", "--set", "problem.level=4", "--set", "problem.n_t=20", "--set", "solver.max_iters=2"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("iteration limit"));
    assert_eq!(table(&dir.path().join("report.csv"))[0]["converged"], "false");
}

#[test]
fn oracle_guard_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = sylvopt(&["oracle", "--set", "problem.level=6"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("oracle size guard"), "{}", stderr(&o));
    let row = &table(&dir.path().join("report.csv"))[0];
    assert!(row["status"].starts_with("error"));
}

#[test]
fn config_file_sections_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[problem]\npde = \"convection_diffusion\"\nlevel = 3\nn_t = 10\nepsilon = 0.1\nbeta = 1e-3\n\n\
         [solver]\ntol = 1e-6\n\n[run]\nmode = \"oracle\"\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let o = sylvopt(&["--config", c, "--set", "problem.level=4"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let row = &table(&dir.path().join("report.csv"))[0];
    assert_eq!(row["mode"], "oracle");
    assert_eq!(row["n"], "289");
    assert_eq!(row["case"], "iv");
    assert_eq!(row["p"], "");
    let o = sylvopt(&["solve", "--config", c], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let row = &table(&dir.path().join("report.csv"))[0];
    assert_eq!(row["mode"], "solve");
    assert_eq!(row["epsilon"], "0.1");
}

#[test]
fn beta_by_level_sweep_is_deterministic_across_workers() {
    let args = |w: &'static str| {
        vec!["sweep", "--set", "sweep.beta=[1e-1, 1e-3, 1e-5]", "--set", "sweep.level=[3, 4, 5]", "--set", "problem.n_t=20", "--workers", w]
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(sylvopt(&args("1"), a.path()).status.code(), Some(0));
    assert_eq!(sylvopt(&args("4"), b.path()).status.code(), Some(0));
    for f in ["report.csv", "convergence.csv"] {
        let mut ra = table(&a.path().join(f));
        let mut rb = table(&b.path().join(f));
        without_times(&mut ra);
        without_times(&mut rb);
        assert_eq!(ra, rb, "{f}");
    }
    let rows = table(&a.path().join("report.csv"));
    assert_eq!(rows.len(), 9);
    let order: Vec<_> = rows.iter().map(|r| (r["level"].clone(), r["beta"].clone())).collect();
    assert_eq!(order[0], ("3".into(), "0.1".into()));
    assert_eq!(order[1], ("3".into(), "0.001".into()));
    assert_eq!(order[8], ("5".into(), "0.00001".into()));
}

#[test]
fn partial_observation_truncation_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = sylvopt(
        &[
            "sweep",
            "--set",
            "sweep.unobserved=[0, 100, 300, 500, 700, 900]",
            "--set",
            "sweep.truncation=[\"off\", 1e-12, 1e-10]",
            "--workers",
            "4",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = table(&dir.path().join("report.csv"));
    assert_eq!(rows.len(), 18);
    for chunk in rows.chunks(3) {
        assert_eq!(chunk[0]["truncation"], "off");
        assert!(num(&chunk[1], "p") <= num(&chunk[0], "p"), "{chunk:?}");
    }
    assert_eq!(rows[3]["case"], "ii");
    assert_eq!(rows[0]["case"], "i");
}

#[test]
fn sweep_cells_fail_independently() {
    let dir = tempfile::tempdir().unwrap();
    let o = sylvopt(
        &["sweep", "--set", "sweep.level=[3, 4]", "--set", "problem.n_t=10", "--set", "solver.max_iters=3"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let rows = table(&dir.path().join("report.csv"));
    assert_eq!(rows.len(), 2);
}

#[test]
fn empty_sweep_equals_single_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let common = ["--set", "problem.level=4", "--set", "problem.n_t=20"];
    let mut s = vec!["solve"];
    s.extend(common);
    let mut w = vec!["sweep"];
    w.extend(common);
    assert_eq!(sylvopt(&s, a.path()).status.code(), Some(0));
    assert_eq!(sylvopt(&w, b.path()).status.code(), Some(0));
    let mut ra = table(&a.path().join("report.csv"));
    let mut rb = table(&b.path().join("report.csv"));
    without_times(&mut ra);
    without_times(&mut rb);
    for r in ra.iter_mut().chain(rb.iter_mut()) {
        r.remove("mode");
    }
    assert_eq!(ra, rb);
}

#[test]
fn exported_factors_reproduce_reported_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let o = sylvopt(
        &["solve", "--set", "problem.level=4", "--set", "problem.n_t=20", "--set", "run.export=factored"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let row = &table(&dir.path().join("report.csv"))[0];
    let load = |name: &str| {
        let l = read_dense(dir.path().join(format!("solution_{name}_left.mm"))).unwrap();
        let r = read_dense(dir.path().join(format!("solution_{name}_right.mm"))).unwrap();
        l * r
    };
    let (y, lambda) = (load("Y"), load("L"));
    assert_eq!(y.shape(), (289, 20));
    let pde = assemble_heat(&Grid::new(4, Domain::UnitSquare).unwrap()).unwrap();
    let d = make_desired_state(&DesiredKind::default(), &pde.grid, 20, 1.0).unwrap();
    let op = build_operator(&pde, TimeGrid::new(1.0, 20).unwrap(), 1e-4, &d).unwrap();
    let norms = dense_norms(&op, &y, &lambda);
    for (got, key) in [(norms.r1, "r1"), (norms.r2, "r2")] {
        let want = num(row, key);
        assert!((got - want).abs() <= 1e-10 * want, "{key}: {got:e} vs {want:e}");
    }
}

#[test]
fn dense_export_writes_full_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let o = sylvopt(
        &["solve", "--set", "problem.level=3", "--set", "problem.n_t=8", "--set", "run.export=dense"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in ["Y", "L", "U"] {
        let m = read_dense(dir.path().join(format!("solution_{name}.mm"))).unwrap();
        assert_eq!(m.ncols(), 8);
    }
}
