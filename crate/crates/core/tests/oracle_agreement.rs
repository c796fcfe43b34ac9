use nalgebra::DMatrix;
use sylvopt::discretize::*;
use sylvopt::oracle::{assemble_full, solve_full};
use sylvopt::problem::{build_operator, CaseTag, SylvesterOperator, TimeGrid};
use sylvopt::solver::{recover_solution, solve, SolverConfig};

fn operator(pde: &DiscretizedPde, n_t: usize, beta: f64) -> SylvesterOperator {
    let d = make_desired_state(&DesiredKind::default(), &pde.grid, n_t, 1.0).unwrap();
    build_operator(pde, TimeGrid::new(1.0, n_t).unwrap(), beta, &d).unwrap()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn check(op: &SylvesterOperator, expected: CaseTag, bound: f64) {
    assert_eq!(op.case(), expected);
    let cfg = SolverConfig { tol: 1e-8, ..Default::default() };
    let sol = solve(op, &cfg).unwrap();
    assert!(sol.report.converged, "{expected:?}: {:?}", sol.report.final_norms());
    let rec = recover_solution(&sol.v, &sol.z, op);
    let full = solve_full(&assemble_full(op).unwrap(), op).unwrap();
    let ey = rel(&rec.y.to_dense(), &full.y);
    let el = rel(&rec.lambda.to_dense(), &full.lambda);
    let eu = rel(&rec.u.to_dense(), &full.u);
    assert!(ey.max(el).max(eu) <= bound, "{expected:?}: Y {ey:e}, Λ {el:e}, U {eu:e}");
}

fn heat(level: u32) -> DiscretizedPde {
    assemble_heat(&Grid::new(level, Domain::UnitSquare).unwrap()).unwrap()
}

#[test]
fn full_observation_matches_direct_solve() {
    check(&operator(&heat(4), 20, 1e-4), CaseTag::FullObservationDistributed, 1e-5);
}

#[test]
fn partial_observation_matches_direct_solve() {
    let pde = heat(4);
    let masked = apply_observation_mask(&pde, &corner_mask(&pde.grid, 100).unwrap()).unwrap();
    check(&operator(&masked, 20, 1e-4), CaseTag::PartialObservation, 1e-5);
}

#[test]
fn boundary_control_matches_direct_solve() {
    let b = restrict_control_to_boundary(&heat(4)).unwrap();
    for beta in [1e-1, 1e-3, 1e-5] {
        check(&operator(&b, 20, beta), CaseTag::BoundaryControl, 1e-5);
    }
}

#[test]
fn convection_diffusion_matches_direct_solve() {
    let pde = assemble_convection_diffusion(&Grid::new(4, Domain::SymmetricSquare).unwrap(), 0.1).unwrap();
    check(&operator(&pde, 20, 1e-3), CaseTag::NonsymmetricK, 1e-5);
}
