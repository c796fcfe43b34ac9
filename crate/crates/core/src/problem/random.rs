//! Small randomized problem instances for consistency checks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CaseTag, TimeGrid};
use crate::discretize::{assemble_heat, restrict_control, DesiredState, DiscretizedPde, Domain, Grid};
use crate::linalg::SparseMatrix;

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub pde: DiscretizedPde,
    pub desired: DesiredState,
    pub time: TimeGrid,
    pub beta: f64,
}

/// Perturbed heat data on a `(2^level + 1)²` grid with the structure of `case`.
pub fn random_instance(case: CaseTag, level: u32, n_t: usize, rank: usize, seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::new(level, Domain::UnitSquare).expect("small level");
    let mut pde = assemble_heat(&grid).expect("heat assembly");
    let n = grid.num_nodes();

    let h2 = grid.h() * grid.h();
    let m: Vec<f64> = (0..n).map(|_| h2 * rng.random_range(0.5..1.5)).collect();
    pde.m = SparseMatrix::from_diagonal(&m);
    pde.m1 = pde.m.clone();
    pde.n = pde.m.clone();
    pde.mb = pde.m.clone();

    // symmetric perturbation on the existing pattern keeps K = Kᵀ bit-exactly
    let mut trip = Vec::new();
    for (i, j, v) in pde.k.triplets() {
        if i <= j {
            let p = v * (1.0 + 0.2 * rng.random_range(-1.0..1.0));
            trip.push((i, j, p));
            if i != j {
                trip.push((j, i, p));
            }
        }
    }
    pde.k = SparseMatrix::from_triplets(n, n, &trip).unwrap();
    pde.symmetric_k = true;

    match case {
        CaseTag::FullObservationDistributed => {}
        CaseTag::PartialObservation => {
            let mut d = m.clone();
            let mut zeroed = 0;
            for v in d.iter_mut() {
                if rng.random_bool(0.3) {
                    *v = 0.0;
                    zeroed += 1;
                }
            }
            if zeroed == 0 {
                d[0] = 0.0;
            }
            pde.m1 = SparseMatrix::from_diagonal(&d);
        }
        CaseTag::BoundaryControl => {
            let mut nodes: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
            if nodes.is_empty() || nodes.len() == n {
                nodes = vec![n / 2];
            }
            pde = restrict_control(&pde, &nodes).unwrap();
        }
        CaseTag::NonsymmetricK => {
            let trip: Vec<_> = pde
                .k
                .triplets()
                .map(|(i, j, v)| {
                    let skew = if i == j { 0.0 } else { 0.3 * rng.random_range(-1.0..1.0) };
                    (i, j, v + skew)
                })
                .collect();
            pde.k = SparseMatrix::from_triplets(n, n, &trip).unwrap();
            pde.symmetric_k = false;
        }
    }

    let desired = DesiredState {
        y1: DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0)),
        y2: DMatrix::from_fn(n_t, rank, |_, _| rng.random_range(-1.0..1.0)),
    };
    let t_final = rng.random_range(0.5..2.0);
    let beta = 10f64.powf(rng.random_range(-3.0..0.0));
    RandomInstance {
        pde,
        desired,
        time: TimeGrid::new(t_final, n_t).unwrap(),
        beta,
    }
}
