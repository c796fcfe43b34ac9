use super::grid::{Domain, Grid};
use crate::linalg::SparseMatrix;
use crate::{Error, Result};

/// Discretized spatial operators of the control problem.
///
/// `m`, `m1` and `mb` are diagonal; `n` is `n × n_b`.
#[derive(Debug, Clone)]
pub struct DiscretizedPde {
    pub grid: Grid,
    pub m: SparseMatrix,
    pub k: SparseMatrix,
    pub m1: SparseMatrix,
    pub n: SparseMatrix,
    pub mb: SparseMatrix,
    pub symmetric_k: bool,
    pub epsilon: Option<f64>,
}

impl DiscretizedPde {
    pub fn num_nodes(&self) -> usize {
        self.m.nrows()
    }

    pub fn num_controls(&self) -> usize {
        self.n.ncols()
    }
}

/// Element Laplacian of a square bilinear element (independent of `h` in 2D).
const LOCAL_STIFFNESS: [[f64; 4]; 4] = {
    let d = 2.0 / 3.0;
    let e = -1.0 / 6.0;
    let o = -1.0 / 3.0;
    [[d, e, o, e], [e, d, e, o], [o, e, d, e], [e, o, e, d]]
};

const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

// reference corners in the same order as `Grid::cell_nodes`
const CORNERS: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];

fn shape(a: usize, xi: f64, eta: f64) -> (f64, f64, f64) {
    let (cx, cy) = CORNERS[a];
    let fx = if cx == 0.0 { 1.0 - xi } else { xi };
    let fy = if cy == 0.0 { 1.0 - eta } else { eta };
    let dx = if cx == 0.0 { -1.0 } else { 1.0 };
    let dy = if cy == 0.0 { -1.0 } else { 1.0 };
    (fx * fy, dx * fy, fx * dy)
}

pub fn wind(x: f64, y: f64) -> (f64, f64) {
    (2.0 * y * (1.0 - x * x), -2.0 * x * (1.0 - y * y))
}

fn lumped_mass(grid: &Grid) -> Vec<f64> {
    let q = grid.h() * grid.h() / 4.0;
    let mut d = vec![0.0; grid.num_nodes()];
    for cj in 0..grid.cells {
        for ci in 0..grid.cells {
            for node in grid.cell_nodes(ci, cj) {
                d[node] += q;
            }
        }
    }
    d
}

/// Drops couplings involving boundary nodes and puts the boundary mass on
/// the diagonal of the boundary rows.
fn dirichlet(grid: &Grid, trip: Vec<(usize, usize, f64)>, mass: &[f64]) -> Result<SparseMatrix> {
    let mut kept: Vec<_> = trip
        .into_iter()
        .filter(|&(r, c, _)| !grid.is_boundary(r) && !grid.is_boundary(c))
        .collect();
    for b in grid.boundary_nodes() {
        kept.push((b, b, mass[b]));
    }
    Ok(SparseMatrix::from_triplets(
        grid.num_nodes(),
        grid.num_nodes(),
        &kept,
    )?)
}

fn diffusion_triplets(grid: &Grid) -> Vec<(usize, usize, f64)> {
    let mut trip = Vec::with_capacity(16 * grid.cells * grid.cells);
    for cj in 0..grid.cells {
        for ci in 0..grid.cells {
            let nodes = grid.cell_nodes(ci, cj);
            for a in 0..4 {
                for b in 0..4 {
                    trip.push((nodes[a], nodes[b], LOCAL_STIFFNESS[a][b]));
                }
            }
        }
    }
    trip
}

fn distributed(grid: Grid, mass: Vec<f64>, k: SparseMatrix, eps: Option<f64>) -> DiscretizedPde {
    let m = SparseMatrix::from_diagonal(&mass);
    DiscretizedPde {
        grid,
        symmetric_k: k.is_symmetric(),
        k,
        m1: m.clone(),
        n: m.clone(),
        mb: m.clone(),
        m,
        epsilon: eps,
    }
}

/// Heat operator `-Δ` with homogeneous Dirichlet data and distributed control.
pub fn assemble_heat(grid: &Grid) -> Result<DiscretizedPde> {
    let mass = lumped_mass(grid);
    let k = dirichlet(grid, diffusion_triplets(grid), &mass)?;
    Ok(distributed(grid.clone(), mass, k, None))
}

/// Convection and streamline-diffusion parts of the convection-diffusion
/// operator before boundary conditions are applied.
fn convection_triplets(grid: &Grid, eps: f64) -> Vec<(usize, usize, f64)> {
    let h = grid.h();
    let (lo, _) = grid.domain.bounds();
    let mut trip = Vec::with_capacity(16 * grid.cells * grid.cells);
    for cj in 0..grid.cells {
        for ci in 0..grid.cells {
            let x0 = lo + ci as f64 * h;
            let y0 = lo + cj as f64 * h;
            let (wx, wy) = wind(x0 + 0.5 * h, y0 + 0.5 * h);
            let wn = wx.hypot(wy);
            let delta = if wn > 0.0 {
                let hk = h * wn / wx.abs().max(wy.abs());
                let peclet = wn * hk / (2.0 * eps);
                if peclet > 1.0 {
                    hk / (2.0 * wn) * (1.0 - 1.0 / peclet)
                } else {
                    0.0
                }
            } else {
                0.0
            };

            let mut local = [[0.0; 4]; 4];
            for &(xi, wxi) in &GAUSS3 {
                for &(eta, weta) in &GAUSS3 {
                    let w = wxi * weta * h * h;
                    let (vx, vy) = wind(x0 + xi * h, y0 + eta * h);
                    let mut phi = [0.0; 4];
                    let mut stream = [0.0; 4];
                    for a in 0..4 {
                        let (p, dx, dy) = shape(a, xi, eta);
                        phi[a] = p;
                        stream[a] = (vx * dx + vy * dy) / h;
                    }
                    for a in 0..4 {
                        for b in 0..4 {
                            local[a][b] += w * (stream[b] * phi[a] + delta * stream[b] * stream[a]);
                        }
                    }
                }
            }
            let nodes = grid.cell_nodes(ci, cj);
            for a in 0..4 {
                for b in 0..4 {
                    trip.push((nodes[a], nodes[b], local[a][b]));
                }
            }
        }
    }
    trip
}

/// `-εΔ + v·∇` with the recirculating wind, Galerkin plus streamline diffusion.
pub fn assemble_convection_diffusion(grid: &Grid, eps: f64) -> Result<DiscretizedPde> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "diffusion coefficient must be positive, got {eps}"
        )));
    }
    if grid.domain != Domain::SymmetricSquare {
        return Err(Error::InvalidInput(
            "convection-diffusion is defined on [-1,1]^2".into(),
        ));
    }
    let mass = lumped_mass(grid);
    let mut trip: Vec<_> = diffusion_triplets(grid)
        .into_iter()
        .map(|(r, c, v)| (r, c, eps * v))
        .collect();
    trip.extend(convection_triplets(grid, eps));
    let k = dirichlet(grid, trip, &mass)?;
    let mut pde = distributed(grid.clone(), mass, k, Some(eps));
    pde.symmetric_k = false;
    Ok(pde)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn unit(k: u32) -> Grid {
        Grid::new(k, Domain::UnitSquare).unwrap()
    }

    #[test]
    fn interior_laplacian_row() {
        let g = unit(3);
        let pde = assemble_heat(&g).unwrap();
        let c = g.index(4, 4);
        let (cols, vals) = pde.k.row(c);
        assert_eq!(cols.len(), 9);
        for (&j, &v) in cols.iter().zip(vals) {
            if j == c {
                assert!((v - 8.0 / 3.0).abs() < 1e-15);
            } else {
                assert!((v + 1.0 / 3.0).abs() < 1e-15);
            }
        }
        // rows whose stencil avoids the boundary sum to zero
        for idx in 0..g.num_nodes() {
            let (i, j) = g.ij(idx);
            if (2..=6).contains(&i) && (2..=6).contains(&j) {
                let (_, vals) = pde.k.row(idx);
                assert!(vals.iter().sum::<f64>().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lumped_mass_partition_of_unity() {
        for dom in [Domain::UnitSquare, Domain::SymmetricSquare] {
            let g = Grid::new(4, dom).unwrap();
            let total: f64 = lumped_mass(&g).iter().sum();
            assert!((total - dom.area()).abs() < 1e-13);
        }
    }

    #[test]
    fn heat_matrices_structure() {
        let g = unit(4);
        let pde = assemble_heat(&g).unwrap();
        assert!(pde.k.is_symmetric());
        assert!(pde.symmetric_k);
        assert!(pde.m.is_diagonal() && pde.m.diagonal().iter().all(|&d| d > 0.0));
        assert_eq!(pde.m1, pde.m);
        assert_eq!(pde.n, pde.m);
        for b in g.boundary_nodes() {
            let (cols, vals) = pde.k.row(b);
            assert_eq!(cols, &[b]);
            assert_eq!(vals[0], pde.m.get(b, b));
        }
    }

    #[test]
    fn smallest_eigenvalue_near_two_pi_squared() {
        let g = unit(3);
        let pde = assemble_heat(&g).unwrap();
        let interior: Vec<usize> = (0..g.num_nodes()).filter(|&i| !g.is_boundary(i)).collect();
        // M is a multiple of the identity on interior nodes, so M⁻¹K is symmetric there
        let a = DMatrix::from_fn(interior.len(), interior.len(), |r, c| {
            pde.k.get(interior[r], interior[c]) / pde.m.get(interior[r], interior[r])
        });
        let lmin = SymmetricEigen::new(a).eigenvalues.min();
        let exact = 2.0 * std::f64::consts::PI.powi(2);
        assert!((lmin - exact).abs() / exact < 0.05, "{lmin}");
    }

    #[test]
    fn convection_part_independent_of_eps() {
        let g = Grid::new(3, Domain::SymmetricSquare).unwrap();
        let k1 = assemble_convection_diffusion(&g, 1.0).unwrap().k;
        let k2 = assemble_convection_diffusion(&g, 2.0).unwrap().k;
        let heat = assemble_heat(&g).unwrap();
        let diff = k2.linear_combination(1.0, &k1, -1.0);
        // boundary rows carry the mass in both, so compare against the interior Laplacian
        let mut kd = heat.k.clone();
        let bd: Vec<f64> = (0..g.num_nodes())
            .map(|i| if g.is_boundary(i) { heat.m.get(i, i) } else { 0.0 })
            .collect();
        kd = kd.add_diagonal(&bd.iter().map(|v| -v).collect::<Vec<_>>());
        let err = diff.linear_combination(1.0, &kd, -1.0).frobenius_norm();
        assert!(err <= 1e-13 * kd.frobenius_norm(), "{err}");
    }

    #[test]
    fn large_eps_approaches_pure_diffusion() {
        let g = Grid::new(3, Domain::SymmetricSquare).unwrap();
        let heat = assemble_heat(&g).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [1.0, 10.0, 100.0, 1000.0] {
            let k = assemble_convection_diffusion(&g, eps).unwrap().k;
            let rel = k
                .scale(1.0 / eps)
                .linear_combination(1.0, &heat.k, -1.0)
                .add_diagonal(
                    &(0..g.num_nodes())
                        .map(|i| if g.is_boundary(i) { heat.m.get(i, i) * (1.0 - 1.0 / eps) } else { 0.0 })
                        .collect::<Vec<_>>(),
                )
                .frobenius_norm()
                / heat.k.frobenius_norm();
            assert!(rel < prev);
            prev = rel;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn wind_and_center_row() {
        assert_eq!(wind(0.0, 0.0), (0.0, 0.0));
        let g = Grid::new(3, Domain::SymmetricSquare).unwrap();
        let c = g.index(4, 4);
        assert_eq!(g.coords(c), (0.0, 0.0));
        let conv = SparseMatrix::from_triplets(g.num_nodes(), g.num_nodes(), &convection_triplets(&g, 1.0))
            .unwrap();
        let (_, vals) = conv.row(c);
        assert!(vals.iter().sum::<f64>().abs() < 1e-15);
        let (cols, vals) = conv.row(c);
        for (&j, &v) in cols.iter().zip(vals) {
            let (i1, j1) = g.ij(j);
            // edge neighbours and the node itself see an odd integrand
            if i1 == 4 || j1 == 4 {
                assert!(v.abs() < 1e-15, "{j}: {v}");
            }
        }
    }

    #[test]
    fn galerkin_convection_is_skew_on_interior() {
        let g = Grid::new(3, Domain::SymmetricSquare).unwrap();
        // large eps switches stabilization off
        let conv = SparseMatrix::from_triplets(g.num_nodes(), g.num_nodes(), &convection_triplets(&g, 1e6))
            .unwrap();
        for (r, c, v) in conv.triplets() {
            if !g.is_boundary(r) && !g.is_boundary(c) {
                assert!((v + conv.get(c, r)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn convection_diffusion_nonsymmetric() {
        let g = Grid::new(3, Domain::SymmetricSquare).unwrap();
        let pde = assemble_convection_diffusion(&g, 0.1).unwrap();
        let skew = pde.k.linear_combination(1.0, &pde.k.transpose(), -1.0);
        assert!(skew.frobenius_norm() > 0.0);
        assert!(!pde.symmetric_k);
        assert!(assemble_convection_diffusion(&g, 0.0).is_err());
        assert!(assemble_convection_diffusion(&unit(3), 1.0).is_err());
    }
}
