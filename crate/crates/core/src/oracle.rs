//! Direct solution of the full space-time optimality system.
//!
//! The control is eliminated through `U = (1/β) M_b⁻¹ Nᵀ Λ` and the remaining
//! `2n n_T` unknowns `[vec Y; vec Λ]` satisfy
//!
//! ```text
//! [ τ(I⊗M₁)              τ(I⊗Kᵀ) + (Cᵀ⊗M) ] [vec Y]   [τ(I⊗M₁) vec Ŷ]
//! [ τ(I⊗K) + (C⊗M)       −(τ/β)(I⊗G)      ] [vec Λ] = [0            ]
//! ```
//!
//! with `G = N M_b⁻¹ Nᵀ` and `C` the lower bidiagonal difference matrix.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::DMatrix;

use crate::linalg::SparseMatrix;
use crate::problem::SylvesterOperator;
use crate::{Error, Result};

/// Default bound on `n · n_T`. The sparse LU fill of the space-time system
/// grows quickly; `n · n_T ≈ 2·10⁴` already needs over 1 GB.
pub const DEFAULT_GUARD: usize = 30_000;

#[derive(Debug, Clone)]
pub struct FullKktSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub n: usize,
    pub n_t: usize,
}

impl FullKktSystem {
    pub fn dim(&self) -> usize {
        2 * self.n * self.n_t
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub y: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub u: DMatrix<f64>,
    /// `‖b − Ax‖₂ / ‖b‖₂` of the direct solve (0 for a zero right-hand side)
    pub relative_residual: f64,
}

pub fn assemble_full(op: &SylvesterOperator) -> Result<FullKktSystem> {
    assemble_full_with_guard(op, DEFAULT_GUARD)
}

pub fn assemble_full_with_guard(op: &SylvesterOperator, limit: usize) -> Result<FullKktSystem> {
    let (n, nt) = (op.n(), op.n_t());
    if n * nt > limit {
        return Err(Error::OracleGuard {
            unknowns: n * nt,
            limit,
        });
    }
    let tau = op.tau();
    let beta = op.beta();
    let m = op.mass();
    let m1 = op.observation_mass();
    let k = op.stiffness();
    let kt = op.stiffness_t();
    let g = op.control_gram();
    let ly = n * nt;
    let mut trip = Vec::with_capacity(2 * nt * (k.nnz() + kt.nnz() + g.nnz() + 4 * n));
    for t in 0..nt {
        let off = t * n;
        // adjoint rows
        for i in 0..n {
            trip.push((off + i, off + i, tau * m1[i]));
            trip.push((off + i, ly + off + i, m[i]));
            if t + 1 < nt {
                trip.push((off + i, ly + off + n + i, -m[i]));
            }
        }
        for (i, j, v) in kt.triplets() {
            trip.push((off + i, ly + off + j, tau * v));
        }
        // state rows
        for i in 0..n {
            trip.push((ly + off + i, off + i, m[i]));
            if t > 0 {
                trip.push((ly + off + i, off - n + i, -m[i]));
            }
        }
        for (i, j, v) in k.triplets() {
            trip.push((ly + off + i, off + j, tau * v));
        }
        for (i, j, v) in g.triplets() {
            trip.push((ly + off + i, ly + off + j, -tau / beta * v));
        }
    }
    let matrix = SparseMatrix::from_triplets(2 * ly, 2 * ly, &trip)?;
    let yhat = op.y1() * op.y2().transpose();
    let mut rhs = vec![0.0; 2 * ly];
    for t in 0..nt {
        for i in 0..n {
            rhs[t * n + i] = tau * m1[i] * yhat[(i, t)];
        }
    }
    Ok(FullKktSystem { matrix, rhs, n, n_t: nt })
}

/// Sparse LU solve of the assembled system; `U` is recovered from `Λ`.
pub fn solve_full(sys: &FullKktSystem, op: &SylvesterOperator) -> Result<OracleSolution> {
    let (n, nt) = (sys.n, sys.n_t);
    let dim = sys.dim();
    let x = if sys.rhs.iter().all(|&v| v == 0.0) {
        vec![0.0; dim]
    } else {
        let trip: Vec<_> = sys.matrix.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, &trip)
            .map_err(|e| Error::OracleSingular(format!("{e:?}")))?;
        let lu = a.sp_lu().map_err(|e| Error::OracleSingular(format!("{e:?}")))?;
        let b = Col::<f64>::from_fn(dim, |i| sys.rhs[i]);
        let x = lu.solve(&b);
        let x: Vec<f64> = (0..dim).map(|i| x[i]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::OracleSingular("non-finite solution".into()));
        }
        x
    };
    let relative_residual = relative_residual(&sys.matrix, &x, &sys.rhs);
    let y = DMatrix::from_column_slice(n, nt, &x[..n * nt]);
    let lambda = DMatrix::from_column_slice(n, nt, &x[n * nt..]);
    let u = control_from_adjoint(op, &lambda);
    Ok(OracleSolution {
        y,
        lambda,
        u,
        relative_residual,
    })
}

fn relative_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bn == 0.0 {
        return 0.0;
    }
    let ax = a.mul_vec(x);
    ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() / bn
}

/// `U = (1/β) M_b⁻¹ Nᵀ Λ`
pub fn control_from_adjoint(op: &SylvesterOperator, lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let mut u = op.control().tr_mul_dense(lambda);
    let mb = op.control_mass();
    let beta = op.beta();
    for mut col in u.column_iter_mut() {
        col.iter_mut().zip(mb).for_each(|(x, m)| *x /= m * beta);
    }
    u
}

/// Implicit Euler states `(M + τK) y_t = M y_{t−1} + τ N u_t` from `y_0 = 0`.
pub fn state_from_control(op: &SylvesterOperator, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, nt) = (op.n(), op.n_t());
    let tau = op.tau();
    let m = op.mass();
    let a = op.stiffness().scale(tau).add_diagonal(m);
    let f = crate::linalg::sparse_factorize(&a, op.is_symmetric())?;
    let nu = op.control().mul_dense(u);
    let mut y = DMatrix::zeros(n, nt);
    let mut prev = vec![0.0; n];
    for t in 0..nt {
        let mut b: Vec<f64> = (0..n).map(|i| m[i] * prev[i] + tau * nu[(i, t)]).collect();
        f.solve_in_place(&mut b);
        y.column_mut(t).copy_from_slice(&b);
        prev = b;
    }
    Ok(y)
}

/// `(τ/2)‖Y − Ŷ‖²_{M₁} + (τβ/2)‖U‖²_{M_b}`
pub fn objective(op: &SylvesterOperator, y: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    let tau = op.tau();
    let d = y - op.y1() * op.y2().transpose();
    let m1 = op.observation_mass();
    let mb = op.control_mass();
    let fit: f64 = d
        .column_iter()
        .map(|c| c.iter().zip(m1).map(|(x, w)| w * x * x).sum::<f64>())
        .sum();
    let cost: f64 = u
        .column_iter()
        .map(|c| c.iter().zip(mb).map(|(x, w)| w * x * x).sum::<f64>())
        .sum();
    0.5 * tau * fit + 0.5 * tau * op.beta() * cost
}

/// Relative residuals of the three stationarity conditions with `U` kept as
/// an unknown: adjoint, control and state equation, each scaled by the norms
/// of its terms.
pub fn kkt_residuals(op: &SylvesterOperator, y: &DMatrix<f64>, u: &DMatrix<f64>, l: &DMatrix<f64>) -> [f64; 3] {
    let tau = op.tau();
    let nt = op.n_t();
    let m = op.mass();
    let m1 = op.observation_mass();
    let mb = op.control_mass();
    let scale = |a: &DMatrix<f64>, d: &[f64]| {
        let mut out = a.clone();
        for mut col in out.column_iter_mut() {
            col.iter_mut().zip(d).for_each(|(x, s)| *x *= s);
        }
        out
    };
    let mut lc = l.clone();
    for t in 0..nt.saturating_sub(1) {
        let next = l.column(t + 1).into_owned();
        let mut c = lc.column_mut(t);
        c -= next;
    }
    let mut yc = y.clone();
    for t in 1..nt {
        let prev = y.column(t - 1).into_owned();
        let mut c = yc.column_mut(t);
        c -= prev;
    }
    let yhat = op.y1() * op.y2().transpose();
    let rel = |terms: &[DMatrix<f64>]| {
        let sum: DMatrix<f64> = terms.iter().skip(1).fold(terms[0].clone(), |acc, t| acc + t);
        let den: f64 = terms.iter().map(|t| t.norm()).sum();
        if den == 0.0 {
            0.0
        } else {
            sum.norm() / den
        }
    };
    let adj = rel(&[
        scale(y, m1) * tau,
        -scale(&yhat, m1) * tau,
        op.stiffness_t().mul_dense(l) * tau,
        scale(&lc, m),
    ]);
    let ctl = rel(&[scale(u, mb) * (tau * op.beta()), -op.control().tr_mul_dense(l) * tau]);
    let st = rel(&[
        op.stiffness().mul_dense(y) * tau,
        scale(&yc, m),
        -op.control().mul_dense(u) * tau,
    ]);
    [adj, ctl, st]
}
