//! Residual norms of the two optimality equations from low-rank factors.
//!
//! For `Y = V Z_Y`, `Λ = V Z_Λ` the unscaled residuals are
//!
//! ```text
//! R₁ = τM₁Y + τKᵀΛ + MΛC − τM₁Ŷ          (adjoint equation)
//! R₂ = τKY + MYCᵀ − (τ/β) N M_b⁻¹ Nᵀ Λ    (state equation)
//! ```
//!
//! Each is kept as `R = R_L R_Rᵀ` with the tall left factor held as an
//! incrementally updated QR factorization `R_L = Q₁ R`, so the norm only
//! needs the small product `R R_Rᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{BREAKDOWN_TOL, DenseMatrix};
use crate::problem::SylvesterOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equation {
    /// `R₁`
    Adjoint,
    /// `R₂`
    State,
}

/// Origin of one left-factor column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    /// `τM₁Y₁[:, i]` paired with `−Y₂[:, i]`
    Rhs(usize),
    /// slot `s` of basis vector `j`
    Basis { j: usize, slot: u8 },
}

#[derive(Debug, Clone)]
pub struct ResidualFactors {
    equation: Equation,
    n: usize,
    /// orthonormal columns, column-major
    q: Vec<f64>,
    /// column `c` of the triangular factor; length = rank of `Q₁` when appended
    r_cols: Vec<Vec<f64>>,
    columns: Vec<Column>,
    basis_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualNorms {
    pub r1: f64,
    pub r2: f64,
    pub rho3: f64,
}

impl ResidualNorms {
    pub fn max(&self) -> f64 {
        self.r1.max(self.r2).max(self.rho3)
    }
}

pub fn stopping_check(norms: &ResidualNorms, tol: f64) -> bool {
    norms.max() <= tol
}

impl ResidualFactors {
    pub fn new(equation: Equation, op: &SylvesterOperator) -> Self {
        let mut rf = Self {
            equation,
            n: op.n(),
            q: Vec::new(),
            r_cols: Vec::new(),
            columns: Vec::new(),
            basis_count: 0,
        };
        if equation == Equation::Adjoint {
            let tau = op.tau();
            let m1 = op.observation_mass();
            for i in 0..op.rank() {
                let c: Vec<f64> = op.y1().column(i).iter().zip(m1).map(|(y, m)| tau * m * y).collect();
                rf.append_column(&c, Column::Rhs(i));
            }
        }
        rf
    }

    pub fn equation(&self) -> Equation {
        self.equation
    }

    /// Number of left-factor columns `q`.
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Rank of `Q₁`.
    pub fn rank(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.q.len() / self.n
        }
    }

    pub fn basis_count(&self) -> usize {
        self.basis_count
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n, self.rank(), &self.q)
    }

    /// Upper-trapezoidal `rank × q` factor.
    pub fn r_matrix(&self) -> DMatrix<f64> {
        let k = self.rank();
        let mut r = DMatrix::zeros(k, self.width());
        for (c, col) in self.r_cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                r[(i, c)] = v;
            }
        }
        r
    }

    pub fn bytes(&self) -> usize {
        8 * (self.q.len() + self.r_cols.iter().map(Vec::len).sum::<usize>())
    }

    fn append_column(&mut self, c: &[f64], tag: Column) {
        let k = self.rank();
        let n = self.n;
        let cnorm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let qm = nalgebra::DMatrixView::from_slice(&self.q, n, k);
        let c0 = DVector::from_column_slice(c);
        let mut h = qm.tr_mul(&c0);
        let mut w = &c0 - qm * &h;
        let h2 = qm.tr_mul(&w);
        w -= qm * &h2;
        h += h2;
        let wn = w.norm();
        let mut col: Vec<f64> = h.as_slice().to_vec();
        if wn > BREAKDOWN_TOL * cnorm && wn > 0.0 {
            self.q.extend(w.iter().map(|x| x / wn));
            col.push(wn);
        }
        self.r_cols.push(col);
        self.columns.push(tag);
    }

    /// Appends the left-factor columns contributed by unit basis vector `v`.
    pub fn append_basis_vector(&mut self, v: &[f64], op: &SylvesterOperator) {
        let j = self.basis_count;
        for (slot, c) in left_columns(self.equation, v, op).into_iter().enumerate() {
            self.append_column(&c, Column::Basis { j, slot: slot as u8 });
        }
        self.basis_count += 1;
    }

    /// Rebuilds the factorization for a new basis.
    pub fn rebuild(equation: Equation, v: &DenseMatrix, op: &SylvesterOperator) -> Self {
        let mut rf = Self::new(equation, op);
        for j in 0..v.ncols() {
            rf.append_basis_vector(v.column(j).as_slice(), op);
        }
        rf
    }

    /// `R_R` as a `q × n_T` matrix (transposed right factor), rebuilt from `Z`.
    pub fn right_factor_t(&self, z: &DMatrix<f64>, op: &SylvesterOperator) -> DMatrix<f64> {
        let nt = op.n_t();
        let zy = z.columns(0, nt);
        let zl = z.columns(nt, nt);
        let mut out = DMatrix::zeros(self.width(), nt);
        for (c, col) in self.columns.iter().enumerate() {
            match *col {
                Column::Rhs(i) => {
                    for t in 0..nt {
                        out[(c, t)] = -op.y2()[(t, i)];
                    }
                }
                Column::Basis { j, slot } => {
                    for t in 0..nt {
                        out[(c, t)] = match (self.equation, slot) {
                            (Equation::Adjoint, 0) | (Equation::State, 0) => zy[(j, t)],
                            (Equation::Adjoint, 1) | (Equation::State, 2) => zl[(j, t)],
                            // (Z_Λ C)[j, t] = z_t − z_{t+1}
                            (Equation::Adjoint, _) => {
                                zl[(j, t)] - if t + 1 < nt { zl[(j, t + 1)] } else { 0.0 }
                            }
                            // (Z_Y Cᵀ)[j, t] = z_t − z_{t−1}
                            (Equation::State, _) => zy[(j, t)] - if t > 0 { zy[(j, t - 1)] } else { 0.0 },
                        };
                    }
                }
            }
        }
        out
    }

    /// `‖R_L R_Rᵀ‖_F` evaluated as `‖R · R_Rᵀ‖_F`.
    pub fn norm(&self, z: &DMatrix<f64>, op: &SylvesterOperator) -> f64 {
        assert_eq!(z.nrows(), self.basis_count, "Z must match the tracked basis");
        if self.width() == 0 {
            return 0.0;
        }
        let w = self.r_matrix() * self.right_factor_t(z, op);
        w.norm()
    }
}

/// Left-factor columns of one basis vector.
pub fn left_columns(equation: Equation, v: &[f64], op: &SylvesterOperator) -> Vec<Vec<f64>> {
    let tau = op.tau();
    let m = op.mass();
    let mv: Vec<f64> = v.iter().zip(m).map(|(x, s)| x * s).collect();
    match equation {
        Equation::Adjoint => {
            let m1v: Vec<f64> = v.iter().zip(op.observation_mass()).map(|(x, s)| tau * x * s).collect();
            let ktv: Vec<f64> = op.stiffness_t().mul_vec(v).into_iter().map(|x| tau * x).collect();
            vec![m1v, ktv, mv]
        }
        Equation::State => {
            let kv: Vec<f64> = op.stiffness().mul_vec(v).into_iter().map(|x| tau * x).collect();
            let s = -tau / op.beta();
            let gv: Vec<f64> = op.control_gram().mul_vec(v).into_iter().map(|x| s * x).collect();
            vec![kv, mv, gv]
        }
    }
}

/// Scaled backward error combining both equations.
pub fn backward_error(r1: f64, r2: f64, z: &DMatrix<f64>, op: &SylvesterOperator) -> f64 {
    let nt = op.n_t();
    let zy = z.columns(0, nt).norm();
    let zl = z.columns(nt, nt).norm();
    let d = op.data_norms();
    let tau = op.tau();
    let den1 = tau * (d.m1 * zy + d.k * zl + d.m1 * d.yhat) + d.m * zl * d.c;
    let den2 = tau * (d.k * zy + d.g * zl / op.beta()) + d.m * zy * d.c;
    let q = |r: f64, den: f64| if r == 0.0 { 0.0 } else { r / den };
    q(r1, den1) + q(r2, den2)
}

pub fn residual_norms(
    rf1: &ResidualFactors,
    rf2: &ResidualFactors,
    z: &DMatrix<f64>,
    op: &SylvesterOperator,
) -> ResidualNorms {
    let r1 = rf1.norm(z, op);
    let r2 = rf2.norm(z, op);
    ResidualNorms {
        r1,
        r2,
        rho3: backward_error(r1, r2, z, op),
    }
}

/// Dense `(R₁, R₂)` for full iterates; small problems only.
pub fn dense_residuals(
    op: &SylvesterOperator,
    y: &DMatrix<f64>,
    l: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let tau = op.tau();
    let nt = op.n_t();
    let mass = op.mass();
    let m1 = op.observation_mass();
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
    let mut yct = y.clone();
    for t in 1..nt {
        let prev = y.column(t - 1).into_owned();
        let mut c = yct.column_mut(t);
        c -= prev;
    }
    let yhat = op.y1() * op.y2().transpose();
    let r1 = scale(y, m1) * tau + op.stiffness_t().mul_dense(l) * tau + scale(&lc, mass)
        - scale(&yhat, m1) * tau;
    let r2 = op.stiffness().mul_dense(y) * tau + scale(&yct, mass)
        - op.control_gram().mul_dense(l) * (tau / op.beta());
    (r1, r2)
}

/// Dense norms including the backward error, with `Z_Y`, `Z_Λ` norms taken
/// from the full iterates.
pub fn dense_norms(op: &SylvesterOperator, y: &DMatrix<f64>, l: &DMatrix<f64>) -> ResidualNorms {
    let (r1, r2) = dense_residuals(op, y, l);
    let (r1, r2) = (r1.norm(), r2.norm());
    let mut x = DMatrix::zeros(y.nrows(), 2 * op.n_t());
    x.columns_mut(0, op.n_t()).copy_from(y);
    x.columns_mut(op.n_t(), op.n_t()).copy_from(l);
    ResidualNorms {
        r1,
        r2,
        rho3: backward_error(r1, r2, &x, op),
    }
}
