//! The generalized Sylvester operator `A₁X + XC₁ + A₂XI₀ + A₃XD − F₁F₂ᵀ`.
//!
//! `X = [Y Λ]` is `n × 2n_T`. The first `n_T` columns of the operator's
//! output hold the (scaled) state equation, the last `n_T` the adjoint
//! equation.

mod kron;
pub mod random;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discretize::{DesiredState, DiscretizedPde};
use crate::linalg::SparseMatrix;
use crate::{Error, Result};

pub use kron::{assemble_kronecker, kron};

pub const ALPHA2_POWER_ITERATIONS: usize = 20;
pub const DEFAULT_ALPHA2_SEED: u64 = 0x5a17_0002;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_t: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_t: usize) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidInput(format!("final time must be positive, got {t_final}")));
        }
        if n_t == 0 {
            return Err(Error::InvalidInput("n_T must be at least 1".into()));
        }
        Ok(Self { t_final, n_t })
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.n_t as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseTag {
    /// `M₁ = M`, square `N`
    FullObservationDistributed,
    /// `M₁ ≠ M`, square `N`
    PartialObservation,
    /// tall `N`
    BoundaryControl,
    /// `K ≠ Kᵀ`
    NonsymmetricK,
}

impl CaseTag {
    pub const ALL: [CaseTag; 4] = [
        CaseTag::FullObservationDistributed,
        CaseTag::PartialObservation,
        CaseTag::BoundaryControl,
        CaseTag::NonsymmetricK,
    ];

    pub fn roman(self) -> &'static str {
        match self {
            CaseTag::FullObservationDistributed => "i",
            CaseTag::PartialObservation => "ii",
            CaseTag::BoundaryControl => "iii",
            CaseTag::NonsymmetricK => "iv",
        }
    }
}

impl fmt::Display for CaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.roman())
    }
}

impl FromStr for CaseTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" | "full" | "distributed" => Ok(CaseTag::FullObservationDistributed),
            "ii" | "partial" => Ok(CaseTag::PartialObservation),
            "iii" | "boundary" => Ok(CaseTag::BoundaryControl),
            "iv" | "nonsymmetric" => Ok(CaseTag::NonsymmetricK),
            other => Err(Error::InvalidInput(format!("unknown case `{other}`"))),
        }
    }
}

/// `A₃ = M⁻¹N M_b⁻¹Nᵀ`, diagonal when `N` and `M_b` are.
#[derive(Debug, Clone)]
pub enum LeftA3 {
    Diagonal(Vec<f64>),
    /// `left = M⁻¹N` (`n × n_b`), `right = M_b⁻¹Nᵀ` (`n_b × n`)
    Factored { left: SparseMatrix, right: SparseMatrix },
}

#[derive(Debug, Clone, Default)]
pub struct OperatorOptions {
    pub case: Option<CaseTag>,
    /// Skip the α₂ (cases i, ii, iv) or α₃ (case iii) reformulation.
    pub no_shift_transform: bool,
    /// Start vector seed of the α₂ power iteration.
    pub seed: Option<u64>,
}

/// Frobenius norms of the unscaled data, used by the backward error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataNorms {
    pub m: f64,
    pub m1: f64,
    pub k: f64,
    /// `‖N M_b⁻¹ Nᵀ‖_F`
    pub g: f64,
    /// `‖C‖_F`
    pub c: f64,
    /// `‖Ŷ‖_F`
    pub yhat: f64,
}

#[derive(Debug, Clone)]
pub struct SylvesterOperator {
    case: CaseTag,
    time: TimeGrid,
    beta: f64,
    m: Vec<f64>,
    m_inv: Vec<f64>,
    m1: Vec<f64>,
    mb: Vec<f64>,
    k: SparseMatrix,
    kt: Option<SparseMatrix>,
    n_ctrl: SparseMatrix,
    g: SparseMatrix,
    a2: Vec<f64>,
    a3: LeftA3,
    y1: DMatrix<f64>,
    y2: DMatrix<f64>,
    f1: DMatrix<f64>,
    alpha2: f64,
    alpha3: f64,
    seed: u64,
    norms: DataNorms,
}

/// Structural features of the data, at most one of which may be present.
fn detect_features(pde: &DiscretizedPde) -> Vec<CaseTag> {
    let mut f = Vec::new();
    if pde.m1.diagonal() != pde.m.diagonal() {
        f.push(CaseTag::PartialObservation);
    }
    if pde.n.ncols() != pde.n.nrows() {
        f.push(CaseTag::BoundaryControl);
    }
    if !pde.k.is_symmetric() {
        f.push(CaseTag::NonsymmetricK);
    }
    f
}

pub fn detect_case(pde: &DiscretizedPde) -> Result<CaseTag> {
    let f = detect_features(pde);
    match f.len() {
        0 => Ok(CaseTag::FullObservationDistributed),
        1 => Ok(f[0]),
        _ => Err(Error::InvalidInput(format!(
            "unsupported combination of cases {}",
            f.iter().map(|c| c.roman()).collect::<Vec<_>>().join(" and ")
        ))),
    }
}

pub fn build_operator(
    pde: &DiscretizedPde,
    time: TimeGrid,
    beta: f64,
    desired: &DesiredState,
) -> Result<SylvesterOperator> {
    build_operator_with(pde, time, beta, desired, &OperatorOptions::default())
}

pub fn build_operator_with(
    pde: &DiscretizedPde,
    time: TimeGrid,
    beta: f64,
    desired: &DesiredState,
    opts: &OperatorOptions,
) -> Result<SylvesterOperator> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    let n = pde.num_nodes();
    if !pde.m.is_diagonal() || pde.m.nrows() != n {
        return Err(Error::InvalidInput(
            "mass matrix must be diagonal to eliminate the control".into(),
        ));
    }
    let m = pde.m.diagonal();
    if m.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidInput("mass matrix must be positive".into()));
    }
    if !pde.m1.is_diagonal() || pde.m1.nrows() != n {
        return Err(Error::InvalidInput("observation mass must be diagonal".into()));
    }
    let m1 = pde.m1.diagonal();
    if m1.iter().any(|&d| d < 0.0) {
        return Err(Error::InvalidInput("observation mass must be non-negative".into()));
    }
    if pde.k.nrows() != n || pde.k.ncols() != n || pde.n.nrows() != n {
        return Err(Error::InvalidInput("inconsistent matrix dimensions".into()));
    }
    let nb = pde.n.ncols();
    if !pde.mb.is_diagonal() || pde.mb.nrows() != nb {
        return Err(Error::InvalidInput(
            "control mass must be diagonal and match the control count".into(),
        ));
    }
    let mb = pde.mb.diagonal();
    if mb.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidInput("control mass must be positive".into()));
    }
    crate::discretize::validate_desired_state(desired, n, time.n_t)?;

    let detected = detect_case(pde)?;
    let case = opts.case.unwrap_or(detected);

    let m_inv: Vec<f64> = m.iter().map(|d| 1.0 / d).collect();
    let mb_inv: Vec<f64> = mb.iter().map(|d| 1.0 / d).collect();
    let a2: Vec<f64> = m1.iter().zip(&m_inv).map(|(a, b)| a * b).collect();
    let g = pde.n.scale_cols(&mb_inv).matmul(&pde.n.transpose());
    let a3 = if pde.n.is_diagonal() {
        let nd = pde.n.diagonal();
        LeftA3::Diagonal((0..n).map(|i| nd[i] * nd[i] * mb_inv[i] * m_inv[i]).collect())
    } else {
        LeftA3::Factored {
            left: pde.n.scale_rows(&m_inv),
            right: pde.n.transpose().scale_rows(&mb_inv),
        }
    };
    let kt = if pde.k.is_symmetric() {
        None
    } else {
        Some(pde.k.transpose())
    };
    let f1 = DMatrix::from_fn(n, desired.rank(), |i, j| a2[i] * desired.y1[(i, j)]);
    let yhat = {
        let g1 = desired.y1.transpose() * &desired.y1;
        let g2 = desired.y2.transpose() * &desired.y2;
        (g1.component_mul(&g2)).sum().max(0.0).sqrt()
    };
    let norms = DataNorms {
        m: pde.m.frobenius_norm(),
        m1: pde.m1.frobenius_norm(),
        k: pde.k.frobenius_norm(),
        g: g.frobenius_norm(),
        c: ((2 * time.n_t - 1) as f64).sqrt(),
        yhat,
    };
    let mut op = SylvesterOperator {
        case,
        time,
        beta,
        m,
        m_inv,
        m1,
        mb,
        k: pde.k.clone(),
        kt,
        n_ctrl: pde.n.clone(),
        g,
        a2,
        a3,
        y1: desired.y1.clone(),
        y2: desired.y2.clone(),
        f1,
        alpha2: 0.0,
        alpha3: 0.0,
        seed: opts.seed.unwrap_or(DEFAULT_ALPHA2_SEED),
        norms,
    };
    if !opts.no_shift_transform {
        if case == CaseTag::BoundaryControl {
            op.alpha3 = op.compute_alpha3();
        } else {
            op.alpha2 = op.compute_alpha2();
        }
    }
    Ok(op)
}

fn scale_rows_in_place(a: &mut DMatrix<f64>, d: &[f64]) {
    for j in 0..a.ncols() {
        for (v, s) in a.column_mut(j).iter_mut().zip(d) {
            *v *= s;
        }
    }
}

impl SylvesterOperator {
    pub fn case(&self) -> CaseTag {
        self.case
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn n(&self) -> usize {
        self.m.len()
    }

    pub fn n_t(&self) -> usize {
        self.time.n_t
    }

    pub fn tau(&self) -> f64 {
        self.time.tau()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn rank(&self) -> usize {
        self.f1.ncols()
    }

    pub fn n_controls(&self) -> usize {
        self.mb.len()
    }

    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }

    pub fn alpha3(&self) -> f64 {
        self.alpha3
    }

    pub fn f1(&self) -> &DMatrix<f64> {
        &self.f1
    }

    pub fn y1(&self) -> &DMatrix<f64> {
        &self.y1
    }

    /// `Y₂`; `F₂ = [0; Y₂]`.
    pub fn y2(&self) -> &DMatrix<f64> {
        &self.y2
    }

    pub fn mass(&self) -> &[f64] {
        &self.m
    }

    pub fn mass_inv(&self) -> &[f64] {
        &self.m_inv
    }

    pub fn observation_mass(&self) -> &[f64] {
        &self.m1
    }

    pub fn control_mass(&self) -> &[f64] {
        &self.mb
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.k
    }

    /// `Kᵀ` (the stiffness itself when symmetric).
    pub fn stiffness_t(&self) -> &SparseMatrix {
        self.kt.as_ref().unwrap_or(&self.k)
    }

    pub fn is_symmetric(&self) -> bool {
        self.kt.is_none()
    }

    pub fn control(&self) -> &SparseMatrix {
        &self.n_ctrl
    }

    /// `G = N M_b⁻¹ Nᵀ`
    pub fn control_gram(&self) -> &SparseMatrix {
        &self.g
    }

    pub fn a2_diag(&self) -> &[f64] {
        &self.a2
    }

    pub fn a3(&self) -> &LeftA3 {
        &self.a3
    }

    pub fn data_norms(&self) -> DataNorms {
        self.norms
    }

    pub fn with_alpha2(&self, alpha2: f64) -> Self {
        let mut op = self.clone();
        op.alpha2 = alpha2;
        op
    }

    pub fn with_alpha3(&self, alpha3: f64) -> Self {
        let mut op = self.clone();
        op.alpha3 = alpha3;
        op
    }

    /// `M⁻¹K v`
    pub fn apply_a1(&self, v: &[f64]) -> Vec<f64> {
        let mut w = self.k.mul_vec(v);
        w.iter_mut().zip(&self.m_inv).for_each(|(x, s)| *x *= s);
        w
    }

    /// `M⁻¹Kᵀ v`
    pub fn apply_a1t(&self, v: &[f64]) -> Vec<f64> {
        let mut w = self.stiffness_t().mul_vec(v);
        w.iter_mut().zip(&self.m_inv).for_each(|(x, s)| *x *= s);
        w
    }

    pub fn apply_a2(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.a2).map(|(x, s)| x * s).collect()
    }

    pub fn apply_a3(&self, v: &[f64]) -> Vec<f64> {
        match &self.a3 {
            LeftA3::Diagonal(d) => v.iter().zip(d).map(|(x, s)| x * s).collect(),
            LeftA3::Factored { left, right } => left.mul_vec(&right.mul_vec(v)),
        }
    }

    /// `(M⁻¹K)ᵀ v = Kᵀ M⁻¹ v`
    pub fn apply_a1_transpose(&self, v: &[f64]) -> Vec<f64> {
        self.stiffness_t().mul_vec(&self.apply_m_inv(v))
    }

    /// `(M⁻¹Kᵀ)ᵀ v = K M⁻¹ v`
    pub fn apply_a1t_transpose(&self, v: &[f64]) -> Vec<f64> {
        self.k.mul_vec(&self.apply_m_inv(v))
    }

    /// `A₃ᵀ v = N M_b⁻¹ Nᵀ M⁻¹ v`
    pub fn apply_a3_transpose(&self, v: &[f64]) -> Vec<f64> {
        self.g.mul_vec(&self.apply_m_inv(v))
    }

    pub fn apply_m_inv(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.m_inv).map(|(x, s)| x * s).collect()
    }

    pub fn a1_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.k.mul_dense(x);
        scale_rows_in_place(&mut out, &self.m_inv);
        out
    }

    pub fn a1t_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.stiffness_t().mul_dense(x);
        scale_rows_in_place(&mut out, &self.m_inv);
        out
    }

    pub fn a2_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        scale_rows_in_place(&mut out, &self.a2);
        out
    }

    pub fn a3_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.a3 {
            LeftA3::Diagonal(d) => {
                let mut out = x.clone();
                scale_rows_in_place(&mut out, d);
                out
            }
            LeftA3::Factored { left, right } => left.mul_dense(&right.mul_dense(x)),
        }
    }

    /// `α₂` estimate: dominant eigenvalue magnitude of `A₁` by power iteration.
    pub fn compute_alpha2(&self) -> f64 {
        let n = self.n();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let mut est = 0.0;
        for _ in 0..ALPHA2_POWER_ITERATIONS {
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let w = self.apply_a1(&v);
            let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nw == 0.0 || nv == 0.0 {
                return 0.0;
            }
            est = nw / nv;
            v = w.into_iter().map(|x| x / nw).collect();
        }
        est
    }

    /// `α₃ = ‖A₃‖_F / (√β ‖A₁‖_F)`
    pub fn compute_alpha3(&self) -> f64 {
        let a1 = self.k.scale_rows(&self.m_inv).frobenius_norm();
        let a3 = match &self.a3 {
            LeftA3::Diagonal(d) => d.iter().map(|x| x * x).sum::<f64>().sqrt(),
            LeftA3::Factored { left, right } => left.matmul(right).frobenius_norm(),
        };
        if a1 == 0.0 {
            return 0.0;
        }
        a3 / (a1 * self.beta.sqrt())
    }

    /// `(X C̃ᵀ)` on the state block: column t becomes `(y_t − y_{t−1})/τ`.
    pub fn state_difference(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let inv_tau = 1.0 / self.tau();
        let mut out = y.clone();
        for t in (1..y.ncols()).rev() {
            let prev = y.column(t - 1);
            out.column_mut(t).axpy(-1.0, &prev, 1.0);
        }
        out * inv_tau
    }

    /// `(Λ C̃)`: column t becomes `(λ_t − λ_{t+1})/τ`.
    pub fn adjoint_difference(&self, l: &DMatrix<f64>) -> DMatrix<f64> {
        let inv_tau = 1.0 / self.tau();
        let mut out = l.clone();
        for t in 0..l.ncols().saturating_sub(1) {
            let next = l.column(t + 1);
            out.column_mut(t).axpy(-1.0, &next, 1.0);
        }
        out * inv_tau
    }

    /// `A₁X(I−α₃D) + X(C₁−α₂I₀) + (A₂+α₂I)XI₀ + (A₃+α₃A₁)XD − F₁F₂ᵀ`,
    /// with `M⁻¹Kᵀ` in place of `A₁` on the adjoint block.
    pub fn apply_operator(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (n, nt) = (self.n(), self.n_t());
        if x.nrows() != n || x.ncols() != 2 * nt {
            return Err(Error::InvalidInput(format!(
                "X must be {n}x{}, got {}x{}",
                2 * nt,
                x.nrows(),
                x.ncols()
            )));
        }
        let y = x.columns(0, nt).into_owned();
        let l = x.columns(nt, nt).into_owned();
        let (a2s, a3s, beta) = (self.alpha2, self.alpha3, self.beta);

        // A₁X(I − α₃D)
        let shifted_y = if a3s != 0.0 { &y + &l * (a3s / beta) } else { y.clone() };
        let mut out_y = self.a1_mul(&shifted_y);
        let mut out_l = self.a1t_mul(&l);
        // X(C₁ − α₂I₀)
        out_y += self.state_difference(&y);
        out_l += self.adjoint_difference(&l);
        if a2s != 0.0 {
            out_l -= &y * a2s;
        }
        // (A₂ + α₂I)XI₀
        let mut t3 = self.a2_mul(&y);
        if a2s != 0.0 {
            t3 += &y * a2s;
        }
        out_l += t3;
        // (A₃ + α₃A₁)XD
        let mut t4 = self.a3_mul(&l);
        if a3s != 0.0 {
            t4 += self.a1_mul(&l) * a3s;
        }
        out_y -= t4 / beta;
        // −F₁F₂ᵀ
        out_l.gemm(-1.0, &self.f1, &self.y2.transpose(), 1.0);

        let mut out = DMatrix::zeros(n, 2 * nt);
        out.columns_mut(0, nt).copy_from(&out_y);
        out.columns_mut(nt, nt).copy_from(&out_l);
        Ok(out)
    }

    /// Dense `(C₁, I₀, D)`, each `2n_T × 2n_T`, for checks and explicit assembly.
    pub fn right_coefficients_dense(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let nt = self.n_t();
        let inv_tau = 1.0 / self.tau();
        let mut c1 = DMatrix::zeros(2 * nt, 2 * nt);
        for t in 0..nt {
            // C̃ᵀ block: upper bidiagonal
            c1[(t, t)] = inv_tau;
            if t + 1 < nt {
                c1[(t, t + 1)] = -inv_tau;
            }
            // C̃ block: lower bidiagonal
            c1[(nt + t, nt + t)] = inv_tau;
            if t + 1 < nt {
                c1[(nt + t + 1, nt + t)] = -inv_tau;
            }
        }
        let mut i0 = DMatrix::zeros(2 * nt, 2 * nt);
        let mut d = DMatrix::zeros(2 * nt, 2 * nt);
        for t in 0..nt {
            i0[(t, nt + t)] = 1.0;
            d[(nt + t, t)] = -1.0 / self.beta;
        }
        (c1, i0, d)
    }

    pub fn summary(&self) -> OperatorSummary {
        OperatorSummary {
            n: self.n(),
            n_t: self.n_t(),
            n_b: self.n_controls(),
            r: self.rank(),
            case: self.case,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            beta: self.beta,
            tau: self.tau(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorSummary {
    pub n: usize,
    pub n_t: usize,
    pub n_b: usize,
    pub r: usize,
    pub case: CaseTag,
    pub alpha2: f64,
    pub alpha3: f64,
    pub beta: f64,
    pub tau: f64,
}

impl fmt::Display for OperatorSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} n_T={} n_b={} r={} case={} alpha2={:.6e} alpha3={:.6e} beta={:e} tau={:e}",
            self.n, self.n_t, self.n_b, self.r, self.case, self.alpha2, self.alpha3, self.beta, self.tau
        )
    }
}
