use std::collections::VecDeque;

use nalgebra::{Complex, DMatrix, DVector};

use super::reduced::{self, ReducedCoefficients};
use super::shifts::{adaptive_shift, pencil_values, ritz_values};
use crate::linalg::{dense_svd, sparse_factorize, GsOutcome, OrthoBasis, SparseFactorization, SparseMatrix};
use crate::problem::{CaseTag, SylvesterOperator};
use crate::residual::{residual_norms, Equation, ResidualFactors, ResidualNorms};
use crate::{Error, LinalgError, Result};

/// Relative residual required of every shifted solve.
pub const SHIFTED_SOLVE_TOL: f64 = 1e-10;
const REFINEMENT_STEPS: usize = 3;
const FACTOR_CACHE: usize = 8;

/// Coefficient matrix of a shifted solve, each applied to `Mv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShiftedKind {
    /// `K + sM`
    Stiffness,
    /// `Kᵀ + sM`
    StiffnessT,
    /// `(1 + sα₃)K + sG`
    PencilFirst,
    /// `(α₃ + s)K + G`
    PencilSecond,
}

struct CachedFactor {
    kind: ShiftedKind,
    shift: u64,
    matrix: SparseMatrix,
    factor: SparseFactorization,
}

/// Source of the vector `v_k` the next shifted solves are applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Newest basis vector from the first family: the classical nested
    /// rational Krylov sequence.
    Nested,
    /// Dominant left singular vector of the current residual pair.
    Residual,
}

impl Direction {
    /// `Nested` for the single-direction recipe, `Residual` for the mixed ones.
    pub fn default_for(recipe: CaseTag) -> Self {
        match recipe {
            CaseTag::FullObservationDistributed => Direction::Nested,
            _ => Direction::Residual,
        }
    }
}

/// Which projected matrix an entry of [`Projections`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Which {
    A1,
    A1t,
    A2,
    A3,
}

#[derive(Debug, Clone)]
struct Projections {
    a1: DMatrix<f64>,
    /// projected `M⁻¹Kᵀ`; `None` when `K` is symmetric
    a1t: Option<DMatrix<f64>>,
    a2: DMatrix<f64>,
    a3: DMatrix<f64>,
}

impl Projections {
    fn empty(symmetric: bool) -> Self {
        Self {
            a1: DMatrix::zeros(0, 0),
            a1t: (!symmetric).then(|| DMatrix::zeros(0, 0)),
            a2: DMatrix::zeros(0, 0),
            a3: DMatrix::zeros(0, 0),
        }
    }

    fn bytes(&self) -> usize {
        let p = self.a1.nrows();
        8 * p * p * if self.a1t.is_some() { 4 } else { 3 }
    }
}

fn apply(op: &SylvesterOperator, which: Which, v: &[f64]) -> Vec<f64> {
    match which {
        Which::A1 => op.apply_a1(v),
        Which::A1t => op.apply_a1t(v),
        Which::A2 => op.apply_a2(v),
        Which::A3 => op.apply_a3(v),
    }
}

fn apply_transpose(op: &SylvesterOperator, which: Which, v: &[f64]) -> Vec<f64> {
    match which {
        Which::A1 => op.apply_a1_transpose(v),
        Which::A1t => op.apply_a1t_transpose(v),
        Which::A2 => op.apply_a2(v),
        Which::A3 => op.apply_a3_transpose(v),
    }
}

fn project(op: &SylvesterOperator, which: Which, v: &DMatrix<f64>) -> DMatrix<f64> {
    let av = match which {
        Which::A1 => op.a1_mul(v),
        Which::A1t => op.a1t_mul(v),
        Which::A2 => op.a2_mul(v),
        Which::A3 => op.a3_mul(v),
    };
    v.tr_mul(&av)
}

/// Grows `a` (the projection onto the first `p − 1` columns) to `p × p`.
fn extend_projection(
    a: &mut DMatrix<f64>,
    op: &SylvesterOperator,
    which: Which,
    basis: &OrthoBasis,
) {
    let p = basis.ncols();
    let q = basis.column(p - 1);
    let v = basis.view();
    let col = v.tr_mul(&DVector::from_column_slice(&apply(op, which, q)));
    let row = v.columns(0, p - 1).tr_mul(&DVector::from_column_slice(&apply_transpose(op, which, q)));
    let mut grown = DMatrix::zeros(p, p);
    grown.view_mut((0, 0), (p - 1, p - 1)).copy_from(a);
    grown.column_mut(p - 1).copy_from(&col);
    for j in 0..p - 1 {
        grown[(p - 1, j)] = row[j];
    }
    *a = grown;
}

/// Running state of the projection method.
pub struct KrylovState<'a> {
    op: &'a SylvesterOperator,
    recipe: CaseTag,
    direction: Direction,
    basis: OrthoBasis,
    proj: Projections,
    f1r: DMatrix<f64>,
    directions: DMatrix<f64>,
    shifts1: Vec<f64>,
    shifts2: Vec<f64>,
    z: DMatrix<f64>,
    rf1: ResidualFactors,
    rf2: ResidualFactors,
    cache: VecDeque<CachedFactor>,
    worst_solve_residual: f64,
    peak_bytes: usize,
}

impl<'a> KrylovState<'a> {
    /// Orthonormalized columns of `F₁`; `None` when `F₁ = 0`.
    pub fn initialize(op: &'a SylvesterOperator, recipe: CaseTag, direction: Direction) -> Option<Self> {
        let n = op.n();
        let mut st = Self {
            op,
            recipe,
            direction,
            basis: OrthoBasis::new(n),
            proj: Projections::empty(op.is_symmetric()),
            f1r: DMatrix::zeros(0, op.rank()),
            directions: DMatrix::zeros(n, 0),
            shifts1: Vec::new(),
            shifts2: Vec::new(),
            z: DMatrix::zeros(0, 2 * op.n_t()),
            rf1: ResidualFactors::new(Equation::Adjoint, op),
            rf2: ResidualFactors::new(Equation::State, op),
            cache: VecDeque::new(),
            worst_solve_residual: 0.0,
            peak_bytes: 0,
        };
        let f1 = op.f1();
        for j in 0..f1.ncols() {
            st.append(f1.column(j).as_slice());
        }
        if st.p() == 0 {
            return None;
        }
        st.directions = st.basis.to_matrix();
        st.track_memory();
        Some(st)
    }

    pub fn p(&self) -> usize {
        self.basis.ncols()
    }

    pub fn recipe(&self) -> CaseTag {
        self.recipe
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn basis(&self) -> DMatrix<f64> {
        self.basis.to_matrix()
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn f1r(&self) -> &DMatrix<f64> {
        &self.f1r
    }

    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    pub fn shifts(&self) -> (&[f64], &[f64]) {
        (&self.shifts1, &self.shifts2)
    }

    pub fn orthogonality_defect(&self) -> f64 {
        self.basis.orthogonality_defect()
    }

    /// Largest relative residual `‖b − Aw‖/‖b‖` over all shifted solves.
    pub fn worst_solve_residual(&self) -> f64 {
        self.worst_solve_residual
    }

    /// Orthogonalizes `w` against the basis and appends it, extending all
    /// projections and residual factors. Returns false on breakdown.
    fn append(&mut self, w: &[f64]) -> bool {
        let GsOutcome::Appended { .. } = self.basis.push(w) else {
            return false;
        };
        let op = self.op;
        let p = self.p();
        extend_projection(&mut self.proj.a1, op, Which::A1, &self.basis);
        if let Some(a1t) = self.proj.a1t.as_mut() {
            extend_projection(a1t, op, Which::A1t, &self.basis);
        }
        extend_projection(&mut self.proj.a2, op, Which::A2, &self.basis);
        extend_projection(&mut self.proj.a3, op, Which::A3, &self.basis);
        let q = DVector::from_column_slice(self.basis.column(p - 1));
        let row = op.f1().tr_mul(&q);
        self.f1r = self.f1r.clone().insert_row(p - 1, 0.0);
        self.f1r.row_mut(p - 1).copy_from(&row.transpose());
        self.rf1.append_basis_vector(self.basis.column(p - 1), op);
        self.rf2.append_basis_vector(self.basis.column(p - 1), op);
        true
    }

    fn a1t_projection(&self) -> &DMatrix<f64> {
        self.proj.a1t.as_ref().unwrap_or(&self.proj.a1)
    }

    /// Adaptive poles `(s⁽¹⁾, s⁽²⁾)`; `s⁽²⁾` is `None` for the single-direction recipe.
    pub fn next_shifts(&self) -> (f64, Option<f64>) {
        let fallback = |used: &[f64]| used.last().copied().unwrap_or(1.0);
        let pick = |ritz: Option<Vec<Complex<f64>>>, used: &[f64]| {
            ritz.and_then(|r| adaptive_shift(&r, used, &[])).unwrap_or_else(|| fallback(used))
        };
        match self.recipe {
            CaseTag::FullObservationDistributed => (pick(ritz_values(&self.proj.a1), &self.shifts1), None),
            CaseTag::PartialObservation => {
                let ritz = ritz_values(&self.proj.a1);
                (pick(ritz.clone(), &self.shifts1), Some(pick(ritz, &self.shifts2)))
            }
            CaseTag::BoundaryControl => {
                let a3s = &self.proj.a3 + &self.proj.a1 * self.op.alpha3();
                let mu = pencil_values(&self.proj.a1, &a3s);
                let theta = mu
                    .as_ref()
                    .map(|m| m.iter().filter(|z| z.norm() > 0.0).map(|z| z.inv()).collect::<Vec<_>>());
                (pick(theta, &self.shifts1), Some(pick(mu, &self.shifts2)))
            }
            CaseTag::NonsymmetricK => {
                let s1 = pick(ritz_values(&self.proj.a1), &self.shifts1);
                (s1, Some(pick(ritz_values(self.a1t_projection()), &self.shifts2)))
            }
        }
    }

    fn shifted_matrix(&self, kind: ShiftedKind, s: f64) -> SparseMatrix {
        let op = self.op;
        let m = op.mass();
        match kind {
            ShiftedKind::Stiffness => op.stiffness().add_diagonal(&m.iter().map(|x| s * x).collect::<Vec<_>>()),
            ShiftedKind::StiffnessT => {
                op.stiffness_t().add_diagonal(&m.iter().map(|x| s * x).collect::<Vec<_>>())
            }
            ShiftedKind::PencilFirst => {
                op.stiffness().linear_combination(1.0 + s * op.alpha3(), op.control_gram(), s)
            }
            ShiftedKind::PencilSecond => {
                op.stiffness().linear_combination(op.alpha3() + s, op.control_gram(), 1.0)
            }
        }
    }

    fn factor(&mut self, kind: ShiftedKind, s: f64) -> Result<usize> {
        if let Some(i) = self.cache.iter().position(|c| c.kind == kind && c.shift == s.to_bits()) {
            return Ok(i);
        }
        let matrix = self.shifted_matrix(kind, s);
        let symmetric = match kind {
            ShiftedKind::Stiffness | ShiftedKind::StiffnessT => self.op.is_symmetric(),
            ShiftedKind::PencilFirst | ShiftedKind::PencilSecond => matrix.is_symmetric(),
        };
        let factor = sparse_factorize(&matrix, symmetric)?;
        if self.cache.len() == FACTOR_CACHE {
            self.cache.pop_front();
        }
        self.cache.push_back(CachedFactor {
            kind,
            shift: s.to_bits(),
            matrix,
            factor,
        });
        Ok(self.cache.len() - 1)
    }

    /// `w` with `(shifted matrix) w = M v`, refined until the residual check passes.
    fn shifted_solve(&mut self, kind: ShiftedKind, s: f64, v: &[f64]) -> Result<Vec<f64>> {
        let i = self.factor(kind, s)?;
        let c = &self.cache[i];
        let b: Vec<f64> = v.iter().zip(self.op.mass()).map(|(x, m)| x * m).collect();
        let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut w = c.factor.solve(&b);
        let mut rel = f64::INFINITY;
        for step in 0..=REFINEMENT_STEPS {
            let aw = c.matrix.mul_vec(&w);
            let r: Vec<f64> = b.iter().zip(&aw).map(|(x, y)| x - y).collect();
            rel = r.iter().map(|x| x * x).sum::<f64>().sqrt() / bnorm.max(f64::MIN_POSITIVE);
            if rel <= SHIFTED_SOLVE_TOL || step == REFINEMENT_STEPS {
                break;
            }
            let d = c.factor.solve(&r);
            w.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
        }
        if !rel.is_finite() {
            return Err(LinalgError::Singular { index: 0 }.into());
        }
        self.worst_solve_residual = self.worst_solve_residual.max(rel);
        Ok(w)
    }

    /// Dominant left singular vector of the stacked residuals `[R₁ R₂]`,
    /// mapped by `M⁻¹` and normalized; `None` for a zero residual.
    pub fn residual_direction(&self) -> Option<DVector<f64>> {
        let op = self.op;
        let (q1, q2) = (self.rf1.q_matrix(), self.rf2.q_matrix());
        let (a, b) = (q1.ncols(), q2.ncols());
        let nt = op.n_t();
        let mut q = DMatrix::zeros(op.n(), a + b);
        q.columns_mut(0, a).copy_from(&q1);
        q.columns_mut(a, b).copy_from(&q2);
        let mut w = DMatrix::zeros(a + b, 2 * nt);
        w.view_mut((0, 0), (a, nt))
            .copy_from(&(self.rf1.r_matrix() * self.rf1.right_factor_t(&self.z, op)));
        w.view_mut((a, nt), (b, nt))
            .copy_from(&(self.rf2.r_matrix() * self.rf2.right_factor_t(&self.z, op)));
        let qr = q.qr();
        let svd = dense_svd(&(qr.r() * w));
        if svd.singular_values.get(0).copied().unwrap_or(0.0) == 0.0 {
            return None;
        }
        let mut d = qr.q() * svd.u.column(0);
        d.iter_mut().zip(op.mass()).for_each(|(x, m)| *x /= m);
        let nrm = d.norm();
        (nrm > 0.0 && nrm.is_finite()).then(|| d / nrm)
    }

    /// Adds the next rational Krylov vectors; returns how many were appended.
    /// The residual direction needs a current `Z`; without one the stored
    /// directions are used.
    pub fn expand(&mut self) -> Result<usize> {
        if self.direction == Direction::Residual && self.z.nrows() == self.p() {
            if let Some(d) = self.residual_direction() {
                self.directions = DMatrix::from_columns(&[d]);
            }
        }
        let (s1, s2) = self.next_shifts();
        self.shifts1.push(s1);
        if let Some(s2) = s2 {
            self.shifts2.push(s2);
        }
        let dirs = self.directions.clone();
        let mut next = Vec::with_capacity(dirs.ncols());
        let mut added = 0;
        for j in 0..dirs.ncols() {
            let v = dirs.column(j);
            let v = v.as_slice();
            let first_kind = match self.recipe {
                CaseTag::BoundaryControl => ShiftedKind::PencilFirst,
                _ => ShiftedKind::Stiffness,
            };
            let w1 = self.shifted_solve(first_kind, s1, v)?;
            let w2 = match (self.recipe, s2) {
                (CaseTag::PartialObservation, Some(s)) => {
                    let a2 = self.op.a2_diag();
                    let a = self.op.alpha2();
                    Some(v.iter().zip(a2).map(|(x, d)| x / (d + a + s)).collect())
                }
                (CaseTag::BoundaryControl, Some(s)) => Some(self.shifted_solve(ShiftedKind::PencilSecond, s, v)?),
                (CaseTag::NonsymmetricK, Some(s)) => Some(self.shifted_solve(ShiftedKind::StiffnessT, s, v)?),
                _ => None,
            };
            let mut dir = None;
            if self.append(&w1) {
                added += 1;
                dir = Some(self.p() - 1);
            }
            if let Some(w2) = w2 {
                if self.append(&w2) {
                    added += 1;
                    dir = dir.or(Some(self.p() - 1));
                }
            }
            next.push(match dir {
                Some(c) => DVector::from_column_slice(self.basis.column(c)),
                None => DVector::from_column_slice(v),
            });
        }
        self.directions = DMatrix::from_columns(&next);
        self.track_memory();
        Ok(added)
    }

    pub fn coefficients(&self) -> ReducedCoefficients<'_> {
        ReducedCoefficients {
            a1: &self.proj.a1,
            a1t: self.a1t_projection(),
            a2: &self.proj.a2,
            a3: &self.proj.a3,
            f1: &self.f1r,
            y2: self.op.y2(),
            tau: self.op.tau(),
            beta: self.op.beta(),
            alpha2: self.op.alpha2(),
            alpha3: self.op.alpha3(),
        }
    }

    pub fn solve_reduced(&mut self, iteration: usize) -> Result<()> {
        let z = reduced::solve(&self.coefficients()).ok_or(Error::SingularReduced {
            iteration,
            p: self.p(),
        })?;
        self.z = z;
        self.track_memory();
        Ok(())
    }

    pub fn residual_norms(&self) -> ResidualNorms {
        residual_norms(&self.rf1, &self.rf2, &self.z, self.op)
    }

    /// Rotates the basis onto the dominant left singular vectors of `Z`,
    /// keeping those with `σᵢ ≥ threshold·σ₁` (at most `n_T`, at least one).
    /// Returns the new dimension when the basis shrank.
    pub fn truncate(&mut self, threshold: f64) -> Option<usize> {
        let p = self.p();
        let svd = dense_svd(&self.z);
        let s = &svd.singular_values;
        let s1 = s.get(0).copied().unwrap_or(0.0);
        let kept = s.iter().filter(|&&x| x >= threshold * s1 && s1 > 0.0).count();
        let kept = kept.min(self.op.n_t()).max(1);
        if kept >= p {
            return None;
        }
        let u = svd.u.columns(0, kept).into_owned();
        let v = self.basis.to_matrix() * &u;
        self.z = u.tr_mul(&self.z);
        self.rebuild(&v);
        Some(kept)
    }

    /// Replaces the basis by the orthonormal `v` and recomputes all projected
    /// quantities from scratch.
    fn rebuild(&mut self, v: &DMatrix<f64>) {
        let op = self.op;
        self.basis = OrthoBasis::from_orthonormal(v);
        self.proj = Projections {
            a1: project(op, Which::A1, v),
            a1t: self.proj.a1t.as_ref().map(|_| project(op, Which::A1t, v)),
            a2: project(op, Which::A2, v),
            a3: project(op, Which::A3, v),
        };
        self.f1r = v.tr_mul(op.f1());
        self.rf1 = ResidualFactors::rebuild(Equation::Adjoint, v, op);
        self.rf2 = ResidualFactors::rebuild(Equation::State, v, op);
    }

    /// Largest relative difference between the maintained projections and a
    /// recomputation from scratch.
    pub fn projection_defect(&self) -> f64 {
        let v = self.basis.to_matrix();
        let op = self.op;
        let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).norm() / b.norm().max(f64::MIN_POSITIVE);
        let mut worst = rel(&self.proj.a1, &project(op, Which::A1, &v))
            .max(rel(&self.proj.a2, &project(op, Which::A2, &v)))
            .max(rel(&self.proj.a3, &project(op, Which::A3, &v)))
            .max(rel(&self.f1r, &v.tr_mul(op.f1())));
        if let Some(a1t) = &self.proj.a1t {
            worst = worst.max(rel(a1t, &project(op, Which::A1t, &v)));
        }
        worst
    }

    fn current_bytes(&self) -> usize {
        let p = self.p();
        let nt = self.op.n_t();
        8 * (self.basis.nrows() * p + self.z.len() + self.f1r.len() + self.directions.len())
            + self.proj.bytes()
            + reduced::workspace_bytes(p, nt)
            + self.rf1.bytes()
            + self.rf2.bytes()
            + self.cache.iter().map(|c| c.factor.fill_bytes()).sum::<usize>()
    }

    fn track_memory(&mut self) {
        self.peak_bytes = self.peak_bytes.max(self.current_bytes());
    }

    /// Peak bytes of solver-owned buffers so far.
    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes
    }
}
