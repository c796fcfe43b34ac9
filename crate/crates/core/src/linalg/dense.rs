use nalgebra::{DMatrix, DMatrixView, DVector};

use super::LinalgError;

pub type DenseMatrix = DMatrix<f64>;

/// Relative threshold below which an orthogonalized vector is treated as
/// lying in the span of the basis.
pub const BREAKDOWN_TOL: f64 = 1e-12;

/// Result of orthogonalizing a vector against an orthonormal basis.
#[derive(Debug, Clone)]
pub enum GsOutcome {
    /// New unit vector orthogonal to the basis, and the projection coefficients.
    Appended { vector: DVector<f64>, coeffs: DVector<f64>, norm: f64 },
    /// The vector lies in the span of the basis (to [`BREAKDOWN_TOL`]).
    Breakdown { coeffs: DVector<f64> },
}

/// Two-pass classical Gram-Schmidt of `w` against the orthonormal columns of `basis`.
pub fn gram_schmidt_append(basis: DMatrixView<'_, f64>, w: &[f64]) -> GsOutcome {
    assert_eq!(basis.nrows(), w.len());
    let w0 = DVector::from_column_slice(w);
    let wnorm = w0.norm();
    if basis.ncols() == 0 {
        if wnorm == 0.0 {
            return GsOutcome::Breakdown {
                coeffs: DVector::zeros(0),
            };
        }
        return GsOutcome::Appended {
            vector: w0 / wnorm,
            coeffs: DVector::zeros(0),
            norm: wnorm,
        };
    }
    let h1 = basis.tr_mul(&w0);
    let w1 = &w0 - basis * &h1;
    let h2 = basis.tr_mul(&w1);
    let w2 = w1 - basis * &h2;
    let coeffs = h1 + h2;
    let norm = w2.norm();
    if norm <= BREAKDOWN_TOL * wnorm || wnorm == 0.0 {
        GsOutcome::Breakdown { coeffs }
    } else {
        GsOutcome::Appended {
            vector: w2 / norm,
            coeffs,
            norm,
        }
    }
}

/// Growable orthonormal basis stored column-major in one buffer.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    n: usize,
    data: Vec<f64>,
}

impl OrthoBasis {
    pub fn new(n: usize) -> Self {
        Self { n, data: Vec::new() }
    }

    /// Wraps columns that are already orthonormal.
    pub fn from_orthonormal(v: &DMatrix<f64>) -> Self {
        Self {
            n: v.nrows(),
            data: v.as_slice().to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.data.len() / self.n
        }
    }

    pub fn view(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.data, self.n, self.ncols())
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        self.view().into_owned()
    }

    /// Orthogonalizes `w` and appends it unless it breaks down.
    pub fn push(&mut self, w: &[f64]) -> GsOutcome {
        let out = gram_schmidt_append(self.view(), w);
        if let GsOutcome::Appended { vector, .. } = &out {
            self.data.extend_from_slice(vector.as_slice());
        }
        out
    }

    /// `‖VᵀV − I‖_max`
    pub fn orthogonality_defect(&self) -> f64 {
        let v = self.view();
        let g = v.tr_mul(&v);
        let p = g.nrows();
        let mut m = 0.0_f64;
        for i in 0..p {
            for j in 0..p {
                let e = if i == j { 1.0 } else { 0.0 };
                m = m.max((g[(i, j)] - e).abs());
            }
        }
        m
    }
}

/// Thin SVD with singular values sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn dense_svd(z: &DMatrix<f64>) -> Svd {
    let k = z.nrows().min(z.ncols());
    if k == 0 {
        return Svd {
            u: DMatrix::zeros(z.nrows(), 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, z.ncols()),
        };
    }
    let svd = z.clone().svd(true, true);
    let (u, s, vt) = (svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    Svd {
        u: DMatrix::from_fn(u.nrows(), k, |i, j| u[(i, order[j])]),
        singular_values: DVector::from_fn(k, |i, _| s[order[i]].max(0.0)),
        v_t: DMatrix::from_fn(k, vt.ncols(), |i, j| vt[(order[i], j)]),
    }
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn dense_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            nrows: a.nrows(),
            ncols: a.ncols(),
        });
    }
    if a.nrows() != b.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: format!("rhs of length {}", a.nrows()),
            found: format!("{}", b.len()),
        });
    }
    let lu = a.clone().lu();
    let scale = a.amax();
    let tol = (a.nrows().max(1) as f64) * f64::EPSILON * scale;
    let u = lu.u();
    for i in 0..u.nrows() {
        if u[(i, i)].abs() <= tol {
            return Err(LinalgError::Singular { index: i });
        }
    }
    lu.solve(b).ok_or(LinalgError::Singular { index: 0 })
}

pub fn frobenius_norm(a: &DMatrix<f64>) -> f64 {
    a.norm()
}

/// `trace(AᵀB)`
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.dot(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn gs_unit_vector() {
        let mut b = OrthoBasis::new(3);
        b.push(&e(3, 0));
        match b.push(&e(3, 1)) {
            GsOutcome::Appended { vector, .. } => assert_eq!(vector.as_slice(), &e(3, 1)[..]),
            _ => panic!("expected append"),
        }
    }

    #[test]
    fn gs_in_span_breaks_down() {
        let mut b = OrthoBasis::new(3);
        b.push(&e(3, 0));
        assert!(matches!(b.push(&e(3, 0)), GsOutcome::Breakdown { .. }));
        assert_eq!(b.ncols(), 1);
    }

    #[test]
    fn gs_hand_orthogonalization() {
        let mut b = OrthoBasis::new(3);
        b.push(&e(3, 0));
        let s = 1.0 / 2f64.sqrt();
        match b.push(&[s, s, 0.0]) {
            GsOutcome::Appended { vector, coeffs, .. } => {
                assert!((vector - DVector::from_column_slice(&e(3, 1))).amax() < 1e-15);
                assert!((coeffs[0] - s).abs() < 1e-15);
            }
            _ => panic!("expected append"),
        }
    }

    #[test]
    fn gs_500_random_appends_stay_orthonormal() {
        let n = 600;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut b = OrthoBasis::new(n);
        for _ in 0..500 {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            b.push(&w);
        }
        assert_eq!(b.ncols(), 500);
        assert!(b.orthogonality_defect() <= 1e-12);
    }

    #[test]
    fn svd_examples() {
        let z = DMatrix::<f64>::zeros(3, 4);
        assert!(dense_svd(&z).singular_values.iter().all(|&s| s == 0.0));
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let s = dense_svd(&d).singular_values;
        assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 1.0).abs() < 1e-14);
        // ‖u‖ = 2, ‖v‖ = 5 -> σ₁ = 10
        let u = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        let v = DVector::from_vec(vec![3.0, 4.0]);
        let s = dense_svd(&(u * v.transpose())).singular_values;
        assert!((s[0] - 10.0).abs() < 1e-13 && s[1].abs() < 1e-13);
    }

    #[test]
    fn svd_reconstructs_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(m, n) in &[(1, 7), (13, 5), (40, 90), (200, 200)] {
            let z = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let svd = dense_svd(&z);
            let s = &svd.singular_values;
            assert!(s.as_slice().windows(2).all(|w| w[0] >= w[1]));
            let rec = &svd.u * DMatrix::from_diagonal(s) * &svd.v_t;
            assert!((rec - &z).norm() <= 1e-12 * z.norm());
        }
    }

    #[test]
    fn dense_solve_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let x = dense_solve(&a, &DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0]);
        let lap = DMatrix::from_fn(4, 4, |i, j| match i.abs_diff(j) {
            0 => 2.0,
            1 => -1.0,
            _ => 0.0,
        });
        let xs = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let x = dense_solve(&lap, &(&lap * &xs)).unwrap();
        assert!((x - xs).amax() < 1e-13);
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(dense_solve(&sing, &DVector::from_vec(vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn norm_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!((frobenius_norm(&i2) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(trace_product(&i2, &i2), 2.0);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!((frobenius_norm(&a) - 30f64.sqrt()).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn dense_solve_residual_bound(seed in 0u64..500, n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(n, n, |i, j| {
                rng.random_range(-1.0..1.0) + if i == j { n as f64 } else { 0.0 }
            });
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let x = dense_solve(&a, &b).unwrap();
            let r = (&a * &x - &b).norm();
            prop_assert!(r <= 1e-10 * (a.norm() * x.norm() + b.norm()));
        }

        #[test]
        fn trace_product_is_frobenius_inner(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
            let t = (a.transpose() * &b).trace();
            prop_assert!((trace_product(&a, &b) - t).abs() < 1e-13);
            prop_assert!((trace_product(&a, &a).sqrt() - frobenius_norm(&a)).abs() < 1e-13);
        }
    }
}
