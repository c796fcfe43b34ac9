use nalgebra::DMatrix;

use super::{LeftA3, SylvesterOperator};
use crate::linalg::SparseMatrix;

/// Appends the entries of `B ⊗ A` to `out`.
fn kron_into(b: &DMatrix<f64>, a: &SparseMatrix, out: &mut Vec<(usize, usize, f64)>) {
    let (m, n) = (a.nrows(), a.ncols());
    for j in 0..b.ncols() {
        for i in 0..b.nrows() {
            let bij = b[(i, j)];
            if bij == 0.0 {
                continue;
            }
            for (r, c, v) in a.triplets() {
                out.push((i * m + r, j * n + c, bij * v));
            }
        }
    }
}

pub fn kron(b: &DMatrix<f64>, a: &SparseMatrix) -> SparseMatrix {
    let mut t = Vec::new();
    kron_into(b, a, &mut t);
    SparseMatrix::from_triplets(b.nrows() * a.nrows(), b.ncols() * a.ncols(), &t)
        .expect("indices in range by construction")
}

/// Explicit `2n·n_T`-square matrix `L` with `L vec(X) = vec(apply_operator(X) + F₁F₂ᵀ)`,
/// built from `vec(AXB) = (Bᵀ ⊗ A) vec(X)`.
pub fn assemble_kronecker(op: &SylvesterOperator) -> SparseMatrix {
    let (n, nt) = (op.n(), op.n_t());
    let (c1, i0, d) = op.right_coefficients_dense();
    let id = DMatrix::<f64>::identity(2 * nt, 2 * nt);
    let mut e_y = DMatrix::zeros(2 * nt, 2 * nt);
    let mut e_l = DMatrix::zeros(2 * nt, 2 * nt);
    for t in 0..nt {
        e_y[(t, t)] = 1.0;
        e_l[(nt + t, nt + t)] = 1.0;
    }
    let a1 = op.stiffness().scale_rows(op.mass_inv());
    let a1t = op.stiffness_t().scale_rows(op.mass_inv());
    let a2 = SparseMatrix::from_diagonal(op.a2_diag())
        .add_diagonal(&vec![op.alpha2(); n]);
    let a3 = match op.a3() {
        LeftA3::Diagonal(v) => SparseMatrix::from_diagonal(v),
        LeftA3::Factored { left, right } => left.matmul(right),
    };
    let a3s = a3.linear_combination(1.0, &a1, op.alpha3());
    let ident_n = SparseMatrix::identity(n);

    let shift = &id - &d * op.alpha3();
    let mut t = Vec::new();
    kron_into(&(&shift * &e_y).transpose(), &a1, &mut t);
    kron_into(&(&shift * &e_l).transpose(), &a1t, &mut t);
    kron_into(&(&c1 - &i0 * op.alpha2()).transpose(), &ident_n, &mut t);
    kron_into(&i0.transpose(), &a2, &mut t);
    kron_into(&d.transpose(), &a3s, &mut t);
    SparseMatrix::from_triplets(2 * n * nt, 2 * n * nt, &t).expect("indices in range by construction")
}
