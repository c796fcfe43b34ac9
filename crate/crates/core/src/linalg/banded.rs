//! Banded direct factorization of sparse matrices.
//!
//! The matrix is symmetrically permuted with reverse Cuthill-McKee when that
//! shrinks the bandwidth, then factorized in band storage: Cholesky when the
//! caller flags the matrix as symmetric and it turns out positive definite,
//! LU with partial pivoting otherwise.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use super::{LinalgError, SparseMatrix};

#[derive(Debug, Clone)]
enum BandFactor {
    /// Lower band of `L`, row-major: `l[i * (kl + 1) + (j + kl - i)] = L(i, j)`.
    Cholesky { kl: usize, l: Vec<f64> },
    /// LAPACK `gbtrf` layout: `A(r, c)` at `ab[c * ldab + kv + r - c]`.
    Lu {
        kl: usize,
        kv: usize,
        ldab: usize,
        ab: Vec<f64>,
        pivots: Vec<usize>,
    },
}

/// Reusable direct factorization of a square sparse matrix.
#[derive(Debug, Clone)]
pub struct SparseFactorization {
    n: usize,
    /// `perm[new] = old`; `None` when the natural ordering is kept.
    perm: Option<Vec<usize>>,
    factor: BandFactor,
    symmetric: bool,
}

/// Factorizes `a`. With `symmetric` set, a banded Cholesky is attempted
/// first and LU is used only if the matrix is not positive definite.
pub fn sparse_factorize(
    a: &SparseMatrix,
    symmetric: bool,
) -> Result<SparseFactorization, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare {
            nrows: a.nrows(),
            ncols: a.ncols(),
        });
    }
    let n = a.nrows();
    let natural = a.bandwidth();
    let rcm = reverse_cuthill_mckee(a);
    let permuted = a.permute_symmetric(&rcm);
    let reordered = permuted.bandwidth();
    let (mat, perm) = if reordered.0.max(reordered.1) < natural.0.max(natural.1) {
        (permuted, Some(rcm))
    } else {
        (a.clone(), None)
    };
    let scale = mat.max_abs();
    let pivot_tol = (n.max(1) as f64) * f64::EPSILON * scale;
    if scale == 0.0 && n > 0 {
        return Err(LinalgError::Singular { index: 0 });
    }

    let factor = if symmetric {
        match band_cholesky(&mat, pivot_tol) {
            Some(f) => f,
            None => band_lu(&mat, pivot_tol)?,
        }
    } else {
        band_lu(&mat, pivot_tol)?
    };
    Ok(SparseFactorization {
        n,
        perm,
        factor,
        symmetric,
    })
}

impl SparseFactorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// True when the Cholesky path was taken.
    pub fn is_cholesky(&self) -> bool {
        matches!(self.factor, BandFactor::Cholesky { .. })
    }

    /// Bytes held by the factor storage.
    pub fn fill_bytes(&self) -> usize {
        let words = match &self.factor {
            BandFactor::Cholesky { l, .. } => l.len(),
            BandFactor::Lu { ab, pivots, .. } => ab.len() + pivots.len(),
        };
        8 * words
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        match &self.perm {
            None => self.solve_band(b),
            Some(p) => {
                let mut work: Vec<f64> = p.iter().map(|&old| b[old]).collect();
                self.solve_band(&mut work);
                for (new, &old) in p.iter().enumerate() {
                    b[old] = work[new];
                }
            }
        }
    }

    pub fn solve_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for c in 0..x.ncols() {
            let mut col = x.column_mut(c);
            self.solve_in_place(col.as_mut_slice());
        }
        x
    }

    fn solve_band(&self, b: &mut [f64]) {
        let n = self.n;
        match &self.factor {
            BandFactor::Cholesky { kl, l } => {
                let w = kl + 1;
                // L y = b
                for i in 0..n {
                    let j0 = i.saturating_sub(*kl);
                    let row = &l[i * w..(i + 1) * w];
                    let mut s = b[i];
                    for j in j0..i {
                        s -= row[j + kl - i] * b[j];
                    }
                    b[i] = s / row[*kl];
                }
                // Lᵀ x = y
                for i in (0..n).rev() {
                    let row = &l[i * w..(i + 1) * w];
                    b[i] /= row[*kl];
                    let bi = b[i];
                    for j in i.saturating_sub(*kl)..i {
                        b[j] -= row[j + kl - i] * bi;
                    }
                }
            }
            BandFactor::Lu {
                kl,
                kv,
                ldab,
                ab,
                pivots,
            } => {
                for j in 0..n {
                    let p = pivots[j];
                    if p != j {
                        b.swap(j, p);
                    }
                    let km = (*kl).min(n - 1 - j);
                    let bj = b[j];
                    if bj != 0.0 {
                        let col = &ab[j * ldab..];
                        for i in 1..=km {
                            b[j + i] -= col[kv + i] * bj;
                        }
                    }
                }
                for j in (0..n).rev() {
                    let col = &ab[j * ldab..];
                    b[j] /= col[*kv];
                    let bj = b[j];
                    if bj != 0.0 {
                        for i in j.saturating_sub(*kv)..j {
                            b[i] -= col[kv + i - j] * bj;
                        }
                    }
                }
            }
        }
    }
}

fn band_cholesky(a: &SparseMatrix, pivot_tol: f64) -> Option<BandFactor> {
    let n = a.nrows();
    let (lo, hi) = a.bandwidth();
    let kl = lo.max(hi);
    let w = kl + 1;
    let mut l = vec![0.0; n * w];
    for (i, j, v) in a.triplets() {
        if j <= i {
            l[i * w + j + kl - i] = v;
        }
    }
    for i in 0..n {
        let j0 = i.saturating_sub(kl);
        for j in j0..=i {
            let k0 = j0.max(j.saturating_sub(kl));
            let mut s = l[i * w + j + kl - i];
            for k in k0..j {
                s -= l[i * w + k + kl - i] * l[j * w + k + kl - j];
            }
            if i == j {
                if s <= pivot_tol {
                    return None;
                }
                l[i * w + kl] = s.sqrt();
            } else {
                l[i * w + j + kl - i] = s / l[j * w + kl];
            }
        }
    }
    Some(BandFactor::Cholesky { kl, l })
}

fn band_lu(a: &SparseMatrix, pivot_tol: f64) -> Result<BandFactor, LinalgError> {
    let n = a.nrows();
    let (kl, ku) = a.bandwidth();
    let kv = kl + ku;
    let ldab = 2 * kl + ku + 1;
    let mut ab = vec![0.0; n * ldab];
    for (r, c, v) in a.triplets() {
        ab[c * ldab + kv + r - c] = v;
    }
    let mut pivots = vec![0; n];
    let mut ju = 0usize;
    for j in 0..n {
        let km = kl.min(n - 1 - j);
        let base = j * ldab + kv;
        let mut jp = 0;
        let mut best = ab[base].abs();
        for i in 1..=km {
            let v = ab[base + i].abs();
            if v > best {
                best = v;
                jp = i;
            }
        }
        pivots[j] = j + jp;
        if best <= pivot_tol {
            return Err(LinalgError::Singular { index: j });
        }
        ju = ju.max((j + ku + jp).min(n - 1));
        if jp != 0 {
            for c in j..=ju {
                let off = c - j;
                ab.swap(c * ldab + kv + jp - off, c * ldab + kv - off);
            }
        }
        let piv = ab[base];
        for i in 1..=km {
            ab[base + i] /= piv;
        }
        for c in j + 1..=ju {
            let off = c - j;
            let f = ab[c * ldab + kv - off];
            if f != 0.0 {
                for i in 1..=km {
                    let lij = ab[base + i];
                    ab[c * ldab + kv + i - off] -= lij * f;
                }
            }
        }
    }
    Ok(BandFactor::Lu {
        kl,
        kv,
        ldab,
        ab,
        pivots,
    })
}

/// Reverse Cuthill-McKee ordering of the pattern of `A + Aᵀ`; `perm[new] = old`.
fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in a.triplets() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for nb in adj.iter_mut() {
        nb.sort_unstable();
        nb.dedup();
    }
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs = |start: usize, visited: &mut Vec<bool>, order: &mut Vec<usize>| {
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (adj[v].len(), v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    };
    while order.len() < n {
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (adj[i].len(), i))
            .unwrap();
        let start = pseudo_peripheral(&adj, start, &visited);
        bfs(start, &mut visited, &mut order);
    }
    order.reverse();
    order
}

fn pseudo_peripheral(adj: &[Vec<usize>], start: usize, blocked: &[bool]) -> usize {
    let mut node = start;
    let mut ecc = 0;
    for _ in 0..4 {
        let mut level = vec![usize::MAX; adj.len()];
        level[node] = 0;
        let mut queue = VecDeque::from([node]);
        let mut last = node;
        while let Some(u) = queue.pop_front() {
            last = u;
            for &v in &adj[u] {
                if !blocked[v] && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if level[last] <= ecc {
            break;
        }
        ecc = level[last];
        node = last;
    }
    node
}
