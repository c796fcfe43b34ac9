//! Adaptive pole selection from Ritz values.

use nalgebra::{Complex, DMatrix, Schur};

/// Number of log-spaced candidates over the spectral interval.
pub const CANDIDATES: usize = 200;
/// Lower end of the interval relative to its upper end.
pub const FLOOR: f64 = 1e-8;

/// Eigenvalues of a small dense matrix; `None` if the Schur iteration does
/// not converge.
pub fn ritz_values(a: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    if a.nrows() == 0 {
        return Some(Vec::new());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000)?;
    let out: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    out.iter().all(|z| z.re.is_finite() && z.im.is_finite()).then_some(out)
}

/// Eigenvalues of `a⁻¹b`, or `None` if `a` is singular.
pub fn pencil_values(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let inv = a.clone().try_inverse()?;
    ritz_values(&(inv * b))
}

/// Next real pole `t` over `[θ_min, θ_max]` maximizing
/// `∏|t − s_j| / ∏|t + θ_j|`, with `s_j` the poles used so far.
///
/// The interval runs from the smallest positive real part to the largest
/// modulus of the Ritz values. `extra` widens it (for instance with a priori
/// spectral estimates); only positive values are used.
pub fn adaptive_shift(ritz: &[Complex<f64>], used: &[f64], extra: &[f64]) -> Option<f64> {
    let positive = |v: &f64| v.is_finite() && *v > 0.0;
    let lo = ritz
        .iter()
        .map(|z| z.re)
        .chain(extra.iter().copied())
        .filter(positive)
        .fold(f64::INFINITY, f64::min);
    if !lo.is_finite() {
        return None;
    }
    let hi = ritz
        .iter()
        .filter(|z| z.re > 0.0)
        .map(|z| z.norm())
        .chain(extra.iter().copied())
        .filter(positive)
        .fold(0.0_f64, f64::max);
    let lo = lo.max(FLOOR * hi);
    let mid = 0.5 * (lo + hi);
    if hi - lo <= 1e-12 * hi {
        return Some(mid);
    }
    let score = |t: f64| {
        let num: f64 = used.iter().map(|s| (t - s).abs().ln()).sum();
        let den: f64 = ritz.iter().map(|th| (th + t).norm().ln()).sum();
        num - den
    };
    let (l0, l1) = (lo.ln(), hi.ln());
    let mut best: Option<(f64, f64)> = None;
    for i in 0..CANDIDATES {
        let t = (l0 + (l1 - l0) * i as f64 / (CANDIDATES - 1) as f64).exp();
        let v = score(t);
        if v.is_nan() {
            continue;
        }
        match best {
            Some((_, bv)) if bv >= v => {}
            _ => best = Some((t, v)),
        }
    }
    match best {
        Some((t, v)) if v.is_finite() => Some(t),
        _ => Some(mid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(v: &[f64]) -> Vec<Complex<f64>> {
        v.iter().map(|x| Complex::new(*x, 0.0)).collect()
    }

    #[test]
    fn single_ritz_value_picks_an_endpoint() {
        // monotone in t for a single pole: the left endpoint wins
        let s = adaptive_shift(&real(&[2.0]), &[], &[1.0, 50.0]).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn degenerate_interval_uses_midpoint() {
        let s = adaptive_shift(&real(&[3.0, 3.0, 3.0]), &[1.0], &[]).unwrap();
        assert_eq!(s, 3.0);
    }

    #[test]
    fn used_poles_are_avoided() {
        let ritz = real(&[1.0, 10.0, 100.0]);
        let s = adaptive_shift(&ritz, &[1.0], &[]).unwrap();
        assert!(s > 1.0);
        let s2 = adaptive_shift(&ritz, &[1.0, s], &[]).unwrap();
        assert!((s2 - s).abs() > 1e-3 * s);
    }

    #[test]
    fn shifts_positive_for_spd_projection() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.01, 0.0, 0.01, 1e-3]);
        let ritz = ritz_values(&a).unwrap();
        assert!(ritz.iter().all(|z| z.re > 0.0 && z.im == 0.0));
        let mut used = vec![];
        for _ in 0..6 {
            let s = adaptive_shift(&ritz, &used, &[]).unwrap();
            assert!(s > 0.0);
            used.push(s);
        }
    }

    #[test]
    fn complex_pair_extends_interval_to_modulus() {
        // eigenvalues 1 ± 10i
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 10.0, -10.0, 1.0]);
        let ritz = ritz_values(&a).unwrap();
        assert!(ritz.iter().all(|z| (z.im.abs() - 10.0).abs() < 1e-12));
        let mut used = vec![];
        for _ in 0..4 {
            used.push(adaptive_shift(&ritz, &used, &[]).unwrap());
        }
        let hi = 101f64.sqrt();
        assert!(used.iter().all(|s| *s >= 1.0 - 1e-12 && *s <= hi + 1e-12));
        assert!(used.iter().any(|s| *s > 2.0), "{used:?}");
    }

    #[test]
    fn nonpositive_spectrum_gives_none() {
        assert!(adaptive_shift(&real(&[-1.0, 0.0]), &[], &[]).is_none());
    }

    #[test]
    fn pencil_of_diagonals() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 4.0]));
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0]));
        let mut v: Vec<f64> = pencil_values(&a, &b).unwrap().iter().map(|z| z.re).collect();
        v.sort_by(f64::total_cmp);
        assert!((v[0] - 0.25).abs() < 1e-14 && (v[1] - 0.5).abs() < 1e-14);
    }
}
