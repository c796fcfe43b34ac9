use std::path::PathBuf;

use nalgebra::DMatrix;

use super::grid::Grid;
use crate::linalg::market;
use crate::{Error, Result};

/// Low-rank desired state `Ŷ = Y₁Y₂ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredState {
    /// `n × r`
    pub y1: DMatrix<f64>,
    /// `n_T × r`
    pub y2: DMatrix<f64>,
}

impl DesiredState {
    pub fn rank(&self) -> usize {
        self.y1.ncols()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        &self.y1 * self.y2.transpose()
    }

    pub fn is_zero(&self) -> bool {
        self.y1.iter().all(|&v| v == 0.0) || self.y2.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DesiredKind {
    /// Indicator of a centred square; `fraction` is its share of the domain area.
    ConstantRank1 { fraction: f64 },
    /// Six products of sine modes in space and cosine modes in time.
    Rank6Modes,
    /// `Y₁` and `Y₂` read from MatrixMarket files.
    FromFile { y1: PathBuf, y2: PathBuf },
}

impl Default for DesiredKind {
    fn default() -> Self {
        DesiredKind::ConstantRank1 { fraction: 0.25 }
    }
}

const MODES: [(f64, f64); 6] = [(1., 1.), (1., 2.), (2., 1.), (2., 2.), (1., 3.), (3., 1.)];

pub fn make_desired_state(kind: &DesiredKind, grid: &Grid, n_t: usize, t_final: f64) -> Result<DesiredState> {
    if n_t == 0 {
        return Err(Error::InvalidInput("n_T must be at least 1".into()));
    }
    let n = grid.num_nodes();
    let (lo, hi) = grid.domain.bounds();
    let len = hi - lo;
    let st = match kind {
        DesiredKind::ConstantRank1 { fraction } => {
            if !(*fraction > 0.0 && *fraction <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "area fraction must lie in (0, 1], got {fraction}"
                )));
            }
            let half = 0.5 * len * fraction.sqrt();
            let mid = 0.5 * (lo + hi);
            let tol = 1e-12 * len;
            let y1 = DMatrix::from_fn(n, 1, |k, _| {
                let (x, y) = grid.coords(k);
                let inside = (x - mid).abs() <= half + tol && (y - mid).abs() <= half + tol;
                if inside {
                    1.0
                } else {
                    0.0
                }
            });
            DesiredState {
                y1,
                y2: DMatrix::from_element(n_t, 1, 1.0),
            }
        }
        DesiredKind::Rank6Modes => {
            let pi = std::f64::consts::PI;
            let y1 = DMatrix::from_fn(n, 6, |k, c| {
                let (x, y) = grid.coords(k);
                let (a, b) = MODES[c];
                (a * pi * (x - lo) / len).sin() * (b * pi * (y - lo) / len).sin()
            });
            let tau = t_final / n_t as f64;
            let y2 = DMatrix::from_fn(n_t, 6, |i, j| {
                (j as f64 * pi * (i + 1) as f64 * tau / t_final).cos()
            });
            DesiredState { y1, y2 }
        }
        DesiredKind::FromFile { y1, y2 } => DesiredState {
            y1: market::read_dense(y1)?,
            y2: market::read_dense(y2)?,
        },
    };
    validate(&st, n, n_t)?;
    Ok(st)
}

pub fn validate(st: &DesiredState, n: usize, n_t: usize) -> Result<()> {
    if st.y1.nrows() != n || st.y2.nrows() != n_t || st.y1.ncols() != st.y2.ncols() {
        return Err(Error::InvalidInput(format!(
            "desired-state factors are {}x{} and {}x{}, expected {n}xr and {n_t}xr",
            st.y1.nrows(),
            st.y1.ncols(),
            st.y2.nrows(),
            st.y2.ncols()
        )));
    }
    if n_t > 1 && st.rank() >= n_t {
        return Err(Error::InvalidInput(format!(
            "desired-state rank {} must be smaller than n_T = {n_t}",
            st.rank()
        )));
    }
    Ok(())
}
