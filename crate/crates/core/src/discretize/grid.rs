use crate::{Error, Result};

/// Default cap on the refinement level (n = 4 198 401 nodes at k = 11).
pub const DEFAULT_MAX_LEVEL: u32 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// `[0,1]²`
    UnitSquare,
    /// `[-1,1]²`
    SymmetricSquare,
}

impl Domain {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Domain::UnitSquare => (0.0, 1.0),
            Domain::SymmetricSquare => (-1.0, 1.0),
        }
    }

    pub fn area(self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo) * (hi - lo)
    }
}

/// Uniform grid of `m × m` square cells with all `(m+1)²` nodes retained.
///
/// Node `(i, j)` (column `i` along x, row `j` along y) has index `j·(m+1) + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub domain: Domain,
    pub level: u32,
    pub cells: usize,
}

impl Grid {
    pub fn new(level: u32, domain: Domain) -> Result<Self> {
        Self::with_cap(level, domain, DEFAULT_MAX_LEVEL)
    }

    pub fn with_cap(level: u32, domain: Domain, cap: u32) -> Result<Self> {
        if level == 0 {
            return Err(Error::InvalidInput("grid level must be at least 1".into()));
        }
        if level > cap {
            return Err(Error::GridTooLarge { level, cap });
        }
        Ok(Self {
            domain,
            level,
            cells: 1usize << level,
        })
    }

    pub fn nodes_per_side(&self) -> usize {
        self.cells + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_side() * self.nodes_per_side()
    }

    pub fn h(&self) -> f64 {
        let (lo, hi) = self.domain.bounds();
        (hi - lo) / self.cells as f64
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nodes_per_side() + i
    }

    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.nodes_per_side(), idx / self.nodes_per_side())
    }

    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let (lo, _) = self.domain.bounds();
        let (i, j) = self.ij(idx);
        let h = self.h();
        (lo + i as f64 * h, lo + j as f64 * h)
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let (i, j) = self.ij(idx);
        i == 0 || j == 0 || i == self.cells || j == self.cells
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&k| self.is_boundary(k)).collect()
    }

    /// Interior nodes with at least one boundary node among their eight neighbours.
    pub fn boundary_adjacent_nodes(&self) -> Vec<usize> {
        let m = self.cells;
        (0..self.num_nodes())
            .filter(|&k| {
                let (i, j) = self.ij(k);
                !self.is_boundary(k) && (i == 1 || j == 1 || i == m - 1 || j == m - 1)
            })
            .collect()
    }

    /// Node indices of cell `(ci, cj)` in counter-clockwise order starting
    /// at its lower-left corner.
    pub fn cell_nodes(&self, ci: usize, cj: usize) -> [usize; 4] {
        [
            self.index(ci, cj),
            self.index(ci + 1, cj),
            self.index(ci + 1, cj + 1),
            self.index(ci, cj + 1),
        ]
    }
}
