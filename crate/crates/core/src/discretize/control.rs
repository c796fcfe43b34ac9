use super::assemble::DiscretizedPde;
use super::grid::Grid;
use crate::linalg::SparseMatrix;
use crate::{Error, Result};

/// The `count` nodes closest to the corner `(hi, hi)`, ties broken by index.
pub fn corner_mask(grid: &Grid, count: usize) -> Result<Vec<usize>> {
    let n = grid.num_nodes();
    if count > n {
        return Err(Error::InvalidInput(format!(
            "cannot unobserve {count} of {n} nodes"
        )));
    }
    let (_, hi) = grid.domain.bounds();
    let mut order: Vec<(f64, usize)> = (0..n)
        .map(|k| {
            let (x, y) = grid.coords(k);
            ((hi - x).powi(2) + (hi - y).powi(2), k)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut nodes: Vec<usize> = order[..count].iter().map(|&(_, k)| k).collect();
    nodes.sort_unstable();
    Ok(nodes)
}

/// Zeroes the diagonal of `M₁` at the unobserved nodes.
pub fn apply_observation_mask(pde: &DiscretizedPde, unobserved: &[usize]) -> Result<DiscretizedPde> {
    let n = pde.num_nodes();
    let mut d = pde.m.diagonal();
    for &k in unobserved {
        if k >= n {
            return Err(Error::InvalidInput(format!(
                "unobserved node {k} out of range for {n} nodes"
            )));
        }
        d[k] = 0.0;
    }
    let mut out = pde.clone();
    out.m1 = SparseMatrix::from_diagonal(&d);
    Ok(out)
}

/// Restricts the control to the given nodes: `N` holds the columns of `M`
/// at those nodes and `M_b` the matching diagonal block.
pub fn restrict_control(pde: &DiscretizedPde, nodes: &[usize]) -> Result<DiscretizedPde> {
    let n = pde.num_nodes();
    if nodes.is_empty() {
        return Err(Error::InvalidInput("control node set is empty".into()));
    }
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != nodes.len() || *sorted.last().unwrap() >= n {
        return Err(Error::InvalidInput(
            "control nodes must be distinct and in range".into(),
        ));
    }
    let diag = pde.m.diagonal();
    let trip: Vec<_> = nodes
        .iter()
        .enumerate()
        .map(|(c, &k)| (k, c, diag[k]))
        .collect();
    let mut out = pde.clone();
    out.n = SparseMatrix::from_triplets(n, nodes.len(), &trip)?;
    out.mb = SparseMatrix::from_diagonal(&nodes.iter().map(|&k| diag[k]).collect::<Vec<_>>());
    Ok(out)
}

/// Control acting on the ring of interior nodes next to the boundary.
pub fn restrict_control_to_boundary(pde: &DiscretizedPde) -> Result<DiscretizedPde> {
    restrict_control(pde, &pde.grid.boundary_adjacent_nodes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{assemble_heat, Domain};

    fn heat(k: u32) -> DiscretizedPde {
        assemble_heat(&Grid::new(k, Domain::UnitSquare).unwrap()).unwrap()
    }

    #[test]
    fn mask_extremes() {
        let pde = heat(2);
        assert_eq!(apply_observation_mask(&pde, &[]).unwrap().m1, pde.m);
        let all: Vec<usize> = (0..pde.num_nodes()).collect();
        let z = apply_observation_mask(&pde, &all).unwrap();
        assert!(z.m1.values().iter().all(|&v| v == 0.0));
        assert!(apply_observation_mask(&pde, &[25]).is_err());
    }

    #[test]
    fn mask_rank_at_level_five() {
        let pde = heat(5);
        let nodes = corner_mask(&pde.grid, 100).unwrap();
        assert_eq!(nodes.len(), 100);
        let masked = apply_observation_mask(&pde, &nodes).unwrap();
        let rank = masked.m1.diagonal().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(rank, 989);
        let (d1, d) = (masked.m1.diagonal(), pde.m.diagonal());
        for i in 0..d.len() {
            assert!(d1[i] == d[i] || (d1[i] == 0.0 && nodes.binary_search(&i).is_ok()));
        }
        // the corner itself is always unobserved
        assert!(nodes.contains(&(pde.num_nodes() - 1)));
    }

    #[test]
    fn boundary_nodes_as_controls() {
        let pde = heat(1);
        let b = restrict_control(&pde, &pde.grid.boundary_nodes()).unwrap();
        assert_eq!((b.n.nrows(), b.n.ncols()), (9, 8));
        let ones = vec![1.0; 9];
        let colsum = b.n.tr_mul_vec(&ones);
        assert_eq!(colsum, b.mb.diagonal());
    }

    #[test]
    fn ring_control() {
        let pde = heat(5);
        let b = restrict_control_to_boundary(&pde).unwrap();
        assert_eq!(b.num_controls(), 120);
        assert!(b.mb.diagonal().iter().all(|&d| d > 0.0));
        let colsum = b.n.tr_mul_vec(&vec![1.0; pde.num_nodes()]);
        assert_eq!(colsum, b.mb.diagonal());
    }

    #[test]
    fn identity_selection_is_distributed() {
        let pde = heat(2);
        let all: Vec<usize> = (0..pde.num_nodes()).collect();
        let b = restrict_control(&pde, &all).unwrap();
        assert_eq!(b.n, pde.m);
        assert_eq!(b.mb, pde.m);
        assert!(restrict_control(&pde, &[]).is_err());
        assert!(restrict_control(&pde, &[1, 1]).is_err());
    }
}
