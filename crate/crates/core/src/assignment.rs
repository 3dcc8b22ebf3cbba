//! Minimum-cost rectangular assignment (Hungarian method with potentials).

use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("cost cell ({row}, {col}) is not finite: {value}")]
    NonFiniteCost { row: usize, col: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Exact minimum-cost assignment of `min(rows, cols)` pairs.
///
/// Shortest augmenting paths over reduced costs, one row at a time, which is
/// O(n²·m) for `n ≤ m`. Wide and tall matrices are both accepted: a tall
/// matrix is solved on its transpose. Deterministic for a given input; among
/// equally cheap augmentations the lowest column index wins.
pub fn hungarian(cost: &Matrix) -> Result<Assignment, AssignmentError> {
    for r in 0..cost.rows() {
        for (c, &value) in cost.row(r).iter().enumerate() {
            if !value.is_finite() {
                return Err(AssignmentError::NonFiniteCost { row: r, col: c, value });
            }
        }
    }
    if cost.rows() == 0 || cost.cols() == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        });
    }

    let transposed = cost.rows() > cost.cols();
    let work = if transposed { cost.transpose() } else { cost.clone() };
    let mut pairs: Vec<(usize, usize)> = solve_wide(&work)
        .into_iter()
        .map(|(r, c)| if transposed { (c, r) } else { (r, c) })
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&p| cost[p]).sum();
    Ok(Assignment { pairs, total_cost })
}

/// Solves `n ≤ m`. Index 0 of the potential and matching arrays is a sentinel.
fn solve_wide(a: &Matrix) -> Vec<(usize, usize)> {
    let (n, m) = (a.rows(), a.cols());
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // row_of[j]: row (1-based) matched to column j, 0 when free.
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    (1..=m)
        .filter(|&j| row_of[j] != 0)
        .map(|j| (row_of[j] - 1, j - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_diagonal() {
        let m = Matrix::from_fn(3, 3, |r, c| if r == c { 0.0 } else { 1.0 });
        let a = hungarian(&m).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn outer_product_matrix() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [3.0, 6.0, 9.0]]);
        let a = hungarian(&m).unwrap();
        assert_eq!(a.total_cost, 10.0);
        assert_eq!(a.pairs, vec![(0, 2), (1, 1), (2, 0)]);
    }

    #[test]
    fn rectangular_both_ways() {
        let wide = Matrix::from_rows(&[[5.0, 1.0, 7.0, 3.0], [2.0, 8.0, 1.0, 9.0]]);
        let a = hungarian(&wide).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 2)]);
        assert_eq!(a.total_cost, 2.0);

        let tall = wide.transpose();
        let b = hungarian(&tall).unwrap();
        assert_eq!(b.pairs, vec![(1, 0), (2, 1)]);
        assert_eq!(b.total_cost, 2.0);
    }

    #[test]
    fn row_vector_picks_minimum() {
        let m = Matrix::from_rows(&[[0.4, 0.1, 0.3]]);
        let a = hungarian(&m).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
    }

    #[test]
    fn rejects_non_finite() {
        let m = Matrix::from_rows(&[[0.0, f64::NAN]]);
        assert!(matches!(
            hungarian(&m),
            Err(AssignmentError::NonFiniteCost { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn empty_matrix() {
        let a = hungarian(&Matrix::zeros(0, 3)).unwrap();
        assert!(a.pairs.is_empty());
    }
}
