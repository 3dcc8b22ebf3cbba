//! Cheapest monotone alignment through a dissimilarity matrix.

use crate::matrix::Matrix;

/// Monotone sequence of index pairs from `(0, 0)` to `(n - 1, m - 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub pairs: Vec<(usize, usize)>,
}

impl AlignmentPath {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sum of the matrix cells visited by the path.
    pub fn cost(&self, m: &Matrix) -> f64 {
        self.pairs.iter().map(|&p| m[p]).sum()
    }

    /// True when the path is a legal alignment of sequences of length `n` and `m`.
    pub fn is_valid_for(&self, n: usize, m: usize) -> bool {
        let (Some(&first), Some(&last)) = (self.pairs.first(), self.pairs.last()) else {
            return false;
        };
        if n == 0 || m == 0 || first != (0, 0) || last != (n - 1, m - 1) {
            return false;
        }
        self.pairs.windows(2).all(|w| {
            let di = w[1].0.wrapping_sub(w[0].0);
            let dj = w[1].1.wrapping_sub(w[0].1);
            matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
        })
    }
}

#[derive(Clone, Copy)]
enum Step {
    Start,
    Diagonal,
    Vertical,
    Horizontal,
}

/// Dynamic-programming alignment minimizing the summed cost of every entered
/// cell, `(0, 0)` included. Moves are right, down or diagonal; ties prefer the
/// diagonal, then the vertical move.
///
/// Panics on an empty matrix.
pub fn align(m: &Matrix) -> AlignmentPath {
    let (n, k) = (m.rows(), m.cols());
    assert!(n > 0 && k > 0, "alignment needs a nonempty matrix");

    let mut acc = Matrix::zeros(n, k);
    let mut from = vec![Step::Start; n * k];
    for i in 0..n {
        for j in 0..k {
            let (best, step) = match (i, j) {
                (0, 0) => (0.0, Step::Start),
                (0, _) => (acc[(0, j - 1)], Step::Horizontal),
                (_, 0) => (acc[(i - 1, 0)], Step::Vertical),
                _ => {
                    let d = acc[(i - 1, j - 1)];
                    let v = acc[(i - 1, j)];
                    let h = acc[(i, j - 1)];
                    if d <= v && d <= h {
                        (d, Step::Diagonal)
                    } else if v <= h {
                        (v, Step::Vertical)
                    } else {
                        (h, Step::Horizontal)
                    }
                }
            };
            acc[(i, j)] = best + m[(i, j)];
            from[i * k + j] = step;
        }
    }

    let mut pairs = Vec::with_capacity(n + k);
    let (mut i, mut j) = (n - 1, k - 1);
    loop {
        pairs.push((i, j));
        match from[i * k + j] {
            Step::Start => break,
            Step::Diagonal => {
                i -= 1;
                j -= 1;
            }
            Step::Vertical => i -= 1,
            Step::Horizontal => j -= 1,
        }
    }
    pairs.reverse();
    AlignmentPath { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell() {
        let p = align(&Matrix::from_rows(&[[3.0]]));
        assert_eq!(p.pairs, vec![(0, 0)]);
    }

    #[test]
    fn constant_square_takes_diagonal() {
        let c = 0.7;
        let m = Matrix::from_rows(&[[c, c], [c, c]]);
        let p = align(&m);
        assert_eq!(p.pairs, vec![(0, 0), (1, 1)]);
        assert!((p.cost(&m) - 2.0 * c).abs() < 1e-15);
    }

    #[test]
    fn avoids_expensive_cells() {
        let m = Matrix::from_rows(&[[0.0, 0.0, 9.0], [9.0, 9.0, 0.0]]);
        let p = align(&m);
        assert_eq!(p.pairs, vec![(0, 0), (0, 1), (1, 2)]);
        assert!(p.is_valid_for(2, 3));
    }

    #[test]
    fn validity_checks() {
        let ok = AlignmentPath {
            pairs: vec![(0, 0), (1, 0), (1, 1)],
        };
        assert!(ok.is_valid_for(2, 2));
        assert!(!ok.is_valid_for(3, 2));
        let jump = AlignmentPath {
            pairs: vec![(0, 0), (2, 1)],
        };
        assert!(!jump.is_valid_for(3, 2));
        assert!(!AlignmentPath { pairs: vec![] }.is_valid_for(1, 1));
    }
}
