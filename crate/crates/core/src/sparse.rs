//! Compressed sparse column storage, just enough for the KKT pipeline.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

/// A sparse matrix in compressed sparse column form.
///
/// Row indices within a column are strictly increasing. Stored entries may
/// hold explicit zeros; the pattern is structural.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    colptr: Vec<usize>,
    rowidx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds from raw parts, checking the structural invariants.
    pub fn from_parts(
        nrows: usize,
        ncols: usize,
        colptr: Vec<usize>,
        rowidx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        assert_eq!(colptr.len(), ncols + 1);
        assert_eq!(rowidx.len(), values.len());
        assert_eq!(*colptr.last().unwrap(), rowidx.len());
        for j in 0..ncols {
            let col = &rowidx[colptr[j]..colptr[j + 1]];
            assert!(col.windows(2).all(|w| w[0] < w[1]), "unsorted column {j}");
            assert!(col.iter().all(|&r| r < nrows), "row index out of range in column {j}");
        }
        Self {
            nrows,
            ncols,
            colptr,
            rowidx,
            values,
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut colptr = vec![0; ncols + 1];
        let mut rowidx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of range");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                rowidx.push(r);
                values.push(v);
                colptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for j in 0..ncols {
            colptr[j + 1] += colptr[j];
        }
        Self {
            nrows,
            ncols,
            colptr,
            rowidx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn colptr(&self) -> &[usize] {
        &self.colptr
    }

    pub fn rowidx(&self) -> &[usize] {
        &self.rowidx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row indices and values of column `j`.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let range = self.colptr[j]..self.colptr[j + 1];
        (&self.rowidx[range.clone()], &self.values[range])
    }

    /// Position of `(i, j)` in the value array, if stored.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.colptr[j];
        self.rowidx[start..self.colptr[j + 1]]
            .binary_search(&i)
            .ok()
            .map(|k| start + k)
    }

    /// Stored value at `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn same_pattern(&self, other: &CscMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.colptr == other.colptr
            && self.rowidx == other.rowidx
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for k in self.colptr[j]..self.colptr[j + 1] {
                y[self.rowidx[k]] += self.values[k] * xj;
            }
        }
        y
    }

    /// `y = A^T x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        (0..self.ncols)
            .map(|j| {
                (self.colptr[j]..self.colptr[j + 1])
                    .map(|k| self.values[k] * x[self.rowidx[k]])
                    .sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> CscMatrix {
        let mut counts = vec![0usize; self.nrows + 1];
        for &r in &self.rowidx {
            counts[r + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let colptr = counts.clone();
        let mut next = counts;
        let mut rowidx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for j in 0..self.ncols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                let dst = next[self.rowidx[k]];
                next[self.rowidx[k]] += 1;
                rowidx[dst] = j;
                values[dst] = self.values[k];
            }
        }
        CscMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            colptr,
            rowidx,
            values,
        }
    }

    /// Infinity norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        let mut sums = vec![0.0; self.nrows];
        for (r, v) in self.rowidx.iter().zip(&self.values) {
            sums[*r] += v.abs();
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                out[(self.rowidx[k], j)] += self.values[k];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CscMatrix {
        CscMatrix::from_triplets(
            3,
            4,
            &[(0, 0, 1.0), (2, 0, 2.0), (1, 1, 3.0), (0, 3, 4.0), (2, 3, 5.0), (2, 3, 1.0)],
        )
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = sample();
        assert_eq!(a.nnz(), 5);
        assert_eq!(a.get(2, 3), 6.0);
        assert_eq!(a.get(1, 0), 0.0);
        assert_eq!(a.col(2).0.len(), 0);
    }

    #[test]
    fn products_match_dense() {
        let a = sample();
        let d = a.to_dense();
        let x = [1.0, -2.0, 0.5, 3.0];
        let y = a.mul_vec(&x);
        let yd = &d * nalgebra::DVector::from_column_slice(&x);
        assert_eq!(y.as_slice(), yd.as_slice());
        let w = [1.0, 2.0, -1.0];
        let yt = a.tr_mul_vec(&w);
        let ytd = d.transpose() * nalgebra::DVector::from_column_slice(&w);
        assert_eq!(yt.as_slice(), ytd.as_slice());
        assert_eq!(a.transpose().to_dense(), d.transpose());
    }

    #[test]
    fn norms() {
        let a = sample();
        assert_eq!(a.norm_inf(), 8.0);
        assert_eq!(a.max_abs(), 6.0);
    }
}
