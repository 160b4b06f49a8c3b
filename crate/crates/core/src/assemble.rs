//! Sparse assembly of the smoothing problem `minimize ||Dz||^2 s.t. Bz = c`.
//!
//! The unknown `z` stacks all state estimates followed by all output
//! estimates. `D` has one block row per dynamics residual
//! `W^{-1/2}(x_{t+1} - A x_t)` followed by one block row per output residual
//! `V^{-1/2}(y_t - C x_t)`. Parameter blocks are stored densely, so the
//! sparsity pattern depends only on `(T, n, p)`.

use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::DMatrix;

use crate::entries::EntrySet;
use crate::error::{Error, Result};
use crate::model::{validate_dims, MeasurementSet, ParameterSet};
use crate::sparse::CscMatrix;

/// Block coordinates of `D` and `z`. All time indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMap {
    pub T: usize,
    pub n: usize,
    pub p: usize,
}

impl BlockMap {
    pub fn new(T: usize, n: usize, p: usize) -> Self {
        Self { T, n, p }
    }

    /// Length of `z`, `T(n+p)`.
    pub fn n_z(&self) -> usize {
        self.T * (self.n + self.p)
    }

    /// Number of rows of `D`, `T(n+p) - n`.
    pub fn n_rows(&self) -> usize {
        self.n_z() - self.n
    }

    /// Rows of the dynamics residual linking steps `t` and `t+1`, `t < T-1`.
    pub fn dyn_row(&self, t: usize) -> Range<usize> {
        debug_assert!(t + 1 < self.T);
        t * self.n..(t + 1) * self.n
    }

    /// Rows of the output residual at step `t`.
    pub fn out_row(&self, t: usize) -> Range<usize> {
        let base = (self.T - 1) * self.n + t * self.p;
        base..base + self.p
    }

    /// Columns of `x_t` within `z`.
    pub fn state_col(&self, t: usize) -> Range<usize> {
        t * self.n..(t + 1) * self.n
    }

    /// Columns of `y_t` within `z`.
    pub fn output_col(&self, t: usize) -> Range<usize> {
        let base = self.T * self.n + t * self.p;
        base..base + self.p
    }

    /// Position of `(y_t)_i` within `z`.
    pub fn output_index(&self, t: usize, i: usize) -> usize {
        self.T * self.n + t * self.p + i
    }
}

/// Assembled `D`, `B` and `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseProblem {
    pub D: CscMatrix,
    /// Row `j` of the selector `B` is the unit vector `e_{b_cols[j]}`.
    pub b_cols: Vec<usize>,
    pub c: Vec<f64>,
    pub blocks: BlockMap,
}

impl SparseProblem {
    pub fn n_constraints(&self) -> usize {
        self.b_cols.len()
    }

    /// The selector `B` as an explicit sparse matrix.
    pub fn B(&self) -> CscMatrix {
        let triplets: Vec<_> = self
            .b_cols
            .iter()
            .enumerate()
            .map(|(row, &col)| (row, col, 1.0))
            .collect();
        CscMatrix::from_triplets(self.b_cols.len(), self.blocks.n_z(), &triplets)
    }

    /// `Bz`, the constrained entries of `z` in constraint order.
    pub fn select(&self, z: &[f64]) -> Vec<f64> {
        self.b_cols.iter().map(|&j| z[j]).collect()
    }

    /// Rewrites the numeric values of `D` for new parameters with the same
    /// dimensions. The pattern is untouched.
    pub fn update_params(&mut self, params: &ParameterSet) -> Result<()> {
        params.check()?;
        if params.n() != self.blocks.n || params.p() != self.blocks.p {
            return Err(Error::DimensionMismatch {
                field: "params",
                expected: alloc::format!("n={}, p={}", self.blocks.n, self.blocks.p),
                found: alloc::format!("n={}, p={}", params.n(), params.p()),
            });
        }
        let blocks = DBlocks::new(params);
        let mut k = 0;
        let values = self.D.values_mut();
        visit_d_pattern(self.blocks, &blocks, |_, _, v| {
            values[k] = v;
            k += 1;
        });
        Ok(())
    }
}

/// Products that make up the nonzero blocks of `D`.
struct DBlocks {
    neg_wa: DMatrix<f64>,
    w: DMatrix<f64>,
    neg_vc: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl DBlocks {
    fn new(params: &ParameterSet) -> Self {
        Self {
            neg_wa: -(&params.Wisqrt * &params.A),
            w: params.Wisqrt.clone(),
            neg_vc: -(&params.Visqrt * &params.C),
            v: params.Visqrt.clone(),
        }
    }
}

/// Visits every stored entry of `D` in column-major order, rows ascending.
fn visit_d_pattern(bm: BlockMap, b: &DBlocks, mut f: impl FnMut(usize, usize, f64)) {
    let BlockMap { T, n, p } = bm;
    for t in 0..T {
        for k in 0..n {
            let col = t * n + k;
            if t > 0 {
                let rows = bm.dyn_row(t - 1);
                for r in 0..n {
                    f(rows.start + r, col, b.w[(r, k)]);
                }
            }
            if t + 1 < T {
                let rows = bm.dyn_row(t);
                for r in 0..n {
                    f(rows.start + r, col, b.neg_wa[(r, k)]);
                }
            }
            let rows = bm.out_row(t);
            for r in 0..p {
                f(rows.start + r, col, b.neg_vc[(r, k)]);
            }
        }
    }
    for t in 0..T {
        let rows = bm.out_row(t);
        for k in 0..p {
            let col = bm.output_index(t, k);
            for r in 0..p {
                f(rows.start + r, col, b.v[(r, k)]);
            }
        }
    }
}

/// Number of stored entries of `D`: dense `n x n` blocks on both sides of each
/// dynamics row, dense `p x n` and `p x p` blocks on each output row.
pub fn exact_entry_count(T: usize, n: usize, p: usize) -> usize {
    T.saturating_sub(1) * 2 * n * n + T * (p * n + p * p)
}

/// Assembles `D`, `B`, `c` for the given parameters, measurements and the
/// set of output entries held fixed at their measured value.
pub fn assemble(
    params: &ParameterSet,
    meas: &MeasurementSet,
    constrained: &EntrySet,
) -> Result<SparseProblem> {
    validate_dims(params, meas)?;
    meas.check_bounds(constrained)?;
    let blocks = BlockMap::new(meas.len_t(), params.n(), params.p());

    let mut b_cols = Vec::with_capacity(constrained.len());
    let mut c = Vec::with_capacity(constrained.len());
    for e in constrained {
        let y = meas
            .value(*e)
            .ok_or(Error::ConstrainedNotKnown { t: e.t, i: e.i })?;
        b_cols.push(blocks.output_index(e.t, e.i));
        c.push(y);
    }

    let nnz = exact_entry_count(blocks.T, blocks.n, blocks.p);
    let n_z = blocks.n_z();
    let mut colptr = Vec::with_capacity(n_z + 1);
    let mut rowidx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    colptr.push(0);
    let mut current = 0;
    visit_d_pattern(blocks, &DBlocks::new(params), |r, col, v| {
        while current < col {
            colptr.push(rowidx.len());
            current += 1;
        }
        rowidx.push(r);
        values.push(v);
    });
    while colptr.len() < n_z + 1 {
        colptr.push(rowidx.len());
    }
    let D = CscMatrix::from_parts(blocks.n_rows(), n_z, colptr, rowidx, values);
    debug_assert_eq!(D.nnz(), nnz);

    Ok(SparseProblem { D, b_cols, c, blocks })
}
