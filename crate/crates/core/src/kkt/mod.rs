//! The KKT system of the smoothing problem and its sparse factorization.
//!
//! Unknowns are ordered `(z, v, eta)` and the matrix is
//!
//! ```text
//!     [ 0   D^T  B^T ]
//! M = [ D   -I   0   ]
//!     [ B   0    0   ]
//! ```
//!
//! Diagonal entries are always stored, even when zero, so that a diagonal
//! regularization never changes the pattern. Factorization uses a
//! time-interleaved elimination order: for each step `t`, the output residual
//! rows, the outputs `y_t`, their constraint multipliers, the dynamics residual
//! rows linking `t` to `t+1`, and finally the states `x_t`. With this order
//! the factors stay inside a band whose width depends only on `n`, `p`, and
//! the number of constraints per step, so cost grows linearly in `T`.

mod lu;

use alloc::vec;
use alloc::vec::Vec;

use crate::assemble::SparseProblem;
use crate::error::{Error, Result};
use crate::sparse::CscMatrix;

use lu::SparseLu;

/// Relative pivot threshold favouring the diagonal of the elimination order.
const PIVOT_TOL: f64 = 1e-3;
/// Pivots below this fraction of the largest entry of `M` count as singular.
const SINGULAR_TOL: f64 = 1e-13;
/// First regularization tried, relative to `||M||_inf`.
const REG_START: f64 = 1e-10;
/// Largest regularization tried, relative to `||M||_inf`.
const REG_MAX: f64 = 1e-6;
/// Refinement stops once a correction is below this fraction of `||u||_inf`.
const REFINE_STEP_TOL: f64 = 1e-15;
const MAX_REFINE: usize = 3;

/// Sizes of the three unknown blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KktLayout {
    pub n_z: usize,
    pub n_v: usize,
    pub n_eta: usize,
}

impl KktLayout {
    pub fn order(&self) -> usize {
        self.n_z + self.n_v + self.n_eta
    }

    pub fn v_offset(&self) -> usize {
        self.n_z
    }

    pub fn eta_offset(&self) -> usize {
        self.n_z + self.n_v
    }
}

/// The assembled KKT matrix together with its elimination order.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSystem {
    pub M: CscMatrix,
    pub layout: KktLayout,
    diag: Vec<usize>,
    ordering: Vec<usize>,
}

impl KktSystem {
    pub fn order(&self) -> usize {
        self.layout.order()
    }

    /// Elimination order used by the factorization.
    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    /// Copy with `+reg` added on the `z` diagonal and `-reg` on the `v` and
    /// `eta` diagonals, giving a quasi-definite shift.
    fn regularized(&self, reg: f64) -> CscMatrix {
        let mut m = self.M.clone();
        let values = m.values_mut();
        for (k, &pos) in self.diag.iter().enumerate() {
            values[pos] += if k < self.layout.n_z { reg } else { -reg };
        }
        m
    }

    /// Splits a KKT vector into its `(z, v, eta)` blocks.
    pub fn split<'a>(&self, u: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let l = self.layout;
        (&u[..l.n_z], &u[l.n_z..l.eta_offset()], &u[l.eta_offset()..])
    }
}

/// Forms `M` from an assembled problem.
pub fn build_kkt(prob: &SparseProblem) -> KktSystem {
    let bm = prob.blocks;
    let layout = KktLayout {
        n_z: bm.n_z(),
        n_v: bm.n_rows(),
        n_eta: prob.n_constraints(),
    };
    let order = layout.order();
    let d = &prob.D;
    let dt = d.transpose();

    let mut eta_of_col: Vec<Vec<usize>> = vec![Vec::new(); layout.n_z];
    for (q, &col) in prob.b_cols.iter().enumerate() {
        eta_of_col[col].push(q);
    }

    let nnz = 2 * d.nnz() + 2 * layout.n_eta + order;
    let mut colptr = Vec::with_capacity(order + 1);
    let mut rowidx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    let mut diag = Vec::with_capacity(order);
    colptr.push(0);

    for j in 0..layout.n_z {
        diag.push(rowidx.len());
        rowidx.push(j);
        values.push(0.0);
        let (rows, vals) = d.col(j);
        for (&r, &v) in rows.iter().zip(vals) {
            rowidx.push(layout.v_offset() + r);
            values.push(v);
        }
        for &q in &eta_of_col[j] {
            rowidx.push(layout.eta_offset() + q);
            values.push(1.0);
        }
        colptr.push(rowidx.len());
    }
    for r in 0..layout.n_v {
        let (cols, vals) = dt.col(r);
        rowidx.extend_from_slice(cols);
        values.extend_from_slice(vals);
        diag.push(rowidx.len());
        rowidx.push(layout.v_offset() + r);
        values.push(-1.0);
        colptr.push(rowidx.len());
    }
    for (q, &col) in prob.b_cols.iter().enumerate() {
        rowidx.push(col);
        values.push(1.0);
        diag.push(rowidx.len());
        rowidx.push(layout.eta_offset() + q);
        values.push(0.0);
        colptr.push(rowidx.len());
    }
    let M = CscMatrix::from_parts(order, order, colptr, rowidx, values);

    KktSystem {
        M,
        layout,
        diag,
        ordering: interleaved_ordering(prob, layout),
    }
}

/// Groups unknowns by time step; see the module docs.
fn interleaved_ordering(prob: &SparseProblem, layout: KktLayout) -> Vec<usize> {
    let bm = prob.blocks;
    let mut keys: Vec<(usize, u8, usize)> = Vec::with_capacity(layout.order());
    for t in 0..bm.T {
        keys.extend(bm.state_col(t).map(|j| (t, 4, j)));
        keys.extend(bm.output_col(t).map(|j| (t, 1, j)));
        keys.extend(bm.out_row(t).map(|r| (t, 0, layout.v_offset() + r)));
        if t + 1 < bm.T {
            keys.extend(bm.dyn_row(t).map(|r| (t, 3, layout.v_offset() + r)));
        }
    }
    let per_step = bm.n + bm.p;
    for (q, &col) in prob.b_cols.iter().enumerate() {
        let t = (col - bm.T * bm.n) / bm.p;
        debug_assert!(col >= bm.T * bm.n && t < bm.T && per_step > 0);
        keys.push((t, 2, layout.eta_offset() + q));
    }
    keys.sort_unstable();
    keys.into_iter().map(|(_, _, idx)| idx).collect()
}

/// Numeric factors of a (possibly regularized) KKT matrix.
#[derive(Debug, Clone)]
pub struct KktFactorization {
    /// The unregularized `M`; residuals and refinement are measured against it.
    matrix: CscMatrix,
    ordering: Vec<usize>,
    layout: KktLayout,
    lu: SparseLu,
    reg: f64,
}

impl KktFactorization {
    /// Diagonal regularization applied; zero when `M` was factored as is.
    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn order(&self) -> usize {
        self.layout.order()
    }

    pub fn layout(&self) -> KktLayout {
        self.layout
    }

    /// Number of stored entries in the `L` and `U` factors.
    pub fn factor_nnz(&self) -> usize {
        self.lu.factor_nnz()
    }

    /// The matrix `M` this factorization solves with.
    pub fn matrix(&self) -> &CscMatrix {
        &self.matrix
    }

    /// Solves `M u = b` with the cached factors.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_with_residual(b).map(|(u, _)| u)
    }

    /// Like [`solve`](Self::solve), also returning `||M u - b||_inf`.
    pub fn solve_with_residual(&self, b: &[f64]) -> Result<(Vec<f64>, f64)> {
        if b.len() != self.order() {
            return Err(Error::LengthMismatch {
                expected: self.order(),
                found: b.len(),
            });
        }
        let mut u = self.lu.solve(b);
        let mut resid = residual(&self.matrix, &u, b);
        let mut norm = inf_norm(&resid);
        for _ in 0..MAX_REFINE {
            let du = self.lu.solve(&resid);
            let step = inf_norm(&du);
            let candidate: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + b).collect();
            let r = residual(&self.matrix, &candidate, b);
            let n = inf_norm(&r);
            if n > 2.0 * norm {
                break;
            }
            u = candidate;
            resid = r;
            norm = n;
            if step <= REFINE_STEP_TOL * inf_norm(&u) {
                break;
            }
        }
        Ok((u, norm))
    }
}

/// `b - M u` accumulated in double-double arithmetic, so refinement can
/// recover forward accuracy on ill-conditioned systems.
fn residual(m: &CscMatrix, u: &[f64], b: &[f64]) -> Vec<f64> {
    let mut hi = b.to_vec();
    let mut lo = vec![0.0; b.len()];
    for (j, &uj) in u.iter().enumerate() {
        if uj == 0.0 {
            continue;
        }
        let (rows, vals) = m.col(j);
        for (&i, &mij) in rows.iter().zip(vals) {
            let (p, pe) = two_prod(-mij, uj);
            let (s, se) = two_sum(hi[i], p);
            hi[i] = s;
            lo[i] += pe + se;
        }
    }
    hi.iter().zip(&lo).map(|(h, l)| h + l).collect()
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn split(a: f64) -> (f64, f64) {
    let c = 134_217_729.0 * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn factor_with_retries(sys: &KktSystem, ordering: &[usize]) -> Result<KktFactorization> {
    let norm = sys.M.norm_inf();
    let mut reg = 0.0;
    loop {
        let shifted = if reg == 0.0 { sys.M.clone() } else { sys.regularized(reg) };
        let floor = SINGULAR_TOL * shifted.max_abs();
        match SparseLu::factor(&shifted, ordering, PIVOT_TOL, floor) {
            Ok(lu) => {
                return Ok(KktFactorization {
                    matrix: sys.M.clone(),
                    ordering: ordering.to_vec(),
                    layout: sys.layout,
                    lu,
                    reg,
                })
            }
            Err(_) => {
                reg = if reg == 0.0 { REG_START * norm } else { 2.0 * reg };
                if reg > REG_MAX * norm || reg == 0.0 {
                    return Err(Error::SingularAfterRegularization { reg });
                }
            }
        }
    }
}

/// Factors `M`, regularizing the diagonal if it is numerically singular.
///
/// Regularization starts at `1e-10 ||M||_inf` and doubles up to
/// `1e-6 ||M||_inf`. Solves always refine against the unshifted `M`, so the
/// shifted factors only act as a preconditioner for consistent systems.
pub fn factorize(sys: &KktSystem) -> Result<KktFactorization> {
    factor_with_retries(sys, &sys.ordering)
}

/// Refactors after a change of numeric values, reusing the elimination
/// order of `fact`. Fails if the pattern of `sys` differs.
pub fn refactor_values(fact: &KktFactorization, sys: &KktSystem) -> Result<KktFactorization> {
    if !fact.matrix.same_pattern(&sys.M) || fact.layout != sys.layout {
        return Err(Error::PatternMismatch);
    }
    factor_with_retries(sys, &fact.ordering)
}
