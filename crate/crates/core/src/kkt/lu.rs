//! Left-looking sparse LU with threshold partial pivoting.
//!
//! Column `k` of the factorization is computed by a sparse triangular solve
//! against the columns already factored, restricted to the nonzero pattern
//! found by a depth-first search through `L` (Gilbert-Peierls). Pivots prefer
//! the diagonal of the column preordering when it is within `pivot_tol` of the
//! largest candidate, which keeps fill close to what the ordering predicts.

use alloc::vec;
use alloc::vec::Vec;

use crate::sparse::CscMatrix;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub(crate) struct SparseLu {
    n: usize,
    l_colptr: Vec<usize>,
    l_rowidx: Vec<usize>,
    l_values: Vec<f64>,
    u_colptr: Vec<usize>,
    u_rowidx: Vec<usize>,
    u_values: Vec<f64>,
    /// Original row -> pivot position.
    pinv: Vec<usize>,
    /// Pivot position -> original column.
    q: Vec<usize>,
}

/// Pivot column that had no acceptable pivot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SingularColumn(pub usize);

impl SparseLu {
    /// Factors `P A Q = L U` with `Q` given by `q` (`q[k]` is the k-th column
    /// eliminated). A column whose largest candidate pivot is at most
    /// `singular_floor` in magnitude makes the factorization fail.
    pub(crate) fn factor(
        a: &CscMatrix,
        q: &[usize],
        pivot_tol: f64,
        singular_floor: f64,
    ) -> Result<Self, SingularColumn> {
        let n = a.ncols();
        assert_eq!(a.nrows(), n, "LU needs a square matrix");
        assert_eq!(q.len(), n);
        let guess = 4 * a.nnz() + n;
        let mut l_colptr = Vec::with_capacity(n + 1);
        let mut l_rowidx = Vec::with_capacity(guess);
        let mut l_values = Vec::with_capacity(guess);
        let mut u_colptr = Vec::with_capacity(n + 1);
        let mut u_rowidx = Vec::with_capacity(guess);
        let mut u_values = Vec::with_capacity(guess);
        let mut pinv = vec![NONE; n];

        let mut x = vec![0.0; n];
        let mut xi = vec![0usize; n];
        let mut mark = vec![0u32; n];
        let mut child = vec![0usize; n];
        let mut stack: Vec<usize> = Vec::new();

        for k in 0..n {
            l_colptr.push(l_rowidx.len());
            u_colptr.push(u_rowidx.len());
            let stamp = k as u32 + 1;
            let col = q[k];
            let (rows, vals) = a.col(col);

            // Nonzero pattern of L \ A(:, col), in topological order xi[top..].
            let mut top = n;
            for &r in rows {
                if mark[r] == stamp {
                    continue;
                }
                stack.push(r);
                while let Some(&j) = stack.last() {
                    let jcol = pinv[j];
                    if mark[j] != stamp {
                        mark[j] = stamp;
                        child[j] = if jcol == NONE { 0 } else { l_colptr[jcol] + 1 };
                    }
                    let end = if jcol == NONE { 0 } else { l_colptr[jcol + 1] };
                    let mut descended = false;
                    while child[j] < end {
                        let i = l_rowidx[child[j]];
                        child[j] += 1;
                        if mark[i] != stamp {
                            stack.push(i);
                            descended = true;
                            break;
                        }
                    }
                    if !descended {
                        stack.pop();
                        top -= 1;
                        xi[top] = j;
                    }
                }
            }

            for (&r, &v) in rows.iter().zip(vals) {
                x[r] = v;
            }
            for &j in &xi[top..] {
                let jcol = pinv[j];
                if jcol == NONE {
                    continue;
                }
                let xj = x[j];
                if xj == 0.0 {
                    continue;
                }
                for p in l_colptr[jcol] + 1..l_colptr[jcol + 1] {
                    x[l_rowidx[p]] -= l_values[p] * xj;
                }
            }

            let mut ipiv = NONE;
            let mut best = -1.0;
            for &i in &xi[top..] {
                if pinv[i] == NONE {
                    let mag = x[i].abs();
                    if mag > best {
                        best = mag;
                        ipiv = i;
                    }
                } else {
                    u_rowidx.push(pinv[i]);
                    u_values.push(x[i]);
                }
            }
            if ipiv == NONE || best <= singular_floor || !best.is_finite() {
                return Err(SingularColumn(k));
            }
            if pinv[col] == NONE && mark[col] == stamp && x[col].abs() >= pivot_tol * best {
                ipiv = col;
            }
            let pivot = x[ipiv];
            u_rowidx.push(k);
            u_values.push(pivot);
            pinv[ipiv] = k;
            l_rowidx.push(ipiv);
            l_values.push(1.0);
            for &i in &xi[top..] {
                if pinv[i] == NONE {
                    l_rowidx.push(i);
                    l_values.push(x[i] / pivot);
                }
                x[i] = 0.0;
            }
        }
        l_colptr.push(l_rowidx.len());
        u_colptr.push(u_rowidx.len());
        for r in &mut l_rowidx {
            *r = pinv[*r];
        }

        Ok(Self {
            n,
            l_colptr,
            l_rowidx,
            l_values,
            u_colptr,
            u_rowidx,
            u_values,
            pinv,
            q: q.to_vec(),
        })
    }

    /// Solves `A u = b`.
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x = vec![0.0; n];
        for (i, &bi) in b.iter().enumerate() {
            x[self.pinv[i]] = bi;
        }
        for k in 0..n {
            let xk = x[k];
            if xk == 0.0 {
                continue;
            }
            for p in self.l_colptr[k] + 1..self.l_colptr[k + 1] {
                x[self.l_rowidx[p]] -= self.l_values[p] * xk;
            }
        }
        for k in (0..n).rev() {
            let last = self.u_colptr[k + 1] - 1;
            x[k] /= self.u_values[last];
            let xk = x[k];
            if xk == 0.0 {
                continue;
            }
            for p in self.u_colptr[k]..last {
                x[self.u_rowidx[p]] -= self.u_values[p] * xk;
            }
        }
        let mut out = vec![0.0; n];
        for k in 0..n {
            out[self.q[k]] = x[k];
        }
        out
    }

    /// Stored entries of `L` and `U` combined.
    pub(crate) fn factor_nnz(&self) -> usize {
        self.l_values.len() + self.u_values.len()
    }
}
