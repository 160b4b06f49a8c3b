//! Gradient of the prediction error with respect to the smoother parameters.
//!
//! With `M u = (0, 0, c)` and `L` depending on `u` only through the masked
//! outputs, one solve `M q = -g` with the cached factors gives
//! `dL/dD = (Dz) q1^T + (D q1) z^T`, evaluated only on the stored pattern of
//! `D`. The parameter gradients follow from the block structure of `D` by
//! the chain rule.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::assemble::{BlockMap, SparseProblem};
use crate::entries::EntrySet;
use crate::error::{Error, Result};
use crate::kkt::{KktFactorization, KktLayout};
use crate::model::{MeasurementSet, ParameterSet, SmootherSolution};
use crate::smoother::{prediction_error, ForwardPass};
use crate::sparse::CscMatrix;

/// Gradient with the same shapes as [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradient {
    pub dA: DMatrix<f64>,
    pub dWisqrt: DMatrix<f64>,
    pub dC: DMatrix<f64>,
    pub dVisqrt: DMatrix<f64>,
}

impl ParameterGradient {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            dA: DMatrix::zeros(n, n),
            dWisqrt: DMatrix::zeros(n, n),
            dC: DMatrix::zeros(p, n),
            dVisqrt: DMatrix::zeros(p, p),
        }
    }

    /// Flattened in the same layout as [`ParameterSet::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.dA, &self.dWisqrt, &self.dC, &self.dVisqrt]
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    /// Gradient viewed as a parameter tuple.
    pub fn as_params(&self) -> ParameterSet {
        ParameterSet {
            A: self.dA.clone(),
            Wisqrt: self.dWisqrt.clone(),
            C: self.dC.clone(),
            Visqrt: self.dVisqrt.clone(),
        }
    }
}

/// Derivative of `L` with respect to the KKT unknowns `(z, v, eta)`: twice
/// the masked residuals at the masked output positions, zero elsewhere.
pub fn seed_gradient(
    sol: &SmootherSolution,
    meas: &MeasurementSet,
    masked: &EntrySet,
    blocks: BlockMap,
    layout: KktLayout,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; layout.order()];
    for e in masked {
        let y = meas
            .value(*e)
            .ok_or(Error::MaskedEntryMissing { t: e.t, i: e.i })?;
        g[blocks.output_index(e.t, e.i)] = 2.0 * (sol.yhat[(e.t, e.i)] - y);
    }
    Ok(g)
}

/// Solves `M (q1, q2, q3) = -g` with the forward factors.
pub fn adjoint_solve(
    fact: &KktFactorization,
    g: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    let q = fact.solve(&neg)?;
    let l = fact.layout();
    Ok((
        q[..l.n_z].to_vec(),
        q[l.n_z..l.eta_offset()].to_vec(),
        q[l.eta_offset()..].to_vec(),
    ))
}

/// `G_ij = (D q1)_i z_j + (D z)_i (q1)_j` on the stored pattern of `D`.
pub fn grad_wrt_D(prob: &SparseProblem, z: &[f64], q1: &[f64]) -> CscMatrix {
    let dq = prob.D.mul_vec(q1);
    let dz = prob.D.mul_vec(z);
    let mut g = prob.D.clone();
    let colptr = prob.D.colptr().to_vec();
    let rows = prob.D.rowidx().to_vec();
    let values = g.values_mut();
    for j in 0..colptr.len() - 1 {
        for k in colptr[j]..colptr[j + 1] {
            let i = rows[k];
            values[k] = dq[i] * z[j] + dz[i] * q1[j];
        }
    }
    g
}

/// Chain rule from `dL/dD` to the four parameter blocks.
pub fn grad_wrt_params(G: &CscMatrix, blocks: BlockMap, params: &ParameterSet) -> ParameterGradient {
    let BlockMap { T, n, p } = blocks;
    // Block sums: dynamics rows against x_t and x_{t+1}, output rows against
    // x_t and y_t.
    let mut s_dyn_t = DMatrix::<f64>::zeros(n, n);
    let mut s_dyn_next = DMatrix::<f64>::zeros(n, n);
    let mut s_out_state = DMatrix::<f64>::zeros(p, n);
    let mut s_out_output = DMatrix::<f64>::zeros(p, p);
    let n_dyn = (T - 1) * n;
    for j in 0..G.ncols() {
        let (rows, vals) = G.col(j);
        if j < T * n {
            let (t, k) = (j / n, j % n);
            for (&r, &v) in rows.iter().zip(vals) {
                if r < n_dyn {
                    if r / n == t {
                        s_dyn_t[(r % n, k)] += v;
                    } else {
                        s_dyn_next[(r % n, k)] += v;
                    }
                } else {
                    s_out_state[((r - n_dyn) % p, k)] += v;
                }
            }
        } else {
            let k = (j - T * n) % p;
            for (&r, &v) in rows.iter().zip(vals) {
                s_out_output[((r - n_dyn) % p, k)] += v;
            }
        }
    }
    ParameterGradient {
        dA: -(params.Wisqrt.transpose() * &s_dyn_t),
        dWisqrt: &s_dyn_next - &s_dyn_t * params.A.transpose(),
        dC: -(params.Visqrt.transpose() * &s_out_state),
        dVisqrt: &s_out_output - &s_out_state * params.C.transpose(),
    }
}

/// Prediction error on `masked` and its gradient, reusing the forward pass.
pub fn gradient(
    params: &ParameterSet,
    meas: &MeasurementSet,
    masked: &EntrySet,
    fwd: &ForwardPass,
) -> Result<(f64, ParameterGradient)> {
    let loss = prediction_error(&fwd.solution, meas, masked)?;
    let blocks = fwd.problem.blocks;
    if masked.is_empty() {
        return Ok((loss, ParameterGradient::zeros(blocks.n, blocks.p)));
    }
    let g = seed_gradient(&fwd.solution, meas, masked, blocks, fwd.kkt.layout)?;
    let (q1, _, _) = adjoint_solve(&fwd.factorization, &g)?;
    let G = grad_wrt_D(&fwd.problem, &fwd.solution.z, &q1);
    Ok((loss, grad_wrt_params(&G, blocks, params)))
}
