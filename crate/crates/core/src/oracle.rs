//! Slow dense reference implementations for checking the sparse pipeline.
//!
//! Nothing here touches [`crate::assemble`], [`crate::kkt`] or
//! [`crate::grad`]: the smoothing problem is rebuilt densely with the
//! constrained outputs substituted, and solved by Householder QR.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::entries::EntrySet;
use crate::error::{Error, Result};
use crate::grad::ParameterGradient;
use crate::model::{validate_dims, MeasurementSet, ParameterSet, SmootherSolution};

/// Largest `T(n+p)` the dense oracle accepts.
pub const MAX_ORACLE_SIZE: usize = 500;

/// Solves the smoothing problem by eliminating the equality constraints and
/// solving the reduced unconstrained least squares problem with a dense QR
/// factorization.
pub fn dense_smooth(
    params: &ParameterSet,
    meas: &MeasurementSet,
    constrained: &EntrySet,
) -> Result<SmootherSolution> {
    validate_dims(params, meas)?;
    meas.check_bounds(constrained)?;
    let (T, n, p) = (meas.len_t(), params.n(), params.p());
    let size = T * (n + p);
    if size > MAX_ORACLE_SIZE {
        return Err(Error::TooLargeForOracle {
            size,
            limit: MAX_ORACLE_SIZE,
        });
    }

    // Unknowns: all states, then the unconstrained outputs in (t, i) order.
    let mut fixed = vec![None; T * p];
    for e in constrained {
        fixed[e.t * p + e.i] = Some(
            meas.value(*e)
                .ok_or(Error::ConstrainedNotKnown { t: e.t, i: e.i })?,
        );
    }
    let mut free_col = vec![usize::MAX; T * p];
    let mut n_free = 0;
    for (k, f) in fixed.iter().enumerate() {
        if f.is_none() {
            free_col[k] = T * n + n_free;
            n_free += 1;
        }
    }
    let n_unknowns = T * n + n_free;
    let n_rows = (T - 1) * n + T * p;
    let mut jac = DMatrix::<f64>::zeros(n_rows, n_unknowns);
    let mut rhs = DVector::<f64>::zeros(n_rows);

    let wa = &params.Wisqrt * &params.A;
    for t in 0..T - 1 {
        for r in 0..n {
            for k in 0..n {
                jac[(t * n + r, (t + 1) * n + k)] += params.Wisqrt[(r, k)];
                jac[(t * n + r, t * n + k)] -= wa[(r, k)];
            }
        }
    }
    let vc = &params.Visqrt * &params.C;
    let base = (T - 1) * n;
    for t in 0..T {
        for r in 0..p {
            let row = base + t * p + r;
            for k in 0..n {
                jac[(row, t * n + k)] -= vc[(r, k)];
            }
            for k in 0..p {
                match fixed[t * p + k] {
                    Some(y) => rhs[row] -= params.Visqrt[(r, k)] * y,
                    None => jac[(row, free_col[t * p + k])] += params.Visqrt[(r, k)],
                }
            }
        }
    }

    let w = least_squares_qr(jac, &rhs)?;

    let mut z = vec![0.0; size];
    z[..T * n].copy_from_slice(&w.as_slice()[..T * n]);
    for k in 0..T * p {
        z[T * n + k] = fixed[k].unwrap_or_else(|| w[free_col[k]]);
    }

    // Residuals in the row order of D, and multipliers from stationarity in
    // the constrained outputs.
    let x = |t: usize| DVector::from_column_slice(&z[t * n..(t + 1) * n]);
    let y = |t: usize| DVector::from_column_slice(&z[T * n + t * p..T * n + (t + 1) * p]);
    let mut v = Vec::with_capacity(size - n);
    for t in 0..T - 1 {
        v.extend((&params.Wisqrt * (x(t + 1) - &params.A * x(t))).iter());
    }
    let mut out_res = Vec::with_capacity(T);
    for t in 0..T {
        let r = &params.Visqrt * (y(t) - &params.C * x(t));
        v.extend(r.iter());
        out_res.push(r);
    }
    let eta = constrained
        .iter()
        .map(|e| -(params.Visqrt.transpose() * &out_res[e.t])[e.i])
        .collect();

    Ok(SmootherSolution::from_parts(T, n, p, z, v, eta))
}

/// Least squares via Householder QR; fails when `R` is numerically singular.
fn least_squares_qr(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let cols = a.ncols();
    if cols == 0 {
        return Ok(DVector::zeros(0));
    }
    if a.nrows() < cols {
        return Err(Error::OracleRankDeficient);
    }
    let qr = a.qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-10 * rmax) {
        return Err(Error::OracleRankDeficient);
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb).ok_or(Error::OracleRankDeficient)
}

/// Prediction error computed from the dense oracle.
pub fn dense_prediction_error(
    params: &ParameterSet,
    meas: &MeasurementSet,
    masked: &EntrySet,
    constrained: &EntrySet,
) -> Result<f64> {
    let sol = dense_smooth(params, meas, constrained)?;
    masked.iter().try_fold(0.0, |acc, e| {
        let y = meas
            .value(*e)
            .ok_or(Error::MaskedEntryMissing { t: e.t, i: e.i })?;
        let r = sol.yhat[(e.t, e.i)] - y;
        Ok(acc + r * r)
    })
}

/// Central finite differences of the dense prediction error, with step
/// `h_rel * (1 + |theta_j|)` per coordinate.
pub fn fd_gradient(
    params: &ParameterSet,
    meas: &MeasurementSet,
    masked: &EntrySet,
    constrained: &EntrySet,
    h_rel: f64,
) -> Result<ParameterGradient> {
    let base = params.to_flat();
    let mut grad = vec![0.0; base.len()];
    for j in 0..base.len() {
        let h = h_rel * (1.0 + base[j].abs());
        let mut plus = base.clone();
        plus[j] += h;
        let mut minus = base.clone();
        minus[j] -= h;
        let lp = dense_prediction_error(&params.with_flat(&plus), meas, masked, constrained)?;
        let lm = dense_prediction_error(&params.with_flat(&minus), meas, masked, constrained)?;
        grad[j] = (lp - lm) / (2.0 * h);
    }
    let g = params.with_flat(&grad);
    Ok(ParameterGradient {
        dA: g.A,
        dWisqrt: g.Wisqrt,
        dC: g.C,
        dVisqrt: g.Visqrt,
    })
}
