//! Forward pass: smoothing, prediction error and the masking protocol.

use alloc::vec;

use crate::assemble::{assemble, SparseProblem};
use crate::entries::EntrySet;
use crate::error::{Error, Result};
use crate::kkt::{build_kkt, factorize, KktFactorization, KktSystem};
use crate::model::{MeasurementSet, ParameterSet, SmootherSolution};

/// Everything produced by one smoothing solve. The factorization is kept so
/// the gradient can reuse it for the adjoint solve.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub problem: SparseProblem,
    pub kkt: KktSystem,
    pub factorization: KktFactorization,
    pub solution: SmootherSolution,
    /// `||M u - b||_inf` of the forward solve.
    pub residual: f64,
}

impl ForwardPass {
    /// Smoothing objective `||Dz||^2` at the solution.
    pub fn objective(&self) -> f64 {
        self.problem
            .D
            .mul_vec(&self.solution.z)
            .iter()
            .map(|r| r * r)
            .sum()
    }
}

/// Solves the smoothing problem, keeping the assembled system and factors.
pub fn forward(
    params: &ParameterSet,
    meas: &MeasurementSet,
    constrained: &EntrySet,
) -> Result<ForwardPass> {
    let problem = assemble(params, meas, constrained)?;
    let kkt = build_kkt(&problem);
    let factorization = factorize(&kkt)?;
    let mut rhs = vec![0.0; kkt.order()];
    rhs[kkt.layout.eta_offset()..].copy_from_slice(&problem.c);
    let (u, residual) = factorization.solve_with_residual(&rhs)?;
    let (z, v, eta) = kkt.split(&u);
    let bm = problem.blocks;
    let solution = SmootherSolution::from_parts(bm.T, bm.n, bm.p, z.to_vec(), v.to_vec(), eta.to_vec());
    Ok(ForwardPass {
        problem,
        kkt,
        factorization,
        solution,
        residual,
    })
}

/// Smoothed states and outputs with the entries of `constrained` held at
/// their measured values.
pub fn smooth(
    params: &ParameterSet,
    meas: &MeasurementSet,
    constrained: &EntrySet,
) -> Result<SmootherSolution> {
    forward(params, meas, constrained).map(|f| f.solution)
}

/// Sum of squared differences between predicted and measured outputs over
/// `masked`.
pub fn prediction_error(
    sol: &SmootherSolution,
    meas: &MeasurementSet,
    masked: &EntrySet,
) -> Result<f64> {
    let mut total = 0.0;
    for e in masked {
        let y = meas
            .value(*e)
            .ok_or(Error::MaskedEntryMissing { t: e.t, i: e.i })?;
        if e.t >= sol.yhat.nrows() || e.i >= sol.yhat.ncols() {
            return Err(Error::MaskedEntryMissing { t: e.t, i: e.i });
        }
        let r = sol.yhat[(e.t, e.i)] - y;
        total += r * r;
    }
    Ok(total)
}

/// Scores of a smoother on held-out entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Judgement {
    pub train_error: f64,
    pub test_error: f64,
    pub solution: SmootherSolution,
}

/// Smooths with `known \ (masked ∪ test)` constrained and scores the
/// predictions on the masked and test entries.
pub fn judge(
    params: &ParameterSet,
    meas: &MeasurementSet,
    masked: &EntrySet,
    test: &EntrySet,
) -> Result<Judgement> {
    meas.check_bounds(masked)?;
    meas.check_bounds(test)?;
    let constrained = meas.known().difference(&masked.union(test));
    let solution = smooth(params, meas, &constrained)?;
    Ok(Judgement {
        train_error: prediction_error(&solution, meas, masked)?,
        test_error: prediction_error(&solution, meas, test)?,
        solution,
    })
}
