//! Proximal gradient tuning of the smoother parameters with an adaptive
//! step size.
//!
//! Each iteration takes a gradient step on the masked prediction error,
//! applies the proximal operator of the regularizer and accepts the
//! candidate when the regularized objective does not increase. Accepted
//! steps grow the step size by 1.5, rejected ones halve it.

use alloc::vec::Vec;

use crate::entries::EntrySet;
use crate::error::{Error, Result};
use crate::grad::{gradient, ParameterGradient};
use crate::model::{MeasurementSet, ParameterSet};
use crate::prox::Regularizer;
use crate::smoother::{forward, prediction_error, ForwardPass};

pub const STEP_GROW: f64 = 1.5;
pub const STEP_SHRINK: f64 = 0.5;

/// Settings of one tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub theta0: ParameterSet,
    pub reg: Regularizer,
    pub t0: f64,
    pub n_iter: usize,
    pub eps: f64,
    /// Carried through to run metadata; the loop itself draws no randomness.
    pub seed: u64,
}

impl TuneConfig {
    pub fn new(theta0: ParameterSet, reg: Regularizer) -> Self {
        Self { theta0, reg, t0: 1e-4, n_iter: 50, eps: 1e-6, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("t0 = {} must be positive", self.t0)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!("eps = {} must be positive", self.eps)));
        }
        if self.n_iter == 0 {
            return Err(Error::InvalidConfig("n_iter must be at least 1".into()));
        }
        self.theta0.check()
    }
}

/// Objective value split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub F: f64,
    pub L: f64,
    pub r: f64,
}

/// One iteration of the loop. `F`, `L` and `r` are the values at the
/// candidate; `t` is the step size used to produce it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneRecord {
    pub k: usize,
    pub F: f64,
    pub L: f64,
    pub r: f64,
    pub t: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIters,
    SolverFailure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIters => "max_iters",
            Self::SolverFailure => "solver_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub theta_final: ParameterSet,
    /// Objective at `theta0`.
    pub initial: Objective,
    /// Objective at `theta_final`.
    pub last: Objective,
    pub history: Vec<TuneRecord>,
    pub termination: Termination,
    /// The error that stopped the run when `termination` is `SolverFailure`.
    pub failure: Option<Error>,
}

/// `F = L + r` at `params`, with `F = +inf` outside the allowable set.
pub fn objective_f(
    params: &ParameterSet,
    meas: &MeasurementSet,
    masked: &EntrySet,
    constrained: &EntrySet,
    reg: &Regularizer,
) -> Result<Objective> {
    let r = reg.eval(params)?;
    let fwd = forward(params, meas, constrained)?;
    let L = prediction_error(&fwd.solution, meas, masked)?;
    Ok(Objective { F: L + r, L, r })
}

pub fn tune(
    cfg: &TuneConfig,
    meas: &MeasurementSet,
    masked: &EntrySet,
    constrained: &EntrySet,
) -> Result<TuneResult> {
    tune_with_progress(cfg, meas, masked, constrained, |_| {})
}

struct Iterate {
    theta: ParameterSet,
    obj: Objective,
    grad: Vec<f64>,
}

fn evaluate(
    theta: ParameterSet,
    meas: &MeasurementSet,
    masked: &EntrySet,
    fwd: &ForwardPass,
    r: f64,
) -> Result<Iterate> {
    let (L, g): (f64, ParameterGradient) = gradient(&theta, meas, masked, fwd)?;
    Ok(Iterate { theta, obj: Objective { F: L + r, L, r }, grad: g.to_flat() })
}

/// Runs the tuning loop, calling `progress` after every iteration.
pub fn tune_with_progress(
    cfg: &TuneConfig,
    meas: &MeasurementSet,
    masked: &EntrySet,
    constrained: &EntrySet,
    mut progress: impl FnMut(&TuneRecord),
) -> Result<TuneResult> {
    cfg.validate()?;
    if masked.is_empty() {
        return Err(Error::InvalidConfig("masked set is empty".into()));
    }
    let r0 = cfg.reg.eval(&cfg.theta0)?;
    if !r0.is_finite() {
        return Err(Error::InvalidConfig("theta0 is outside the allowable set".into()));
    }
    let fwd0 = forward(&cfg.theta0, meas, constrained)?;
    let mut cur = evaluate(cfg.theta0.clone(), meas, masked, &fwd0, r0)?;
    let initial = cur.obj;
    let mut t = cfg.t0;
    let mut history = Vec::with_capacity(cfg.n_iter);

    let finish = |cur: Iterate, history, termination, failure| TuneResult {
        last: cur.obj,
        theta_final: cur.theta,
        initial,
        history,
        termination,
        failure,
    };

    for k in 1..=cfg.n_iter {
        let flat = cur.theta.to_flat();
        let stepped: Vec<f64> = flat.iter().zip(&cur.grad).map(|(x, g)| x - t * g).collect();
        let nu = cur.theta.with_flat(&stepped);
        let candidate = cfg.reg.prox(t, &nu)?;

        let trial = if candidate.to_flat().iter().all(|v| v.is_finite()) {
            let r = cfg.reg.eval(&candidate)?;
            match forward(&candidate, meas, constrained) {
                Ok(fwd) => Some((fwd, r)),
                Err(e @ Error::SingularAfterRegularization { .. }) => {
                    return Ok(finish(cur, history, Termination::SolverFailure, Some(e)));
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };

        let (F, L, r) = match &trial {
            Some((fwd, r)) => {
                let L = prediction_error(&fwd.solution, meas, masked)?;
                (L + r, L, *r)
            }
            None => (f64::INFINITY, f64::INFINITY, f64::INFINITY),
        };
        let accepted = F <= cur.obj.F;
        let record = TuneRecord { k, F, L, r, t, accepted };
        history.push(record);
        progress(&record);

        if !accepted {
            t *= STEP_SHRINK;
            continue;
        }
        let (fwd, r) = trial.expect("accepted candidates are finite");
        let next = evaluate(candidate, meas, masked, &fwd, r)?;
        let stop = libm::sqrt(
            next.theta
                .to_flat()
                .iter()
                .zip(&flat)
                .zip(next.grad.iter().zip(&cur.grad))
                .map(|((new, old), (g_new, g_old))| {
                    let d = (old - new) / t + (g_new - g_old);
                    d * d
                })
                .sum::<f64>(),
        );
        cur = next;
        t *= STEP_GROW;
        if stop <= cfg.eps {
            return Ok(finish(cur, history, Termination::Converged, None));
        }
    }
    Ok(finish(cur, history, Termination::MaxIters, None))
}
