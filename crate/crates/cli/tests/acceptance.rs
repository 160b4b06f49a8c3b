//! Acceptance suite. All criteria run sequentially inside one test so the
//! timing check is not disturbed by parallel tests; each prints one
//! `PASS`/`FAIL` line to stdout.

#![allow(non_snake_case)]

use std::io::Write as _;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;

use ksmooth::commands::bench_grid;
use ksmooth_core::autotune::{tune, tune_with_progress, Termination, TuneConfig, TuneResult, STEP_GROW, STEP_SHRINK};
use ksmooth_core::datagen::{misspecify, simulate, spectral_radius, Misspecification, SimKind, SimSpec};
use ksmooth_core::grad::{adjoint_solve, seed_gradient};
use ksmooth_core::oracle::{dense_smooth, fd_gradient};
use ksmooth_core::rng::SeededRng;
use ksmooth_core::{
    forward, gradient, judge, split_known, Constraint, EntrySet, Error, ForwardPass, MeasurementSet, ParamTarget,
    ParameterSet, Penalty, Regularizer,
};
use nalgebra::DMatrix;

type Outcome = Result<String, String>;

fn report(line: &str) {
    // Bypasses the test harness capture so the lines always show.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Instance {
    params: ParameterSet,
    meas: MeasurementSet,
    masked: EntrySet,
    constrained: EntrySet,
}

fn random_params(n: usize, p: usize, rng: &mut SeededRng) -> ParameterSet {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.gaussian());
    let rho = spectral_radius(&a);
    if rho > 0.0 {
        a *= (0.5 + 0.5 * rng.uniform()) / rho;
    }
    let w = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| 0.3 * rng.gaussian());
    let c = DMatrix::from_fn(p, n, |_, _| rng.gaussian());
    let v = DMatrix::identity(p, p) + DMatrix::from_fn(p, p, |_, _| 0.3 * rng.gaussian());
    ParameterSet::new(a, w, c, v).unwrap()
}

fn random_instance(seed: u64, len: usize, n: usize, p: usize) -> Instance {
    let mut rng = SeededRng::new(seed);
    let params = random_params(n, p, &mut rng);
    let values = (0..len * p).map(|_| (rng.uniform() < 0.85).then(|| 2.0 * rng.gaussian())).collect();
    let meas = MeasurementSet::from_rows(len, p, values).unwrap();
    let masked: EntrySet = meas.known().iter().copied().filter(|_| rng.uniform() < 0.25).collect();
    let constrained = meas.known().difference(&masked);
    Instance { params, meas, masked, constrained }
}

/// Seeded instance with dimensions drawn from the criterion grid.
fn grid_instance(seed: u64) -> Instance {
    let mut rng = SeededRng::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let len = [2, 3, 5, 10, 20][rng.below(5) as usize];
    let n = 1 + rng.below(3) as usize;
    let p = 1 + rng.below(3) as usize;
    random_instance(seed, len, n, p)
}

fn kkt_ratio(fwd: &ForwardPass) -> f64 {
    fwd.residual / max_abs(fwd.problem.c.iter().copied()).max(1.0)
}

const KKT_TOL: f64 = 1e-8;

fn criterion_forward_oracle(kkt: &mut Vec<f64>) -> Outcome {
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut seed = 0;
    while checked < 100 {
        seed += 1;
        let inst = grid_instance(seed);
        let dense = match dense_smooth(&inst.params, &inst.meas, &inst.constrained) {
            Ok(s) => s,
            Err(Error::OracleRankDeficient) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(format!("oracle failed on seed {seed}: {e}")),
        };
        let fwd = forward(&inst.params, &inst.meas, &inst.constrained).map_err(|e| e.to_string())?;
        kkt.push(kkt_ratio(&fwd));
        let err = max_abs(fwd.solution.z.iter().zip(dense.z.iter()).map(|(a, b)| a - b));
        worst = worst.max(err);
        ensure(err <= 1e-8, || format!("seed {seed}: max |z - z_oracle| = {err:.3e}"))?;
        checked += 1;
    }
    Ok(format!("{checked} instances, max |z - z_oracle| = {worst:.2e} ({skipped} rank-deficient seeds skipped)"))
}

/// The regularizer settings exercised by the gradient and prox checks.
fn configurations(theta: &ParameterSet) -> Vec<(&'static str, Regularizer)> {
    let r = Regularizer::none;
    let fixed = |t: ParamTarget| Constraint::Fixed(t.get(theta).clone());
    let nominal_a = theta.A.map(|v| 0.5 * v);
    let first_entry = vec![(0, 0)];
    vec![
        ("none", r()),
        (
            "quad_deviation(A)",
            r().with_penalty(ParamTarget::A, Penalty::QuadDeviation { nominal: nominal_a.clone(), weight: 0.7 })
                .unwrap(),
        ),
        ("nuclear(C)", r().with_penalty(ParamTarget::C, Penalty::Nuclear { weight: 0.3 }).unwrap()),
        ("fixed(C)", r().with_constraint(ParamTarget::C, fixed(ParamTarget::C)).unwrap()),
        (
            "fixed_entries(A)",
            r().with_constraint(
                ParamTarget::A,
                Constraint::FixedEntries { entries: first_entry, nominal: nominal_a.clone() },
            )
            .unwrap(),
        ),
        (
            "quad_deviation+box(A)",
            r().with_penalty(ParamTarget::A, Penalty::QuadDeviation { nominal: nominal_a.clone(), weight: 0.4 })
                .unwrap()
                .with_constraint(ParamTarget::A, Constraint::Box { nominal: nominal_a, rho: 0.05 })
                .unwrap(),
        ),
        (
            "migration",
            r().with_constraint(ParamTarget::A, Constraint::Nonneg)
                .unwrap()
                .with_constraint(ParamTarget::Wisqrt, Constraint::DiagonalNonneg)
                .unwrap()
                .with_constraint(ParamTarget::Visqrt, Constraint::DiagonalNonneg)
                .unwrap()
                .with_constraint(ParamTarget::C, fixed(ParamTarget::C))
                .unwrap(),
        ),
        (
            "vehicle",
            r().with_penalty(ParamTarget::Wisqrt, Penalty::OffdiagQuad { weight: 0.2 })
                .unwrap()
                .with_penalty(ParamTarget::Visqrt, Penalty::OffdiagQuad { weight: 0.2 })
                .unwrap()
                .with_constraint(ParamTarget::Wisqrt, Constraint::Symmetric)
                .unwrap()
                .with_constraint(ParamTarget::Visqrt, Constraint::Symmetric)
                .unwrap()
                .with_constraint(ParamTarget::A, fixed(ParamTarget::A))
                .unwrap()
                .with_constraint(ParamTarget::C, fixed(ParamTarget::C))
                .unwrap(),
        ),
        (
            "offdiag+nonneg(A)",
            r().with_penalty(ParamTarget::A, Penalty::OffdiagQuad { weight: 0.5 })
                .unwrap()
                .with_constraint(ParamTarget::A, Constraint::Nonneg)
                .unwrap(),
        ),
        (
            "nuclear(A)+fixed(W)",
            r().with_penalty(ParamTarget::A, Penalty::Nuclear { weight: 0.2 })
                .unwrap()
                .with_constraint(ParamTarget::Wisqrt, fixed(ParamTarget::Wisqrt))
                .unwrap(),
        ),
    ]
}

fn criterion_gradient(kkt: &mut Vec<f64>) -> Outcome {
    let (mut checked, mut skipped, mut worst) = (0usize, 0, 0.0f64);
    let mut seed = 1000;
    while checked < 50 {
        seed += 1;
        let mut rng = SeededRng::new(seed);
        let (len, n, p) = (4 + rng.below(5) as usize, 1 + rng.below(3) as usize, 1 + rng.below(3) as usize);
        let inst = random_instance(seed, len, n, p);
        let configs = configurations(&inst.params);
        let (name, reg) = &configs[checked % configs.len()];
        // Evaluate at a point of the allowable set reached by a prox step.
        let theta = reg.prox(0.5, &inst.params).map_err(|e| e.to_string())?;
        if inst.masked.is_empty() {
            skipped += 1;
            continue;
        }
        let fd = match fd_gradient(&theta, &inst.meas, &inst.masked, &inst.constrained, 1e-6) {
            Ok(g) => g.to_flat(),
            Err(Error::OracleRankDeficient) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(format!("fd oracle failed on seed {seed}: {e}")),
        };
        let fwd = forward(&theta, &inst.meas, &inst.constrained).map_err(|e| e.to_string())?;
        kkt.push(kkt_ratio(&fwd));
        let g = seed_gradient(&fwd.solution, &inst.meas, &inst.masked, fwd.problem.blocks, fwd.kkt.layout)
            .map_err(|e| e.to_string())?;
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let (_, res) = fwd.factorization.solve_with_residual(&neg).map_err(|e| e.to_string())?;
        kkt.push(res / max_abs(neg.iter().copied()).max(1.0));
        adjoint_solve(&fwd.factorization, &g).map_err(|e| e.to_string())?;

        let (_, adj) = gradient(&theta, &inst.meas, &inst.masked, &fwd).map_err(|e| e.to_string())?;
        let adj = adj.to_flat();
        let scale = max_abs(fd.iter().copied()).max(1e-12);
        let err = max_abs(adj.iter().zip(&fd).map(|(a, b)| a - b)) / scale;
        worst = worst.max(err);
        ensure(err <= 1e-5, || format!("seed {seed} ({name}): relative error {err:.3e}"))?;
        checked += 1;
    }
    Ok(format!(
        "{checked} instances over {} configurations, max relative error {worst:.2e} ({skipped} seeds skipped)",
        configurations(&random_params(1, 1, &mut SeededRng::new(0))).len()
    ))
}

fn criterion_kkt(kkt: &mut Vec<f64>) -> Outcome {
    for &len in &[1000, 8000] {
        let spec = SimSpec {
            kind: SimKind::Random { n: 10, p: 10, spectral_radius: 0.9 },
            T: len,
            W: DMatrix::identity(10, 10),
            V: DMatrix::identity(10, 10),
            seed: 5,
            known_frac: 0.8,
        };
        let sim = simulate(&spec).map_err(|e| e.to_string())?;
        let fwd = forward(&sim.params, &sim.meas, sim.meas.known()).map_err(|e| e.to_string())?;
        kkt.push(kkt_ratio(&fwd));
    }
    let worst = kkt.iter().copied().fold(0.0, f64::max);
    ensure(worst <= KKT_TOL, || format!("max ||Mu - b|| / max(1, ||b||) = {worst:.3e}"))?;
    Ok(format!("{} solves, max ||Mu - b||_inf / max(1, ||b||_inf) = {worst:.2e}", kkt.len()))
}

fn criterion_scaling() -> Outcome {
    let grid = [1000, 2000, 4000, 8000];
    let rows = bench_grid(10, 10, &grid, 10, 0.2, 0).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    for w in rows.windows(2) {
        let ratio = w[1].forward / w[0].forward;
        detail.push(format!("{ratio:.2}"));
        ensure((1.5..=3.0).contains(&ratio), || {
            format!("forward time ratio T={} -> {} is {ratio:.3}", w[0].t, w[1].t)
        })?;
    }
    let mut back = Vec::new();
    for row in &rows {
        let ratio = row.backward / row.forward;
        back.push(format!("{ratio:.2}"));
        ensure(ratio <= 1.0, || format!("backward/forward at T={} is {ratio:.3}", row.t))?;
    }
    Ok(format!(
        "forward {:.3}s..{:.3}s, doubling ratios [{}], backward/forward [{}]",
        rows[0].forward,
        rows[3].forward,
        detail.join(", "),
        back.join(", ")
    ))
}

fn check_history(res: &TuneResult, t0: f64) -> Result<(), String> {
    let mut best = res.initial.F;
    let mut t = t0;
    for rec in &res.history {
        ensure(rec.t == t, || format!("iteration {} used step {} but {t} was expected", rec.k, rec.t))?;
        if rec.accepted {
            ensure(rec.F <= best, || format!("accepted F rose at iteration {}", rec.k))?;
            best = rec.F;
            t *= STEP_GROW;
        } else {
            t *= STEP_SHRINK;
        }
    }
    Ok(())
}

fn vehicle_regularizer(theta0: &ParameterSet, alpha: f64) -> Regularizer {
    Regularizer::none()
        .with_constraint(ParamTarget::A, Constraint::Fixed(theta0.A.clone()))
        .unwrap()
        .with_constraint(ParamTarget::C, Constraint::Fixed(theta0.C.clone()))
        .unwrap()
        .with_constraint(ParamTarget::Wisqrt, Constraint::Symmetric)
        .unwrap()
        .with_constraint(ParamTarget::Visqrt, Constraint::Symmetric)
        .unwrap()
        .with_penalty(ParamTarget::Wisqrt, Penalty::OffdiagQuad { weight: alpha })
        .unwrap()
        .with_penalty(ParamTarget::Visqrt, Penalty::OffdiagQuad { weight: alpha })
        .unwrap()
}

fn criterion_mechanics() -> Outcome {
    let mut runs = 0;
    // Logged runs over several regularizers and step sizes.
    for seed in 0..8u64 {
        let inst = random_instance(seed + 500, 25, 2, 2);
        let configs = configurations(&inst.params);
        let (_, reg) = &configs[seed as usize % configs.len()];
        let theta0 = reg.prox(1e-3, &inst.params).map_err(|e| e.to_string())?;
        let t0 = [1e-3, 1e-1, 10.0][seed as usize % 3];
        let cfg = TuneConfig { t0, n_iter: 20, ..TuneConfig::new(theta0, reg.clone()) };
        let mut logged = Vec::new();
        let res = tune_with_progress(&cfg, &inst.meas, &inst.masked, &inst.constrained, |r| logged.push(*r))
            .map_err(|e| e.to_string())?;
        ensure(logged == res.history, || "progress log differs from history".into())?;
        check_history(&res, t0).map_err(|e| format!("seed {seed}: {e}"))?;
        runs += 1;
    }

    // Two steps, scalar state and output, y_1 = 1 constrained and y_2 = m
    // masked: the smoother interpolates exactly, so yhat_2 = A and
    // L = (A - m)^2 with gradient 2 (A - m) in A only.
    let scalar = |v: f64| DMatrix::from_element(1, 1, v);
    let meas = MeasurementSet::from_rows(2, 1, vec![Some(1.0), Some(2.0)]).unwrap();
    let constrained: EntrySet = [(0usize, 0usize)].into_iter().collect();
    let masked: EntrySet = [(1usize, 0usize)].into_iter().collect();
    let theta = |a: f64| ParameterSet::new(scalar(a), scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();

    // Zero gradient: the candidate equals theta0 and the stop fires.
    let cfg = TuneConfig { t0: 0.1, ..TuneConfig::new(theta(2.0), Regularizer::none()) };
    let res = tune(&cfg, &meas, &masked, &constrained).map_err(|e| e.to_string())?;
    ensure(res.termination == Termination::Converged && res.history.len() <= 2, || {
        format!("fixed point: {:?} after {} iterations", res.termination, res.history.len())
    })?;
    let fixed_iters = res.history.len();

    // t = 2 maps A - m to -3 (A - m): strictly worse, rejected, step halved.
    let cfg = TuneConfig { t0: 2.0, n_iter: 1, ..TuneConfig::new(theta(0.5), Regularizer::none()) };
    let res = tune(&cfg, &meas, &masked, &constrained).map_err(|e| e.to_string())?;
    let rec = res.history[0];
    ensure(
        res.termination == Termination::MaxIters
            && !rec.accepted
            && (rec.F - 9.0 * res.initial.F).abs() <= 1e-9
            && res.theta_final == theta(0.5),
        || format!("worse candidate handled wrongly: {rec:?}"),
    )?;

    // A step below 1 contracts A - m by |1 - 2t| and is accepted.
    let cfg = TuneConfig { t0: 0.25, n_iter: 1, ..TuneConfig::new(theta(0.5), Regularizer::none()) };
    let res = tune(&cfg, &meas, &masked, &constrained).map_err(|e| e.to_string())?;
    ensure(res.history[0].accepted && (res.theta_final.A[(0, 0)] - 1.25).abs() <= 1e-12, || {
        format!("contracting step gave A = {}", res.theta_final.A[(0, 0)])
    })?;
    Ok(format!("{runs} logged runs monotone with exact 1.5/0.5 steps; fixed point converged in {fixed_iters}"))
}

fn criterion_efficacy() -> Outcome {
    let (mut masked_ok, mut test_ok) = (0, 0);
    let mut drops = Vec::new();
    for seed in 0..20u64 {
        let spec = SimSpec {
            kind: SimKind::DoubleIntegrator { h: 0.01 },
            T: 200,
            W: DMatrix::identity(9, 9),
            V: DMatrix::identity(8, 8),
            seed,
            known_frac: 1.0,
        };
        let sim = simulate(&spec).map_err(|e| e.to_string())?;
        let split = split_known(sim.meas.known(), 0.2, 0.2, seed).map_err(|e| e.to_string())?;
        let theta0 = misspecify(&sim.params, Misspecification::ScaleW(100.0));
        let reg = vehicle_regularizer(&theta0, 0.01);
        let before = judge(&theta0, &sim.meas, &split.masked, &split.test).map_err(|e| e.to_string())?;
        let cfg = TuneConfig { t0: 1e-2, n_iter: 25, seed, ..TuneConfig::new(theta0, reg) };
        let res = tune(&cfg, &sim.meas, &split.masked, &split.train).map_err(|e| e.to_string())?;
        check_history(&res, 1e-2).map_err(|e| format!("seed {seed}: {e}"))?;
        let after = judge(&res.theta_final, &sim.meas, &split.masked, &split.test).map_err(|e| e.to_string())?;
        if after.train_error <= 0.7 * before.train_error {
            masked_ok += 1;
        }
        if after.test_error < before.test_error {
            test_ok += 1;
        }
        drops.push(1.0 - after.train_error / before.train_error);
    }
    let mean_drop = drops.iter().sum::<f64>() / drops.len() as f64;
    ensure(masked_ok >= 16 && test_ok >= 14, || {
        format!("masked error cut >= 30% in {masked_ok}/20, test error reduced in {test_ok}/20")
    })?;
    Ok(format!(
        "masked error cut >= 30% in {masked_ok}/20 (mean cut {:.0}%), test error reduced in {test_ok}/20",
        100.0 * mean_drop
    ))
}

/// One free coordinate of the generic minimizer: a value shared by the
/// listed entries, kept in `[lo, hi]`.
struct Coord {
    target: ParamTarget,
    entries: Vec<(usize, usize)>,
    lo: f64,
    hi: f64,
}

/// Box-constrained coordinates describing the allowable set of `target`
/// for the constraint kinds used here.
fn coordinates(target: ParamTarget, x: &DMatrix<f64>, constraint: Option<&Constraint>, out: &mut Vec<Coord>) {
    let (r, c) = x.shape();
    let inf = f64::INFINITY;
    for j in 0..c {
        for i in 0..r {
            let (lo, hi) = match constraint {
                None => (-inf, inf),
                Some(Constraint::Box { nominal, rho }) => (nominal[(i, j)] - rho, nominal[(i, j)] + rho),
                Some(Constraint::Nonneg) => (0.0, inf),
                Some(Constraint::DiagonalNonneg) if i == j => (0.0, inf),
                Some(Constraint::DiagonalNonneg) => (0.0, 0.0),
                Some(Constraint::Fixed(nominal)) => (nominal[(i, j)], nominal[(i, j)]),
                Some(Constraint::FixedEntries { entries, nominal }) if entries.contains(&(i, j)) => {
                    (nominal[(i, j)], nominal[(i, j)])
                }
                Some(Constraint::FixedEntries { .. }) => (-inf, inf),
                Some(Constraint::Symmetric) if i > j => continue,
                Some(Constraint::Symmetric) if i < j => {
                    out.push(Coord { target, entries: vec![(i, j), (j, i)], lo: -inf, hi: inf });
                    continue;
                }
                Some(Constraint::Symmetric) => (-inf, inf),
            };
            out.push(Coord { target, entries: vec![(i, j)], lo, hi });
        }
    }
}

fn place(coords: &[Coord], u: &[f64], base: &ParameterSet) -> ParameterSet {
    let mut theta = base.clone();
    for (c, &v) in coords.iter().zip(u) {
        let m = c.target.get_mut(&mut theta);
        for &e in &c.entries {
            m[e] = v;
        }
    }
    theta
}

/// Projected gradient descent with central-difference gradients on
/// `t r(theta) + ||theta - nu||^2 / 2`, using only `eval` of the regularizer.
fn generic_prox(reg: &Regularizer, t: f64, nu: &ParameterSet) -> ParameterSet {
    let mut coords = Vec::new();
    for target in ParamTarget::ALL {
        let c = reg.constraints().iter().find(|(tg, _)| *tg == target).map(|(_, c)| c);
        coordinates(target, target.get(nu), c, &mut coords);
    }
    // Constraints are carried by the coordinates; only the penalties are
    // evaluated, so difference quotients may leave the allowable set.
    let penalties = Regularizer::new(reg.terms().to_vec(), Vec::new()).unwrap();
    let objective = |u: &[f64]| {
        let theta = place(&coords, u, nu);
        let d: f64 = theta.to_flat().iter().zip(nu.to_flat()).map(|(a, b)| (a - b) * (a - b)).sum();
        t * penalties.eval(&theta).unwrap() + 0.5 * d
    };
    let clamp = |u: &mut Vec<f64>| {
        for (v, c) in u.iter_mut().zip(&coords) {
            *v = v.clamp(c.lo, c.hi);
        }
    };
    let mut u: Vec<f64> = coords.iter().map(|c| target_entry(nu, c)).collect();
    clamp(&mut u);
    let mut f = objective(&u);
    let mut step = 1.0;
    for _ in 0..20_000 {
        let h = 1e-4;
        let grad: Vec<f64> = (0..u.len())
            .map(|k| {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[k] += h;
                dn[k] -= h;
                (objective(&up) - objective(&dn)) / (2.0 * h)
            })
            .collect();
        let mut moved = false;
        while step > 1e-12 {
            let mut trial: Vec<f64> = u.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
            clamp(&mut trial);
            let ft = objective(&trial);
            if ft <= f {
                let change = max_abs(trial.iter().zip(&u).map(|(a, b)| a - b));
                u = trial;
                f = ft;
                moved = change > 1e-15;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    place(&coords, &u, nu)
}

fn target_entry(nu: &ParameterSet, c: &Coord) -> f64 {
    let m = c.target.get(nu);
    c.entries.iter().map(|&e| m[e]).sum::<f64>() / c.entries.len() as f64
}

/// Gradient descent on `tau (|P|^2 + |Q|^2) / 2 + |P Q^T - nu|^2 / 2`, whose
/// minimizers give the nuclear norm prox `P Q^T`.
fn factored_nuclear_prox(nu: &DMatrix<f64>, tau: f64, rng: &mut SeededRng) -> DMatrix<f64> {
    let (r, c) = nu.shape();
    let k = r.min(c);
    let mut p = DMatrix::from_fn(r, k, |_, _| rng.gaussian());
    let mut q = DMatrix::from_fn(c, k, |_, _| rng.gaussian());
    let lr = 0.2 / (nu.norm() + tau + 1.0);
    for _ in 0..400_000 {
        let resid = &p * q.transpose() - nu;
        let gp = &p * tau + &resid * &q;
        let gq = &q * tau + resid.transpose() * &p;
        if gp.amax().max(gq.amax()) < 1e-13 {
            break;
        }
        p -= gp * lr;
        q -= gq * lr;
    }
    p * q.transpose()
}

fn criterion_prox() -> Outcome {
    let mut rng = SeededRng::new(4242);
    let (mut cases, mut worst) = (0, 0.0f64);
    for case in 0..60 {
        let n = 1 + rng.below(3) as usize;
        let p = 1 + rng.below(3) as usize;
        let base = random_params(n, p, &mut rng);
        let nu = {
            let flat: Vec<f64> = base.to_flat().iter().map(|v| v + 0.5 * rng.gaussian()).collect();
            base.with_flat(&flat)
        };
        let t = [0.05, 0.3, 1.0, 2.5][case % 4];
        let configs = configurations(&base);
        let (name, reg) = &configs[case % configs.len()];
        let fast = reg.prox(t, &nu).map_err(|e| e.to_string())?;
        let has_nuclear = reg.terms().iter().any(|(_, p)| matches!(p, Penalty::Nuclear { .. }));
        let slow = if has_nuclear {
            let mut slow = fast.clone();
            for (target, pen) in reg.terms() {
                if let Penalty::Nuclear { weight } = pen {
                    *target.get_mut(&mut slow) = factored_nuclear_prox(target.get(&nu), t * weight, &mut rng);
                }
            }
            let rest = Regularizer::new(Vec::new(), reg.constraints().to_vec()).unwrap();
            let others = generic_prox(&rest, t, &nu);
            for target in ParamTarget::ALL {
                if !reg.terms().iter().any(|(tg, _)| *tg == target) {
                    *target.get_mut(&mut slow) = target.get(&others).clone();
                }
            }
            slow
        } else {
            generic_prox(reg, t, &nu)
        };
        let err = max_abs(fast.to_flat().iter().zip(slow.to_flat()).map(|(a, b)| a - b));
        worst = worst.max(err);
        ensure(err <= 1e-8, || format!("case {case} ({name}, t = {t}): max deviation {err:.3e}"))?;
        ensure(reg.eval(&fast).map_err(|e| e.to_string())?.is_finite(), || {
            format!("case {case} ({name}): prox output outside the allowable set")
        })?;
        cases += 1;
    }
    Ok(format!("{cases} random cases, max deviation from generic minimizer {worst:.2e}"))
}

fn criterion_invariance() -> Outcome {
    let (mut worst_scale, mut worst_sim) = (0.0f64, 0.0f64);
    let (mut checked, mut skipped) = (0, 0);
    let mut seed = 0u64;
    while checked < 30 {
        seed += 1;
        let mut rng = SeededRng::new(seed + 9000);
        let (len, n, p) = (3 + rng.below(10) as usize, 1 + rng.below(3) as usize, 1 + rng.below(3) as usize);
        let inst = random_instance(seed + 9000, len, n, p);
        // Invariance is a statement about the unique solution.
        if let Err(Error::OracleRankDeficient) = dense_smooth(&inst.params, &inst.meas, &inst.constrained) {
            skipped += 1;
            continue;
        }
        let base = forward(&inst.params, &inst.meas, &inst.constrained).map_err(|e| e.to_string())?.solution;

        let alpha = 0.01 + 20.0 * rng.uniform();
        let mut scaled = inst.params.clone();
        scaled.Wisqrt *= alpha;
        scaled.Visqrt *= alpha;
        let s = forward(&scaled, &inst.meas, &inst.constrained).map_err(|e| e.to_string())?.solution;
        let err = max_abs(s.z.iter().zip(&base.z).map(|(a, b)| a - b));
        worst_scale = worst_scale.max(err);
        ensure(err <= 1e-8, || format!("seed {seed}: scaling by {alpha:.3} moved z by {err:.3e}"))?;

        let S = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| 0.3 * rng.gaussian());
        let Si = S.clone().try_inverse().ok_or("singular similarity transform")?;
        let sim = ParameterSet::new(
            &S * &inst.params.A * &Si,
            &inst.params.Wisqrt * &Si,
            &inst.params.C * &Si,
            inst.params.Visqrt.clone(),
        )
        .map_err(|e| e.to_string())?;
        let s = forward(&sim, &inst.meas, &inst.constrained).map_err(|e| e.to_string())?.solution;
        let err = (&s.yhat - &base.yhat).amax();
        worst_sim = worst_sim.max(err);
        ensure(err <= 1e-6, || format!("seed {seed}: similarity transform moved yhat by {err:.3e}"))?;
        checked += 1;
    }
    Ok(format!(
        "{checked} instances, scaling {worst_scale:.2e}, similarity {worst_sim:.2e} ({skipped} rank-deficient seeds skipped)"
    ))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ksmooth"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("ksmooth {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for name in names {
        let x = std::fs::read(a.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = std::fs::read(b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    Ok(())
}

fn criterion_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let config = root.join("config.json");
    std::fs::write(
        &config,
        r#"{"simulate": {"system": {"kind": "double_integrator", "h": 0.01}, "T": 120, "W": 1.0, "V": 1.0,
                         "known_frac": 0.9, "misspecify": [{"kind": "scale_W", "gamma": 100}]},
            "regularizer": {"terms": [{"kind": "offdiag_quad", "target": "Wisqrt", "weight": 0.01},
                                      {"kind": "offdiag_quad", "target": "Visqrt", "weight": 0.01}],
                            "constraints": [{"kind": "fixed", "target": "A"}, {"kind": "fixed", "target": "C"},
                                            {"kind": "symmetric", "target": "Wisqrt"},
                                            {"kind": "symmetric", "target": "Visqrt"}]},
            "tune": {"t0": 0.01, "n_iter": 10}}"#,
    )
    .map_err(|e| e.to_string())?;
    let cfg = config.to_str().unwrap();
    let sim = root.join("sim");
    let sim_s = sim.to_str().unwrap();
    let meas = sim.join("measurements.csv");
    let init = sim.join("initial_params.json");
    let sim_files = ["measurements.csv", "true_params.json", "true_states.csv", "initial_params.json", "metadata.json"];
    let tune_files = ["tuned_params.json", "history.csv", "summary.json", "metadata.json"];
    let smooth_files = ["xhat.csv", "yhat.csv", "summary.json", "metadata.json"];

    // Every run writes to the same paths so the metadata sidecars, which
    // record input paths, are comparable; outputs are snapshotted after.
    let tuned = root.join("tune");
    let smoothed = root.join("smooth");
    let stages: [(&Path, &[&str], &str); 3] =
        [(&sim, &sim_files, "sim"), (&tuned, &tune_files, "tune"), (&smoothed, &smooth_files, "smooth")];
    for run in 0..2 {
        run_cli(&["simulate", "--config", cfg, "--seed", "11", "--out-dir", sim_s])?;
        run_cli(&[
            "tune", "--config", cfg, "--input", meas.to_str().unwrap(), "--params", init.to_str().unwrap(),
            "--seed", "3", "--quiet", "--out-dir", tuned.to_str().unwrap(),
        ])?;
        run_cli(&[
            "smooth", "--input", meas.to_str().unwrap(), "--params", tuned.join("tuned_params.json").to_str().unwrap(),
            "--mask-frac", "0.2", "--test-frac", "0.1", "--seed", "3", "--out-dir", smoothed.to_str().unwrap(),
        ])?;
        for (dir, files, name) in &stages {
            let copy = root.join(format!("{name}{run}"));
            std::fs::create_dir_all(&copy).map_err(|e| e.to_string())?;
            for f in files.iter() {
                std::fs::copy(dir.join(f), copy.join(f)).map_err(|e| format!("{f}: {e}"))?;
            }
        }
    }
    for (_, files, name) in &stages {
        same_files(&root.join(format!("{name}0")), &root.join(format!("{name}1")), files)?;
    }
    let known: EntrySet = (0..50).flat_map(|t| (0..4).map(move |i| (t, i))).collect();
    ensure(split_known(&known, 0.2, 0.2, 9) == split_known(&known, 0.2, 0.2, 9), || "split differs".into())?;
    let history = std::fs::read_to_string(root.join("tune0").join("history.csv")).map_err(|e| e.to_string())?;
    Ok(format!(
        "simulate, tune ({} history rows) and smooth outputs byte-identical across reruns",
        history.lines().count() - 1
    ))
}

#[test]
fn acceptance_suite() {
    let mut kkt = Vec::new();
    let mut failures = Vec::new();
    let mut check = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => report(&format!("PASS criterion {id} ({name}): {detail}")),
            Err(detail) => {
                report(&format!("FAIL criterion {id} ({name}): {detail}"));
                failures.push(id);
            }
        }
    };
    check(1, "forward oracle equivalence", &mut || criterion_forward_oracle(&mut kkt));
    check(2, "gradient correctness", &mut || criterion_gradient(&mut kkt));
    check(3, "KKT residual", &mut || criterion_kkt(&mut kkt));
    check(4, "linear-in-T scaling", &mut criterion_scaling);
    check(5, "tuning loop mechanics", &mut criterion_mechanics);
    check(6, "tuning efficacy", &mut criterion_efficacy);
    check(7, "prox unit suite", &mut criterion_prox);
    check(8, "invariance properties", &mut criterion_invariance);
    check(9, "determinism", &mut criterion_determinism);
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
