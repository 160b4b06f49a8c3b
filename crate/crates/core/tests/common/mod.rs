#![allow(non_snake_case, dead_code)]

use ksmooth_core::datagen::spectral_radius;
use ksmooth_core::entries::EntrySet;
use ksmooth_core::model::{MeasurementSet, ParameterSet};
use ksmooth_core::rng::SeededRng;
use nalgebra::DMatrix;

/// A random small smoothing instance with a masked and a constrained set.
pub struct Instance {
    pub params: ParameterSet,
    pub meas: MeasurementSet,
    pub masked: EntrySet,
    pub constrained: EntrySet,
}

pub fn random_params(n: usize, p: usize, rng: &mut SeededRng) -> ParameterSet {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.gaussian());
    let rho = spectral_radius(&a);
    if rho > 0.0 {
        a *= (0.5 + 0.5 * rng.uniform()) / rho;
    }
    let w = DMatrix::from_fn(n, n, |_, _| 0.3 * rng.gaussian()) + DMatrix::identity(n, n);
    let c = DMatrix::from_fn(p, n, |_, _| rng.gaussian());
    let v = DMatrix::from_fn(p, p, |_, _| 0.3 * rng.gaussian()) + DMatrix::identity(p, p);
    ParameterSet::new(a, w, c, v).unwrap()
}

pub fn random_instance(seed: u64, T: usize, n: usize, p: usize) -> Instance {
    let mut rng = SeededRng::new(seed);
    let params = random_params(n, p, &mut rng);
    let values = (0..T * p)
        .map(|_| (rng.uniform() < 0.85).then(|| rng.gaussian()))
        .collect();
    let meas = MeasurementSet::from_rows(T, p, values).unwrap();
    let masked: EntrySet = meas.known().iter().copied().filter(|_| rng.uniform() < 0.25).collect();
    let constrained = meas.known().difference(&masked);
    Instance {
        params,
        meas,
        masked,
        constrained,
    }
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
