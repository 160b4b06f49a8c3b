#![allow(non_snake_case)]

mod common;

use common::random_instance;
use ksmooth_core::oracle::dense_smooth;
use ksmooth_core::rng::SeededRng;
use ksmooth_core::{smooth, Error, ParameterSet};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn well_posed(seed: u64, T: usize, n: usize, p: usize) -> Option<common::Instance> {
    let inst = random_instance(seed, T, n, p);
    match dense_smooth(&inst.params, &inst.meas, &inst.constrained) {
        Err(Error::OracleRankDeficient) => None,
        _ => Some(inst),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_noise_scaling(seed in 0u64..10_000, T in 2usize..15, n in 1usize..4, p in 1usize..4, alpha in 0.05f64..20.0) {
        let inst = well_posed(seed, T, n, p);
        prop_assume!(inst.is_some());
        let inst = inst.unwrap();
        let base = smooth(&inst.params, &inst.meas, &inst.constrained).unwrap();
        let mut scaled = inst.params.clone();
        scaled.Wisqrt *= alpha;
        scaled.Visqrt *= alpha;
        let other = smooth(&scaled, &inst.meas, &inst.constrained).unwrap();
        for (a, b) in base.z.iter().zip(&other.z) {
            prop_assert!((a - b).abs() <= 1e-8, "{} vs {}", a, b);
        }
    }

    #[test]
    fn state_similarity_keeps_outputs(seed in 0u64..10_000, T in 2usize..15, n in 1usize..4, p in 1usize..4) {
        let inst = well_posed(seed, T, n, p);
        prop_assume!(inst.is_some());
        let inst = inst.unwrap();
        let mut rng = SeededRng::new(seed + 1);
        let S = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| 0.3 * rng.gaussian());
        let Si = S.clone().try_inverse();
        prop_assume!(Si.is_some());
        let Si = Si.unwrap();
        let q = &inst.params;
        let moved = ParameterSet::new(&S * &q.A * &Si, &q.Wisqrt * &Si, &q.C * &Si, q.Visqrt.clone()).unwrap();
        let base = smooth(q, &inst.meas, &inst.constrained).unwrap();
        let other = smooth(&moved, &inst.meas, &inst.constrained).unwrap();
        prop_assert!((&base.yhat - &other.yhat).amax() <= 1e-6);
        // states move by the same transform
        let mapped = &base.xhat * S.transpose();
        prop_assert!((mapped - &other.xhat).amax() <= 1e-6 * base.xhat.amax().max(1.0));
    }
}
