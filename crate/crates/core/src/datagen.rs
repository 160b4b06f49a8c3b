//! Synthetic linear systems and simulated measurement sequences.
//!
//! Random draws happen in a fixed order so a seed pins every output:
//! system matrices (random kind only, column-major), the initial state, then
//! per step the sensor noise for `y_t` followed by the process noise for
//! `x_{t+1}`, and finally one uniform per entry (row-major) for dropout.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{MeasurementSet, ParameterSet};
use crate::rng::SeededRng;

/// Which system to simulate.
#[derive(Debug, Clone, PartialEq)]
pub enum SimKind {
    /// `A` with IID `N(0, 1/n)` entries rescaled to the given spectral
    /// radius, `C` with IID standard normal entries.
    Random { n: usize, p: usize, spectral_radius: f64 },
    /// Position, velocity and acceleration in 3D with sample period `h`;
    /// outputs are position, acceleration and the first two velocity
    /// components (`n = 9`, `p = 8`).
    DoubleIntegrator { h: f64 },
    /// Population transfer between `n` regions: nonnegative `A` whose
    /// columns sum to one, every region measured (`C = I`).
    MigrationLike { n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub kind: SimKind,
    pub T: usize,
    /// Process noise covariance, `n x n`.
    pub W: DMatrix<f64>,
    /// Sensor noise covariance, `p x p`.
    pub V: DMatrix<f64>,
    pub seed: u64,
    /// Probability that each scalar output is observed.
    pub known_frac: f64,
}

impl SimSpec {
    /// State and output dimensions implied by the kind.
    pub fn dims(&self) -> (usize, usize) {
        match self.kind {
            SimKind::Random { n, p, .. } => (n, p),
            SimKind::DoubleIntegrator { .. } => (9, 8),
            SimKind::MigrationLike { n } => (n, n),
        }
    }
}

/// Output of [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub params: ParameterSet,
    /// `T x n` true states.
    pub states: DMatrix<f64>,
    pub meas: MeasurementSet,
}

/// The 9-state double integrator dynamics matrix.
pub fn double_integrator_a(h: f64) -> DMatrix<f64> {
    let mut a = DMatrix::identity(9, 9);
    for k in 0..6 {
        a[(k, k + 3)] = h;
    }
    a
}

/// Output matrix selecting position, acceleration and the first two velocity
/// components.
pub fn double_integrator_c() -> DMatrix<f64> {
    let mut c = DMatrix::zeros(8, 9);
    for k in 0..3 {
        c[(k, k)] = 1.0;
        c[(3 + k, 6 + k)] = 1.0;
    }
    c[(6, 3)] = 1.0;
    c[(7, 4)] = 1.0;
    c
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| libm::hypot(z.re, z.im))
        .fold(0.0, f64::max)
}

/// Symmetric square root and inverse square root of a PSD matrix. The
/// inverse is `None` when the matrix is singular.
fn psd_factors(m: &DMatrix<f64>, name: &'static str) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)> {
    let k = m.nrows();
    if m.ncols() != k {
        return Err(Error::NonPsdNoise(name));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-12 * scale || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonPsdNoise(name));
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return Err(Error::NonPsdNoise(name));
    }
    let q = &eig.eigenvectors;
    let sqrt = DVector::from_iterator(k, eig.eigenvalues.iter().map(|&l| libm::sqrt(l.max(0.0))));
    let root = q * DMatrix::from_diagonal(&sqrt) * q.transpose();
    let inv = if eig.eigenvalues.iter().all(|&l| l > 1e-12 * scale) {
        let isqrt = sqrt.map(|s| 1.0 / s);
        Some(q * DMatrix::from_diagonal(&isqrt) * q.transpose())
    } else {
        None
    };
    Ok((root, inv))
}

fn validate(spec: &SimSpec) -> Result<()> {
    let (n, p) = spec.dims();
    let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
    if spec.T == 0 || n == 0 || p == 0 {
        return bad("T, n and p must be positive");
    }
    if !(spec.known_frac > 0.0 && spec.known_frac <= 1.0) {
        return bad("known_frac must lie in (0, 1]");
    }
    match spec.kind {
        SimKind::Random { spectral_radius, .. } if !(spectral_radius > 0.0 && spectral_radius <= 1.0) => {
            return bad("spectral_radius must lie in (0, 1]")
        }
        SimKind::DoubleIntegrator { h } if !(h > 0.0 && h.is_finite()) => return bad("h must be positive"),
        _ => {}
    }
    if spec.W.shape() != (n, n) {
        return bad("W must be n x n");
    }
    if spec.V.shape() != (p, p) {
        return bad("V must be p x p");
    }
    Ok(())
}

fn system_matrices(kind: &SimKind, rng: &mut SeededRng) -> (DMatrix<f64>, DMatrix<f64>) {
    match *kind {
        SimKind::Random { n, p, spectral_radius: rho } => {
            let sd = 1.0 / libm::sqrt(n as f64);
            let mut a = DMatrix::from_fn(n, n, |_, _| sd * rng.gaussian());
            let current = spectral_radius(&a);
            if current > 0.0 {
                a *= rho / current;
            }
            // Guard against eigenvalue round-off pushing the radius over.
            while spectral_radius(&a) > rho {
                a *= 1.0 - 1e-12;
            }
            let c = DMatrix::from_fn(p, n, |_, _| rng.gaussian());
            (a, c)
        }
        SimKind::DoubleIntegrator { h } => (double_integrator_a(h), double_integrator_c()),
        SimKind::MigrationLike { n } => {
            let mut a = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 0.01 * rng.uniform() / n as f64 });
            for j in 0..n {
                let moved: f64 = a.column(j).sum();
                a[(j, j)] = 1.0 - moved;
            }
            (a, DMatrix::identity(n, n))
        }
    }
}

/// Simulates `x_{t+1} = A x_t + w_t`, `y_t = C x_t + v_t` with
/// `x_1 ~ N(0, I)`, `w ~ N(0, W)`, `v ~ N(0, V)`, then drops each output
/// independently with probability `1 - known_frac`.
///
/// The returned parameters use the inverse square roots of `W` and `V`, or
/// the identity for a singular covariance.
pub fn simulate(spec: &SimSpec) -> Result<Simulation> {
    validate(spec)?;
    let (n, p) = spec.dims();
    let (w_root, w_isqrt) = psd_factors(&spec.W, "W")?;
    let (v_root, v_isqrt) = psd_factors(&spec.V, "V")?;

    let mut rng = SeededRng::new(spec.seed);
    let (a, c) = system_matrices(&spec.kind, &mut rng);

    let T = spec.T;
    let mut states = DMatrix::zeros(T, n);
    let mut outputs = DMatrix::zeros(T, p);
    let mut x = DVector::from_fn(n, |_, _| rng.gaussian());
    for t in 0..T {
        states.row_mut(t).copy_from(&x.transpose());
        let noise = DVector::from_fn(p, |_, _| rng.gaussian());
        let y = &c * &x + &v_root * noise;
        outputs.row_mut(t).copy_from(&y.transpose());
        if t + 1 < T {
            let noise = DVector::from_fn(n, |_, _| rng.gaussian());
            x = &a * &x + &w_root * noise;
        }
    }

    let mut values = Vec::with_capacity(T * p);
    for t in 0..T {
        for i in 0..p {
            let keep = spec.known_frac >= 1.0 || rng.uniform() < spec.known_frac;
            values.push(keep.then(|| outputs[(t, i)]));
        }
    }
    let params = ParameterSet::new(
        a,
        w_isqrt.unwrap_or_else(|| DMatrix::identity(n, n)),
        c,
        v_isqrt.unwrap_or_else(|| DMatrix::identity(p, p)),
    )?;
    Ok(Simulation {
        params,
        states,
        meas: MeasurementSet::from_rows(T, p, values)?,
    })
}

/// A deliberate error in the parameters, used as a tuning starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Misspecification {
    /// Multiplies `W^{-1/2}` by `sqrt(gamma)`.
    ScaleW(f64),
    /// Multiplies `V^{-1/2}` by `sqrt(gamma)`.
    ScaleV(f64),
    /// Adds IID `N(0, sigma^2)` noise to every entry of `A`.
    PerturbA { sigma: f64, seed: u64 },
}

pub fn misspecify(params: &ParameterSet, kind: Misspecification) -> ParameterSet {
    let mut out = params.clone();
    match kind {
        Misspecification::ScaleW(gamma) => {
            assert!(gamma > 0.0, "scale must be positive");
            out.Wisqrt *= libm::sqrt(gamma);
        }
        Misspecification::ScaleV(gamma) => {
            assert!(gamma > 0.0, "scale must be positive");
            out.Visqrt *= libm::sqrt(gamma);
        }
        Misspecification::PerturbA { sigma, seed } => {
            let mut rng = SeededRng::new(seed);
            for v in out.A.iter_mut() {
                *v += sigma * rng.gaussian();
            }
        }
    }
    out
}
