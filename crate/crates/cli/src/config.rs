//! The JSON run configuration shared by all commands.

use ksmooth_core::datagen::{Misspecification, SimKind, SimSpec};
use ksmooth_core::{Constraint, ParamTarget, ParameterSet, Penalty, Regularizer};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats::{Matrix, ParamsDoc};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Initial or fixed parameters; `--params` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsDoc>,
    pub regularizer: RegularizerDoc,
    pub split: SplitDoc,
    pub tune: TuneDoc,
    pub simulate: SimulateDoc,
    pub bench: BenchDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    A,
    Wisqrt,
    C,
    Visqrt,
}

impl From<Target> for ParamTarget {
    fn from(t: Target) -> Self {
        match t {
            Target::A => ParamTarget::A,
            Target::Wisqrt => ParamTarget::Wisqrt,
            Target::C => ParamTarget::C,
            Target::Visqrt => ParamTarget::Visqrt,
        }
    }
}

/// A penalty record. A missing `nominal` means the initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermDoc {
    None {
        target: Target,
    },
    QuadDeviation {
        target: Target,
        weight: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nominal: Option<Matrix>,
    },
    OffdiagQuad {
        target: Target,
        weight: f64,
    },
    Nuclear {
        target: Target,
        weight: f64,
    },
}

/// A constraint record. A missing `nominal` means the initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintDoc {
    Fixed {
        target: Target,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nominal: Option<Matrix>,
    },
    FixedEntries {
        target: Target,
        entries: Vec<[usize; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nominal: Option<Matrix>,
    },
    Box {
        target: Target,
        rho: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nominal: Option<Matrix>,
    },
    Nonneg {
        target: Target,
    },
    DiagonalNonneg {
        target: Target,
    },
    Symmetric {
        target: Target,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizerDoc {
    pub terms: Vec<TermDoc>,
    pub constraints: Vec<ConstraintDoc>,
}

fn nominal_or(nominal: &Option<Matrix>, target: Target, theta0: &ParameterSet) -> CliResult<DMatrix<f64>> {
    let t = ParamTarget::from(target);
    match nominal {
        Some(m) => m.to_dmatrix(t.name()),
        None => Ok(t.get(theta0).clone()),
    }
}

impl RegularizerDoc {
    pub fn build(&self, theta0: &ParameterSet) -> CliResult<Regularizer> {
        let mut terms = Vec::new();
        for term in &self.terms {
            let entry = match term {
                TermDoc::None { .. } => continue,
                TermDoc::QuadDeviation { target, weight, nominal } => (
                    *target,
                    Penalty::QuadDeviation { nominal: nominal_or(nominal, *target, theta0)?, weight: *weight },
                ),
                TermDoc::OffdiagQuad { target, weight } => (*target, Penalty::OffdiagQuad { weight: *weight }),
                TermDoc::Nuclear { target, weight } => (*target, Penalty::Nuclear { weight: *weight }),
            };
            terms.push((entry.0.into(), entry.1));
        }
        let mut constraints = Vec::new();
        for c in &self.constraints {
            let (target, constraint) = match c {
                ConstraintDoc::Fixed { target, nominal } => {
                    (*target, Constraint::Fixed(nominal_or(nominal, *target, theta0)?))
                }
                ConstraintDoc::FixedEntries { target, entries, nominal } => (
                    *target,
                    Constraint::FixedEntries {
                        entries: entries.iter().map(|&[i, j]| (i, j)).collect(),
                        nominal: nominal_or(nominal, *target, theta0)?,
                    },
                ),
                ConstraintDoc::Box { target, rho, nominal } => (
                    *target,
                    Constraint::Box { nominal: nominal_or(nominal, *target, theta0)?, rho: *rho },
                ),
                ConstraintDoc::Nonneg { target } => (*target, Constraint::Nonneg),
                ConstraintDoc::DiagonalNonneg { target } => (*target, Constraint::DiagonalNonneg),
                ConstraintDoc::Symmetric { target } => (*target, Constraint::Symmetric),
            };
            constraints.push((target.into(), constraint));
        }
        let reg = Regularizer::new(terms, constraints)?;
        reg.eval(theta0)?;
        Ok(reg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitDoc {
    pub mask_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitDoc {
    fn default() -> Self {
        Self { mask_frac: 0.2, test_frac: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneDoc {
    pub t0: f64,
    pub n_iter: usize,
    pub eps: f64,
}

impl Default for TuneDoc {
    fn default() -> Self {
        Self { t0: 1e-4, n_iter: 50, eps: 1e-6 }
    }
}

/// Covariance given as a full matrix or as a variance times the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseDoc {
    Variance(f64),
    Matrix(Matrix),
}

impl NoiseDoc {
    fn to_dmatrix(&self, dim: usize, what: &str) -> CliResult<DMatrix<f64>> {
        match self {
            Self::Variance(v) => Ok(DMatrix::identity(dim, dim) * *v),
            Self::Matrix(m) => m.to_dmatrix(what),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemDoc {
    Random { n: usize, p: usize, spectral_radius: f64 },
    DoubleIntegrator { h: f64 },
    MigrationLike { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum MisspecDoc {
    #[serde(rename = "scale_W")]
    ScaleW { gamma: f64 },
    #[serde(rename = "scale_V")]
    ScaleV { gamma: f64 },
    #[serde(rename = "perturb_A")]
    PerturbA { sigma: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateDoc {
    pub system: SystemDoc,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "W")]
    pub w: NoiseDoc,
    #[serde(rename = "V")]
    pub v: NoiseDoc,
    pub seed: u64,
    pub known_frac: f64,
    /// Applied in order to the true parameters to produce a starting point.
    pub misspecify: Vec<MisspecDoc>,
}

impl Default for SimulateDoc {
    fn default() -> Self {
        Self {
            system: SystemDoc::DoubleIntegrator { h: 0.01 },
            t: 200,
            w: NoiseDoc::Variance(1.0),
            v: NoiseDoc::Variance(1.0),
            seed: 0,
            known_frac: 1.0,
            misspecify: Vec::new(),
        }
    }
}

impl SimulateDoc {
    pub fn spec(&self) -> CliResult<SimSpec> {
        let kind = match self.system {
            SystemDoc::Random { n, p, spectral_radius } => SimKind::Random { n, p, spectral_radius },
            SystemDoc::DoubleIntegrator { h } => SimKind::DoubleIntegrator { h },
            SystemDoc::MigrationLike { n } => SimKind::MigrationLike { n },
        };
        let mut spec = SimSpec {
            kind,
            T: self.t,
            W: DMatrix::zeros(0, 0),
            V: DMatrix::zeros(0, 0),
            seed: self.seed,
            known_frac: self.known_frac,
        };
        let (n, p) = spec.dims();
        spec.W = self.w.to_dmatrix(n, "W")?;
        spec.V = self.v.to_dmatrix(p, "V")?;
        Ok(spec)
    }

    pub fn misspecifications(&self) -> CliResult<Vec<Misspecification>> {
        self.misspecify
            .iter()
            .map(|m| match *m {
                MisspecDoc::ScaleW { gamma } | MisspecDoc::ScaleV { gamma } if !(gamma > 0.0) => {
                    Err(CliError::config(format!("misspecification gamma {gamma} must be positive")))
                }
                MisspecDoc::ScaleW { gamma } => Ok(Misspecification::ScaleW(gamma)),
                MisspecDoc::ScaleV { gamma } => Ok(Misspecification::ScaleV(gamma)),
                MisspecDoc::PerturbA { sigma, seed } => Ok(Misspecification::PerturbA { sigma, seed }),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchDoc {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "T_grid")]
    pub t_grid: Vec<usize>,
    pub runs: usize,
    pub mask_frac: f64,
    pub seed: u64,
}

impl Default for BenchDoc {
    fn default() -> Self {
        Self { n: 10, p: 10, t_grid: vec![1000, 2000, 4000, 8000], runs: 10, mask_frac: 0.2, seed: 0 }
    }
}
