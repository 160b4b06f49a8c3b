//! Regularization functions, allowable parameter sets and their proximal
//! operators.
//!
//! A [`Regularizer`] attaches penalties and at most one constraint to each
//! of the four parameter matrices. All quadratic penalties are entrywise, so
//! any number of them on one matrix combine into a single per-entry
//! quadratic, and a componentwise constraint is then applied by projection
//! of the per-entry minimizer. The nuclear norm is handled by singular value
//! soft-thresholding and can only be combined with a fixed value.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::ParameterSet;

/// One of the four parameter matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamTarget {
    A,
    Wisqrt,
    C,
    Visqrt,
}

impl ParamTarget {
    pub const ALL: [ParamTarget; 4] = [Self::A, Self::Wisqrt, Self::C, Self::Visqrt];

    pub fn name(self) -> &'static str {
        match self {
            Self::A => "A",
            Self::Wisqrt => "Wisqrt",
            Self::C => "C",
            Self::Visqrt => "Visqrt",
        }
    }

    pub fn get(self, params: &ParameterSet) -> &DMatrix<f64> {
        match self {
            Self::A => &params.A,
            Self::Wisqrt => &params.Wisqrt,
            Self::C => &params.C,
            Self::Visqrt => &params.Visqrt,
        }
    }

    pub fn get_mut(self, params: &mut ParameterSet) -> &mut DMatrix<f64> {
        match self {
            Self::A => &mut params.A,
            Self::Wisqrt => &mut params.Wisqrt,
            Self::C => &mut params.C,
            Self::Visqrt => &mut params.Visqrt,
        }
    }
}

/// A penalty term of `r`.
#[derive(Debug, Clone, PartialEq)]
pub enum Penalty {
    /// `weight * ||X - nominal||_F^2`
    QuadDeviation { nominal: DMatrix<f64>, weight: f64 },
    /// `weight * sum_{i != j} X_ij^2`
    OffdiagQuad { weight: f64 },
    /// `weight * ||X||_*`
    Nuclear { weight: f64 },
}

impl Penalty {
    fn weight(&self) -> f64 {
        match self {
            Self::QuadDeviation { weight, .. } | Self::OffdiagQuad { weight } | Self::Nuclear { weight } => *weight,
        }
    }

    fn value(&self, x: &DMatrix<f64>) -> f64 {
        match self {
            Self::QuadDeviation { nominal, weight } => weight * (x - nominal).norm_squared(),
            Self::OffdiagQuad { weight } => {
                let mut s = 0.0;
                for j in 0..x.ncols() {
                    for i in 0..x.nrows() {
                        if i != j {
                            s += x[(i, j)] * x[(i, j)];
                        }
                    }
                }
                weight * s
            }
            Self::Nuclear { weight } => weight * nuclear_norm(x),
        }
    }
}

/// Membership constraint defining the allowable set for one matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `X = nominal`.
    Fixed(DMatrix<f64>),
    /// `X_ij = nominal_ij` for `(i, j)` in `entries`.
    FixedEntries { entries: Vec<(usize, usize)>, nominal: DMatrix<f64> },
    /// `|X_ij - nominal_ij| <= rho` for all entries.
    Box { nominal: DMatrix<f64>, rho: f64 },
    /// `X_ij >= 0`.
    Nonneg,
    /// Diagonal with nonnegative diagonal.
    DiagonalNonneg,
    /// `X = X^T`.
    Symmetric,
}

impl Constraint {
    fn contains(&self, x: &DMatrix<f64>) -> bool {
        match self {
            Self::Fixed(nominal) => x == nominal,
            Self::FixedEntries { entries, nominal } => entries.iter().all(|&e| x[e] == nominal[e]),
            Self::Box { nominal, rho } => x
                .iter()
                .zip(nominal.iter())
                .all(|(&v, &m)| v >= m - rho && v <= m + rho),
            Self::Nonneg => x.iter().all(|&v| v >= 0.0),
            Self::DiagonalNonneg => (0..x.ncols()).all(|j| {
                (0..x.nrows()).all(|i| if i == j { x[(i, j)] >= 0.0 } else { x[(i, j)] == 0.0 })
            }),
            Self::Symmetric => x.is_square() && *x == x.transpose(),
        }
    }

    /// Euclidean projection applied entrywise (or pairwise for symmetry).
    fn project(&self, x: &mut DMatrix<f64>) {
        match self {
            Self::Fixed(nominal) => x.copy_from(nominal),
            Self::FixedEntries { entries, nominal } => {
                for &e in entries {
                    x[e] = nominal[e];
                }
            }
            Self::Box { nominal, rho } => {
                for (v, &m) in x.iter_mut().zip(nominal.iter()) {
                    *v = v.clamp(m - rho, m + rho);
                }
            }
            Self::Nonneg => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Self::DiagonalNonneg => {
                for j in 0..x.ncols() {
                    for i in 0..x.nrows() {
                        x[(i, j)] = if i == j { x[(i, j)].max(0.0) } else { 0.0 };
                    }
                }
            }
            Self::Symmetric => {
                let sym = (&*x + x.transpose()) * 0.5;
                x.copy_from(&sym);
            }
        }
    }
}

/// Regularization function `r` together with the allowable set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Regularizer {
    terms: Vec<(ParamTarget, Penalty)>,
    constraints: Vec<(ParamTarget, Constraint)>,
}

impl Regularizer {
    /// `r = 0` and no constraints.
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(terms: Vec<(ParamTarget, Penalty)>, constraints: Vec<(ParamTarget, Constraint)>) -> Result<Self> {
        let reg = Self { terms, constraints };
        reg.validate()?;
        Ok(reg)
    }

    /// Adds a penalty term.
    pub fn with_penalty(mut self, target: ParamTarget, penalty: Penalty) -> Result<Self> {
        self.terms.push((target, penalty));
        self.validate()?;
        Ok(self)
    }

    /// Adds a constraint.
    pub fn with_constraint(mut self, target: ParamTarget, constraint: Constraint) -> Result<Self> {
        self.constraints.push((target, constraint));
        self.validate()?;
        Ok(self)
    }

    pub fn terms(&self) -> &[(ParamTarget, Penalty)] {
        &self.terms
    }

    pub fn constraints(&self) -> &[(ParamTarget, Constraint)] {
        &self.constraints
    }

    fn constraint_for(&self, target: ParamTarget) -> Option<&Constraint> {
        self.constraints.iter().find(|(t, _)| *t == target).map(|(_, c)| c)
    }

    fn penalties_for(&self, target: ParamTarget) -> impl Iterator<Item = &Penalty> {
        self.terms.iter().filter(move |(t, _)| *t == target).map(|(_, p)| p)
    }

    fn validate(&self) -> Result<()> {
        for (_, p) in &self.terms {
            let w = p.weight();
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidRegularizer(format!("weight {w} must be finite and nonnegative")));
            }
        }
        for target in ParamTarget::ALL {
            let constraints: Vec<_> = self.constraints.iter().filter(|(t, _)| *t == target).collect();
            if constraints.len() > 1 {
                return Err(Error::InvalidRegularizer(format!(
                    "{} has more than one constraint",
                    target.name()
                )));
            }
            if let Some((_, Constraint::Box { rho, .. })) = constraints.first() {
                if !(*rho > 0.0 && rho.is_finite()) {
                    return Err(Error::InvalidRegularizer(format!("box radius {rho} must be positive")));
                }
            }
            let penalties: Vec<_> = self.penalties_for(target).collect();
            let nuclear = penalties.iter().any(|p| matches!(p, Penalty::Nuclear { .. }));
            let fixed = matches!(constraints.first(), Some((_, Constraint::Fixed(_))));
            if nuclear && penalties.len() > 1 {
                return Err(Error::NonSeparableCombination {
                    target: target.name(),
                    detail: "nuclear norm combined with another penalty",
                });
            }
            if nuclear && !constraints.is_empty() && !fixed {
                return Err(Error::NonSeparableCombination {
                    target: target.name(),
                    detail: "nuclear norm combined with an entrywise constraint",
                });
            }
        }
        Ok(())
    }

    fn check_shapes(&self, params: &ParameterSet) -> Result<()> {
        let check = |target: ParamTarget, m: &DMatrix<f64>| {
            let want = target.get(params).shape();
            if m.shape() == want {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    field: target.name(),
                    expected: format!("{}x{}", want.0, want.1),
                    found: format!("{}x{}", m.nrows(), m.ncols()),
                })
            }
        };
        for (target, p) in &self.terms {
            if let Penalty::QuadDeviation { nominal, .. } = p {
                check(*target, nominal)?;
            }
        }
        for (target, c) in &self.constraints {
            match c {
                Constraint::Fixed(nominal) | Constraint::Box { nominal, .. } => check(*target, nominal)?,
                Constraint::FixedEntries { entries, nominal } => {
                    check(*target, nominal)?;
                    let (r, k) = nominal.shape();
                    if let Some(&(i, j)) = entries.iter().find(|&&(i, j)| i >= r || j >= k) {
                        return Err(Error::IndexOutOfBounds { t: i, i: j, rows: r, cols: k });
                    }
                }
                Constraint::Symmetric if !target.get(params).is_square() => {
                    return Err(Error::InvalidRegularizer(format!(
                        "{} is not square and cannot be symmetric",
                        target.name()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Whether `params` lies in the allowable set.
    pub fn contains(&self, params: &ParameterSet) -> bool {
        self.constraints.iter().all(|(t, c)| c.contains(t.get(params)))
    }

    /// `r(params)`, or `+inf` outside the allowable set.
    pub fn eval(&self, params: &ParameterSet) -> Result<f64> {
        self.check_shapes(params)?;
        if !self.contains(params) {
            return Ok(f64::INFINITY);
        }
        Ok(self.terms.iter().map(|(t, p)| p.value(t.get(params))).sum())
    }

    /// `argmin_{theta in Theta} t r(theta) + 1/2 ||theta - nu||^2`.
    pub fn prox(&self, t: f64, nu: &ParameterSet) -> Result<ParameterSet> {
        assert!(t > 0.0, "prox step must be positive");
        self.validate()?;
        self.check_shapes(nu)?;
        let mut out = nu.clone();
        for target in ParamTarget::ALL {
            let x = target.get_mut(&mut out);
            let constraint = self.constraint_for(target);
            if let Some(Constraint::Fixed(nominal)) = constraint {
                x.copy_from(nominal);
                continue;
            }
            let penalties: Vec<&Penalty> = self.penalties_for(target).collect();
            if let [Penalty::Nuclear { weight }] = penalties[..] {
                *x = singular_value_threshold(x, t * weight);
                continue;
            }
            prox_quadratic(x, t, &penalties);
            if let Some(c) = constraint {
                c.project(x);
            }
        }
        Ok(out)
    }
}

/// Per-entry minimizer of `t * sum_q w_q (x - a_q)^2 + (x - nu)^2 / 2`,
/// written as a correction to `nu` so that `nu = a` is reproduced exactly.
fn prox_quadratic(x: &mut DMatrix<f64>, t: f64, penalties: &[&Penalty]) {
    let (rows, cols) = x.shape();
    for j in 0..cols {
        for i in 0..rows {
            let nu = x[(i, j)];
            let mut denom = 1.0;
            let mut pull = 0.0;
            for p in penalties {
                match p {
                    Penalty::QuadDeviation { nominal, weight } => {
                        denom += 2.0 * t * weight;
                        pull += 2.0 * t * weight * (nominal[(i, j)] - nu);
                    }
                    Penalty::OffdiagQuad { weight } if i != j => {
                        denom += 2.0 * t * weight;
                        pull -= 2.0 * t * weight * nu;
                    }
                    _ => {}
                }
            }
            x[(i, j)] = nu + pull / denom;
        }
    }
}

pub fn nuclear_norm(x: &DMatrix<f64>) -> f64 {
    x.clone().singular_values().sum()
}

/// `U max(S - tau, 0) V^T`.
pub fn singular_value_threshold(x: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let mut svd = x.clone().svd(true, true);
    svd.singular_values.iter_mut().for_each(|s| *s = (*s - tau).max(0.0));
    svd.recompose().expect("both singular vector sets were computed")
}
