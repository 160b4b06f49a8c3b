//! Parameters, measurements and smoother outputs.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::entries::{Entry, EntrySet};
use crate::error::{Error, Result};

/// The tunable smoother parameters `(A, W^{-1/2}, C, V^{-1/2})`.
///
/// `A` and `Wisqrt` are `n x n`, `C` is `p x n`, `Visqrt` is `p x p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub A: DMatrix<f64>,
    pub Wisqrt: DMatrix<f64>,
    pub C: DMatrix<f64>,
    pub Visqrt: DMatrix<f64>,
}

fn shape_err(field: &'static str, expected: (usize, usize), found: (usize, usize)) -> Error {
    Error::DimensionMismatch {
        field,
        expected: format!("{}x{}", expected.0, expected.1),
        found: format!("{}x{}", found.0, found.1),
    }
}

impl ParameterSet {
    /// Builds a parameter set, checking shapes and finiteness.
    pub fn new(
        A: DMatrix<f64>,
        Wisqrt: DMatrix<f64>,
        C: DMatrix<f64>,
        Visqrt: DMatrix<f64>,
    ) -> Result<Self> {
        let params = Self { A, Wisqrt, C, Visqrt };
        params.check()?;
        Ok(params)
    }

    /// Verifies the shape and finiteness invariants.
    pub fn check(&self) -> Result<()> {
        let n = self.A.nrows();
        if self.A.ncols() != n {
            return Err(shape_err("A", (n, n), self.A.shape()));
        }
        if self.Wisqrt.shape() != (n, n) {
            return Err(shape_err("Wisqrt", (n, n), self.Wisqrt.shape()));
        }
        let p = self.C.nrows();
        if self.C.ncols() != n {
            return Err(shape_err("C", (p, n), self.C.shape()));
        }
        if self.Visqrt.shape() != (p, p) {
            return Err(shape_err("Visqrt", (p, p), self.Visqrt.shape()));
        }
        if n == 0 || p == 0 {
            return Err(Error::DimensionMismatch {
                field: "A",
                expected: "n >= 1 and p >= 1".into(),
                found: format!("n={n}, p={p}"),
            });
        }
        for (name, m) in self.named() {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.A.nrows()
    }

    pub fn p(&self) -> usize {
        self.C.nrows()
    }

    /// The four matrices with their names, in canonical order.
    pub fn named(&self) -> [(&'static str, &DMatrix<f64>); 4] {
        [
            ("A", &self.A),
            ("Wisqrt", &self.Wisqrt),
            ("C", &self.C),
            ("Visqrt", &self.Visqrt),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut DMatrix<f64>); 4] {
        [
            ("A", &mut self.A),
            ("Wisqrt", &mut self.Wisqrt),
            ("C", &mut self.C),
            ("Visqrt", &mut self.Visqrt),
        ]
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattens `(A, Wisqrt, C, Visqrt)`, each in column-major order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (_, m) in self.named() {
            out.extend_from_slice(m.as_slice());
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat), reusing the shapes of `self`.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.len(), "flat parameter length");
        let mut out = self.clone();
        let mut offset = 0;
        for (_, m) in out.named_mut() {
            let len = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        out
    }
}

/// A `T x p` array of scalar outputs, each either measured or missing.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    T: usize,
    p: usize,
    values: Vec<Option<f64>>,
    known: EntrySet,
}

impl MeasurementSet {
    /// Builds a measurement set from a row-major `T x p` array where `None`
    /// marks a missing value.
    pub fn from_rows(T: usize, p: usize, values: Vec<Option<f64>>) -> Result<Self> {
        if T == 0 || p == 0 {
            return Err(Error::DimensionMismatch {
                field: "measurements",
                expected: "T >= 1 and p >= 1".into(),
                found: format!("T={T}, p={p}"),
            });
        }
        if values.len() != T * p {
            return Err(Error::DimensionMismatch {
                field: "measurements",
                expected: format!("{} values", T * p),
                found: format!("{} values", values.len()),
            });
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurements"));
        }
        let known = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_some())
            .map(|(k, _)| Entry::new(k / p, k % p))
            .collect();
        Ok(Self { T, p, values, known })
    }

    /// Builds a fully known measurement set from `T` rows of length `p`.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let T = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                field: "measurements",
                expected: format!("{p} columns"),
                found: format!("{} columns in row {bad}", rows[bad].len()),
            });
        }
        Self::from_rows(T, p, rows.iter().flatten().map(|&v| Some(v)).collect())
    }

    pub fn len_t(&self) -> usize {
        self.T
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        if t < self.T && i < self.p {
            self.values[t * self.p + i]
        } else {
            None
        }
    }

    pub fn value(&self, e: Entry) -> Option<f64> {
        self.get(e.t, e.i)
    }

    /// Row-major values, `None` for missing.
    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn known(&self) -> &EntrySet {
        &self.known
    }

    /// Copy with every entry outside `keep` marked missing.
    pub fn restricted_to(&self, keep: &EntrySet) -> Self {
        let mut values = alloc::vec![None; self.values.len()];
        for e in keep.iter().filter(|e| e.t < self.T && e.i < self.p) {
            values[e.t * self.p + e.i] = self.values[e.t * self.p + e.i];
        }
        let known = keep.iter().copied().filter(|e| self.value(*e).is_some()).collect();
        Self {
            T: self.T,
            p: self.p,
            values,
            known,
        }
    }

    /// Checks that every entry of `set` lies inside the `T x p` grid.
    pub fn check_bounds(&self, set: &EntrySet) -> Result<()> {
        match set.iter().find(|e| e.t >= self.T || e.i >= self.p) {
            Some(e) => Err(Error::IndexOutOfBounds {
                t: e.t,
                i: e.i,
                rows: self.T,
                cols: self.p,
            }),
            None => Ok(()),
        }
    }
}

/// Output of a smoothing solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherSolution {
    /// `T x n` state estimates.
    pub xhat: DMatrix<f64>,
    /// `T x p` output estimates.
    pub yhat: DMatrix<f64>,
    /// `(x_1, ..., x_T, y_1, ..., y_T)` flattened, length `T(n+p)`.
    pub z: Vec<f64>,
    /// Residual `Dz` as returned by the KKT solve, length `T(n+p) - n`.
    pub v: Vec<f64>,
    /// Multipliers of the equality constraints.
    pub eta: Vec<f64>,
}

impl SmootherSolution {
    /// Splits a flat `z` into the `xhat` and `yhat` tables.
    pub fn from_parts(T: usize, n: usize, p: usize, z: Vec<f64>, v: Vec<f64>, eta: Vec<f64>) -> Self {
        debug_assert_eq!(z.len(), T * (n + p));
        let xhat = DMatrix::from_row_slice(T, n, &z[..T * n]);
        let yhat = DMatrix::from_row_slice(T, p, &z[T * n..]);
        Self { xhat, yhat, z, v, eta }
    }
}

/// Checks that `params` and `meas` have consistent dimensions.
pub fn validate_dims(params: &ParameterSet, meas: &MeasurementSet) -> Result<()> {
    params.check()?;
    if meas.p() != params.p() {
        return Err(Error::DimensionMismatch {
            field: "measurements.p",
            expected: format!("{}", params.p()),
            found: format!("{}", meas.p()),
        });
    }
    meas.check_bounds(meas.known())
}
