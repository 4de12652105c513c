//! Parameter types for Hadamard fractional Brownian motion and their
//! admissibility rules.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Slack used when comparing derived exponents against the connectivity bound.
const BOUND_SLACK: f64 = 1e-12;

/// Dense square matrix stored row-major. Serialized as nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            out.set(i, i, 1.0);
        }
        out
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    /// Builds a matrix from nested rows; fails when the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, String> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(format!("row {i} has {} entries, expected {dim}", row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    /// Sets both (i,j) and (j,i).
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.set(i, j, v);
        self.set(j, i, v);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim.max(1)).take(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// Applies a component relabeling: out(i,j) = self(perm[i], perm[j]).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::from_fn(self.dim, |i, j| self.get(perm[i], perm[j]))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl TryFrom<Vec<Vec<f64>>> for SquareMatrix {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_rows(&rows)
    }
}

impl From<SquareMatrix> for Vec<Vec<f64>> {
    fn from(m: SquareMatrix) -> Self {
        m.rows()
    }
}

/// Spectral regularization applied to the cross-components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularization {
    #[default]
    Ideal,
    /// Off-diagonal spectra multiplied by exp(-x^2).
    Gaussian,
}

/// Parameter set of an m-variate HfBm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HfBmModel {
    pub m: usize,
    pub h: SquareMatrix,
    pub rho: SquareMatrix,
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub regularization: Regularization,
}

/// Matrix of fractal-connectivity parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeltaMatrix(pub SquareMatrix);

impl DeltaMatrix {
    pub fn get(&self, q1: usize, q2: usize) -> f64 {
        self.0.get(q1, q2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    HurstRange,
    HurstSymmetry,
    ConnectivityBound,
    RhoDiagonal,
    RhoRange,
    RhoSymmetry,
    SigmaPositive,
    NotFinite,
}

/// One failed admissibility rule. `pair` uses 0-based component indices.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub pair: (usize, usize),
    pub constraint: Constraint,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pair ({}, {}): {}", self.pair.0 + 1, self.pair.1 + 1, self.detail)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("malformed model: {0}")]
    Parse(String),
    #[error("dimension mismatch: {0}")]
    Structure(String),
    #[error("inadmissible model: {}", format_violations(.0))]
    Inadmissible(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl HfBmModel {
    /// Bivariate ideal model from (α11, α22, δ12, ρ12) with unit amplitudes.
    pub fn bivariate(alpha11: f64, alpha22: f64, delta: f64, rho: f64) -> Self {
        let alpha12 = (alpha11 + alpha22) / 2.0 - delta;
        let h = SquareMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 0) => alpha11 / 2.0,
            (1, 1) => alpha22 / 2.0,
            _ => alpha12 / 2.0,
        });
        let rho_m = SquareMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { rho });
        Self { m: 2, h, rho: rho_m, sigma: vec![1.0, 1.0], regularization: Regularization::Ideal }
    }

    /// Univariate fBm with Hurst exponent `h` and unit amplitude.
    pub fn fbm(h: f64) -> Self {
        Self {
            m: 1,
            h: SquareMatrix::from_fn(1, |_, _| h),
            rho: SquareMatrix::identity(1),
            sigma: vec![1.0],
            regularization: Regularization::Ideal,
        }
    }

    pub fn with_regularization(mut self, r: Regularization) -> Self {
        self.regularization = r;
        self
    }

    #[inline]
    pub fn alpha(&self, q1: usize, q2: usize) -> f64 {
        2.0 * self.h.get(q1, q2)
    }

    pub fn alpha_matrix(&self) -> SquareMatrix {
        self.h.map(|v| 2.0 * v)
    }

    /// Parses and structurally checks a JSON model; admissibility is left to
    /// [`validate_model`].
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let model: HfBmModel = serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        check_structure(&model)?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Relabels components: component i of the result is component perm[i].
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            m: self.m,
            h: self.h.permuted(perm),
            rho: self.rho.permuted(perm),
            sigma: perm.iter().map(|&p| self.sigma[p]).collect(),
            regularization: self.regularization,
        }
    }
}

fn check_structure(model: &HfBmModel) -> Result<(), ModelError> {
    let m = model.m;
    if m == 0 {
        return Err(ModelError::Structure("m must be at least 1".into()));
    }
    if model.h.dim() != m {
        return Err(ModelError::Structure(format!("h is {0}x{0}, expected {m}x{m}", model.h.dim())));
    }
    if model.rho.dim() != m {
        return Err(ModelError::Structure(format!("rho is {0}x{0}, expected {m}x{m}", model.rho.dim())));
    }
    if model.sigma.len() != m {
        return Err(ModelError::Structure(format!("sigma has {} entries, expected {m}", model.sigma.len())));
    }
    Ok(())
}

/// Checks every admissibility rule and reports all failures at once.
pub fn validate_model(model: &HfBmModel) -> Result<(), ModelError> {
    check_structure(model)?;
    let m = model.m;
    let mut out = Vec::new();
    let mut push = |pair, constraint, detail: String| out.push(Violation { pair, constraint, detail });

    for q1 in 0..m {
        for q2 in q1..m {
            let h = model.h.get(q1, q2);
            let ht = model.h.get(q2, q1);
            let r = model.rho.get(q1, q2);
            let rt = model.rho.get(q2, q1);
            if !(h.is_finite() && ht.is_finite() && r.is_finite() && rt.is_finite()) {
                push((q1, q2), Constraint::NotFinite, "non-finite entry".into());
                continue;
            }
            if h != ht {
                push((q1, q2), Constraint::HurstSymmetry, format!("h{}{} != h{}{}", q1 + 1, q2 + 1, q2 + 1, q1 + 1));
            }
            if !(h > 0.0 && h < 1.0) {
                push((q1, q2), Constraint::HurstRange, format!("h = {h} outside (0, 1)"));
            }
            if r != rt {
                push((q1, q2), Constraint::RhoSymmetry, "rho not symmetric".into());
            }
            if q1 == q2 {
                if r != 1.0 {
                    push((q1, q2), Constraint::RhoDiagonal, format!("rho diagonal = {r}, expected 1"));
                }
            } else {
                if r.abs() > 1.0 {
                    push((q1, q2), Constraint::RhoRange, format!("|rho| = {} > 1", r.abs()));
                }
                let bound = (model.h.get(q1, q1) + model.h.get(q2, q2)) / 2.0;
                if h > bound + BOUND_SLACK {
                    push(
                        (q1, q2),
                        Constraint::ConnectivityBound,
                        format!(
                            "h{}{} = {h} > (h{}{} + h{}{})/2 = {bound}",
                            q1 + 1,
                            q2 + 1,
                            q1 + 1,
                            q1 + 1,
                            q2 + 1,
                            q2 + 1
                        ),
                    );
                }
            }
        }
        let s = model.sigma[q1];
        if !(s.is_finite() && s > 0.0) {
            push((q1, q1), Constraint::SigmaPositive, format!("sigma{} = {s} must be positive", q1 + 1));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(ModelError::Inadmissible(out))
    }
}

/// δ_{q1q2} = (α_{q1q1} + α_{q2q2})/2 − α_{q1q2} with α = 2h.
pub fn delta_of(model: &HfBmModel) -> DeltaMatrix {
    DeltaMatrix(delta_from_alpha(&model.alpha_matrix()))
}

/// Entry-wise δ from an exponent matrix, diagonal forced to zero.
pub fn delta_from_alpha(alpha: &SquareMatrix) -> SquareMatrix {
    SquareMatrix::from_fn(alpha.dim(), |i, j| {
        if i == j {
            0.0
        } else {
            (alpha.get(i, i) + alpha.get(j, j)) / 2.0 - alpha.get(i, j)
        }
    })
}
