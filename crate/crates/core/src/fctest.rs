//! Fractal-connectivity tests: the HFBM test on δ̂ and the wavelet
//! coherence (WCF) baseline.

use crate::dwt::{wavelet_variance, WaveletPyramid};
use serde::{Serialize, Serializer};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

/// Fewest H0 replications accepted for calibrating a significance level.
pub const MIN_CALIBRATION_REPS: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum TestError {
    #[error("variance {0} must be positive")]
    InvalidVariance(f64),
    #[error("significance {0} outside (0, 1)")]
    InvalidSignificance(f64),
    #[error("coherence {gamma} at octave {j} has magnitude >= 1")]
    DegenerateCoherence { j: usize, gamma: f64 },
    #[error("octave {j} has {count} coefficients, need more than 3")]
    TooFewCoefficients { j: usize, count: usize },
    #[error("coherence test needs at least two octaves")]
    TooFewOctaves,
    #[error("{0} replications are too few to calibrate (need {MIN_CALIBRATION_REPS})")]
    TooFewReplications(usize),
    #[error("target rate {0} outside (0, 1)")]
    InvalidTarget(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hfbm,
    Wcf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Reject,
    Keep,
}

fn one_based<S: Serializer>(p: &(usize, usize), s: S) -> Result<S::Ok, S::Error> {
    [p.0 + 1, p.1 + 1].serialize(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestReport {
    #[serde(serialize_with = "one_based")]
    pub pair: (usize, usize),
    pub method: Method,
    pub stat: f64,
    #[serde(rename = "var", skip_serializing_if = "Option::is_none")]
    pub variance_used: Option<f64>,
    pub p: f64,
    pub s: f64,
    pub decision: Decision,
}

fn check_significance(s: f64) -> Result<(), TestError> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(TestError::InvalidSignificance(s))
    }
}

fn decide(p: f64, s: f64) -> Decision {
    if p < s {
        Decision::Reject
    } else {
        Decision::Keep
    }
}

/// Two-sided Gaussian test of δ = 0: p = 2Φ(−|δ̂|/√Var).
pub fn hfbm_test(pair: (usize, usize), delta_hat: f64, var_delta: f64, s: f64) -> Result<TestReport, TestError> {
    check_significance(s)?;
    if !(var_delta > 0.0) || !var_delta.is_finite() {
        return Err(TestError::InvalidVariance(var_delta));
    }
    let stat = delta_hat / var_delta.sqrt();
    let p = (2.0 * Normal::standard().cdf(-stat.abs())).clamp(0.0, 1.0);
    Ok(TestReport { pair, method: Method::Hfbm, stat, variance_used: Some(var_delta), p, s, decision: decide(p, s) })
}

/// Rejection threshold on |δ̂| at level s: √Var · Φ^{-1}(1 − s/2).
pub fn hfbm_threshold(var_delta: f64, s: f64) -> f64 {
    var_delta.sqrt() * Normal::standard().inverse_cdf(1.0 - s / 2.0)
}

/// Equality-of-means test on Fisher-transformed per-octave coherences.
pub fn wcf_test(pyr: &WaveletPyramid, pair: (usize, usize), s: f64) -> Result<TestReport, TestError> {
    check_significance(s)?;
    if pyr.octaves.len() < 2 {
        return Err(TestError::TooFewOctaves);
    }
    let (a, b) = pair;
    let saa = wavelet_variance(pyr, a, a);
    let sbb = wavelet_variance(pyr, b, b);
    let sab = wavelet_variance(pyr, a, b);
    let mut z = Vec::with_capacity(pyr.octaves.len());
    let mut inv_v = Vec::with_capacity(pyr.octaves.len());
    for (i, o) in pyr.octaves.iter().enumerate() {
        if o.count <= 3 {
            return Err(TestError::TooFewCoefficients { j: o.j, count: o.count });
        }
        let gamma = sab[i] / (saa[i] * sbb[i]).sqrt();
        if !(gamma.abs() < 1.0) {
            return Err(TestError::DegenerateCoherence { j: o.j, gamma });
        }
        z.push(gamma.atanh());
        inv_v.push(o.count as f64 - 3.0);
    }
    let zbar = z.iter().zip(&inv_v).map(|(z, w)| z * w).sum::<f64>() / inv_v.iter().sum::<f64>();
    let stat: f64 = z.iter().zip(&inv_v).map(|(z, w)| (z - zbar).powi(2) * w).sum();
    let dof = (z.len() - 1) as f64;
    let p = ChiSquared::new(dof).expect("positive dof").sf(stat).clamp(0.0, 1.0);
    Ok(TestReport { pair, method: Method::Wcf, stat, variance_used: None, p, s, decision: decide(p, s) })
}

/// Calibrated level and the rejection rate it achieves on the H0 sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdjustedLevel {
    pub level: f64,
    pub achieved_size: f64,
}

/// Smallest H0 p-value quantile such that rejecting when p < s̃ rejects
/// ⌊target·R⌋ of the R stored replications (ties may reduce the count).
pub fn adjust_significance(p_values: &[f64], target: f64) -> Result<AdjustedLevel, TestError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(TestError::InvalidTarget(target));
    }
    let r = p_values.len();
    if r < MIN_CALIBRATION_REPS {
        return Err(TestError::TooFewReplications(r));
    }
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((target * r as f64).floor() as usize).min(r - 1);
    let level = sorted[k];
    let rejected = sorted.iter().filter(|&&p| p < level).count();
    Ok(AdjustedLevel { level, achieved_size: rejected as f64 / r as f64 })
}
