//! Log-regression estimators of the scaling exponents.

use crate::dwt::{build_filters, transform, wavelet_variance, DwtError, WaveletPyramid};
use crate::model::{delta_from_alpha, SquareMatrix};
use crate::synth::MultiPath;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("invalid regression range j1={j1}, j2={j2}")]
    InvalidRange { j1: usize, j2: usize },
    #[error("pyramid covers octaves {have:?}, weights need {need:?}")]
    RangeNotCovered { have: (usize, usize), need: (usize, usize) },
    #[error("wavelet variance of pair ({}, {}) vanishes at octave {j}", .pair.0 + 1, .pair.1 + 1)]
    DegenerateVariance { pair: (usize, usize), j: usize },
    #[error("component {} has constant increments", .0 + 1)]
    DegenerateInput(usize),
    #[error("series of length {0} too short")]
    TooShort(usize),
    #[error(transparent)]
    Dwt(#[from] DwtError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    /// Per-octave weights proportional to the coefficient counts n_j of a
    /// series of length n.
    ByCount(usize),
    /// ByCount with n taken from the analyzed series.
    #[default]
    ByCountAuto,
}

impl Weighting {
    pub fn resolve(self, n: usize) -> Self {
        match self {
            Weighting::ByCountAuto => Weighting::ByCount(n),
            w => w,
        }
    }
}

/// Slope functional: Σ w_j = 0 and Σ j w_j = 1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegressionWeights {
    pub j1: usize,
    pub j2: usize,
    pub w: Vec<f64>,
}

impl RegressionWeights {
    pub fn weight(&self, j: usize) -> f64 {
        self.w[j - self.j1]
    }

    /// Applies the slope functional to values indexed by octave j1..=j2.
    pub fn slope(&self, ys: &[f64]) -> f64 {
        self.w.iter().zip(ys).map(|(w, y)| w * y).sum()
    }
}

pub fn regression_weights(j1: usize, j2: usize, weighting: Weighting) -> Result<RegressionWeights, EstimateError> {
    if j2 <= j1 || j1 < 1 {
        return Err(EstimateError::InvalidRange { j1, j2 });
    }
    let js: Vec<f64> = (j1..=j2).map(|j| j as f64).collect();
    let v: Vec<f64> = match weighting {
        Weighting::Uniform => vec![1.0; js.len()],
        Weighting::ByCount(n) => {
            let fb = build_filters(2)?;
            (j1..=j2).map(|j| fb.coefficient_count(n, j) as f64).collect()
        }
        Weighting::ByCountAuto => return Err(EstimateError::InvalidRange { j1, j2 }),
    };
    let s0: f64 = v.iter().sum();
    let jbar = v.iter().zip(&js).map(|(a, j)| a * j).sum::<f64>() / s0;
    let denom: f64 = v.iter().zip(&js).map(|(a, j)| a * (j - jbar).powi(2)).sum();
    if !(denom > 0.0) {
        return Err(EstimateError::InvalidRange { j1, j2 });
    }
    let w = v.iter().zip(&js).map(|(a, j)| a * (j - jbar) / denom).collect();
    Ok(RegressionWeights { j1, j2, w })
}

/// Estimated exponent, connectivity and correlation matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingEstimate {
    pub alpha: SquareMatrix,
    pub delta: SquareMatrix,
    pub rho: SquareMatrix,
    pub j1: usize,
    pub j2: usize,
    pub n: usize,
}

/// α̂_{q1q2} = Σ_j w_j log2 |S^{(q1q2)}(2^j)| for every pair.
pub fn estimate_alpha(pyr: &WaveletPyramid, weights: &RegressionWeights) -> Result<SquareMatrix, EstimateError> {
    if weights.j1 < pyr.j1 || weights.j2 > pyr.j2 {
        return Err(EstimateError::RangeNotCovered { have: (pyr.j1, pyr.j2), need: (weights.j1, weights.j2) });
    }
    let lo = weights.j1 - pyr.j1;
    let mut alpha = SquareMatrix::zeros(pyr.m);
    for q1 in 0..pyr.m {
        for q2 in q1..pyr.m {
            let s = wavelet_variance(pyr, q1, q2);
            let mut logs = Vec::with_capacity(weights.w.len());
            for (i, v) in s[lo..lo + weights.w.len()].iter().enumerate() {
                let a = v.abs();
                if !(a > 0.0) || !a.is_finite() {
                    return Err(EstimateError::DegenerateVariance { pair: (q1, q2), j: weights.j1 + i });
                }
                logs.push(a.log2());
            }
            alpha.set_sym(q1, q2, weights.slope(&logs));
        }
    }
    Ok(alpha)
}

/// δ̂ = (α̂_{q1q1} + α̂_{q2q2})/2 − α̂_{q1q2}, zero diagonal.
pub fn estimate_delta(alpha: &SquareMatrix) -> SquareMatrix {
    delta_from_alpha(alpha)
}

/// Pearson correlation of first differences, unit diagonal.
pub fn estimate_rho(path: &MultiPath) -> Result<SquareMatrix, EstimateError> {
    if path.n < 3 {
        return Err(EstimateError::TooShort(path.n));
    }
    let centered: Vec<Vec<f64>> = (0..path.m)
        .map(|q| {
            let d = path.increments(q);
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            d.into_iter().map(|v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centered.iter().map(|d| d.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    for (q, &s) in norms.iter().enumerate() {
        if !(s > 0.0) {
            return Err(EstimateError::DegenerateInput(q));
        }
    }
    let mut rho = SquareMatrix::identity(path.m);
    for q1 in 0..path.m {
        for q2 in q1 + 1..path.m {
            let c: f64 = centered[q1].iter().zip(&centered[q2]).map(|(a, b)| a * b).sum();
            rho.set_sym(q1, q2, (c / (norms[q1] * norms[q2])).clamp(-1.0, 1.0));
        }
    }
    Ok(rho)
}

/// Transform, regression and correlation estimates in one pass.
pub fn analyze(
    path: &MultiPath,
    j1: usize,
    j2: usize,
    weighting: Weighting,
) -> Result<(ScalingEstimate, WaveletPyramid), EstimateError> {
    let weights = regression_weights(j1, j2, weighting.resolve(path.n))?;
    let pyr = transform(path, j1, j2)?;
    let alpha = estimate_alpha(&pyr, &weights)?;
    let rho = estimate_rho(path)?;
    let delta = estimate_delta(&alpha);
    Ok((ScalingEstimate { alpha, delta, rho, j1, j2, n: path.n }, pyr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dwt::{Octave, WaveletPyramid};

    fn synthetic_pyramid(values: &[f64], j1: usize) -> WaveletPyramid {
        // single coefficient per octave with d² equal to the requested S
        let octaves = values
            .iter()
            .enumerate()
            .map(|(i, &s)| Octave { j: j1 + i, count: 1, coeffs: vec![vec![s.sqrt()]] })
            .collect();
        WaveletPyramid { m: 1, n: 0, j1, j2: j1 + values.len() - 1, octaves }
    }

    #[test]
    fn uniform_weights() {
        let w = regression_weights(1, 3, Weighting::Uniform).unwrap();
        for (a, b) in w.w.iter().zip([-0.5, 0.0, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = regression_weights(1, 2, Weighting::Uniform).unwrap();
        assert_eq!(w.w, vec![-1.0, 1.0]);
        assert!(regression_weights(3, 3, Weighting::Uniform).is_err());
    }

    #[test]
    fn count_weights_satisfy_constraints() {
        for &(j1, j2, n) in &[(3usize, 8usize, 1usize << 10), (2, 5, 1 << 10), (2, 11, 1 << 16)] {
            let w = regression_weights(j1, j2, Weighting::ByCount(n)).unwrap();
            let s0: f64 = w.w.iter().sum();
            let s1: f64 = w.w.iter().enumerate().map(|(i, v)| (j1 + i) as f64 * v).sum();
            assert!(s0.abs() < 1e-12 && (s1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_power_law() {
        let w = regression_weights(1, 3, Weighting::Uniform).unwrap();
        for &c in &[1.0, 7.3, 1e-4] {
            let pyr = synthetic_pyramid(&[c * 2f64.powf(0.8), c * 2f64.powf(1.6), c * 2f64.powf(2.4)], 1);
            let a = estimate_alpha(&pyr, &w).unwrap();
            assert!((a.get(0, 0) - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let w = regression_weights(1, 2, Weighting::Uniform).unwrap();
        let pyr = synthetic_pyramid(&[1.0, 0.0], 1);
        assert!(matches!(estimate_alpha(&pyr, &w), Err(EstimateError::DegenerateVariance { j: 2, .. })));
    }

    #[test]
    fn delta_examples() {
        let a = SquareMatrix::from_rows(&[vec![0.4, 0.4], vec![0.4, 0.8]]).unwrap();
        assert!((estimate_delta(&a).get(0, 1) - 0.2).abs() < 1e-15);
        let same = SquareMatrix::from_fn(3, |_, _| 0.7);
        assert!(estimate_delta(&same).as_slice().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn rho_of_identical_and_opposite() {
        let x: Vec<f64> = (0..50).map(|i| ((i * i) as f64 * 0.1).sin()).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let p = MultiPath::from_rows(vec![x.clone(), x.clone(), neg]).unwrap();
        let r = estimate_rho(&p).unwrap();
        assert!((r.get(0, 1) - 1.0).abs() < 1e-14);
        assert!((r.get(0, 2) + 1.0).abs() < 1e-14);
        let flat = MultiPath::from_rows(vec![x, (0..50).map(|i| i as f64).collect()]).unwrap();
        assert_eq!(estimate_rho(&flat), Err(EstimateError::DegenerateInput(1)));
    }
}
