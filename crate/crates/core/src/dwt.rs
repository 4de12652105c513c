//! Daubechies filter bank and the decimated Mallat pyramid.

use crate::synth::MultiPath;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DwtError {
    #[error("unsupported number of vanishing moments {0} (only 2)")]
    Unsupported(usize),
    #[error("invalid octave range j1={j1}, j2={j2}")]
    InvalidRange { j1: usize, j2: usize },
    #[error("series of length {n} too short for octave {j2} (need {required})")]
    TooShort { n: usize, j2: usize, required: usize },
}

/// Orthonormal low/high-pass pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterBank {
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub n_vanishing: usize,
}

impl FilterBank {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Alignment of octave-j details: d_j(k) sits at sample 2^j k + o_j of
    /// the undecimated cascade output.
    pub fn offset(&self, j: usize) -> usize {
        (self.len() - 1) * ((1usize << j) - 1)
    }

    /// Number of valid coefficients at octave j for a series of length n.
    pub fn coefficient_count(&self, n: usize, j: usize) -> usize {
        let o = self.offset(j);
        if n < o + 1 {
            0
        } else {
            (n - 1 - o) / (1usize << j) + 1
        }
    }

    /// Equivalent single-rate filter g_j = ↑_{2^{j−1}}g ⋆ ↑_{2^{j−2}}h ⋆ … ⋆ h.
    pub fn cascade_filter(&self, j: usize) -> Vec<f64> {
        assert!(j >= 1);
        let mut acc = vec![1.0];
        for l in 0..j - 1 {
            acc = convolve(&acc, &upsample(&self.h, 1 << l));
        }
        convolve(&acc, &upsample(&self.g, 1 << (j - 1)))
    }
}

pub(crate) fn upsample(f: &[f64], factor: usize) -> Vec<f64> {
    let mut out = vec![0.0; (f.len() - 1) * factor + 1];
    for (i, &v) in f.iter().enumerate() {
        out[i * factor] = v;
    }
    out
}

pub(crate) fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (k, &y) in b.iter().enumerate() {
            out[i + k] += x * y;
        }
    }
    out
}

pub fn build_filters(n_vanishing: usize) -> Result<FilterBank, DwtError> {
    if n_vanishing != 2 {
        return Err(DwtError::Unsupported(n_vanishing));
    }
    let s3 = 3f64.sqrt();
    let d = 4.0 * std::f64::consts::SQRT_2;
    let h = vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d];
    let l = h.len();
    let g = (0..l).map(|k| if k % 2 == 0 { h[l - 1 - k] } else { -h[l - 1 - k] }).collect();
    Ok(FilterBank { h, g, n_vanishing })
}

/// Details of one octave, one row per component.
#[derive(Clone, Debug, PartialEq)]
pub struct Octave {
    pub j: usize,
    pub count: usize,
    pub coeffs: Vec<Vec<f64>>,
}

/// L1-normalized detail coefficients on octaves j1..=j2.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    pub m: usize,
    pub n: usize,
    pub j1: usize,
    pub j2: usize,
    pub octaves: Vec<Octave>,
}

impl WaveletPyramid {
    pub fn octave(&self, j: usize) -> &Octave {
        &self.octaves[j - self.j1]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.octaves.iter().map(|o| o.count).collect()
    }
}

/// (3, ⌊log2 n⌋ − 2).
pub fn default_octaves(n: usize) -> (usize, usize) {
    let log = usize::BITS as usize - 1 - n.max(1).leading_zeros() as usize;
    (3, log.saturating_sub(2))
}

/// Smallest series length accepted for octaves up to j2.
pub fn min_length(bank: &FilterBank, j2: usize) -> usize {
    (1usize << j2) * bank.len()
}

/// One analysis step with valid convolution and decimation by two.
fn analysis_step(x: &[f64], h: &[f64], g: &[f64], approx: &mut Vec<f64>, detail: &mut Vec<f64>) {
    let l = h.len();
    approx.clear();
    detail.clear();
    if x.len() < l {
        return;
    }
    let count = (x.len() - l) / 2 + 1;
    for k in 0..count {
        let t = 2 * k + l - 1;
        let (mut a, mut d) = (0.0, 0.0);
        for i in 0..l {
            let v = x[t - i];
            a += h[i] * v;
            d += g[i] * v;
        }
        approx.push(a);
        detail.push(d);
    }
}

pub fn transform(path: &MultiPath, j1: usize, j2: usize) -> Result<WaveletPyramid, DwtError> {
    transform_with(&build_filters(2)?, path, j1, j2)
}

pub fn transform_with(bank: &FilterBank, path: &MultiPath, j1: usize, j2: usize) -> Result<WaveletPyramid, DwtError> {
    if j1 < 1 || j2 < j1 || j2 >= usize::BITS as usize - 2 {
        return Err(DwtError::InvalidRange { j1, j2 });
    }
    let required = min_length(bank, j2);
    if path.n < required {
        return Err(DwtError::TooShort { n: path.n, j2, required });
    }
    let mut octaves: Vec<Octave> = (j1..=j2)
        .map(|j| Octave { j, count: bank.coefficient_count(path.n, j), coeffs: Vec::with_capacity(path.m) })
        .collect();
    let mut approx = Vec::new();
    let mut next = Vec::new();
    let mut detail = Vec::new();
    for q in 0..path.m {
        approx.clear();
        approx.extend_from_slice(path.row(q));
        for j in 1..=j2 {
            analysis_step(&approx, &bank.h, &bank.g, &mut next, &mut detail);
            std::mem::swap(&mut approx, &mut next);
            if j >= j1 {
                let scale = 2f64.powf(-(j as f64) / 2.0);
                let oct = &mut octaves[j - j1];
                debug_assert_eq!(detail.len(), oct.count);
                oct.coeffs.push(detail.iter().map(|v| v * scale).collect());
            }
        }
    }
    Ok(WaveletPyramid { m: path.m, n: path.n, j1, j2, octaves })
}

/// S^{(q1q2)}(2^j) = (1/n_j) Σ_k d_{q1}(j,k) d_{q2}(j,k) for each octave.
pub fn wavelet_variance(pyr: &WaveletPyramid, q1: usize, q2: usize) -> Vec<f64> {
    pyr.octaves
        .iter()
        .map(|o| {
            let (a, b) = (&o.coeffs[q1], &o.coeffs[q2]);
            let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            s / o.count as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path1(x: Vec<f64>) -> MultiPath {
        MultiPath::from_rows(vec![x]).unwrap()
    }

    #[test]
    fn filter_invariants() {
        let fb = build_filters(2).unwrap();
        let sh: f64 = fb.h.iter().sum();
        assert!((sh - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(fb.g.iter().sum::<f64>().abs() < 1e-12);
        let m1: f64 = fb.g.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
        assert!(m1.abs() < 1e-10);
        assert!((fb.h.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        let expect = [0.4829629131, 0.8365163037, 0.2241438680, -0.1294095226];
        for (a, b) in fb.h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn unsupported_order() {
        assert_eq!(build_filters(3), Err(DwtError::Unsupported(3)));
    }

    #[test]
    fn counts_follow_valid_convolution() {
        let fb = build_filters(2).unwrap();
        let p = path1((0..1000).map(|i| (i as f64 * 0.37).sin()).collect());
        let pyr = transform(&p, 1, 7).unwrap();
        for o in &pyr.octaves {
            assert_eq!(o.coeffs[0].len(), fb.coefficient_count(1000, o.j));
        }
        let c = pyr.counts();
        assert!(c.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn short_series_rejected() {
        let p = path1(vec![0.0; 100]);
        assert!(matches!(transform(&p, 1, 5), Err(DwtError::TooShort { .. })));
        assert!(matches!(transform(&p, 0, 2), Err(DwtError::InvalidRange { .. })));
    }

    #[test]
    fn default_range() {
        assert_eq!(default_octaves(1 << 14), (3, 12));
        assert_eq!(default_octaves(1500), (3, 8));
    }

    #[test]
    fn cascade_filter_has_vanishing_moments() {
        let fb = build_filters(2).unwrap();
        for j in 1..5 {
            let gj = fb.cascade_filter(j);
            assert_eq!(gj.len(), fb.offset(j) + 1);
            let m0: f64 = gj.iter().sum();
            let m1: f64 = gj.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
            assert!(m0.abs() < 1e-12 && m1.abs() < 1e-9);
        }
    }
}
