//! Increment covariances and exact Gaussian synthesis by multivariate
//! circulant embedding.

use crate::model::{validate_model, HfBmModel, ModelError, Regularization, SquareMatrix};
use crate::special::hyp1f1_neg;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use statrs::function::gamma::gamma;
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

/// Relative PSD tolerance against the largest diagonal spectral value.
pub const PSD_REL_TOL: f64 = 1e-10;
/// Relative tolerance of the Hermitian check on spectral matrices.
pub const HERMITIAN_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("path length {0} too short, need n >= 2")]
    TooShort(usize),
    #[error("embedding not positive semidefinite: eigenvalue {min_eigenvalue:e} at frequency {frequency_index}")]
    EmbeddingNotPsd { min_eigenvalue: f64, frequency_index: usize },
    #[error("cross-covariance series at lag {lag} did not converge (relative tail {achieved:e})")]
    NotConverged { lag: usize, achieved: f64 },
    #[error("spectral matrix at frequency {frequency_index} not Hermitian (defect {defect:e})")]
    NotHermitian { frequency_index: usize, defect: f64 },
}

/// γ(s,t) = ρσσ (|s|^α + |t|^α − |s−t|^α).
pub fn fbm_cross_covariance(s: f64, t: f64, alpha: f64, rho_sigma: f64) -> f64 {
    rho_sigma * (s.abs().powf(alpha) + t.abs().powf(alpha) - (s - t).abs().powf(alpha))
}

/// Second difference of |τ|^α: |τ+1|^α − 2|τ|^α + |τ−1|^α.
fn ideal_increment(tau: f64, alpha: f64) -> f64 {
    (tau + 1.0).abs().powf(alpha) - 2.0 * tau.abs().powf(alpha) + (tau - 1.0).abs().powf(alpha)
}

/// Spectral normalization making the regularized covariance reduce to the
/// time-domain form when the regularization is removed.
fn spectral_constant(alpha: f64) -> f64 {
    gamma(alpha + 1.0) * (PI * alpha / 2.0).sin() / PI
}

/// ∫ (1 − cos ux) |x|^{−(α+1)} e^{−x²} dx over the real line.
fn gaussian_structure(u: f64, alpha: f64) -> Result<f64, f64> {
    if u == 0.0 {
        return Ok(0.0);
    }
    let a = -alpha / 2.0;
    let m = hyp1f1_neg(a, 0.5, u * u / 4.0).map_err(|e| e.achieved)?;
    Ok(gamma(a) * (1.0 - m))
}

/// Increment cross-covariance at lag τ under Gaussian spectral
/// regularization, scaled by ρσσ = 1.
pub fn gaussian_increment(tau: usize, alpha: f64) -> Result<f64, f64> {
    let t = tau as f64;
    let plus = gaussian_structure(t + 1.0, alpha)?;
    let zero = gaussian_structure(t, alpha)?;
    let minus = gaussian_structure((t - 1.0).abs(), alpha)?;
    Ok(spectral_constant(alpha) * (plus + minus - 2.0 * zero))
}

/// Lag-indexed covariance of the increment process (τ ≥ 0 stored).
#[derive(Clone, Debug)]
pub struct IncrementCovariance {
    pub m: usize,
    pub lags: Vec<SquareMatrix>,
    pub model: HfBmModel,
}

impl IncrementCovariance {
    /// C(τ) for signed τ, using C(−τ) = C(τ)ᵀ.
    pub fn at(&self, tau: i64) -> Option<SquareMatrix> {
        let c = self.lags.get(tau.unsigned_abs() as usize)?;
        Some(if tau >= 0 { c.clone() } else { SquareMatrix::from_fn(self.m, |i, j| c.get(j, i)) })
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }
}

/// Covariance of the increments for lags 0..n−1.
pub fn increment_covariance(model: &HfBmModel, n: usize) -> Result<IncrementCovariance, SynthError> {
    if n < 2 {
        return Err(SynthError::TooShort(n));
    }
    covariance_lags(model, n)
}

/// Covariance sequence embedded by [`CmeSynthesizer`] for paths of length n:
/// lags 0..=M/2 with M the embedding length.
pub fn embedding_covariance(model: &HfBmModel, n: usize) -> Result<IncrementCovariance, SynthError> {
    if n < 2 {
        return Err(SynthError::TooShort(n));
    }
    covariance_lags(model, embed_len_for(n - 1) / 2 + 1)
}

fn covariance_lags(model: &HfBmModel, count: usize) -> Result<IncrementCovariance, SynthError> {
    validate_model(model)?;
    let m = model.m;
    let mut lags: Vec<SquareMatrix> = (0..count).map(|_| SquareMatrix::zeros(m)).collect();
    for q1 in 0..m {
        for q2 in q1..m {
            let alpha = model.alpha(q1, q2);
            let scale = model.rho.get(q1, q2) * model.sigma[q1] * model.sigma[q2];
            let gaussian = q1 != q2 && model.regularization == Regularization::Gaussian;
            for (tau, c) in lags.iter_mut().enumerate() {
                let v = if gaussian {
                    gaussian_increment(tau, alpha)
                        .map_err(|achieved| SynthError::NotConverged { lag: tau, achieved })?
                } else {
                    ideal_increment(tau as f64, alpha)
                };
                c.set_sym(q1, q2, scale * v);
            }
        }
    }
    Ok(IncrementCovariance { m, lags, model: model.clone() })
}

/// Diagnostics of the circulant spectral factorization.
#[derive(Clone, Debug, Serialize)]
pub struct EmbeddingReport {
    pub embed_len: usize,
    pub tol_psd: f64,
    pub min_eigenvalue: Vec<f64>,
    pub psd: bool,
    pub offending: Vec<usize>,
    pub hermitian_defect: f64,
}

impl EmbeddingReport {
    pub fn global_min(&self) -> (usize, f64) {
        self.min_eigenvalue
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc })
    }
}

/// Mass removed by eigenvalue clipping.
#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct ClipSummary {
    pub clipped_frequencies: usize,
    pub clipped_mass: f64,
    pub relative_mass: f64,
}

fn embed_len_for(max_lag: usize) -> usize {
    (2 * max_lag).max(1).next_power_of_two()
}

/// Per-frequency Hermitian spectral matrices of the circulant extension.
struct Spectra {
    embed_len: usize,
    m: usize,
    /// entry (a,b) at frequency f stored at [f*m*m + a*m + b]
    data: Vec<Complex64>,
    hermitian_defect: f64,
    worst_frequency: usize,
    max_diag: f64,
}

fn spectra(cov: &IncrementCovariance) -> Spectra {
    let m = cov.m;
    let max_lag = cov.len().saturating_sub(1);
    let len = embed_len_for(max_lag);
    let half = len / 2;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let mut data = vec![Complex64::new(0.0, 0.0); len * m * m];
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for a in 0..m {
        for b in 0..m {
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for k in 0..=half.min(max_lag) {
                buf[k].re = cov.lags[k].get(a, b);
            }
            for k in 1..half.min(max_lag + 1) {
                buf[len - k].re = cov.lags[k].get(b, a);
            }
            fft.process(&mut buf);
            for (f, v) in buf.iter().enumerate() {
                data[f * m * m + a * m + b] = *v;
            }
        }
    }
    let mut max_diag: f64 = 0.0;
    for f in 0..len {
        for a in 0..m {
            max_diag = max_diag.max(data[f * m * m + a * m + a].re.abs());
        }
    }
    let scale = max_diag.max(f64::MIN_POSITIVE);
    let mut defect: f64 = 0.0;
    let mut worst = 0;
    for f in 0..len {
        let s = &data[f * m * m..(f + 1) * m * m];
        for a in 0..m {
            for b in a..m {
                let d = (s[a * m + b] - s[b * m + a].conj()).norm() / scale;
                if d > defect {
                    defect = d;
                    worst = f;
                }
            }
        }
    }
    Spectra { embed_len: len, m, data, hermitian_defect: defect, worst_frequency: worst, max_diag }
}

fn hermitian_at(sp: &Spectra, f: usize) -> DMatrix<Complex64> {
    let m = sp.m;
    let s = &sp.data[f * m * m..(f + 1) * m * m];
    DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            Complex64::new(s[a * m + a].re, 0.0)
        } else {
            (s[a * m + b] + s[b * m + a].conj()) * 0.5
        }
    })
}

fn eigen_at(sp: &Spectra, f: usize) -> (Vec<f64>, DMatrix<Complex64>) {
    if sp.m == 1 {
        return (vec![sp.data[f].re], DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)));
    }
    let e = SymmetricEigen::new(hermitian_at(sp, f));
    (e.eigenvalues.iter().copied().collect(), e.eigenvectors)
}

/// Circulant extension, FFT across lag, and per-frequency eigenvalue scan.
/// The embedding length is the smallest power of two ≥ 2·(max lag); lags
/// missing from `cov` up to half that length are taken as zero.
pub fn embed_and_check(cov: &IncrementCovariance) -> EmbeddingReport {
    let sp = spectra(cov);
    let tol = PSD_REL_TOL * sp.max_diag;
    let mut min_eigenvalue = Vec::with_capacity(sp.embed_len);
    let mut offending = Vec::new();
    for f in 0..sp.embed_len {
        let (vals, _) = eigen_at(&sp, f);
        let mn = vals.iter().copied().fold(f64::INFINITY, f64::min);
        if mn < -tol {
            offending.push(f);
        }
        min_eigenvalue.push(mn);
    }
    EmbeddingReport {
        embed_len: sp.embed_len,
        tol_psd: tol,
        psd: offending.is_empty(),
        min_eigenvalue,
        offending,
        hermitian_defect: sp.hermitian_defect,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthOptions {
    /// Replace negative spectral eigenvalues by zero instead of failing.
    pub clip_negative: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { clip_negative: true }
    }
}

/// m-component sample path stored row-major (component, time).
#[derive(Clone, Debug, PartialEq)]
pub struct MultiPath {
    pub m: usize,
    pub n: usize,
    pub data: Vec<f64>,
    pub seed: Option<u64>,
    pub model: Option<HfBmModel>,
}

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("path needs at least one component")]
    NoComponents,
    #[error("component {0} has length {1}, expected {2}")]
    Ragged(usize, usize, usize),
    #[error("non-finite sample in component {0} at index {1}")]
    NotFinite(usize, usize),
}

impl MultiPath {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, PathError> {
        let m = rows.len();
        if m == 0 {
            return Err(PathError::NoComponents);
        }
        let n = rows[0].len();
        let mut data = Vec::with_capacity(m * n);
        for (q, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(PathError::Ragged(q, row.len(), n));
            }
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return Err(PathError::NotFinite(q, i));
            }
            data.extend(row);
        }
        Ok(Self { m, n, data, seed: None, model: None })
    }

    #[inline]
    pub fn row(&self, q: usize) -> &[f64] {
        &self.data[q * self.n..(q + 1) * self.n]
    }

    pub fn row_mut(&mut self, q: usize) -> &mut [f64] {
        &mut self.data[q * self.n..(q + 1) * self.n]
    }

    /// First differences of component q.
    pub fn increments(&self, q: usize) -> Vec<f64> {
        self.row(q).windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Reusable circulant-embedding sampler for a fixed (model, n).
pub struct CmeSynthesizer {
    model: HfBmModel,
    n: usize,
    embed_len: usize,
    /// A(f) = U √Λ, entry (a,k) at [f*m*m + a*m + k]
    factors: Vec<Complex64>,
    ifft: Arc<dyn Fft<f64>>,
    clip: ClipSummary,
}

impl CmeSynthesizer {
    pub fn new(model: &HfBmModel, n: usize, opts: SynthOptions) -> Result<Self, SynthError> {
        if n < 2 {
            return Err(SynthError::TooShort(n));
        }
        let cov = embedding_covariance(model, n)?;
        let sp = spectra(&cov);
        if sp.hermitian_defect > HERMITIAN_REL_TOL {
            return Err(SynthError::NotHermitian { frequency_index: sp.worst_frequency, defect: sp.hermitian_defect });
        }
        let m = sp.m;
        let len = sp.embed_len;
        let tol = PSD_REL_TOL * sp.max_diag;
        let mut factors = vec![Complex64::new(0.0, 0.0); len * m * m];
        let mut clip = ClipSummary::default();
        let mut total_mass = 0.0;
        for f in 0..len {
            let (vals, vecs) = eigen_at(&sp, f);
            for (k, &lam) in vals.iter().enumerate() {
                total_mass += lam.abs();
                if lam < -tol && !opts.clip_negative {
                    return Err(SynthError::EmbeddingNotPsd { min_eigenvalue: lam, frequency_index: f });
                }
                if lam < 0.0 {
                    if lam < -tol {
                        clip.clipped_frequencies += 1;
                    }
                    clip.clipped_mass += -lam;
                }
                let root = lam.max(0.0).sqrt();
                for a in 0..m {
                    factors[f * m * m + a * m + k] = vecs[(a, k)] * root;
                }
            }
        }
        clip.relative_mass = if total_mass > 0.0 { clip.clipped_mass / total_mass } else { 0.0 };
        if clip.clipped_frequencies > 0 {
            log::warn!(
                "clipped negative spectral eigenvalues at {} frequencies (relative mass {:.3e})",
                clip.clipped_frequencies,
                clip.relative_mass
            );
        }
        let ifft = FftPlanner::<f64>::new().plan_fft_inverse(len);
        Ok(Self { model: model.clone(), n, embed_len: len, factors, ifft, clip })
    }

    pub fn clip_summary(&self) -> &ClipSummary {
        &self.clip
    }

    pub fn embed_len(&self) -> usize {
        self.embed_len
    }

    /// Draws the n−1 increments of every component, row-major.
    pub fn sample_increments(&self, seed: u64) -> Vec<Vec<f64>> {
        let m = self.model.m;
        let len = self.embed_len;
        let base = ChaCha8Rng::seed_from_u64(seed);
        let mut z: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); len]; m];
        let mut w = vec![Complex64::new(0.0, 0.0); m];
        for f in 0..len {
            let mut rng = base.clone();
            rng.set_stream(f as u64);
            for wk in w.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *wk = Complex64::new(re, im);
            }
            let a = &self.factors[f * m * m..(f + 1) * m * m];
            for (q, zq) in z.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, wk) in w.iter().enumerate() {
                    acc += a[q * m + k] * wk;
                }
                zq[f] = acc;
            }
        }
        let norm = 1.0 / (len as f64).sqrt();
        z.into_iter()
            .map(|mut zq| {
                self.ifft.process(&mut zq);
                zq[..self.n - 1].iter().map(|c| c.re * norm).collect()
            })
            .collect()
    }

    /// Path with B(0) = 0 followed by cumulative sums of the increments.
    pub fn sample(&self, seed: u64) -> MultiPath {
        let m = self.model.m;
        let mut data = Vec::with_capacity(m * self.n);
        for inc in self.sample_increments(seed) {
            let mut acc = 0.0;
            data.push(0.0);
            for v in inc {
                acc += v;
                data.push(acc);
            }
        }
        MultiPath { m, n: self.n, data, seed: Some(seed), model: Some(self.model.clone()) }
    }
}

pub fn synthesize(model: &HfBmModel, n: usize, seed: u64) -> Result<MultiPath, SynthError> {
    synthesize_with(model, n, seed, SynthOptions::default())
}

pub fn synthesize_with(model: &HfBmModel, n: usize, seed: u64, opts: SynthOptions) -> Result<MultiPath, SynthError> {
    Ok(CmeSynthesizer::new(model, n, opts)?.sample(seed))
}
