//! Monte Carlo harness for estimation, confidence-interval, test-size and
//! power studies on bivariate models.

use crate::estimate::{analyze, RegressionWeights, Weighting};
use crate::fctest::{adjust_significance, hfbm_test, wcf_test, TestError};
use crate::model::{validate_model, HfBmModel, ModelError, Regularization};
use crate::synth::{CmeSynthesizer, SynthError, SynthOptions};
use crate::varmodel::{
    estimator_covariance, plugin_covariance, EstimatorCovariance, OctaveLayout, VarError, WaveletCorrelation,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

/// Studies abort when more than this fraction of replications is skipped.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{skipped} of {total} replications skipped (first reason: {reason})")]
    TooManySkipped { skipped: usize, total: usize, reason: String },
    #[error("calibration failed: {0}")]
    Calibration(#[from] TestError),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Var(#[from] VarError),
    #[error("ledger: {0}")]
    Ledger(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Estimation,
    CiQuality,
    Significance,
    Power,
}

impl StudyKind {
    fn id(self) -> u64 {
        match self {
            StudyKind::Estimation => 1,
            StudyKind::CiQuality => 2,
            StudyKind::Significance => 3,
            StudyKind::Power => 4,
        }
    }
}

/// Bivariate model given by (α11, α22, δ12, ρ12).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub alpha11: f64,
    pub alpha22: f64,
    pub delta: f64,
    pub rho: f64,
    #[serde(default)]
    pub regularization: Regularization,
}

impl ModelSpec {
    pub fn new(alpha11: f64, alpha22: f64, delta: f64, rho: f64) -> Self {
        Self { alpha11, alpha22, delta, rho, regularization: Regularization::Ideal }
    }

    pub fn model(&self) -> HfBmModel {
        HfBmModel::bivariate(self.alpha11, self.alpha22, self.delta, self.rho).with_regularization(self.regularization)
    }

    pub fn alpha12(&self) -> f64 {
        (self.alpha11 + self.alpha22) / 2.0 - self.delta
    }

    pub fn label(&self) -> String {
        format!("({},{},{},{})", self.alpha11, self.alpha22, self.delta, self.rho)
    }

    fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..*self }
    }
}

/// j1 fixed; j2 = ⌊log2 n⌋ − j2_offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OctavePolicy {
    pub j1: usize,
    pub j2_offset: usize,
}

impl Default for OctavePolicy {
    fn default() -> Self {
        Self { j1: 3, j2_offset: 2 }
    }
}

impl OctavePolicy {
    pub fn range(&self, n: usize) -> (usize, usize) {
        let log = (usize::BITS - 1 - n.max(1).leading_zeros()) as usize;
        (self.j1, log.saturating_sub(self.j2_offset))
    }
}

fn default_significance() -> f64 {
    0.1
}

fn default_deltas() -> Vec<f64> {
    vec![0.05, 0.1, 0.15, 0.2]
}

fn default_true() -> bool {
    true
}

fn default_reps() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McStudyConfig {
    pub kind: StudyKind,
    pub models: Vec<ModelSpec>,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub octaves: OctavePolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weighting: Weighting,
    /// Nominal level of the tests.
    #[serde(default = "default_significance")]
    pub significance: f64,
    /// H0 rejection rate matched by the adjusted level in power studies.
    #[serde(default = "default_significance")]
    pub target_size: f64,
    /// Alternatives δ12 of a power study; models give the H0 parameters.
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_true")]
    pub clip_negative: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl McStudyConfig {
    pub fn new(kind: StudyKind, models: Vec<ModelSpec>, n_grid: Vec<usize>, reps: usize) -> Self {
        Self {
            kind,
            models,
            n_grid,
            reps,
            octaves: OctavePolicy::default(),
            seed: 0,
            weighting: Weighting::ByCountAuto,
            significance: 0.1,
            target_size: 0.1,
            deltas: default_deltas(),
            clip_negative: true,
            threads: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, McError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| McError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), McError> {
        let bad = |s: String| Err(McError::Config(s));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.models.is_empty() || self.n_grid.is_empty() {
            return bad("model and n grids must be non-empty".into());
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("n grid must be strictly ascending".into());
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return bad(format!("significance {} outside (0, 1)", self.significance));
        }
        if !(self.target_size > 0.0 && self.target_size < 1.0) {
            return bad(format!("target size {} outside (0, 1)", self.target_size));
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        for &n in &self.n_grid {
            let (j1, j2) = self.octaves.range(n);
            if j1 < 1 || j2 <= j1 {
                return bad(format!("octave range {j1}..{j2} empty for n = {n}"));
            }
            OctaveLayout::pyramid(n, j1, j2).map_err(|e| McError::Config(format!("n = {n}: {e}")))?;
            if n < crate::dwt::min_length(&crate::dwt::build_filters(2).expect("order 2"), j2) {
                return bad(format!("n = {n} too short for octave {j2}"));
            }
        }
        for spec in &self.models {
            validate_model(&spec.model())?;
            if self.kind == StudyKind::Power {
                for &d in &self.deltas {
                    validate_model(&spec.with_delta(d).model())?;
                }
            }
        }
        if self.kind == StudyKind::Power && self.reps < crate::fctest::MIN_CALIBRATION_REPS {
            return bad(format!("power studies need at least {} reps", crate::fctest::MIN_CALIBRATION_REPS));
        }
        Ok(())
    }

    /// Simulation cells in a fixed order: model, then n, then (power) δ with
    /// the H0 cell first.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for (mi, spec) in self.models.iter().enumerate() {
            for &n in &self.n_grid {
                let (j1, j2) = self.octaves.range(n);
                let mut push = |spec: ModelSpec, h1: Option<f64>| {
                    out.push(Cell { index: out.len(), model_index: mi, spec, n, j1, j2, alternative: h1 });
                };
                push(*spec, None);
                if self.kind == StudyKind::Power {
                    for &d in &self.deltas {
                        push(spec.with_delta(d), Some(d));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub index: usize,
    pub model_index: usize,
    pub spec: ModelSpec,
    pub n: usize,
    pub j1: usize,
    pub j2: usize,
    /// δ of an alternative-hypothesis cell.
    pub alternative: Option<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one replication, independent of scheduling.
pub fn replication_seed(seed: u64, study: StudyKind, cell: usize, rep: usize) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ study.id());
    h = splitmix64(h ^ cell as u64);
    splitmix64(h ^ rep as u64)
}

/// Per-replication outcome; unavailable quantities are NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub cell: usize,
    pub rep: usize,
    pub seed: u64,
    pub skipped: Option<String>,
    pub alpha11: f64,
    pub alpha22: f64,
    pub alpha12: f64,
    pub delta12: f64,
    pub rho12: f64,
    pub var_alpha11: f64,
    pub var_alpha22: f64,
    pub var_alpha12: f64,
    pub cov_a11_a22: f64,
    pub cov_a11_a12: f64,
    pub cov_a22_a12: f64,
    pub var_delta12: f64,
    pub p_hfbm: f64,
    pub p_wcf: f64,
}

impl ReplicationRecord {
    fn empty(cell: usize, rep: usize, seed: u64) -> Self {
        let nan = f64::NAN;
        Self {
            cell,
            rep,
            seed,
            skipped: None,
            alpha11: nan,
            alpha22: nan,
            alpha12: nan,
            delta12: nan,
            rho12: nan,
            var_alpha11: nan,
            var_alpha22: nan,
            var_alpha12: nan,
            cov_a11_a22: nan,
            cov_a11_a12: nan,
            cov_a22_a12: nan,
            var_delta12: nan,
            p_hfbm: nan,
            p_wcf: nan,
        }
    }

    fn skip(mut self, why: impl ToString) -> Self {
        self.skipped = Some(why.to_string());
        self
    }

    fn fill_cov(&mut self, c: &EstimatorCovariance) {
        let (a, b, ab) = ((0, 0), (1, 1), (0, 1));
        let g = |p1, p2| c.get(p1, p2).unwrap_or(f64::NAN);
        self.var_alpha11 = g(a, a);
        self.var_alpha22 = g(b, b);
        self.var_alpha12 = g(ab, ab);
        self.cov_a11_a22 = g(a, b);
        self.cov_a11_a12 = g(a, ab);
        self.cov_a22_a12 = g(b, ab);
        self.var_delta12 = c.var_delta.get(0, 1);
    }
}

struct CellRunner {
    cell: Cell,
    synth: Result<CmeSynthesizer, SynthError>,
    layout: OctaveLayout,
    weights: RegressionWeights,
}

fn runner(cfg: &McStudyConfig, cell: &Cell) -> Result<CellRunner, McError> {
    let opts = SynthOptions { clip_negative: cfg.clip_negative };
    let synth = CmeSynthesizer::new(&cell.spec.model(), cell.n, opts);
    let layout = OctaveLayout::pyramid(cell.n, cell.j1, cell.j2)?;
    let weights = crate::estimate::regression_weights(cell.j1, cell.j2, cfg.weighting.resolve(cell.n))
        .map_err(|e| McError::Config(e.to_string()))?;
    Ok(CellRunner { cell: cell.clone(), synth, layout, weights })
}

fn replicate(cfg: &McStudyConfig, run: &CellRunner, rep: usize) -> ReplicationRecord {
    let seed = replication_seed(cfg.seed, cfg.kind, run.cell.index, rep);
    let rec = ReplicationRecord::empty(run.cell.index, rep, seed);
    let synth = match &run.synth {
        Ok(s) => s,
        Err(e) => return rec.skip(e),
    };
    let path = synth.sample(seed);
    let (est, pyr) = match analyze(&path, run.cell.j1, run.cell.j2, cfg.weighting) {
        Ok(x) => x,
        Err(e) => return rec.skip(e),
    };
    let mut rec = rec;
    rec.alpha11 = est.alpha.get(0, 0);
    rec.alpha22 = est.alpha.get(1, 1);
    rec.alpha12 = est.alpha.get(0, 1);
    rec.delta12 = est.delta.get(0, 1);
    rec.rho12 = est.rho.get(0, 1);
    if cfg.kind == StudyKind::Estimation {
        return rec;
    }
    let plug = match plugin_covariance(&est, &run.layout, &run.weights, 0.95) {
        Ok(p) => p,
        Err(e) => return rec.skip(e),
    };
    rec.fill_cov(&plug.cov);
    if cfg.kind == StudyKind::CiQuality {
        return rec;
    }
    match hfbm_test((0, 1), rec.delta12, rec.var_delta12, cfg.significance) {
        Ok(t) => rec.p_hfbm = t.p,
        Err(e) => return rec.skip(e),
    }
    match wcf_test(&pyr, (0, 1), cfg.significance) {
        Ok(t) => rec.p_wcf = t.p,
        Err(e) => return rec.skip(e),
    }
    rec
}

/// Records and summary of a finished study.
#[derive(Clone, Debug)]
pub struct StudyOutput {
    pub summary: McSummary,
    pub records: Vec<ReplicationRecord>,
    pub run: RunInfo,
}

/// Execution facts kept outside the reproducible summary.
#[derive(Clone, Debug, Serialize)]
pub struct RunInfo {
    pub wall_seconds: f64,
    pub threads: usize,
}

/// Runs every replication of every cell, then folds the records.
pub fn run_study(cfg: &McStudyConfig) -> Result<StudyOutput, McError> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let work = || -> Result<Vec<ReplicationRecord>, McError> {
        let mut records = Vec::new();
        for cell in cfg.cells() {
            let run = runner(cfg, &cell)?;
            let mut out: Vec<ReplicationRecord> =
                (0..cfg.reps).into_par_iter().map(|rep| replicate(cfg, &run, rep)).collect();
            records.append(&mut out);
        }
        Ok(records)
    };
    let (records, threads) = match cfg.threads {
        Some(t) => {
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(t).build().map_err(|e| McError::Pool(e.to_string()))?;
            (pool.install(work)?, t)
        }
        None => (work()?, rayon::current_num_threads()),
    };
    let summary = summarize(cfg, &records)?;
    Ok(StudyOutput { summary, records, run: RunInfo { wall_seconds: start.elapsed().as_secs_f64(), threads } })
}

fn expect_kind(cfg: &McStudyConfig, kind: StudyKind) -> Result<(), McError> {
    if cfg.kind != kind {
        return Err(McError::Config(format!("expected a {kind:?} study, got {:?}", cfg.kind)));
    }
    Ok(())
}

pub fn run_estimation_study(cfg: &McStudyConfig) -> Result<McSummary, McError> {
    expect_kind(cfg, StudyKind::Estimation)?;
    Ok(run_study(cfg)?.summary)
}

pub fn run_ci_quality_study(cfg: &McStudyConfig) -> Result<McSummary, McError> {
    expect_kind(cfg, StudyKind::CiQuality)?;
    Ok(run_study(cfg)?.summary)
}

pub fn run_significance_study(cfg: &McStudyConfig) -> Result<McSummary, McError> {
    expect_kind(cfg, StudyKind::Significance)?;
    Ok(run_study(cfg)?.summary)
}

pub fn run_power_study(cfg: &McStudyConfig) -> Result<McSummary, McError> {
    expect_kind(cfg, StudyKind::Power)?;
    Ok(run_study(cfg)?.summary)
}

/// Sample moments; skewness and excess kurtosis use biased central moments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    Moments {
        count: xs.len(),
        mean,
        std: if xs.len() > 1 { (m2 * n / (n - 1.0)).sqrt() } else { 0.0 },
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2) - 3.0,
    }
}

/// Unbiased sample covariance.
fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimationRow {
    pub model: String,
    pub n: usize,
    pub param: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CiQualityRow {
    pub model: String,
    pub rho: f64,
    pub n: usize,
    pub quantity: String,
    pub mc: f64,
    pub theo: f64,
    pub est: f64,
    pub ratio_theo: f64,
    pub ratio_est: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignificanceRow {
    pub model: String,
    pub n: usize,
    pub rho: f64,
    pub method: String,
    pub s: f64,
    pub size: f64,
    pub mean_p: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerRow {
    pub model: String,
    pub n: usize,
    pub rho: f64,
    pub delta: f64,
    pub method: String,
    pub adjusted_s: f64,
    pub h0_size: f64,
    pub power: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McSummary {
    pub kind: StudyKind,
    pub replications: usize,
    pub skipped: usize,
    pub kurtosis_convention: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub estimation: Vec<EstimationRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ci_quality: Vec<CiQualityRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub significance: Vec<SignificanceRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub power: Vec<PowerRow>,
}

fn column(recs: &[&ReplicationRecord], f: impl Fn(&ReplicationRecord) -> f64) -> Vec<f64> {
    recs.iter().map(|r| f(r)).collect()
}

/// Covariance approximation at the true parameters of a cell.
pub fn true_covariance(cell: &Cell, weighting: Weighting) -> Result<EstimatorCovariance, McError> {
    let model = cell.spec.model();
    let layout = OctaveLayout::pyramid(cell.n, cell.j1, cell.j2)?;
    let weights = crate::estimate::regression_weights(cell.j1, cell.j2, weighting.resolve(cell.n))
        .map_err(|e| McError::Config(e.to_string()))?;
    let wc = WaveletCorrelation::new(&model.alpha_matrix(), &model.rho, &layout)?;
    Ok(estimator_covariance(&wc, &weights, false)?)
}

/// Folds replication records into the study summary. Records are sorted
/// by (cell, rep) first, so the input order does not matter.
pub fn summarize(cfg: &McStudyConfig, records: &[ReplicationRecord]) -> Result<McSummary, McError> {
    let mut sorted: Vec<&ReplicationRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.cell, r.rep));
    let total = sorted.len();
    let skipped: Vec<&&ReplicationRecord> = sorted.iter().filter(|r| r.skipped.is_some()).collect();
    if skipped.len() as f64 > MAX_SKIP_FRACTION * total as f64 {
        return Err(McError::TooManySkipped {
            skipped: skipped.len(),
            total,
            reason: skipped[0].skipped.clone().unwrap_or_default(),
        });
    }
    let cells = cfg.cells();
    let by_cell = |c: usize| -> Vec<&ReplicationRecord> {
        sorted.iter().copied().filter(|r| r.cell == c && r.skipped.is_none()).collect()
    };
    let mut out = McSummary {
        kind: cfg.kind,
        replications: cfg.reps,
        skipped: skipped.len(),
        kurtosis_convention: "excess".into(),
        estimation: Vec::new(),
        ci_quality: Vec::new(),
        significance: Vec::new(),
        power: Vec::new(),
    };
    match cfg.kind {
        StudyKind::Estimation => {
            for cell in &cells {
                let recs = by_cell(cell.index);
                let s = &cell.spec;
                let params: [(&str, f64, fn(&ReplicationRecord) -> f64); 4] = [
                    ("alpha11", s.alpha11, |r| r.alpha11),
                    ("alpha22", s.alpha22, |r| r.alpha22),
                    ("alpha12", s.alpha12(), |r| r.alpha12),
                    ("delta12", s.delta, |r| r.delta12),
                ];
                for (name, truth, f) in params {
                    let mo = moments(&column(&recs, f));
                    out.estimation.push(EstimationRow {
                        model: s.label(),
                        n: cell.n,
                        param: name.into(),
                        truth,
                        mean: mo.mean,
                        bias: mo.mean - truth,
                        std: mo.std,
                        skewness: mo.skewness,
                        kurtosis: mo.kurtosis,
                        reps: mo.count,
                    });
                }
            }
        }
        StudyKind::CiQuality => {
            for cell in &cells {
                let recs = by_cell(cell.index);
                let theo = true_covariance(cell, cfg.weighting)?;
                let a11 = column(&recs, |r| r.alpha11);
                let a22 = column(&recs, |r| r.alpha22);
                let a12 = column(&recs, |r| r.alpha12);
                let d12 = column(&recs, |r| r.delta12);
                let rows: [(&str, f64, f64, f64); 4] = [
                    (
                        "var_alpha11",
                        sample_cov(&a11, &a11),
                        theo.var_alpha.get(0, 0),
                        mean(&column(&recs, |r| r.var_alpha11)),
                    ),
                    (
                        "var_alpha12",
                        sample_cov(&a12, &a12),
                        theo.var_alpha.get(0, 1),
                        mean(&column(&recs, |r| r.var_alpha12)),
                    ),
                    (
                        "cov_alpha11_alpha22",
                        sample_cov(&a11, &a22),
                        theo.get((0, 0), (1, 1)).unwrap_or(f64::NAN),
                        mean(&column(&recs, |r| r.cov_a11_a22)),
                    ),
                    (
                        "var_delta12",
                        sample_cov(&d12, &d12),
                        theo.var_delta.get(0, 1),
                        mean(&column(&recs, |r| r.var_delta12)),
                    ),
                ];
                for (name, mc, th, est) in rows {
                    out.ci_quality.push(CiQualityRow {
                        model: cell.spec.label(),
                        rho: cell.spec.rho,
                        n: cell.n,
                        quantity: name.into(),
                        mc,
                        theo: th,
                        est,
                        ratio_theo: (th / mc).sqrt(),
                        ratio_est: (est / mc).sqrt(),
                        reps: recs.len(),
                    });
                }
            }
        }
        StudyKind::Significance => {
            for cell in &cells {
                let recs = by_cell(cell.index);
                for (method, f) in [
                    ("hfbm", (|r: &ReplicationRecord| r.p_hfbm) as fn(&ReplicationRecord) -> f64),
                    ("wcf", |r| r.p_wcf),
                ] {
                    let p = column(&recs, f);
                    let size = p.iter().filter(|&&v| v < cfg.significance).count() as f64 / p.len() as f64;
                    out.significance.push(SignificanceRow {
                        model: cell.spec.label(),
                        n: cell.n,
                        rho: cell.spec.rho,
                        method: method.into(),
                        s: cfg.significance,
                        size,
                        mean_p: mean(&p),
                        reps: p.len(),
                    });
                }
            }
        }
        StudyKind::Power => {
            let h0_cells: Vec<&Cell> = cells.iter().filter(|c| c.alternative.is_none()).collect();
            for h0 in h0_cells {
                let h0_recs = by_cell(h0.index);
                for (method, f) in [
                    ("hfbm", (|r: &ReplicationRecord| r.p_hfbm) as fn(&ReplicationRecord) -> f64),
                    ("wcf", |r| r.p_wcf),
                ] {
                    let adj = adjust_significance(&column(&h0_recs, f), cfg.target_size)?;
                    for h1 in cells
                        .iter()
                        .filter(|c| c.alternative.is_some() && c.model_index == h0.model_index && c.n == h0.n)
                    {
                        let p = column(&by_cell(h1.index), f);
                        let power = p.iter().filter(|&&v| v < adj.level).count() as f64 / p.len() as f64;
                        out.power.push(PowerRow {
                            model: h0.spec.label(),
                            n: h1.n,
                            rho: h1.spec.rho,
                            delta: h1.alternative.unwrap_or(0.0),
                            method: method.into(),
                            adjusted_s: adj.level,
                            h0_size: adj.achieved_size,
                            power,
                            reps: p.len(),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

const LEDGER_HEADER: [&str; 19] = [
    "cell",
    "rep",
    "seed",
    "skipped",
    "alpha11",
    "alpha22",
    "alpha12",
    "delta12",
    "rho12",
    "var_alpha11",
    "var_alpha22",
    "var_alpha12",
    "cov_a11_a22",
    "cov_a11_a12",
    "cov_a22_a12",
    "var_delta12",
    "p_hfbm",
    "p_wcf",
    "n",
];

/// One CSV row per replication; floats written in round-trip form.
pub fn write_ledger<W: std::io::Write>(
    cfg: &McStudyConfig,
    records: &[ReplicationRecord],
    out: W,
) -> Result<(), McError> {
    let cells = cfg.cells();
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| McError::Ledger(e.to_string());
    w.write_record(LEDGER_HEADER).map_err(err)?;
    for r in records {
        let f = |v: f64| format!("{v:?}");
        w.write_record([
            r.cell.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            r.skipped.clone().unwrap_or_default(),
            f(r.alpha11),
            f(r.alpha22),
            f(r.alpha12),
            f(r.delta12),
            f(r.rho12),
            f(r.var_alpha11),
            f(r.var_alpha22),
            f(r.var_alpha12),
            f(r.cov_a11_a22),
            f(r.cov_a11_a12),
            f(r.cov_a22_a12),
            f(r.var_delta12),
            f(r.p_hfbm),
            f(r.p_wcf),
            cells.get(r.cell).map(|c| c.n.to_string()).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| McError::Ledger(e.to_string()))?;
    Ok(())
}

pub fn read_ledger<R: std::io::Read>(input: R) -> Result<Vec<ReplicationRecord>, McError> {
    let mut r = csv::Reader::from_reader(input);
    let bad = |s: String| McError::Ledger(s);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() < 18 {
            return Err(bad(format!("row {}: {} fields", line + 2, rec.len())));
        }
        let u = |i: usize| rec[i].parse::<u64>().map_err(|e| bad(format!("row {} field {i}: {e}", line + 2)));
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("row {} field {i}: {e}", line + 2)));
        out.push(ReplicationRecord {
            cell: u(0)? as usize,
            rep: u(1)? as usize,
            seed: u(2)?,
            skipped: (!rec[3].is_empty()).then(|| rec[3].to_string()),
            alpha11: f(4)?,
            alpha22: f(5)?,
            alpha12: f(6)?,
            delta12: f(7)?,
            rho12: f(8)?,
            var_alpha11: f(9)?,
            var_alpha22: f(10)?,
            var_alpha12: f(11)?,
            cov_a11_a22: f(12)?,
            cov_a11_a12: f(13)?,
            cov_a22_a12: f(14)?,
            var_delta12: f(15)?,
            p_hfbm: f(16)?,
            p_wcf: f(17)?,
        });
    }
    Ok(out)
}

fn csv_table<T: Serialize>(rows: &[T]) -> Result<String, McError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| McError::Ledger(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| McError::Ledger(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Table-shaped CSV of the summary (file stem, contents).
pub fn summary_tables(summary: &McSummary) -> Result<Vec<(String, String)>, McError> {
    let mut out = Vec::new();
    match summary.kind {
        StudyKind::Estimation => out.push(("estimation".into(), csv_table(&summary.estimation)?)),
        StudyKind::CiQuality => out.push(("ci_quality".into(), csv_table(&summary.ci_quality)?)),
        StudyKind::Significance => {
            #[derive(Serialize)]
            struct Row<'a> {
                n: usize,
                rho: f64,
                method: &'a str,
                size: f64,
                mean_p: f64,
            }
            let rows: Vec<Row> = summary
                .significance
                .iter()
                .map(|r| Row { n: r.n, rho: r.rho, method: &r.method, size: r.size, mean_p: r.mean_p })
                .collect();
            out.push(("significance".into(), csv_table(&rows)?));
        }
        StudyKind::Power => out.push(("power".into(), csv_table(&summary.power)?)),
    }
    Ok(out)
}

/// gnuplot script drawing the summary from the CSV written next to it.
pub fn plot_script(summary: &McSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key outside");
    let _ = writeln!(s, "set logscale x 2");
    let _ = writeln!(s, "set terminal pngcairo size 1200,400");
    match summary.kind {
        StudyKind::Estimation => {
            let _ = writeln!(s, "set output 'estimation.png'");
            let _ = writeln!(s, "set multiplot layout 1,3");
            for (col, title) in [(6, "bias"), (7, "std"), (8, "skewness")] {
                let _ = writeln!(s, "set title '{title}'");
                let mut parts = Vec::new();
                for param in ["alpha11", "alpha22", "alpha12", "delta12"] {
                    parts.push(format!(
                        "'estimation.csv' using 2:(strcol(3) eq '{param}' ? ${col} : 1/0) with linespoints title '{param}'"
                    ));
                }
                if title == "std" {
                    parts.push("0.25*sqrt(1024.0/x) dashed title 'n^{-1/2}'".into());
                }
                let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
            }
            let _ = writeln!(s, "unset multiplot");
        }
        StudyKind::CiQuality => {
            let _ = writeln!(s, "set output 'ci_quality.png'");
            let _ = writeln!(s, "set title 'sqrt(approx / MC)'");
            let _ = writeln!(s, "plot 'ci_quality.csv' using 3:9 with points title 'theo/MC', '' using 3:10 with points title 'est/MC', 1 title ''");
        }
        StudyKind::Significance => {
            let _ = writeln!(s, "set output 'significance.png'");
            let _ = writeln!(s, "set title 'empirical size'");
            let _ = writeln!(s, "plot 'significance.csv' using 1:(strcol(3) eq 'hfbm' ? $4 : 1/0) with points title 'HFBM', '' using 1:(strcol(3) eq 'wcf' ? $4 : 1/0) with points title 'WCF'");
        }
        StudyKind::Power => {
            let _ = writeln!(s, "set output 'power.png'");
            let _ = writeln!(s, "set title 'power at adjusted level'");
            let _ = writeln!(s, "plot 'power.csv' using 4:(strcol(5) eq 'hfbm' ? $8 : 1/0) with points title 'HFBM', '' using 4:(strcol(5) eq 'wcf' ? $8 : 1/0) with points title 'WCF'");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_symmetric_sample() {
        let m = moments(&[-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(m.mean, 0.0);
        assert!((m.std - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.skewness, 0.0);
        // m4 / m2² − 3 with m2 = 2, m4 = 6.8
        assert!((m.kurtosis - (6.8 / 4.0 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn seeds_differ_across_cells_and_reps() {
        let a = replication_seed(1, StudyKind::Estimation, 0, 0);
        assert_ne!(a, replication_seed(1, StudyKind::Estimation, 0, 1));
        assert_ne!(a, replication_seed(1, StudyKind::Estimation, 1, 0));
        assert_ne!(a, replication_seed(1, StudyKind::Power, 0, 0));
        assert_eq!(a, replication_seed(1, StudyKind::Estimation, 0, 0));
    }

    #[test]
    fn config_validation() {
        let mut cfg =
            McStudyConfig::new(StudyKind::Estimation, vec![ModelSpec::new(0.4, 0.8, 0.0, 0.6)], vec![1024], 0);
        assert!(cfg.validate().is_err());
        cfg.reps = 3;
        assert!(cfg.validate().is_ok());
        cfg.n_grid = vec![4096, 1024];
        assert!(cfg.validate().is_err());
        let json = r#"{"kind":"significance","models":[{"alpha11":0.2,"alpha22":0.6,"delta":0,"rho":0.5}],"n_grid":[1024],"reps":10,"octaves":{"j1":2,"j2_offset":5}}"#;
        let c = McStudyConfig::from_json(json).unwrap();
        assert_eq!(c.octaves.range(1024), (2, 5));
        assert_eq!(c.cells().len(), 1);
    }

    #[test]
    fn power_cells_pair_with_null() {
        let mut cfg =
            McStudyConfig::new(StudyKind::Power, vec![ModelSpec::new(0.2, 0.6, 0.0, 0.5)], vec![1024, 4096], 60);
        cfg.deltas = vec![0.1, 0.2];
        let cells = cfg.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].alternative, None);
        assert_eq!(cells[2].alternative, Some(0.2));
        assert!((cells[2].spec.alpha12() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn small_study_is_reproducible_and_refoldable() {
        let mut cfg =
            McStudyConfig::new(StudyKind::Significance, vec![ModelSpec::new(0.2, 0.6, 0.0, 0.6)], vec![1024], 8);
        cfg.octaves = OctavePolicy { j1: 2, j2_offset: 5 };
        cfg.seed = 11;
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        assert_eq!(a.summary, b.summary);
        let mut buf = Vec::new();
        write_ledger(&cfg, &a.records, &mut buf).unwrap();
        let back = read_ledger(&buf[..]).unwrap();
        assert_eq!(summarize(&cfg, &back).unwrap(), a.summary);
        let mut rev = back.clone();
        rev.reverse();
        assert_eq!(summarize(&cfg, &rev).unwrap(), a.summary);
    }
}
