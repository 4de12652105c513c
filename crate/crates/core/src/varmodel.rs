//! Wavelet-coefficient correlations of HfBm and the finite-sample
//! (co)variance approximations of the exponent estimators.

use crate::dwt::{build_filters, convolve, FilterBank};
use crate::estimate::{RegressionWeights, ScalingEstimate};
use crate::model::SquareMatrix;
use serde::{Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;
use std::f64::consts::LOG2_E;
use thiserror::Error;

/// Plug-in exponents are clamped into [ALPHA_FLOOR, 2 − ALPHA_FLOOR].
pub const ALPHA_FLOOR: f64 = 1e-3;
/// Correlations below this magnitude make the cross-exponent variance infinite.
pub const RHO_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum VarError {
    #[error("variance of the pair ({}, {}) is infinite: correlation {rho:e} is numerically zero", .pair.0 + 1, .pair.1 + 1)]
    InfiniteVariance { pair: (usize, usize), rho: f64 },
    #[error("missing covariance between ({}, {}) and ({}, {})", .0.0 + 1, .0.1 + 1, .1.0 + 1, .1.1 + 1)]
    MissingConstituent((usize, usize), (usize, usize)),
    #[error("invalid octave layout: {0}")]
    Layout(String),
    #[error("non-positive wavelet variance normalizer at octave {j} (alpha {alpha})")]
    NonPositiveNormalizer { j: usize, alpha: f64 },
}

/// Octave range with per-octave coefficient counts n_j.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OctaveLayout {
    pub j1: usize,
    pub j2: usize,
    pub counts: Vec<usize>,
}

impl OctaveLayout {
    /// Counts of the decimated pyramid for a series of length n.
    pub fn pyramid(n: usize, j1: usize, j2: usize) -> Result<Self, VarError> {
        let bank = build_filters(2).expect("order 2 supported");
        let counts = (j1..=j2.max(j1)).map(|j| bank.coefficient_count(n, j)).collect();
        Self::explicit(j1, j2, counts)
    }

    pub fn explicit(j1: usize, j2: usize, counts: Vec<usize>) -> Result<Self, VarError> {
        if j1 < 1 || j2 < j1 || j2 > 40 {
            return Err(VarError::Layout(format!("octaves {j1}..{j2}")));
        }
        if counts.len() != j2 - j1 + 1 || counts.iter().any(|&c| c == 0) {
            return Err(VarError::Layout(format!("counts {counts:?} do not cover {j1}..{j2}")));
        }
        Ok(Self { j1, j2, counts })
    }

    pub fn count(&self, j: usize) -> usize {
        self.counts[j - self.j1]
    }

    fn check_weights(&self, w: &RegressionWeights) -> Result<(), VarError> {
        if w.j1 != self.j1 || w.j2 != self.j2 {
            return Err(VarError::Layout(format!(
                "weights on {}..{} but layout on {}..{}",
                w.j1, w.j2, self.j1, self.j2
            )));
        }
        Ok(())
    }
}

/// Integer lattice segment: entry i sits at `vals[i - lo]`.
#[derive(Clone, Debug)]
struct Segment {
    lo: i64,
    vals: Vec<f64>,
}

impl Segment {
    fn hi(&self) -> i64 {
        self.lo + self.vals.len() as i64 - 1
    }

    #[inline]
    fn at(&self, i: i64) -> f64 {
        self.vals[(i - self.lo) as usize]
    }

    fn slice(&self, lo: i64, hi: i64) -> Segment {
        assert!(lo >= self.lo && hi <= self.hi(), "lattice range [{lo},{hi}] outside [{},{}]", self.lo, self.hi());
        Segment { lo, vals: self.vals[(lo - self.lo) as usize..=(hi - self.lo) as usize].to_vec() }
    }

    /// out(i) = Σ_a f(a) in(i − r a).
    fn filter_back(&self, f: &[f64], r: i64) -> Segment {
        let ext = r * (f.len() as i64 - 1);
        let len = self.vals.len() as i64 - ext;
        let vals = (0..len)
            .map(|t| {
                let base = t + ext;
                f.iter().enumerate().map(|(a, &c)| c * self.vals[(base - r * a as i64) as usize]).sum()
            })
            .collect();
        Segment { lo: self.lo + ext, vals }
    }

    /// out(i) = Σ_a g(a) in(i + a).
    fn correlate_forward(&self, g: &[f64]) -> Segment {
        let len = self.vals.len() - (g.len() - 1);
        let vals = (0..len).map(|t| g.iter().enumerate().map(|(a, &c)| c * self.vals[t + a]).sum()).collect();
        Segment { lo: self.lo, vals }
    }
}

/// Coefficient covariance kernels for one exponent α:
/// κ(j, j′, 2^j m) = Cov(d(j,k), d(j′,k′)) with 2^{j′}k′ − 2^j k = 2^j m, j ≤ j′,
/// for a process with covariance structure −|t − t′|^α (amplitudes removed).
#[derive(Clone, Debug)]
pub struct KernelTable {
    pub alpha: f64,
    j1: usize,
    j2: usize,
    /// indexed by (j − j1) * span + (j′ − j1), j ≤ j′
    seqs: Vec<Segment>,
}

fn pair_index(j1: usize, j2: usize, j: usize, jp: usize) -> usize {
    (j - j1) * (j2 - j1 + 1) + (jp - j1)
}

/// m-range of 2^{j′}k′ − 2^j k over 2^j for the given counts.
fn lag_range(nj: usize, njp: usize, d: usize) -> (i64, i64) {
    (-(nj as i64 - 1), ((njp as i64 - 1) << d))
}

impl KernelTable {
    pub fn new(alpha: f64, layout: &OctaveLayout, bank: &FilterBank) -> Self {
        let (j1, j2) = (layout.j1, layout.j2);
        let taps = bank.len() as i64;
        let span = j2 - j1 + 1;

        // lattice index range required at level j − 1 for each j
        let mut need = vec![0i64; j2];
        let mut plans = Vec::new();
        for j in j1..=j2 {
            for jp in j..=j2 {
                let d = jp - j;
                let (m_lo, m_hi) = lag_range(layout.count(j), layout.count(jp), d);
                let u = 1i64 << (j - 1);
                let dlt = (bank.offset(jp) as i64 - bank.offset(j) as i64) / u;
                let i_lo = 2 * m_lo + dlt;
                let i_hi = 2 * m_hi + dlt;
                // h factors at spacing 2^{l−j+1}, l = j−1..=j′−2, then g at 2^{j′−j}
                let mut spacings: Vec<i64> = (j - 1..jp.saturating_sub(1)).map(|l| 1i64 << (l + 1 - j)).collect();
                spacings.push(1i64 << d);
                let ext: i64 = spacings.iter().sum::<i64>() * (taps - 1);
                let lo = i_lo - ext;
                let hi = i_hi + taps - 1;
                need[j - 1] = need[j - 1].max(lo.abs()).max(hi.abs());
                plans.push((j, jp, m_lo, m_hi, dlt, spacings, lo, hi));
            }
        }
        // each level doubles the lattice spacing of the one below
        let mut reach = need.clone();
        for l in (1..j2).rev() {
            reach[l - 1] = reach[l - 1].max(2 * reach[l] + taps - 1);
        }

        let rh: Vec<f64> = {
            let rev: Vec<f64> = bank.h.iter().rev().copied().collect();
            convolve(&bank.h, &rev)
        };
        let half = taps - 1;
        let mut levels: Vec<Segment> = Vec::with_capacity(j2);
        let i0 = reach[0];
        levels.push(Segment {
            lo: -i0,
            vals: (-i0..=i0).map(|i| if i == 0 { 0.0 } else { -(i.abs() as f64).powf(alpha) }).collect(),
        });
        for l in 1..j2 {
            let prev = &levels[l - 1];
            let il = reach[l];
            let vals = (-il..=il)
                .map(|i| (-half..=half).map(|d| rh[(d + half) as usize] * prev.at(2 * i - d)).sum())
                .collect();
            levels.push(Segment { lo: -il, vals });
        }

        let mut seqs = vec![Segment { lo: 0, vals: Vec::new() }; span * span];
        for (j, jp, m_lo, m_hi, dlt, spacings, lo, hi) in plans {
            let mut z = levels[j - 1].slice(lo, hi);
            let nh = spacings.len() - 1;
            for &r in &spacings[..nh] {
                z = z.filter_back(&bank.h, r);
            }
            z = z.filter_back(&bank.g, spacings[nh]);
            z = z.correlate_forward(&bank.g);
            let vals = (m_lo..=m_hi).map(|m| z.at(2 * m + dlt)).collect();
            seqs[pair_index(j1, j2, j, jp)] = Segment { lo: m_lo, vals };
        }
        Self { alpha, j1, j2, seqs }
    }

    /// κ(j, j′, 2^j m) for j ≤ j′ when m lies in the tabulated range.
    #[inline]
    pub fn get(&self, j: usize, jp: usize, m: i64) -> Option<f64> {
        let s = &self.seqs[pair_index(self.j1, self.j2, j, jp)];
        if m < s.lo || m > s.hi() {
            None
        } else {
            Some(s.at(m))
        }
    }

    /// Cov(d(j,k), d(j,k)).
    pub fn normalizer(&self, j: usize) -> f64 {
        self.get(j, j, 0).expect("lag 0 always tabulated")
    }

    fn seq(&self, j: usize, jp: usize) -> &Segment {
        &self.seqs[pair_index(self.j1, self.j2, j, jp)]
    }
}

/// Direct evaluation −Σ_p c_{jj′}(p) |τ − p|^α with c_{jj′} the
/// cross-correlation of the time-reversed cascade filters, for any lag τ
/// between coefficient anchors 2^j k and 2^{j′} k′.
pub fn direct_kernel(bank: &FilterBank, alpha: f64, j: usize, jp: usize, tau: i64) -> f64 {
    let gj: Vec<f64> = bank.cascade_filter(j).into_iter().rev().collect();
    let gjp: Vec<f64> = bank.cascade_filter(jp).into_iter().rev().collect();
    let mut acc = 0.0;
    for (u, &a) in gj.iter().enumerate() {
        for (v, &b) in gjp.iter().enumerate() {
            let p = u as i64 - v as i64;
            let s = (tau - p).abs() as f64;
            if s > 0.0 {
                acc -= a * b * s.powf(alpha);
            }
        }
    }
    acc
}

/// Precomputed correlation structure of the wavelet coefficients of a
/// model given by exponent and correlation matrices.
#[derive(Clone, Debug)]
pub struct WaveletCorrelation {
    pub layout: OctaveLayout,
    pub alpha: SquareMatrix,
    pub rho: SquareMatrix,
    bank: FilterBank,
    /// upper-triangle pair index → table
    tables: Vec<KernelTable>,
}

fn tri_index(m: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * m - a * (a + 1) / 2 + b
}

impl WaveletCorrelation {
    pub fn new(alpha: &SquareMatrix, rho: &SquareMatrix, layout: &OctaveLayout) -> Result<Self, VarError> {
        let bank = build_filters(2).expect("order 2 supported");
        let m = alpha.dim();
        let mut tables = Vec::with_capacity(m * (m + 1) / 2);
        let mut cache: Vec<KernelTable> = Vec::new();
        for a in 0..m {
            for b in a..m {
                let al = alpha.get(a, b);
                let t = match cache.iter().find(|t| t.alpha == al) {
                    Some(t) => t.clone(),
                    None => {
                        let t = KernelTable::new(al, layout, &bank);
                        cache.push(t.clone());
                        t
                    }
                };
                tables.push(t);
            }
        }
        for a in 0..m {
            let t = &tables[tri_index(m, a, a)];
            for j in layout.j1..=layout.j2 {
                if !(t.normalizer(j) > 0.0) {
                    return Err(VarError::NonPositiveNormalizer { j, alpha: t.alpha });
                }
            }
        }
        Ok(Self { layout: layout.clone(), alpha: alpha.clone(), rho: rho.clone(), bank, tables })
    }

    pub fn m(&self) -> usize {
        self.alpha.dim()
    }

    pub fn table(&self, a: usize, b: usize) -> &KernelTable {
        &self.tables[tri_index(self.m(), a, b)]
    }

    /// Unnormalized cross-kernel κ_{ab}(j, j′, τ) with τ = 2^{j′}k′ − 2^j k.
    pub fn kernel(&self, a: usize, b: usize, j: usize, jp: usize, tau: i64) -> f64 {
        let t = self.table(a, b);
        let hit = if j <= jp {
            (tau % (1i64 << j) == 0).then(|| t.get(j, jp, tau >> j)).flatten()
        } else {
            (tau % (1i64 << jp) == 0).then(|| t.get(jp, j, (-tau) >> jp)).flatten()
        };
        hit.unwrap_or_else(|| direct_kernel(&self.bank, t.alpha, j, jp, tau))
    }

    /// r_{q1q2}(j,k; j′,k′) at lag τ = 2^{j′}k′ − 2^j k (any integer lag).
    pub fn corr_at_lag(&self, q1: usize, q2: usize, j: usize, jp: usize, tau: i64) -> f64 {
        let num = self.rho.get(q1, q2) * self.kernel(q1, q2, j, jp, tau);
        let den = (self.table(q1, q1).normalizer(j) * self.table(q2, q2).normalizer(jp)).sqrt();
        num / den
    }

    /// r_{q1q2}(j,k; j′,k′) with dyadic positions.
    pub fn wavelet_corr(&self, q1: usize, q2: usize, j: usize, k: i64, jp: usize, kp: i64) -> f64 {
        self.corr_at_lag(q1, q2, j, jp, (kp << jp) - (k << j))
    }

    /// ρ_{ab} κ_{ab}(j, j, 0): the expected product of coefficients.
    fn scale_moment(&self, a: usize, b: usize, j: usize) -> f64 {
        self.rho.get(a, b) * self.table(a, b).normalizer(j)
    }
}

/// Number of (k, k′) with 2^d k′ − k = m, 0 ≤ k < nj, 0 ≤ k′ < njp.
#[inline]
fn multiplicity(m: i64, nj: i64, njp: i64, d: usize) -> i64 {
    let step = 1i64 << d;
    let lo = (m + step - 1).div_euclid(step).max(0);
    let hi = (m + nj - 1).div_euclid(step).min(njp - 1);
    (hi - lo + 1).max(0)
}

/// Contributions to Cov(α̂_{P1}, α̂_{P2}) / (log2 e)²: same coefficient,
/// same octave at different positions, and across octaves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TermSplit {
    pub variance: f64,
    pub intra_scale: f64,
    pub inter_scale: f64,
}

impl TermSplit {
    pub fn total(&self) -> f64 {
        self.variance + self.intra_scale + self.inter_scale
    }

    pub fn fractions(&self) -> [f64; 3] {
        let t = self.total();
        [self.variance / t, self.intra_scale / t, self.inter_scale / t]
    }

    fn scaled(&self, c: f64) -> Self {
        Self { variance: c * self.variance, intra_scale: c * self.intra_scale, inter_scale: c * self.inter_scale }
    }

    fn add(&self, o: &Self) -> Self {
        Self {
            variance: self.variance + o.variance,
            intra_scale: self.intra_scale + o.intra_scale,
            inter_scale: self.inter_scale + o.inter_scale,
        }
    }
}

fn check_pair_rho(wc: &WaveletCorrelation, p: (usize, usize)) -> Result<(), VarError> {
    let r = wc.rho.get(p.0, p.1);
    if r.abs() < RHO_FLOOR {
        return Err(VarError::InfiniteVariance { pair: p, rho: r });
    }
    Ok(())
}

/// Term decomposition of the covariance approximation for the estimator
/// pairs P1 = (q1,q2), P2 = (q3,q4). Values include the (log2 e)² factor.
pub fn term_decomposition(
    wc: &WaveletCorrelation,
    weights: &RegressionWeights,
    p1: (usize, usize),
    p2: (usize, usize),
) -> Result<TermSplit, VarError> {
    wc.layout.check_weights(weights)?;
    check_pair_rho(wc, p1)?;
    check_pair_rho(wc, p2)?;
    let (q1, q2) = p1;
    let (q3, q4) = p2;
    let rho = |a: usize, b: usize| wc.rho.get(a, b);
    let c13 = rho(q1, q3) * rho(q2, q4);
    let c14 = rho(q1, q4) * rho(q2, q3);
    let (t13, t24, t14, t23) = (wc.table(q1, q3), wc.table(q2, q4), wc.table(q1, q4), wc.table(q2, q3));
    let lay = &wc.layout;
    let mut out = TermSplit::default();
    for j in lay.j1..=lay.j2 {
        for jp in j..=lay.j2 {
            let d = jp - j;
            let (nj, njp) = (lay.count(j) as i64, lay.count(jp) as i64);
            let (s13, s24, s14, s23) = (t13.seq(j, jp), t24.seq(j, jp), t14.seq(j, jp), t23.seq(j, jp));
            let (m_lo, m_hi) = lag_range(nj as usize, njp as usize, d);
            let mut zero = 0.0;
            let mut rest = 0.0;
            for m in m_lo..=m_hi {
                let cnt = multiplicity(m, nj, njp, d);
                if cnt == 0 {
                    continue;
                }
                let num = c13 * s13.at(m) * s24.at(m) + c14 * s14.at(m) * s23.at(m);
                if m == 0 && d == 0 {
                    zero += cnt as f64 * num;
                } else {
                    rest += cnt as f64 * num;
                }
            }
            let w = weights.weight(j) * weights.weight(jp) / (nj as f64 * njp as f64);
            // ordered (j, j′) and, off the diagonal, (j′, j) share the kernel values
            let mut den = 1.0 / (wc.scale_moment(q1, q2, j) * wc.scale_moment(q3, q4, jp));
            if d > 0 {
                den += 1.0 / (wc.scale_moment(q1, q2, jp) * wc.scale_moment(q3, q4, j));
                out.inter_scale += w * den * rest;
            } else {
                out.variance += w * den * zero;
                out.intra_scale += w * den * rest;
            }
        }
    }
    Ok(out.scaled(LOG2_E * LOG2_E))
}

/// Cov(α̂_{P1}, α̂_{P2}).
pub fn cov_alpha(
    wc: &WaveletCorrelation,
    weights: &RegressionWeights,
    p1: (usize, usize),
    p2: (usize, usize),
) -> Result<f64, VarError> {
    Ok(term_decomposition(wc, weights, p1, p2)?.total())
}

fn ordered(p: (usize, usize)) -> (usize, usize) {
    if p.0 <= p.1 {
        p
    } else {
        (p.1, p.0)
    }
}

fn key(p1: (usize, usize), p2: (usize, usize)) -> ((usize, usize), (usize, usize)) {
    let (a, b) = (ordered(p1), ordered(p2));
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn one_based<S: Serializer>(p: &(usize, usize), s: S) -> Result<S::Ok, S::Error> {
    [p.0 + 1, p.1 + 1].serialize(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovEntry {
    #[serde(serialize_with = "one_based")]
    pub pair1: (usize, usize),
    #[serde(serialize_with = "one_based")]
    pub pair2: (usize, usize),
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terms: Option<[f64; 3]>,
}

/// Covariances of all exponent estimates and the derived Var δ̂.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorCovariance {
    pub var_alpha: SquareMatrix,
    pub cov: Vec<CovEntry>,
    pub var_delta: SquareMatrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_terms: Option<Vec<CovEntry>>,
    #[serde(skip)]
    lookup: BTreeMap<((usize, usize), (usize, usize)), (f64, TermSplit)>,
}

impl EstimatorCovariance {
    /// Assembles the report from a table of pair covariances.
    pub fn from_entries(
        m: usize,
        entries: &[((usize, usize), (usize, usize), f64)],
        with_terms: bool,
    ) -> Result<Self, VarError> {
        let splits: Vec<_> =
            entries.iter().map(|&(a, b, v)| (a, b, TermSplit { variance: v, ..Default::default() })).collect();
        Self::assemble(m, splits, with_terms)
    }

    fn assemble(
        m: usize,
        entries: Vec<((usize, usize), (usize, usize), TermSplit)>,
        with_terms: bool,
    ) -> Result<Self, VarError> {
        let mut lookup = BTreeMap::new();
        let mut cov = Vec::new();
        let mut var_alpha = SquareMatrix::zeros(m);
        for (p1, p2, split) in entries {
            let k = key(p1, p2);
            let v = split.total();
            lookup.insert(k, (v, split));
            if k.0 == k.1 {
                var_alpha.set_sym(k.0 .0, k.0 .1, v);
            }
            cov.push(CovEntry { pair1: k.0, pair2: k.1, value: v, terms: with_terms.then(|| split.fractions()) });
        }
        let mut out = Self { var_alpha, cov, var_delta: SquareMatrix::zeros(m), delta_terms: None, lookup };
        let mut dterms = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                if let Ok(split) = out.delta_split((a, b)) {
                    out.var_delta.set_sym(a, b, split.total());
                    if with_terms {
                        dterms.push(CovEntry {
                            pair1: (a, b),
                            pair2: (a, b),
                            value: split.total(),
                            terms: Some(split.fractions()),
                        });
                    }
                }
            }
        }
        if with_terms {
            out.delta_terms = Some(dterms);
        }
        Ok(out)
    }

    pub fn get(&self, p1: (usize, usize), p2: (usize, usize)) -> Option<f64> {
        self.lookup.get(&key(p1, p2)).map(|e| e.0)
    }

    pub fn split(&self, p1: (usize, usize), p2: (usize, usize)) -> Option<TermSplit> {
        self.lookup.get(&key(p1, p2)).map(|e| e.1)
    }

    fn delta_split(&self, pair: (usize, usize)) -> Result<TermSplit, VarError> {
        let (a, b) = ordered(pair);
        let get = |p1, p2| self.split(p1, p2).ok_or(VarError::MissingConstituent(p1, p2));
        let (aa, bb, ab) = ((a, a), (b, b), (a, b));
        let combo = [
            (0.25, get(aa, aa)?),
            (0.25, get(bb, bb)?),
            (1.0, get(ab, ab)?),
            (0.5, get(aa, bb)?),
            (-1.0, get(aa, ab)?),
            (-1.0, get(bb, ab)?),
        ];
        Ok(combo.iter().fold(TermSplit::default(), |acc, (c, s)| acc.add(&s.scaled(*c))))
    }
}

/// Var δ̂ = ¼(V_aa + V_bb) + V_ab + ½C(aa,bb) − C(aa,ab) − C(bb,ab).
pub fn var_delta(cov: &EstimatorCovariance, pair: (usize, usize)) -> Result<f64, VarError> {
    Ok(cov.delta_split(pair)?.total())
}

/// All pair covariances of the exponent estimates for a model.
pub fn estimator_covariance(
    wc: &WaveletCorrelation,
    weights: &RegressionWeights,
    with_terms: bool,
) -> Result<EstimatorCovariance, VarError> {
    let m = wc.m();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a..m).map(move |b| (a, b))).collect();
    let mut entries = Vec::new();
    for (i, &p1) in pairs.iter().enumerate() {
        for &p2 in &pairs[i..] {
            entries.push((p1, p2, term_decomposition(wc, weights, p1, p2)?));
        }
    }
    EstimatorCovariance::assemble(m, entries, with_terms)
}

/// Closed forms that ignore all coefficient correlations except the
/// same-position cross-correlation r = r_{q1q2}(j,0;j,0).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstOrder {
    VarAuto(usize),
    VarCross(usize, usize),
    CovAutoAuto(usize, usize),
    CovAutoCross(usize, usize),
    VarDelta(usize, usize),
}

/// Evaluates a first-order form given r_j per octave.
pub fn first_order_from(
    layout: &OctaveLayout,
    weights: &RegressionWeights,
    which: FirstOrder,
    r: impl Fn(usize) -> f64,
) -> Result<f64, VarError> {
    layout.check_weights(weights)?;
    let mut acc = 0.0;
    for j in layout.j1..=layout.j2 {
        let base = weights.weight(j).powi(2) / layout.count(j) as f64;
        let factor = match which {
            FirstOrder::VarAuto(_) | FirstOrder::CovAutoCross(..) => 2.0,
            FirstOrder::CovAutoAuto(..) => 2.0 * r(j).powi(2),
            FirstOrder::VarCross(a, b) | FirstOrder::VarDelta(a, b) => {
                let rj = r(j);
                if rj.abs() < RHO_FLOOR {
                    return Err(VarError::InfiniteVariance { pair: (a, b), rho: rj });
                }
                let r2 = rj * rj;
                if matches!(which, FirstOrder::VarCross(..)) {
                    1.0 + 1.0 / r2
                } else {
                    r2 + 1.0 / r2 - 2.0
                }
            }
        };
        acc += base * factor;
    }
    Ok(LOG2_E * LOG2_E * acc)
}

/// First-order approximation with r taken from the wavelet correlation.
pub fn first_order(wc: &WaveletCorrelation, weights: &RegressionWeights, which: FirstOrder) -> Result<f64, VarError> {
    let pair = match which {
        FirstOrder::VarAuto(q) => (q, q),
        FirstOrder::VarCross(a, b)
        | FirstOrder::CovAutoAuto(a, b)
        | FirstOrder::CovAutoCross(a, b)
        | FirstOrder::VarDelta(a, b) => (a, b),
    };
    first_order_from(&wc.layout, weights, which, |j| wc.corr_at_lag(pair.0, pair.1, j, j, 0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Alpha,
    Delta,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    #[serde(serialize_with = "one_based")]
    pub pair: (usize, usize),
    pub kind: IntervalKind,
    pub estimate: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PluginCovariance {
    #[serde(flatten)]
    pub cov: EstimatorCovariance,
    pub ci_level: f64,
    pub intervals: Vec<ConfidenceInterval>,
}

/// Plug-in parameters: exponents clamped to the valid range, correlations
/// clamped to [−1, 1].
pub fn plugin_parameters(est: &ScalingEstimate) -> (SquareMatrix, SquareMatrix) {
    let alpha = est.alpha.map(|a| a.clamp(ALPHA_FLOOR, 2.0 - ALPHA_FLOOR));
    let rho = est.rho.map(|r| r.clamp(-1.0, 1.0));
    (alpha, rho)
}

/// Evaluates the covariance approximation at the estimated parameters and
/// builds Gaussian confidence intervals at the requested level.
pub fn plugin_covariance(
    est: &ScalingEstimate,
    layout: &OctaveLayout,
    weights: &RegressionWeights,
    level: f64,
) -> Result<PluginCovariance, VarError> {
    let (alpha, rho) = plugin_parameters(est);
    let m = alpha.dim();
    for a in 0..m {
        for b in a + 1..m {
            if rho.get(a, b).abs() < RHO_FLOOR {
                return Err(VarError::InfiniteVariance { pair: (a, b), rho: rho.get(a, b) });
            }
        }
    }
    let wc = WaveletCorrelation::new(&alpha, &rho, layout)?;
    let cov = estimator_covariance(&wc, weights, false)?;
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let mut intervals = Vec::new();
    for a in 0..m {
        for b in a..m {
            let sd = cov.var_alpha.get(a, b).max(0.0).sqrt();
            let e = est.alpha.get(a, b);
            intervals.push(ConfidenceInterval {
                pair: (a, b),
                kind: IntervalKind::Alpha,
                estimate: e,
                std: sd,
                lower: e - z * sd,
                upper: e + z * sd,
            });
        }
    }
    for a in 0..m {
        for b in a + 1..m {
            let sd = cov.var_delta.get(a, b).max(0.0).sqrt();
            let e = est.delta.get(a, b);
            intervals.push(ConfidenceInterval {
                pair: (a, b),
                kind: IntervalKind::Delta,
                estimate: e,
                std: sd,
                lower: e - z * sd,
                upper: e + z * sd,
            });
        }
    }
    Ok(PluginCovariance { cov, ci_level: level, intervals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{regression_weights, Weighting};

    fn biv(a11: f64, a22: f64, delta: f64, rho: f64) -> (SquareMatrix, SquareMatrix) {
        let a12 = (a11 + a22) / 2.0 - delta;
        (
            SquareMatrix::from_rows(&[vec![a11, a12], vec![a12, a22]]).unwrap(),
            SquareMatrix::from_rows(&[vec![1.0, rho], vec![rho, 1.0]]).unwrap(),
        )
    }

    #[test]
    fn multiplicity_counts_pairs() {
        for &(nj, njp, d) in &[(9i64, 9i64, 0usize), (20, 7, 1), (33, 5, 3)] {
            let mut brute = std::collections::HashMap::new();
            for k in 0..nj {
                for kp in 0..njp {
                    *brute.entry((kp << d) - k).or_insert(0i64) += 1;
                }
            }
            let (lo, hi) = lag_range(nj as usize, njp as usize, d);
            for m in lo - 3..=hi + 3 {
                assert_eq!(multiplicity(m, nj, njp, d), *brute.get(&m).unwrap_or(&0), "m={m}");
            }
        }
    }

    #[test]
    fn lattice_matches_direct_kernel() {
        let layout = OctaveLayout::pyramid(1 << 9, 1, 5).unwrap();
        let bank = build_filters(2).unwrap();
        for &alpha in &[0.2, 0.9, 1.7] {
            let t = KernelTable::new(alpha, &layout, &bank);
            for j in 1..=5 {
                for jp in j..=5 {
                    for m in [-3i64, 0, 1, 5, 17] {
                        let Some(fast) = t.get(j, jp, m) else { continue };
                        let slow = direct_kernel(&bank, alpha, j, jp, m << j);
                        assert!(
                            (fast - slow).abs() <= 1e-10 * t.normalizer(j).abs(),
                            "{alpha} {j} {jp} {m}: {fast} {slow}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn self_correlation_is_one() {
        let (a, r) = biv(0.4, 0.8, 0.1, 0.6);
        let wc = WaveletCorrelation::new(&a, &r, &OctaveLayout::pyramid(1 << 10, 2, 6).unwrap()).unwrap();
        for q in 0..2 {
            for j in 2..=6 {
                assert_eq!(wc.wavelet_corr(q, q, j, 3, j, 3), 1.0);
            }
        }
    }

    #[test]
    fn same_position_correlation_equals_rho_for_equal_exponents() {
        let (a, r) = biv(0.6, 0.6, 0.0, 0.45);
        let wc = WaveletCorrelation::new(&a, &r, &OctaveLayout::pyramid(1 << 10, 2, 6).unwrap()).unwrap();
        for j in 2..=6 {
            assert!((wc.wavelet_corr(0, 1, j, 0, j, 0) - 0.45).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_decays_with_lag() {
        let (a, r) = biv(0.4, 0.8, 0.0, 0.6);
        let wc = WaveletCorrelation::new(&a, &r, &OctaveLayout::pyramid(1 << 12, 2, 6).unwrap()).unwrap();
        let near = wc.wavelet_corr(0, 0, 3, 0, 3, 1).abs();
        let far = wc.wavelet_corr(0, 0, 3, 0, 3, 200).abs();
        assert!(far < 1e-3 && far < near);
    }

    #[test]
    fn first_order_two_octaves() {
        let n = 4096usize;
        let layout = OctaveLayout::explicit(1, 2, vec![n / 2, n / 4]).unwrap();
        let w = regression_weights(1, 2, Weighting::Uniform).unwrap();
        let v = first_order_from(&layout, &w, FirstOrder::VarAuto(0), |_| 0.5).unwrap();
        assert!((v - 12.0 * LOG2_E * LOG2_E / n as f64).abs() < 1e-15);
        assert!(first_order_from(&layout, &w, FirstOrder::VarDelta(0, 1), |_| 1.0).unwrap().abs() < 1e-15);
        assert_eq!(first_order_from(&layout, &w, FirstOrder::CovAutoAuto(0, 1), |_| 0.0).unwrap(), 0.0);
        assert!(matches!(
            first_order_from(&layout, &w, FirstOrder::VarCross(0, 1), |_| 0.0),
            Err(VarError::InfiniteVariance { .. })
        ));
    }

    #[test]
    fn delta_combination_of_zero_inputs() {
        let p = [(0, 0), (0, 1), (1, 1)];
        let mut e = Vec::new();
        for i in 0..3 {
            for k in i..3 {
                e.push((p[i], p[k], 0.0));
            }
        }
        let c = EstimatorCovariance::from_entries(2, &e, false).unwrap();
        assert_eq!(var_delta(&c, (0, 1)).unwrap(), 0.0);
        let partial = EstimatorCovariance::from_entries(2, &e[..4], false).unwrap();
        assert!(matches!(var_delta(&partial, (0, 1)), Err(VarError::MissingConstituent(..))));
    }

    #[test]
    fn delta_combination_with_unit_first_order_inputs() {
        // with r = 1 every first-order constituent equals c·2 except V12 = c·2
        let c = 0.37;
        let p = [(0, 0), (0, 1), (1, 1)];
        let mut e = Vec::new();
        for i in 0..3 {
            for k in i..3 {
                e.push((p[i], p[k], 2.0 * c));
            }
        }
        let cov = EstimatorCovariance::from_entries(2, &e, false).unwrap();
        assert!(var_delta(&cov, (0, 1)).unwrap().abs() < 1e-15);
    }
}
