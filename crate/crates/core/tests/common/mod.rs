//! Reference computations shared by the integration and acceptance tests.
//! Everything here is written from the defining formulas, not from the
//! library's fast paths.
#![allow(dead_code)]

use std::collections::HashMap;

pub const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// db2 low-pass taps from their closed form.
pub fn db2_lowpass() -> [f64; 4] {
    let s3 = 3f64.sqrt();
    let d = 4.0 * 2f64.sqrt();
    [(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
}

pub fn db2_highpass() -> [f64; 4] {
    let h = db2_lowpass();
    [h[3], -h[2], h[1], -h[0]]
}

/// Undecimated (à-trous) details without rescaling: entry [j-1][t] is the
/// octave-j output at time t, NaN where the filter support leaves the data.
pub fn atrous_details(x: &[f64], jmax: usize) -> Vec<Vec<f64>> {
    let (h, g) = (db2_lowpass(), db2_highpass());
    let n = x.len();
    let mut approx: Vec<f64> = x.to_vec();
    let mut out = Vec::new();
    for j in 1..=jmax {
        let step = 1usize << (j - 1);
        let mut a = vec![f64::NAN; n];
        let mut d = vec![f64::NAN; n];
        for t in 0..n {
            if t < 3 * step {
                continue;
            }
            let (mut sa, mut sd) = (0.0, 0.0);
            for i in 0..4 {
                let v = approx[t - i * step];
                sa += h[i] * v;
                sd += g[i] * v;
            }
            a[t] = sa;
            d[t] = sd;
        }
        out.push(d);
        approx = a;
    }
    out
}

/// Equivalent filter of the octave-j detail of the decimated pyramid,
/// obtained by pushing unit impulses through the à-trous cascade.
pub fn equivalent_filter(j: usize) -> Vec<f64> {
    let len = 3 * ((1usize << j) - 1) + 1;
    let mut f = vec![0.0; len];
    for (u, slot) in f.iter_mut().enumerate() {
        let mut x = vec![0.0; len];
        x[len - 1 - u] = 1.0;
        *slot = atrous_details(&x, j)[j - 1][len - 1];
    }
    f
}

/// E[ΔX_a(t) ΔX_b(t+τ)] of the ideal model with unit amplitudes.
pub fn ideal_increment_cov(alpha: f64, rho: f64, tau: i64) -> f64 {
    let p = |x: i64| (x.abs() as f64).powf(alpha);
    rho * (p(tau + 1) + p(tau - 1) - 2.0 * p(tau))
}

/// Cov of undecimated-position details d_a(j, t), d_b(j', t') for a model
/// with covariance ρ(|s|^α + |t|^α − |s − t|^α); only the last term survives
/// the zero-sum filters.
pub struct CoefficientCov {
    filters: Vec<Vec<f64>>,
    /// c(p) = Σ_u f_j(u) f_j'(u + p), stored from p = −(len_j − 1)
    xcorr: HashMap<(usize, usize), Vec<f64>>,
    memo: HashMap<(usize, usize, u64, i64), f64>,
}

impl CoefficientCov {
    pub fn new(jmax: usize) -> Self {
        Self { filters: (1..=jmax).map(equivalent_filter).collect(), xcorr: HashMap::new(), memo: HashMap::new() }
    }

    /// −Σ_u Σ_v f_j(u) f_j'(v) |(t − u) − (t' − v)|^α with Δ = t − t'.
    pub fn unit(&mut self, alpha: f64, j: usize, jp: usize, delta: i64) -> f64 {
        let key = (j, jp, alpha.to_bits(), delta);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let (fj, fjp) = (&self.filters[j - 1], &self.filters[jp - 1]);
        let c = self.xcorr.entry((j, jp)).or_insert_with(|| {
            let mut c = vec![0.0; fj.len() + fjp.len() - 1];
            for (u, &a) in fj.iter().enumerate() {
                for (v, &b) in fjp.iter().enumerate() {
                    c[v + fj.len() - 1 - u] += a * b;
                }
            }
            c
        });
        let shift = fj.len() as i64 - 1;
        let mut acc = 0.0;
        for (i, &ci) in c.iter().enumerate() {
            let lag = delta + i as i64 - shift;
            if lag != 0 {
                acc -= ci * (lag.abs() as f64).powf(alpha);
            }
        }
        self.memo.insert(key, acc);
        acc
    }
}

/// Coefficient count of octave j under valid convolution.
pub fn count(n: usize, j: usize) -> usize {
    let o = 3 * ((1usize << j) - 1);
    (n - 1 - o) / (1usize << j) + 1
}

/// Covariance of α̂_{P1}, α̂_{P2} by direct summation over every pair of
/// coefficients (k, k′) and every ordered octave pair (j, j′):
/// (log2 e)² Σ w_j w_j′ Cov(S_P1(j), S_P2(j′)) / (E S_P1(j) E S_P2(j′)).
pub fn brute_force_cov(
    alpha: &[[f64; 2]; 2],
    rho: &[[f64; 2]; 2],
    n: usize,
    j1: usize,
    j2: usize,
    w: &[f64],
    p1: (usize, usize),
    p2: (usize, usize),
) -> f64 {
    let mut cc = CoefficientCov::new(j2);
    let pos = |j: usize, k: usize| ((k << j) + 3 * ((1usize << j) - 1)) as i64;
    let (q1, q2) = p1;
    let (q3, q4) = p2;
    let mut total = 0.0;
    for j in j1..=j2 {
        for jp in j1..=j2 {
            let (nj, njp) = (count(n, j), count(n, jp));
            // dense lag tables for the four index pairs, filled on first use
            let lo = pos(j, 0) - pos(jp, njp - 1);
            let width = (pos(j, nj - 1) - lo + 1) as usize;
            let pairs = [(q1, q3), (q2, q4), (q1, q4), (q2, q3)];
            let mut tables = vec![vec![f64::NAN; width]; 4];
            let mut s = 0.0;
            for k in 0..nj {
                for kp in 0..njp {
                    let delta = pos(j, k) - pos(jp, kp);
                    let i = (delta - lo) as usize;
                    let mut e = [0.0; 4];
                    for (slot, &(a, b)) in pairs.iter().enumerate() {
                        if tables[slot][i].is_nan() {
                            tables[slot][i] = rho[a][b] * cc.unit(alpha[a][b], j, jp, delta);
                        }
                        e[slot] = tables[slot][i];
                    }
                    s += e[0] * e[1] + e[2] * e[3];
                }
            }
            let cov_s = s / (nj as f64 * njp as f64);
            let m12 = rho[q1][q2] * cc.unit(alpha[q1][q2], j, j, 0);
            let m34 = rho[q3][q4] * cc.unit(alpha[q3][q4], jp, jp, 0);
            total += w[j - j1] * w[jp - j1] * cov_s / (m12 * m34);
        }
    }
    LOG2_E * LOG2_E * total
}

/// Bivariate exponent and correlation arrays of (α11, α22, δ, ρ).
pub fn bivariate_arrays(a11: f64, a22: f64, delta: f64, rho: f64) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
    let a12 = (a11 + a22) / 2.0 - delta;
    ([[a11, a12], [a12, a22]], [[1.0, rho], [rho, 1.0]])
}

/// Weighted least-squares slope weights with per-octave weight v_j.
pub fn wls_weights(j1: usize, v: &[f64]) -> Vec<f64> {
    let js: Vec<f64> = (0..v.len()).map(|i| (j1 + i) as f64).collect();
    let s0: f64 = v.iter().sum();
    let s1: f64 = v.iter().zip(&js).map(|(a, j)| a * j).sum();
    let s2: f64 = v.iter().zip(&js).map(|(a, j)| a * j * j).sum();
    let det = s0 * s2 - s1 * s1;
    v.iter().zip(&js).map(|(a, j)| a * (s0 * j - s1) / det).collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Least-squares slope of y on x.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
