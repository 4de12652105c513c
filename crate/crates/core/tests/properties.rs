mod common;

use hfbm::dwt::{build_filters, transform, wavelet_variance};
use hfbm::estimate::{analyze, estimate_delta, regression_weights, Weighting};
use hfbm::fctest::{adjust_significance, hfbm_test, hfbm_threshold, Decision};
use hfbm::io::{decode_binary, encode_binary, read_csv, read_path_bytes, write_csv};
use hfbm::model::{delta_of, validate_model, HfBmModel, SquareMatrix};
use hfbm::synth::{synthesize, MultiPath};
use hfbm::varmodel::{cov_alpha, estimator_covariance, term_decomposition, var_delta, OctaveLayout, WaveletCorrelation};
use proptest::prelude::*;

fn sym(dim: usize, vals: &[f64], diag: Option<f64>) -> SquareMatrix {
    let mut m = SquareMatrix::zeros(dim);
    let mut it = vals.iter();
    for i in 0..dim {
        for j in i..dim {
            let v = if i == j { diag.unwrap_or_else(|| *it.next().unwrap()) } else { *it.next().unwrap() };
            m.set_sym(i, j, v);
        }
    }
    m
}

fn model_strategy(dim: usize) -> impl Strategy<Value = HfBmModel> {
    let n_upper = dim * (dim + 1) / 2;
    let n_off = dim * (dim - 1) / 2;
    (
        prop::collection::vec(-0.2f64..1.2, n_upper),
        prop::collection::vec(-1.2f64..1.2, n_off),
        prop::collection::vec(-0.5f64..2.0, dim),
    )
        .prop_map(move |(h, rho, sigma)| HfBmModel {
            m: dim,
            h: sym(dim, &h, None),
            rho: sym(dim, &rho, Some(1.0)),
            sigma,
            regularization: Default::default(),
        })
}

fn admissible_strategy() -> impl Strategy<Value = HfBmModel> {
    (0.05f64..0.95, 0.05f64..0.95, 0.0f64..1.0, 0.0f64..0.45, -0.95f64..0.95, 0.0f64..1.0, 0.0f64..1.0).prop_map(
        |(h1, h2, h3, cut, r, u, v)| {
            let bound = |a: f64, b: f64| (a + b) / 2.0;
            let h3 = h3.clamp(0.05, 0.95);
            let h12 = (bound(h1, h2) - cut * u).max(0.02);
            let h13 = (bound(h1, h3) - cut * v).max(0.02);
            let h23 = (bound(h2, h3) - cut * (1.0 - u)).max(0.02);
            let h = SquareMatrix::from_rows(&[vec![h1, h12, h13], vec![h12, h2, h23], vec![h13, h23, h3]]).unwrap();
            let rho = SquareMatrix::from_rows(&[vec![1.0, r, r / 2.0], vec![r, 1.0, -r / 3.0], vec![r / 2.0, -r / 3.0, 1.0]])
                .unwrap();
            HfBmModel { m: 3, h, rho, sigma: vec![1.0, 2.0, 0.5], regularization: Default::default() }
        },
    )
}

/// Independent statement of the admissibility rules.
fn admissible_by_hand(m: &HfBmModel) -> bool {
    let d = m.m;
    for i in 0..d {
        if !(m.sigma[i] > 0.0) {
            return false;
        }
        for j in 0..d {
            let h = m.h.get(i, j);
            if !(h > 0.0 && h < 1.0) || m.rho.get(i, j).abs() > 1.0 {
                return false;
            }
            if (m.h.get(i, i) + m.h.get(j, j)) - 2.0 * h < 0.0 {
                return false;
            }
        }
    }
    true
}

fn bivariate(a11: f64, a22: f64, delta: f64, rho: f64) -> (SquareMatrix, SquareMatrix) {
    let (a, r) = common::bivariate_arrays(a11, a22, delta, rho);
    (
        SquareMatrix::from_rows(&[a[0].to_vec(), a[1].to_vec()]).unwrap(),
        SquareMatrix::from_rows(&[r[0].to_vec(), r[1].to_vec()]).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn validation_matches_rules(model in prop_oneof![model_strategy(2), model_strategy(3)]) {
        let by_hand = admissible_by_hand(&model);
        let delta_ok = (0..model.m).all(|i| (0..model.m).all(|j| delta_of(&model).get(i, j) >= 0.0));
        prop_assert_eq!(validate_model(&model).is_ok(), by_hand);
        if by_hand {
            prop_assert!(delta_ok);
        }
    }

    #[test]
    fn delta_permutes_with_components(model in admissible_strategy(), perm in Just([0usize, 1, 2]).prop_shuffle()) {
        prop_assert!(validate_model(&model).is_ok());
        let d = delta_of(&model);
        let dp = delta_of(&model.permuted(&perm));
        for i in 0..3 {
            for j in 0..3 {
                prop_assert_eq!(dp.get(i, j), d.get(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn delta_is_linear_in_alpha(a in prop::collection::vec(0.01f64..1.99, 6)) {
        let alpha = sym(3, &a, None);
        let d = estimate_delta(&alpha);
        for i in 0..3 {
            for j in 0..3 {
                let direct = (alpha.get(i, i) + alpha.get(j, j)) / 2.0 - alpha.get(i, j);
                prop_assert!((d.get(i, j) - direct).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn regression_weights_are_a_slope_functional(
        j1 in 1usize..6,
        span in 1usize..8,
        log_n in 12usize..20,
        by_count in any::<bool>(),
    ) {
        let j2 = j1 + span;
        prop_assume!(j2 + 2 <= log_n);
        let n = 1usize << log_n;
        let weighting = if by_count { Weighting::ByCount(n) } else { Weighting::Uniform };
        let w = regression_weights(j1, j2, weighting).unwrap();
        let s0: f64 = w.w.iter().sum();
        let s1: f64 = w.w.iter().enumerate().map(|(i, v)| (j1 + i) as f64 * v).sum();
        prop_assert!(s0.abs() < 1e-12 && (s1 - 1.0).abs() < 1e-12);
        let v: Vec<f64> = if by_count {
            (j1..=j2).map(|j| common::count(n, j) as f64).collect()
        } else {
            vec![1.0; span + 1]
        };
        for (a, b) in w.w.iter().zip(common::wls_weights(j1, &v)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hfbm_decision_rules_agree(delta in -0.5f64..0.5, var in 1e-6f64..0.1, s in 0.001f64..0.5, scale in 1.0f64..3.0) {
        let r = hfbm_test((0, 1), delta, var, s).unwrap();
        prop_assert_eq!(r.decision == Decision::Reject, r.p < s);
        let thr = hfbm_threshold(var, s);
        // away from the boundary the threshold form gives the same answer
        if (delta.abs() - thr).abs() > 1e-9 * thr {
            prop_assert_eq!(r.decision == Decision::Reject, delta.abs() > thr);
        }
        let further = hfbm_test((0, 1), delta * scale, var, s).unwrap();
        prop_assert!(further.p <= r.p);
    }

    #[test]
    fn calibrated_level_never_exceeds_target(p in prop::collection::vec(0.0f64..1.0, 50..300), target in 0.01f64..0.5) {
        let a = adjust_significance(&p, target).unwrap();
        prop_assert!(a.achieved_size <= target + 1e-12);
        let rejected = p.iter().filter(|&&x| x < a.level).count();
        prop_assert!((rejected as f64 / p.len() as f64 - a.achieved_size).abs() < 1e-15);
    }

    #[test]
    fn path_files_roundtrip(m in 1usize..4, n in 2usize..40, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| f64::from_bits(rng.random::<u64>() >> 2) * if rng.random::<bool>() { -1.0 } else { 1.0 }).collect())
            .collect();
        let path = MultiPath::from_rows(rows).unwrap();
        let bin = encode_binary(&path);
        prop_assert_eq!(&decode_binary(&bin).unwrap().data, &path.data);
        let mut text = Vec::new();
        write_csv(&path, &mut text).unwrap();
        prop_assert_eq!(&read_csv(&text[..]).unwrap().data, &path.data);
        prop_assert_eq!(&read_path_bytes(&text).unwrap().data, &path.data);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200), magic in any::<bool>()) {
        let mut b = bytes;
        if magic {
            b.splice(0..0, b"HFBM".iter().copied());
        }
        let _ = read_path_bytes(&b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimates_ignore_component_scale(seed in any::<u64>(), c1 in 1e-3f64..1e3, c2 in 1e-3f64..1e3) {
        let model = HfBmModel::bivariate(0.4, 0.8, 0.1, 0.6);
        let path = synthesize(&model, 1024, seed).unwrap();
        let scaled = MultiPath::from_rows(vec![
            path.row(0).iter().map(|v| v * c1).collect(),
            path.row(1).iter().map(|v| v * c2).collect(),
        ])
        .unwrap();
        let (a, _) = analyze(&path, 2, 7, Weighting::ByCountAuto).unwrap();
        let (b, _) = analyze(&scaled, 2, 7, Weighting::ByCountAuto).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((a.alpha.get(i, j) - b.alpha.get(i, j)).abs() < 1e-10);
                prop_assert!((a.delta.get(i, j) - b.delta.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn wavelet_variance_is_symmetric(seed in any::<u64>(), rho in -0.9f64..0.9) {
        let path = synthesize(&HfBmModel::bivariate(0.6, 1.0, 0.05, rho), 512, seed).unwrap();
        let pyr = transform(&path, 1, 5).unwrap();
        prop_assert_eq!(wavelet_variance(&pyr, 0, 1), wavelet_variance(&pyr, 1, 0));
    }

    #[test]
    fn correlation_kernel_is_symmetric(
        a11 in 0.1f64..1.9,
        a22 in 0.1f64..1.9,
        frac in 0.0f64..1.0,
        rho in -0.95f64..0.95,
        j in 1usize..5,
        jp in 1usize..5,
        k in 0i64..20,
        kp in 0i64..20,
    ) {
        let delta = frac * (a11 + a22) / 2.0 * 0.9;
        let (alpha, r) = bivariate(a11, a22, delta, rho);
        let layout = OctaveLayout::pyramid(1024, 1, 5).unwrap();
        let wc = WaveletCorrelation::new(&alpha, &r, &layout).unwrap();
        for (q1, q2) in [(0, 1), (0, 0), (1, 1)] {
            let x = wc.wavelet_corr(q1, q2, j, k, jp, kp);
            let y = wc.wavelet_corr(q2, q1, jp, kp, j, k);
            prop_assert!((x - y).abs() <= 1e-12, "{x} {y}");
        }
    }

    #[test]
    fn var_delta_is_nonnegative(
        a11 in 0.05f64..1.95,
        a22 in 0.05f64..1.95,
        frac in 0.0f64..1.0,
        rho in prop_oneof![-0.99f64..-0.05, 0.05f64..0.99],
        uniform in any::<bool>(),
    ) {
        let delta = frac * ((a11 + a22) / 2.0 - 0.05);
        let (alpha, r) = bivariate(a11, a22, delta, rho);
        let layout = OctaveLayout::pyramid(1024, 2, 6).unwrap();
        let w = regression_weights(2, 6, if uniform { Weighting::Uniform } else { Weighting::ByCount(1024) }).unwrap();
        let wc = WaveletCorrelation::new(&alpha, &r, &layout).unwrap();
        let cov = estimator_covariance(&wc, &w, false).unwrap();
        prop_assert!(var_delta(&cov, (0, 1)).unwrap() >= -1e-12);
    }

    #[test]
    fn term_split_totals_match_brute_force(
        a11 in 0.1f64..1.9,
        a22 in 0.1f64..1.9,
        frac in 0.0f64..0.8,
        rho in 0.2f64..0.95,
        p1 in 0usize..3,
        p2 in 0usize..3,
    ) {
        let delta = frac * (a11 + a22) / 2.0;
        let (alpha, r) = bivariate(a11, a22, delta, rho);
        let (aa, rr) = common::bivariate_arrays(a11, a22, delta, rho);
        let pairs = [(0, 0), (1, 1), (0, 1)];
        let (n, j1, j2) = (256, 1, 4);
        let layout = OctaveLayout::pyramid(n, j1, j2).unwrap();
        let w = regression_weights(j1, j2, Weighting::ByCount(n)).unwrap();
        let wc = WaveletCorrelation::new(&alpha, &r, &layout).unwrap();
        let split = term_decomposition(&wc, &w, pairs[p1], pairs[p2]).unwrap();
        let total = cov_alpha(&wc, &w, pairs[p1], pairs[p2]).unwrap();
        let brute = common::brute_force_cov(&aa, &rr, n, j1, j2, &w.w, pairs[p1], pairs[p2]);
        prop_assert!((split.total() - total).abs() <= 1e-9 * total.abs());
        prop_assert!((total - brute).abs() <= 1e-9 * brute.abs(), "{total} {brute}");
    }
}

/// Periodic orthonormal pyramid written out from the filter taps.
fn periodic_energy(x: &[f64]) -> f64 {
    let bank = build_filters(2).unwrap();
    let mut a = x.to_vec();
    let mut energy = 0.0;
    while a.len() >= 2 {
        let n = a.len();
        let mut next = vec![0.0; n / 2];
        for (k, slot) in next.iter_mut().enumerate() {
            let (mut s, mut d) = (0.0, 0.0);
            for i in 0..bank.h.len() {
                let v = a[(2 * k + i) % n];
                s += bank.h[i] * v;
                d += bank.g[i] * v;
            }
            *slot = s;
            energy += d * d;
        }
        a = next;
    }
    energy + a[0] * a[0]
}

proptest! {
    #[test]
    fn periodic_pyramid_conserves_energy(x in prop::collection::vec(-1e3f64..1e3, 256)) {
        let e: f64 = x.iter().map(|v| v * v).sum();
        prop_assume!(e > 0.0);
        prop_assert!((periodic_energy(&x) - e).abs() <= 1e-8 * e);
    }
}
