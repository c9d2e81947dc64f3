use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use statrs::function::gamma::ln_gamma;

use simcate::contrastive::{oracle_linear_map, Encoder};
use simcate::dgp::{
    build_linear_pair, generate_observational, generate_simulator_cf, sample_latents, GapConfig, LatentMode,
    LinearDgpPair, ObservationalDataset,
};
use simcate::estimators::{fit_sim_only_linear, fit_simponet_linear, AltMinConfig, CateModel, EstimatorKind, Head};
use simcate::metrics::{
    as_column, cate_error, check_decomposition_bound, check_generalization_bound, empirical_distance, factual_error,
    paired_t_test_one_sided, student_t_cdf, DistanceKind,
};
use simcate::nn::Mlp;
use simcate::rng::seeded;
use simcate::Error;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn spec(gaps: (f64, f64, f64), n_z: usize, seed: u64) -> LinearDgpPair {
    build_linear_pair(GapConfig::new(gaps.0, gaps.1, gaps.2).unwrap(), n_z, (0.0, 0.0), &mut seeded(seed)).unwrap()
}

fn linear_model(f: [DMatrix<f64>; 2], w: [DVector<f64>; 2]) -> CateModel {
    let [w0, w1] = w;
    CateModel::new(
        EstimatorKind::MuOnly,
        Encoder::linear(f, false).unwrap(),
        [Head::Linear { w: w0 }, Head::Linear { w: w1 }],
    )
}

fn perfect_model(s: &LinearDgpPair) -> CateModel {
    linear_model(s.r_inv.clone(), s.w.clone())
}

#[test]
fn cate_error_examples() {
    let (mse, rmse) = cate_error(&v(&[1.0, 2.0]), &v(&[2.0, 5.0])).unwrap();
    assert_eq!(mse, 5.0);
    assert_eq!(rmse, 5f64.sqrt());
    assert_eq!(cate_error(&v(&[3.0]), &v(&[0.0])).unwrap(), (9.0, 3.0));
    assert_eq!(cate_error(&v(&[2.0, 5.0]), &v(&[1.0, 2.0])).unwrap().0, 5.0);
    assert!(cate_error(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    assert!(cate_error(&v(&[]), &v(&[])).is_err());
}

#[test]
fn factual_error_examples() {
    let m = linear_model(
        [DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
        [v(&[1.0]), v(&[2.0])],
    );
    let d = ObservationalDataset::new(DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]), vec![0, 1, 1], v(&[0.0, 4.0, 7.0]))
        .unwrap();
    let (mse, rows) = factual_error(&m, &d).unwrap();
    assert_eq!(rows, v(&[1.0, 0.0, 1.0]));
    assert!((mse - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn empirical_distance_examples() {
    let probe = sample_latents(40, 3, &mut seeded(1), LatentMode::Gaussian).unwrap();
    let id = |z: &DMatrix<f64>| Ok(z.clone());
    assert_eq!(empirical_distance(DistanceKind::ZSpace, id, id, &probe).unwrap(), 0.0);
    let shifted = |z: &DMatrix<f64>| Ok(z.add_scalar(1.0));
    let one = |z: &DMatrix<f64>| Ok(as_column(z.column(0).into_owned()));
    let one_shift = |z: &DMatrix<f64>| Ok(as_column(z.column(0).add_scalar(1.0)));
    assert!((empirical_distance(DistanceKind::ZSpace, one, one_shift, &probe).unwrap() - 1.0).abs() < 1e-12);
    assert!((empirical_distance(DistanceKind::ZSpace, id, shifted, &probe).unwrap() - 3.0).abs() < 1e-12);

    let a = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.3);
    let b = DMatrix::from_fn(3, 2, |i, j| ((i * j) as f64).sin());
    let fa = |x: &DMatrix<f64>| Ok(x * &a);
    let fb = |x: &DMatrix<f64>| Ok(x * &b);
    let mut hand = 0.0;
    for i in 0..probe.nrows() {
        for k in 0..2 {
            let mut s = 0.0;
            for j in 0..3 {
                s += probe[(i, j)] * (a[(j, k)] - b[(j, k)]);
            }
            hand += s * s;
        }
    }
    hand /= probe.nrows() as f64;
    let d = empirical_distance(DistanceKind::XGivenT, fa, fb, &probe).unwrap();
    assert!((d - hand).abs() <= 1e-12 * hand);
    assert_eq!(d, empirical_distance(DistanceKind::XGivenT, fb, fa, &probe).unwrap());

    assert!(empirical_distance(DistanceKind::ZSpace, id, one, &probe).is_err());
    assert!(empirical_distance(DistanceKind::ZSpace, id, id, &DMatrix::zeros(0, 3)).is_err());
}

/// CDF by Simpson quadrature of the density, normalised with log-gamma.
fn t_cdf_by_quadrature(t: f64, df: f64) -> f64 {
    let log_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let pdf = |x: f64| (log_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let n = 20_000;
    let h = t.abs() / n as f64;
    let mut s = pdf(0.0) + pdf(t.abs());
    for k in 1..n {
        s += pdf(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + t.signum() * s * h / 3.0
}

#[test]
fn t_cdf_matches_quadrature() {
    for df in [2.0, 5.0, 30.0, 100.0] {
        for k in -12..=12 {
            let t = k as f64 * 0.5;
            let (a, b) = (student_t_cdf(t, df), t_cdf_by_quadrature(t, df));
            assert!((a - b).abs() <= 1e-6, "df {df} t {t}: {a} vs {b}");
        }
    }
    assert!(student_t_cdf(f64::NAN, 3.0).is_nan());
    assert!(student_t_cdf(1.0, 0.0).is_nan());
    assert_eq!(student_t_cdf(f64::INFINITY, 3.0), 1.0);
}

#[test]
fn paired_t_test_examples() {
    let a = v(&[0.0, 0.0, 0.0]);
    let b = v(&[1.0, 2.0, 3.0]);
    let p = paired_t_test_one_sided(&a, &b).unwrap();
    let t = 2.0 * 3f64.sqrt();
    let expected = 0.5 - t / (2.0 * (2.0 + t * t).sqrt());
    assert!((p - expected).abs() < 1e-12);
    assert!((p - 0.0371).abs() < 1e-4);
    assert!((paired_t_test_one_sided(&b, &a).unwrap() - (1.0 - expected)).abs() < 1e-12);
    assert_eq!(paired_t_test_one_sided(&b, &b).unwrap(), 0.5);
    assert_eq!(paired_t_test_one_sided(&b, &b.add_scalar(-1.0)).unwrap(), 1.0);
    assert!(paired_t_test_one_sided(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).is_err());
    assert!(paired_t_test_one_sided(&a, &v(&[1.0, 2.0])).is_err());
}

#[test]
fn perfect_model_has_zero_bounds() {
    let s = spec((0.3, 0.2, 0.2), 4, 2);
    let m = perfect_model(&s);
    let probe = sample_latents(50, 4, &mut seeded(3), LatentMode::Gaussian).unwrap();
    for t in 0..2 {
        let r = check_decomposition_bound(&m, &s, &probe, t).unwrap();
        assert!(r.lhs < 1e-20 && r.rhs < 1e-20);
        assert!(r.holds(1e-12, 0.0));
        let g = check_generalization_bound(&m, &s, (&Encoder::linear(s.s_inv.clone(), false).unwrap(), &m), &probe, t)
            .unwrap();
        assert!(g.lhs < 1e-20);
        assert!(g.holds(0.0, 0.0));
    }
}

#[test]
fn counterfactual_only_error_is_tight_by_two() {
    let s = spec((0.3, 0.2, 0.2), 3, 4);
    let delta = v(&[0.5, -1.0, 0.25]);
    let probe = sample_latents(60, 3, &mut seeded(5), LatentMode::Gaussian).unwrap();
    for t in 0..2u8 {
        let mut w = s.w.clone();
        w[1 - t as usize] += &delta;
        let m = linear_model(s.r_inv.clone(), w);
        let r = check_decomposition_bound(&m, &s, &probe, t).unwrap();
        let expected = (&probe * &delta).norm_squared() / 60.0;
        assert!((r.lhs - expected).abs() <= 1e-10 * expected);
        assert!(r.components["eps_f"] < 1e-20);
        assert!((r.components["eps_cf"] - expected).abs() <= 1e-10 * expected);
        assert!((r.rhs - 2.0 * r.lhs).abs() <= 1e-10 * expected);
        assert!(r.holds(0.0, 0.0));
    }
}

#[test]
fn decomposition_bound_holds_for_random_models() {
    for seed in 0..20 {
        let s = spec((0.4, 0.3, 0.3), 3, seed);
        let mut rng = seeded(seed + 1000);
        let m = linear_model(
            [
                DMatrix::from_fn(3, 3, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0)),
                DMatrix::from_fn(3, 3, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0)),
            ],
            [DVector::from_fn(3, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0)), s.w[1].clone()],
        );
        let probe = sample_latents(30, 3, &mut seeded(seed), LatentMode::Gaussian).unwrap();
        for t in 0..2 {
            assert!(check_decomposition_bound(&m, &s, &probe, t).unwrap().holds(1e-12, 1e-12));
        }
    }
}

fn fitted(s: &LinearDgpPair, seed: u64) -> (CateModel, Encoder, CateModel) {
    let z = sample_latents(300, s.n_z, &mut seeded(seed), LatentMode::Gaussian).unwrap();
    let d = generate_observational(s, &z, &mut seeded(seed + 1)).unwrap();
    let zs = sample_latents(300, s.n_z, &mut seeded(seed + 2), LatentMode::Gaussian).unwrap();
    let syn = generate_simulator_cf(s, &zs, &mut seeded(seed + 3)).unwrap();
    let f = oracle_linear_map(&s.s_inv).unwrap();
    let (m, _) = fit_simponet_linear(&d, &syn, &f, &AltMinConfig::default()).unwrap();
    let sim = fit_sim_only_linear(&syn, &f).unwrap();
    (m, f, sim)
}

#[test]
fn generalization_bound_components_match_definitions() {
    let s = spec((0.3, 0.3, 0.3), 3, 6);
    let (m, f, sim) = fitted(&s, 7);
    let probe = sample_latents(80, 3, &mut seeded(8), LatentMode::Gaussian).unwrap();
    for t in 0..2u8 {
        let r = check_generalization_bound(&m, &s, (&f, &sim), &probe, t).unwrap();
        assert!(r.holds(1e-12, 1e-12), "{r:?}");
        let x = &probe * s.r(t);
        let d_x_true = (&x * (&s.r_inv[t as usize] - &s.s_inv[t as usize])).norm_squared() / 80.0;
        assert!((r.components["d_x_f_fs"] - d_x_true).abs() <= 1e-10 * d_x_true);
        let d_z = (&probe * (s.w_tau() - s.w_tau_s())).norm_squared() / 80.0;
        assert!((r.components["d_z_tau_tau_s"] - d_z).abs() <= 1e-10 * d_z.max(1e-12));
        let u = m.linear_effect().unwrap();
        assert_eq!(r.k_tau, s.w_tau().norm().max(u.norm()));
        let c = &r.components;
        let k2 = r.k_tau * r.k_tau;
        let rhs = 8.0 * c["eps_f"]
            + 12.0 * c["d_h"]
            + 12.0 * k2 * c["d_x_fhat_ftilde"]
            + 12.0 * c["d_z_tau_tau_s"]
            + 12.0 * k2 * c["d_x_f_fs"];
        assert!((r.rhs - rhs).abs() <= 1e-12 * rhs);
    }
}

#[test]
fn larger_effect_gap_inflates_bound() {
    let base = spec((0.3, 0.2, 0.0), 3, 9);
    let (m, f, sim) = fitted(&base, 10);
    let probe = sample_latents(60, 3, &mut seeded(11), LatentMode::Gaussian).unwrap();
    let delta = v(&[0.3, -0.2, 0.1]);
    let mut prev: Option<(f64, f64)> = None;
    let mut first_dz = 0.0;
    for k in [0.0, 1.0, 2.0, 4.0] {
        let mut w_s = base.w.clone();
        w_s[1] += &delta * k;
        let s = LinearDgpPair::from_parts(base.r_inv.clone(), base.s_inv.clone(), base.w.clone(), w_s, (0.0, 0.0))
            .unwrap();
        let r = check_generalization_bound(&m, &s, (&f, &sim), &probe, 0).unwrap();
        let dz = r.components["d_z_tau_tau_s"];
        if k == 1.0 {
            first_dz = dz;
        }
        if k > 1.0 {
            assert!((dz - k * k * first_dz).abs() <= 1e-10 * dz);
        }
        if let Some((pdz, prhs)) = prev {
            assert!(dz > pdz && r.rhs > prhs);
        }
        assert_eq!(r.lhs, check_generalization_bound(&m, &base, (&f, &sim), &probe, 0).unwrap().lhs);
        prev = Some((dz, r.rhs));
    }
}

#[test]
fn nonlinear_models_are_unsupported() {
    let s = spec((0.3, 0.3, 0.3), 3, 12);
    let (m, f, sim) = fitted(&s, 13);
    let mut nn = m.clone();
    nn.mu_hat = [Head::Mlp(Mlp::new(3, 4, &mut seeded(0))), Head::Mlp(Mlp::new(3, 4, &mut seeded(1)))];
    let probe = sample_latents(10, 3, &mut seeded(14), LatentMode::Gaussian).unwrap();
    assert!(matches!(
        check_generalization_bound(&nn, &s, (&f, &sim), &probe, 0),
        Err(Error::Unsupported(_))
    ));
    assert!(check_decomposition_bound(&nn, &s, &probe, 0).is_ok());
    assert!(check_decomposition_bound(&m, &s, &probe, 2).is_err());
    assert!(check_decomposition_bound(&m, &s, &DMatrix::zeros(4, 2), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cate_error_is_symmetric_and_consistent(xs in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..40)) {
        let a = DVector::from_iterator(xs.len(), xs.iter().map(|p| p.0));
        let b = DVector::from_iterator(xs.len(), xs.iter().map(|p| p.1));
        let (m1, r1) = cate_error(&a, &b).unwrap();
        let (m2, _) = cate_error(&b, &a).unwrap();
        prop_assert_eq!(m1, m2);
        prop_assert!((r1 * r1 - m1).abs() <= 1e-12 * m1.max(1.0));
        prop_assert!(m1 >= 0.0);
    }

    #[test]
    fn t_test_flips_under_swap(xs in prop::collection::vec((0.0..5.0f64, 0.0..5.0f64), 3..30)) {
        let a = DVector::from_iterator(xs.len(), xs.iter().map(|p| p.0));
        let b = DVector::from_iterator(xs.len(), xs.iter().map(|p| p.1));
        let p = paired_t_test_one_sided(&a, &b).unwrap();
        let q = paired_t_test_one_sided(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p + q - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn t_cdf_is_monotone(t in -20.0..20.0f64, dt in 0.0..5.0f64, df in 1.0..200.0f64) {
        prop_assert!(student_t_cdf(t, df) <= student_t_cdf(t + dt, df) + 1e-15);
    }
}
