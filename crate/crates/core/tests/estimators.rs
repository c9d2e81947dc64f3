use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use simcate::contrastive::{oracle_linear_map, Encoder};
use simcate::dgp::{
    build_linear_pair, generate_eval, generate_observational, generate_simulator_cf, sample_latents, EvalDataset,
    GapConfig, LatentMode, LinearDgpPair, ObservationalDataset, SimulatorDataset,
};
use simcate::estimators::{
    analytic_cate_error, fit_mu_only_linear, fit_real_only_linear, fit_sim_only_linear, fit_simponet_linear,
    predict_cate, AltMinConfig, CateModel, EstimatorKind, Head,
};
use simcate::metrics::{cate_error, factual_error};
use simcate::rng::seeded;
use simcate::Error;

struct Instance {
    spec: LinearDgpPair,
    d_trn: ObservationalDataset,
    d_syn: SimulatorDataset,
    d_tst: EvalDataset,
    oracle: Encoder,
}

fn instance(spec: LinearDgpPair, n: usize, seed: u64) -> Instance {
    let n_z = spec.n_z;
    let z = sample_latents(n, n_z, &mut seeded(seed), LatentMode::Gaussian).unwrap();
    let d_trn = generate_observational(&spec, &z, &mut seeded(seed + 1)).unwrap();
    let zs = sample_latents(n, n_z, &mut seeded(seed + 2), LatentMode::Gaussian).unwrap();
    let d_syn = generate_simulator_cf(&spec, &zs, &mut seeded(seed + 3)).unwrap();
    let zt = sample_latents(n / 2, n_z, &mut seeded(seed + 4), LatentMode::Gaussian).unwrap();
    let d_tst = generate_eval(&spec, &zt, &mut seeded(seed + 5)).unwrap();
    let oracle = oracle_linear_map(&spec.s_inv).unwrap();
    Instance {
        spec,
        d_trn,
        d_syn,
        d_tst,
        oracle,
    }
}

fn random_instance(gaps: (f64, f64, f64), n_z: usize, n: usize, seed: u64) -> Instance {
    let g = GapConfig::new(gaps.0, gaps.1, gaps.2).unwrap();
    let spec = build_linear_pair(g, n_z, (0.0, 0.0), &mut seeded(seed)).unwrap();
    instance(spec, n, seed + 10)
}

fn scalar_spec(r_inv: [f64; 2], s_inv: [f64; 2], w: [f64; 2], w_s: [f64; 2]) -> LinearDgpPair {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    let v = |v: f64| DVector::from_element(1, v);
    LinearDgpPair::from_parts(
        [m(r_inv[0]), m(r_inv[1])],
        [m(s_inv[0]), m(s_inv[1])],
        [v(w[0]), v(w[1])],
        [v(w_s[0]), v(w_s[1])],
        (0.0, 0.0),
    )
    .unwrap()
}

fn eval_mse(model: &CateModel, d: &EvalDataset) -> f64 {
    cate_error(&model.predict_cate(&d.x, &d.t).unwrap(), &d.tau).unwrap().0
}

fn cfg(lambda_f: f64, lambda_tau: f64) -> AltMinConfig {
    AltMinConfig {
        lambda_f,
        lambda_tau,
        ..AltMinConfig::default()
    }
}

#[test]
fn real_only_scalar_hand_example() {
    let inst = instance(scalar_spec([2.0, 1.0], [2.0, 1.0], [1.0, 1.0], [1.0, 1.0]), 20, 0);
    let model = fit_real_only_linear(&inst.d_trn).unwrap();
    let x = DMatrix::from_element(1, 1, 3.0);
    for t in [0u8, 1] {
        assert!((model.predict_cate(&x, &[t]).unwrap()[0] + 3.0).abs() <= 1e-12);
    }
}

#[test]
fn mu_only_scalar_hand_example() {
    let inst = instance(scalar_spec([1.0, 1.0], [0.25, 0.5], [1.0, 1.0], [1.0, 1.0]), 20, 1);
    let model = fit_mu_only_linear(&inst.d_trn, &inst.oracle).unwrap();
    let w0 = model.mu_hat[0].linear_weights().unwrap()[0];
    let w1 = model.mu_hat[1].linear_weights().unwrap()[0];
    assert!((w0 - 4.0).abs() <= 1e-12);
    assert!((w1 - 2.0).abs() <= 1e-12);
}

#[test]
fn sim_only_scalar_hand_example() {
    let spec = scalar_spec([1.0, 1.0], [1.0, 1.0], [0.0, 2.0], [0.0, 1.0]);
    let inst = instance(spec.clone(), 20, 2);
    let model = fit_sim_only_linear(&inst.d_syn, &inst.oracle).unwrap();
    let x = DMatrix::from_element(1, 1, 1.0);
    let pred = model.predict_cate(&x, &[1]).unwrap()[0];
    let truth = 2.0;
    assert!(((pred - truth).powi(2) - 1.0).abs() <= 1e-12);
    let analytic = analytic_cate_error(&spec, &DVector::from_element(1, 1.0), 1, EstimatorKind::SimOnly).unwrap();
    assert!((analytic - 1.0).abs() <= 1e-12);
}

#[test]
fn analytic_scalar_hand_examples() {
    let x = DVector::from_element(1, 3.0);
    let spec = scalar_spec([2.0, 1.0], [2.0, 1.0], [1.0, 1.0], [1.0, 1.0]);
    assert!((analytic_cate_error(&spec, &x, 1, EstimatorKind::RealOnly).unwrap() - 9.0).abs() <= 1e-12);

    let x = DVector::from_element(1, 1.0);
    let spec = scalar_spec([1.0, 1.0], [0.25, 0.5], [1.0, 1.0], [1.0, 1.0]);
    assert!((analytic_cate_error(&spec, &x, 1, EstimatorKind::MuOnly).unwrap() - 1.0).abs() <= 1e-12);

    assert!(matches!(
        analytic_cate_error(&spec, &x, 1, EstimatorKind::SimPONet),
        Err(Error::Unsupported(_))
    ));
    assert!(analytic_cate_error(&spec, &x, 2, EstimatorKind::MuOnly).is_err());
}

#[test]
fn analytic_real_only_vanishes_without_arm_gap() {
    let inst = random_instance((0.0, 0.3, 0.3), 4, 40, 3);
    for i in 0..5 {
        let x = DVector::from_fn(4, |j, _| (i * 4 + j) as f64 - 7.0);
        for t in [0u8, 1] {
            assert_eq!(analytic_cate_error(&inst.spec, &x, t, EstimatorKind::RealOnly).unwrap(), 0.0);
        }
    }
}

#[test]
fn zero_cells() {
    let inst = random_instance((0.0, 0.4, 0.4), 5, 200, 4);
    assert!(eval_mse(&fit_real_only_linear(&inst.d_trn).unwrap(), &inst.d_tst) <= 1e-10);

    let inst = random_instance((0.4, 0.0, 0.0), 5, 200, 5);
    assert!(eval_mse(&fit_sim_only_linear(&inst.d_syn, &inst.oracle).unwrap(), &inst.d_tst) <= 1e-10);

    let inst = random_instance((0.4, 0.0, 0.4), 5, 200, 6);
    assert!(eval_mse(&fit_mu_only_linear(&inst.d_trn, &inst.oracle).unwrap(), &inst.d_tst) <= 1e-10);
}

#[test]
fn real_only_interpolates_noiseless_data() {
    let inst = random_instance((0.3, 0.3, 0.3), 6, 120, 7);
    let model = fit_real_only_linear(&inst.d_trn).unwrap();
    assert!(factual_error(&model, &inst.d_trn).unwrap().0 <= 1e-18);
}

#[test]
fn rank_deficient_arm_is_reported() {
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
    let d = ObservationalDataset::new(x, vec![0, 0, 1, 1], DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
    let err = fit_real_only_linear(&d).unwrap_err().to_string();
    assert!(err.contains("arm 0"), "{err}");
    let few = d.subset(&[0, 2, 3]);
    let err = fit_real_only_linear(&few).unwrap_err().to_string();
    assert!(err.contains("arm 0"), "{err}");
}

#[test]
fn sim_only_is_zero_without_effects() {
    let spec = scalar_spec([1.0, 0.5], [0.7, 0.4], [1.5, 1.5], [1.5, 1.5]);
    let inst = instance(spec, 20, 8);
    let model = fit_sim_only_linear(&inst.d_syn, &inst.oracle).unwrap();
    let pred = model.predict_cate(&inst.d_tst.x, &inst.d_tst.t).unwrap();
    assert!(pred.amax() <= 1e-12);
    assert!(eval_mse(&model, &inst.d_tst) <= 1e-24);
}

#[test]
fn simponet_collapses_to_extractor_for_large_lambda_f() {
    let inst = random_instance((0.3, 0.3, 0.3), 4, 200, 9);
    let (model, _) = fit_simponet_linear(&inst.d_trn, &inst.d_syn, &inst.oracle, &cfg(1e6, 0.0)).unwrap();
    for t in 0..2u8 {
        let gap = (model.f_hat.linear_map(t).unwrap() - inst.oracle.linear_map(t).unwrap()).amax();
        assert!(gap <= 1e-6, "arm {t}: {gap}");
    }
}

#[test]
fn extractor_gap_shrinks_as_lambda_f_grows() {
    let inst = random_instance((0.4, 0.4, 0.4), 4, 200, 10);
    let gaps: Vec<f64> = [1.0, 10.0, 1e3, 1e6]
        .iter()
        .map(|&lf| {
            let (m, _) = fit_simponet_linear(&inst.d_trn, &inst.d_syn, &inst.oracle, &cfg(lf, 0.0)).unwrap();
            (0..2u8)
                .map(|t| (m.f_hat.linear_map(t).unwrap() - inst.oracle.linear_map(t).unwrap()).norm())
                .sum()
        })
        .collect();
    for w in gaps.windows(2) {
        assert!(w[1] <= w[0], "{gaps:?}");
    }
}

#[test]
fn simponet_is_exact_when_simulator_matches_reality() {
    let inst = random_instance((0.4, 0.0, 0.0), 5, 200, 11);
    let (model, rep) = fit_simponet_linear(&inst.d_trn, &inst.d_syn, &inst.oracle, &AltMinConfig::default()).unwrap();
    assert!(eval_mse(&model, &inst.d_tst) <= 1e-8);
    assert!(rep.is_monotone());
}

#[test]
fn simponet_rejects_bad_inputs() {
    let inst = random_instance((0.1, 0.1, 0.1), 3, 60, 12);
    assert!(fit_simponet_linear(&inst.d_trn, &inst.d_syn, &inst.oracle, &cfg(1e-9, 1.0)).is_err());
    let normalized = Encoder::linear(inst.spec.s_inv.clone(), true).unwrap();
    assert!(matches!(
        fit_simponet_linear(&inst.d_trn, &inst.d_syn, &normalized, &AltMinConfig::default()),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn predict_cate_examples() {
    let zero = CateModel::new(
        EstimatorKind::SimPONet,
        Encoder::identity(3),
        [Head::Linear { w: DVector::zeros(3) }, Head::Linear { w: DVector::zeros(3) }],
    );
    let x = DMatrix::from_fn(4, 3, |i, j| (i + 2 * j) as f64);
    assert_eq!(predict_cate(&zero, &x, &[0, 1, 1, 0]).unwrap(), DVector::zeros(4));
    assert!(predict_cate(&zero, &DMatrix::zeros(2, 2), &[0, 1]).is_err());
    assert!(predict_cate(&zero, &x, &[0, 1]).is_err());

    let inst = random_instance((0.3, 0.2, 0.1), 3, 60, 13);
    let real = fit_real_only_linear(&inst.d_trn).unwrap();
    let x = inst.d_tst.x.clone();
    let n = x.nrows();
    assert_eq!(predict_cate(&real, &x, &vec![0; n]).unwrap(), predict_cate(&real, &x, &vec![1; n]).unwrap());

    let sim = fit_sim_only_linear(&inst.d_syn, &inst.oracle).unwrap();
    let w_tau = sim.linear_effect().unwrap();
    let x2 = x.rows(0, 2).into_owned();
    let pred = predict_cate(&sim, &x2, &[0, 1]).unwrap();
    for (i, t) in [0usize, 1].into_iter().enumerate() {
        let expected = (x2.row(i) * &inst.spec.s_inv[t] * &w_tau)[0];
        assert!((pred[i] - expected).abs() <= 1e-12);
    }
}

#[test]
fn model_json_round_trip() {
    let inst = random_instance((0.3, 0.2, 0.1), 3, 60, 14);
    let (model, _) = fit_simponet_linear(&inst.d_trn, &inst.d_syn, &inst.oracle, &AltMinConfig::default()).unwrap();
    let text = serde_json::to_string(&model).unwrap();
    let back: CateModel = serde_json::from_str(&text).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.metadata["lambda_f"], serde_json::json!(1.0));
}

#[test]
fn estimator_names_round_trip() {
    for k in EstimatorKind::ALL {
        assert_eq!(k.as_str().parse::<EstimatorKind>().unwrap(), k);
        assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
    }
    assert!("simponet2".parse::<EstimatorKind>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn measured_error_matches_analytic(seed in any::<u64>(), dim in 0usize..3, gr in 0.0..0.5f64, grs in 0.0..0.5f64, gt in 0.0..1.0f64) {
        let n_z = [2usize, 5, 10][dim];
        let inst = random_instance((gr, grs, gt), n_z, 10 * n_z + 40, seed % 100_000);
        let models = [
            fit_sim_only_linear(&inst.d_syn, &inst.oracle).unwrap(),
            fit_real_only_linear(&inst.d_trn).unwrap(),
            fit_mu_only_linear(&inst.d_trn, &inst.oracle).unwrap(),
        ];
        let d = &inst.d_tst;
        for m in &models {
            for i in 0..3 {
                let x = d.x.rows(i, 1).into_owned();
                let pred = m.predict_cate(&x, &[d.t[i]]).unwrap()[0];
                let measured = (pred - d.tau[i]).powi(2);
                let analytic = analytic_cate_error(&inst.spec, &d.x.row(i).transpose(), d.t[i], m.kind).unwrap();
                prop_assert!((measured - analytic).abs() <= 1e-6 * analytic.max(1e-12) + 1e-18,
                    "{:?}: measured {measured} analytic {analytic}", m.kind);
            }
        }
    }

    #[test]
    fn altmin_objective_never_increases(seed in any::<u64>(), lf in -3.0..2.0f64, lt in 0.0..10.0f64, noise in 0.0..0.5f64) {
        let g = GapConfig::new(0.3, 0.3, 0.3).unwrap();
        let spec = build_linear_pair(g, 4, (noise, noise), &mut seeded(seed)).unwrap();
        let inst = instance(spec, 60, seed % 100_000 + 20);
        let (_, rep) = fit_simponet_linear(&inst.d_trn, &inst.d_syn, &inst.oracle, &cfg(10f64.powf(lf), lt)).unwrap();
        prop_assert!(rep.is_monotone(), "max relative increase {}", rep.max_relative_increase());
        prop_assert!(rep.objective_trace.len() == rep.sweeps + 1);
    }
}
