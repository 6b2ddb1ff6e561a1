use nalgebra::{DMatrix, DVector};
use robreg_core::simulation::{
    contaminate, generate_beta, generate_design, mape, quantile, rpe, run_study, sigma_from_snr, stream_rng,
    support_metrics, Contamination, Estimator, SimulationConfig,
};
use robreg_core::{fit_ols, Dataset, FittedModel};

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn col(x: &DMatrix<f64>, j: usize) -> Vec<f64> {
    x.column(j).iter().copied().collect()
}

/// A fitted model whose coefficients are replaced by `beta`.
fn model_with(beta: DVector<f64>) -> FittedModel<f64> {
    let p = beta.len() - 1;
    let x = DMatrix::from_fn(20, p, |i, j| ((i + 1) as f64 * (j as f64 + 1.3)).sin());
    let y = DVector::from_fn(20, |i, _| (i % 5) as f64);
    let mut m = fit_ols(&Dataset::from_predictors(y, &x).unwrap()).unwrap();
    m.active = robreg_core::ActiveSet::from_beta(&beta, 0.0);
    m.theta.beta = beta;
    m
}

#[test]
fn ar1_design_moments() {
    let mut rng = stream_rng(401, 3);
    let x = generate_design(100_000, 5, 0.5, &mut rng);
    assert!(x.column(0).iter().all(|&v| v == 1.0));
    for j in 1..=5 {
        let c = col(&x, j);
        let m = c.iter().sum::<f64>() / c.len() as f64;
        let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / c.len() as f64;
        assert!((v - 1.0).abs() < 0.02, "column {j} variance {v}");
    }
    for j in 1..=3 {
        let r = corr(&col(&x, j), &col(&x, j + 2));
        assert!((r - 0.25).abs() < 0.01, "lag-2 correlation {r}");
    }
    let x0 = generate_design(100_000, 4, 0.0, &mut rng);
    for j in 1..=4 {
        for k in j + 1..=4 {
            assert!(corr(&col(&x0, j), &col(&x0, k)).abs() < 0.02);
        }
    }
}

#[test]
fn snr_scale_matches_quadratic_form() {
    let mut rng = stream_rng(402, 0);
    let beta = generate_beta(12, 0.5, &mut rng);
    let rho: f64 = 0.5;
    let sigma = DMatrix::from_fn(12, 12, |j, k| rho.powi((j as i32 - k as i32).abs()));
    let b = beta.rows(1, 12);
    let var = (b.transpose() * &sigma * b)[(0, 0)];
    for snr in [1.0, 10.0, 3.3] {
        assert!((sigma_from_snr(&beta, rho, snr) - (var / snr).sqrt()).abs() < 1e-12);
    }
    let two = DVector::from_vec(vec![1.0, 1.0, 1.0]);
    assert!((sigma_from_snr(&two, 0.0, 4.0) - (2.0f64 / 4.0).sqrt()).abs() < 1e-15);
    let r = sigma_from_snr(&beta, rho, 1.0) / sigma_from_snr(&beta, rho, 10.0);
    assert!((r - 10f64.sqrt()).abs() < 1e-12);
}

#[test]
fn contamination_counts_and_location() {
    let mut rng = stream_rng(403, 1);
    let base = DVector::from_fn(100, |i, _| i as f64 * 1e-3);
    assert_eq!(contaminate(&base, 0.0, 10.0, &mut rng), base);
    let one = contaminate(&base, 0.01, 10.0, &mut rng);
    assert_eq!(one.iter().zip(base.iter()).filter(|(a, b)| a != b).count(), 1);
    let mut pooled = Vec::new();
    while pooled.len() < 10_000 {
        let out = contaminate(&base, 0.2, 7.0, &mut rng);
        pooled.extend(out.iter().zip(base.iter()).filter(|(a, b)| a != b).map(|(a, _)| *a));
    }
    let m = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / m;
    assert!((mean - 7.0).abs() < 3.0 * 0.1 / m.sqrt(), "mean {mean}");
}

#[test]
fn rpe_oracles() {
    let mut rng = stream_rng(404, 2);
    let beta = generate_beta(6, 0.3, &mut rng);
    let test_x = generate_design(10_000, 6, 0.5, &mut rng);
    let test = Dataset::new(DVector::zeros(10_000), test_x).unwrap();
    assert_eq!(rpe(&model_with(beta.clone()), &test, &beta), 0.0);
    let mut null = DVector::zeros(7);
    null[0] = beta[0];
    let got = rpe(&model_with(null), &test, &beta);
    let expect = sigma_from_snr(&beta, 0.5, 1.0).powi(2);
    assert!((got / expect - 1.0).abs() < 0.05, "{got} vs {expect}");
}

#[test]
fn support_metric_examples() {
    let truth = DVector::from_vec(vec![1.0, 2.0, 0.0, -1.0, 0.0]);
    assert_eq!(support_metrics(&model_with(truth.clone()), &truth), (1.0, 1.0));
    assert_eq!(support_metrics(&model_with(DVector::from_element(5, 0.3)), &truth), (1.0, 0.0));
    let mut empty = DVector::zeros(5);
    empty[0] = 1.0;
    assert_eq!(support_metrics(&model_with(empty), &truth), (0.0, 1.0));
    let half = DVector::from_vec(vec![1.0, 0.5, 0.1, 0.0, 0.0]);
    assert_eq!(support_metrics(&model_with(half), &truth), (0.5, 0.5));
}

#[test]
fn mape_examples() {
    let x = DMatrix::from_column_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 1.0, 2.0]);
    let beta = DVector::from_vec(vec![1.0, 2.0]);
    let exact = Dataset::new(&x * &beta, x.clone()).unwrap();
    assert_eq!(mape(&model_with(beta.clone()), &exact).unwrap(), (0.0, 0));

    let c = Dataset::new(DVector::from_element(3, 4.0), x.clone()).unwrap();
    assert_eq!(mape(&model_with(DVector::zeros(2)), &c).unwrap(), (1.0, 0));

    // predictions 1, 3, 5 against 2, -3, 4: (0.5 + 2 + 0.25) / 3
    let y = DVector::from_vec(vec![2.0, -3.0, 4.0]);
    let (v, skipped) = mape(&model_with(beta.clone()), &Dataset::new(y, x.clone()).unwrap()).unwrap();
    assert!((v - 2.75 / 3.0).abs() < 1e-12 && skipped == 0);

    let y = DVector::from_vec(vec![0.0, -3.0, 4.0]);
    let (v, skipped) = mape(&model_with(beta.clone()), &Dataset::new(y, x.clone()).unwrap()).unwrap();
    assert!((v - 2.25 / 2.0).abs() < 1e-12 && skipped == 1);

    let zeros = Dataset::new(DVector::zeros(3), x).unwrap();
    assert_eq!(mape(&model_with(beta), &zeros).unwrap_err().name(), "AllResponsesZero");
}

#[test]
fn quantiles_interpolate() {
    let v = [1.0, 2.0, 4.0, 8.0];
    assert_eq!(quantile(&v, 0.0), 1.0);
    assert_eq!(quantile(&v, 1.0), 8.0);
    assert!((quantile(&v, 0.5) - 3.0).abs() < 1e-15);
    assert!(quantile(&[], 0.5).is_nan());
}

fn small_config(seed: u64) -> SimulationConfig {
    let mut cfg = SimulationConfig::new(60, 10.0, Contamination::Point { tau: 0.05, mu_c_in_sigmas: 5.0 }, 8, seed);
    cfg.p = 8;
    cfg.test_size = 200;
    cfg.grid_size = 12;
    cfg
}

#[test]
fn study_is_deterministic_across_runs_and_threads() {
    let cfg = small_config(405);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let rep = pool.install(|| run_study(&cfg)).unwrap();
        serde_json::to_string(&rep).unwrap()
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(4));
    let other = run_study(&small_config(406)).unwrap();
    assert_ne!(a, serde_json::to_string(&other).unwrap());
}

#[test]
fn study_report_invariants() {
    let rep = run_study(&small_config(407)).unwrap();
    assert_eq!(rep.replicates_used + rep.failures.len(), 8);
    for r in &rep.records {
        assert!((0.0..=1.0).contains(&r.sensitivity) && (0.0..=1.0).contains(&r.specificity));
        if r.estimator == Estimator::Ols {
            assert_eq!(r.rel_rpe, 1.0);
        }
    }
    assert_eq!(rep.summary(Estimator::Ols).unwrap().median_rel_rpe, 1.0);
    let s = rep.summary(Estimator::Huber).unwrap();
    assert!(s.rpe_q1 <= s.rpe_median && s.rpe_median <= s.rpe_q3);

    // OLS is always fitted as the reference, but only reported when requested
    let mut cfg = small_config(407);
    cfg.estimators = vec![Estimator::Huber];
    let rep = run_study(&cfg).unwrap();
    assert!(rep.summary(Estimator::Ols).is_none());
    assert!(rep.records.iter().all(|r| r.estimator == Estimator::Huber));
}

#[test]
fn ols_beats_m_estimators_on_clean_data() {
    let mut cfg = SimulationConfig::new(200, 10.0, Contamination::None, 100, 408);
    cfg.estimators = vec![Estimator::Ols, Estimator::Huber, Estimator::Tukey];
    let rep = run_study(&cfg).unwrap();
    let med = |e| rep.summary(e).unwrap().rpe_median;
    assert!(med(Estimator::Ols) <= med(Estimator::Huber));
    assert!(med(Estimator::Ols) <= med(Estimator::Tukey));
}

#[test]
fn invalid_configs_rejected() {
    let mut cfg = small_config(409);
    cfg.contamination = Contamination::Point { tau: 0.5, mu_c_in_sigmas: 1.0 };
    assert!(run_study(&cfg).is_err());
    let mut cfg = small_config(409);
    cfg.snr = 0.0;
    assert!(run_study(&cfg).is_err());
    let mut cfg = small_config(409);
    cfg.rho = 1.0;
    assert!(run_study(&cfg).is_err());
    let json = serde_json::to_value(small_config(409)).unwrap();
    let mut obj = json.as_object().unwrap().clone();
    obj.insert("bogus".into(), 1.into());
    assert!(serde_json::from_value::<SimulationConfig>(obj.into()).is_err());
    let back: SimulationConfig = serde_json::from_value(json).unwrap();
    assert_eq!(back, small_config(409));
}
