use censored_panel_iv::estimator::{estimate, true_parameter, EstimateResult, EstimatorConfig, Method};
use censored_panel_iv::moment_builder::{build_factor_loading, InstrumentSet};
use censored_panel_iv::panel_sim::{simulate, ModelVariant, PanelConfig};
use serde_json::json;

fn config(variant: ModelVariant, n: usize, cov: serde_json::Value, seed: u64) -> PanelConfig {
    let t = cov.as_array().unwrap().len();
    serde_json::from_value(json!({
        "variant": variant,
        "n_individuals": n,
        "n_periods": t,
        "n_regressors": 1,
        "beta": [1.0],
        "error_cov": cov,
        "seed": seed,
    }))
    .unwrap()
}

fn fit(cfg: &PanelConfig, est: &EstimatorConfig) -> EstimateResult {
    estimate(&simulate(cfg).unwrap(), est).unwrap()
}

fn param(r: &EstimateResult, name: &str) -> (f64, f64) {
    let i = r.param_names.iter().position(|n| n == name).unwrap_or_else(|| panic!("{name} missing"));
    (r.estimates[i], r.std_errors[i])
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn se_log_slope(variant: ModelVariant, cov: serde_json::Value, est: &EstimatorConfig) -> f64 {
    let sizes = [1000usize, 4000, 16000];
    let logs: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let se: Vec<f64> = (0..50)
                .map(|rep| param(&fit(&config(variant, n, cov.clone(), 9000 + rep), est), "beta_0").1)
                .collect();
            median(se).ln()
        })
        .collect();
    let xs: Vec<f64> = sizes.iter().map(|n| (*n as f64).ln()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = logs.iter().sum::<f64>() / 3.0;
    xs.iter().zip(&logs).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
}

#[test]
fn standard_errors_shrink_at_root_n() {
    let slope = se_log_slope(ModelVariant::CrossSection, json!([[1.0]]), &EstimatorConfig::default());
    assert!((-0.6..=-0.4).contains(&slope), "cross-section log-log slope {slope}");
    let quadratic = EstimatorConfig {
        instruments: Some(InstrumentSet::Quadratic),
        ..EstimatorConfig::default()
    };
    let slope = se_log_slope(ModelVariant::IndependentErrors, json!([[1.0, 0.0], [0.0, 1.5]]), &quadratic);
    assert!((-0.6..=-0.4).contains(&slope), "pairwise log-log slope {slope}");
}

#[test]
fn nonstationary_pair_recovers_variance_gaps() {
    let cfg = config(ModelVariant::NonStationary, 40_000, json!([[1.0, 0.5], [0.5, 2.0]]), 71);
    let r = fit(&cfg, &EstimatorConfig::default());
    for name in ["beta_0", "d0_pair0_1", "d1_pair0_1"] {
        let (b, se) = param(&r, name);
        let truth = true_parameter(&cfg, name).unwrap();
        assert!((b - truth).abs() < 3.0 * se, "{name}: {b} +- {se} vs {truth}");
    }
    assert_eq!(true_parameter(&cfg, "d0_pair0_1"), Some(0.5));
    assert_eq!(true_parameter(&cfg, "d1_pair0_1"), Some(1.5));
}

#[test]
fn fixed_effect_variants_recover_slope() {
    let cases = [
        (ModelVariant::VarianceFe, json!([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])),
        (ModelVariant::AdditiveVariance, json!([[0.5, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.5]])),
        (ModelVariant::SlopeFe, json!([[1.0, 0.3], [0.3, 1.5]])),
        (ModelVariant::CrossSection, json!([[1.0]])),
    ];
    for (variant, cov) in cases {
        let r = fit(&config(variant, 16_000, cov, 72), &EstimatorConfig::default());
        assert_eq!(r.method, Method::for_variant(variant));
        let (b, se) = param(&r, "beta_0");
        assert!(se.is_finite() && se > 0.0);
        assert!((b - 1.0).abs() < 3.0 * se, "{variant:?}: {b} +- {se}");
    }
}

#[test]
fn objective_at_truth_shrinks_with_sample_size() {
    let mut medians = Vec::new();
    for n in [1000usize, 16000] {
        let v: Vec<f64> = (0..50)
            .map(|rep| {
                let mut cfg = config(ModelVariant::FactorLoading, n, json!([[1.0, 0.3], [0.3, 1.5]]), 7100 + rep);
                cfg.factor_loadings = Some(vec![1.0, 1.5]);
                let sys = build_factor_loading(&simulate(&cfg).unwrap(), 1, 0, InstrumentSet::Quadratic).unwrap();
                let theta: Vec<f64> = sys.param_names.iter().map(|p| true_parameter(&cfg, p).unwrap()).collect();
                sys.moment_vector(&theta).iter().map(|g| g * g).sum::<f64>()
            })
            .collect();
        medians.push(median(v));
    }
    assert!(medians[1] < medians[0], "{medians:?}");
}

#[test]
fn result_covariance_matches_standard_errors() {
    let r = fit(
        &config(ModelVariant::NonStationary, 5000, json!([[1.0, 0.2, 0.0], [0.2, 1.2, 0.1], [0.0, 0.1, 0.9]]), 73),
        &EstimatorConfig::default(),
    );
    let k = r.param_names.len();
    assert_eq!(r.covariance.len(), k * k);
    for i in 0..k {
        assert!((r.covariance[i * k + i].sqrt() - r.std_errors[i]).abs() < 1e-12);
        for j in 0..k {
            assert!((r.covariance[i * k + j] - r.covariance[j * k + i]).abs() < 1e-12 * r.covariance[i * k + i].abs().max(1.0));
        }
    }
}
