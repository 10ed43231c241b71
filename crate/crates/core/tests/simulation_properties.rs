use censored_panel_iv::estimator::{build_linear_system, true_parameter, EstimatorConfig};
use censored_panel_iv::moment_builder::{build_factor_loading, InstrumentSet, MomentSystem};
use censored_panel_iv::normal::cdf;
use censored_panel_iv::panel_sim::{censoring_rate, simulate, ModelVariant, PanelConfig, PanelDataset};
use censored_panel_iv::quadrature::{integrate, QuadOptions};
use serde_json::json;

fn config(variant: ModelVariant, n: usize, t: usize, cov: serde_json::Value) -> PanelConfig {
    let mut v = json!({
        "variant": variant,
        "n_individuals": n,
        "n_periods": t,
        "n_regressors": 1,
        "beta": [1.0],
        "error_cov": cov,
        "seed": 31,
    });
    if variant == ModelVariant::FactorLoading {
        v["factor_loadings"] = json!((0..t).map(|s| 1.0 + 0.5 * s as f64).collect::<Vec<_>>());
    }
    serde_json::from_value(v).unwrap()
}

fn cov3() -> serde_json::Value {
    json!([[1.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 0.8]])
}

#[test]
fn censoring_rate_matches_integrated_probability() {
    // y* = 1.5 x_t + 0.5 x_s + eta + eps: the index part is N(0, 2.5), the
    // noise N(0, 2).
    let opts = QuadOptions::default();
    let sd_v = 2.5f64.sqrt();
    let (p, _, ok) = integrate(
        |v| (-(v * v) / (2.0 * 2.5)).exp() / (sd_v * (2.0 * std::f64::consts::PI).sqrt()) * cdf(-v / 2.0f64.sqrt()),
        -12.0 * sd_v,
        12.0 * sd_v,
        &opts,
    );
    assert!(ok);
    let mut cfg = config(ModelVariant::IndependentErrors, 1000, 2, json!([[1.0, 0.0], [0.0, 1.0]]));
    let d = simulate(&cfg).unwrap();
    assert!((censoring_rate(&d).unwrap() - p).abs() < 0.03);
    cfg.seed = 32;
    cfg.n_individuals = 20_000;
    let d = simulate(&cfg).unwrap();
    assert!((censoring_rate(&d).unwrap() - p).abs() < 0.01);
}

fn effect(d: &PanelDataset, i: usize, t: usize) -> f64 {
    let truth = d.truth.as_ref().unwrap();
    let a = truth.alpha[i];
    match d.variant() {
        ModelVariant::FactorLoading => d.config.factor_loadings.as_ref().unwrap()[t] * a,
        ModelVariant::SlopeFe => d.z(i, t).unwrap() * a,
        _ => a,
    }
}

fn latent_residual(d: &PanelDataset, i: usize, t: usize) -> f64 {
    let truth = d.truth.as_ref().unwrap();
    let xb: f64 = d.x(i, t).iter().zip(&d.config.beta).map(|(a, b)| a * b).sum();
    truth.latent_y[i * d.n_periods + t] - xb - effect(d, i, t)
}

#[test]
fn error_covariance_and_exogeneity() {
    for variant in [ModelVariant::NonStationary, ModelVariant::FactorLoading, ModelVariant::SlopeFe] {
        let d = simulate(&config(variant, 50_000, 3, cov3())).unwrap();
        let n = d.n_individuals as f64;
        let cov = d.config.error_cov.clone();
        for a in 0..3 {
            for b in 0..3 {
                let s: f64 = (0..d.n_individuals)
                    .map(|i| latent_residual(&d, i, a) * latent_residual(&d, i, b))
                    .sum::<f64>()
                    / n;
                assert!((s - cov[a][b]).abs() < 0.05, "{variant:?} ({a},{b}): {s} vs {}", cov[a][b]);
            }
        }
        for t in 0..3 {
            for s in 0..3 {
                let e: Vec<f64> = (0..d.n_individuals).map(|i| latent_residual(&d, i, t)).collect();
                let x: Vec<f64> = (0..d.n_individuals).map(|i| d.x(i, s)[0]).collect();
                let r = correlation(&e, &x);
                assert!(r.abs() < 0.02, "{variant:?} corr(eps_{t}, x_{s}) = {r}");
            }
        }
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn factor_loading_ratios_from_stored_effects() {
    let d = simulate(&config(ModelVariant::FactorLoading, 50_000, 3, cov3())).unwrap();
    let truth = d.truth.as_ref().unwrap();
    let rho = d.config.factor_loadings.clone().unwrap();
    // Slope of (y*_t - x_t b) on alpha is rho_t.
    let slope = |t: usize| {
        let v: Vec<f64> = (0..d.n_individuals)
            .map(|i| truth.latent_y[i * 3 + t] - d.x(i, t)[0])
            .collect();
        let a = &truth.alpha;
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mv = v.iter().sum::<f64>() / n;
        a.iter().zip(&v).map(|(x, y)| (x - ma) * (y - mv)).sum::<f64>() / a.iter().map(|x| (x - ma).powi(2)).sum::<f64>()
    };
    for (t, s) in [(1, 0), (2, 0), (2, 1)] {
        let r = slope(t) / slope(s);
        assert!((r - rho[t] / rho[s]).abs() < 0.05, "({t},{s}) {r}");
    }
}

/// Per-component mean and clustered standard error of `Z' xi / n`.
fn moment_z_scores(system: &MomentSystem, theta: &[f64]) -> Vec<f64> {
    let m = system.n_instruments();
    let ids = system.cluster_of_row();
    let mut by_cluster = vec![vec![0.0; m]; ids.iter().max().map_or(0, |v| v + 1)];
    for (row, &c) in system.rows.iter().zip(&ids) {
        let xi = row.dependent - row.regressors.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
        for (acc, z) in by_cluster[c].iter_mut().zip(&row.instruments) {
            *acc += z * xi;
        }
    }
    by_cluster.retain(|g| g.iter().any(|v| *v != 0.0));
    let n = by_cluster.len() as f64;
    (0..m)
        .map(|j| {
            let mean = by_cluster.iter().map(|g| g[j]).sum::<f64>() / n;
            let var = by_cluster.iter().map(|g| (g[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            if var == 0.0 {
                0.0
            } else {
                mean / (var / n).sqrt()
            }
        })
        .collect()
}

#[test]
fn population_orthogonality_at_truth() {
    let cases = [
        (ModelVariant::CrossSection, 1, json!([[1.0]])),
        (ModelVariant::IndependentErrors, 2, json!([[1.0, 0.0], [0.0, 1.5]])),
        (ModelVariant::NonStationary, 3, cov3()),
        (ModelVariant::VarianceFe, 3, cov3()),
        (ModelVariant::AdditiveVariance, 3, json!([[0.5, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.5]])),
        (ModelVariant::SlopeFe, 2, json!([[1.0, 0.3], [0.3, 1.5]])),
    ];
    for (variant, t, cov) in cases {
        let cfg = config(variant, 50_000, t, cov);
        let d = simulate(&cfg).unwrap();
        let system = build_linear_system(&d, &EstimatorConfig::default()).unwrap();
        for row in &system.rows {
            for &p in &row.periods {
                assert!(d.positive(row.individual, p), "{variant:?} row selects a zero outcome");
            }
        }
        let theta: Vec<f64> = system
            .param_names
            .iter()
            .map(|n| true_parameter(&cfg, n).unwrap_or_else(|| panic!("no truth for {n}")))
            .collect();
        let z = moment_z_scores(&system, &theta);
        let worst = z.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(worst < 4.0, "{variant:?}: max |z| {worst} over {} moments", z.len());
    }

    let cfg = config(ModelVariant::FactorLoading, 50_000, 2, json!([[1.0, 0.3], [0.3, 1.5]]));
    let d = simulate(&cfg).unwrap();
    let sys = build_factor_loading(&d, 1, 0, InstrumentSet::Quadratic).unwrap();
    let theta: Vec<f64> = sys.param_names.iter().map(|n| true_parameter(&cfg, n).unwrap()).collect();
    let lin = sys.linear_system_at(theta[sys.r_index()]);
    let inner: Vec<f64> = lin.param_names.iter().map(|n| true_parameter(&cfg, n).unwrap()).collect();
    let z = moment_z_scores(&lin, &inner);
    let worst = z.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    assert!(worst < 4.0, "factor loading: max |z| {worst}");
    let direct = sys.moment_vector(&theta);
    let n = sys.rows.len() as f64;
    let via_linear: Vec<f64> = (0..lin.n_instruments())
        .map(|j| {
            lin.rows
                .iter()
                .map(|r| r.instruments[j] * (r.dependent - r.regressors.iter().zip(&inner).map(|(a, b)| a * b).sum::<f64>()))
                .sum::<f64>()
                / n
        })
        .collect();
    for (a, b) in direct.iter().zip(&via_linear) {
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}
