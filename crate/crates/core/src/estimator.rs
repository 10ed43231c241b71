//! Estimator selection: which equations to build from a dataset, how to
//! solve them, and the true parameter values a simulated panel implies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{self, NonlinearOptions, Weighting};
use crate::moment_builder::{self as mb, InstrumentSet, MomentSystem, SlopeScaling};
use crate::panel_sim::{ModelVariant, PanelConfig, PanelDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CrossSection,
    PairwiseIndependent,
    PairwiseNonstationary,
    FactorLoading,
    TripleVarianceFe,
    TripleAdditiveVariance,
    PairwiseSlopeFe,
}

impl Method {
    pub fn for_variant(variant: ModelVariant) -> Self {
        match variant {
            ModelVariant::CrossSection => Method::CrossSection,
            ModelVariant::IndependentErrors => Method::PairwiseIndependent,
            ModelVariant::NonStationary => Method::PairwiseNonstationary,
            ModelVariant::FactorLoading => Method::FactorLoading,
            ModelVariant::VarianceFe => Method::TripleVarianceFe,
            ModelVariant::AdditiveVariance => Method::TripleAdditiveVariance,
            ModelVariant::SlopeFe => Method::PairwiseSlopeFe,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::CrossSection => "cross_section",
            Method::PairwiseIndependent => "pairwise_independent",
            Method::PairwiseNonstationary => "pairwise_nonstationary",
            Method::FactorLoading => "factor_loading",
            Method::TripleVarianceFe => "triple_variance_fe",
            Method::TripleAdditiveVariance => "triple_additive_variance",
            Method::PairwiseSlopeFe => "pairwise_slope_fe",
        }
    }

    fn uses_triples(self) -> bool {
        matches!(self, Method::TripleVarianceFe | Method::TripleAdditiveVariance)
    }

    fn default_instruments(self) -> InstrumentSet {
        match self {
            Method::FactorLoading | Method::PairwiseSlopeFe => InstrumentSet::Quadratic,
            _ => InstrumentSet::Default,
        }
    }
}

fn default_orders() -> Vec<[u32; 2]> {
    vec![[1, 1]]
}

fn default_slope_scaling() -> SlopeScaling {
    SlopeScaling::Reduced
}

fn default_cross_section_orders() -> Vec<u32> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Defaults to the method matching the panel's variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    /// Period pairs; defaults to all `t < s`. The factor-loading method
    /// takes exactly one pair and defaults to `(1, 0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<[usize; 2]>>,
    /// Period triples; defaults to all `t < s < tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triples: Option<Vec<[usize; 3]>>,
    /// `(k, m)` orders stacked by the nonstationary method.
    #[serde(default = "default_orders")]
    pub orders: Vec<[u32; 2]>,
    /// Orders `k` stacked by the cross-section method.
    #[serde(default = "default_cross_section_orders")]
    pub cross_section_orders: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruments: Option<InstrumentSet>,
    /// Row scaling of the slope-effect equation.
    #[serde(default = "default_slope_scaling")]
    pub slope_scaling: SlopeScaling,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub nonlinear: NonlinearOptions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            method: None,
            pairs: None,
            triples: None,
            orders: default_orders(),
            cross_section_orders: default_cross_section_orders(),
            instruments: None,
            slope_scaling: default_slope_scaling(),
            weighting: Weighting::default(),
            nonlinear: NonlinearOptions::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method: Some(method),
            ..Default::default()
        }
    }

    pub fn method_for(&self, variant: ModelVariant) -> Method {
        self.method.unwrap_or_else(|| Method::for_variant(variant))
    }

    pub fn instrument_set(&self, method: Method) -> InstrumentSet {
        self.instruments.unwrap_or_else(|| method.default_instruments())
    }

    fn pairs_for(&self, method: Method, n_periods: usize) -> Vec<[usize; 2]> {
        match (&self.pairs, method) {
            (Some(p), _) => p.clone(),
            (None, Method::FactorLoading) => vec![[1, 0]],
            (None, _) => mb::all_pairs(n_periods),
        }
    }

    fn triples_for(&self, n_periods: usize) -> Vec<[usize; 3]> {
        self.triples.clone().unwrap_or_else(|| mb::all_triples(n_periods))
    }

    /// Structural checks against the panel shape.
    pub fn validate_for(&self, variant: ModelVariant, n_periods: usize, has_z: bool) -> Result<()> {
        let method = self.method_for(variant);
        if method.uses_triples() && n_periods < 3 {
            return Err(Error::config(
                "estimator.method",
                format!("{} needs three periods: requires T >= 3, got T = {n_periods}", method.name()),
            ));
        }
        if !matches!(method, Method::CrossSection) && !method.uses_triples() && n_periods < 2 {
            return Err(Error::config(
                "estimator.method",
                format!("{} needs T >= 2, got T = {n_periods}", method.name()),
            ));
        }
        if method == Method::PairwiseSlopeFe && !has_z {
            return Err(Error::config("estimator.method", "pairwise_slope_fe needs the shifter z"));
        }
        for [t, s] in self.pairs_for(method, n_periods) {
            if t >= n_periods || s >= n_periods || t == s {
                return Err(Error::config(
                    "estimator.pairs",
                    format!("invalid pair ({t}, {s}) for T = {n_periods}"),
                ));
            }
        }
        if method == Method::FactorLoading && self.pairs.as_ref().is_some_and(|p| p.len() != 1) {
            return Err(Error::config("estimator.pairs", "factor_loading takes exactly one pair"));
        }
        if method.uses_triples() {
            for [t, s, u] in self.triples_for(n_periods) {
                if t.max(s).max(u) >= n_periods || t == s || s == u || t == u {
                    return Err(Error::config(
                        "estimator.triples",
                        format!("invalid triple ({t}, {s}, {u}) for T = {n_periods}"),
                    ));
                }
            }
        }
        if self.orders.is_empty() || self.orders.iter().any(|[k, m]| *k == 0 || *m == 0 || k + m > 6) {
            return Err(Error::config("estimator.orders", "need k, m >= 1 and k + m <= 6"));
        }
        if self.cross_section_orders.is_empty()
            || self.cross_section_orders.iter().any(|k| *k == 0 || *k > 6)
        {
            return Err(Error::config("estimator.cross_section_orders", "need 1 <= k <= 6"));
        }
        Ok(())
    }
}

/// Stacked linear system for every method except the factor-loading one.
pub fn build_linear_system(dataset: &PanelDataset, config: &EstimatorConfig) -> Result<MomentSystem> {
    let method = config.method_for(dataset.variant());
    config.validate_for(dataset.variant(), dataset.n_periods, dataset.z.is_some())?;
    let set = config.instrument_set(method);
    let t = dataset.n_periods;
    let systems: Vec<MomentSystem> = match method {
        Method::CrossSection => config
            .cross_section_orders
            .iter()
            .map(|&k| mb::build_cross_section(dataset, k, set))
            .collect::<Result<_>>()?,
        Method::PairwiseIndependent => config
            .pairs_for(method, t)
            .into_iter()
            .map(|[a, b]| mb::build_pairwise_independent(dataset, a, b, set))
            .collect::<Result<_>>()?,
        Method::PairwiseNonstationary => {
            let mut v = Vec::new();
            for [a, b] in config.pairs_for(method, t) {
                for [k, m] in &config.orders {
                    v.push(mb::build_pairwise_nonstationary(dataset, a, b, *k, *m, set)?);
                }
            }
            v
        }
        Method::PairwiseSlopeFe => config
            .pairs_for(method, t)
            .into_iter()
            .map(|[a, b]| mb::build_pairwise_slope_fe_scaled(dataset, a, b, set, config.slope_scaling))
            .collect::<Result<_>>()?,
        Method::TripleVarianceFe => config
            .triples_for(t)
            .into_iter()
            .map(|[a, b, c]| mb::build_triple_variance_fe(dataset, a, b, c, set))
            .collect::<Result<_>>()?,
        Method::TripleAdditiveVariance => config
            .triples_for(t)
            .into_iter()
            .map(|[a, b, c]| mb::build_triple_additive_variance(dataset, a, b, c, set))
            .collect::<Result<_>>()?,
        Method::FactorLoading => {
            return Err(Error::config(
                "estimator.method",
                "factor_loading is nonlinear; it has no single linear system",
            ))
        }
    };
    MomentSystem::stack(systems)
}

/// Unified estimation output, serialized as the result JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub method: Method,
    pub param_names: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Row-major covariance.
    pub covariance: Vec<f64>,
    pub j_statistic: Option<f64>,
    pub j_dof: usize,
    pub j_p_value: Option<f64>,
    pub n_rows: usize,
    pub n_clusters: usize,
    pub n_instruments: usize,
    pub condition_number: f64,
    pub weighting: Weighting,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_value: Option<f64>,
}

impl EstimateResult {
    pub fn estimate(&self, name: &str) -> Option<f64> {
        let j = self.param_names.iter().position(|p| p == name)?;
        Some(self.estimates[j])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        let j = self.param_names.iter().position(|p| p == name)?;
        Some(self.std_errors[j])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

pub fn estimate(dataset: &PanelDataset, config: &EstimatorConfig) -> Result<EstimateResult> {
    let method = config.method_for(dataset.variant());
    config.validate_for(dataset.variant(), dataset.n_periods, dataset.z.is_some())?;
    if method == Method::FactorLoading {
        let [t, s] = config.pairs_for(method, dataset.n_periods)[0];
        let system = mb::build_factor_loading(dataset, t, s, config.instrument_set(method))?;
        let r = gmm::nonlinear_gmm(&system, None, &config.nonlinear)?;
        let std_errors = r.std_errors();
        return Ok(EstimateResult {
            method,
            j_p_value: gmm::j_test(&r).ok().map(|j| j.p_value),
            param_names: r.param_names,
            estimates: r.estimates,
            std_errors,
            covariance: r.covariance,
            j_statistic: r.j_statistic,
            j_dof: r.j_dof,
            n_rows: r.n_rows,
            n_clusters: r.n_clusters,
            n_instruments: r.n_instruments,
            condition_number: r.condition_number,
            weighting: Weighting::TwoStep,
            converged: r.converged,
            iterations: Some(r.iterations),
            objective_value: Some(r.objective_value),
        });
    }
    let system = build_linear_system(dataset, config)?;
    let r = gmm::linear_iv(&system, config.weighting)?;
    let std_errors = r.std_errors();
    Ok(EstimateResult {
        method,
        j_p_value: gmm::j_test(&r).ok().map(|j| j.p_value),
        param_names: r.param_names,
        estimates: r.estimates,
        std_errors,
        covariance: r.covariance,
        j_statistic: r.j_statistic,
        j_dof: r.j_dof,
        n_rows: r.n_rows,
        n_clusters: r.n_clusters,
        n_instruments: r.n_instruments,
        condition_number: r.condition_number,
        weighting: r.weighting,
        converged: true,
        iterations: None,
        objective_value: None,
    })
}

fn parse_pair(s: &str, sep: &str) -> Option<(usize, usize)> {
    let (a, b) = s.split_once(sep)?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

/// Population value of a labelled parameter under a panel config, when the
/// config pins it down.
pub fn true_parameter(config: &PanelConfig, name: &str) -> Option<f64> {
    let cov = |a: usize, b: usize| -> Option<f64> { config.error_cov.get(a)?.get(b).copied() };
    if let Some(j) = name.strip_prefix("beta_") {
        return config.beta.get(j.parse::<usize>().ok()?).copied();
    }
    if name == "sigma2" {
        let t = config.n_periods;
        return Some((0..t).map(|s| config.error_cov[s][s]).sum::<f64>() / t as f64);
    }
    if let Some(rest) = name.strip_prefix("sigma2_t") {
        if let Some((p, reference)) = rest.split_once("_minus_t") {
            let (p, reference): (usize, usize) = (p.parse().ok()?, reference.parse().ok()?);
            return Some(cov(p, p)? - cov(reference, reference)?);
        }
        let t: usize = rest.parse().ok()?;
        return cov(t, t);
    }
    if let Some(rest) = name.strip_prefix("cov_t") {
        let (a, b) = parse_pair(rest, "_t")?;
        return cov(a, b);
    }
    if let Some(rest) = name.strip_prefix('d') {
        let (t, pair) = rest.split_once("_pair")?;
        let t: usize = t.parse().ok()?;
        let (a, b) = parse_pair(pair, "_")?;
        return Some(cov(t, t)? - cov(a, b)?);
    }
    let loadings = config.factor_loadings.as_ref();
    let ratio = |t: usize, s: usize| -> Option<f64> {
        match loadings {
            Some(rho) => Some(rho.get(t)? / rho.get(s)?),
            None => Some(1.0),
        }
    };
    if let Some(rest) = name.strip_prefix("r_") {
        let (t, s) = parse_pair(rest, "_")?;
        return ratio(t, s);
    }
    if let Some(rest) = name.strip_prefix("a_") {
        let (t, s) = parse_pair(rest, "_")?;
        return Some(ratio(t, s)? * cov(s, s)? - cov(t, s)?);
    }
    if let Some(rest) = name.strip_prefix("b_") {
        let (t, s) = parse_pair(rest, "_")?;
        return Some(cov(t, t)? - ratio(t, s)? * cov(t, s)?);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel_sim::{simulate, tests::base_config};

    #[test]
    fn truth_labels() {
        let mut c = base_config(ModelVariant::FactorLoading, 10, 3);
        c.error_cov = vec![
            vec![1.0, 0.5, 0.0],
            vec![0.5, 2.0, 0.1],
            vec![0.0, 0.1, 1.5],
        ];
        c.factor_loadings = Some(vec![1.0, 1.5, 2.0]);
        assert_eq!(true_parameter(&c, "beta_0"), Some(1.0));
        assert_eq!(true_parameter(&c, "sigma2_t1"), Some(2.0));
        assert_eq!(true_parameter(&c, "d0_pair0_1"), Some(0.5));
        assert_eq!(true_parameter(&c, "d1_pair0_1"), Some(1.5));
        assert_eq!(true_parameter(&c, "cov_t1_t2"), Some(0.1));
        assert_eq!(true_parameter(&c, "sigma2_t0_minus_t2"), Some(-0.5));
        assert_eq!(true_parameter(&c, "r_1_0"), Some(1.5));
        assert_eq!(true_parameter(&c, "a_1_0"), Some(1.5 * 1.0 - 0.5));
        assert_eq!(true_parameter(&c, "b_1_0"), Some(2.0 - 1.5 * 0.5));
        assert_eq!(true_parameter(&c, "sigma2"), Some(1.5));
        assert_eq!(true_parameter(&c, "unknown"), None);
    }

    #[test]
    fn triples_need_three_periods() {
        let c = EstimatorConfig::with_method(Method::TripleVarianceFe);
        match c.validate_for(ModelVariant::IndependentErrors, 2, false) {
            Err(Error::Config { field, message }) => {
                assert_eq!(field, "estimator.method");
                assert!(message.contains("T >= 3"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_variant_estimates() {
        for v in ModelVariant::ALL {
            let t = v.min_periods().max(2);
            let mut c = base_config(v, 3000, t);
            if v == ModelVariant::CrossSection {
                c.n_periods = 1;
                c.error_cov = vec![vec![1.0]];
            }
            let d = simulate(&c).unwrap();
            let r = estimate(&d, &EstimatorConfig::default()).unwrap();
            assert_eq!(r.estimates.len(), r.param_names.len());
            assert!(r.std_errors.iter().all(|s| s.is_finite() && *s > 0.0), "{v:?}");
            for name in &r.param_names {
                assert!(true_parameter(&c, name).is_some(), "{name}");
            }
            let json: EstimateResult = serde_json::from_str(&r.to_json()).unwrap();
            assert_eq!(json, r);
        }
    }
}
