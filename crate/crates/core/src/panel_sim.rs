//! Synthetic censored and truncated panels for every latent-index model
//! variant the estimators cover.
//!
//! The latent index is `y*_it = x_it'b + c_it(alpha_i) + e_it` where the
//! fixed-effect term `c_it` is `0` (cross-section), `alpha_i` (level effect),
//! `rho_t alpha_i` (factor loading) or `z_it alpha_i` (slope effect).
//! Individual `i` draws everything from its own ChaCha8 stream keyed by the
//! config seed, so output does not depend on the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    #[serde(alias = "CrossSection")]
    CrossSection,
    #[serde(alias = "IndependentErrors")]
    IndependentErrors,
    #[serde(alias = "NonStationary")]
    NonStationary,
    #[serde(alias = "FactorLoading")]
    FactorLoading,
    #[serde(alias = "VarianceFE")]
    VarianceFe,
    #[serde(alias = "AdditiveVariance")]
    AdditiveVariance,
    #[serde(alias = "SlopeFE")]
    SlopeFe,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 7] = [
        ModelVariant::CrossSection,
        ModelVariant::IndependentErrors,
        ModelVariant::NonStationary,
        ModelVariant::FactorLoading,
        ModelVariant::VarianceFe,
        ModelVariant::AdditiveVariance,
        ModelVariant::SlopeFe,
    ];

    pub fn min_periods(self) -> usize {
        match self {
            ModelVariant::CrossSection => 1,
            ModelVariant::VarianceFe | ModelVariant::AdditiveVariance => 3,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::CrossSection => "cross_section",
            ModelVariant::IndependentErrors => "independent_errors",
            ModelVariant::NonStationary => "non_stationary",
            ModelVariant::FactorLoading => "factor_loading",
            ModelVariant::VarianceFe => "variance_fe",
            ModelVariant::AdditiveVariance => "additive_variance",
            ModelVariant::SlopeFe => "slope_fe",
        }
    }

    fn has_individual_variance(self) -> bool {
        matches!(self, ModelVariant::VarianceFe | ModelVariant::AdditiveVariance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Censored,
    Truncated,
}

impl Sampling {
    pub fn name(self) -> &'static str {
        match self {
            Sampling::Censored => "censored",
            Sampling::Truncated => "truncated",
        }
    }
}

/// Law of one regressor, drawn i.i.d. over individuals and periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorDist {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for RegressorDist {
    fn default() -> Self {
        RegressorDist::Normal { mean: 0.0, sd: 1.0 }
    }
}

impl RegressorDist {
    fn validate(&self, field: &str) -> Result<()> {
        match *self {
            RegressorDist::Normal { mean, sd } => {
                if !mean.is_finite() || !(sd >= 0.0) || !sd.is_finite() {
                    return Err(Error::config(field, "normal needs finite mean and sd >= 0"));
                }
            }
            RegressorDist::Uniform { low, high } => {
                if !(low < high) || !low.is_finite() || !high.is_finite() {
                    return Err(Error::config(field, "uniform needs finite low < high"));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            RegressorDist::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            RegressorDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }
}

/// Law of the individual effect `alpha_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedEffectDist {
    /// `coef * mean_t(x_it'b) + noise_sd * N(0,1)`: correlated with the regressors.
    Correlated { coef: f64, noise_sd: f64 },
    /// Independent of the regressors.
    Normal { mean: f64, sd: f64 },
    Zero,
}

impl Default for FixedEffectDist {
    fn default() -> Self {
        FixedEffectDist::Correlated {
            coef: 1.0,
            noise_sd: 1.0,
        }
    }
}

/// A strictly positive law, used for individual variances and slope shifters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PositiveDist {
    /// `shift + scale * |N(0,1)|`
    ShiftedAbsNormal { shift: f64, scale: f64 },
    /// `exp(N(mu, sigma2))`
    LogNormal { mu: f64, sigma2: f64 },
    Uniform { low: f64, high: f64 },
}

impl PositiveDist {
    pub const DEFAULT_INDIVIDUAL_VARIANCE: PositiveDist = PositiveDist::ShiftedAbsNormal {
        shift: 0.5,
        scale: 1.0,
    };
    pub const DEFAULT_SLOPE_SHIFTER: PositiveDist = PositiveDist::LogNormal {
        mu: 0.0,
        sigma2: 0.25,
    };

    fn validate(&self, field: &str) -> Result<()> {
        let ok = match *self {
            PositiveDist::ShiftedAbsNormal { shift, scale } => {
                shift > 0.0 && scale >= 0.0 && shift.is_finite() && scale.is_finite()
            }
            PositiveDist::LogNormal { mu, sigma2 } => {
                mu.is_finite() && sigma2 >= 0.0 && sigma2.is_finite()
            }
            PositiveDist::Uniform { low, high } => low > 0.0 && low < high && high.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(field, "support must be strictly positive"))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            PositiveDist::ShiftedAbsNormal { shift, scale } => {
                let z: f64 = StandardNormal.sample(rng);
                shift + scale * z.abs()
            }
            PositiveDist::LogNormal { mu, sigma2 } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma2.sqrt() * z).exp()
            }
            PositiveDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }
}

fn default_x_dist() -> Vec<RegressorDist> {
    vec![RegressorDist::default()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    pub variant: ModelVariant,
    pub n_individuals: usize,
    pub n_periods: usize,
    pub n_regressors: usize,
    pub beta: Vec<f64>,
    /// T×T covariance of `(e_i1, ..., e_iT)`. For `variance_fe` it is unused;
    /// for `additive_variance` its diagonal holds the time components.
    pub error_cov: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_loadings: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_fe_dist: Option<PositiveDist>,
    #[serde(default)]
    pub fe_dist: FixedEffectDist,
    /// One entry per regressor, or a single entry shared by all of them.
    #[serde(default = "default_x_dist")]
    pub x_dist: Vec<RegressorDist>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_dist: Option<PositiveDist>,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub seed: u64,
}

impl PanelConfig {
    /// Fills the variant-implied defaults (individual variance law, slope
    /// shifter law) and validates the result.
    pub fn resolved(mut self) -> Result<Self> {
        if self.variant.has_individual_variance() && self.variance_fe_dist.is_none() {
            self.variance_fe_dist = Some(PositiveDist::DEFAULT_INDIVIDUAL_VARIANCE);
        }
        if self.variant == ModelVariant::SlopeFe && self.z_dist.is_none() {
            self.z_dist = Some(PositiveDist::DEFAULT_SLOPE_SHIFTER);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.n_periods;
        let k = self.n_regressors;
        if self.n_individuals == 0 {
            return Err(Error::config("n_individuals", "must be positive"));
        }
        if t < self.variant.min_periods() {
            return Err(Error::config(
                "n_periods",
                format!(
                    "variant {} requires T >= {}, got {t}",
                    self.variant.name(),
                    self.variant.min_periods()
                ),
            ));
        }
        if k == 0 {
            return Err(Error::config("n_regressors", "must be positive"));
        }
        if self.beta.len() != k || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::config(
                "beta",
                format!("expected {k} finite coefficients, got {}", self.beta.len()),
            ));
        }
        if !(self.x_dist.len() == 1 || self.x_dist.len() == k) {
            return Err(Error::config("x_dist", "give one law or one per regressor"));
        }
        for d in &self.x_dist {
            d.validate("x_dist")?;
        }
        match self.fe_dist {
            FixedEffectDist::Correlated { coef, noise_sd } => {
                if !coef.is_finite() || !(noise_sd >= 0.0) || !noise_sd.is_finite() {
                    return Err(Error::config("fe_dist", "needs finite coef and noise_sd >= 0"));
                }
            }
            FixedEffectDist::Normal { mean, sd } => {
                if !mean.is_finite() || !(sd >= 0.0) || !sd.is_finite() {
                    return Err(Error::config("fe_dist", "needs finite mean and sd >= 0"));
                }
            }
            FixedEffectDist::Zero => {}
        }
        self.error_cov_matrix()?;
        if matches!(
            self.variant,
            ModelVariant::IndependentErrors | ModelVariant::AdditiveVariance
        ) {
            for a in 0..t {
                for b in 0..t {
                    if a != b && self.error_cov[a][b] != 0.0 {
                        return Err(Error::config(
                            "error_cov",
                            format!(
                                "variant {} needs errors independent over time (diagonal covariance)",
                                self.variant.name()
                            ),
                        ));
                    }
                }
            }
        }
        match (&self.factor_loadings, self.variant) {
            (Some(rho), ModelVariant::FactorLoading) => {
                if rho.len() != t {
                    return Err(Error::config("factor_loadings", format!("expected {t} loadings")));
                }
                if rho[0] != 1.0 {
                    return Err(Error::config("factor_loadings", "first loading is normalized to 1"));
                }
                if rho.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
                    return Err(Error::config("factor_loadings", "loadings must be positive"));
                }
            }
            (None, ModelVariant::FactorLoading) => {
                return Err(Error::config("factor_loadings", "required for factor_loading"));
            }
            (Some(_), v) => {
                return Err(Error::config(
                    "factor_loadings",
                    format!("only allowed for factor_loading, not {}", v.name()),
                ));
            }
            (None, _) => {}
        }
        match (&self.variance_fe_dist, self.variant.has_individual_variance()) {
            (Some(d), true) => d.validate("variance_fe_dist")?,
            (None, true) => {
                return Err(Error::config("variance_fe_dist", "required for this variant"));
            }
            (Some(_), false) => {
                return Err(Error::config(
                    "variance_fe_dist",
                    "only allowed for variance_fe and additive_variance",
                ));
            }
            (None, false) => {}
        }
        match (&self.z_dist, self.variant == ModelVariant::SlopeFe) {
            (Some(d), true) => d.validate("z_dist")?,
            (None, true) => return Err(Error::config("z_dist", "required for slope_fe")),
            (Some(_), false) => return Err(Error::config("z_dist", "only allowed for slope_fe")),
            (None, false) => {}
        }
        Ok(())
    }

    pub fn error_cov_matrix(&self) -> Result<DMatrix<f64>> {
        let t = self.n_periods;
        if self.error_cov.len() != t || self.error_cov.iter().any(|r| r.len() != t) {
            return Err(Error::config("error_cov", format!("must be {t}x{t}")));
        }
        let m = DMatrix::from_fn(t, t, |a, b| self.error_cov[a][b]);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("error_cov", "entries must be finite"));
        }
        for a in 0..t {
            for b in 0..a {
                if m[(a, b)] != m[(b, a)] {
                    return Err(Error::config("error_cov", "must be symmetric"));
                }
            }
        }
        if m.clone().cholesky().is_none() {
            return Err(Error::config("error_cov", "must be positive definite"));
        }
        Ok(m)
    }

    fn x_law(&self, j: usize) -> &RegressorDist {
        if self.x_dist.len() == 1 {
            &self.x_dist[0]
        } else {
            &self.x_dist[j]
        }
    }
}

/// Quantities the estimators must never see. Kept for white-box tests.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTruth {
    /// N×T latent index, row-major.
    pub latent_y: Vec<f64>,
    pub alpha: Vec<f64>,
    /// N×T structural errors.
    pub errors: Vec<f64>,
    pub individual_variance: Option<Vec<f64>>,
}

/// Observed panel. Cells absent under truncated sampling hold `NaN` in `y`,
/// `x` and `z`.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    pub n_individuals: usize,
    pub n_periods: usize,
    pub n_regressors: usize,
    /// N×T row-major.
    pub y: Vec<f64>,
    /// N×T×K, individual-major then period.
    pub x: Vec<f64>,
    pub z: Option<Vec<f64>>,
    pub truth: Option<LatentTruth>,
    pub config: PanelConfig,
}

impl PanelDataset {
    #[inline]
    pub fn y(&self, i: usize, t: usize) -> f64 {
        self.y[i * self.n_periods + t]
    }

    #[inline]
    pub fn x(&self, i: usize, t: usize) -> &[f64] {
        let start = (i * self.n_periods + t) * self.n_regressors;
        &self.x[start..start + self.n_regressors]
    }

    #[inline]
    pub fn z(&self, i: usize, t: usize) -> Option<f64> {
        self.z.as_ref().map(|z| z[i * self.n_periods + t])
    }

    /// Strictly positive observed outcome; absent cells are never positive.
    #[inline]
    pub fn positive(&self, i: usize, t: usize) -> bool {
        self.y(i, t) > 0.0
    }

    pub fn is_observed(&self, i: usize, t: usize) -> bool {
        !self.y(i, t).is_nan()
    }

    pub fn sampling(&self) -> Sampling {
        self.config.sampling
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    pub fn retained_cells(&self) -> usize {
        self.y.iter().filter(|v| !v.is_nan()).count()
    }

    /// Copy with the latent truth removed, i.e. what an estimator may see.
    pub fn observed_only(&self) -> Self {
        Self {
            truth: None,
            ..self.clone()
        }
    }
}

struct IndividualDraw {
    x: Vec<f64>,
    z: Option<Vec<f64>>,
    alpha: f64,
    errors: Vec<f64>,
    latent: Vec<f64>,
    individual_variance: Option<f64>,
}

/// Cap on redraws of one individual in truncated mode.
pub const MAX_TRUNCATION_ATTEMPTS: u64 = 100;

pub fn simulate(config: &PanelConfig) -> Result<PanelDataset> {
    let config = config.clone().resolved()?;
    let chol = config
        .error_cov_matrix()?
        .cholesky()
        .expect("validated positive definite")
        .l();
    let n = config.n_individuals;
    let t = config.n_periods;
    let k = config.n_regressors;

    let draws: Vec<IndividualDraw> = (0..n)
        .into_par_iter()
        .map(|i| match config.sampling {
            Sampling::Censored => Ok(draw_individual(&config, &chol, i as u64)),
            Sampling::Truncated => {
                for attempt in 0..MAX_TRUNCATION_ATTEMPTS {
                    let d = draw_individual(&config, &chol, (attempt << 40) | i as u64);
                    if d.latent.iter().any(|&v| v > 0.0) {
                        return Ok(d);
                    }
                }
                Err(Error::config(
                    "sampling",
                    format!(
                        "truncated sampling: individual {i} had no positive outcome in {MAX_TRUNCATION_ATTEMPTS} draws"
                    ),
                ))
            }
        })
        .collect::<Result<_>>()?;

    let mut y = Vec::with_capacity(n * t);
    let mut x = Vec::with_capacity(n * t * k);
    let mut z = config.z_dist.map(|_| Vec::with_capacity(n * t));
    let mut latent_y = Vec::with_capacity(n * t);
    let mut errors = Vec::with_capacity(n * t);
    let mut alpha = Vec::with_capacity(n);
    let mut ivar = config
        .variant
        .has_individual_variance()
        .then(|| Vec::with_capacity(n));

    for d in draws {
        for s in 0..t {
            let ys = d.latent[s];
            let keep = ys > 0.0 || config.sampling == Sampling::Censored;
            y.push(if keep { ys.max(0.0) } else { f64::NAN });
            for j in 0..k {
                x.push(if keep { d.x[s * k + j] } else { f64::NAN });
            }
            if let (Some(zv), Some(dz)) = (z.as_mut(), d.z.as_ref()) {
                zv.push(if keep { dz[s] } else { f64::NAN });
            }
        }
        latent_y.extend_from_slice(&d.latent);
        errors.extend_from_slice(&d.errors);
        alpha.push(d.alpha);
        if let (Some(v), Some(s2)) = (ivar.as_mut(), d.individual_variance) {
            v.push(s2);
        }
    }

    Ok(PanelDataset {
        n_individuals: n,
        n_periods: t,
        n_regressors: k,
        y,
        x,
        z,
        truth: Some(LatentTruth {
            latent_y,
            alpha,
            errors,
            individual_variance: ivar,
        }),
        config,
    })
}

fn draw_individual(config: &PanelConfig, chol: &DMatrix<f64>, stream: u64) -> IndividualDraw {
    let mut rng = stream_rng(config.seed, stream);
    let t = config.n_periods;
    let k = config.n_regressors;

    let mut x = vec![0.0; t * k];
    for s in 0..t {
        for j in 0..k {
            x[s * k + j] = config.x_law(j).sample(&mut rng);
        }
    }
    let z = config
        .z_dist
        .map(|law| (0..t).map(|_| law.sample(&mut rng)).collect::<Vec<f64>>());
    let std_normals = DVector::from_fn(t, |_, _| StandardNormal.sample(&mut rng));
    let alpha_noise: f64 = StandardNormal.sample(&mut rng);
    let individual_variance = config.variance_fe_dist.map(|law| law.sample(&mut rng));

    let index: Vec<f64> = (0..t)
        .map(|s| {
            x[s * k..(s + 1) * k]
                .iter()
                .zip(&config.beta)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();

    let alpha = match (config.variant, config.fe_dist) {
        (ModelVariant::CrossSection, _) => 0.0,
        (_, FixedEffectDist::Correlated { coef, noise_sd }) => {
            coef * index.iter().sum::<f64>() / t as f64 + noise_sd * alpha_noise
        }
        (_, FixedEffectDist::Normal { mean, sd }) => mean + sd * alpha_noise,
        (_, FixedEffectDist::Zero) => 0.0,
    };

    let errors: Vec<f64> = match config.variant {
        ModelVariant::VarianceFe => {
            let sd = individual_variance.expect("resolved").sqrt();
            std_normals.iter().map(|e| sd * e).collect()
        }
        ModelVariant::AdditiveVariance => {
            let s2 = individual_variance.expect("resolved");
            std_normals
                .iter()
                .enumerate()
                .map(|(s, e)| (s2 + config.error_cov[s][s]).sqrt() * e)
                .collect()
        }
        _ => (chol * std_normals).iter().copied().collect(),
    };

    let latent = (0..t)
        .map(|s| {
            let effect = match config.variant {
                ModelVariant::FactorLoading => {
                    config.factor_loadings.as_ref().expect("validated")[s] * alpha
                }
                ModelVariant::SlopeFe => z.as_ref().expect("resolved")[s] * alpha,
                _ => alpha,
            };
            index[s] + effect + errors[s]
        })
        .collect();

    IndividualDraw {
        x,
        z,
        alpha,
        errors,
        latent,
        individual_variance,
    }
}

/// Share of cells with `y = 0`. Only meaningful for censored sampling.
pub fn censoring_rate(dataset: &PanelDataset) -> Result<f64> {
    if dataset.sampling() != Sampling::Censored {
        return Err(Error::UnsupportedMode(dataset.sampling().name().into()));
    }
    let zeros = dataset.y.iter().filter(|&&v| v == 0.0).count();
    Ok(zeros as f64 / dataset.y.len() as f64)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn base_config(variant: ModelVariant, n: usize, t: usize) -> PanelConfig {
        let mut cov = vec![vec![0.0; t]; t];
        for (s, row) in cov.iter_mut().enumerate() {
            row[s] = 1.0;
        }
        PanelConfig {
            variant,
            n_individuals: n,
            n_periods: t,
            n_regressors: 1,
            beta: vec![1.0],
            error_cov: cov,
            factor_loadings: (variant == ModelVariant::FactorLoading)
                .then(|| (0..t).map(|s| 1.0 + 0.5 * s as f64).collect()),
            variance_fe_dist: None,
            fe_dist: FixedEffectDist::default(),
            x_dist: vec![RegressorDist::default()],
            z_dist: None,
            sampling: Sampling::Censored,
            seed: 11,
        }
    }

    #[test]
    fn zero_index_censors_about_half() {
        let mut c = base_config(ModelVariant::IndependentErrors, 4, 2);
        c.beta = vec![0.0];
        c.fe_dist = FixedEffectDist::Zero;
        let d = simulate(&c).unwrap();
        let truth = d.truth.as_ref().unwrap();
        for (y, e) in d.y.iter().zip(&truth.errors) {
            assert_eq!(*y, e.max(0.0));
        }

        c.n_individuals = 20_000;
        let d = simulate(&c).unwrap();
        let rate = censoring_rate(&d).unwrap();
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn censored_observation_rule() {
        let d = simulate(&base_config(ModelVariant::NonStationary, 500, 3)).unwrap();
        let truth = d.truth.as_ref().unwrap();
        for (y, ys) in d.y.iter().zip(&truth.latent_y) {
            assert!(*y >= 0.0);
            if *ys > 0.0 {
                assert_eq!(y, ys);
            } else {
                assert_eq!(*y, 0.0);
            }
        }
    }

    #[test]
    fn truncated_keeps_only_positive_cells() {
        let mut c = base_config(ModelVariant::IndependentErrors, 1000, 2);
        c.sampling = Sampling::Truncated;
        let d = simulate(&c).unwrap();
        let retained = d.retained_cells();
        assert!(retained < 1000 * 2);
        for v in d.y.iter().filter(|v| !v.is_nan()) {
            assert!(*v > 0.0);
        }
        let truth = d.truth.as_ref().unwrap();
        for (y, ys) in d.y.iter().zip(&truth.latent_y) {
            if !y.is_nan() {
                assert_eq!(y, ys);
            }
        }
        assert!(matches!(censoring_rate(&d), Err(Error::UnsupportedMode(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let c = base_config(ModelVariant::SlopeFe, 300, 2);
        let a = simulate(&c).unwrap();
        let b = simulate(&c).unwrap();
        assert_eq!(a.y.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.y.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.z, b.z);
        let mut c2 = c.clone();
        c2.seed += 1;
        assert_ne!(simulate(&c2).unwrap().y, a.y);
    }

    #[test]
    fn all_positive_dataset_has_zero_censoring() {
        let mut c = base_config(ModelVariant::IndependentErrors, 200, 2);
        c.x_dist = vec![RegressorDist::Normal { mean: 50.0, sd: 1.0 }];
        let d = simulate(&c).unwrap();
        assert_eq!(censoring_rate(&d).unwrap(), 0.0);
    }

    #[test]
    fn slope_shifters_positive() {
        let d = simulate(&base_config(ModelVariant::SlopeFe, 500, 2)).unwrap();
        assert!(d.z.as_ref().unwrap().iter().all(|z| *z > 0.0));
    }

    #[test]
    fn config_errors_name_fields() {
        let check = |c: PanelConfig, field: &str| match c.resolved() {
            Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
            other => panic!("expected config error on {field}, got {other:?}"),
        };
        check(base_config(ModelVariant::VarianceFe, 10, 2), "n_periods");
        let mut c = base_config(ModelVariant::NonStationary, 10, 2);
        c.error_cov = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        check(c, "error_cov");
        let mut c = base_config(ModelVariant::IndependentErrors, 10, 2);
        c.error_cov = vec![vec![1.0, 0.2], vec![0.2, 1.0]];
        check(c, "error_cov");
        let mut c = base_config(ModelVariant::FactorLoading, 10, 2);
        c.factor_loadings = Some(vec![2.0, 1.0]);
        check(c, "factor_loadings");
        let mut c = base_config(ModelVariant::IndependentErrors, 10, 2);
        c.z_dist = Some(PositiveDist::DEFAULT_SLOPE_SHIFTER);
        check(c, "z_dist");
        let mut c = base_config(ModelVariant::SlopeFe, 10, 2);
        c.z_dist = Some(PositiveDist::Uniform { low: -1.0, high: 1.0 });
        check(c, "z_dist");
        let mut c = base_config(ModelVariant::IndependentErrors, 10, 2);
        c.beta = vec![1.0, 2.0];
        check(c, "beta");
    }
}
