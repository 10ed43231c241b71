//! Declarative experiments: Monte Carlo studies over sample sizes and the
//! identity-verification grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate, true_parameter, EstimateResult, EstimatorConfig};
use crate::numfmt::{g17, g17_opt};
use crate::panel_sim::{simulate, ModelVariant, PanelConfig};
use crate::rng::{derive_seed, stream_rng};
use crate::trunc_moments::{identity_check, BivariateNormalSpec, MomentQuery};

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional echo of `panel.variant`; must agree when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<ModelVariant>,
    pub panel: PanelConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default = "one")]
    pub replications: usize,
    /// Individuals per replication; defaults to `[panel.n_individuals]`.
    #[serde(default)]
    pub sample_sizes: Vec<usize>,
    /// Defaults to `panel.seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| json_config_error(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.variant {
            if v != self.panel.variant {
                return Err(Error::config("variant", "disagrees with panel.variant"));
            }
        }
        let panel = self.panel.clone().resolved()?;
        if self.replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        if self.sample_sizes.contains(&0) {
            return Err(Error::config("sample_sizes", "must be positive"));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("sample_sizes", "must be strictly increasing"));
        }
        self.estimator.validate_for(
            panel.variant,
            panel.n_periods,
            panel.variant == ModelVariant::SlopeFe,
        )
    }

    pub fn sample_sizes(&self) -> Vec<usize> {
        if self.sample_sizes.is_empty() {
            vec![self.panel.n_individuals]
        } else {
            self.sample_sizes.clone()
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed.unwrap_or(self.panel.seed)
    }
}

/// Maps a serde error to a config error naming the offending field when
/// serde reports one.
pub fn json_config_error(e: &serde_json::Error) -> Error {
    let msg = e.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("<root>")
        .to_string();
    Error::Config {
        field,
        message: msg,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub sample_size: usize,
    pub replication: usize,
    pub seed: u64,
    pub outcome: std::result::Result<EstimateResult, (String, String)>,
    pub wall_ms: f64,
}

impl ReplicationRecord {
    pub fn ok(&self) -> Option<&EstimateResult> {
        self.outcome.as_ref().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub sample_size: usize,
    pub parameter: String,
    pub truth: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_estimate: f64,
    pub mean_bias: f64,
    /// Monte Carlo standard error of the mean estimate.
    pub mc_se_mean: f64,
    pub rmse: f64,
    pub median_se: f64,
    pub coverage_95: f64,
    /// Share of replications whose J test rejects at 5%.
    pub j_reject_5pct: f64,
}

#[derive(Debug, Clone)]
pub struct MonteCarloOutput {
    pub param_names: Vec<String>,
    pub records: Vec<ReplicationRecord>,
    pub summary: Vec<ParameterSummary>,
}

impl MonteCarloOutput {
    pub fn summary_for(&self, sample_size: usize, parameter: &str) -> Option<&ParameterSummary> {
        self.summary
            .iter()
            .find(|s| s.sample_size == sample_size && s.parameter == parameter)
    }
}

/// Share of failed replications above which a sample size aborts the run.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

const Z_975: f64 = 1.959963984540054;

/// Simulate, estimate and record every `(sample size, replication)` cell.
/// Replication `j` uses seed `derive_seed(master, j)` at every sample size,
/// so the cells are reproducible and independent of scheduling.
pub fn run_montecarlo(cfg: &ExperimentConfig) -> Result<MonteCarloOutput> {
    cfg.validate()?;
    let master = cfg.master_seed();
    let sizes = cfg.sample_sizes();
    let cells: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&n| (0..cfg.replications).map(move |j| (n, j)))
        .collect();
    let records: Vec<ReplicationRecord> = cells
        .par_iter()
        .map(|&(n, j)| {
            let seed = derive_seed(master, j as u64);
            let start = Instant::now();
            let mut panel = cfg.panel.clone();
            panel.n_individuals = n;
            panel.seed = seed;
            let outcome = simulate(&panel)
                .and_then(|d| estimate(&d, &cfg.estimator))
                .map_err(|e| (e.kind().to_string(), e.to_string()));
            ReplicationRecord {
                sample_size: n,
                replication: j,
                seed,
                outcome,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            }
        })
        .collect();

    let param_names = records
        .iter()
        .find_map(|r| r.ok().map(|e| e.param_names.clone()))
        .unwrap_or_default();
    let summary = summarize(&cfg.panel, &sizes, &param_names, &records);
    let out = MonteCarloOutput {
        param_names,
        records,
        summary,
    };
    if let Some(dir) = &cfg.output_dir {
        write_montecarlo(&out, dir)?;
    }
    for &n in &sizes {
        let failed = out
            .records
            .iter()
            .filter(|r| r.sample_size == n && r.ok().is_none())
            .count();
        if failed as f64 > MAX_FAILURE_SHARE * cfg.replications as f64 {
            let reason = out
                .records
                .iter()
                .find_map(|r| r.outcome.as_ref().err().map(|e| e.1.clone()))
                .unwrap_or_default();
            return Err(Error::TooManyFailures {
                sample_size: n,
                failed,
                total: cfg.replications,
                reason,
            });
        }
    }
    Ok(out)
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn summarize(
    panel: &PanelConfig,
    sizes: &[usize],
    names: &[String],
    records: &[ReplicationRecord],
) -> Vec<ParameterSummary> {
    let mut out = Vec::new();
    for &n in sizes {
        let cell: Vec<&ReplicationRecord> = records.iter().filter(|r| r.sample_size == n).collect();
        let ok: Vec<&EstimateResult> = cell.iter().filter_map(|r| r.ok()).collect();
        let n_ok = ok.len();
        let n_failed = cell.len() - n_ok;
        let with_j: Vec<f64> = ok.iter().filter_map(|e| e.j_p_value).collect();
        let j_reject = if with_j.is_empty() {
            f64::NAN
        } else {
            with_j.iter().filter(|p| **p < 0.05).count() as f64 / with_j.len() as f64
        };
        for name in names {
            let truth = true_parameter(panel, name);
            let pairs: Vec<(f64, f64)> = ok
                .iter()
                .filter_map(|e| Some((e.estimate(name)?, e.std_error(name)?)))
                .collect();
            let m = pairs.len() as f64;
            let mean = pairs.iter().map(|p| p.0).sum::<f64>() / m;
            let var = if pairs.len() > 1 {
                pairs.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                f64::NAN
            };
            let t = truth.unwrap_or(f64::NAN);
            let rmse = (pairs.iter().map(|p| (p.0 - t).powi(2)).sum::<f64>() / m).sqrt();
            let coverage = pairs
                .iter()
                .filter(|(est, se)| (est - t).abs() <= Z_975 * se)
                .count() as f64
                / m;
            let mut ses: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            out.push(ParameterSummary {
                sample_size: n,
                parameter: name.clone(),
                truth,
                n_ok,
                n_failed,
                mean_estimate: mean,
                mean_bias: mean - t,
                mc_se_mean: (var / m).sqrt(),
                rmse,
                median_se: median(&mut ses),
                coverage_95: coverage,
                j_reject_5pct: j_reject,
            });
        }
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_line(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

/// `replications.csv`, `summary.csv` and `timings.csv`. The first two are
/// byte-identical across runs with the same config; wall-clock times live
/// in the third.
pub fn write_montecarlo(out: &MonteCarloOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut header: Vec<String> = [
        "sample_size",
        "replication",
        "seed",
        "status",
        "error_kind",
        "error_message",
        "converged",
        "n_rows",
        "j_statistic",
        "j_p_value",
    ]
    .map(String::from)
    .to_vec();
    header.extend(out.param_names.iter().map(|p| format!("est:{p}")));
    header.extend(out.param_names.iter().map(|p| format!("se:{p}")));
    let mut text = csv_line(&header);
    let mut timings = csv_line(&["sample_size".into(), "replication".into(), "wall_ms".into()]);
    for r in &out.records {
        let mut f = vec![r.sample_size.to_string(), r.replication.to_string(), r.seed.to_string()];
        match &r.outcome {
            Ok(e) => {
                f.extend(["ok".into(), String::new(), String::new()]);
                f.push(e.converged.to_string());
                f.push(e.n_rows.to_string());
                f.push(e.j_statistic.map(g17).unwrap_or_default());
                f.push(e.j_p_value.map(g17).unwrap_or_default());
                f.extend(out.param_names.iter().map(|p| e.estimate(p).map(g17).unwrap_or_default()));
                f.extend(out.param_names.iter().map(|p| e.std_error(p).map(g17).unwrap_or_default()));
            }
            Err((kind, msg)) => {
                f.extend(["failed".into(), kind.clone(), csv_quote(msg)]);
                f.extend(std::iter::repeat_n(String::new(), 4 + 2 * out.param_names.len()));
            }
        }
        text.push_str(&csv_line(&f));
        timings.push_str(&csv_line(&[
            r.sample_size.to_string(),
            r.replication.to_string(),
            format!("{:.3}", r.wall_ms),
        ]));
    }
    write_text(&dir.join("replications.csv"), &text)?;
    write_text(&dir.join("timings.csv"), &timings)?;

    let mut text = csv_line(
        &[
            "sample_size",
            "parameter",
            "truth",
            "n_ok",
            "n_failed",
            "mean_estimate",
            "mean_bias",
            "mc_se_mean",
            "rmse",
            "median_se",
            "coverage_95",
            "j_reject_5pct",
        ]
        .map(String::from),
    );
    for s in &out.summary {
        text.push_str(&csv_line(&[
            s.sample_size.to_string(),
            s.parameter.clone(),
            s.truth.map(g17).unwrap_or_default(),
            s.n_ok.to_string(),
            s.n_failed.to_string(),
            g17_opt(s.mean_estimate),
            g17_opt(s.mean_bias),
            g17_opt(s.mc_se_mean),
            g17_opt(s.rmse),
            g17_opt(s.median_se),
            g17_opt(s.coverage_95),
            g17_opt(s.j_reject_5pct),
        ]));
    }
    write_text(&dir.join("summary.csv"), &text)
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

/// Correlations above this are rejected by grid validation.
pub const MAX_ABS_RHO: f64 = 0.99;

fn default_points() -> usize {
    50
}
fn default_mu_max() -> f64 {
    2.0
}
fn default_sigma2_range() -> [f64; 2] {
    [0.25, 4.0]
}
fn default_rho_max() -> f64 {
    0.9
}
fn default_verify_orders() -> Vec<[u32; 2]> {
    let mut v = Vec::new();
    for k in 1..=3 {
        for m in 1..=3 {
            v.push([k, m]);
        }
    }
    v
}
fn default_quad_tol() -> f64 {
    1e-7
}
fn default_threshold() -> f64 {
    1e-6
}

/// Explicit grid point, given by correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Random points drawn in addition to `points`.
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mu_max")]
    pub mu_max: f64,
    #[serde(default = "default_sigma2_range")]
    pub sigma2_range: [f64; 2],
    #[serde(default = "default_rho_max")]
    pub rho_max: f64,
    #[serde(default)]
    pub points: Vec<GridPoint>,
    #[serde(default = "default_verify_orders")]
    pub orders: Vec<[u32; 2]>,
    /// Quadrature tolerance handed to the residual evaluation.
    #[serde(default = "default_quad_tol")]
    pub tol: f64,
    /// Pass threshold on |residual|.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl VerifyConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| json_config_error(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_max >= 0.0 && self.mu_max.is_finite()) {
            return Err(Error::config("mu_max", "must be finite and >= 0"));
        }
        let [lo, hi] = self.sigma2_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config("sigma2_range", "need 0 < low <= high < inf"));
        }
        if !(self.rho_max >= 0.0 && self.rho_max <= MAX_ABS_RHO) {
            return Err(Error::config(
                "rho_max",
                format!("|rho| is capped at {MAX_ABS_RHO}, got {}", self.rho_max),
            ));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !(p.rho.abs() <= MAX_ABS_RHO) {
                return Err(Error::config(
                    format!("points[{i}].rho"),
                    format!("|rho| = {} exceeds the cap {MAX_ABS_RHO}", p.rho.abs()),
                ));
            }
            BivariateNormalSpec::from_correlation(p.mu1, p.mu2, p.sigma1_sq, p.sigma2_sq, p.rho)
                .map_err(|e| Error::config(format!("points[{i}]"), e.to_string()))?;
        }
        if self.n_points == 0 && self.points.is_empty() {
            return Err(Error::config("n_points", "grid is empty"));
        }
        if self.orders.is_empty() {
            return Err(Error::config("orders", "need at least one (k, m)"));
        }
        for [k, m] in &self.orders {
            if *k == 0 || *m == 0 {
                return Err(Error::config("orders", "the identity needs k >= 1 and m >= 1"));
            }
            MomentQuery::new(k + 1, *m)
                .and_then(|_| MomentQuery::new(*k, m + 1))
                .map_err(|e| Error::config("orders", e.to_string()))?;
        }
        if !(self.tol > 0.0) || !(self.threshold > 0.0) {
            return Err(Error::config("tol", "tolerances must be positive"));
        }
        Ok(())
    }

    /// Explicit points followed by the seeded random draws.
    pub fn grid(&self) -> Vec<BivariateNormalSpec> {
        let mut out: Vec<BivariateNormalSpec> = self
            .points
            .iter()
            .map(|p| {
                BivariateNormalSpec::from_correlation(p.mu1, p.mu2, p.sigma1_sq, p.sigma2_sq, p.rho)
                    .expect("validated")
            })
            .collect();
        let mut rng = stream_rng(self.seed, 0);
        let [lo, hi] = self.sigma2_range;
        for _ in 0..self.n_points {
            let mu1 = self.mu_max * (2.0 * rng.random::<f64>() - 1.0);
            let mu2 = self.mu_max * (2.0 * rng.random::<f64>() - 1.0);
            let s1 = lo + (hi - lo) * rng.random::<f64>();
            let s2 = lo + (hi - lo) * rng.random::<f64>();
            let rho = self.rho_max * (2.0 * rng.random::<f64>() - 1.0);
            out.push(BivariateNormalSpec::from_correlation(mu1, mu2, s1, s2, rho).expect("inside the cap"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyRow {
    pub point: usize,
    pub spec: BivariateNormalSpec,
    pub k: u32,
    pub m: u32,
    pub residual: f64,
    pub error_bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    /// `(k, m, max |residual|)`.
    pub max_by_order: Vec<(u32, u32, f64)>,
    pub threshold: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.residual.abs()))
    }

    pub fn worst(&self) -> Option<&VerifyRow> {
        self.rows
            .iter()
            .max_by(|a, b| a.residual.abs().total_cmp(&b.residual.abs()))
    }
}

pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let grid = cfg.grid();
    let cells: Vec<(usize, [u32; 2])> = (0..grid.len())
        .flat_map(|i| cfg.orders.iter().map(move |o| (i, *o)))
        .collect();
    let rows: Vec<VerifyRow> = cells
        .par_iter()
        .map(|&(i, [k, m])| {
            let c = identity_check(&grid[i], MomentQuery::new(k, m)?, cfg.tol)?;
            Ok(VerifyRow {
                point: i,
                spec: grid[i],
                k,
                m,
                residual: c.residual,
                error_bound: c.error_bound,
                pass: c.residual.abs() < cfg.threshold,
            })
        })
        .collect::<Result<_>>()?;
    let max_by_order = cfg
        .orders
        .iter()
        .map(|&[k, m]| {
            let worst = rows
                .iter()
                .filter(|r| r.k == k && r.m == m)
                .fold(0.0f64, |a, r| a.max(r.residual.abs()));
            (k, m, worst)
        })
        .collect();
    let report = VerifyReport {
        rows,
        max_by_order,
        threshold: cfg.threshold,
    };
    if let Some(dir) = &cfg.output_dir {
        write_verify(&report, dir)?;
    }
    Ok(report)
}

/// `verify.csv` (one row per point and order) and `verify_summary.csv`.
pub fn write_verify(report: &VerifyReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = csv_line(
        &[
            "point", "mu1", "mu2", "sigma1_sq", "sigma2_sq", "sigma12", "rho", "k", "m", "residual",
            "error_bound", "pass",
        ]
        .map(String::from),
    );
    for r in &report.rows {
        let s = r.spec;
        text.push_str(&csv_line(&[
            r.point.to_string(),
            g17(s.mu1),
            g17(s.mu2),
            g17(s.sigma1_sq),
            g17(s.sigma2_sq),
            g17(s.sigma12),
            g17(s.rho()),
            r.k.to_string(),
            r.m.to_string(),
            g17(r.residual),
            g17(r.error_bound),
            r.pass.to_string(),
        ]));
    }
    write_text(&dir.join("verify.csv"), &text)?;
    let mut text = csv_line(&["k", "m", "max_abs_residual", "threshold", "pass"].map(String::from));
    for &(k, m, worst) in &report.max_by_order {
        text.push_str(&csv_line(&[
            k.to_string(),
            m.to_string(),
            g17(worst),
            g17(report.threshold),
            (worst < report.threshold).to_string(),
        ]));
    }
    write_text(&dir.join("verify_summary.csv"), &text)
}
