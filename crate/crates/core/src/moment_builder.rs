//! Estimating equations for each model variant.
//!
//! Every builder keeps only rows whose referenced outcomes are all strictly
//! positive. On that event the observed `y` equals the latent index, so the
//! equations, which hold in the latent variables, can be evaluated on data.
//! Instruments are functions of `x` (and `z`) only.
//!
//! Parameter labels are stable strings: `beta_{j}`, `sigma2`, `sigma2_t{t}`,
//! `d{t}_pair{a}_{b}`, `cov_t{a}_t{b}`, `sigma2_t{p}_minus_t{ref}`, and
//! `r_{t}_{s}`, `a_{t}_{s}`, `b_{t}_{s}` for the factor-loading system.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::g17;
use crate::panel_sim::PanelDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub dependent: f64,
    pub regressors: Vec<f64>,
    pub instruments: Vec<f64>,
    pub individual: usize,
    pub periods: Vec<usize>,
}

/// Linear-in-parameters system `dependent = regressors' theta + error`,
/// with `E[instruments * error] = 0` at the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    pub param_names: Vec<String>,
    pub instrument_names: Vec<String>,
    pub rows: Vec<PairRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentSet {
    /// Levels, differences and squared differences of the regressors
    /// (plus shifter terms for slope effects).
    #[default]
    Default,
    /// Intercept and regressor levels only.
    Linear,
    /// Levels plus all second-order terms `x_t^2, x_s^2, x_t x_s`
    /// (plus shifter terms and their products with `x` for slope effects).
    Quadratic,
}

impl MomentSystem {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_instruments(&self) -> usize {
        self.instrument_names.len()
    }

    pub fn cluster_of_row(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.individual).collect()
    }

    pub fn n_clusters(&self) -> usize {
        let mut ids = self.cluster_of_row();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|p| p == name)
    }

    /// Checks internal consistency: vector lengths and finiteness.
    pub fn validate(&self) -> Result<()> {
        let (p, l) = (self.n_params(), self.n_instruments());
        for (i, r) in self.rows.iter().enumerate() {
            if r.regressors.len() != p || r.instruments.len() != l {
                return Err(Error::Domain(format!("row {i} has inconsistent widths")));
            }
            if !r.dependent.is_finite()
                || r.regressors.iter().chain(&r.instruments).any(|v| !v.is_finite())
            {
                return Err(Error::Domain(format!("row {i} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Stacks systems with shared parameters matched by label. Each input
    /// keeps its own instrument block, so the stacked moment vector is the
    /// concatenation of the per-system moment vectors. Rows are ordered by
    /// individual, then period tuple, then input position.
    pub fn stack(systems: Vec<MomentSystem>) -> Result<MomentSystem> {
        if systems.is_empty() {
            return Err(Error::EmptySystem("nothing to stack".into()));
        }
        if systems.len() == 1 {
            return Ok(systems.into_iter().next().expect("one system"));
        }
        let mut param_names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for s in &systems {
            for p in &s.param_names {
                if !index.contains_key(p) {
                    index.insert(p.clone(), param_names.len());
                    param_names.push(p.clone());
                }
            }
        }
        let total_instr: usize = systems.iter().map(|s| s.n_instruments()).sum();
        let mut instrument_names = Vec::with_capacity(total_instr);
        let mut keyed: Vec<(usize, PairRow)> = Vec::new();
        let mut offset = 0;
        for (block, s) in systems.into_iter().enumerate() {
            instrument_names.extend(s.instrument_names.iter().map(|n| format!("b{block}:{n}")));
            let map: Vec<usize> = s.param_names.iter().map(|p| index[p]).collect();
            let width = s.instrument_names.len();
            for r in s.rows {
                let mut regressors = vec![0.0; param_names.len()];
                for (j, v) in r.regressors.iter().enumerate() {
                    regressors[map[j]] = *v;
                }
                let mut instruments = vec![0.0; total_instr];
                instruments[offset..offset + width].copy_from_slice(&r.instruments);
                keyed.push((
                    block,
                    PairRow {
                        regressors,
                        instruments,
                        ..r
                    },
                ));
            }
            offset += width;
        }
        keyed.sort_by(|(ba, a), (bb, b)| {
            (a.individual, &a.periods, ba).cmp(&(b.individual, &b.periods, bb))
        });
        Ok(MomentSystem {
            param_names,
            instrument_names,
            rows: keyed.into_iter().map(|(_, r)| r).collect(),
        })
    }

    /// Drops instrument columns that repeat an earlier column exactly on
    /// every row.
    pub fn drop_duplicate_instruments(&mut self) {
        let l = self.n_instruments();
        let mut keep = vec![true; l];
        for b in 1..l {
            for a in 0..b {
                if keep[a]
                    && self
                        .rows
                        .iter()
                        .all(|r| r.instruments[a].to_bits() == r.instruments[b].to_bits())
                {
                    keep[b] = false;
                    break;
                }
            }
        }
        if keep.iter().all(|k| *k) {
            return;
        }
        let filter = |v: &Vec<f64>| -> Vec<f64> {
            v.iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(x, _)| *x)
                .collect()
        };
        for r in &mut self.rows {
            r.instruments = filter(&r.instruments);
        }
        self.instrument_names = self
            .instrument_names
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(n, _)| n.clone())
            .collect();
    }

    /// Multiplies every instrument by `c`.
    pub fn scale_instruments(&mut self, c: f64) {
        for r in &mut self.rows {
            for v in &mut r.instruments {
                *v *= c;
            }
        }
    }

    /// One CSV line per row: individual, periods (`-`-joined), dependent,
    /// regressors, instruments.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut header = vec!["individual".to_string(), "periods".into(), "dependent".into()];
        header.extend(self.param_names.iter().map(|p| format!("reg:{p}")));
        header.extend(self.instrument_names.iter().map(|n| format!("inst:{n}")));
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.rows {
            let periods: Vec<String> = r.periods.iter().map(|p| p.to_string()).collect();
            let mut fields = vec![r.individual.to_string(), periods.join("-"), g17(r.dependent)];
            fields.extend(r.regressors.iter().map(|v| g17(*v)));
            fields.extend(r.instruments.iter().map(|v| g17(*v)));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn beta_names(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("beta_{j}")).collect()
}

pub fn sigma2_name(t: usize) -> String {
    format!("sigma2_t{t}")
}

pub fn nonstationary_names(t: usize, s: usize) -> (String, String) {
    let (a, b) = (t.min(s), t.max(s));
    (format!("d{t}_pair{a}_{b}"), format!("d{s}_pair{a}_{b}"))
}

pub fn cov_name(t: usize, s: usize) -> String {
    format!("cov_t{}_t{}", t.min(s), t.max(s))
}

pub fn variance_contrast_name(p: usize, reference: usize) -> String {
    format!("sigma2_t{p}_minus_t{reference}")
}

pub fn factor_names(t: usize, s: usize) -> [String; 3] {
    [format!("r_{t}_{s}"), format!("a_{t}_{s}"), format!("b_{t}_{s}")]
}

/// `(1, x_t, x_s, x_t - x_s, (x_t - x_s)^2, [z_t, z_s, z_t z_s, z_t^2, z_s^2])`,
/// squares elementwise. The shifter block is included only when both `z`
/// are given.
pub fn default_instruments(x_t: &[f64], x_s: &[f64], z_t: Option<f64>, z_s: Option<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(1 + 4 * x_t.len() + 5);
    v.push(1.0);
    v.extend_from_slice(x_t);
    v.extend_from_slice(x_s);
    v.extend(x_t.iter().zip(x_s).map(|(a, b)| a - b));
    v.extend(x_t.iter().zip(x_s).map(|(a, b)| (a - b) * (a - b)));
    if let (Some(zt), Some(zs)) = (z_t, z_s) {
        v.extend_from_slice(&[zt, zs, zt * zs, zt * zt, zs * zs]);
    }
    v
}

fn default_instrument_names(k: usize, with_z: bool) -> Vec<String> {
    let mut n = vec!["const".to_string()];
    n.extend((0..k).map(|j| format!("x{j}_t")));
    n.extend((0..k).map(|j| format!("x{j}_s")));
    n.extend((0..k).map(|j| format!("dx{j}")));
    n.extend((0..k).map(|j| format!("dx{j}_sq")));
    if with_z {
        n.extend(["z_t", "z_s", "z_t*z_s", "z_t_sq", "z_s_sq"].map(String::from));
    }
    n
}

fn linear_instruments(x_t: &[f64], x_s: &[f64], z_t: Option<f64>, z_s: Option<f64>) -> Vec<f64> {
    let mut v = vec![1.0];
    v.extend_from_slice(x_t);
    v.extend_from_slice(x_s);
    if let (Some(zt), Some(zs)) = (z_t, z_s) {
        v.extend_from_slice(&[zt, zs]);
    }
    v
}

fn linear_instrument_names(k: usize, with_z: bool) -> Vec<String> {
    let mut n = vec!["const".to_string()];
    n.extend((0..k).map(|j| format!("x{j}_t")));
    n.extend((0..k).map(|j| format!("x{j}_s")));
    if with_z {
        n.extend(["z_t", "z_s"].map(String::from));
    }
    n
}

fn quadratic_instruments(x_t: &[f64], x_s: &[f64], z_t: Option<f64>, z_s: Option<f64>) -> Vec<f64> {
    let mut v = vec![1.0];
    v.extend_from_slice(x_t);
    v.extend_from_slice(x_s);
    let both: Vec<f64> = x_t.iter().chain(x_s).copied().collect();
    for a in 0..both.len() {
        for b in a..both.len() {
            v.push(both[a] * both[b]);
        }
    }
    if let (Some(zt), Some(zs)) = (z_t, z_s) {
        v.extend_from_slice(&[zt, zs, zt * zs, zt * zt, zs * zs]);
        for z in [zt, zs] {
            v.extend(both.iter().map(|x| x * z));
        }
    }
    v
}

fn quadratic_instrument_names(k: usize, with_z: bool) -> Vec<String> {
    let mut n = vec!["const".to_string()];
    let both: Vec<String> = (0..k)
        .map(|j| format!("x{j}_t"))
        .chain((0..k).map(|j| format!("x{j}_s")))
        .collect();
    n.extend(both.iter().cloned());
    for a in 0..both.len() {
        for b in a..both.len() {
            n.push(format!("{}*{}", both[a], both[b]));
        }
    }
    if with_z {
        n.extend(["z_t", "z_s", "z_t*z_s", "z_t_sq", "z_s_sq"].map(String::from));
        for z in ["z_t", "z_s"] {
            n.extend(both.iter().map(|x| format!("{x}*{z}")));
        }
    }
    n
}

fn pair_instruments(
    set: InstrumentSet,
    x_t: &[f64],
    x_s: &[f64],
    z: Option<(f64, f64)>,
) -> Vec<f64> {
    let (zt, zs) = (z.map(|z| z.0), z.map(|z| z.1));
    match set {
        InstrumentSet::Default => default_instruments(x_t, x_s, zt, zs),
        InstrumentSet::Linear => linear_instruments(x_t, x_s, zt, zs),
        InstrumentSet::Quadratic => quadratic_instruments(x_t, x_s, zt, zs),
    }
}

fn pair_instrument_names(set: InstrumentSet, k: usize, with_z: bool) -> Vec<String> {
    match set {
        InstrumentSet::Default => default_instrument_names(k, with_z),
        InstrumentSet::Linear => linear_instrument_names(k, with_z),
        InstrumentSet::Quadratic => quadratic_instrument_names(k, with_z),
    }
}

/// Cross-section instruments: `(1, x, x^2)` by default, `(1, x)` for the
/// linear set.
pub fn cross_section_instruments(set: InstrumentSet, x: &[f64]) -> Vec<f64> {
    let mut v = vec![1.0];
    v.extend_from_slice(x);
    if set != InstrumentSet::Linear {
        v.extend(x.iter().map(|a| a * a));
    }
    v
}

/// Triple instruments. The cyclic equation changes sign under any swap of
/// two periods, so with exchangeable regressors only alternating functions
/// of `x` carry information about `beta`; every set therefore contains the
/// Vandermonde product `v = (x_t - x_s)(x_s - x_tau)(x_tau - x_t)` per
/// regressor.
///
/// Default and linear: `(1, x_t, x_s, x_tau, v)`. Quadratic adds the squared
/// pairwise differences and `v * (x_t + x_s + x_tau)`.
pub fn triple_instruments(set: InstrumentSet, x: [&[f64]; 3]) -> Vec<f64> {
    let k = x[0].len();
    let mut v = vec![1.0];
    for xi in x {
        v.extend_from_slice(xi);
    }
    let vandermonde: Vec<f64> = (0..k)
        .map(|j| (x[0][j] - x[1][j]) * (x[1][j] - x[2][j]) * (x[2][j] - x[0][j]))
        .collect();
    v.extend_from_slice(&vandermonde);
    if set == InstrumentSet::Quadratic {
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            v.extend(x[a].iter().zip(x[b]).map(|(p, q)| (p - q) * (p - q)));
        }
        v.extend((0..k).map(|j| vandermonde[j] * (x[0][j] + x[1][j] + x[2][j])));
    }
    v
}

fn triple_instrument_names(set: InstrumentSet, k: usize) -> Vec<String> {
    let mut n = vec!["const".to_string()];
    for tag in ["t", "s", "tau"] {
        n.extend((0..k).map(|j| format!("x{j}_{tag}")));
    }
    n.extend((0..k).map(|j| format!("vdm{j}")));
    if set == InstrumentSet::Quadratic {
        for tag in ["ts", "stau", "taut"] {
            n.extend((0..k).map(|j| format!("dx{j}_{tag}_sq")));
        }
        n.extend((0..k).map(|j| format!("vdm{j}*sum_x{j}")));
    }
    n
}

/// Cyclic sum over `(t,s), (s,tau), (tau,t)` of the pairwise equation
/// pieces. Returns the dependent value and the `beta` regressor block.
pub fn triple_cycle(y: [f64; 3], x: [&[f64]; 3]) -> (f64, Vec<f64>) {
    let [yt, ys, ytau] = y;
    let dep = (yt * yt * ys - ys * ys * yt)
        + (ys * ys * ytau - ytau * ytau * ys)
        + (ytau * ytau * yt - yt * yt * ytau);
    let block = (0..x[0].len())
        .map(|j| {
            yt * ys * (x[0][j] - x[1][j])
                + ys * ytau * (x[1][j] - x[2][j])
                + ytau * yt * (x[2][j] - x[0][j])
        })
        .collect();
    (dep, block)
}

/// Coefficients of `(sigma_s^2, sigma_t^2, sigma_tau^2)` in the cyclic sum:
/// `(y_tau - y_t, y_s - y_tau, y_t - y_s)`. Their sum is the coefficient of
/// an individual-specific variance, which is zero.
pub fn cyclic_variance_coefficients(y: [f64; 3]) -> [f64; 3] {
    let [yt, ys, ytau] = y;
    [ytau - yt, ys - ytau, yt - ys]
}

fn check_period(dataset: &PanelDataset, p: usize) -> Result<()> {
    if p >= dataset.n_periods {
        return Err(Error::Domain(format!(
            "period {p} out of range (T = {})",
            dataset.n_periods
        )));
    }
    Ok(())
}

fn check_pair(dataset: &PanelDataset, t: usize, s: usize) -> Result<()> {
    check_period(dataset, t)?;
    check_period(dataset, s)?;
    if t == s {
        return Err(Error::Domain("pair periods must differ".into()));
    }
    Ok(())
}

fn check_triple(dataset: &PanelDataset, t: usize, s: usize, tau: usize) -> Result<()> {
    check_pair(dataset, t, s)?;
    check_pair(dataset, s, tau)?;
    if t == tau {
        return Err(Error::Domain("triple periods must be distinct".into()));
    }
    Ok(())
}

type RowFn<'a> = dyn Fn(&PanelDataset, usize) -> Result<Option<(f64, Vec<f64>, Vec<f64>)>> + Sync + 'a;

fn collect_rows(
    dataset: &PanelDataset,
    periods: Vec<usize>,
    param_names: Vec<String>,
    instrument_names: Vec<String>,
    what: &str,
    row: &RowFn<'_>,
) -> Result<MomentSystem> {
    let rows: Vec<Option<PairRow>> = (0..dataset.n_individuals)
        .into_par_iter()
        .map(|i| {
            Ok(row(dataset, i)?.map(|(dependent, regressors, instruments)| PairRow {
                dependent,
                regressors,
                instruments,
                individual: i,
                periods: periods.clone(),
            }))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<PairRow> = rows.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::EmptySystem(format!(
            "{what}: no individuals with positive outcomes in periods {periods:?}"
        )));
    }
    let mut system = MomentSystem {
        param_names,
        instrument_names,
        rows,
    };
    system.drop_duplicate_instruments();
    Ok(system)
}

/// Cell-wise cross-section equation of order `k`:
/// `y^{k+1} = y^k x' beta + k y^{k-1} sigma2 + error` over cells with `y > 0`.
/// Panels are treated as pooled cells, one row per positive cell.
pub fn build_cross_section(dataset: &PanelDataset, k: u32, set: InstrumentSet) -> Result<MomentSystem> {
    if k == 0 {
        return Err(Error::Domain("cross-section order k must be >= 1".into()));
    }
    let kk = dataset.n_regressors;
    let mut params = beta_names(kk);
    params.push("sigma2".into());
    let mut inames = vec!["const".to_string()];
    inames.extend((0..kk).map(|j| format!("x{j}")));
    if set != InstrumentSet::Linear {
        inames.extend((0..kk).map(|j| format!("x{j}_sq")));
    }

    let per_individual: Vec<Vec<PairRow>> = (0..dataset.n_individuals)
        .into_par_iter()
        .map(|i| {
            (0..dataset.n_periods)
                .filter(|&t| dataset.positive(i, t))
                .map(|t| {
                    let y = dataset.y(i, t);
                    let x = dataset.x(i, t);
                    let yk = y.powi(k as i32);
                    let mut regressors: Vec<f64> = x.iter().map(|v| yk * v).collect();
                    regressors.push(k as f64 * y.powi(k as i32 - 1));
                    PairRow {
                        dependent: yk * y,
                        regressors,
                        instruments: cross_section_instruments(set, x),
                        individual: i,
                        periods: vec![t],
                    }
                })
                .collect()
        })
        .collect();
    let rows: Vec<PairRow> = per_individual.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::EmptySystem("cross-section: no positive cells".into()));
    }
    let mut system = MomentSystem {
        param_names: params,
        instrument_names: inames,
        rows,
    };
    system.drop_duplicate_instruments();
    Ok(system)
}

/// Pairwise equation under errors independent over time:
/// `y_t^2 y_s - y_s^2 y_t = y_t y_s (x_t - x_s)' beta + y_s sigma_t^2 - y_t sigma_s^2 + error`.
pub fn build_pairwise_independent(
    dataset: &PanelDataset,
    t: usize,
    s: usize,
    set: InstrumentSet,
) -> Result<MomentSystem> {
    check_pair(dataset, t, s)?;
    let k = dataset.n_regressors;
    let mut params = beta_names(k);
    params.push(sigma2_name(t));
    params.push(sigma2_name(s));
    collect_rows(
        dataset,
        vec![t, s],
        params,
        pair_instrument_names(set, k, false),
        "pairwise_independent",
        &|d, i| {
            if !(d.positive(i, t) && d.positive(i, s)) {
                return Ok(None);
            }
            let (yt, ys) = (d.y(i, t), d.y(i, s));
            let (xt, xs) = (d.x(i, t), d.x(i, s));
            let mut reg: Vec<f64> = xt.iter().zip(xs).map(|(a, b)| yt * ys * (a - b)).collect();
            reg.push(ys);
            reg.push(-yt);
            Ok(Some((yt * yt * ys - ys * ys * yt, reg, pair_instruments(set, xt, xs, None))))
        },
    )
}

/// Pairwise equation of orders `(k, m)` with unrestricted error covariance:
/// parameters `beta`, `d_t = sigma_t^2 - sigma_ts`, `d_s = sigma_s^2 - sigma_ts`.
pub fn build_pairwise_nonstationary(
    dataset: &PanelDataset,
    t: usize,
    s: usize,
    k: u32,
    m: u32,
    set: InstrumentSet,
) -> Result<MomentSystem> {
    check_pair(dataset, t, s)?;
    if k == 0 || m == 0 {
        return Err(Error::Domain("orders k and m must be >= 1".into()));
    }
    let kk = dataset.n_regressors;
    let (dt, ds) = nonstationary_names(t, s);
    let mut params = beta_names(kk);
    params.push(dt);
    params.push(ds);
    let (ki, mi) = (k as i32, m as i32);
    collect_rows(
        dataset,
        vec![t, s],
        params,
        pair_instrument_names(set, kk, false),
        "pairwise_nonstationary",
        &|d, i| {
            if !(d.positive(i, t) && d.positive(i, s)) {
                return Ok(None);
            }
            let (yt, ys) = (d.y(i, t), d.y(i, s));
            let (xt, xs) = (d.x(i, t), d.x(i, s));
            let (ytk, ysm) = (yt.powi(ki), ys.powi(mi));
            let w = ytk * ysm;
            let mut reg: Vec<f64> = xt.iter().zip(xs).map(|(a, b)| w * (a - b)).collect();
            reg.push(k as f64 * yt.powi(ki - 1) * ysm);
            reg.push(-(m as f64) * ys.powi(mi - 1) * ytk);
            let dep = ytk * yt * ysm - ysm * ys * ytk;
            Ok(Some((dep, reg, pair_instruments(set, xt, xs, None))))
        },
    )
}

/// Triple-differenced equation with individual-specific error variances;
/// only `beta` remains.
pub fn build_triple_variance_fe(
    dataset: &PanelDataset,
    t: usize,
    s: usize,
    tau: usize,
    set: InstrumentSet,
) -> Result<MomentSystem> {
    check_triple(dataset, t, s, tau)?;
    let k = dataset.n_regressors;
    collect_rows(
        dataset,
        vec![t, s, tau],
        beta_names(k),
        triple_instrument_names(set, k),
        "triple_variance_fe",
        &|d, i| {
            if !(d.positive(i, t) && d.positive(i, s) && d.positive(i, tau)) {
                return Ok(None);
            }
            let x = [d.x(i, t), d.x(i, s), d.x(i, tau)];
            let (dep, block) = triple_cycle([d.y(i, t), d.y(i, s), d.y(i, tau)], x);
            Ok(Some((dep, block, triple_instruments(set, x))))
        },
    )
}

/// Triple-differenced equation with variance `sigma_i^2 + sigma_t^2`.
///
/// The three time-component coefficients sum to zero on every row, so only
/// contrasts are identified; they are parameterized against the last
/// period, `sigma2_t{p}_minus_t{T-1}`.
pub fn build_triple_additive_variance(
    dataset: &PanelDataset,
    t: usize,
    s: usize,
    tau: usize,
    set: InstrumentSet,
) -> Result<MomentSystem> {
    check_triple(dataset, t, s, tau)?;
    let k = dataset.n_regressors;
    let reference = dataset.n_periods - 1;
    let mut params = beta_names(k);
    let contrasts: Vec<usize> = {
        let mut p: Vec<usize> = [t, s, tau].into_iter().filter(|&p| p != reference).collect();
        p.sort_unstable();
        p
    };
    params.extend(contrasts.iter().map(|&p| variance_contrast_name(p, reference)));
    collect_rows(
        dataset,
        vec![t, s, tau],
        params,
        triple_instrument_names(set, k),
        "triple_additive_variance",
        &|d, i| {
            if !(d.positive(i, t) && d.positive(i, s) && d.positive(i, tau)) {
                return Ok(None);
            }
            let y = [d.y(i, t), d.y(i, s), d.y(i, tau)];
            let x = [d.x(i, t), d.x(i, s), d.x(i, tau)];
            let (dep, mut reg) = triple_cycle(y, x);
            let [cs, ct, ctau] = cyclic_variance_coefficients(y);
            let coef_of = |p: usize| {
                [(s, cs), (t, ct), (tau, ctau)]
                    .iter()
                    .filter(|(q, _)| *q == p)
                    .map(|(_, c)| *c)
                    .sum::<f64>()
            };
            reg.extend(contrasts.iter().map(|&p| coef_of(p)));
            Ok(Some((dep, reg, triple_instruments(set, x))))
        },
    )
}

/// Common positive factor removed from the slope-effect rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeScaling {
    /// Rows multiplied through by `z_t^3 z_s^3`.
    #[default]
    Full,
    /// Rows divided by `(z_t z_s)^2`, leaving the regressors
    /// `y_t y_s (x_t/z_t - x_s/z_s)`, `y_s/z_t`, `-y_t/z_s` and
    /// `y_t/z_t - y_s/z_s`. High powers of a dispersed `z` give the full rows
    /// very heavy tails; these are much lighter.
    Reduced,
}

/// Pairwise equation with a fixed effect scaled by a positive shifter `z`:
/// parameters `beta`, `sigma_t^2`, `sigma_s^2`, `sigma_ts`.
pub fn build_pairwise_slope_fe(
    dataset: &PanelDataset,
    t: usize,
    s: usize,
    set: InstrumentSet,
) -> Result<MomentSystem> {
    build_pairwise_slope_fe_scaled(dataset, t, s, set, SlopeScaling::Full)
}

/// [`build_pairwise_slope_fe`] with a choice of row scaling. Both scalings
/// give the same equation up to a positive factor depending on `z` only.
pub fn build_pairwise_slope_fe_scaled(
    dataset: &PanelDataset,
    t: usize,
    s: usize,
    set: InstrumentSet,
    scaling: SlopeScaling,
) -> Result<MomentSystem> {
    check_pair(dataset, t, s)?;
    if dataset.z.is_none() {
        return Err(Error::Domain("slope effects need the shifter z".into()));
    }
    let k = dataset.n_regressors;
    let mut params = beta_names(k);
    params.push(sigma2_name(t));
    params.push(sigma2_name(s));
    params.push(cov_name(t, s));
    collect_rows(
        dataset,
        vec![t, s],
        params,
        pair_instrument_names(set, k, true),
        "pairwise_slope_fe",
        &|d, i| {
            if !(d.positive(i, t) && d.positive(i, s)) {
                return Ok(None);
            }
            let (zt, zs) = (d.z(i, t).expect("checked"), d.z(i, s).expect("checked"));
            if !(zt > 0.0 && zs > 0.0) {
                return Err(Error::Domain(format!(
                    "individual {i}: shifter z must be positive, got ({zt}, {zs})"
                )));
            }
            let (yt, ys) = (d.y(i, t), d.y(i, s));
            let (xt, xs) = (d.x(i, t), d.x(i, s));
            let m = match scaling {
                SlopeScaling::Full => zt * zs,
                SlopeScaling::Reduced => 1.0 / (zt * zs),
            };
            let mut reg: Vec<f64> = xt
                .iter()
                .zip(xs)
                .map(|(a, b)| m * yt * ys * (a * zs - b * zt))
                .collect();
            reg.push(m * ys * zs);
            reg.push(-m * yt * zt);
            reg.push(m * (yt * zs - ys * zt));
            let dep = m * (yt * yt * ys * zs - ys * ys * yt * zt);
            Ok(Some((dep, reg, pair_instruments(set, xt, xs, Some((zt, zs))))))
        },
    )
}

/// One qualifying individual of the factor-loading system.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearRow {
    pub y_t: f64,
    pub y_s: f64,
    pub x_t: Vec<f64>,
    pub x_s: Vec<f64>,
    pub instruments: Vec<f64>,
    pub individual: usize,
    pub periods: [usize; 2],
}

/// Factor-loading equation for the pair `(t, s)` with parameters
/// `(beta, r, a, b)`, `r = rho_t / rho_s`, `a = r sigma_s^2 - sigma_ts`,
/// `b = sigma_t^2 - r sigma_ts`. Residual:
/// `y_t^2 y_s - r y_s^2 y_t - y_t y_s (x_t - r x_s)' beta + y_t a - y_s b`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearMomentSystem {
    pub param_names: Vec<String>,
    pub instrument_names: Vec<String>,
    pub rows: Vec<NonlinearRow>,
    pub n_regressors: usize,
}

impl NonlinearMomentSystem {
    pub fn n_params(&self) -> usize {
        self.n_regressors + 3
    }

    pub fn n_instruments(&self) -> usize {
        self.instrument_names.len()
    }

    pub fn r_index(&self) -> usize {
        self.n_regressors
    }

    pub fn residual(&self, row: &NonlinearRow, theta: &[f64]) -> f64 {
        let k = self.n_regressors;
        let (beta, r, a, b) = (&theta[..k], theta[k], theta[k + 1], theta[k + 2]);
        let (yt, ys) = (row.y_t, row.y_s);
        let index: f64 = beta
            .iter()
            .enumerate()
            .map(|(j, bj)| (row.x_t[j] - r * row.x_s[j]) * bj)
            .sum();
        yt * yt * ys - r * ys * ys * yt - yt * ys * index + yt * a - ys * b
    }

    /// Sample mean of `instruments * residual`.
    pub fn moment_vector(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_instruments()];
        for row in &self.rows {
            let e = self.residual(row, theta);
            for (gj, zj) in g.iter_mut().zip(&row.instruments) {
                *gj += zj * e;
            }
        }
        let n = self.rows.len() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    /// The equation at fixed `r`, linear in `(beta, a, b)`.
    pub fn linear_system_at(&self, r: f64) -> MomentSystem {
        let k = self.n_regressors;
        let mut params = self.param_names[..k].to_vec();
        params.extend(self.param_names[k + 1..].iter().cloned());
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let (yt, ys) = (row.y_t, row.y_s);
                let mut reg: Vec<f64> = (0..k)
                    .map(|j| yt * ys * (row.x_t[j] - r * row.x_s[j]))
                    .collect();
                reg.push(-yt);
                reg.push(ys);
                PairRow {
                    dependent: yt * yt * ys - r * ys * ys * yt,
                    regressors: reg,
                    instruments: row.instruments.clone(),
                    individual: row.individual,
                    periods: row.periods.to_vec(),
                }
            })
            .collect();
        MomentSystem {
            param_names: params,
            instrument_names: self.instrument_names.clone(),
            rows,
        }
    }
}

pub fn build_factor_loading(
    dataset: &PanelDataset,
    t: usize,
    s: usize,
    set: InstrumentSet,
) -> Result<NonlinearMomentSystem> {
    check_pair(dataset, t, s)?;
    let k = dataset.n_regressors;
    let mut params = beta_names(k);
    params.extend(factor_names(t, s));
    let rows: Vec<NonlinearRow> = (0..dataset.n_individuals)
        .into_par_iter()
        .filter(|&i| dataset.positive(i, t) && dataset.positive(i, s))
        .map(|i| {
            let (xt, xs) = (dataset.x(i, t), dataset.x(i, s));
            NonlinearRow {
                y_t: dataset.y(i, t),
                y_s: dataset.y(i, s),
                x_t: xt.to_vec(),
                x_s: xs.to_vec(),
                instruments: pair_instruments(set, xt, xs, None),
                individual: i,
                periods: [t, s],
            }
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptySystem(format!(
            "factor_loading: no individuals with positive outcomes in periods ({t}, {s})"
        )));
    }
    let mut system = NonlinearMomentSystem {
        param_names: params,
        instrument_names: pair_instrument_names(set, k, false),
        rows,
        n_regressors: k,
    };
    drop_duplicate_nonlinear_instruments(&mut system);
    Ok(system)
}

fn drop_duplicate_nonlinear_instruments(system: &mut NonlinearMomentSystem) {
    let l = system.n_instruments();
    let keep: Vec<bool> = (0..l)
        .map(|b| {
            !(0..b).any(|a| {
                system
                    .rows
                    .iter()
                    .all(|r| r.instruments[a].to_bits() == r.instruments[b].to_bits())
            })
        })
        .collect();
    if keep.iter().all(|k| *k) {
        return;
    }
    for r in &mut system.rows {
        r.instruments = r
            .instruments
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(v, _)| *v)
            .collect();
    }
    system.instrument_names = system
        .instrument_names
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(n, _)| n.clone())
        .collect();
}

/// All ordered pairs `(t, s)` with `t < s`.
pub fn all_pairs(n_periods: usize) -> Vec<[usize; 2]> {
    (0..n_periods)
        .flat_map(|t| (t + 1..n_periods).map(move |s| [t, s]))
        .collect()
}

/// All triples `t < s < tau`.
pub fn all_triples(n_periods: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for t in 0..n_periods {
        for s in t + 1..n_periods {
            for tau in s + 1..n_periods {
                out.push([t, s, tau]);
            }
        }
    }
    out
}
