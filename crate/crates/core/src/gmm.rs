//! Linear IV (2SLS, two-step GMM) and the concentrated nonlinear GMM
//! solver for the factor-loading system.
//!
//! Both work in an orthonormal basis `Q` of the column-scaled instrument
//! space, obtained from a QR factorization followed by an SVD of `R`. With
//! `A = Q'X` and `b = Q'y`, 2SLS is the least-squares solution of
//! `A theta = b`, computed by SVD rather than normal equations. Moment
//! covariances are clustered by individual.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::moment_builder::{MomentSystem, NonlinearMomentSystem};

/// Relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Weighting {
    #[default]
    #[serde(rename = "2sls", alias = "two_stage_least_squares")]
    TwoStageLeastSquares,
    #[serde(rename = "two_step")]
    TwoStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearIvResult {
    pub param_names: Vec<String>,
    pub estimates: Vec<f64>,
    /// Row-major `p x p` cluster-robust covariance.
    pub covariance: Vec<f64>,
    /// Hansen J at the two-step efficient estimate; absent when exactly
    /// identified.
    pub j_statistic: Option<f64>,
    pub j_dof: usize,
    pub n_rows: usize,
    pub n_clusters: usize,
    /// Numerical rank of the instrument matrix.
    pub n_instruments: usize,
    /// Ratio of extreme singular values of the scaled `Q'X`.
    pub condition_number: f64,
    pub weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearGmmResult {
    pub param_names: Vec<String>,
    pub estimates: Vec<f64>,
    pub covariance: Vec<f64>,
    pub j_statistic: Option<f64>,
    pub j_dof: usize,
    pub converged: bool,
    /// Objective evaluations across both steps.
    pub iterations: usize,
    /// `g_bar' W g_bar` at the estimate, with `W` the inverse clustered
    /// moment covariance.
    pub objective_value: f64,
    pub gradient_norm: f64,
    pub n_rows: usize,
    pub n_clusters: usize,
    pub n_instruments: usize,
    pub condition_number: f64,
}

fn std_errors_of(cov: &[f64], p: usize) -> Vec<f64> {
    (0..p).map(|j| cov[j * p + j].max(0.0).sqrt()).collect()
}

impl LinearIvResult {
    pub fn std_errors(&self) -> Vec<f64> {
        std_errors_of(&self.covariance, self.estimates.len())
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        let j = self.param_names.iter().position(|p| p == name)?;
        Some(self.estimates[j])
    }
}

impl NonlinearGmmResult {
    pub fn std_errors(&self) -> Vec<f64> {
        std_errors_of(&self.covariance, self.estimates.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Anything carrying a J statistic.
pub trait Overidentified {
    fn j_parts(&self) -> (Option<f64>, usize);
}

impl Overidentified for LinearIvResult {
    fn j_parts(&self) -> (Option<f64>, usize) {
        (self.j_statistic, self.j_dof)
    }
}

impl Overidentified for NonlinearGmmResult {
    fn j_parts(&self) -> (Option<f64>, usize) {
        (self.j_statistic, self.j_dof)
    }
}

pub fn j_test(result: &impl Overidentified) -> Result<JTest> {
    match result.j_parts() {
        (Some(statistic), dof) if dof > 0 => Ok(JTest {
            statistic,
            dof,
            p_value: chi2_sf(statistic, dof),
        }),
        (_, dof) => Err(Error::NotApplicable(format!(
            "system has {dof} overidentifying restrictions"
        ))),
    }
}

pub fn chi2_sf(x: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .sf(x.max(0.0))
}

fn column_scales(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows().max(1) as f64;
    m.column_iter()
        .map(|c| {
            let rms = (c.norm_squared() / n).sqrt();
            if rms > 0.0 && rms.is_finite() {
                rms
            } else {
                1.0
            }
        })
        .collect()
}

fn scale_columns(m: &mut DMatrix<f64>, scales: &[f64]) {
    for (mut c, s) in m.column_iter_mut().zip(scales) {
        c /= *s;
    }
}

/// Orthonormal basis (n x rank) of the column space of `z` after scaling.
fn instrument_basis(mut z: DMatrix<f64>) -> DMatrix<f64> {
    let scales = column_scales(&z);
    scale_columns(&mut z, &scales);
    let qr = z.qr();
    let q = qr.q();
    let r = qr.r();
    let svd = r.svd(true, false);
    let u = svd.u.expect("requested U");
    let s_max = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| s_max > 0.0 && svd.singular_values[i] > RANK_TOL * s_max)
        .collect();
    let u_keep = u.select_columns(&keep);
    q * u_keep
}

/// Dense cluster ids `0..G` in row order.
fn cluster_ids(individuals: impl Iterator<Item = usize>) -> (Vec<usize>, usize) {
    let mut map: HashMap<usize, usize> = HashMap::new();
    let ids = individuals
        .map(|i| {
            let next = map.len();
            *map.entry(i).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

/// Sum over clusters of `g_c g_c'` with `g_c = sum_{rows in c} Q_row e_row`.
fn clustered_meat(q: &DMatrix<f64>, e: &DVector<f64>, ids: &[usize], g: usize) -> DMatrix<f64> {
    let r = q.ncols();
    let mut scores = DMatrix::<f64>::zeros(g, r);
    for (row, &c) in ids.iter().enumerate() {
        let er = e[row];
        for j in 0..r {
            scores[(c, j)] += q[(row, j)] * er;
        }
    }
    scores.transpose() * scores
}

/// Symmetric inverse square root with small eigenvalues dropped.
fn inverse_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let max = eig.eigenvalues.max().max(0.0);
    let inv_sqrt = eig
        .eigenvalues
        .map(|l| if l > 1e-12 * max && l > 0.0 { 1.0 / l.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose()
}

struct LsSolution {
    theta: DVector<f64>,
    /// `pinv(A)` of the column-scaled matrix, already unscaled: maps
    /// right-hand sides to parameters.
    pinv: DMatrix<f64>,
    condition: f64,
}

/// Least squares `min ||b - A theta||` by SVD of the column-scaled `A`,
/// failing on numerical rank deficiency.
fn solve_ls(a: &DMatrix<f64>, b: &DVector<f64>, names: &[String]) -> Result<LsSolution> {
    let p = a.ncols();
    if a.nrows() < p {
        return Err(Error::Identification(format!(
            "{} independent instruments for {p} parameters",
            a.nrows()
        )));
    }
    let scales = column_scales(a);
    let mut a_s = a.clone();
    scale_columns(&mut a_s, &scales);
    let svd = a_s.svd(true, true);
    let s = &svd.singular_values;
    let s_max = s.max();
    let s_min = s.min();
    if !(s_max > 0.0) || s_min <= RANK_TOL * s_max {
        let v_t = svd.v_t.as_ref().expect("requested V");
        let weakest = s.imin();
        let dir = v_t.row(weakest);
        let parts: Vec<String> = names
            .iter()
            .zip(dir.iter())
            .filter(|(_, v)| v.abs() > 0.05)
            .map(|(n, v)| format!("{n}:{v:.3}"))
            .collect();
        return Err(Error::Identification(format!(
            "instrument-regressor cross moments are rank deficient (condition {:.3e}); \
             deficient direction [{}]",
            if s_min > 0.0 { s_max / s_min } else { f64::INFINITY },
            parts.join(", ")
        )));
    }
    let pinv_s = svd.pseudo_inverse(0.0).expect("pseudo inverse");
    let mut pinv = pinv_s;
    for (mut row, sc) in pinv.row_iter_mut().zip(&scales) {
        row /= *sc;
    }
    let theta = &pinv * b;
    Ok(LsSolution {
        theta,
        pinv,
        condition: s_max / s_min,
    })
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    v
}

fn small_sample_factor(g: usize) -> f64 {
    if g > 1 {
        g as f64 / (g as f64 - 1.0)
    } else {
        f64::NAN
    }
}

pub fn two_stage_least_squares(system: &MomentSystem) -> Result<LinearIvResult> {
    linear_iv(system, Weighting::TwoStageLeastSquares)
}

pub fn two_step_gmm(system: &MomentSystem) -> Result<LinearIvResult> {
    linear_iv(system, Weighting::TwoStep)
}

/// Linear IV estimate with cluster-robust covariance. The J statistic is
/// always evaluated at the two-step efficient estimate, whichever estimate
/// is reported.
pub fn linear_iv(system: &MomentSystem, weighting: Weighting) -> Result<LinearIvResult> {
    let n = system.n_rows();
    let p = system.n_params();
    let l = system.n_instruments();
    if n == 0 {
        return Err(Error::EmptySystem("no rows".into()));
    }
    if n < p {
        return Err(Error::InsufficientObservations { rows: n, params: p });
    }
    system.validate()?;

    let z = DMatrix::from_fn(n, l, |i, j| system.rows[i].instruments[j]);
    let x = DMatrix::from_fn(n, p, |i, j| system.rows[i].regressors[j]);
    let y = DVector::from_fn(n, |i, _| system.rows[i].dependent);
    let q = instrument_basis(z);
    let rank = q.ncols();
    let a = q.transpose() * &x;
    let b = q.transpose() * &y;

    let first = solve_ls(&a, &b, &system.param_names)?;
    let (ids, g) = cluster_ids(system.rows.iter().map(|r| r.individual));
    let factor = small_sample_factor(g);
    let e1 = &y - &x * &first.theta;
    let meat = clustered_meat(&q, &e1, &ids, g);

    let dof = rank - p;
    let w_half = inverse_sqrt(&meat);
    let whitened = if dof > 0 || weighting == Weighting::TwoStep {
        Some(solve_ls(&(&w_half * &a), &(&w_half * &b), &system.param_names)?)
    } else {
        None
    };
    let j_statistic = match (&whitened, dof) {
        (Some(w), d) if d > 0 => Some((&w_half * (&b - &a * &w.theta)).norm_squared()),
        _ => None,
    };

    let (theta, cov) = match weighting {
        Weighting::TwoStageLeastSquares => {
            let cov = &first.pinv * &meat * first.pinv.transpose() * factor;
            (first.theta.clone(), cov)
        }
        Weighting::TwoStep => {
            let w = whitened.expect("computed for two-step");
            let cov = &w.pinv * w.pinv.transpose() * factor;
            (w.theta, cov)
        }
    };

    Ok(LinearIvResult {
        param_names: system.param_names.clone(),
        estimates: theta.iter().copied().collect(),
        covariance: to_row_major(&cov),
        j_statistic,
        j_dof: dof,
        n_rows: n,
        n_clusters: g,
        n_instruments: rank,
        condition_number: first.condition,
        weighting,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearOptions {
    /// Search interval for the loading ratio `r`, scanned on a log grid.
    pub r_lo: f64,
    pub r_hi: f64,
    pub grid_points: usize,
    /// Golden-section stopping width in `log r`.
    pub log_r_tol: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the scaled gradient relative to
    /// `max(1, objective)`.
    pub gradient_tol: f64,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        Self {
            r_lo: 0.05,
            r_hi: 20.0,
            grid_points: 41,
            log_r_tol: 1e-9,
            max_iterations: 200,
            gradient_tol: 1e-4,
        }
    }
}

impl NonlinearOptions {
    fn validate(&self) -> Result<()> {
        if !(self.r_lo > 0.0 && self.r_lo < self.r_hi && self.r_hi.is_finite()) {
            return Err(Error::config("r_lo/r_hi", "need 0 < r_lo < r_hi < inf"));
        }
        if self.grid_points < 3 {
            return Err(Error::config("grid_points", "need at least 3"));
        }
        if !(self.log_r_tol > 0.0) {
            return Err(Error::config("log_r_tol", "must be positive"));
        }
        Ok(())
    }
}

/// Factor-loading system projected on the instrument basis. Given `r` the
/// moment vector `Q'e` is affine in `(beta, a, b)`:
/// `qd0 - r qd1 - (qwt - r qws) beta + qyt a - qys b`.
struct Projected {
    q: DMatrix<f64>,
    qd0: DVector<f64>,
    qd1: DVector<f64>,
    qwt: DMatrix<f64>,
    qws: DMatrix<f64>,
    qyt: DVector<f64>,
    qys: DVector<f64>,
    k: usize,
    linear_names: Vec<String>,
}

impl Projected {
    fn new(system: &NonlinearMomentSystem) -> Self {
        let n = system.rows.len();
        let l = system.n_instruments();
        let k = system.n_regressors;
        let z = DMatrix::from_fn(n, l, |i, j| system.rows[i].instruments[j]);
        let q = instrument_basis(z);
        let qt = q.transpose();
        let col = |f: &dyn Fn(usize) -> f64| DVector::from_fn(n, |i, _| f(i));
        let rows = &system.rows;
        let qd0 = &qt * col(&|i| rows[i].y_t * rows[i].y_t * rows[i].y_s);
        let qd1 = &qt * col(&|i| rows[i].y_s * rows[i].y_s * rows[i].y_t);
        let wt = DMatrix::from_fn(n, k, |i, j| rows[i].y_t * rows[i].y_s * rows[i].x_t[j]);
        let ws = DMatrix::from_fn(n, k, |i, j| rows[i].y_t * rows[i].y_s * rows[i].x_s[j]);
        let qyt = &qt * col(&|i| rows[i].y_t);
        let qys = &qt * col(&|i| rows[i].y_s);
        let mut linear_names = system.param_names[..k].to_vec();
        linear_names.extend(system.param_names[k + 1..].iter().cloned());
        Self {
            qwt: &qt * wt,
            qws: &qt * ws,
            q,
            qd0,
            qd1,
            qyt,
            qys,
            k,
            linear_names,
        }
    }

    fn rank(&self) -> usize {
        self.q.ncols()
    }

    /// `(A(r), b(r))` with moments `b - A (beta, a, b)`.
    fn linear_at(&self, r: f64) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.k;
        let rank = self.rank();
        let mut a = DMatrix::zeros(rank, k + 2);
        a.columns_mut(0, k).copy_from(&(&self.qwt - &self.qws * r));
        a.set_column(k, &(-&self.qyt));
        a.set_column(k + 1, &self.qys);
        (a, &self.qd0 - &self.qd1 * r)
    }

    /// Full-parameter moment sum `Q'e(theta)`.
    fn moments(&self, theta: &[f64]) -> DVector<f64> {
        let k = self.k;
        let r = theta[k];
        let (a, b) = self.linear_at(r);
        let lin = DVector::from_iterator(k + 2, theta[..k].iter().chain(&theta[k + 1..]).copied());
        b - a * lin
    }

    /// Concentrated objective and inner solution at `r` under weight
    /// `w_half' w_half`.
    fn concentrated(&self, r: f64, w_half: Option<&DMatrix<f64>>) -> Result<(f64, DVector<f64>)> {
        let (a, b) = self.linear_at(r);
        let (a, b) = match w_half {
            Some(w) => (w * a, w * b),
            None => (a, b),
        };
        let sol = solve_ls(&a, &b, &self.linear_names)?;
        let value = (&b - &a * &sol.theta).norm_squared();
        Ok((value, sol.theta))
    }

    fn assemble(&self, r: f64, lin: &DVector<f64>) -> Vec<f64> {
        let k = self.k;
        let mut theta: Vec<f64> = lin.iter().take(k).copied().collect();
        theta.push(r);
        theta.extend(lin.iter().skip(k));
        theta
    }
}

struct SearchOutcome {
    r: f64,
    evaluations: usize,
    resolved: bool,
}

/// Log-grid scan, golden section on the bracketing cell, then one
/// parabolic step through the final triple.
fn minimize_r(
    opts: &NonlinearOptions,
    extra: Option<f64>,
    f: &mut dyn FnMut(f64) -> Result<f64>,
) -> Result<SearchOutcome> {
    let (lo, hi) = (opts.r_lo.ln(), opts.r_hi.ln());
    let m = opts.grid_points;
    let mut grid: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
    if let Some(r0) = extra {
        let u = r0.ln();
        if u > lo && u < hi {
            grid.push(u);
            grid.sort_by(|a, b| a.total_cmp(b));
            grid.dedup();
        }
    }
    let mut values = Vec::with_capacity(grid.len());
    for &u in &grid {
        values.push(f(u.exp())?);
    }
    let mut evaluations = grid.len();
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    if best == 0 || best == grid.len() - 1 {
        return Err(Error::Bracket {
            lo: opts.r_lo,
            hi: opts.r_hi,
        });
    }

    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (grid[best - 1], grid[best + 1]);
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let mut fc = f(c.exp())?;
    let mut fd = f(d.exp())?;
    evaluations += 2;
    let mut iters = 0;
    while b - a > opts.log_r_tol && iters < opts.max_iterations {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c.exp())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d.exp())?;
        }
        evaluations += 1;
        iters += 1;
    }
    let resolved = b - a <= opts.log_r_tol;
    let (mut u, mut value) = if fc < fd { (c, fc) } else { (d, fd) };

    let (x0, x2) = (c.min(d), c.max(d));
    if x0 < x2 {
        let (f0, f2) = if c < d { (fc, fd) } else { (fd, fc) };
        let x1m = 0.5 * (x0 + x2);
        let f1 = f(x1m.exp())?;
        evaluations += 1;
        let denom = (x1m - x0) * (f1 - f2) - (x1m - x2) * (f1 - f0);
        if f1 < value {
            u = x1m;
            value = f1;
        }
        if denom != 0.0 {
            let num = (x1m - x0).powi(2) * (f1 - f2) - (x1m - x2).powi(2) * (f1 - f0);
            let cand = x1m - 0.5 * num / denom;
            if cand > a && cand < b {
                let fcand = f(cand.exp())?;
                evaluations += 1;
                if fcand < value {
                    u = cand;
                }
            }
        }
    }
    Ok(SearchOutcome {
        r: u.exp(),
        evaluations,
        resolved,
    })
}

/// Inner linear block `(beta, a, b)` at fixed `r` with identity weight on
/// the orthonormal instrument basis; equals 2SLS on
/// [`NonlinearMomentSystem::linear_system_at`].
pub fn concentrated_estimates(system: &NonlinearMomentSystem, r: f64) -> Result<Vec<f64>> {
    let proj = Projected::new(system);
    let (_, lin) = proj.concentrated(r, None)?;
    Ok(lin.iter().copied().collect())
}

/// Two-step GMM for the factor-loading system. Step one uses identity
/// weight on the standardized instruments; step two the inverse clustered
/// moment covariance at the step-one estimate. In each step the objective is
/// concentrated on the loading ratio `r`.
pub fn nonlinear_gmm(
    system: &NonlinearMomentSystem,
    theta0: Option<&[f64]>,
    opts: &NonlinearOptions,
) -> Result<NonlinearGmmResult> {
    opts.validate()?;
    let n = system.rows.len();
    let p = system.n_params();
    if n == 0 {
        return Err(Error::EmptySystem("no rows".into()));
    }
    if n < p {
        return Err(Error::InsufficientObservations { rows: n, params: p });
    }
    let r0 = match theta0 {
        Some(t) => {
            if t.len() != p || t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("theta0 must hold {p} finite values")));
            }
            Some(t[system.r_index()])
        }
        None => None,
    };
    let proj = Projected::new(system);
    let rank = proj.rank();
    if rank < p {
        return Err(Error::Identification(format!(
            "{rank} independent instruments for {p} parameters"
        )));
    }
    let mut step1 = |r: f64| proj.concentrated(r, None).map(|v| v.0);
    let s1 = minimize_r(opts, r0, &mut step1)?;
    let (_, lin1) = proj.concentrated(s1.r, None)?;
    let theta1 = proj.assemble(s1.r, &lin1);

    let (ids, g) = cluster_ids(system.rows.iter().map(|r| r.individual));
    let e1 = DVector::from_fn(n, |i, _| system.residual(&system.rows[i], &theta1));
    let meat = clustered_meat(&proj.q, &e1, &ids, g);
    let w_half = inverse_sqrt(&meat);

    let mut step2 = |r: f64| proj.concentrated(r, Some(&w_half)).map(|v| v.0);
    let s2 = minimize_r(opts, Some(s1.r), &mut step2)?;
    let (j_value, lin2) = proj.concentrated(s2.r, Some(&w_half))?;
    let theta = proj.assemble(s2.r, &lin2);

    let mut jac = DMatrix::zeros(rank, p);
    for j in 0..p {
        let h = 1e-6 * theta[j].abs().max(1.0);
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[j] += h;
        down[j] -= h;
        let diff = (proj.moments(&up) - proj.moments(&down)) / (2.0 * h);
        jac.set_column(j, &diff);
    }
    let jw = &w_half * &jac;
    let names = &system.param_names;
    let sol = solve_ls(&jw, &DVector::zeros(rank), names)?;
    let cov = &sol.pinv * sol.pinv.transpose() * small_sample_factor(g);

    let gw = &w_half * proj.moments(&theta);
    let grad = jw.transpose() * gw * 2.0;
    let gradient_norm = grad
        .iter()
        .zip(&theta)
        .map(|(gj, tj)| (gj * tj.abs().max(1.0)).powi(2))
        .sum::<f64>()
        .sqrt();
    let converged = s1.resolved
        && s2.resolved
        && gradient_norm <= opts.gradient_tol * j_value.max(1.0);

    let dof = rank - p;
    Ok(NonlinearGmmResult {
        param_names: names.clone(),
        estimates: theta,
        covariance: to_row_major(&cov),
        j_statistic: (dof > 0).then_some(j_value),
        j_dof: dof,
        converged,
        iterations: s1.evaluations + s2.evaluations,
        objective_value: j_value / n as f64,
        gradient_norm,
        n_rows: n,
        n_clusters: g,
        n_instruments: rank,
        condition_number: sol.condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moment_builder::{build_factor_loading, build_pairwise_independent, InstrumentSet, PairRow};
    use crate::panel_sim::{simulate, tests::base_config, ModelVariant};
    use proptest::prelude::*;

    fn system(rows: &[(f64, Vec<f64>, Vec<f64>)]) -> MomentSystem {
        let p = rows[0].1.len();
        let l = rows[0].2.len();
        MomentSystem {
            param_names: (0..p).map(|j| format!("p{j}")).collect(),
            instrument_names: (0..l).map(|j| format!("z{j}")).collect(),
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, (d, x, z))| PairRow {
                    dependent: *d,
                    regressors: x.clone(),
                    instruments: z.clone(),
                    individual: i,
                    periods: vec![0],
                })
                .collect(),
        }
    }

    #[test]
    fn hand_iv_formula() {
        let s = system(&[(2.0, vec![1.0], vec![1.0]), (4.0, vec![2.0], vec![1.0])]);
        let r = two_stage_least_squares(&s).unwrap();
        assert!((r.estimates[0] - 2.0).abs() < 1e-12);
        assert!(r.j_statistic.is_none());
        assert!(matches!(j_test(&r), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn instruments_equal_regressors_is_ols() {
        let rows: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..50)
            .map(|i| {
                let a = (i as f64 * 0.37).sin();
                let b = (i as f64 * 0.11).cos() + 0.2;
                let y = 1.0 + 2.0 * a - b + 0.1 * (i as f64 * 1.7).sin();
                (y, vec![1.0, a, b], vec![1.0, a, b])
            })
            .collect();
        let s = system(&rows);
        let iv = two_stage_least_squares(&s).unwrap();
        let x = DMatrix::from_fn(50, 3, |i, j| rows[i].1[j]);
        let y = DVector::from_fn(50, |i, _| rows[i].0);
        let ols = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        for j in 0..3 {
            assert!((iv.estimates[j] - ols[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let rows: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..20)
            .map(|i| {
                let a = i as f64;
                (a, vec![a, 2.0 * a], vec![1.0, a, a * a])
            })
            .collect();
        match two_stage_least_squares(&system(&rows)) {
            Err(Error::Identification(msg)) => assert!(msg.contains("p0") && msg.contains("p1")),
            other => panic!("expected identification error, got {other:?}"),
        }
        let few = system(&[(1.0, vec![1.0, 2.0], vec![1.0, 2.0])]);
        assert!(matches!(
            two_stage_least_squares(&few),
            Err(Error::InsufficientObservations { .. })
        ));
    }

    #[test]
    fn pairwise_recovers_truth() {
        let mut c = base_config(ModelVariant::IndependentErrors, 16_000, 2);
        c.n_regressors = 2;
        c.beta = vec![1.0, -0.5];
        c.error_cov = vec![vec![1.0, 0.0], vec![0.0, 1.5]];
        c.seed = 2024;
        let d = simulate(&c).unwrap();
        let s = build_pairwise_independent(&d, 0, 1, InstrumentSet::Default).unwrap();
        let r = two_stage_least_squares(&s).unwrap();
        let se = r.std_errors();
        for (j, truth) in [1.0, -0.5, 1.0, 1.5].iter().enumerate() {
            assert!(
                (r.estimates[j] - truth).abs() < 3.0 * se[j],
                "{}: {} vs {truth} (se {})",
                r.param_names[j],
                r.estimates[j],
                se[j]
            );
        }
        assert!(r.j_statistic.unwrap() >= 0.0);
        let two = two_step_gmm(&s).unwrap();
        assert_eq!(two.j_statistic, r.j_statistic);
    }

    #[test]
    fn factor_loading_recovers_ratio() {
        let mut c = base_config(ModelVariant::FactorLoading, 16_000, 2);
        c.factor_loadings = Some(vec![1.0, 1.5]);
        let d = simulate(&c).unwrap();
        let nl = build_factor_loading(&d, 1, 0, InstrumentSet::Quadratic).unwrap();
        let r = nonlinear_gmm(&nl, None, &NonlinearOptions::default()).unwrap();
        let se = r.std_errors();
        assert!((r.estimates[1] - 1.5).abs() < 3.0 * se[1], "r {} se {}", r.estimates[1], se[1]);
        assert!((r.estimates[0] - 1.0).abs() < 3.0 * se[0]);
        assert!(r.converged, "gradient {}", r.gradient_norm);
        assert!(r.objective_value >= 0.0);
    }

    #[test]
    fn concentration_identity() {
        let d = simulate(&base_config(ModelVariant::FactorLoading, 3000, 2)).unwrap();
        let nl = build_factor_loading(&d, 1, 0, InstrumentSet::Default).unwrap();
        for r in [0.7, 1.0, 1.5, 3.0] {
            let inner = concentrated_estimates(&nl, r).unwrap();
            let direct = two_stage_least_squares(&nl.linear_system_at(r)).unwrap();
            for (a, b) in inner.iter().zip(&direct.estimates) {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn nesting_at_unit_ratio() {
        let d = simulate(&base_config(ModelVariant::IndependentErrors, 4000, 2)).unwrap();
        let nl = build_factor_loading(&d, 1, 0, InstrumentSet::Default).unwrap();
        let inner = concentrated_estimates(&nl, 1.0).unwrap();
        // pair (1, 0): a pairs with sigma2 of period 0, b with period 1
        let pw = two_stage_least_squares(&build_pairwise_independent(&d, 1, 0, InstrumentSet::Default).unwrap()).unwrap();
        let expected = [
            pw.estimate("beta_0").unwrap(),
            pw.estimate("sigma2_t0").unwrap(),
            pw.estimate("sigma2_t1").unwrap(),
        ];
        for (a, b) in inner.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn bracket_error_when_minimum_outside() {
        let mut c = base_config(ModelVariant::FactorLoading, 4000, 2);
        c.factor_loadings = Some(vec![1.0, 1.5]);
        let d = simulate(&c).unwrap();
        let nl = build_factor_loading(&d, 1, 0, InstrumentSet::Default).unwrap();
        let opts = NonlinearOptions {
            r_lo: 3.0,
            r_hi: 20.0,
            ..Default::default()
        };
        assert!(matches!(nonlinear_gmm(&nl, None, &opts), Err(Error::Bracket { .. })));
    }

    #[test]
    fn chi2_tail() {
        assert!((chi2_sf(3.841458820694124, 1) - 0.05).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scale_and_order_invariance(seed in 0u64..1000, c in prop_oneof![-50.0..-0.01f64, 0.01..50.0f64]) {
            let mut cfg = base_config(ModelVariant::IndependentErrors, 400, 2);
            cfg.seed = seed;
            let d = simulate(&cfg).unwrap();
            let s = build_pairwise_independent(&d, 0, 1, InstrumentSet::Default).unwrap();
            let base = two_stage_least_squares(&s).unwrap();

            let mut scaled = s.clone();
            scaled.scale_instruments(c);
            let r = two_stage_least_squares(&scaled).unwrap();
            for (a, b) in r.estimates.iter().zip(&base.estimates) {
                prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
            }

            let mut rev = s.clone();
            rev.rows.reverse();
            let r = two_stage_least_squares(&rev).unwrap();
            for (a, b) in r.estimates.iter().zip(&base.estimates) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
            let cmax = base.covariance.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in r.covariance.iter().zip(&base.covariance) {
                prop_assert!((a - b).abs() <= 1e-12 * cmax);
            }
        }
    }
}
