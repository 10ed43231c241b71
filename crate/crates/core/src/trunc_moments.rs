//! Product moments of a normal pair restricted to the positive quadrant.
//!
//! Three routes are provided: the closed univariate recursion, deterministic
//! nested quadrature of the bivariate density, and a seeded rejection-sampling
//! estimator. The identity linking the bivariate moments
//!
//! ```text
//! E[U1^{k+1} U2^m - U1^k U2^{m+1}] = (mu1 - mu2) E[U1^k U2^m]
//!     + (s11 - s12) k E[U1^{k-1} U2^m] - (s22 - s12) m E[U1^k U2^{m-1}]
//! ```
//!
//! (all expectations conditional on U1 > 0, U2 > 0) is evaluated by
//! [`identity_residual`] using the quadrature route only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::quadrature::{integrate_vec, QuadOptions};

/// Largest supported total order `k + m`.
pub const DEFAULT_MAX_ORDER: u32 = 8;

/// Each coordinate is integrated over mean ± this many standard deviations.
const TAIL_SDS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnivariateNormalSpec {
    pub mu: f64,
    pub sigma2: f64,
}

impl UnivariateNormalSpec {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        let spec = Self { mu, sigma2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !self.sigma2.is_finite() {
            return Err(Error::Domain("normal parameters must be finite".into()));
        }
        if self.sigma2 <= 0.0 {
            return Err(Error::Domain(format!(
                "variance must be positive, got {}",
                self.sigma2
            )));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateNormalSpec {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub sigma12: f64,
}

impl BivariateNormalSpec {
    pub fn new(mu1: f64, mu2: f64, sigma1_sq: f64, sigma2_sq: f64, sigma12: f64) -> Result<Self> {
        let spec = Self {
            mu1,
            mu2,
            sigma1_sq,
            sigma2_sq,
            sigma12,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_correlation(
        mu1: f64,
        mu2: f64,
        sigma1_sq: f64,
        sigma2_sq: f64,
        rho: f64,
    ) -> Result<Self> {
        Self::new(mu1, mu2, sigma1_sq, sigma2_sq, rho * (sigma1_sq * sigma2_sq).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mu1, self.mu2, self.sigma1_sq, self.sigma2_sq, self.sigma12];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("normal parameters must be finite".into()));
        }
        if self.sigma1_sq <= 0.0 || self.sigma2_sq <= 0.0 {
            return Err(Error::Domain("variances must be positive".into()));
        }
        if self.sigma12 * self.sigma12 >= self.sigma1_sq * self.sigma2_sq {
            return Err(Error::Domain(format!(
                "covariance matrix is not positive definite (rho = {})",
                self.rho()
            )));
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.sigma12 / (self.sigma1_sq * self.sigma2_sq).sqrt()
    }

    /// The same law with the coordinate labels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            mu1: self.mu2,
            mu2: self.mu1,
            sigma1_sq: self.sigma2_sq,
            sigma2_sq: self.sigma1_sq,
            sigma12: self.sigma12,
        }
    }

    fn marginal1(&self) -> UnivariateNormalSpec {
        UnivariateNormalSpec {
            mu: self.mu1,
            sigma2: self.sigma1_sq,
        }
    }

    /// Slope and standard deviation of U2 given U1.
    fn conditional2(&self) -> (f64, f64) {
        let slope = self.sigma12 / self.sigma1_sq;
        let var = self.sigma2_sq - self.sigma12 * slope;
        (slope, var.max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentQuery {
    pub k: u32,
    pub m: u32,
}

impl MomentQuery {
    pub fn new(k: u32, m: u32) -> Result<Self> {
        Self::with_max_order(k, m, DEFAULT_MAX_ORDER)
    }

    pub fn with_max_order(k: u32, m: u32, max_order: u32) -> Result<Self> {
        if k + m > max_order {
            return Err(Error::UnsupportedOrder {
                requested: k + m,
                max: max_order,
            });
        }
        Ok(Self { k, m })
    }

    pub fn swapped(&self) -> Self {
        Self {
            k: self.m,
            m: self.k,
        }
    }
}

/// `E[U^j | U > 0]` for `j = 0..=k_max`.
pub fn univariate_truncated_moments(spec: &UnivariateNormalSpec, k_max: u32) -> Result<Vec<f64>> {
    spec.validate()?;
    if k_max > DEFAULT_MAX_ORDER {
        return Err(Error::UnsupportedOrder {
            requested: k_max,
            max: DEFAULT_MAX_ORDER,
        });
    }
    let sigma = spec.sigma();
    let mut out = Vec::with_capacity(k_max as usize + 1);
    out.push(1.0);
    if k_max >= 1 {
        out.push(spec.mu + sigma * normal::inverse_mills(spec.mu / sigma));
    }
    for j in 1..k_max as usize {
        let next = spec.mu * out[j] + spec.sigma2 * j as f64 * out[j - 1];
        out.push(next);
    }
    Ok(out)
}

pub fn univariate_truncated_moment(spec: &UnivariateNormalSpec, k: u32) -> Result<f64> {
    Ok(univariate_truncated_moments(spec, k)?[k as usize])
}

/// Quadrature estimate of one conditional moment with its error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadMoment {
    pub value: f64,
    pub error: f64,
}

/// Relative tolerances tried in turn until the requested absolute error is met.
const REL_SCHEDULE: [f64; 4] = [1e-10, 1e-12, 1e-13, 1e-14];

/// Below this the inner integrals only chase rounding noise.
const INNER_REL_FLOOR: f64 = 5e-15;

/// Conditional moments `E[U1^a U2^b | U1 > 0, U2 > 0]` for each requested
/// `(a, b)`, each with estimated absolute error at most `tol`.
pub fn bivariate_truncated_moments_quad(
    spec: &BivariateNormalSpec,
    entries: &[(u32, u32)],
    tol: f64,
) -> Result<Vec<QuadMoment>> {
    spec.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    for &(a, b) in entries {
        MomentQuery::new(a, b)?;
    }
    let mut achieved = f64::INFINITY;
    for &rel in REL_SCHEDULE.iter() {
        let (raw, converged) = quadrant_integrals(spec, entries, rel)?;
        let (p, p_err) = raw[0];
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::Domain(
                "positive quadrant has negligible probability".into(),
            ));
        }
        let moments: Vec<QuadMoment> = raw[1..]
            .iter()
            .map(|&(num, num_err)| {
                let value = num / p;
                QuadMoment {
                    value,
                    error: (num_err + value.abs() * p_err) / p,
                }
            })
            .collect();
        let worst = moments.iter().map(|m| m.error).fold(0.0, f64::max);
        if worst <= tol {
            return Ok(moments);
        }
        achieved = achieved.min(worst);
        if !converged {
            // A tighter pass cannot do better than an exhausted budget.
            break;
        }
    }
    Err(Error::Convergence { tol, achieved })
}

pub fn bivariate_truncated_moment_quad(
    spec: &BivariateNormalSpec,
    q: MomentQuery,
    tol: f64,
) -> Result<f64> {
    Ok(bivariate_truncated_moments_quad(spec, &[(q.k, q.m)], tol)?[0].value)
}

/// Unnormalized quadrant integrals. Entry 0 is the quadrant probability, the
/// rest follow `entries`. Each pair is `(value, error_bound)`.
fn quadrant_integrals(
    spec: &BivariateNormalSpec,
    entries: &[(u32, u32)],
    rel: f64,
) -> Result<(Vec<(f64, f64)>, bool)> {
    let mut targets = Vec::with_capacity(entries.len() + 1);
    targets.push((0u32, 0u32));
    targets.extend_from_slice(entries);
    let n_b = targets.iter().map(|t| t.1).max().unwrap_or(0) as usize + 1;

    let marg = spec.marginal1();
    let s1 = marg.sigma();
    let (slope, cond_sd) = spec.conditional2();
    let lo1 = (spec.mu1 - TAIL_SDS * s1).max(0.0);
    let hi1 = spec.mu1 + TAIL_SDS * s1;
    if hi1 <= lo1 {
        return Err(Error::Domain(
            "positive quadrant has negligible probability".into(),
        ));
    }

    let inner_opts = QuadOptions {
        abs_tol: 0.0,
        rel_tol: (0.1 * rel).max(INNER_REL_FLOOR),
        max_intervals: 200,
    };
    let outer_opts = QuadOptions {
        abs_tol: 0.0,
        rel_tol: rel,
        max_intervals: 1000,
    };

    // Worst relative inner error seen, per power of u2.
    let mut inner_rel = vec![0.0_f64; n_b];
    let mut inner_vals = vec![0.0; n_b];

    let outer = integrate_vec(
        |u1, out| {
            let center = spec.mu2 + slope * (u1 - spec.mu1);
            let lo2 = (center - TAIL_SDS * cond_sd).max(0.0);
            let hi2 = center + TAIL_SDS * cond_sd;
            if hi2 <= lo2 {
                out.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            let inner = integrate_vec(
                |u2, o| {
                    let w = normal::pdf((u2 - center) / cond_sd) / cond_sd;
                    let mut p = w;
                    for slot in o.iter_mut() {
                        *slot = p;
                        p *= u2;
                    }
                },
                n_b,
                lo2,
                hi2,
                &inner_opts,
            );
            for b in 0..n_b {
                inner_vals[b] = inner.values[b];
                if inner.values[b] > 0.0 {
                    inner_rel[b] = inner_rel[b].max(inner.errors[b] / inner.values[b]);
                }
            }
            let dens = normal::pdf((u1 - spec.mu1) / s1) / s1;
            for (slot, &(a, b)) in out.iter_mut().zip(targets.iter()) {
                *slot = dens * u1.powi(a as i32) * inner_vals[b as usize];
            }
        },
        targets.len(),
        lo1,
        hi1,
        &outer_opts,
    );

    let bounds = targets
        .iter()
        .enumerate()
        .map(|(i, &(_, b))| {
            let v = outer.values[i];
            (v, outer.errors[i] + inner_rel[b as usize] * v.abs())
        })
        .collect();
    Ok((bounds, outer.converged))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub accepted: usize,
    pub draws: usize,
}

/// Draws per independent substream of the sampler.
const MC_CHUNK: usize = 1 << 16;

#[derive(Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Self) -> Self {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        Self { n, mean, m2 }
    }
}

/// Rejection-sampling estimate of `E[U1^k U2^m | U1 > 0, U2 > 0]`.
///
/// Draw `j` belongs to chunk `j / 65536`, and chunk `c` uses the ChaCha8
/// stream `c` keyed by `seed`, so the result does not depend on the thread
/// count.
pub fn bivariate_truncated_moment_mc(
    spec: &BivariateNormalSpec,
    q: MomentQuery,
    n_draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    spec.validate()?;
    if n_draws < 1000 {
        return Err(Error::Domain(format!(
            "at least 1000 draws required, got {n_draws}"
        )));
    }
    let s1 = spec.sigma1_sq.sqrt();
    let (slope, cond_sd) = spec.conditional2();
    let n_chunks = n_draws.div_ceil(MC_CHUNK);
    let stats = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = MC_CHUNK.min(n_draws - c * MC_CHUNK);
            let mut acc = Welford::default();
            for _ in 0..len {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                let u1 = spec.mu1 + s1 * z1;
                let u2 = spec.mu2 + slope * (u1 - spec.mu1) + cond_sd * z2;
                if u1 > 0.0 && u2 > 0.0 {
                    acc.push(u1.powi(q.k as i32) * u2.powi(q.m as i32));
                }
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Welford::default(), Welford::merge);

    if stats.n < 100 {
        return Err(Error::InsufficientAcceptance {
            accepted: stats.n,
            draws: n_draws,
            rate: stats.n as f64 / n_draws as f64,
        });
    }
    let var = stats.m2 / (stats.n - 1) as f64;
    Ok(McEstimate {
        estimate: stats.mean,
        stderr: (var / stats.n as f64).sqrt(),
        accepted: stats.n,
        draws: n_draws,
    })
}

/// Left- and right-hand sides of the quadrant moment identity at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// Bound on |residual| implied by the quadrature error estimates.
    pub error_bound: f64,
}

pub fn identity_check(
    spec: &BivariateNormalSpec,
    q: MomentQuery,
    tol: f64,
) -> Result<IdentityCheck> {
    if q.k < 1 || q.m < 1 {
        return Err(Error::Domain(format!(
            "the identity needs k >= 1 and m >= 1, got k = {}, m = {}",
            q.k, q.m
        )));
    }
    let (k, m) = (q.k, q.m);
    let entries = [(k + 1, m), (k, m + 1), (k, m), (k - 1, m), (k, m - 1)];
    let mo = bivariate_truncated_moments_quad(spec, &entries, tol / 10.0)?;
    let c_mean = spec.mu1 - spec.mu2;
    let c1 = (spec.sigma1_sq - spec.sigma12) * k as f64;
    let c2 = (spec.sigma2_sq - spec.sigma12) * m as f64;
    let lhs = mo[0].value - mo[1].value;
    let rhs = c_mean * mo[2].value + c1 * mo[3].value - c2 * mo[4].value;
    let error_bound = mo[0].error
        + mo[1].error
        + c_mean.abs() * mo[2].error
        + c1.abs() * mo[3].error
        + c2.abs() * mo[4].error;
    Ok(IdentityCheck {
        lhs,
        rhs,
        residual: lhs - rhs,
        error_bound,
    })
}

/// Residual of the quadrant moment identity; `|residual| <= 5 tol`
/// certifies it at this parameter point.
pub fn identity_residual(spec: &BivariateNormalSpec, q: MomentQuery, tol: f64) -> Result<f64> {
    Ok(identity_check(spec, q, tol)?.residual)
}
