//! Large-system self-consistency `m_k`, the interference map `F` and the
//! monotone `lambda = F(lambda, mu)` iteration.
//!
//! `m_k(-mu_k, lambda)` is the unique positive root of
//! `m = 1 / (mu_k + sum_j beta_j lambda_j eps_jk / (1 + lambda_j eps_jk m))`,
//! and `F_k = gamma_k / (eps_kk m_k)`. When `mu_k = 0` and the loadings of the
//! cells with positive `lambda` sum to at most one, `m_k` is infinite and
//! `F_k = 0`.
//!
//! Two independent routes are kept on purpose: [`solve_mk`] iterates the
//! self-consistency in `m`, while [`eval_f`] root-finds directly in `y = F_k`
//! on a bracket where the defining function is strictly monotone.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::model::Network;

/// Tolerances and caps for the fixed-point routines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    /// Relative residual of the `m_k` self-consistency.
    pub tol_m: f64,
    /// Stopping threshold on `||lambda - F(lambda)||_inf`, scaled by
    /// `1 + ||lambda||_inf`.
    pub tol_lambda: f64,
    pub max_iter: usize,
    /// Divergence cap is `divergence_factor * max_k gamma_k / eps_kk`.
    pub divergence_factor: f64,
    /// Upper start for the dominating fixed point probe, as a multiple of
    /// the minimal fixed point.
    pub upper_start_factor: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol_m: 1e-12,
            tol_lambda: 1e-10,
            max_iter: 100_000,
            divergence_factor: 1e9,
            upper_start_factor: 1e3,
        }
    }
}

/// Value of `m_k`, possibly infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MkValue {
    Finite(f64),
    Infinite,
}

impl MkValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, MkValue::Finite(_))
    }

    /// The value, with `f64::INFINITY` for the infinite sentinel.
    pub fn value(&self) -> f64 {
        match *self {
            MkValue::Finite(m) => m,
            MkValue::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedPointStatus {
    Converged,
    Unbounded,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaFixedPointResult {
    pub status: FixedPointStatus,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Sum of the loadings of cells with positive `lambda`.
pub fn active_loading(net: &Network, lambda: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(&net.beta)
        .filter(|(l, _)| **l > 0.0)
        .map(|(_, b)| b)
        .sum()
}

fn mk_is_infinite(net: &Network, mu_k: f64, lambda: &[f64]) -> bool {
    mu_k == 0.0 && active_loading(net, lambda) <= 1.0
}

/// `mu_k + sum_j beta_j lambda_j eps_jk / (1 + lambda_j eps_jk m)`.
fn mk_denominator(net: &Network, k: usize, mu_k: f64, lambda: &[f64], m: f64) -> f64 {
    let mut s = mu_k;
    for (j, &l) in lambda.iter().enumerate() {
        if l > 0.0 {
            let le = l * net.eps[j][k];
            s += net.beta[j] * le / (1.0 + le * m);
        }
    }
    s
}

/// Solves the `m_k` self-consistency by fixed-point iteration.
pub fn solve_mk(
    net: &Network,
    k: usize,
    mu_k: f64,
    lambda: &[f64],
    opts: &FixedPointOptions,
) -> Result<MkValue> {
    if mk_is_infinite(net, mu_k, lambda) {
        return Ok(MkValue::Infinite);
    }
    let full: f64 = mu_k
        + lambda
            .iter()
            .enumerate()
            .map(|(j, &l)| net.beta[j] * l * net.eps[j][k])
            .sum::<f64>();
    let mut m = 1.0 / full;
    let mut last_step = 0.0;
    let mut damping = 1.0;
    for _ in 0..opts.max_iter {
        let d = mk_denominator(net, k, mu_k, lambda, m);
        let residual = (m * d - 1.0).abs();
        if residual <= opts.tol_m {
            return Ok(MkValue::Finite(m));
        }
        let step = 1.0 / d - m;
        if step * last_step < 0.0 {
            damping = 0.5;
        }
        last_step = step;
        m += damping * step;
    }
    let d = mk_denominator(net, k, mu_k, lambda, m);
    Err(SolverError::MaxIterations {
        what: "m_k self-consistency",
        iterations: opts.max_iter,
        residual: (m * d - 1.0).abs(),
    })
}

/// `g_k(y) = gamma_k / (eps_kk y) [mu_k + sum_j beta_j eps_jk lambda_j / (1 + gamma_k eps_jk lambda_j / (eps_kk y))] - 1`,
/// strictly decreasing in `y`; `F_k` is its positive root.
pub fn g_k(net: &Network, k: usize, y: f64, lambda: &[f64], mu_k: f64) -> f64 {
    let c = net.gamma[k] / net.eps[k][k];
    let mut s = mu_k;
    for (j, &l) in lambda.iter().enumerate() {
        if l > 0.0 {
            let el = net.eps[j][k] * l;
            s += net.beta[j] * el / (1.0 + c * el / y);
        }
    }
    c / y * s - 1.0
}

/// One component of `F(lambda, mu)`.
///
/// The root of `g_k` is found as the root of `phi(y) = -y g_k(y)`, which is
/// convex and increasing through its positive root. Newton steps from the
/// upper end of the bracket are kept only when they stay inside the current
/// bracket; otherwise the bracket is bisected.
pub fn eval_f_component(net: &Network, k: usize, lambda: &[f64], mu_k: f64) -> f64 {
    if mk_is_infinite(net, mu_k, lambda) {
        return 0.0;
    }
    let c = net.gamma[k] / net.eps[k][k];
    // phi(y) = y - c [mu + sum_j b_j y / (y + a_j)]
    let mut b = [0.0f64; 8];
    let mut a = [0.0f64; 8];
    let mut heap_b = Vec::new();
    let mut heap_a = Vec::new();
    let (bs, as_): (&mut [f64], &mut [f64]) = if lambda.len() <= 8 {
        (&mut b[..lambda.len()], &mut a[..lambda.len()])
    } else {
        heap_b.resize(lambda.len(), 0.0);
        heap_a.resize(lambda.len(), 0.0);
        (&mut heap_b[..], &mut heap_a[..])
    };
    let mut total = mu_k;
    for (j, &l) in lambda.iter().enumerate() {
        let el = if l > 0.0 { net.eps[j][k] * l } else { 0.0 };
        bs[j] = net.beta[j] * el;
        as_[j] = c * el;
        total += bs[j];
    }
    let phi = |y: f64| -> (f64, f64) {
        let mut s = mu_k;
        let mut ds = 0.0;
        for j in 0..bs.len() {
            if bs[j] > 0.0 {
                let den = y + as_[j];
                s += bs[j] * y / den;
                ds += bs[j] * as_[j] / (den * den);
            }
        }
        (y - c * s, 1.0 - c * ds)
    };

    let mut hi = c * total;
    let (f_hi, _) = phi(hi);
    if f_hi <= 0.0 {
        return hi;
    }
    let mut lo = f64::EPSILON * hi;
    let mut y = hi;
    for _ in 0..200 {
        let (f, df) = phi(y);
        if f == 0.0 {
            return y;
        }
        if f > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let newton = if df > 0.0 { y - f / df } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - y).abs() <= 4.0 * f64::EPSILON * next || hi - lo <= 4.0 * f64::EPSILON * hi {
            return next;
        }
        y = next;
    }
    y
}

/// `F(lambda, mu)` for all cells.
pub fn eval_f(net: &Network, lambda: &[f64], mu: &[f64]) -> Vec<f64> {
    (0..net.len())
        .map(|k| eval_f_component(net, k, lambda, mu[k]))
        .collect()
}

/// `||lambda - F(lambda, mu)||_inf`.
pub fn map_residual(net: &Network, lambda: &[f64], mu: &[f64]) -> f64 {
    eval_f(net, lambda, mu)
        .iter()
        .zip(lambda)
        .map(|(f, l)| (f - l).abs())
        .fold(0.0, f64::max)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Plain iteration `lambda <- F(lambda, mu)` from `start`.
pub(crate) fn iterate_from(
    net: &Network,
    mu: &[f64],
    start: Vec<f64>,
    opts: &FixedPointOptions,
    mut check_monotone: bool,
) -> LambdaFixedPointResult {
    let cap = opts.divergence_factor * net.target_scale().max(f64::MIN_POSITIVE);
    // With every mu_k > 0 the fixed point is unique, so Newton steps cannot
    // jump to a different one.
    let accelerate = mu.iter().all(|&m| m > 0.0);
    let mut lambda = start;
    let mut residual = f64::INFINITY;
    let mut checkpoint = f64::INFINITY;
    let mut growing = 0;
    for it in 1..=opts.max_iter {
        let next = eval_f(net, &lambda, mu);
        residual = next
            .iter()
            .zip(&lambda)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if check_monotone {
            debug_assert!(
                next.iter()
                    .zip(&lambda)
                    .all(|(n, l)| *n >= *l - 1e-9 * (1.0 + l.abs())),
                "iteration from zero must be nondecreasing"
            );
        }
        lambda = next;
        if lambda.iter().any(|l| !l.is_finite() || *l > cap) {
            return LambdaFixedPointResult {
                status: FixedPointStatus::Unbounded,
                lambda,
                iterations: it,
                residual,
            };
        }
        if residual <= opts.tol_lambda * (1.0 + inf_norm(&lambda)) {
            return LambdaFixedPointResult {
                status: FixedPointStatus::Converged,
                lambda,
                iterations: it,
                residual,
            };
        }
        if it % NEWTON_PERIOD == 0 {
            let mut accelerated = false;
            if accelerate && residual > SLOW_CONTRACTION * checkpoint {
                if let Some(next) = newton_step(net, mu, &lambda, residual) {
                    lambda = next;
                    accelerated = true;
                    // A Newton step may overshoot the fixed point.
                    check_monotone = false;
                }
            }
            // Steps that keep growing and defeat the Newton step mean the
            // iteration has no fixed point to approach.
            growing = if !accelerated && residual > checkpoint {
                growing + 1
            } else {
                0
            };
            if growing >= GROWTH_PERIODS {
                return LambdaFixedPointResult {
                    status: FixedPointStatus::Unbounded,
                    lambda,
                    iterations: it,
                    residual,
                };
            }
            checkpoint = residual;
        }
    }
    LambdaFixedPointResult {
        status: FixedPointStatus::MaxIterations,
        lambda,
        iterations: opts.max_iter,
        residual,
    }
}

pub(crate) const NEWTON_PERIOD: usize = 20;
/// Consecutive checkpoints with a growing step before an iteration is
/// declared divergent.
pub(crate) const GROWTH_PERIODS: usize = 10;
/// Residual reduction over `NEWTON_PERIOD` plain steps below which the
/// iteration is considered slow.
pub(crate) const SLOW_CONTRACTION: f64 = 1e-3;

/// One Newton step on `lambda - F(lambda)` with a forward-difference
/// Jacobian. Returned only if it lowers the residual below `residual`.
fn newton_step(net: &Network, mu: &[f64], lambda: &[f64], residual: f64) -> Option<Vec<f64>> {
    newton_candidate(|x| eval_f(net, x, mu), lambda, residual)
}

/// Newton step on `x - map(x)` for a positive fixed point, accepted only
/// when it keeps `x` positive and lowers the sup-norm residual below
/// `residual`.
pub(crate) fn newton_candidate<M>(map: M, x: &[f64], residual: f64) -> Option<Vec<f64>>
where
    M: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let f = map(x);
    let r: Vec<f64> = f.iter().zip(x).map(|(a, b)| a - b).collect();
    let mut m = vec![vec![0.0; n]; n];
    for j in 0..n {
        let h = 1e-7 * (1.0 + x[j]);
        let mut probe = x.to_vec();
        probe[j] += h;
        let fj = map(&probe);
        for i in 0..n {
            let d = (fj[i] - f[i]) / h;
            m[i][j] = if i == j { 1.0 - d } else { -d };
        }
    }
    let delta = crate::linalg::solve_real(&m, &r).ok()?;
    let cand: Vec<f64> = x.iter().zip(&delta).map(|(l, d)| l + d).collect();
    if cand.iter().any(|c| !c.is_finite() || *c <= 0.0) {
        return None;
    }
    let fc = map(&cand);
    let res = fc
        .iter()
        .zip(&cand)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    (res < residual).then_some(cand)
}

/// Solves `lambda = F(lambda, mu)` for the fixed point that maximizes the
/// dual objective.
///
/// The iteration from zero reaches the minimal fixed point. When some
/// `mu_k = 0` and the total loading exceeds one, a second fixed point that
/// dominates the first may exist; it is probed by iterating from a large
/// start, and whichever fixed point has the larger objective is returned.
pub fn lambda_fixed_point(
    net: &Network,
    mu: &[f64],
    opts: &FixedPointOptions,
) -> LambdaFixedPointResult {
    let n = net.len();
    let low = iterate_from(net, mu, vec![0.0; n], opts, true);
    if low.status != FixedPointStatus::Converged {
        return low;
    }
    let some_zero_mu = mu.contains(&0.0);
    let total_loading: f64 = net.beta.iter().sum();
    if !(some_zero_mu && total_loading > 1.0) {
        return low;
    }
    probe_upper(net, mu, low, opts)
}

fn probe_upper(
    net: &Network,
    mu: &[f64],
    low: LambdaFixedPointResult,
    opts: &FixedPointOptions,
) -> LambdaFixedPointResult {
    let scale = {
        let m = inf_norm(&low.lambda);
        if m > 0.0 {
            m
        } else {
            net.target_scale()
        }
    };
    let start = vec![opts.upper_start_factor * scale; net.len()];
    let high = iterate_from(net, mu, start, opts, false);
    match high.status {
        FixedPointStatus::Converged => {
            if net.objective(&high.lambda) > net.objective(&low.lambda) * (1.0 + 1e-12) {
                LambdaFixedPointResult {
                    iterations: low.iterations + high.iterations,
                    ..high
                }
            } else {
                low
            }
        }
        FixedPointStatus::Unbounded => {
            // Only a feasible (lambda <= F(lambda)) runaway certifies an
            // unbounded dual.
            let f = eval_f(net, &high.lambda, mu);
            let feasible = f
                .iter()
                .zip(&high.lambda)
                .all(|(f, l)| l.is_finite() && *l <= *f * (1.0 + 1e-9));
            if feasible {
                high
            } else {
                low
            }
        }
        FixedPointStatus::MaxIterations => low,
    }
}
