//! Finite-system dual and downlink power allocation.
//!
//! For fixed `mu` the per-user multipliers solve
//! `lambda_{u,k} = gamma_k / ((1/N) h Sigma_{u,k}^{-1} h^H)` (a standard
//! interference function, iterated from zero). The outer problem maximizes
//! `sum_{u,k} noise_{u,k} lambda_{u,k} / N` over `mu >= 0, sum mu = L` by
//! pairwise moves; along a pair the derivative is `P_i - P_j`, the BS powers
//! of the downlink allocation at the current point.
//!
//! `Sigma_{u,k}` excludes user `(u,k)`. Adding the user's own term back
//! (`Sigma_k`) changes `h Sigma^{-1} h^H` by a known scalar
//! (Sherman-Morrison) and not the direction `Sigma^{-1} h^H`, so one
//! factorization per cell serves all of its users.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::fixed_point::{newton_candidate, GROWTH_PERIODS, NEWTON_PERIOD, SLOW_CONTRACTION};
use crate::linalg::{conj, dot, solve_real, CMatrix, Cholesky, C64};

use super::beamform::{scaled_unit, weighted_covariance, BeamformerSet};
use super::channels::ChannelSet;

/// A finite min-max power problem: channels, targets, per-user noise and
/// the normalization `N` of the multipliers.
#[derive(Clone, Debug)]
pub struct FiniteProblem {
    pub ch: ChannelSet,
    pub gamma: Vec<f64>,
    /// `noise[k][u]`: noise plus fixed interference at user `u` of cell `k`.
    pub noise: Vec<Vec<f64>>,
    pub norm: f64,
}

impl FiniteProblem {
    pub fn new(ch: ChannelSet, gamma: Vec<f64>, sigma2: f64) -> FiniteProblem {
        let noise = ch.users.iter().map(|&u| vec![sigma2; u]).collect();
        let norm = ch.nt as f64;
        FiniteProblem {
            ch,
            gamma,
            noise,
            norm,
        }
    }

    pub fn cells(&self) -> usize {
        self.ch.cells()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut o = Vec::with_capacity(self.cells());
        let mut acc = 0;
        for &u in &self.ch.users {
            o.push(acc);
            acc += u;
        }
        o
    }

    /// `(cell, user)` of each flat index.
    fn index(&self) -> Vec<(usize, usize)> {
        (0..self.cells())
            .flat_map(|k| (0..self.ch.users[k]).map(move |u| (k, u)))
            .collect()
    }

    fn objective(&self, lambda: &[f64]) -> f64 {
        self.index()
            .iter()
            .zip(lambda)
            .map(|(&(k, u), l)| self.noise[k][u] * l)
            .sum::<f64>()
            / self.norm
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteDualOptions {
    /// Inner stop: `max |lambda' - lambda| <= tol_lambda (1 + max lambda)`.
    pub tol_lambda: f64,
    pub max_inner: usize,
    /// The inner iteration is declared divergent past this multiple of the
    /// scale `max gamma_k N max(mu, 1) / ||h_{u,k,k}||^2`.
    pub divergence_factor: f64,
    pub max_sweeps: usize,
    pub line_iters: usize,
    pub tol_obj: f64,
    pub tol_mu: f64,
    /// Stop as soon as the dual value exceeds this (certifies that the
    /// min-max objective is above it).
    pub stop_above: Option<f64>,
    /// Stop as soon as a primal point with every BS power at most this is
    /// found.
    pub certify_budget: Option<f64>,
}

impl Default for FiniteDualOptions {
    fn default() -> Self {
        FiniteDualOptions {
            tol_lambda: 1e-13,
            max_inner: 200_000,
            divergence_factor: 1e10,
            max_sweeps: 500,
            line_iters: 100,
            tol_obj: 1e-12,
            tol_mu: 1e-10,
            stop_above: None,
            certify_budget: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FiniteDualStatus {
    Optimal,
    /// Stopped early: the dual value passed `stop_above`.
    AboveThreshold,
    /// Stopped early: a primal point within `certify_budget` was found.
    PrimalCertificate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteDualSolution {
    pub mu: Vec<f64>,
    /// `lambda[k][u]`.
    pub lambda: Vec<Vec<f64>>,
    /// Cells whose matrix `Sigma` is rank deficient; their multipliers are zero.
    pub zf_cells: Vec<usize>,
    pub objective: f64,
    pub status: FiniteDualStatus,
    pub sweeps: usize,
}

impl FiniteDualSolution {
    pub fn selfish_cells(&self) -> Vec<usize> {
        (0..self.mu.len())
            .filter(|k| !self.zf_cells.contains(k))
            .collect()
    }
}

/// `Sigma_k` with every user's term, channels from BS `k`.
fn covariance(prob: &FiniteProblem, k: usize, mu_k: f64, lambda: &[f64]) -> CMatrix {
    let idx = prob.index();
    let terms = idx
        .iter()
        .zip(lambda)
        .filter(|(_, l)| **l > 0.0)
        .map(|(&(j, u), l)| (prob.ch.h(j, u, k), l / prob.norm));
    weighted_covariance(prob.ch.nt, mu_k, terms)
}

/// Whether `Sigma_{u,k}` is rank deficient for the users of cell `k`.
fn is_zero_forcing(prob: &FiniteProblem, k: usize, mu_k: f64, lambda: &[f64]) -> bool {
    if mu_k > 0.0 {
        return false;
    }
    let others = prob
        .index()
        .iter()
        .zip(lambda)
        .filter(|(&(j, _), l)| j != k && **l > 0.0)
        .count();
    others < prob.ch.nt
}

/// One application of the multiplier map; also returns the zero-forcing cells.
fn map_lambda(prob: &FiniteProblem, mu: &[f64], lambda: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let offs = prob.offsets();
    let mut next = vec![0.0; lambda.len()];
    let mut zf = Vec::new();
    for k in 0..prob.cells() {
        if is_zero_forcing(prob, k, mu[k], lambda) {
            zf.push(k);
            continue;
        }
        let s = covariance(prob, k, mu[k], lambda);
        let ch = match Cholesky::factor(&s) {
            Ok(c) => c,
            Err(_) => {
                zf.push(k);
                continue;
            }
        };
        for u in 0..prob.ch.users[k] {
            let i = offs[k] + u;
            let h = conj(prob.ch.h(k, u, k));
            let q_full = ch.quad_form_inv(&h);
            let den = 1.0 - lambda[i] / prob.norm * q_full;
            let q = if den > 1e-12 {
                q_full / den
            } else {
                // Own term dominates numerically; factor Sigma_{u,k} itself.
                let mut own = s.clone();
                own.add_outer_conj(prob.ch.h(k, u, k), -lambda[i] / prob.norm);
                match Cholesky::factor(&own) {
                    Ok(c) => c.quad_form_inv(&h),
                    Err(_) => f64::INFINITY,
                }
            };
            next[i] = if q.is_finite() && q > 0.0 {
                prob.gamma[k] * prob.norm / q
            } else {
                0.0
            };
        }
    }
    (next, zf)
}

fn lambda_scale(prob: &FiniteProblem, mu: &[f64]) -> f64 {
    let mmax = mu.iter().cloned().fold(1.0, f64::max);
    prob.index()
        .iter()
        .map(|&(k, u)| {
            let g = crate::linalg::norm_sqr(prob.ch.h(k, u, k));
            prob.gamma[k] * prob.norm * mmax / g.max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

/// Multipliers at fixed `mu`, iterated from zero (or from `warm` when every
/// `mu_k > 0`, where the fixed point is unique).
pub fn finite_lambda(
    prob: &FiniteProblem,
    mu: &[f64],
    warm: Option<&[f64]>,
    opts: &FiniteDualOptions,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let opts = FiniteDualOptions {
        stop_above: None,
        ..*opts
    };
    iterate_lambda(prob, mu, warm, &opts).map(|it| (it.lambda, it.zf))
}

struct Iterate {
    lambda: Vec<f64>,
    zf: Vec<usize>,
    /// Stopped early: the objective of an iterate from zero, a lower bound
    /// of the fixed point's, passed `stop_above`.
    above: bool,
}

fn iterate_lambda(
    prob: &FiniteProblem,
    mu: &[f64],
    warm: Option<&[f64]>,
    opts: &FiniteDualOptions,
) -> Result<Iterate> {
    let n: usize = prob.ch.total_users();
    let interior = mu.iter().all(|&m| m > 0.0);
    let (mut lambda, from_zero) = match warm {
        Some(w) if interior => (w.to_vec(), false),
        _ => (vec![0.0; n], true),
    };
    let cap = opts.divergence_factor * lambda_scale(prob, mu);
    let mut checkpoint = f64::INFINITY;
    let mut residual = f64::INFINITY;
    let mut growing = 0;
    for it in 1..=opts.max_inner {
        let (next, zf) = map_lambda(prob, mu, &lambda);
        residual = next
            .iter()
            .zip(&lambda)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        lambda = next;
        if lambda.iter().any(|l| !l.is_finite() || *l > cap) {
            return Err(SolverError::Unbounded);
        }
        let scale = lambda.iter().cloned().fold(0.0, f64::max);
        if residual <= opts.tol_lambda * (1.0 + scale) {
            return Ok(Iterate {
                lambda,
                zf,
                above: false,
            });
        }
        if from_zero {
            if let Some(t) = opts.stop_above {
                if prob.objective(&lambda) > t {
                    return Ok(Iterate {
                        lambda,
                        zf,
                        above: true,
                    });
                }
            }
        }
        if it % NEWTON_PERIOD == 0 {
            let mut accelerated = false;
            if interior && residual > SLOW_CONTRACTION * checkpoint {
                let map = |x: &[f64]| map_lambda(prob, mu, x).0;
                if let Some(c) = newton_candidate(map, &lambda, residual) {
                    lambda = c;
                    accelerated = true;
                }
            }
            // A feasible iteration's steps shrink eventually; steps that keep
            // growing and defeat the Newton step mean no fixed point.
            growing = if !accelerated && residual > checkpoint {
                growing + 1
            } else {
                0
            };
            if growing >= GROWTH_PERIODS {
                return Err(SolverError::Unbounded);
            }
            checkpoint = residual;
        }
    }
    Err(SolverError::MaxIterations {
        what: "finite multiplier iteration",
        iterations: opts.max_inner,
        residual,
    })
}

/// Downlink powers and unit directions for the users with positive
/// multipliers.
#[derive(Clone, Debug, PartialEq)]
pub struct FinitePowers {
    /// `p[k][u]` with `w = sqrt(p / N) v / ||v||`; zero for zero-forcing cells.
    pub p: Vec<Vec<f64>>,
    /// Unit directions `v / ||v||`; zero vectors for zero-forcing cells.
    pub directions: Vec<Vec<Vec<C64>>>,
    pub bs_power: Vec<f64>,
    pub norm: f64,
}

impl FinitePowers {
    pub fn beamformers(&self) -> BeamformerSet {
        BeamformerSet {
            w: self
                .directions
                .iter()
                .zip(&self.p)
                .map(|(dirs, ps)| {
                    dirs.iter()
                        .zip(ps)
                        .map(|(d, p)| scaled_unit(d, p / self.norm))
                        .collect()
                })
                .collect(),
            pseudo_inverse_cells: Vec::new(),
            level_of: vec![0; self.p.len()],
        }
    }
}

/// Unit directions `Sigma_k^{-1} h^H / ||.||` for the cells in `cells`.
fn directions(
    prob: &FiniteProblem,
    mu: &[f64],
    lambda: &[f64],
    cells: &[usize],
) -> Result<Vec<Vec<Vec<C64>>>> {
    let zero = vec![C64::new(0.0, 0.0); prob.ch.nt];
    let mut out: Vec<Vec<Vec<C64>>> = prob
        .ch
        .users
        .iter()
        .map(|&u| vec![zero.clone(); u])
        .collect();
    for &k in cells {
        let s = covariance(prob, k, mu[k], lambda);
        let ch = Cholesky::factor(&s)?;
        for u in 0..prob.ch.users[k] {
            out[k][u] = scaled_unit(&ch.solve(&conj(prob.ch.h(k, u, k))), 1.0);
        }
    }
    Ok(out)
}

/// Solves the SINR equalities with fixed directions for the users of
/// `cells`: `q_b |h_b v_b|^2 - gamma_b sum_{a != b} q_a |h_b v_a|^2 =
/// gamma_b noise_b` with `q = p / N`.
pub(crate) fn powers_for_directions(
    prob: &FiniteProblem,
    dirs: &[Vec<Vec<C64>>],
    cells: &[usize],
) -> Result<FinitePowers> {
    let users: Vec<(usize, usize)> = cells
        .iter()
        .flat_map(|&k| (0..prob.ch.users[k]).map(move |u| (k, u)))
        .collect();
    let n = users.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for (r, &(k, u)) in users.iter().enumerate() {
        b[r] = prob.gamma[k] * prob.noise[k][u];
        for (c, &(j, v)) in users.iter().enumerate() {
            let g = dot(prob.ch.h(k, u, j), &dirs[j][v]).norm_sqr();
            a[r][c] = if r == c { g } else { -prob.gamma[k] * g };
        }
    }
    let q = solve_real(&a, &b)?;
    if q.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(SolverError::Unbounded);
    }
    let mut p: Vec<Vec<f64>> = prob.ch.users.iter().map(|&u| vec![0.0; u]).collect();
    let mut bs_power = vec![0.0; prob.cells()];
    for (&(k, u), qv) in users.iter().zip(&q) {
        p[k][u] = qv * prob.norm;
        bs_power[k] += qv;
    }
    Ok(FinitePowers {
        p,
        directions: dirs.to_vec(),
        bs_power,
        norm: prob.norm,
    })
}

fn flat_to_cells(prob: &FiniteProblem, lambda: &[f64]) -> Vec<Vec<f64>> {
    let offs = prob.offsets();
    prob.ch
        .users
        .iter()
        .zip(&offs)
        .map(|(&u, &o)| lambda[o..o + u].to_vec())
        .collect()
}

fn cells_to_flat(lambda: &[Vec<f64>]) -> Vec<f64> {
    lambda.iter().flatten().copied().collect()
}

/// Downlink power allocation for the users with positive multipliers,
/// directions `Sigma_{u,k}^{-1} h^H`.
pub fn finite_power_alloc(prob: &FiniteProblem, sol: &FiniteDualSolution) -> Result<FinitePowers> {
    let flat = cells_to_flat(&sol.lambda);
    let cells = sol.selfish_cells();
    let dirs = directions(prob, &sol.mu, &flat, &cells)?;
    powers_for_directions(prob, &dirs, &cells)
}

#[derive(Clone, Debug)]
struct Eval {
    mu: Vec<f64>,
    lambda: Vec<f64>,
    zf: Vec<usize>,
    objective: f64,
    grad: Vec<f64>,
    stop: Option<FiniteDualStatus>,
}

fn evaluate(
    prob: &FiniteProblem,
    mu: Vec<f64>,
    warm: Option<&[f64]>,
    opts: &FiniteDualOptions,
) -> Result<Eval> {
    let Iterate { lambda, zf, above } = iterate_lambda(prob, &mu, warm, opts)?;
    let objective = prob.objective(&lambda);
    if above {
        return Ok(Eval {
            grad: vec![0.0; mu.len()],
            mu,
            lambda,
            zf,
            objective,
            stop: Some(FiniteDualStatus::AboveThreshold),
        });
    }
    let cells: Vec<usize> = (0..prob.cells()).filter(|k| !zf.contains(k)).collect();
    let grad = if cells.is_empty() {
        vec![0.0; prob.cells()]
    } else {
        let dirs = directions(prob, &mu, &lambda, &cells)?;
        powers_for_directions(prob, &dirs, &cells)?.bs_power
    };
    let mut stop = None;
    if let Some(t) = opts.stop_above {
        if objective > t {
            stop = Some(FiniteDualStatus::AboveThreshold);
        }
    }
    if let Some(budget) = opts.certify_budget {
        if stop.is_none() && zf.is_empty() && grad.iter().all(|&p| p <= budget) {
            stop = Some(FiniteDualStatus::PrimalCertificate);
        }
    }
    Ok(Eval {
        mu,
        lambda,
        zf,
        objective,
        grad,
        stop,
    })
}

/// Maximization along `mu_i + mu_j = const` by bracketing the sign change
/// of `P_i - P_j`.
fn line_search(
    prob: &FiniteProblem,
    cur: Eval,
    i: usize,
    j: usize,
    opts: &FiniteDualOptions,
) -> Result<Eval> {
    let c = cur.mu[i] + cur.mu[j];
    if c <= 0.0 {
        return Ok(cur);
    }
    let point = |t: f64| {
        let mut m = cur.mu.clone();
        m[i] = t;
        m[j] = c - t;
        m
    };
    let mut warm = cur.lambda.clone();
    let (mut lo, mut hi) = (0.0, c);
    let mut d_lo: Option<f64> = None;
    let mut d_hi: Option<f64> = None;
    let mut best: Option<(Eval, f64)> = None;
    let mut last_side = 0i32;
    let mut x = if cur.mu[i] > 0.0 && cur.mu[j] > 0.0 {
        cur.mu[i]
    } else {
        0.5 * c
    };
    for _ in 0..opts.line_iters {
        let e = evaluate(prob, point(x), Some(&warm), opts)?;
        if e.stop.is_some() {
            return Ok(e);
        }
        warm.clone_from(&e.lambda);
        let d = e.grad[i] - e.grad[j];
        let scale = e.grad[i].abs() + e.grad[j].abs();
        let better = best.as_ref().map_or(true, |(_, bd)| d.abs() < bd.abs());
        if better {
            best = Some((e, d));
        }
        if d.abs() <= 1e-13 * scale {
            break;
        }
        if d > 0.0 {
            lo = x;
            if last_side == 1 {
                if let Some(dh) = d_hi.as_mut() {
                    *dh *= 0.5;
                }
            }
            d_lo = Some(d);
            last_side = 1;
        } else {
            hi = x;
            if last_side == -1 {
                if let Some(dl) = d_lo.as_mut() {
                    *dl *= 0.5;
                }
            }
            d_hi = Some(d);
            last_side = -1;
        }
        if hi - lo <= 1e-14 * c {
            break;
        }
        x = match (d_lo, d_hi) {
            (Some(a), Some(b)) => {
                let t = lo + (hi - lo) * a / (a - b);
                if t > lo && t < hi {
                    t
                } else {
                    0.5 * (lo + hi)
                }
            }
            (Some(_), None) => hi - 0.1 * (hi - lo),
            (None, Some(_)) => lo + 0.1 * (hi - lo),
            (None, None) => 0.5 * (lo + hi),
        };
    }
    let candidate = match (d_lo, d_hi) {
        (Some(_), None) => evaluate(prob, point(c), None, opts)?,
        (None, Some(_)) => evaluate(prob, point(0.0), None, opts)?,
        _ => best.map(|(e, _)| e).expect("at least one evaluation"),
    };
    if candidate.stop.is_some()
        || candidate.objective >= cur.objective - 1e-13 * cur.objective.abs()
    {
        Ok(candidate)
    } else {
        Ok(cur)
    }
}

fn finish(
    prob: &FiniteProblem,
    e: Eval,
    status: FiniteDualStatus,
    sweeps: usize,
) -> FiniteDualSolution {
    FiniteDualSolution {
        lambda: flat_to_cells(prob, &e.lambda),
        mu: e.mu,
        zf_cells: e.zf,
        objective: e.objective,
        status,
        sweeps,
    }
}

/// Solves the finite dual from `mu = 1`.
pub fn finite_dual_solve(
    prob: &FiniteProblem,
    opts: &FiniteDualOptions,
) -> Result<FiniteDualSolution> {
    let l = prob.cells();
    if prob.gamma.len() != l || prob.gamma.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(SolverError::Usage(
            "targets must be positive, one per cell".into(),
        ));
    }
    let mut cur = evaluate(prob, vec![1.0; l], None, opts)?;
    if let Some(s) = cur.stop {
        return Ok(finish(prob, cur, s, 0));
    }
    if l == 1 {
        return Ok(finish(prob, cur, FiniteDualStatus::Optimal, 0));
    }
    for sweep in 1..=opts.max_sweeps {
        let start_obj = cur.objective;
        let start_mu = cur.mu.clone();
        for i in 0..l {
            for j in i + 1..l {
                cur = line_search(prob, cur, i, j, opts)?;
                if let Some(s) = cur.stop {
                    return Ok(finish(prob, cur, s, sweep));
                }
            }
        }
        let gain = cur.objective - start_obj;
        let moved = cur
            .mu
            .iter()
            .zip(&start_mu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if gain <= opts.tol_obj * (1.0 + cur.objective.abs()) && moved <= opts.tol_mu {
            return Ok(finish(prob, cur, FiniteDualStatus::Optimal, sweep));
        }
    }
    Err(SolverError::NonConvergence {
        sweeps: opts.max_sweeps,
        best_objective: cur.objective,
        best_mu: cur.mu,
    })
}

/// Optimal beamformers of the finite min-max problem with their levels.
#[derive(Clone, Debug)]
pub struct FiniteNested {
    pub duals: Vec<FiniteDualSolution>,
    /// Original cell indices served at each level.
    pub level_cells: Vec<Vec<usize>>,
    pub beams: BeamformerSet,
    /// Top-level dual value, equal to `L` times the optimal max BS power.
    pub dual_value: f64,
}

impl FiniteNested {
    pub fn max_bs_power(&self) -> f64 {
        self.beams.bs_powers().into_iter().fold(0.0, f64::max)
    }
}

/// Default depth of the finite recursion: the top level and one level of
/// zero-forcing cells.
pub const DEFAULT_FINITE_LEVELS: usize = 2;

/// Finite optimum with the nested zero-forcing recursion: cells that are
/// rank deficient at the top level are re-solved in the null space of the
/// selfish users' channels, with the selfish interference as noise.
pub fn finite_nested_solve(
    ch: &ChannelSet,
    gamma: &[f64],
    sigma2: f64,
    max_levels: usize,
    opts: &FiniteDualOptions,
) -> Result<FiniteNested> {
    let opts = FiniteDualOptions {
        stop_above: None,
        certify_budget: None,
        ..*opts
    };
    let mut beams = BeamformerSet::zeros(ch);
    let mut duals = Vec::new();
    let mut level_cells = Vec::new();
    let mut cells: Vec<usize> = (0..ch.cells()).collect();
    let mut served: Vec<usize> = Vec::new();
    let mut dual_value = 0.0;
    while !cells.is_empty() {
        let level = duals.len();
        if level >= max_levels {
            return Err(SolverError::Usage(format!(
                "finite recursion needs more than {max_levels} levels"
            )));
        }
        // Null-space bases of the earlier selfish users, per BS.
        let bases: Vec<Option<CMatrix>> = cells
            .iter()
            .map(|&k| super::beamform::zero_forcing_basis(ch, k, &served))
            .collect::<Result<_>>()?;
        let dim = bases[0].as_ref().map_or(ch.nt, |b| b.cols());
        let h: Vec<Vec<Vec<Vec<C64>>>> = cells
            .iter()
            .map(|&k| {
                (0..ch.users[k])
                    .map(|u| {
                        cells
                            .iter()
                            .zip(&bases)
                            .map(|(&j, b)| match b {
                                Some(b) => super::beamform::project_row(ch.h(k, u, j), b),
                                None => ch.h(k, u, j).to_vec(),
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let sub = ChannelSet::from_vectors(dim, h)?;
        let noise: Vec<Vec<f64>> = cells
            .iter()
            .map(|&k| {
                (0..ch.users[k])
                    .map(|u| {
                        super::beamform::noise_plus_interference(ch, &beams, sigma2, k, u, &served)
                    })
                    .collect()
            })
            .collect();
        let prob = FiniteProblem {
            ch: sub,
            gamma: cells.iter().map(|&k| gamma[k]).collect(),
            noise,
            norm: dim as f64,
        };
        let sol = finite_dual_solve(&prob, &opts)?;
        if level == 0 {
            dual_value = sol.objective;
        }
        let powers = finite_power_alloc(&prob, &sol)?;
        let reduced = powers.beamformers();
        let selfish_local = sol.selfish_cells();
        for &lk in &selfish_local {
            let k = cells[lk];
            beams.level_of[k] = level;
            for u in 0..ch.users[k] {
                beams.w[k][u] = match &bases[lk] {
                    Some(b) => b.mul_vec(&reduced.w[lk][u]),
                    None => reduced.w[lk][u].clone(),
                };
            }
        }
        if selfish_local.is_empty() {
            return Err(SolverError::Internal(
                "no selfish cell at a finite level".into(),
            ));
        }
        level_cells.push(
            selfish_local
                .iter()
                .map(|&lk| cells[lk])
                .collect::<Vec<_>>(),
        );
        served.extend(selfish_local.iter().map(|&lk| cells[lk]));
        cells = sol.zf_cells.iter().map(|&lk| cells[lk]).collect();
        duals.push(sol);
    }
    Ok(FiniteNested {
        duals,
        level_cells,
        beams,
        dual_value,
    })
}

/// Relative gap between `L` times the max BS power of the finite optimum
/// and the dual value.
pub fn duality_gap(nested: &FiniteNested, cells: usize) -> f64 {
    let primal = cells as f64 * nested.max_bs_power();
    (primal - nested.dual_value).abs() / nested.dual_value.abs().max(f64::MIN_POSITIVE)
}

/// Whether the targets `gamma` are met with every BS power at most
/// `p_budget`. The search stops early on either certificate; otherwise the
/// optimal dual value `L P*` is compared with `L p_budget`.
pub fn finite_feasible(ch: &ChannelSet, gamma: &[f64], sigma2: f64, p_budget: f64) -> Result<bool> {
    let l = ch.cells() as f64;
    let prob = FiniteProblem::new(ch.clone(), gamma.to_vec(), sigma2);
    let opts = FiniteDualOptions {
        stop_above: Some(l * p_budget),
        certify_budget: Some(p_budget),
        ..Default::default()
    };
    match finite_dual_solve(&prob, &opts) {
        Ok(sol) => Ok(match sol.status {
            FiniteDualStatus::AboveThreshold => false,
            FiniteDualStatus::PrimalCertificate => true,
            FiniteDualStatus::Optimal => sol.objective <= l * p_budget,
        }),
        Err(e) if e.is_infeasible() => Ok(false),
        Err(e) => Err(e),
    }
}
