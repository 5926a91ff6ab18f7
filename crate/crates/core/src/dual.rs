//! The large-system dual: maximize `sum_k noise_k beta_k lambda_k` over
//! `mu >= 0, sum mu = L` with `lambda = F(lambda, mu)`, by pairwise
//! coordinate moves along `mu_i + mu_j = const`.
//!
//! Along a pair the dual objective is concave and its derivative is
//! `P_i - P_j`, where `P` solves the power system of [`crate::power`]. The
//! line search brackets the sign change of that derivative and refines it
//! with an Illinois step, falling back to the segment end when the sign
//! never changes.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::fixed_point::{
    iterate_from, lambda_fixed_point, map_residual, FixedPointOptions, FixedPointStatus,
};
use crate::model::{DualPoint, KktPass, KktReport, Network, SystemConfig};
use crate::power::powers_at;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualOptions {
    pub fixed_point: FixedPointOptions,
    /// Fixed-point tolerance used inside the line search, tighter than the
    /// reporting tolerance so that the derivative sign is reliable.
    pub line_tol_lambda: f64,
    pub max_sweeps: usize,
    /// Maximum derivative evaluations per pair.
    pub line_iters: usize,
    /// A sweep converges when the objective gain is below
    /// `tol_obj * (1 + |objective|)` and no `mu_k` moved by more than
    /// `tol_mu`.
    pub tol_obj: f64,
    pub tol_mu: f64,
    /// Cells with `lambda_k > tol_partition * max lambda` are selfish.
    pub tol_partition: f64,
}

impl Default for DualOptions {
    fn default() -> Self {
        DualOptions {
            fixed_point: FixedPointOptions::default(),
            line_tol_lambda: 1e-14,
            max_sweeps: 2000,
            line_iters: 200,
            tol_obj: 1e-10,
            tol_mu: 1e-11,
            tol_partition: 1e-7,
        }
    }
}

/// Tolerances of the optimality check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktTolerances {
    /// `||lambda - F||_inf <= fixed_point * (1 + ||lambda||_inf)`.
    pub fixed_point: f64,
    pub mu_sum: f64,
    /// `x_k >= -x_nonnegative`.
    pub x_nonnegative: f64,
    pub slackness: f64,
}

impl Default for KktTolerances {
    fn default() -> Self {
        KktTolerances {
            fixed_point: 1e-8,
            mu_sum: 1e-8,
            x_nonnegative: 1e-8,
            slackness: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Eval {
    mu: Vec<f64>,
    lambda: Vec<f64>,
    objective: f64,
}

fn status_to_result(r: crate::fixed_point::LambdaFixedPointResult) -> Result<Vec<f64>> {
    match r.status {
        FixedPointStatus::Converged => Ok(r.lambda),
        FixedPointStatus::Unbounded => Err(SolverError::Unbounded),
        FixedPointStatus::MaxIterations => Err(SolverError::MaxIterations {
            what: "lambda fixed point",
            iterations: r.iterations,
            residual: r.residual,
        }),
    }
}

fn evaluate(net: &Network, mu: Vec<f64>, warm: Option<&[f64]>, opts: &DualOptions) -> Result<Eval> {
    let fp = FixedPointOptions {
        tol_lambda: opts.line_tol_lambda,
        ..opts.fixed_point
    };
    // With every mu_k > 0 the fixed point is unique and any start converges.
    let lambda = match warm {
        Some(w) if mu.iter().all(|&m| m > 0.0) => {
            status_to_result(iterate_from(net, &mu, w.to_vec(), &fp, false))?
        }
        _ => status_to_result(lambda_fixed_point(net, &mu, &fp))?,
    };
    Ok(Eval {
        objective: net.objective(&lambda),
        mu,
        lambda,
    })
}

/// Dual function value `g(mu)` and the maximizing fixed point.
pub fn dual_value(net: &Network, mu: &[f64], opts: &DualOptions) -> Result<(f64, Vec<f64>)> {
    let e = evaluate(net, mu.to_vec(), None, opts)?;
    Ok((e.objective, e.lambda))
}

/// Gradient of `g` with respect to the `mu_k` of cells with positive
/// `lambda`; zero elsewhere.
pub fn dual_gradient(net: &Network, mu: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    let selfish: Vec<usize> = (0..net.len()).filter(|&k| lambda[k] > 0.0).collect();
    let mut grad = vec![0.0; net.len()];
    if selfish.is_empty() {
        return Ok(grad);
    }
    for (p, &k) in powers_at(net, mu, lambda, &selfish)?.iter().zip(&selfish) {
        grad[k] = *p;
    }
    Ok(grad)
}

/// Exact maximization of `g` along `mu_i + mu_j = c`.
fn line_search(net: &Network, cur: Eval, i: usize, j: usize, opts: &DualOptions) -> Result<Eval> {
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
    let mut deriv = |t: f64| -> Result<(Eval, f64, f64)> {
        let e = evaluate(net, point(t), Some(&warm), opts)?;
        let g = dual_gradient(net, &e.mu, &e.lambda)?;
        warm.clone_from(&e.lambda);
        Ok((e, g[i] - g[j], g[i].abs() + g[j].abs()))
    };

    let (mut lo, mut hi) = (0.0, c);
    let mut d_lo: Option<f64> = None;
    let mut d_hi: Option<f64> = None;
    let mut best: Option<(Eval, f64)> = None;
    // +1 when the lower end moved last, -1 for the upper end.
    let mut last_side = 0i32;
    let mut x = if cur.mu[i] > 0.0 && cur.mu[j] > 0.0 {
        cur.mu[i]
    } else {
        0.5 * c
    };
    for _ in 0..opts.line_iters {
        let (e, d, scale) = deriv(x)?;
        let better = best.as_ref().map_or(true, |(_, bd)| d.abs() < bd.abs());
        let done = d.abs() <= 1e-14 * scale;
        if better {
            best = Some((e, d));
        }
        if done {
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
        if hi - lo <= 1e-15 * c {
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
            // Only one sign seen: step geometrically toward the unexplored end.
            (Some(_), None) => hi - 0.1 * (hi - lo),
            (None, Some(_)) => lo + 0.1 * (hi - lo),
            (None, None) => 0.5 * (lo + hi),
        };
    }

    let candidate = match (d_lo, d_hi) {
        (Some(_), None) => evaluate(net, point(c), None, opts)?,
        (None, Some(_)) => evaluate(net, point(0.0), None, opts)?,
        _ => best.map(|(e, _)| e).expect("at least one evaluation"),
    };
    if candidate.objective >= cur.objective - 1e-13 * cur.objective.abs() {
        Ok(candidate)
    } else {
        Ok(cur)
    }
}

/// Solves the dual of a working network from `mu = 1`.
pub fn solve_network(net: &Network, opts: &DualOptions) -> Result<DualPoint> {
    solve_network_from(net, vec![1.0; net.len()], opts)
}

/// Solves the dual of a working network from a given feasible `mu0`.
pub fn solve_network_from(net: &Network, mu0: Vec<f64>, opts: &DualOptions) -> Result<DualPoint> {
    let n = net.len();
    if n == 0 {
        return Err(SolverError::Internal("empty network".into()));
    }
    let mut cur = evaluate(net, mu0, None, opts)?;
    if n > 1 {
        let mut converged = false;
        for _ in 0..opts.max_sweeps {
            let start = cur.clone();
            for i in 0..n {
                for j in i + 1..n {
                    cur = line_search(net, cur, i, j, opts)?;
                }
            }
            let gain = cur.objective - start.objective;
            debug_assert!(
                gain >= -1e-12 * (1.0 + start.objective.abs()),
                "sweep decreased objective"
            );
            let moved = cur
                .mu
                .iter()
                .zip(&start.mu)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if gain <= opts.tol_obj * (1.0 + cur.objective.abs()) && moved <= opts.tol_mu {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(SolverError::NonConvergence {
                sweeps: opts.max_sweeps,
                best_objective: cur.objective,
                best_mu: cur.mu,
            });
        }
    }
    Ok(DualPoint::new(net, cur.mu, cur.lambda, opts.tol_partition))
}

/// Solves the dual of a configuration with default options.
pub fn solve_dual(cfg: &SystemConfig) -> Result<DualPoint> {
    solve_dual_with(cfg, &DualOptions::default())
}

pub fn solve_dual_with(cfg: &SystemConfig, opts: &DualOptions) -> Result<DualPoint> {
    cfg.validated()?;
    if let Some((cell, &margin)) = cfg
        .cell_margin()
        .iter()
        .enumerate()
        .find(|(_, m)| **m <= 0.0)
    {
        return Err(SolverError::IsolatedCellInfeasible { cell, margin });
    }
    solve_network(&Network::from_config(cfg), opts)
}

/// Checks the dual optimality conditions given the BS powers of the
/// selfish cells (ordered like `dual.selfish`).
pub fn verify_kkt(
    net: &Network,
    dual: &DualPoint,
    powers: &[f64],
    tol: &KktTolerances,
) -> KktReport {
    let n = net.len() as f64;
    let z = dual.objective / n;
    let x: Vec<f64> = powers.iter().map(|p| z - p).collect();
    let residual_lambda = map_residual(net, &dual.lambda, &dual.mu);
    let residual_mu_sum = (dual.mu_sum() - n).abs();
    let complementary_slackness = dual
        .selfish
        .iter()
        .zip(&x)
        .map(|(&k, xk)| (dual.mu[k] * xk).abs())
        .fold(0.0, f64::max);
    let min_x = x.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda_norm = dual.lambda.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let pass = KktPass {
        fixed_point: residual_lambda <= tol.fixed_point * (1.0 + lambda_norm),
        mu_sum: residual_mu_sum <= tol.mu_sum,
        x_nonnegative: min_x >= -tol.x_nonnegative,
        slackness: complementary_slackness <= tol.slackness,
    };
    KktReport {
        z,
        x,
        residual_lambda,
        residual_mu_sum,
        complementary_slackness,
        min_x,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power::solve_bs_powers;

    fn two_cell_cfg(beta: [f64; 2], gamma: [f64; 2]) -> SystemConfig {
        SystemConfig {
            cells: 2,
            beta: beta.to_vec(),
            eps: vec![vec![2.0, 0.5], vec![0.7, 1.8]],
            gamma: gamma.to_vec(),
            sigma2: 1.0,
            p_budget: 10.0,
        }
    }

    #[test]
    fn isolated_cell() {
        let cfg = SystemConfig {
            cells: 1,
            beta: vec![0.5],
            eps: vec![vec![1.0]],
            gamma: vec![1.0],
            sigma2: 1.0,
            p_budget: 1.0,
        };
        let d = solve_dual(&cfg).unwrap();
        assert_eq!(d.mu, vec![1.0]);
        assert!((d.lambda[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((d.objective - 2.0 / 3.0).abs() < 1e-12);
        let net = Network::from_config(&cfg);
        let p = solve_bs_powers(&net, &d).unwrap();
        let r = verify_kkt(&net, &d, &p, &KktTolerances::default());
        assert!((r.z - 2.0 / 3.0).abs() < 1e-12);
        assert!(r.x[0].abs() < 1e-12);
        assert!(r.pass.all());
    }

    #[test]
    fn zero_forcing_case() {
        let d = solve_dual(&two_cell_cfg([0.1, 0.5], [5.0, 5.0])).unwrap();
        assert_eq!(d.mu[0], 0.0);
        assert_eq!(d.mu[1], 2.0);
        assert_eq!(d.lambda[0], 0.0);
        assert!((d.lambda[1] - 10.0 / 1.05).abs() < 1e-9);
        assert_eq!(d.selfish, vec![1]);
        assert_eq!(d.altruistic, vec![0]);
        let cfg = two_cell_cfg([0.1, 0.5], [5.0, 5.0]);
        let net = Network::from_config(&cfg);
        let p = solve_bs_powers(&net, &d).unwrap();
        let r = verify_kkt(&net, &d, &p, &KktTolerances::default());
        assert!((r.z - 0.5 * d.lambda[1] / 2.0).abs() < 1e-12);
        assert!(r.x[0].abs() < 1e-9);
        assert!(r.pass.all(), "{r:?}");
    }

    #[test]
    fn symmetric_two_cell() {
        let cfg = SystemConfig {
            cells: 2,
            beta: vec![0.4, 0.4],
            eps: vec![vec![1.5, 0.3], vec![0.3, 1.5]],
            gamma: vec![3.0, 3.0],
            sigma2: 1.0,
            p_budget: 1.0,
        };
        let d = solve_dual(&cfg).unwrap();
        assert!((d.mu[0] - 1.0).abs() < 1e-10);
        assert!((d.lambda[0] - d.lambda[1]).abs() < 1e-10 * d.lambda[0]);
    }

    #[test]
    fn perturbed_dual_fails_fixed_point_check() {
        let cfg = two_cell_cfg([0.55, 0.5], [5.0, 5.0]);
        let net = Network::from_config(&cfg);
        let mut d = solve_dual(&cfg).unwrap();
        let p = solve_bs_powers(&net, &d).unwrap();
        d.lambda.iter_mut().for_each(|l| *l *= 1.01);
        let r = verify_kkt(&net, &d, &p, &KktTolerances::default());
        assert!(!r.pass.fixed_point);
        assert!(!r.pass.all());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = two_cell_cfg([0.55, 0.5], [5.0, 5.0]);
        let net = Network::from_config(&cfg);
        let opts = DualOptions::default();
        for mu in [[0.7, 1.3], [1.2, 0.8], [0.3, 1.1]] {
            let (_, lambda) = dual_value(&net, &mu, &opts).unwrap();
            let g = dual_gradient(&net, &mu, &lambda).unwrap();
            for k in 0..2 {
                let h = 1e-6;
                let mut up = mu;
                up[k] += h;
                let mut dn = mu;
                dn[k] -= h;
                let fd = (dual_value(&net, &up, &opts).unwrap().0
                    - dual_value(&net, &dn, &opts).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6 * g[k].abs(), "{fd} vs {}", g[k]);
            }
            // Euler identity of a degree-one homogeneous function
            let euler: f64 = mu.iter().zip(&g).map(|(m, p)| m * p).sum();
            let value = net.objective(&lambda);
            assert!((euler - value).abs() < 1e-10 * value);
        }
    }

    #[test]
    fn concave_along_pair() {
        let net = Network::from_config(&two_cell_cfg([0.55, 0.5], [5.0, 5.0]));
        let opts = DualOptions::default();
        let g: Vec<f64> = (0..=40)
            .map(|i| {
                let t = 2.0 * i as f64 / 40.0;
                dual_value(&net, &[t, 2.0 - t], &opts).unwrap().0
            })
            .collect();
        for w in g.windows(3) {
            assert!(w[0] + w[2] <= 2.0 * w[1] + 1e-9 * w[1]);
        }
    }

    #[test]
    fn three_cells_from_distinct_starts_agree() {
        let cfg = SystemConfig {
            cells: 3,
            beta: vec![0.3, 0.2, 0.25],
            eps: vec![
                vec![1.5, 0.3, 0.2],
                vec![0.4, 1.2, 0.3],
                vec![0.1, 0.5, 1.0],
            ],
            gamma: vec![2.0, 3.0, 1.5],
            sigma2: 1.0,
            p_budget: 1.0,
        };
        let net = Network::from_config(&cfg);
        let opts = DualOptions::default();
        let a = solve_network(&net, &opts).unwrap();
        let b = solve_network_from(&net, vec![3.0, 0.0, 0.0], &opts).unwrap();
        for k in 0..3 {
            assert!((a.mu[k] - b.mu[k]).abs() < 1e-6);
            assert!((a.lambda[k] - b.lambda[k]).abs() < 1e-6 * (1.0 + a.lambda[k]));
        }
        let p = solve_bs_powers(&net, &a).unwrap();
        let r = verify_kkt(&net, &a, &p, &KktTolerances::default());
        assert!(r.pass.all(), "{r:?}");
    }

    #[test]
    fn unbounded_is_infeasible() {
        // Strong cross gains with near-critical loadings.
        let cfg = SystemConfig {
            cells: 2,
            beta: vec![0.9, 0.9],
            eps: vec![vec![1.0, 5.0], vec![5.0, 1.0]],
            gamma: vec![1.0, 1.0],
            sigma2: 1.0,
            p_budget: 1.0,
        };
        let e = solve_dual(&cfg).unwrap_err();
        assert!(e.is_infeasible(), "{e:?}");
    }
}
