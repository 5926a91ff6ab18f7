//! Power control with fixed beam directions.
//!
//! With unit directions `d_{u,k}` fixed, the SINR targets become the linear
//! fixed point `q_b = gamma_b (noise_b + sum_{a != b} q_a G_{b,a}) / G_{b,b}`
//! in the per-user powers `q = ||w||^2`, iterated from zero. The iterates
//! increase monotonically, so a BS passing the budget ends the search.

use crate::error::{Result, SolverError};
use crate::linalg::{dot, solve_real, C64};

use super::beamform::{scaled_unit, BeamformerSet};
use super::channels::ChannelSet;

#[derive(Clone, Debug, PartialEq)]
pub enum PowerControl {
    Feasible {
        /// `q[k][u] = ||w_{u,k}||^2`.
        q: Vec<Vec<f64>>,
        bs_power: Vec<f64>,
    },
    /// No powers within the budget meet the targets.
    Infeasible,
}

impl PowerControl {
    pub fn is_feasible(&self) -> bool {
        matches!(self, PowerControl::Feasible { .. })
    }
}

const MAX_ITERATIONS: usize = 10_000;
const EXACT_PERIOD: usize = 25;
const TOL: f64 = 1e-12;

/// Beamformers `sqrt(q) d` from powers and unit directions.
pub fn apply_powers(directions: &[Vec<Vec<C64>>], q: &[Vec<f64>]) -> BeamformerSet {
    BeamformerSet {
        w: directions
            .iter()
            .zip(q)
            .map(|(dk, qk)| dk.iter().zip(qk).map(|(d, p)| scaled_unit(d, *p)).collect())
            .collect(),
        pseudo_inverse_cells: Vec::new(),
        level_of: vec![0; q.len()],
    }
}

/// Minimal powers meeting `gamma` with the given unit `directions`
/// (`directions[k][u]`), or `Infeasible` when the iteration diverges or a
/// BS needs more than `p_budget`.
pub fn power_control_only(
    ch: &ChannelSet,
    directions: &[Vec<Vec<C64>>],
    gamma: &[f64],
    sigma2: f64,
    p_budget: f64,
) -> Result<PowerControl> {
    let l = ch.cells();
    if directions.len() != l || gamma.len() != l {
        return Err(SolverError::Usage(
            "one direction set and target per cell".into(),
        ));
    }
    let users: Vec<(usize, usize)> = (0..l)
        .flat_map(|k| (0..ch.users[k]).map(move |u| (k, u)))
        .collect();
    let n = users.len();
    // gains[b][a] = |h_{b, cell(a)} d_a|^2
    let gains: Vec<Vec<f64>> = users
        .iter()
        .map(|&(k, u)| {
            users
                .iter()
                .map(|&(j, v)| dot(ch.h(k, u, j), &directions[j][v]).norm_sqr())
                .collect()
        })
        .collect();
    if (0..n).any(|b| gains[b][b] <= 0.0) {
        return Ok(PowerControl::Infeasible);
    }
    let target = |b: usize| gamma[users[b].0];
    let bs_power = |q: &[f64]| {
        let mut p = vec![0.0; l];
        for (&(k, _), qv) in users.iter().zip(q) {
            p[k] += qv;
        }
        p
    };
    let over_budget = |q: &[f64]| bs_power(q).iter().any(|&p| p > p_budget);
    let finish = |q: Vec<f64>| {
        let bs = bs_power(&q);
        let mut out: Vec<Vec<f64>> = ch.users.iter().map(|&u| Vec::with_capacity(u)).collect();
        for (&(k, _), qv) in users.iter().zip(q) {
            out[k].push(qv);
        }
        PowerControl::Feasible {
            q: out,
            bs_power: bs,
        }
    };

    let mut q = vec![0.0; n];
    for it in 1..=MAX_ITERATIONS {
        let next: Vec<f64> = (0..n)
            .map(|b| {
                let interference: f64 =
                    (0..n).filter(|&a| a != b).map(|a| q[a] * gains[b][a]).sum();
                target(b) * (sigma2 + interference) / gains[b][b]
            })
            .collect();
        let change = next
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = next.iter().cloned().fold(0.0, f64::max);
        q = next;
        if over_budget(&q) {
            return Ok(PowerControl::Infeasible);
        }
        if change <= TOL * scale {
            return Ok(finish(q));
        }
        if it % EXACT_PERIOD == 0 {
            // A positive solution of the linear system is the limit of the
            // iteration; none exists when the spectral radius reaches one.
            let a: Vec<Vec<f64>> = (0..n)
                .map(|b| {
                    (0..n)
                        .map(|c| {
                            if b == c {
                                gains[b][b]
                            } else {
                                -target(b) * gains[b][c]
                            }
                        })
                        .collect()
                })
                .collect();
            let rhs: Vec<f64> = (0..n).map(|b| target(b) * sigma2).collect();
            match solve_real(&a, &rhs) {
                Ok(x) if x.iter().all(|v| v.is_finite() && *v > 0.0) => {
                    return Ok(if over_budget(&x) {
                        PowerControl::Infeasible
                    } else {
                        finish(x)
                    });
                }
                _ => return Ok(PowerControl::Infeasible),
            }
        }
    }
    Ok(PowerControl::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::beamform::compute_sinr;
    use crate::finite::channels::draw_channels;
    use crate::finite::dual::{
        finite_dual_solve, finite_power_alloc, FiniteDualOptions, FiniteProblem,
    };
    use crate::SystemConfig;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn orthogonal_single_cell() {
        let h = vec![vec![vec![vec![c(2.0), c(0.0)]], vec![vec![c(0.0), c(1.0)]]]];
        let ch = ChannelSet::from_vectors(2, h).unwrap();
        let d = vec![vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)]]];
        let out = power_control_only(&ch, &d, &[3.0], 0.5, 10.0).unwrap();
        match out {
            PowerControl::Feasible { q, bs_power } => {
                assert!((q[0][0] - 3.0 * 0.5 / 4.0).abs() < 1e-14);
                assert!((q[0][1] - 3.0 * 0.5).abs() < 1e-14);
                assert!((bs_power[0] - 1.875).abs() < 1e-14);
            }
            PowerControl::Infeasible => panic!("expected feasible"),
        }
        let tight = power_control_only(&ch, &d, &[3.0], 0.5, 1.8).unwrap();
        assert_eq!(tight, PowerControl::Infeasible);
    }

    fn cfg() -> SystemConfig {
        SystemConfig {
            cells: 2,
            beta: vec![0.5, 0.75],
            eps: vec![vec![2.1, 0.6], vec![0.8, 1.6]],
            gamma: vec![1.5, 1.2],
            sigma2: 1.0,
            p_budget: 10.0,
        }
    }

    #[test]
    fn matches_optimal_allocation() {
        let cf = cfg();
        let ch = draw_channels(&cf, 4, &[2, 3], 12, 0).unwrap();
        let prob = FiniteProblem::new(ch.clone(), cf.gamma.clone(), 1.0);
        let sol = finite_dual_solve(&prob, &FiniteDualOptions::default()).unwrap();
        let p = finite_power_alloc(&prob, &sol).unwrap();
        let out = power_control_only(&ch, &p.directions, &cf.gamma, 1.0, 1e6).unwrap();
        let PowerControl::Feasible { q, bs_power } = out else {
            panic!("expected feasible")
        };
        for k in 0..2 {
            assert!((bs_power[k] / p.bs_power[k] - 1.0).abs() < 1e-9);
            for u in 0..ch.users[k] {
                assert!((q[k][u] * prob.norm / p.p[k][u] - 1.0).abs() < 1e-9);
            }
        }
        let s = compute_sinr(&ch, &apply_powers(&p.directions, &q), 1.0);
        for k in 0..2 {
            for u in 0..ch.users[k] {
                assert!((s[k][u] / cf.gamma[k] - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn excessive_targets_are_infeasible() {
        let cf = cfg();
        let ch = draw_channels(&cf, 4, &[2, 3], 12, 0).unwrap();
        let prob = FiniteProblem::new(ch.clone(), cf.gamma.clone(), 1.0);
        let sol = finite_dual_solve(&prob, &FiniteDualOptions::default()).unwrap();
        let p = finite_power_alloc(&prob, &sol).unwrap();
        let out = power_control_only(&ch, &p.directions, &[500.0, 500.0], 1.0, 1e12).unwrap();
        assert_eq!(out, PowerControl::Infeasible);
    }
}
