//! Base-station powers from a dual optimum, noise handed to altruistic
//! cells, and the nested zero-forcing recursion.

use serde::{Deserialize, Serialize};

use crate::dual::{solve_network, DualOptions};
use crate::error::{Result, SolverError};
use crate::linalg::solve_real;
use crate::model::{DualPoint, Level, NestedSolution, Network, SystemConfig};

/// Coupling `1 + lambda_j eps_jk gamma_k / (eps_kk lambda_k)` between a
/// selfish interferer `j` and a selfish cell `k`.
fn coupling(net: &Network, lambda: &[f64], j: usize, k: usize) -> f64 {
    1.0 + lambda[j] * net.eps[j][k] * net.gamma[k] / (net.eps[k][k] * lambda[k])
}

fn check_selfish(dual: &DualPoint) -> Result<()> {
    if dual.selfish.is_empty() {
        return Err(SolverError::Internal("empty selfish set".into()));
    }
    if let Some(&k) = dual.selfish.iter().find(|&&k| !(dual.lambda[k] > 0.0)) {
        return Err(SolverError::Internal(format!(
            "selfish cell {k} has nonpositive lambda"
        )));
    }
    Ok(())
}

/// `gamma'_k` for each selfish cell, ordered like `dual.selfish`.
pub fn gamma_prime(net: &Network, dual: &DualPoint) -> Result<Vec<f64>> {
    check_selfish(dual)?;
    let lambda = &dual.lambda;
    Ok(dual
        .selfish
        .iter()
        .map(|&k| {
            let (mut num, mut den) = (dual.mu[k], dual.mu[k]);
            for &j in &dual.selfish {
                let t = net.beta[j] * lambda[j] * net.eps[j][k];
                let c = coupling(net, lambda, j, k);
                num += t / c;
                den += t / (c * c);
            }
            net.gamma[k] * num / den
        })
        .collect())
}

/// The linear system `A p = b` over the selfish cells whose solution is
/// the vector of BS powers; at a non-optimal `mu` it is the gradient of the
/// dual objective with respect to the selfish `mu_k`.
pub fn power_system(
    net: &Network,
    mu: &[f64],
    lambda: &[f64],
    selfish: &[usize],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = selfish.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for (r, &k) in selfish.iter().enumerate() {
        let mut diag = mu[k];
        for &j in selfish.iter().filter(|&&j| j != k) {
            let c = coupling(net, lambda, j, k);
            diag += net.beta[j] * lambda[j] * net.eps[j][k] / (c * c);
        }
        a[r][r] = diag;
        for (s, &l) in selfish.iter().enumerate().filter(|(_, &l)| l != k) {
            let d = net.eps[l][l] * lambda[l] + lambda[k] * net.eps[k][l] * net.gamma[l];
            a[r][s] =
                -net.eps[k][l] * lambda[k] * net.beta[k] * (net.eps[l][l] * lambda[l]).powi(2)
                    / (d * d);
        }
        b[r] = lambda[k] * net.beta[k] * net.noise[k];
    }
    (a, b)
}

/// Solves [`power_system`]; `P_k` ordered like `selfish`.
pub fn powers_at(net: &Network, mu: &[f64], lambda: &[f64], selfish: &[usize]) -> Result<Vec<f64>> {
    let (a, b) = power_system(net, mu, lambda, selfish);
    solve_real(&a, &b).map_err(|e| SolverError::Internal(format!("power system: {e}")))
}

/// BS powers `P_k` of the selfish cells, ordered like `dual.selfish`.
pub fn solve_bs_powers(net: &Network, dual: &DualPoint) -> Result<Vec<f64>> {
    check_selfish(dual)?;
    powers_at(net, &dual.mu, &dual.lambda, &dual.selfish)
}

/// Noise plus selfish interference at each altruistic cell, ordered like
/// `dual.altruistic`.
pub fn altruistic_noise(net: &Network, dual: &DualPoint, powers: &[f64]) -> Vec<f64> {
    dual.altruistic
        .iter()
        .map(|&k| {
            net.noise[k]
                + dual
                    .selfish
                    .iter()
                    .zip(powers)
                    .map(|(&j, p)| p * net.eps[k][j])
                    .sum::<f64>()
        })
        .collect()
}

/// Antenna-dimension fraction left for the next level once the selfish
/// loadings `used` have been zero-forced.
fn remaining_fraction(level: usize, fraction: f64, used: f64) -> Result<f64> {
    let left = fraction - used;
    if left <= 0.0 {
        return Err(SolverError::DimensionExhausted {
            level,
            fraction: left,
        });
    }
    Ok(left)
}

/// Options of the nested recursion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NestedOptions {
    pub dual: DualOptions,
}

/// Solves the full nested structure with default options.
pub fn nested_solve(cfg: &SystemConfig) -> Result<NestedSolution> {
    nested_solve_with(cfg, &NestedOptions::default())
}

pub fn nested_solve_with(cfg: &SystemConfig, opts: &NestedOptions) -> Result<NestedSolution> {
    cfg.validated()?;
    if let Some((cell, &m)) = cfg
        .cell_margin()
        .iter()
        .enumerate()
        .find(|(_, m)| **m <= 0.0)
    {
        return Err(SolverError::IsolatedCellInfeasible { cell, margin: m });
    }
    let mut levels = Vec::new();
    let mut cells: Vec<usize> = (0..cfg.cells).collect();
    let mut noise = vec![cfg.sigma2; cfg.cells];
    let mut fraction = 1.0;
    while !cells.is_empty() {
        let eff_beta: Vec<f64> = cells.iter().map(|&k| cfg.beta[k] / fraction).collect();
        let net = Network {
            beta: eff_beta.clone(),
            eps: cells
                .iter()
                .map(|&k| cells.iter().map(|&j| cfg.eps[k][j]).collect())
                .collect(),
            gamma: cells.iter().map(|&k| cfg.gamma[k]).collect(),
            noise: noise.clone(),
        };
        if (0..net.len()).any(|k| net.margin(k) <= 0.0) {
            // The reduced space cannot carry an isolated cell's target.
            return Err(SolverError::Unbounded);
        }
        let dual = solve_network(&net, &opts.dual)?;
        let powers = solve_bs_powers(&net, &dual)?;
        let next_noise = altruistic_noise(&net, &dual, &powers);
        let selfish: Vec<usize> = dual.selfish.iter().map(|&k| cells[k]).collect();
        let next_cells: Vec<usize> = dual.altruistic.iter().map(|&k| cells[k]).collect();
        let per_user_power = dual
            .selfish
            .iter()
            .zip(&powers)
            .map(|(&k, p)| p / eff_beta[k])
            .collect();
        let used: f64 = selfish.iter().map(|&k| cfg.beta[k]).sum();
        levels.push(Level {
            cells: cells.clone(),
            selfish,
            dual,
            bs_power: powers,
            per_user_power,
            noise: next_noise.clone(),
            eff_beta,
            cell_noise: noise,
            eff_dim_fraction: fraction,
        });
        if next_cells.is_empty() {
            break;
        }
        fraction = remaining_fraction(levels.len(), fraction, used)?;
        cells = next_cells;
        noise = next_noise;
    }
    let mut sol = NestedSolution { levels, phi: 0.0 };
    sol.phi = sol.max_power() / cfg.p_budget;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::solve_dual;

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

    fn single(beta: f64, gamma: f64) -> SystemConfig {
        SystemConfig {
            cells: 1,
            beta: vec![beta],
            eps: vec![vec![1.0]],
            gamma: vec![gamma],
            sigma2: 1.0,
            p_budget: 1.0,
        }
    }

    // Independent route: the downlink power balance written per cell,
    // P_k eps_kk = gamma'_k beta_k (sigma2 + sum_j P_j eps_kj / c_kj^2),
    // where the sum includes j = k.
    fn powers_from_balance(net: &Network, dual: &DualPoint) -> Vec<f64> {
        let gp = gamma_prime(net, dual).unwrap();
        let sel = &dual.selfish;
        let n = sel.len();
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        for (r, &k) in sel.iter().enumerate() {
            for (s, &j) in sel.iter().enumerate() {
                let c = 1.0
                    + dual.lambda[k] * net.eps[k][j] * net.gamma[j]
                        / (net.eps[j][j] * dual.lambda[j]);
                a[r][s] -= gp[r] * net.beta[k] * net.eps[k][j] / (c * c);
            }
            a[r][r] += net.eps[k][k];
            b[r] = gp[r] * net.beta[k] * net.noise[k];
        }
        solve_real(&a, &b).unwrap()
    }

    #[test]
    fn isolated_cell_power() {
        let cfg = single(0.5, 1.0);
        let net = Network::from_config(&cfg);
        let dual = solve_dual(&cfg).unwrap();
        let p = solve_bs_powers(&net, &dual).unwrap();
        assert!((p[0] - 0.5 * 4.0 / 3.0).abs() < 1e-9);
        let gp = gamma_prime(&net, &dual).unwrap();
        let t = 0.5 * (4.0 / 3.0) / 2.0;
        assert!((gp[0] - (1.0 + t) / (1.0 + t / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn zero_forcing_case_powers() {
        let cfg = two_cell_cfg([0.1, 0.5], [5.0, 5.0]);
        let net = Network::from_config(&cfg);
        let dual = solve_dual(&cfg).unwrap();
        assert_eq!(dual.selfish, vec![1]);
        let p = solve_bs_powers(&net, &dual).unwrap();
        let c2 = 1.0 - 0.5 * 5.0 / 6.0;
        let want = 0.5 * 5.0 / (1.8 * c2);
        assert!((p[0] - want).abs() < 1e-8 * want, "{} vs {want}", p[0]);
        let s1 = altruistic_noise(&net, &dual, &p);
        assert!((s1[0] - (1.0 + 0.5 * 2.5 / 1.05)).abs() < 1e-8);
        let gp = gamma_prime(&net, &dual).unwrap();
        let t = 0.5 * dual.lambda[1] * 1.8;
        let want = 5.0 * (2.0 + t / 6.0) / (2.0 + t / 36.0);
        assert!((gp[0] - want).abs() < 1e-8 * want);
    }

    #[test]
    fn powers_agree_with_balance_route() {
        for (beta, gamma) in [
            ([0.55, 0.5], [5.0, 5.0]),
            ([0.3, 0.4], [2.0, 3.0]),
            ([0.6, 0.2], [5.0, 2.0]),
        ] {
            let cfg = two_cell_cfg(beta, gamma);
            let net = Network::from_config(&cfg);
            let dual = solve_dual(&cfg).unwrap();
            let p = solve_bs_powers(&net, &dual).unwrap();
            let q = powers_from_balance(&net, &dual);
            for (a, b) in p.iter().zip(&q) {
                assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
            }
            for g in gamma_prime(&net, &dual).unwrap().iter().zip(&dual.selfish) {
                assert!(*g.0 >= net.gamma[*g.1]);
            }
        }
    }

    #[test]
    fn mk_balance_holds() {
        // p_k eps_kk m_k (mu_k + sum beta_j lambda_j eps_jk / c^2) equals
        // gamma_k (sigma2 + sum P_j eps_kj / c'^2) at the optimum.
        let cfg = two_cell_cfg([0.55, 0.5], [5.0, 5.0]);
        let net = Network::from_config(&cfg);
        let dual = solve_dual(&cfg).unwrap();
        let p = solve_bs_powers(&net, &dual).unwrap();
        for (r, &k) in dual.selfish.iter().enumerate() {
            let m = net.gamma[k] / (net.eps[k][k] * dual.lambda[k]);
            let mut sq = dual.mu[k];
            let mut rhs = cfg.sigma2;
            for (s, &j) in dual.selfish.iter().enumerate() {
                let c = coupling(&net, &dual.lambda, j, k);
                sq += net.beta[j] * dual.lambda[j] * net.eps[j][k] / (c * c);
                let c2 = coupling(&net, &dual.lambda, k, j);
                rhs += p[s] * net.eps[k][j] / (c2 * c2);
            }
            let lhs = p[r] / net.beta[k] * net.eps[k][k] * m * sq;
            rhs *= net.gamma[k];
            assert!((lhs - rhs).abs() <= 1e-8 * rhs, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn nested_single_level() {
        let sol = nested_solve(&two_cell_cfg([0.55, 0.5], [5.0, 5.0])).unwrap();
        assert_eq!(sol.levels.len(), 1);
        assert_eq!(sol.levels[0].selfish.len(), 2);
    }

    #[test]
    fn nested_zero_forcing_level() {
        let cfg = two_cell_cfg([0.1, 0.5], [5.0, 5.0]);
        let sol = nested_solve(&cfg).unwrap();
        assert_eq!(sol.levels.len(), 2);
        let lvl = &sol.levels[1];
        assert_eq!(lvl.selfish, vec![0]);
        assert!((lvl.eff_beta[0] - 0.2).abs() < 1e-15);
        assert!((lvl.dual.mu[0] - 1.0).abs() < 1e-12);
        assert!((lvl.dual.lambda[0] - 3.0).abs() < 1e-8);
        let s1 = 1.0 + 0.5 * 2.5 / 1.05;
        assert!((lvl.cell_noise[0] - s1).abs() < 1e-8);
        assert!((lvl.bs_power[0] - 0.2 * 3.0 * s1).abs() < 1e-7);
        assert!((lvl.per_user_power[0] - 3.0 * s1).abs() < 1e-7);
        assert!((lvl.eff_dim_fraction - 0.5).abs() < 1e-15);
        // altruistic BS needs no more than the selfish one
        assert!(lvl.bs_power[0] <= sol.levels[0].bs_power[0]);
        assert!((sol.phi - sol.levels[0].bs_power[0] / 10.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_exhausted() {
        // Selfish loadings that use up the whole antenna dimension leave
        // nothing for the altruistic cells.
        match remaining_fraction(1, 1.0, 1.0) {
            Err(SolverError::DimensionExhausted { level: 1, .. }) => {}
            other => panic!("expected dimension exhaustion, got {other:?}"),
        }
        assert!(matches!(
            remaining_fraction(2, 0.5, 0.7),
            Err(SolverError::DimensionExhausted { .. })
        ));
        assert_eq!(remaining_fraction(1, 1.0, 0.25).unwrap(), 0.75);
    }

    #[test]
    fn infeasible_margin_reported() {
        match nested_solve(&single(1.5, 3.0)) {
            Err(SolverError::IsolatedCellInfeasible { cell: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
