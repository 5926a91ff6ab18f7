//! Configuration and shared domain types.
//!
//! Gains are stored as `eps[k][j]`: the average gain from base station `j`
//! to the users of cell `k` (channel entries `h_{u,k,j}` are `CN(0, eps[k][j])`).
//! Every function in this crate uses that orientation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

/// A multicell system as described by its channel statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of cells.
    #[serde(rename = "L")]
    pub cells: usize,
    /// Cell loadings `U_k / N_t`. Values above one are accepted.
    pub beta: Vec<f64>,
    /// `eps[k][j]`: average gain from BS `j` to users of cell `k`.
    pub eps: Vec<Vec<f64>>,
    /// Target SINR per cell.
    pub gamma: Vec<f64>,
    /// Receiver noise power.
    pub sigma2: f64,
    /// Per-BS power budget.
    pub p_budget: f64,
}

/// One failed configuration invariant, tagged with the offending field path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.path, self.message)
    }
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            path: path.into(),
            message: message.into(),
        }
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl SystemConfig {
    /// Checks every structural invariant and collects all violations.
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let l = self.cells;
        if l == 0 {
            out.push(Violation::new("L", "must be at least 1"));
        }
        if self.beta.len() != l {
            out.push(Violation::new(
                "beta",
                format!("length {} != L = {l}", self.beta.len()),
            ));
        }
        if self.gamma.len() != l {
            out.push(Violation::new(
                "gamma",
                format!("length {} != L = {l}", self.gamma.len()),
            ));
        }
        if self.eps.len() != l {
            out.push(Violation::new(
                "eps",
                format!("has {} rows, expected L = {l}", self.eps.len()),
            ));
        }
        for (k, b) in self.beta.iter().enumerate() {
            if !positive(*b) {
                out.push(Violation::new(format!("beta[{k}]"), "nonpositive"));
            }
        }
        for (k, g) in self.gamma.iter().enumerate() {
            if !positive(*g) {
                out.push(Violation::new(format!("gamma[{k}]"), "nonpositive"));
            }
        }
        for (k, row) in self.eps.iter().enumerate() {
            if row.len() != l {
                out.push(Violation::new(
                    format!("eps[{k}]"),
                    format!("length {} != L = {l}", row.len()),
                ));
            }
            for (j, e) in row.iter().enumerate() {
                if !positive(*e) {
                    out.push(Violation::new(format!("eps[{k}][{j}]"), "nonpositive"));
                }
            }
        }
        if !positive(self.sigma2) {
            out.push(Violation::new("sigma2", "nonpositive"));
        }
        if !positive(self.p_budget) {
            out.push(Violation::new("p_budget", "nonpositive"));
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    pub fn validated(&self) -> Result<()> {
        self.validate().map_err(SolverError::InvalidConfig)
    }

    /// `c_k = 1 - beta_k gamma_k / (1 + gamma_k)`; positive iff cell `k`
    /// could meet its target were it isolated.
    pub fn cell_margin(&self) -> Vec<f64> {
        self.beta
            .iter()
            .zip(&self.gamma)
            .map(|(&b, &g)| margin(b, g))
            .collect()
    }

    /// Copy with the targets replaced.
    pub fn with_gamma(&self, gamma: Vec<f64>) -> SystemConfig {
        SystemConfig {
            gamma,
            ..self.clone()
        }
    }

    /// Sub-system made of the listed cells (in that order).
    pub fn restrict(&self, cells: &[usize]) -> SystemConfig {
        SystemConfig {
            cells: cells.len(),
            beta: cells.iter().map(|&k| self.beta[k]).collect(),
            eps: cells
                .iter()
                .map(|&k| cells.iter().map(|&j| self.eps[k][j]).collect())
                .collect(),
            gamma: cells.iter().map(|&k| self.gamma[k]).collect(),
            sigma2: self.sigma2,
            p_budget: self.p_budget,
        }
    }
}

#[inline]
pub fn margin(beta: f64, gamma: f64) -> f64 {
    1.0 - beta * gamma / (1.0 + gamma)
}

/// The working form of a large-system problem at one recursion level:
/// effective loadings, gains restricted to the active cells, targets and a
/// per-cell noise-plus-interference level.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub beta: Vec<f64>,
    pub eps: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub noise: Vec<f64>,
}

impl Network {
    pub fn from_config(cfg: &SystemConfig) -> Network {
        Network {
            beta: cfg.beta.clone(),
            eps: cfg.eps.clone(),
            gamma: cfg.gamma.clone(),
            noise: vec![cfg.sigma2; cfg.cells],
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn margin(&self, k: usize) -> f64 {
        margin(self.beta[k], self.gamma[k])
    }

    /// Dual objective `sum_k noise_k beta_k lambda_k`.
    pub fn objective(&self, lambda: &[f64]) -> f64 {
        lambda
            .iter()
            .zip(&self.beta)
            .zip(&self.noise)
            .map(|((l, b), s)| s * b * l)
            .sum()
    }

    /// Scale of `gamma_k / eps_kk` used to size divergence caps.
    pub(crate) fn target_scale(&self) -> f64 {
        (0..self.len())
            .map(|k| self.gamma[k] / self.eps[k][k])
            .fold(0.0, f64::max)
    }
}

/// Optimum of the large-system dual at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub objective: f64,
    /// Cells with `lambda_k > 0` (local indices).
    pub selfish: Vec<usize>,
    /// Cells with `lambda_k = 0`; they zero-force the selfish cells.
    pub altruistic: Vec<usize>,
}

impl DualPoint {
    pub(crate) fn new(net: &Network, mu: Vec<f64>, lambda: Vec<f64>, tol_partition: f64) -> Self {
        let scale = lambda.iter().cloned().fold(0.0, f64::max);
        let threshold = tol_partition * scale;
        let (selfish, altruistic): (Vec<usize>, Vec<usize>) =
            (0..lambda.len()).partition(|&k| lambda[k] > threshold);
        DualPoint {
            objective: net.objective(&lambda),
            mu,
            lambda,
            selfish,
            altruistic,
        }
    }

    pub fn mu_sum(&self) -> f64 {
        self.mu.iter().sum()
    }
}

/// One level of the nested zero-forcing recursion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    /// Original cell indices active at this level.
    pub cells: Vec<usize>,
    /// Original indices of the cells that are selfish at this level.
    pub selfish: Vec<usize>,
    /// Dual optimum over the active cells (indexed like `cells`).
    pub dual: DualPoint,
    /// `P_k` per selfish cell, ordered like `selfish`.
    pub bs_power: Vec<f64>,
    /// `p_k = P_k / eff_beta_k` per selfish cell.
    pub per_user_power: Vec<f64>,
    /// Noise-plus-interference handed to each cell of the next level,
    /// ordered like the altruistic cells of `dual`.
    pub noise: Vec<f64>,
    /// Effective loadings of the active cells.
    pub eff_beta: Vec<f64>,
    /// Noise-plus-interference seen by each active cell at this level.
    pub cell_noise: Vec<f64>,
    /// Fraction of the antenna dimension left after zero-forcing all
    /// selfish cells of earlier levels.
    pub eff_dim_fraction: f64,
}

/// Full nested solution: the selfish sets of all levels partition the cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedSolution {
    pub levels: Vec<Level>,
    /// `max_k P_k / p_budget`.
    pub phi: f64,
}

impl NestedSolution {
    /// Level index and position in that level's `selfish` list for `cell`.
    pub fn locate(&self, cell: usize) -> Option<(usize, usize)> {
        self.levels.iter().enumerate().find_map(|(n, lvl)| {
            lvl.selfish
                .iter()
                .position(|&c| c == cell)
                .map(|pos| (n, pos))
        })
    }

    /// BS power of `cell`, from whichever level made it selfish.
    pub fn bs_power(&self, cell: usize) -> Option<f64> {
        self.locate(cell)
            .map(|(n, pos)| self.levels[n].bs_power[pos])
    }

    pub fn max_power(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.bs_power.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn top(&self) -> &Level {
        &self.levels[0]
    }
}

/// Residuals of the dual optimality system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Multiplier of the `sum mu = L` constraint.
    pub z: f64,
    /// `x_k = z - P_k` for selfish cells; `z` for altruistic cells, which
    /// draw no power at this level.
    pub x: Vec<f64>,
    pub residual_lambda: f64,
    pub residual_mu_sum: f64,
    pub complementary_slackness: f64,
    /// Most negative `x_k` (0 when all are nonnegative).
    pub min_x: f64,
    pub pass: KktPass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KktPass {
    pub fixed_point: bool,
    pub mu_sum: bool,
    pub x_nonnegative: bool,
    pub slackness: bool,
}

impl KktPass {
    pub fn all(&self) -> bool {
        self.fixed_point && self.mu_sum && self.x_nonnegative && self.slackness
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cell() -> SystemConfig {
        SystemConfig {
            cells: 2,
            beta: vec![0.1, 0.5],
            eps: vec![vec![2.0, 0.5], vec![0.7, 1.8]],
            gamma: vec![5.0, 5.0],
            sigma2: 1.0,
            p_budget: 10.0,
        }
    }

    #[test]
    fn valid_config_passes() {
        assert!(two_cell().validate().is_ok());
    }

    #[test]
    fn zero_gamma_is_named() {
        let mut cfg = two_cell();
        cfg.gamma = vec![0.0, 1.0];
        let v = cfg.validate().unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "gamma[0] nonpositive");
    }

    #[test]
    fn zero_gain_is_named() {
        let mut cfg = two_cell();
        cfg.eps[1][0] = 0.0;
        let v = cfg.validate().unwrap_err();
        assert_eq!(v[0].to_string(), "eps[1][0] nonpositive");
    }

    #[test]
    fn zero_cells_and_shape_errors() {
        let cfg = SystemConfig {
            cells: 0,
            beta: vec![],
            eps: vec![],
            gamma: vec![],
            sigma2: 1.0,
            p_budget: 1.0,
        };
        let v = cfg.validate().unwrap_err();
        assert_eq!(v[0].path, "L");

        let mut cfg = two_cell();
        cfg.eps[0].pop();
        cfg.sigma2 = -1.0;
        let v = cfg.validate().unwrap_err();
        assert!(v.iter().any(|v| v.path == "eps[0]"));
        assert!(v.iter().any(|v| v.path == "sigma2"));
    }

    #[test]
    fn loadings_above_one_accepted() {
        let mut cfg = two_cell();
        cfg.beta = vec![1.5, 2.0];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn margin_values() {
        assert!((margin(0.5, 1.0) - 0.75).abs() < 1e-15);
        assert!((margin(0.1, 5.0) - 11.0 / 12.0).abs() < 1e-15);
        assert!((margin(1.5, 3.0) + 0.125).abs() < 1e-15);
    }

    #[test]
    fn json_keys() {
        let cfg = two_cell();
        let s = serde_json::to_string(&cfg).unwrap();
        for key in [
            "\"L\"",
            "\"beta\"",
            "\"eps\"",
            "\"gamma\"",
            "\"sigma2\"",
            "\"p_budget\"",
        ] {
            assert!(s.contains(key), "{key} missing in {s}");
        }
        let back: SystemConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn restrict_keeps_orientation() {
        let cfg = two_cell();
        let sub = cfg.restrict(&[1, 0]);
        assert_eq!(sub.eps[0][1], cfg.eps[1][0]);
        assert_eq!(sub.beta, vec![0.5, 0.1]);
    }

    proptest::proptest! {
        #[test]
        fn margin_strictly_decreasing(b in 0.01f64..3.0, g in 0.01f64..50.0, db in 1e-3f64..1.0, dg in 1e-3f64..10.0) {
            proptest::prop_assert!(margin(b + db, g) < margin(b, g));
            proptest::prop_assert!(margin(b, g + dg) < margin(b, g));
        }
    }
}
