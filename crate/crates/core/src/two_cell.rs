//! Closed-form solution of the two-cell dual in terms of the ratio
//! `rho = lambda_2 / lambda_1`.
//!
//! Cells are indexed 0 and 1 here; `eps[k][j]` is the gain from BS `j` to
//! the users of cell `k`, as everywhere else. The optimum sits at an end of
//! `[rho_lo, rho_hi]` or where the decreasing curve `g1` meets the
//! increasing curve `g2`. An infinite `rho` means cell 0 zero-forces the
//! users of cell 1; `rho = 0` means cell 1 zero-forces the users of cell 0.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::linalg::solve_real;
use crate::model::SystemConfig;

/// Serializes infinities as the strings `"inf"` / `"-inf"` so that JSON
/// round trips keep them.
pub mod ext_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TwoCellFeasibility {
    /// `marginal` is set when the cross-gain condition holds with equality.
    Bounded {
        marginal: bool,
    },
    Unbounded,
}

impl TwoCellFeasibility {
    pub fn is_bounded(&self) -> bool {
        matches!(self, TwoCellFeasibility::Bounded { .. })
    }
}

fn check_two(cfg: &SystemConfig) -> Result<()> {
    if cfg.cells != 2 {
        return Err(SolverError::Usage(format!(
            "two-cell analysis needs L = 2, got L = {}",
            cfg.cells
        )));
    }
    cfg.validated()
}

/// Boundedness of the two-cell dual.
pub fn feasibility_two_cell(cfg: &SystemConfig) -> Result<TwoCellFeasibility> {
    check_two(cfg)?;
    let c = cfg.cell_margin();
    let (b, e, g) = (&cfg.beta, &cfg.eps, &cfg.gamma);
    if c[0] <= 0.0 || c[1] <= 0.0 {
        return Ok(TwoCellFeasibility::Unbounded);
    }
    if c[0] - b[1] >= 0.0 || c[1] - b[0] >= 0.0 {
        return Ok(TwoCellFeasibility::Bounded { marginal: false });
    }
    let lhs = e[0][0] * c[0] * e[1][1] * c[1] / (g[0] * g[1]);
    let rhs = e[0][1] * e[1][0] * (b[0] - c[1]) * (b[1] - c[0]);
    if lhs > rhs {
        Ok(TwoCellFeasibility::Bounded { marginal: false })
    } else if lhs == rhs {
        Ok(TwoCellFeasibility::Bounded { marginal: true })
    } else {
        Ok(TwoCellFeasibility::Unbounded)
    }
}

/// The curves `h`, `g1`, `g2` and the admissible range of `rho`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoCellCurves {
    pub rho_lo: f64,
    #[serde(with = "ext_real")]
    pub rho_hi: f64,
    beta: [f64; 2],
    eps: [[f64; 2]; 2],
    gamma: [f64; 2],
    c: [f64; 2],
}

impl TwoCellCurves {
    /// `lambda_1 = 2 / h(rho)` along the ray `lambda_2 = rho lambda_1`.
    pub fn h(&self, rho: f64) -> f64 {
        let (b, e, g, c) = (&self.beta, &self.eps, &self.gamma, &self.c);
        let first =
            e[0][0] * (c[0] / g[0] - b[1] * e[1][0] * rho / (e[0][0] + rho * e[1][0] * g[0]));
        let second =
            rho * e[1][1] * (c[1] / g[1] - b[0] * e[0][1] / (e[1][1] * rho + e[0][1] * g[1]));
        first + second
    }

    /// Strictly decreasing in `rho`; written in `1/rho` so that `rho = inf`
    /// evaluates to its limit.
    pub fn g1(&self, rho: f64) -> f64 {
        let (b, e, g, c) = (&self.beta, &self.eps, &self.gamma, &self.c);
        let inv = 1.0 / rho;
        e[0][0] * c[0] / (b[0] * g[0])
            - (b[1] / b[0]) * e[0][0] * e[1][0].powi(2) * g[0]
                / (e[0][0] * inv + e[1][0] * g[0]).powi(2)
            - e[1][1].powi(2) * e[0][1] / (e[1][1] + inv * e[0][1] * g[1]).powi(2)
    }

    /// Strictly increasing in `rho`.
    pub fn g2(&self, rho: f64) -> f64 {
        let (b, e, g, c) = (&self.beta, &self.eps, &self.gamma, &self.c);
        e[1][1] * c[1] / (b[1] * g[1])
            - (b[0] / b[1]) * e[1][1] * e[0][1].powi(2) * g[1]
                / (e[1][1] * rho + e[0][1] * g[1]).powi(2)
            - e[0][0].powi(2) * e[1][0] / (e[0][0] + rho * e[1][0] * g[0]).powi(2)
    }

    pub fn diff(&self, rho: f64) -> f64 {
        self.g1(rho) - self.g2(rho)
    }

    /// Dual objective `sigma2 * 2 (beta_1 + rho beta_2) / h(rho)` along the ray.
    pub fn objective(&self, rho: f64, sigma2: f64) -> f64 {
        if rho.is_infinite() {
            return sigma2 * 2.0 * self.beta[1] * self.gamma[1] / (self.eps[1][1] * self.c[1]);
        }
        sigma2 * 2.0 * (self.beta[0] + rho * self.beta[1]) / self.h(rho)
    }

    /// A finite upper end for plotting: `rho_hi` when finite, otherwise a
    /// range that comfortably covers any crossing.
    pub fn plot_upper(&self, rho_star: f64) -> f64 {
        if self.rho_hi.is_finite() {
            self.rho_hi
        } else {
            let base = if rho_star.is_finite() { rho_star } else { 0.0 };
            4.0 * base.max(self.rho_lo).max(1.0)
        }
    }
}

/// Exact curve definitions for a bounded two-cell configuration.
pub fn two_cell_curves(cfg: &SystemConfig) -> Result<TwoCellCurves> {
    check_two(cfg)?;
    let c = cfg.cell_margin();
    let (b, e, g) = (&cfg.beta, &cfg.eps, &cfg.gamma);
    let rho_lo = if c[1] - b[0] >= 0.0 {
        0.0
    } else {
        e[0][1] * g[1] / (e[1][1] * c[1]) * (b[0] - c[1])
    };
    let rho_hi = if c[0] - b[1] >= 0.0 {
        f64::INFINITY
    } else {
        e[0][0] * c[0] / (g[0] * e[1][0] * (b[1] - c[0]))
    };
    Ok(TwoCellCurves {
        rho_lo,
        rho_hi,
        beta: [b[0], b[1]],
        eps: [[e[0][0], e[0][1]], [e[1][0], e[1][1]]],
        gamma: [g[0], g[1]],
        c: [c[0], c[1]],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TwoCellCase {
    /// `rho* = inf`: cell 0 zero-forces the users of cell 1.
    ZfCell1,
    /// `rho* = 0`: cell 1 zero-forces the users of cell 0.
    ZfCell2,
    /// `rho* = rho_lo > 0`.
    BoundaryLo,
    /// `rho* = rho_hi < inf`.
    BoundaryHi,
    /// `g1(rho*) = g2(rho*)`.
    Interior,
}

/// The zero-forcing cell's second-level solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZfLevel {
    /// Index of the zero-forcing (altruistic) cell.
    pub cell: usize,
    pub lambda_bar: f64,
    pub mu_bar: f64,
    /// Noise plus interference from the selfish cell at its users.
    pub sigma2_alt: f64,
    /// Per-user power `p`.
    pub p: f64,
    /// BS power.
    pub bs_power: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoCellSolution {
    pub case: TwoCellCase,
    #[serde(with = "ext_real")]
    pub rho_star: f64,
    pub lambda: [f64; 2],
    pub mu: [f64; 2],
    /// BS powers `P_k`.
    pub power: [f64; 2],
    pub level2: Option<ZfLevel>,
    pub marginal: bool,
}

impl TwoCellSolution {
    pub fn phi(&self, p_budget: f64) -> f64 {
        self.power[0].max(self.power[1]) / p_budget
    }
}

/// Crossing of `g1` and `g2` on `[lo, hi]` where the difference changes sign.
fn crossing(curves: &TwoCellCurves, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    if hi.is_infinite() {
        hi = lo.max(1.0);
        while curves.diff(hi) >= 0.0 {
            lo = hi;
            hi *= 2.0;
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-12 * (1.0 + mid) || mid <= lo || mid >= hi {
            break;
        }
        if curves.diff(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Second level of a zero-forcing solution: the altruistic cell works in
/// the remaining dimension with loading `beta_alt / (1 - beta_sel)`.
fn zf_level(cfg: &SystemConfig, alt: usize, sel: usize, sel_power: f64) -> ZfLevel {
    let eff = cfg.beta[alt] / (1.0 - cfg.beta[sel]);
    let g = cfg.gamma[alt];
    let sigma2_alt = cfg.sigma2 + sel_power * cfg.eps[alt][sel];
    let lambda_bar = 1.0 / (cfg.eps[alt][alt] * (1.0 / g - eff / (1.0 + g)));
    let p = lambda_bar * sigma2_alt;
    ZfLevel {
        cell: alt,
        lambda_bar,
        mu_bar: 1.0,
        sigma2_alt,
        p,
        bs_power: eff * p,
    }
}

/// Powers of a both-selfish solution from the two-cell power balance.
fn boundary_powers(cfg: &SystemConfig, rho: f64) -> Result<[f64; 2]> {
    let (b, e, g) = (&cfg.beta, &cfg.eps, &cfg.gamma);
    let c = cfg.cell_margin();
    let d1 = e[0][0] + rho * e[1][0] * g[0];
    let d2 = e[1][1] * rho + e[0][1] * g[1];
    let a = [
        vec![
            e[0][0] / b[0]
                * (c[0] / g[0] - b[1] * rho * e[1][0] * (rho * e[1][0] * g[0]) / (d1 * d1)),
            -e[0][1] / (1.0 + e[0][1] * g[1] / (e[1][1] * rho)).powi(2),
        ],
        vec![
            -e[1][0] * e[0][0].powi(2) / (d1 * d1),
            e[1][1] / b[1] * (c[1] / g[1] - b[0] * e[0][1] * (e[0][1] * g[1]) / (d2 * d2)),
        ],
    ];
    let p = solve_real(&a, &[cfg.sigma2, cfg.sigma2])?;
    Ok([p[0], p[1]])
}

/// Closed-form two-cell optimum with powers.
pub fn solve_two_cell(cfg: &SystemConfig) -> Result<TwoCellSolution> {
    let feas = feasibility_two_cell(cfg)?;
    let marginal = match feas {
        TwoCellFeasibility::Bounded { marginal } => marginal,
        TwoCellFeasibility::Unbounded => {
            let c = cfg.cell_margin();
            return Err(match c.iter().position(|&m| m <= 0.0) {
                Some(cell) => SolverError::IsolatedCellInfeasible {
                    cell,
                    margin: c[cell],
                },
                None => SolverError::Unbounded,
            });
        }
    };
    let curves = two_cell_curves(cfg)?;
    let (e, g) = (&cfg.eps, &cfg.gamma);
    let c = cfg.cell_margin();
    let d_lo = curves.diff(curves.rho_lo);
    let d_hi = curves.diff(curves.rho_hi);
    let (case, rho) = if d_lo <= 0.0 && d_hi < 0.0 {
        if curves.rho_lo == 0.0 {
            (TwoCellCase::ZfCell2, 0.0)
        } else {
            (TwoCellCase::BoundaryLo, curves.rho_lo)
        }
    } else if d_lo > 0.0 && d_hi >= 0.0 {
        if curves.rho_hi.is_infinite() {
            (TwoCellCase::ZfCell1, f64::INFINITY)
        } else {
            (TwoCellCase::BoundaryHi, curves.rho_hi)
        }
    } else {
        (
            TwoCellCase::Interior,
            crossing(&curves, curves.rho_lo, curves.rho_hi),
        )
    };

    let sigma2 = cfg.sigma2;
    let sol = match case {
        TwoCellCase::ZfCell1 => {
            let lambda = [0.0, 2.0 * g[1] / (e[1][1] * c[1])];
            let p_sel = sigma2 * cfg.beta[1] * g[1] / (e[1][1] * c[1]);
            let lvl = zf_level(cfg, 0, 1, p_sel);
            TwoCellSolution {
                case,
                rho_star: rho,
                lambda,
                mu: [0.0, 2.0],
                power: [lvl.bs_power, p_sel],
                level2: Some(lvl),
                marginal,
            }
        }
        TwoCellCase::ZfCell2 => {
            let lambda = [2.0 * g[0] / (e[0][0] * c[0]), 0.0];
            let p_sel = sigma2 * cfg.beta[0] * g[0] / (e[0][0] * c[0]);
            let lvl = zf_level(cfg, 1, 0, p_sel);
            TwoCellSolution {
                case,
                rho_star: rho,
                lambda,
                mu: [2.0, 0.0],
                power: [p_sel, lvl.bs_power],
                level2: Some(lvl),
                marginal,
            }
        }
        _ => {
            let h = curves.h(rho);
            let lambda = [2.0 / h, 2.0 * rho / h];
            let b = &cfg.beta;
            let mu0 = e[0][0]
                * lambda[0]
                * (c[0] / g[0]
                    - b[1] * e[1][0] * lambda[1]
                        / (e[0][0] * lambda[0] + e[1][0] * lambda[1] * g[0]));
            let mu = match case {
                TwoCellCase::BoundaryLo => [2.0, 0.0],
                TwoCellCase::BoundaryHi => [0.0, 2.0],
                _ => [mu0, 2.0 - mu0],
            };
            let power = if case == TwoCellCase::Interior {
                let p = sigma2 * (b[0] + rho * b[1]) / h;
                [p, p]
            } else {
                boundary_powers(cfg, rho)?
            };
            TwoCellSolution {
                case,
                rho_star: rho,
                lambda,
                mu,
                power,
                level2: None,
                marginal,
            }
        }
    };
    Ok(sol)
}

/// Value of the zero-forcing optimality inequality with index `k`:
/// `eps_kk c_k / (beta_k gamma_k) - eps_oo (c_o - beta_k) / (beta_o gamma_o) + eps_ok`
/// with `o` the other cell.
///
/// The inequality for index `k` (value `<= 0`) coincides with the
/// condition under which the *other* cell zero-forces (see
/// [`zero_forcing_cell`]).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZfCondition {
    pub value: f64,
    pub holds: bool,
}

pub fn zf_optimality_check(cfg: &SystemConfig, k: usize) -> Result<ZfCondition> {
    check_two(cfg)?;
    if k > 1 {
        return Err(SolverError::Usage(format!("cell index {k} out of range")));
    }
    let o = 1 - k;
    let c = cfg.cell_margin();
    let (b, e, g) = (&cfg.beta, &cfg.eps, &cfg.gamma);
    let value = e[k][k] * c[k] / (b[k] * g[k]) - e[o][o] * (c[o] - b[k]) / (b[o] * g[o]) + e[o][k];
    Ok(ZfCondition {
        value,
        holds: value <= 0.0,
    })
}

/// The cell that zero-forces when the inequality with index `k` holds.
pub fn zero_forcing_cell(k: usize) -> usize {
    1 - k
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn feasibility_examples() {
        assert_eq!(
            feasibility_two_cell(&two_cell_cfg([0.1, 0.5], [5.0, 5.0])).unwrap(),
            TwoCellFeasibility::Bounded { marginal: false }
        );
        assert!(feasibility_two_cell(&two_cell_cfg([0.55, 0.5], [5.0, 5.0]))
            .unwrap()
            .is_bounded());
        assert_eq!(
            feasibility_two_cell(&two_cell_cfg([1.5, 0.5], [3.0, 5.0])).unwrap(),
            TwoCellFeasibility::Unbounded
        );
        let mut three = two_cell_cfg([0.1, 0.5], [5.0, 5.0]);
        three.cells = 3;
        assert!(matches!(
            feasibility_two_cell(&three),
            Err(SolverError::Usage(_))
        ));
    }

    #[test]
    fn range_ends() {
        let a = two_cell_curves(&two_cell_cfg([0.1, 0.5], [5.0, 5.0])).unwrap();
        assert!(a.rho_hi.is_infinite());
        let c = two_cell_curves(&two_cell_cfg([0.6, 0.2], [5.0, 2.0])).unwrap();
        assert_eq!(c.rho_lo, 0.0);
    }

    #[test]
    fn curve_monotonicity() {
        let cur = two_cell_curves(&two_cell_cfg([0.55, 0.5], [5.0, 5.0])).unwrap();
        let grid: Vec<f64> = (1..200).map(|i| 0.05 * i as f64).collect();
        for w in grid.windows(2) {
            assert!(cur.g1(w[0]) > cur.g1(w[1]));
            assert!(cur.g2(w[0]) < cur.g2(w[1]));
        }
    }

    #[test]
    fn limits_at_ends() {
        let cfg = two_cell_cfg([0.1, 0.5], [5.0, 5.0]);
        let cur = two_cell_curves(&cfg).unwrap();
        let c = cfg.cell_margin();
        let g1_inf = 2.0 * c[0] / 0.5 - 0.5 * 2.0 / 0.5 - 0.5;
        assert!((cur.g1(f64::INFINITY) - g1_inf).abs() < 1e-12);
        assert!((cur.g1(1e12) - g1_inf).abs() < 1e-9);
        assert!((cur.g2(f64::INFINITY) - 1.8 * c[1] / 2.5).abs() < 1e-12);
        assert!((cur.g1(0.0) - 2.0 * c[0] / 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_cell_reference_cases() {
        let a = solve_two_cell(&two_cell_cfg([0.1, 0.5], [5.0, 5.0])).unwrap();
        assert_eq!(a.case, TwoCellCase::ZfCell1);
        assert!((a.lambda[1] - 10.0 / 1.05).abs() < 1e-12);
        let lvl = a.level2.as_ref().unwrap();
        assert!((lvl.lambda_bar - 3.0).abs() < 1e-12);
        assert!((lvl.sigma2_alt - (1.0 + 0.5 * 2.5 / 1.05)).abs() < 1e-12);
        assert!((a.power[0] - 0.2 * 3.0 * lvl.sigma2_alt).abs() < 1e-12);

        let b = solve_two_cell(&two_cell_cfg([0.55, 0.5], [5.0, 5.0])).unwrap();
        assert_eq!(b.case, TwoCellCase::Interior);
        let cur = two_cell_curves(&two_cell_cfg([0.55, 0.5], [5.0, 5.0])).unwrap();
        assert!((cur.g1(b.rho_star) - cur.g2(b.rho_star)).abs() < 1e-10);
        assert!((b.mu[0] + b.mu[1] - 2.0).abs() < 1e-12);
        assert!(b.mu.iter().all(|&m| m >= 0.0));

        let c = solve_two_cell(&two_cell_cfg([0.6, 0.2], [5.0, 2.0])).unwrap();
        assert_eq!(c.case, TwoCellCase::ZfCell2);
        assert_eq!(c.rho_star, 0.0);
    }

    #[test]
    fn interior_powers_match_power_balance() {
        let cfg = two_cell_cfg([0.55, 0.5], [5.0, 5.0]);
        let s = solve_two_cell(&cfg).unwrap();
        let p = boundary_powers(&cfg, s.rho_star).unwrap();
        for k in 0..2 {
            assert!((p[k] - s.power[k]).abs() < 1e-8 * s.power[k]);
        }
        let cur = two_cell_curves(&cfg).unwrap();
        assert!((s.power[0] - cfg.sigma2 / cur.g1(s.rho_star)).abs() < 1e-8 * s.power[0]);
    }

    #[test]
    fn optimum_dominates_ray() {
        let cfg = two_cell_cfg([0.55, 0.5], [5.0, 5.0]);
        let s = solve_two_cell(&cfg).unwrap();
        let cur = two_cell_curves(&cfg).unwrap();
        let best = cur.objective(s.rho_star, 1.0);
        for i in 1..100 {
            let rho = cur.rho_lo + (cur.plot_upper(s.rho_star) - cur.rho_lo) * i as f64 / 100.0;
            if cur.h(rho) > 0.0 {
                assert!(cur.objective(rho, 1.0) <= best * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn infinite_ray_objective_limit() {
        let cfg = two_cell_cfg([0.1, 0.5], [5.0, 5.0]);
        let cur = two_cell_curves(&cfg).unwrap();
        let lim = cur.objective(f64::INFINITY, 1.0);
        assert!((lim - 2.0 * 0.5 * 5.0 / (1.8 * cfg.cell_margin()[1])).abs() < 1e-12);
        assert!((cur.objective(1e9, 1.0) - lim).abs() < 1e-6 * lim);
    }

    #[test]
    fn zf_index_mapping_low_coupling() {
        let cfg = two_cell_cfg([0.1, 0.5], [5.0, 5.0]);
        let k1 = zf_optimality_check(&cfg, 1).unwrap();
        assert!((k1.value - (0.42 - 2.0 * (11.0 / 12.0 - 0.5) / 0.5 + 0.5)).abs() < 1e-12);
        assert!(k1.holds);
        assert_eq!(zero_forcing_cell(1), 0);
        assert!(!zf_optimality_check(&cfg, 0).unwrap().holds);
    }

    #[test]
    fn symmetric_is_interior() {
        let cfg = SystemConfig {
            cells: 2,
            beta: vec![0.4, 0.4],
            eps: vec![vec![1.5, 0.3], vec![0.3, 1.5]],
            gamma: vec![3.0, 3.0],
            sigma2: 1.0,
            p_budget: 1.0,
        };
        let s = solve_two_cell(&cfg).unwrap();
        assert_eq!(s.case, TwoCellCase::Interior);
        assert!((s.rho_star - 1.0).abs() < 1e-10);
        assert!(!zf_optimality_check(&cfg, 0).unwrap().holds);
        assert!(!zf_optimality_check(&cfg, 1).unwrap().holds);
    }

    #[test]
    fn solution_json_keeps_infinity() {
        let s = solve_two_cell(&two_cell_cfg([0.1, 0.5], [5.0, 5.0])).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"rho_star\":\"inf\""));
        let back: TwoCellSolution = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
