//! Monte-Carlo harnesses: rate CDF of one user, average rate region in
//! three modes, and convergence of the large-system recipe with `N_t`.
//!
//! Draw `d` always uses channel stream `(seed, d)`, so the modes and the
//! rate profiles of one run see the same channels.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::model::{NestedSolution, SystemConfig};
use crate::par;
use crate::power::nested_solve;
use crate::rate_region::{gammas_from_rate, max_rate, profile_grid, RateProfile};

use super::beamform::{build_beamformers_ls, compute_sinr, noise_plus_interference, scaled_unit};
use super::channels::{draw_channels, users_for, ChannelSet};
use super::dual::finite_feasible;
use super::power_control::power_control_only;

/// Relative tolerance of the rate bisections.
pub const RATE_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    /// Optimal finite-system beamformers.
    FiniteOpt,
    /// Large-system beamformers at the large-system boundary rate.
    Ls,
    /// Large-system directions with optimized powers.
    Pc,
}

impl RegionMode {
    pub fn name(self) -> &'static str {
        match self {
            RegionMode::FiniteOpt => "finite_opt",
            RegionMode::Ls => "ls",
            RegionMode::Pc => "pc",
        }
    }
}

impl std::str::FromStr for RegionMode {
    type Err = SolverError;

    fn from_str(s: &str) -> Result<RegionMode> {
        match s {
            "finite_opt" => Ok(RegionMode::FiniteOpt),
            "ls" => Ok(RegionMode::Ls),
            "pc" => Ok(RegionMode::Pc),
            _ => Err(SolverError::Usage(format!("unknown mode {s:?}"))),
        }
    }
}

/// Largest `r` with `feasible(r)`, to relative accuracy `tol`, bracketed
/// around `hint` by doubling and halving.
pub fn max_feasible_rate(
    hint: f64,
    tol: f64,
    mut feasible: impl FnMut(f64) -> Result<bool>,
) -> Result<f64> {
    const MAX_STEPS: usize = 60;
    let start = if hint.is_finite() && hint > 0.0 {
        hint
    } else {
        1.0
    };
    let (mut lo, mut hi);
    if feasible(start)? {
        lo = start;
        hi = 2.0 * start;
        let mut steps = 0;
        while feasible(hi)? {
            lo = hi;
            hi *= 2.0;
            steps += 1;
            if steps == MAX_STEPS {
                return Err(SolverError::MaxIterations {
                    what: "rate bracket expansion",
                    iterations: MAX_STEPS,
                    residual: hi,
                });
            }
        }
    } else {
        hi = start;
        lo = 0.5 * start;
        let mut steps = 0;
        while !feasible(lo)? {
            hi = lo;
            lo *= 0.5;
            steps += 1;
            if steps == MAX_STEPS {
                return Ok(0.0);
            }
        }
    }
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Large-system solution at the targets of rate `r`, over the active cells.
fn nested_at_rate(cfg: &SystemConfig, alpha: &RateProfile, r: f64) -> Result<NestedSolution> {
    let gamma = gammas_from_rate(r, alpha, cfg);
    nested_solve(&cfg.with_gamma(gamma).restrict(&alpha.active()))
}

fn active_targets(cfg: &SystemConfig, alpha: &RateProfile, r: f64) -> Vec<f64> {
    let gamma = gammas_from_rate(r, alpha, cfg);
    alpha.active().iter().map(|&k| gamma[k]).collect()
}

/// Whether rate `r` is reachable on channels `ch` (active cells only) in `mode`.
fn feasible_in_mode(
    cfg: &SystemConfig,
    alpha: &RateProfile,
    ch: &ChannelSet,
    r: f64,
    mode: RegionMode,
) -> Result<bool> {
    if r == 0.0 {
        return Ok(true);
    }
    let gamma = active_targets(cfg, alpha, r);
    match mode {
        RegionMode::FiniteOpt => finite_feasible(ch, &gamma, cfg.sigma2, cfg.p_budget),
        RegionMode::Pc => {
            let sol = match nested_at_rate(cfg, alpha, r) {
                Ok(s) => s,
                Err(e) if e.is_infeasible() => return Ok(false),
                Err(e) => return Err(e),
            };
            let w = match build_beamformers_ls(ch, &sol) {
                Ok(w) => w,
                Err(e) if e.is_infeasible() => return Ok(false),
                Err(e) => return Err(e),
            };
            let dirs: Vec<Vec<_>> =
                w.w.iter()
                    .map(|cell| cell.iter().map(|v| scaled_unit(v, 1.0)).collect())
                    .collect();
            Ok(power_control_only(ch, &dirs, &gamma, cfg.sigma2, cfg.p_budget)?.is_feasible())
        }
        RegionMode::Ls => Err(SolverError::Usage(
            "ls mode has no finite feasibility test".into(),
        )),
    }
}

/// `(U_k / N_t) mean_u log2(1 + SINR_{u,k})` per cell.
fn normalized_rates(ch: &ChannelSet, sinr: &[Vec<f64>]) -> Vec<f64> {
    sinr.iter()
        .zip(&ch.users)
        .map(|(s, &u)| {
            let mean = s.iter().map(|x| (1.0 + x).log2()).sum::<f64>() / u as f64;
            u as f64 / ch.nt as f64 * mean
        })
        .collect()
}

/// One row of the average rate region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub alpha: Vec<f64>,
    /// Per-cell rates normalized by `N_t`, averaged over draws.
    pub mean_rates: Vec<f64>,
    /// Large-system boundary sum rate at this profile.
    pub ls_rate: f64,
}

/// Average rate region over `draws` channel draws.
///
/// `finite_opt` and `pc` bisect the largest sum rate each draw supports
/// with their own beamformers and average `alpha_k r`; `ls` applies the
/// large-system beamformers at the boundary rate and averages the achieved
/// per-cell rates.
pub fn run_avg_rate_region(
    cfg: &SystemConfig,
    nt: usize,
    users: &[usize],
    draws: usize,
    n_alpha: usize,
    mode: RegionMode,
    seed: u64,
) -> Result<Vec<RegionRow>> {
    cfg.with_gamma(vec![1.0; cfg.cells]).validated()?;
    if draws == 0 {
        return Ok(Vec::new());
    }
    let grid = profile_grid(cfg.cells, n_alpha);
    let channels: Vec<ChannelSet> =
        par::map_indexed(draws, |d| draw_channels(cfg, nt, users, seed, d as u64))
            .into_iter()
            .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(grid.len());
    for alpha in &grid {
        let active = alpha.active();
        let ls_rate = max_rate(cfg, alpha, RATE_TOL * 1e-2)?;
        let per_draw: Vec<Result<Vec<f64>>> = match mode {
            RegionMode::Ls => {
                let sol = if ls_rate > 0.0 {
                    Some(nested_at_rate(cfg, alpha, ls_rate)?)
                } else {
                    None
                };
                par::map_indexed(draws, |d| {
                    let mut rates = vec![0.0; cfg.cells];
                    if let Some(sol) = &sol {
                        let ch = channels[d].restrict(&active);
                        let w = build_beamformers_ls(&ch, sol)?;
                        let r = normalized_rates(&ch, &compute_sinr(&ch, &w, cfg.sigma2));
                        for (&k, v) in active.iter().zip(r) {
                            rates[k] = v;
                        }
                    }
                    Ok(rates)
                })
            }
            _ => par::map_indexed(draws, |d| {
                if active.is_empty() {
                    return Ok(vec![0.0; cfg.cells]);
                }
                let ch = channels[d].restrict(&active);
                let r = max_feasible_rate(ls_rate, RATE_TOL, |r| {
                    feasible_in_mode(cfg, alpha, &ch, r, mode)
                })?;
                Ok(alpha.alpha.iter().map(|a| a * r).collect())
            }),
        };
        let mut mean = vec![0.0; cfg.cells];
        for r in per_draw {
            for (m, v) in mean.iter_mut().zip(r?) {
                *m += v / draws as f64;
            }
        }
        rows.push(RegionRow {
            alpha: alpha.alpha.clone(),
            mean_rates: mean,
            ls_rate,
        });
    }
    Ok(rows)
}

/// Empirical rate distribution of the tracked user at one `N_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    pub nt: usize,
    /// Sorted per-draw rates `log2(1 + SINR)`.
    pub rates: Vec<f64>,
    /// Large-system per-user rate of the tracked cell.
    pub ls_rate: f64,
}

impl CdfTable {
    /// `(rate, P(R <= rate))` pairs.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.rates.len() as f64;
        self.rates
            .iter()
            .enumerate()
            .map(|(i, &r)| (r, (i + 1) as f64 / n))
            .collect()
    }

    pub fn median(&self) -> Option<f64> {
        let n = self.rates.len();
        if n == 0 {
            None
        } else if n % 2 == 1 {
            Some(self.rates[n / 2])
        } else {
            Some(0.5 * (self.rates[n / 2 - 1] + self.rates[n / 2]))
        }
    }
}

/// Rate CDF of the first user of the first cell with large-system
/// beamformers at the boundary rate for `alpha`, for each `N_t`.
pub fn run_rate_cdf(
    cfg: &SystemConfig,
    alpha: &RateProfile,
    nts: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<CdfTable>> {
    if alpha.alpha.first().map_or(true, |a| *a <= 0.0) {
        return Err(SolverError::Usage(
            "the tracked cell must have a positive rate share".into(),
        ));
    }
    if alpha.active().len() != cfg.cells {
        return Err(SolverError::Usage(
            "every cell needs a positive rate share".into(),
        ));
    }
    let r = max_rate(cfg, alpha, RATE_TOL * 1e-2)?;
    let sol = nested_at_rate(cfg, alpha, r)?;
    let ls_rate = alpha.alpha[0] * r / cfg.beta[0];
    nts.iter()
        .map(|&nt| {
            let users = users_for(cfg, nt)?;
            let per_draw = par::map_indexed(draws, |d| {
                let ch = draw_channels(cfg, nt, &users, seed, d as u64)?;
                let w = build_beamformers_ls(&ch, &sol)?;
                let s = compute_sinr(&ch, &w, cfg.sigma2);
                Ok((1.0 + s[0][0]).log2())
            });
            let mut rates: Vec<f64> = per_draw.into_iter().collect::<Result<_>>()?;
            rates.sort_by(f64::total_cmp);
            Ok(CdfTable { nt, rates, ls_rate })
        })
        .collect()
}

/// Mean relative errors of the large-system recipe at one `N_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub nt: usize,
    /// Mean over users and draws of `|SINR / gamma - 1|`.
    pub mean_sinr_err: f64,
    /// Mean over cells and draws of `|P_measured / P_k - 1|`.
    pub mean_power_err: f64,
    /// Mean over altruistic users and draws of the relative error of the
    /// measured noise plus interference against the large-system value;
    /// `None` without altruistic cells.
    pub mean_noise_err: Option<f64>,
    /// Largest zero-forcing leakage `|h w| / (||h|| ||w||)` over altruistic
    /// beamformers and the selfish users they protect.
    pub max_zf_leakage: f64,
}

#[derive(Clone, Debug, Default)]
struct DrawErrors {
    sinr: f64,
    power: f64,
    noise: Option<f64>,
    leakage: f64,
}

fn draw_errors(cfg: &SystemConfig, sol: &NestedSolution, ch: &ChannelSet) -> Result<DrawErrors> {
    let w = build_beamformers_ls(ch, sol)?;
    let sinr = compute_sinr(ch, &w, cfg.sigma2);
    let n_users: usize = ch.total_users();
    let sinr_err = sinr
        .iter()
        .enumerate()
        .flat_map(|(k, s)| s.iter().map(move |x| (x / cfg.gamma[k] - 1.0).abs()))
        .sum::<f64>()
        / n_users as f64;
    let mut power_err = 0.0;
    for k in 0..cfg.cells {
        let target = sol
            .bs_power(k)
            .ok_or_else(|| SolverError::Internal(format!("cell {k} missing from the levels")))?;
        power_err += (w.bs_power(k) / target - 1.0).abs();
    }
    power_err /= cfg.cells as f64;

    let mut noise_sum = 0.0;
    let mut noise_count = 0usize;
    let mut leakage: f64 = 0.0;
    let mut earlier: Vec<usize> = Vec::new();
    for (n, level) in sol.levels.iter().enumerate() {
        if n > 0 {
            for &k in &level.selfish {
                let pos = level
                    .cells
                    .iter()
                    .position(|&c| c == k)
                    .expect("selfish cell is active");
                let expected = level.cell_noise[pos];
                for u in 0..ch.users[k] {
                    let got = noise_plus_interference(ch, &w, cfg.sigma2, k, u, &earlier);
                    noise_sum += (got / expected - 1.0).abs();
                    noise_count += 1;
                }
                for wv in &w.w[k] {
                    let nw = crate::linalg::norm(wv);
                    for &j in &earlier {
                        for u in 0..ch.users[j] {
                            let h = ch.h(j, u, k);
                            let nh = crate::linalg::norm(h);
                            if nw > 0.0 && nh > 0.0 {
                                leakage = leakage.max(crate::linalg::dot(h, wv).norm() / (nh * nw));
                            }
                        }
                    }
                }
            }
        }
        earlier.extend(&level.selfish);
    }
    Ok(DrawErrors {
        sinr: sinr_err,
        power: power_err,
        noise: (noise_count > 0).then(|| noise_sum / noise_count as f64),
        leakage,
    })
}

/// Convergence of SINR, BS power and altruistic noise with `N_t` for the
/// large-system beamformers of `cfg` (its configured targets).
pub fn run_convergence(
    cfg: &SystemConfig,
    nts: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    cfg.validated()?;
    let sol = nested_solve(cfg)?;
    if draws == 0 {
        return Ok(Vec::new());
    }
    nts.iter()
        .map(|&nt| {
            let users = users_for(cfg, nt)?;
            let per_draw = par::map_indexed(draws, |d| {
                let ch = draw_channels(cfg, nt, &users, seed, d as u64)?;
                draw_errors(cfg, &sol, &ch)
            });
            let mut acc = DrawErrors::default();
            let mut noise = Vec::new();
            for e in per_draw {
                let e = e?;
                acc.sinr += e.sinr / draws as f64;
                acc.power += e.power / draws as f64;
                acc.leakage = acc.leakage.max(e.leakage);
                noise.extend(e.noise);
            }
            Ok(ConvergenceRow {
                nt,
                mean_sinr_err: acc.sinr,
                mean_power_err: acc.power,
                mean_noise_err: (!noise.is_empty())
                    .then(|| noise.iter().sum::<f64>() / noise.len() as f64),
                max_zf_leakage: acc.leakage,
            })
        })
        .collect()
}
