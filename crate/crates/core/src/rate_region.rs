//! Large-system rate-profile optimization: for a split `alpha` of the sum
//! rate, find the largest sum rate the power budget supports.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::model::{SystemConfig, Violation};
use crate::par;
use crate::power::nested_solve;

/// Share of the sum rate given to each cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateProfile {
    pub alpha: Vec<f64>,
}

impl RateProfile {
    pub fn new(alpha: Vec<f64>) -> Result<RateProfile> {
        let mut bad = Vec::new();
        for (k, a) in alpha.iter().enumerate() {
            if !a.is_finite() || *a < 0.0 {
                bad.push(Violation {
                    path: format!("alpha[{k}]"),
                    message: "negative or not finite".into(),
                });
            }
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            bad.push(Violation {
                path: "alpha".into(),
                message: format!("sums to {sum}, expected 1"),
            });
        }
        if bad.is_empty() {
            Ok(RateProfile { alpha })
        } else {
            Err(SolverError::InvalidConfig(bad))
        }
    }

    /// `(a, 1 - a)` for two cells.
    pub fn pair(a: f64) -> Result<RateProfile> {
        RateProfile::new(vec![a, 1.0 - a])
    }

    /// Cells with a nonzero share.
    pub fn active(&self) -> Vec<usize> {
        (0..self.alpha.len())
            .filter(|&k| self.alpha[k] > 0.0)
            .collect()
    }
}

/// `gamma_k = 2^(alpha_k r / beta_k) - 1`; zero for silent cells.
pub fn gammas_from_rate(r: f64, alpha: &RateProfile, cfg: &SystemConfig) -> Vec<f64> {
    alpha
        .alpha
        .iter()
        .zip(&cfg.beta)
        .map(|(a, b)| {
            if *a > 0.0 {
                (a * r / b).exp2() - 1.0
            } else {
                0.0
            }
        })
        .collect()
}

fn check_inputs(cfg: &SystemConfig, alpha: &RateProfile) -> Result<()> {
    if alpha.alpha.len() != cfg.cells {
        return Err(SolverError::InvalidConfig(vec![Violation {
            path: "alpha".into(),
            message: format!("length {} != L = {}", alpha.alpha.len(), cfg.cells),
        }]));
    }
    // Targets come from the rate, so the configured gamma is irrelevant here.
    cfg.with_gamma(vec![1.0; cfg.cells]).validated()
}

fn feasible_unchecked(cfg: &SystemConfig, alpha: &RateProfile, r: f64) -> Result<bool> {
    let active = alpha.active();
    if r == 0.0 || active.is_empty() {
        return Ok(true);
    }
    let gamma = gammas_from_rate(r, alpha, cfg);
    let sub = cfg.with_gamma(gamma).restrict(&active);
    match nested_solve(&sub) {
        Ok(sol) => Ok(sol.phi <= 1.0),
        Err(e) if e.is_infeasible() => Ok(false),
        Err(e) => Err(e),
    }
}

/// Whether sum rate `r` split by `alpha` fits the per-BS power budget.
pub fn feasible_rate(cfg: &SystemConfig, alpha: &RateProfile, r: f64) -> Result<bool> {
    check_inputs(cfg, alpha)?;
    if !(r >= 0.0) {
        return Err(SolverError::Usage(format!(
            "rate must be nonnegative, got {r}"
        )));
    }
    feasible_unchecked(cfg, alpha, r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSearch {
    pub r_star: f64,
    /// Final bracket; `lo` feasible, `hi` infeasible.
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
    /// Set when no positive rate below the tolerance was feasible.
    pub zero_rate: bool,
    /// Result of the monotonicity spot check `feasible(lo/2)`,
    /// `feasible(lo)`, `!feasible(hi)`.
    pub monotone_checked: bool,
}

const MAX_DOUBLINGS: usize = 200;

/// Bisection for the largest feasible sum rate.
pub fn max_rate_search(cfg: &SystemConfig, alpha: &RateProfile, tol: f64) -> Result<RateSearch> {
    check_inputs(cfg, alpha)?;
    if !(tol > 0.0) {
        return Err(SolverError::Usage(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let feasible = |r: f64| feasible_unchecked(cfg, alpha, r);
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while feasible(hi)? {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(SolverError::MaxIterations {
                what: "rate upper bound",
                iterations: doublings,
                residual: hi,
            });
        }
    }
    let mut iterations = 0;
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let monotone_checked = feasible(0.5 * lo)? && feasible(lo)? && !feasible(hi)?;
    Ok(RateSearch {
        r_star: lo,
        lo,
        hi,
        iterations,
        zero_rate: lo == 0.0,
        monotone_checked,
    })
}

/// Largest feasible sum rate to within `tol`.
pub fn max_rate(cfg: &SystemConfig, alpha: &RateProfile, tol: f64) -> Result<f64> {
    max_rate_search(cfg, alpha, tol).map(|s| s.r_star)
}

/// One point of the rate-region boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub alpha: Vec<f64>,
    pub r_star: f64,
    /// Per-cell rates normalized by `N_t`: `beta_k r_k = alpha_k r*`.
    pub rates: Vec<f64>,
    pub zero_rate: bool,
}

/// Rate profiles on a uniform grid: `alpha_1` in `n_points` steps for two
/// cells, the simplex lattice with `n_points - 1` divisions otherwise.
pub fn profile_grid(cells: usize, n_points: usize) -> Vec<RateProfile> {
    if cells == 0 || n_points == 0 {
        return Vec::new();
    }
    if cells == 1 {
        return vec![RateProfile { alpha: vec![1.0] }];
    }
    let div = n_points.saturating_sub(1).max(1);
    let mut out = Vec::new();
    let mut counts = vec![0usize; cells];
    compositions(div, 0, &mut counts, &mut out);
    if cells == 2 && n_points == 1 {
        out.truncate(1);
    }
    out.into_iter()
        .map(|c| {
            let mut alpha: Vec<f64> = c.iter().map(|&n| n as f64 / div as f64).collect();
            // Last share absorbs rounding so the profile sums to one.
            let head: f64 = alpha[..cells - 1].iter().sum();
            alpha[cells - 1] = (1.0 - head).max(0.0);
            RateProfile { alpha }
        })
        .collect()
}

fn compositions(left: usize, k: usize, counts: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let last = counts.len() - 1;
    if k == last {
        counts[k] = left;
        out.push(counts.clone());
        return;
    }
    for n in (0..=left).rev() {
        counts[k] = n;
        compositions(left - n, k + 1, counts, out);
    }
}

/// Boundary of the large-system rate region over [`profile_grid`].
pub fn sweep_boundary(cfg: &SystemConfig, n_points: usize, tol: f64) -> Result<Vec<BoundaryPoint>> {
    let grid = profile_grid(cfg.cells, n_points);
    let points = par::map_indexed(grid.len(), |i| {
        let profile = &grid[i];
        let search = max_rate_search(cfg, profile, tol)?;
        Ok(BoundaryPoint {
            rates: profile.alpha.iter().map(|a| a * search.r_star).collect(),
            alpha: profile.alpha.clone(),
            r_star: search.r_star,
            zero_rate: search.zero_rate,
        })
    });
    points.into_iter().collect()
}
