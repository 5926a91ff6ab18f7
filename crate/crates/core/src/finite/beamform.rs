//! Beamformers built from large-system parameters, SINR evaluation and
//! interference bookkeeping.

use crate::error::{Result, SolverError};
use crate::linalg::{conj, dot, norm, norm_sqr, null_space_basis, CMatrix, Cholesky, C64};
use crate::model::NestedSolution;

use super::channels::ChannelSet;

/// Beamformers `w[k][u]` for every user, plus construction flags.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerSet {
    pub w: Vec<Vec<Vec<C64>>>,
    /// Cells whose regularized matrix was singular and were solved through
    /// the Tikhonov pseudo-inverse.
    pub pseudo_inverse_cells: Vec<usize>,
    /// Recursion level that served each cell.
    pub level_of: Vec<usize>,
}

impl BeamformerSet {
    pub fn zeros(ch: &ChannelSet) -> BeamformerSet {
        BeamformerSet {
            w: ch
                .users
                .iter()
                .map(|&u| vec![vec![C64::new(0.0, 0.0); ch.nt]; u])
                .collect(),
            pseudo_inverse_cells: Vec::new(),
            level_of: vec![0; ch.cells()],
        }
    }

    /// `sum_u ||w_{u,k}||^2`.
    pub fn bs_power(&self, k: usize) -> f64 {
        self.w[k].iter().map(|w| norm_sqr(w)).sum()
    }

    pub fn bs_powers(&self) -> Vec<f64> {
        (0..self.w.len()).map(|k| self.bs_power(k)).collect()
    }
}

/// `mu I + sum scale * h^H h` over the given row vectors.
pub(crate) fn weighted_covariance<'a>(
    dim: usize,
    mu: f64,
    terms: impl IntoIterator<Item = (&'a [C64], f64)>,
) -> CMatrix {
    let mut s = CMatrix::identity(dim);
    for i in 0..dim {
        s[(i, i)] = C64::new(mu, 0.0);
    }
    for (h, scale) in terms {
        if scale != 0.0 {
            s.add_outer_conj(h, scale);
        }
    }
    s
}

/// `S^{-1} h^H` for each row `h`, with a Tikhonov pseudo-inverse
/// `(S^2 + d I)^{-1} S h^H` when `S` is singular. The flag reports the
/// fallback.
pub(crate) fn solve_directions(s: &CMatrix, rows: &[&[C64]]) -> (Vec<Vec<C64>>, bool) {
    if let Ok(ch) = Cholesky::factor(s) {
        let v = rows.iter().map(|h| ch.solve(&conj(h))).collect();
        return (v, false);
    }
    let n = s.rows();
    let s2 = s.mul(s);
    let scale = (0..n)
        .fold(0.0f64, |m, i| m.max(s2[(i, i)].re))
        .max(f64::MIN_POSITIVE);
    let mut reg = s2;
    for i in 0..n {
        reg[(i, i)] += C64::new(1e-12 * scale, 0.0);
    }
    let v = match Cholesky::factor(&reg) {
        Ok(ch) => rows
            .iter()
            .map(|h| ch.solve(&s.mul_vec(&conj(h))))
            .collect(),
        Err(_) => rows.iter().map(|h| conj(h)).collect(),
    };
    (v, true)
}

/// `sqrt(power) v / ||v||`, or zero when `v` vanishes.
pub(crate) fn scaled_unit(v: &[C64], power: f64) -> Vec<C64> {
    let nv = norm(v);
    if nv > 0.0 && power > 0.0 {
        let s = power.sqrt() / nv;
        v.iter().map(|x| x * s).collect()
    } else {
        vec![C64::new(0.0, 0.0); v.len()]
    }
}

/// `h B` for a row vector `h` and an `n x m` basis `B`.
pub(crate) fn project_row(h: &[C64], b: &CMatrix) -> Vec<C64> {
    let (n, m) = (b.rows(), b.cols());
    let mut out = vec![C64::new(0.0, 0.0); m];
    for i in 0..n {
        let hi = h[i];
        for (t, o) in out.iter_mut().enumerate() {
            *o += hi * b[(i, t)];
        }
    }
    out
}

/// Orthonormal basis of `{w : h w = 0}` for all users of `cells`, channels
/// from BS `k`; `None` when `cells` is empty.
pub fn zero_forcing_basis(ch: &ChannelSet, k: usize, cells: &[usize]) -> Result<Option<CMatrix>> {
    let rows: Vec<&[C64]> = cells
        .iter()
        .flat_map(|&j| (0..ch.users[j]).map(move |u| (j, u)))
        .map(|(j, u)| ch.h(j, u, k))
        .collect();
    if rows.is_empty() {
        return Ok(None);
    }
    if rows.len() >= ch.nt {
        return Err(SolverError::DimensionExhausted {
            level: 0,
            fraction: 1.0 - rows.len() as f64 / ch.nt as f64,
        });
    }
    null_space_basis(&CMatrix::from_rows(&rows)).map(Some)
}

/// Beamformers from a large-system nested solution.
///
/// Selfish cells of level 0 use `v = (mu_k I + sum_j lambda_j / N_t sum_u
/// h^H h)^{-1} h^H` with per-user power `p_k / N_t`. Cells selfish at a
/// deeper level work in the null space of every user of the earlier
/// levels' selfish cells, with dimension `N'` in place of `N_t`. The matrix
/// includes the user's own term: by Sherman-Morrison this leaves the
/// direction unchanged and allows one factorization per cell.
pub fn build_beamformers_ls(ch: &ChannelSet, sol: &NestedSolution) -> Result<BeamformerSet> {
    let mut out = BeamformerSet::zeros(ch);
    let mut earlier_selfish: Vec<usize> = Vec::new();
    for (n, level) in sol.levels.iter().enumerate() {
        for (pos, &k) in level.selfish.iter().enumerate() {
            out.level_of[k] = n;
            let basis = zero_forcing_basis(ch, k, &earlier_selfish).map_err(|e| match e {
                SolverError::DimensionExhausted { fraction, .. } => {
                    SolverError::DimensionExhausted { level: n, fraction }
                }
                other => other,
            })?;
            let dim = basis.as_ref().map_or(ch.nt, |b| b.cols());
            let reduce = |h: &[C64]| -> Vec<C64> {
                match &basis {
                    Some(b) => project_row(h, b),
                    None => h.to_vec(),
                }
            };
            let local = |cell: usize| level.cells.iter().position(|&c| c == cell).unwrap();
            let mu = level.dual.mu[local(k)];
            let mut reduced: Vec<(Vec<C64>, f64)> = Vec::new();
            for &j in &level.selfish {
                let lam = level.dual.lambda[local(j)] / dim as f64;
                for u in 0..ch.users[j] {
                    reduced.push((reduce(ch.h(j, u, k)), lam));
                }
            }
            let s = weighted_covariance(dim, mu, reduced.iter().map(|(h, l)| (h.as_slice(), *l)));
            let own: Vec<Vec<C64>> = (0..ch.users[k]).map(|u| reduce(ch.h(k, u, k))).collect();
            let own_rows: Vec<&[C64]> = own.iter().map(|v| v.as_slice()).collect();
            let (dirs, pseudo) = solve_directions(&s, &own_rows);
            if pseudo {
                out.pseudo_inverse_cells.push(k);
            }
            let p = level.per_user_power[pos] / dim as f64;
            for (u, v) in dirs.iter().enumerate() {
                let wbar = scaled_unit(v, p);
                out.w[k][u] = match &basis {
                    Some(b) => b.mul_vec(&wbar),
                    None => wbar,
                };
            }
        }
        earlier_selfish.extend(level.selfish.iter().copied());
    }
    Ok(out)
}

/// `SINR_{u,k}` for every user, treating interference as noise.
pub fn compute_sinr(ch: &ChannelSet, w: &BeamformerSet, sigma2: f64) -> Vec<Vec<f64>> {
    let l = ch.cells();
    (0..l)
        .map(|k| {
            (0..ch.users[k])
                .map(|u| {
                    let mut signal = 0.0;
                    let mut interference = 0.0;
                    for j in 0..l {
                        let h = ch.h(k, u, j);
                        for (v, wv) in w.w[j].iter().enumerate() {
                            let g = dot(h, wv).norm_sqr();
                            if j == k && v == u {
                                signal = g;
                            } else {
                                interference += g;
                            }
                        }
                    }
                    signal / (sigma2 + interference)
                })
                .collect()
        })
        .collect()
}

/// Noise plus interference from the BSs in `from` at user `u` of cell `k`.
pub fn noise_plus_interference(
    ch: &ChannelSet,
    w: &BeamformerSet,
    sigma2: f64,
    k: usize,
    u: usize,
    from: &[usize],
) -> f64 {
    sigma2
        + from
            .iter()
            .map(|&j| {
                w.w[j]
                    .iter()
                    .map(|wv| dot(ch.h(k, u, j), wv).norm_sqr())
                    .sum::<f64>()
            })
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::channels::draw_channels;
    use crate::power::nested_solve;
    use crate::SystemConfig;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn scalar_matched_filter() {
        let cfg = SystemConfig {
            cells: 1,
            beta: vec![1.0],
            eps: vec![vec![1.0]],
            gamma: vec![0.5],
            sigma2: 1.0,
            p_budget: 10.0,
        };
        let sol = nested_solve(&cfg).unwrap();
        let h = c(0.6, -0.8);
        let ch = ChannelSet::from_vectors(1, vec![vec![vec![vec![h]]]]).unwrap();
        let w = build_beamformers_ls(&ch, &sol).unwrap();
        let p = sol.top().per_user_power[0];
        let expected = h.conj() / h.norm() * p.sqrt();
        assert!((w.w[0][0][0] - expected).norm() < 1e-12);
    }

    #[test]
    fn single_user_sinr() {
        let h = vec![c(1.0, 0.5), c(-0.3, 0.2), c(0.1, -1.0)];
        let ch = ChannelSet::from_vectors(3, vec![vec![vec![h.clone()]]]).unwrap();
        let mut w = BeamformerSet::zeros(&ch);
        let p = 2.0;
        w.w[0][0] = scaled_unit(&conj(&h), p / 3.0);
        let s = compute_sinr(&ch, &w, 0.5)[0][0];
        assert!((s - (p / 3.0) * norm_sqr(&h) / 0.5).abs() < 1e-12);
        let zero = BeamformerSet::zeros(&ch);
        assert_eq!(compute_sinr(&ch, &zero, 0.5)[0][0], 0.0);
    }

    /// Straight re-implementation over explicit index tuples.
    fn naive_sinr(ch: &ChannelSet, w: &BeamformerSet, sigma2: f64, k: usize, u: usize) -> f64 {
        let mut all = Vec::new();
        for j in 0..ch.cells() {
            for v in 0..ch.users[j] {
                all.push((j, v));
            }
        }
        let gain = |j: usize, v: usize| {
            let h = ch.h(k, u, j);
            let mut s = c(0.0, 0.0);
            for t in 0..ch.nt {
                s += h[t] * w.w[j][v][t];
            }
            s.norm_sqr()
        };
        let num = gain(k, u);
        let den: f64 = all
            .iter()
            .filter(|&&p| p != (k, u))
            .map(|&(j, v)| gain(j, v))
            .sum();
        num / (sigma2 + den)
    }

    fn region_cfg() -> SystemConfig {
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
    fn sinr_matches_naive() {
        let cfg = region_cfg();
        let ch = draw_channels(&cfg, 8, &[4, 6], 2, 0).unwrap();
        let sol = nested_solve(&cfg).unwrap();
        let w = build_beamformers_ls(&ch, &sol).unwrap();
        let s = compute_sinr(&ch, &w, 1.0);
        for k in 0..2 {
            for u in 0..ch.users[k] {
                let n = naive_sinr(&ch, &w, 1.0, k, u);
                assert!((s[k][u] - n).abs() <= 1e-12 * n.max(1.0));
            }
        }
    }

    #[test]
    fn selfish_power_is_per_user_share() {
        let cfg = region_cfg();
        let ch = draw_channels(&cfg, 8, &[4, 6], 2, 1).unwrap();
        let sol = nested_solve(&cfg).unwrap();
        let w = build_beamformers_ls(&ch, &sol).unwrap();
        for (pos, &k) in sol.top().selfish.iter().enumerate() {
            let expected = ch.users[k] as f64 * sol.top().per_user_power[pos] / 8.0;
            assert!((w.bs_power(k) - expected).abs() < 1e-10 * expected);
        }
    }

    #[test]
    fn altruistic_cell_zero_forces() {
        // Cell 0 zero-forces the users of cell 1 in this configuration.
        let cfg = SystemConfig {
            cells: 2,
            beta: vec![0.125, 0.5],
            eps: vec![vec![2.0, 0.5], vec![0.7, 1.8]],
            gamma: vec![5.0, 5.0],
            sigma2: 1.0,
            p_budget: 10.0,
        };
        let sol = nested_solve(&cfg).unwrap();
        assert_eq!(sol.levels.len(), 2);
        let ch = draw_channels(&cfg, 16, &[2, 8], 9, 0).unwrap();
        let w = build_beamformers_ls(&ch, &sol).unwrap();
        assert_eq!(w.level_of, vec![1, 0]);
        for wv in &w.w[0] {
            for u in 0..8 {
                let h = ch.h(1, u, 0);
                assert!(dot(h, wv).norm() <= 1e-9 * norm(h) * norm(wv));
            }
        }
        let level = &sol.levels[1];
        let expected = 2.0 * level.per_user_power[0] / 8.0;
        assert!((w.bs_power(0) - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn pseudo_inverse_fallback_is_flagged() {
        let s = CMatrix::from_rows(&[&[c(1.0, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(0.0, 0.0)]]);
        let h = [c(1.0, 0.0), c(1.0, 0.0)];
        let (v, pseudo) = solve_directions(&s, &[&h]);
        assert!(pseudo);
        assert!((v[0][0] - c(1.0, 0.0)).norm() < 1e-6);
        assert!(v[0][1].norm() < 1e-6);
    }
}
