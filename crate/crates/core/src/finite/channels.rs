//! Rayleigh channel draws.
//!
//! Each Monte-Carlo draw reads its own ChaCha8 stream (key from the seed,
//! stream id = draw index), so a draw can be regenerated on its own and in
//! any order. Within a draw, entry number `e` of the canonical layout uses
//! stream words `4e..4e+4` for one Box-Muller pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SolverError};
use crate::linalg::C64;
use crate::model::SystemConfig;

/// Channels `h[k][u][j]` from BS `j` to user `u` of cell `k`, each a row
/// vector of length `nt`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub nt: usize,
    pub users: Vec<usize>,
    pub seed: u64,
    pub draw: u64,
    data: Vec<C64>,
    offsets: Vec<usize>,
}

impl ChannelSet {
    pub fn cells(&self) -> usize {
        self.users.len()
    }

    fn slot(&self, k: usize, u: usize, j: usize) -> usize {
        let l = self.cells();
        (self.offsets[k] + u) * l + j
    }

    /// Channel from BS `j` to user `u` of cell `k`.
    pub fn h(&self, k: usize, u: usize, j: usize) -> &[C64] {
        let s = self.slot(k, u, j) * self.nt;
        &self.data[s..s + self.nt]
    }

    pub fn total_users(&self) -> usize {
        self.users.iter().sum()
    }

    /// The sub-system of `cells`, keeping only channels among them.
    pub fn restrict(&self, cells: &[usize]) -> ChannelSet {
        let users: Vec<usize> = cells.iter().map(|&k| self.users[k]).collect();
        let mut data = Vec::with_capacity(users.iter().sum::<usize>() * cells.len() * self.nt);
        for &k in cells {
            for u in 0..self.users[k] {
                for &j in cells {
                    data.extend_from_slice(self.h(k, u, j));
                }
            }
        }
        ChannelSet {
            nt: self.nt,
            offsets: offsets(&users),
            users,
            seed: self.seed,
            draw: self.draw,
            data,
        }
    }

    /// Builds a channel set from explicit vectors, `h[k][u][j]`.
    pub fn from_vectors(nt: usize, h: Vec<Vec<Vec<Vec<C64>>>>) -> Result<ChannelSet> {
        let l = h.len();
        let users: Vec<usize> = h.iter().map(|c| c.len()).collect();
        let mut data = Vec::new();
        for (k, cell) in h.iter().enumerate() {
            for (u, user) in cell.iter().enumerate() {
                if user.len() != l {
                    return Err(SolverError::Usage(format!(
                        "user {u} of cell {k} has {} BS channels, expected {l}",
                        user.len()
                    )));
                }
                for v in user {
                    if v.len() != nt {
                        return Err(SolverError::Usage(format!(
                            "channel length {} != nt = {nt}",
                            v.len()
                        )));
                    }
                    data.extend_from_slice(v);
                }
            }
        }
        Ok(ChannelSet {
            nt,
            offsets: offsets(&users),
            users,
            seed: 0,
            draw: 0,
            data,
        })
    }
}

fn offsets(users: &[usize]) -> Vec<usize> {
    users
        .iter()
        .scan(0, |acc, &u| {
            let o = *acc;
            *acc += u;
            Some(o)
        })
        .collect()
}

fn stream(seed: u64, draw: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw);
    rng
}

/// `CN(0, var)` sample from two uniforms.
fn box_muller(rng: &mut ChaCha8Rng, var: f64) -> C64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    let r = (-var * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    C64::new(r * t.cos(), r * t.sin())
}

fn check_dims(cfg: &SystemConfig, nt: usize, users: &[usize]) -> Result<()> {
    if nt == 0 {
        return Err(SolverError::Usage("nt must be at least 1".into()));
    }
    if users.len() != cfg.cells {
        return Err(SolverError::Usage(format!(
            "{} user counts for L = {}",
            users.len(),
            cfg.cells
        )));
    }
    if users.contains(&0) {
        return Err(SolverError::Usage(
            "every cell needs at least one user".into(),
        ));
    }
    Ok(())
}

/// Draw number `draw` of the channel ensemble keyed by `seed`.
pub fn draw_channels(
    cfg: &SystemConfig,
    nt: usize,
    users: &[usize],
    seed: u64,
    draw: u64,
) -> Result<ChannelSet> {
    check_dims(cfg, nt, users)?;
    let l = cfg.cells;
    let total: usize = users.iter().sum();
    let mut rng = stream(seed, draw);
    let mut data = Vec::with_capacity(total * l * nt);
    for (k, &uk) in users.iter().enumerate() {
        for _ in 0..uk {
            for j in 0..l {
                let var = cfg.eps[k][j];
                for _ in 0..nt {
                    data.push(box_muller(&mut rng, var));
                }
            }
        }
    }
    Ok(ChannelSet {
        nt,
        offsets: offsets(users),
        users: users.to_vec(),
        seed,
        draw,
        data,
    })
}

/// A single entry `t` of `h[k][u][j]`, generated by seeking in the stream.
pub fn channel_entry(
    cfg: &SystemConfig,
    nt: usize,
    users: &[usize],
    seed: u64,
    draw: u64,
    (k, u, j, t): (usize, usize, usize, usize),
) -> C64 {
    let before: usize = users[..k].iter().sum();
    let entry = ((before + u) * cfg.cells + j) * nt + t;
    let mut rng = stream(seed, draw);
    rng.set_word_pos(4 * entry as u128);
    box_muller(&mut rng, cfg.eps[k][j])
}

/// User counts `U_k = beta_k nt`, which must be whole numbers.
pub fn users_for(cfg: &SystemConfig, nt: usize) -> Result<Vec<usize>> {
    cfg.beta
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let u = b * nt as f64;
            let r = u.round();
            if (u - r).abs() > 1e-9 * u.max(1.0) || r < 1.0 {
                Err(SolverError::Usage(format!(
                    "beta[{k}] * nt = {u} is not a positive whole number of users"
                )))
            } else {
                Ok(r as usize)
            }
        })
        .collect()
}
