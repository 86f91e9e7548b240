//! Tolerance of nearest-neighbor decoding to Gaussian noise on normalized
//! embeddings, over a grid of noise means and spreads.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::callialign::EmbedTable;
use crate::error::{Error, Result};
use crate::metrics::rouge_l;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseGridConfig {
    pub mu_min: f64,
    pub mu_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub mu_steps: usize,
    pub sigma_steps: usize,
    /// Sentences scored per cell.
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for NoiseGridConfig {
    fn default() -> Self {
        NoiseGridConfig {
            mu_min: -2.0,
            mu_max: 2.0,
            sigma_min: 0.0,
            sigma_max: 2.0,
            mu_steps: 9,
            sigma_steps: 9,
            sentences: 100,
            min_len: 5,
            max_len: 15,
            seed: 0,
        }
    }
}

fn axis(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![lo];
    }
    (0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect()
}

impl NoiseGridConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu_min, self.mu_max, self.sigma_min, self.sigma_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.mu_min > self.mu_max || self.sigma_min > self.sigma_max || self.sigma_min < 0.0 {
            return Err(Error::invalid("grid ranges must be finite, ordered, with sigma >= 0"));
        }
        if self.mu_steps == 0 || self.sigma_steps == 0 || self.sentences == 0 {
            return Err(Error::invalid("grid steps and sentence count must be positive"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid(format!(
                "sentence lengths [{}, {}] are invalid",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    pub fn mus(&self) -> Vec<f64> {
        axis(self.mu_min, self.mu_max, self.mu_steps)
    }

    pub fn sigmas(&self) -> Vec<f64> {
        axis(self.sigma_min, self.sigma_max, self.sigma_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseGrid {
    pub mus: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// `fidelity[i][j]` is the mean ROUGE-L at `mus[i]`, `sigmas[j]`.
    pub fidelity: Vec<Vec<f64>>,
}

impl NoiseGrid {
    /// Header row of sigmas, then one row per mu; 4 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mu\\sigma");
        for s in &self.sigmas {
            write!(out, ",{s:.4}").unwrap();
        }
        out.push('\n');
        for (mu, row) in self.mus.iter().zip(&self.fidelity) {
            write!(out, "{mu:.4}").unwrap();
            for v in row {
                write!(out, ",{v:.4}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

struct Sentence {
    tokens: Vec<usize>,
    /// Unit Gaussian noise, one row per token.
    noise: Vec<Vec<f64>>,
}

/// Sentences and their unit noise depend only on `(seed, sentence index)`,
/// so every cell perturbs the same sentences with the same draws scaled by
/// its own mean and spread.
fn sentence(table: &EmbedTable, cfg: &NoiseGridConfig, index: usize) -> Sentence {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..table.vocab())).collect();
    let noise = tokens
        .iter()
        .map(|_| (0..table.dim()).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    Sentence { tokens, noise }
}

fn cell_fidelity(table: &EmbedTable, sentences: &[Sentence], mu: f64, sigma: f64) -> f64 {
    let mut total = 0.0;
    let mut x = vec![0.0; table.dim()];
    for s in sentences {
        let decoded: Vec<usize> = s
            .tokens
            .iter()
            .zip(&s.noise)
            .map(|(&t, z)| {
                for ((xi, &r), &zi) in x.iter_mut().zip(table.normalized.row(t)).zip(z) {
                    *xi = r + mu + sigma * zi;
                }
                table.nearest(&x).0
            })
            .collect();
        total += rouge_l(&decoded, &s.tokens);
    }
    total / sentences.len() as f64
}

pub fn noise_grid(table: &EmbedTable, cfg: &NoiseGridConfig) -> Result<NoiseGrid> {
    cfg.validate()?;
    let sentences: Vec<Sentence> = (0..cfg.sentences).map(|i| sentence(table, cfg, i)).collect();
    let (mus, sigmas) = (cfg.mus(), cfg.sigmas());
    let cells: Vec<(usize, usize)> = (0..mus.len())
        .flat_map(|i| (0..sigmas.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| cell_fidelity(table, &sentences, mus[i], sigmas[j]))
        .collect();
    let fidelity = values.chunks(sigmas.len()).map(|r| r.to_vec()).collect();
    Ok(NoiseGrid { mus, sigmas, fidelity })
}
