//! Synthetic per-character visual features standing in for a frozen vision
//! encoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// First RNG stream of the per-character base patterns.
const FEATURE_STREAM: u64 = 0xfea7 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Visual tokens per character.
    pub tokens: usize,
    pub dim: usize,
    /// Std of the per-call noise; the base pattern has unit variance.
    pub noise: f64,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            tokens: 64,
            dim: 32,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// Fixed base pattern of every character, drawn once from the seed.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    pub config: FeatureConfig,
    base: Vec<Matrix<f64>>,
}

impl FeatureBank {
    pub fn new(chars: usize, config: FeatureConfig) -> Result<Self> {
        if config.tokens == 0 || config.dim == 0 || !(config.noise >= 0.0) {
            return Err(Error::invalid(format!("invalid feature config {config:?}")));
        }
        let base = (0..chars)
            .map(|id| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(FEATURE_STREAM + id as u64);
                let data = (0..config.tokens * config.dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                Matrix::from_vec(config.tokens, config.dim, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureBank { config, base })
    }

    pub fn chars(&self) -> usize {
        self.base.len()
    }

    pub fn base(&self, id: usize) -> Result<&Matrix<f64>> {
        self.base
            .get(id)
            .ok_or_else(|| Error::invalid(format!("character {id} outside feature bank of {}", self.base.len())))
    }

    /// `tokens x dim` features of character `id` with fresh noise of std
    /// `noise` from `rng`.
    pub fn sample(&self, id: usize, rng: &mut impl Rng, noise: f64) -> Result<Matrix<f64>> {
        let mut m = self.base(id)?.clone();
        if noise > 0.0 {
            let dist = Normal::new(0.0, noise).map_err(|e| Error::invalid(e.to_string()))?;
            m.data.iter_mut().for_each(|v| *v += dist.sample(rng));
        }
        Ok(m)
    }
}

/// Features of `id` with noise at the bank's configured level.
pub fn synth_char_features(bank: &FeatureBank, id: usize, rng: &mut impl Rng) -> Result<Matrix<f64>> {
    bank.sample(id, rng, bank.config.noise)
}
