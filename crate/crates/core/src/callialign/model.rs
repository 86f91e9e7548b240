use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::table::QUERIES;
use crate::error::{Error, Result};
use crate::nn::attention::AttentionCache;
use crate::nn::layers::{FeedForwardCache, LayerNormCache};
use crate::nn::param::join;
use crate::nn::{
    load_into, sinusoidal_positions, Activation, Block, FeedForward, LayerNorm, Matrix, Module, MultiHeadAttention,
    Param, Scalar, Tensor3,
};

pub const MODEL_TYPE: &str = "callialign/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_dim: usize,
    /// Visual tokens per character.
    pub tokens: usize,
    /// Width of each visual token.
    pub feature_dim: usize,
    pub activation: Activation,
    /// Add sinusoidal positions to the feature tokens. Off by default, which
    /// makes the output invariant to token order.
    pub feature_positions: bool,
}

impl Default for AlignModelConfig {
    fn default() -> Self {
        AlignModelConfig {
            dim: 128,
            heads: 8,
            blocks: 4,
            ff_dim: 512,
            tokens: 64,
            feature_dim: 32,
            activation: Activation::Gelu,
            feature_positions: false,
        }
    }
}

impl AlignModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "{} heads must divide width {}",
                self.heads, self.dim
            )));
        }
        if self.blocks == 0 || self.ff_dim == 0 || self.tokens == 0 || self.feature_dim == 0 {
            return Err(Error::invalid(
                "blocks, ff_dim, tokens and feature_dim must be positive",
            ));
        }
        Ok(())
    }
}

/// `x += attn(ln_q(x), ln_kv(f))`, then `x += ff(ln_ff(x))`.
#[derive(Debug, Clone)]
pub struct ResamplerBlock<T> {
    pub ln_q: LayerNorm<T>,
    pub ln_kv: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub ln_ff: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    ln_q: LayerNormCache<T>,
    ln_kv: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln_ff: LayerNormCache<T>,
    ff: FeedForwardCache<T>,
}

impl<T: Scalar> Module<T> for ResamplerBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.ln_q.visit(&join(prefix, "ln_q"), f);
        self.ln_kv.visit(&join(prefix, "ln_kv"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln_ff.visit(&join(prefix, "ln_ff"), f);
        self.ff.visit(&join(prefix, "ff"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.ln_q.visit_mut(&join(prefix, "ln_q"), f);
        self.ln_kv.visit_mut(&join(prefix, "ln_kv"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln_ff.visit_mut(&join(prefix, "ln_ff"), f);
        self.ff.visit_mut(&join(prefix, "ff"), f);
    }
}

/// Perceiver-style resampler: three learned queries read a character's
/// visual tokens through stacked cross-attention blocks.
#[derive(Debug, Clone)]
pub struct AlignModel<T> {
    pub config: AlignModelConfig,
    pub queries: Param<T>,
    pub blocks: Vec<ResamplerBlock<T>>,
    pub norm: LayerNorm<T>,
    positions: Option<Matrix<T>>,
}

#[derive(Debug, Clone)]
pub struct AlignCache<T> {
    groups: usize,
    blocks: Vec<BlockCache<T>>,
    norm: LayerNormCache<T>,
}

impl<T: Scalar> AlignModel<T> {
    pub fn new(config: AlignModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let queries = Param::uniform(&[QUERIES, config.dim], 1.0, &mut rng);
        let blocks = (0..config.blocks)
            .map(|_| {
                Ok(ResamplerBlock {
                    ln_q: LayerNorm::new(config.dim),
                    ln_kv: LayerNorm::new(config.feature_dim),
                    attn: MultiHeadAttention::new(config.dim, config.feature_dim, config.heads, &mut rng)?,
                    ln_ff: LayerNorm::new(config.dim),
                    ff: FeedForward::new(config.dim, config.ff_dim, config.activation, &mut rng),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let positions = config
            .feature_positions
            .then(|| sinusoidal_positions(config.tokens, config.feature_dim));
        Ok(AlignModel {
            norm: LayerNorm::new(config.dim),
            queries,
            blocks,
            positions,
            config,
        })
    }

    /// Forward over `groups` characters whose `tokens x feature_dim`
    /// feature blocks are stacked row-wise. Output rows `3g..3g+3` belong to
    /// character `g`.
    pub fn forward_stacked(&self, features: &Matrix<T>, groups: usize) -> Result<(Matrix<T>, AlignCache<T>)> {
        let v = self.config.tokens;
        if features.cols != self.config.feature_dim || groups == 0 || features.rows != groups * v {
            return Err(Error::dim(format!(
                "expected {groups} blocks of {v}x{} features, got {}x{}",
                self.config.feature_dim, features.rows, features.cols
            )));
        }
        let mut f = features.clone();
        if let Some(pos) = &self.positions {
            for r in 0..f.rows {
                for (a, &p) in f.row_mut(r).iter_mut().zip(pos.row(r % v)) {
                    *a += p;
                }
            }
        }
        let d = self.config.dim;
        let mut x = Matrix::zeros(groups * QUERIES, d);
        for g in 0..groups {
            x.data[g * QUERIES * d..(g + 1) * QUERIES * d].copy_from_slice(&self.queries.value);
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (q, ln_q) = b.ln_q.forward(&x);
            let (kv, ln_kv) = b.ln_kv.forward(&f);
            let (att, attn) = b.attn.forward_grouped(&q, &kv, groups)?;
            x.add_assign(&att);
            let (h, ln_ff) = b.ln_ff.forward(&x);
            let (y, ff) = b.ff.forward(&h);
            x.add_assign(&y);
            caches.push(BlockCache {
                ln_q,
                ln_kv,
                attn,
                ln_ff,
                ff,
            });
        }
        let (out, norm) = self.norm.forward(&x);
        Ok((
            out,
            AlignCache {
                groups,
                blocks: caches,
                norm,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the feature gradient.
    pub fn backward_stacked(&mut self, cache: &AlignCache<T>, dy: &Matrix<T>) -> Matrix<T> {
        let mut dx = self.norm.backward(&cache.norm, dy);
        let mut df: Option<Matrix<T>> = None;
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            let dh = b.ff.backward(&c.ff, &dx);
            dx.add_assign(&b.ln_ff.backward(&c.ln_ff, &dh));
            let (dq, dkv) = b.attn.backward(&c.attn, &dx);
            dx.add_assign(&b.ln_q.backward(&c.ln_q, &dq));
            let dfeat = b.ln_kv.backward(&c.ln_kv, &dkv);
            match &mut df {
                Some(acc) => acc.add_assign(&dfeat),
                None => df = Some(dfeat),
            }
        }
        let d = self.config.dim;
        for g in 0..cache.groups {
            for (q, &v) in self
                .queries
                .grad
                .iter_mut()
                .zip(&dx.data[g * QUERIES * d..(g + 1) * QUERIES * d])
            {
                *q += v;
            }
        }
        df.expect("at least one block")
    }

    /// Pseudo embeddings of each character, shape `(n, 3, dim)`.
    pub fn forward(&self, features: &[Matrix<T>]) -> Result<Tensor3<T>> {
        let d = self.config.dim;
        if features.is_empty() {
            return Ok(Tensor3::zeros([0, QUERIES, d]));
        }
        let mut stacked = Matrix::zeros(0, self.config.feature_dim);
        for (i, f) in features.iter().enumerate() {
            if f.shape() != (self.config.tokens, self.config.feature_dim) {
                return Err(Error::dim(format!(
                    "features of character {i} are {:?}, expected {}x{}",
                    f.shape(),
                    self.config.tokens,
                    self.config.feature_dim
                )));
            }
            stacked.data.extend_from_slice(&f.data);
            stacked.rows += f.rows;
        }
        let (out, _) = self.forward_stacked(&stacked, features.len())?;
        Ok(Tensor3 {
            dims: [features.len(), QUERIES, d],
            data: out.data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> AlignModel<U> {
        let mut other = AlignModel::<U>::new(self.config.clone(), 0).expect("validated config");
        let mut values = Vec::new();
        self.visit("", &mut |_, p| values.push(p.value.clone()));
        let mut it = values.into_iter();
        other.visit_mut("", &mut |_, p| {
            p.value = it
                .next()
                .expect("same layout")
                .iter()
                .map(|&v| U::of(v.to_f64().unwrap()))
                .collect();
        });
        other
    }
}

impl<T: Scalar> Module<T> for AlignModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "queries"), &self.queries);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.norm.visit(&join(prefix, "norm"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "queries"), &mut self.queries);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

/// One character: `tokens x feature_dim` in, `3 x dim` out.
impl<T: Scalar> Block<T> for AlignModel<T> {
    type Cache = AlignCache<T>;
    fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, AlignCache<T>) {
        self.forward_stacked(x, 1).expect("feature shape")
    }
    fn backward(&mut self, cache: &AlignCache<T>, dy: &Matrix<T>) -> Matrix<T> {
        self.backward_stacked(cache, dy)
    }
}

pub fn load_align_model(dir: &Path) -> Result<AlignModel<f32>> {
    let manifest = crate::nn::read_manifest(dir)?;
    let config: AlignModelConfig =
        serde_json::from_value(manifest.config.clone()).map_err(|e| Error::parse("config", e.to_string()))?;
    let mut model = AlignModel::new(config, 0)?;
    load_into(dir, MODEL_TYPE, &mut model)?;
    Ok(model)
}
