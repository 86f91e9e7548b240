use rand::Rng;

use super::attention::{AttentionCache, MultiHeadAttention};
use super::layers::{Activation, Block, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache};
use super::param::{join, Module, Param};
use super::tensor::{Matrix, Scalar};
use crate::error::Result;

/// Pre-norm transformer encoder layer:
/// `h = x + attn(ln1(x))`, `y = h + ff(ln2(h))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer<T> {
    pub ln1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub ln2: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    ff: FeedForwardCache<T>,
}

impl<T: Scalar> EncoderLayer<T> {
    pub fn new(dim: usize, heads: usize, ff_dim: usize, activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        Ok(EncoderLayer {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(dim, dim, heads, rng)?,
            ln2: LayerNorm::new(dim),
            ff: FeedForward::new(dim, ff_dim, activation, rng),
        })
    }

    pub fn forward_masked(&self, x: &Matrix<T>, key_mask: Option<&[bool]>) -> Result<(Matrix<T>, EncoderCache<T>)> {
        self.forward_segmented(x, key_mask, None)
    }

    /// Self-attention restricted to rows sharing a segment id.
    pub fn forward_segmented(
        &self,
        x: &Matrix<T>,
        key_mask: Option<&[bool]>,
        segments: Option<&[u32]>,
    ) -> Result<(Matrix<T>, EncoderCache<T>)> {
        let (a, ln1) = self.ln1.forward(x);
        let (att, attn) = self.attn.forward_segmented(&a, &a, key_mask, segments)?;
        let mut h = x.clone();
        h.add_assign(&att);
        let (b, ln2) = self.ln2.forward(&h);
        let (f, ff) = self.ff.forward(&b);
        h.add_assign(&f);
        Ok((h, EncoderCache { ln1, attn, ln2, ff }))
    }

    pub fn backward_cached(&mut self, cache: &EncoderCache<T>, dy: &Matrix<T>) -> Matrix<T> {
        let dff_in = self.ff.backward(&cache.ff, dy);
        let mut dh = self.ln2.backward(&cache.ln2, &dff_in);
        dh.add_assign(dy);
        let (mut da, dkv) = self.attn.backward(&cache.attn, &dh);
        da.add_assign(&dkv);
        let mut dx = self.ln1.backward(&cache.ln1, &da);
        dx.add_assign(&dh);
        dx
    }
}

impl<T: Scalar> Module<T> for EncoderLayer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.ff.visit(&join(prefix, "ff"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.ff.visit_mut(&join(prefix, "ff"), f);
    }
}

impl<T: Scalar> Block<T> for EncoderLayer<T> {
    type Cache = EncoderCache<T>;
    fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, EncoderCache<T>) {
        self.forward_masked(x, None).expect("encoder shapes")
    }
    fn backward(&mut self, cache: &EncoderCache<T>, dy: &Matrix<T>) -> Matrix<T> {
        self.backward_cached(cache, dy)
    }
}
