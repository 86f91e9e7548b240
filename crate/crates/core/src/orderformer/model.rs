use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::LayerNormCache;
use crate::nn::param::join;
use crate::nn::{
    sinusoidal_positions, Activation, Block, Dense, EncoderCache, EncoderLayer, LayerNorm, Matrix, Module, Param,
    Scalar, Tensor3,
};
use crate::preprocess::{NormalizedSeq, MAX_SEQ};

pub const MODEL_TYPE: &str = "orderformer/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub activation: Activation,
    /// Dropout on the embedded input during training. Zero keeps training
    /// deterministic given the seed and sample order.
    pub dropout: f64,
}

impl Default for OrderModelConfig {
    fn default() -> Self {
        OrderModelConfig {
            dim: 256,
            heads: 8,
            layers: 4,
            ff_dim: 1024,
            max_len: MAX_SEQ,
            activation: Activation::Gelu,
            dropout: 0.0,
        }
    }
}

impl OrderModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "{} heads must divide width {}",
                self.heads, self.dim
            )));
        }
        if self.layers == 0 || self.ff_dim == 0 || self.max_len == 0 {
            return Err(Error::invalid("layers, ff_dim and max_len must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Encoder-only transformer mapping a column sequence to one score per
/// column: input projection, sinusoidal positions, pre-norm encoder layers,
/// final layer norm, scalar output head.
#[derive(Debug, Clone)]
pub struct OrderModel<T> {
    pub config: OrderModelConfig,
    pub input: Dense<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub norm: LayerNorm<T>,
    pub output: Dense<T>,
    positions: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct OrderCache<T> {
    x: Matrix<T>,
    drop_mask: Option<Vec<T>>,
    layers: Vec<EncoderCache<T>>,
    norm: LayerNormCache<T>,
    normed: Matrix<T>,
}

impl<T: Scalar> OrderModel<T> {
    pub fn new(config: OrderModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Dense::new(4, config.dim, &mut rng);
        let layers = (0..config.layers)
            .map(|_| EncoderLayer::new(config.dim, config.heads, config.ff_dim, config.activation, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(OrderModel {
            input,
            layers,
            norm: LayerNorm::new(config.dim),
            output: Dense::new(config.dim, 1, &mut rng),
            positions: sinusoidal_positions(config.max_len, config.dim),
            config,
        })
    }

    fn check_rows(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols != 4 || x.rows > self.config.max_len {
            return Err(Error::dim(format!(
                "expected at most {} rows of 4 coordinates, got {}x{}",
                self.config.max_len, x.rows, x.cols
            )));
        }
        Ok(())
    }

    /// Forward over one sequence. Rows where `key_mask` is false are hidden
    /// from attention; their own scores are still computed.
    pub fn forward_seq(
        &self,
        x: &Matrix<T>,
        key_mask: Option<&[bool]>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<T>, OrderCache<T>)> {
        self.check_rows(x)?;
        let positions: Vec<usize> = (0..x.rows).collect();
        self.forward_rows(x, key_mask, None, &positions, dropout_rng)
    }

    /// Forward over several sequences stacked row-wise; `lengths` gives the
    /// row count of each. Equivalent to separate [`forward_seq`] calls, but
    /// the dense layers run once over the whole stack.
    ///
    /// [`forward_seq`]: Self::forward_seq
    pub fn forward_stacked(
        &self,
        x: &Matrix<T>,
        lengths: &[usize],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<T>, OrderCache<T>)> {
        if x.cols != 4 || lengths.iter().sum::<usize>() != x.rows {
            return Err(Error::dim(format!(
                "stack of {:?} rows vs a {}x{} input",
                lengths, x.rows, x.cols
            )));
        }
        if let Some(&n) = lengths.iter().find(|&&n| n > self.config.max_len) {
            return Err(Error::dim(format!(
                "sequence of {n} rows exceeds {}",
                self.config.max_len
            )));
        }
        let segments: Vec<u32> = lengths
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| std::iter::repeat_n(s as u32, n))
            .collect();
        let positions: Vec<usize> = lengths.iter().flat_map(|&n| 0..n).collect();
        self.forward_rows(x, None, Some(&segments), &positions, dropout_rng)
    }

    fn forward_rows(
        &self,
        x: &Matrix<T>,
        key_mask: Option<&[bool]>,
        segments: Option<&[u32]>,
        positions: &[usize],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<T>, OrderCache<T>)> {
        let mut h = self.input.apply(x);
        for (r, &pos) in positions.iter().enumerate() {
            for (v, &p) in h.row_mut(r).iter_mut().zip(self.positions.row(pos)) {
                *v += p;
            }
        }
        let drop_mask = match dropout_rng {
            Some(rng) if self.config.dropout > 0.0 => {
                let keep = 1.0 - self.config.dropout;
                let mask: Vec<T> = (0..h.data.len())
                    .map(|_| {
                        if rng.gen_bool(keep) {
                            T::of(1.0 / keep)
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                for (v, &m) in h.data.iter_mut().zip(&mask) {
                    *v *= m;
                }
                Some(mask)
            }
            _ => None,
        };
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward_segmented(&h, key_mask, segments)?;
            caches.push(cache);
            h = next;
        }
        let (normed, norm) = self.norm.forward(&h);
        let scores = self.output.apply(&normed).data;
        Ok((
            scores,
            OrderCache {
                x: x.clone(),
                drop_mask,
                layers: caches,
                norm,
                normed,
            },
        ))
    }

    /// Accumulates parameter gradients for `d scores`; returns the input
    /// gradient.
    pub fn backward_seq(&mut self, cache: &OrderCache<T>, dscores: &[T]) -> Matrix<T> {
        let dy = Matrix::from_vec(dscores.len(), 1, dscores.to_vec()).expect("score column");
        let dnormed = self.output.backprop(&cache.normed, &dy);
        let mut dh = self.norm.backward(&cache.norm, &dnormed);
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            dh = layer.backward_cached(c, &dh);
        }
        if let Some(mask) = &cache.drop_mask {
            for (d, &m) in dh.data.iter_mut().zip(mask) {
                *d *= m;
            }
        }
        self.input.backprop(&cache.x, &dh)
    }

    /// Scores for the valid rows of one padded sequence (pads never attended).
    pub fn score(&self, seq: &NormalizedSeq) -> Result<Vec<T>> {
        let rows: Vec<Vec<T>> = seq.rows[..seq.valid_len]
            .iter()
            .map(|r| r.iter().map(|&v| T::of(v)).collect())
            .collect();
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let x = Matrix::from_rows(&rows)?;
        Ok(self.forward_seq(&x, None, None)?.0)
    }

    /// Batched forward over padded sequences: output shape `(B, N, 1)`.
    /// Pad rows are masked out of attention.
    pub fn forward(&self, batch: &[NormalizedSeq]) -> Result<Tensor3<T>> {
        let n = self.config.max_len;
        let mut out = Tensor3::zeros([batch.len(), n, 1]);
        for (b, seq) in batch.iter().enumerate() {
            if seq.rows.len() != n || seq.valid_len > n {
                return Err(Error::dim(format!(
                    "sequence {b} has {} rows ({} valid), model expects {n}",
                    seq.rows.len(),
                    seq.valid_len
                )));
            }
            let rows: Vec<Vec<T>> = seq.rows.iter().map(|r| r.iter().map(|&v| T::of(v)).collect()).collect();
            let x = Matrix::from_rows(&rows)?;
            let mask = seq.mask();
            let scores = if seq.valid_len == 0 {
                vec![T::zero(); n]
            } else {
                self.forward_seq(&x, Some(&mask), None)?.0
            };
            out.data[b * n..(b + 1) * n].copy_from_slice(&scores);
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> OrderModel<U> {
        let mut other = OrderModel::<U>::new(self.config.clone(), 0).expect("validated config");
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

impl<T: Scalar> Module<T> for OrderModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.input.visit(&join(prefix, "input"), f);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layers.{i}")), f);
        }
        self.norm.visit(&join(prefix, "norm"), f);
        self.output.visit(&join(prefix, "output"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.input.visit_mut(&join(prefix, "input"), f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

impl<T: Scalar> Block<T> for OrderModel<T> {
    type Cache = OrderCache<T>;
    fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, OrderCache<T>) {
        let (s, c) = self.forward_seq(x, None, None).expect("shape");
        (Matrix::from_vec(s.len(), 1, s).expect("column"), c)
    }
    fn backward(&mut self, cache: &OrderCache<T>, dy: &Matrix<T>) -> Matrix<T> {
        self.backward_seq(cache, &dy.data)
    }
}

/// Ranks of the first `n` scores (ascending, ties by position):
/// `result[i]` is the reading position of column `i`.
pub fn decode_order<T: Scalar>(scores: &[T], n: usize) -> Vec<usize> {
    let n = n.min(scores.len());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or_else(|| scores[a].is_nan().cmp(&scores[b].is_nan()))
            .then(a.cmp(&b))
    });
    crate::types::invert_permutation(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use proptest::prelude::*;

    fn small() -> OrderModelConfig {
        OrderModelConfig {
            dim: 16,
            heads: 4,
            layers: 2,
            ff_dim: 32,
            ..Default::default()
        }
    }

    fn seq(rows: &[[f64; 4]]) -> NormalizedSeq {
        crate::preprocess::pad_to_n(rows, MAX_SEQ).unwrap()
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_order(&[2.1, 0.3, 1.2, 4.4, 0.1, -0.1], 4), vec![2, 0, 1, 3]);
        assert_eq!(decode_order(&[0.0, 1.0, 2.0], 3), vec![0, 1, 2]);
        assert_eq!(decode_order::<f64>(&[], 0), Vec::<usize>::new());
        assert_eq!(decode_order(&[1.0, 1.0, 0.0], 3), vec![1, 2, 0]);
    }

    fn rank_oracle(s: &[f64]) -> Vec<usize> {
        (0..s.len())
            .map(|i| (0..s.len()).filter(|&j| s[j] < s[i] || (s[j] == s[i] && j < i)).count())
            .collect()
    }

    proptest! {
        #[test]
        fn decode_matches_oracle_and_is_monotone_invariant(
            s in prop::collection::vec(-5.0..5.0f64, 0..30),
            a in 0.1..10.0f64,
            b in -3.0..3.0f64,
        ) {
            let d = decode_order(&s, s.len());
            prop_assert_eq!(&d, &rank_oracle(&s));
            prop_assert!(crate::types::check_permutation(&d, s.len()).is_ok());
            let affine: Vec<f64> = s.iter().map(|v| a * v + b).collect();
            prop_assert_eq!(&decode_order(&affine, s.len()), &d);
            let cubic: Vec<f64> = s.iter().map(|v| v.powi(3) + v).collect();
            prop_assert_eq!(&decode_order(&cubic, s.len()), &d);
        }
    }

    #[test]
    fn batch_shape_and_pad_invariance() {
        let m = OrderModel::<f64>::new(small(), 1).unwrap();
        let a = seq(&[[0.1, 0.0, 0.2, 0.5], [0.5, 0.1, 0.6, 0.4], [0.0, 0.0, 0.05, 0.3]]);
        let b = seq(&[[0.0, 0.0, 1.0, 1.0]]);
        let out = m.forward(&[a.clone(), b]).unwrap();
        assert_eq!(out.dims, [2, 50, 1]);
        let compact = m.score(&a).unwrap();
        for (i, c) in compact.iter().enumerate() {
            assert!((out.get(0, i, 0) - c).abs() < 1e-9);
        }
        // Shuffling pad rows leaves valid scores unchanged.
        let mut shuffled = a.clone();
        shuffled.rows.swap(10, 40);
        let again = m.forward(&[shuffled]).unwrap();
        for i in 0..3 {
            assert!((again.get(0, i, 0) - out.get(0, i, 0)).abs() < 1e-9);
        }
        let bad = NormalizedSeq {
            rows: vec![[0.0; 4]; 10],
            valid_len: 2,
        };
        assert!(m.forward(&[bad]).is_err());
    }

    #[test]
    fn stacked_matches_separate() {
        let m = OrderModel::<f64>::new(small(), 4).unwrap();
        let a = Matrix::from_rows(&[vec![0.1, 0.0, 0.2, 0.5], vec![0.5, 0.1, 0.6, 0.4]]).unwrap();
        let b = Matrix::from_rows(&[
            vec![0.3, 0.3, 0.4, 0.9],
            vec![0.0, 0.1, 0.1, 0.2],
            vec![0.7, 0.0, 0.8, 0.1],
        ])
        .unwrap();
        let mut stacked = a.clone();
        stacked.rows += b.rows;
        stacked.data.extend_from_slice(&b.data);
        let (joint, _) = m.forward_stacked(&stacked, &[2, 3], None).unwrap();
        let sep: Vec<f64> = [
            m.forward_seq(&a, None, None).unwrap().0,
            m.forward_seq(&b, None, None).unwrap().0,
        ]
        .concat();
        for (p, q) in joint.iter().zip(&sep) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!(m.forward_stacked(&stacked, &[2, 2], None).is_err());
    }

    #[test]
    fn zero_model_is_constant() {
        let mut m = OrderModel::<f64>::new(small(), 2).unwrap();
        m.zero_params();
        let s = m.score(&seq(&[[0.1, 0.2, 0.3, 0.4], [0.5, 0.5, 0.9, 0.9]])).unwrap();
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn full_model_gradients() {
        let mut m = OrderModel::<f64>::new(small(), 3).unwrap();
        let x = Matrix::from_rows(&[
            vec![0.1, 0.0, 0.2, 0.5],
            vec![0.5, 0.1, 0.6, 0.4],
            vec![0.0, 0.2, 0.05, 0.3],
        ])
        .unwrap();
        let r = grad_check(&mut m, &x, 1e-5);
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn default_config_shape() {
        let m = OrderModel::<f32>::new(OrderModelConfig::default(), 0).unwrap();
        assert_eq!(m.layers.len(), 4);
        assert_eq!(m.layers[0].attn.heads, 8);
        assert_eq!(m.input.output_dim(), 256);
        assert_eq!(m.output.output_dim(), 1);
        assert!(OrderModelConfig {
            heads: 3,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
