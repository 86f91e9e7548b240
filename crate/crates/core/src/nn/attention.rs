//! Scaled dot-product attention, single- and multi-head.
//!
//! Key masks use `true` for keys that may be attended to. A query row whose
//! keys are all masked produces a zero output and is reported in `dead_rows`.

use rand::Rng;

use super::layers::{Block, Dense};
use super::param::{join, Module, Param};
use super::tensor::{gemm, Matrix, Scalar};
use crate::error::{Error, Result};

/// Masked row softmax in place. Returns `true` if no key was available.
fn masked_softmax_row<T: Scalar>(row: &mut [T], mask: Option<&[bool]>) -> bool {
    let allowed = |j: usize| mask.is_none_or(|m| m[j]);
    let mut max = T::neg_infinity();
    for (j, &v) in row.iter().enumerate() {
        if allowed(j) && v > max {
            max = v;
        }
    }
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return true;
    }
    let mut sum = T::zero();
    for (j, v) in row.iter_mut().enumerate() {
        if allowed(j) {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = T::zero();
        }
    }
    row.iter_mut().for_each(|v| *v = *v / sum);
    false
}

/// Row-wise masked softmax.
pub fn softmax_rows<T: Scalar>(x: &Matrix<T>, mask: Option<&[bool]>) -> (Matrix<T>, Vec<bool>) {
    let mut out = x.clone();
    let dead = (0..out.rows)
        .map(|r| masked_softmax_row(out.row_mut(r), mask))
        .collect();
    (out, dead)
}

fn check_mask(mask: Option<&[bool]>, keys: usize) -> Result<()> {
    match mask {
        Some(m) if m.len() != keys => Err(Error::dim(format!("mask has {} entries for {keys} keys", m.len()))),
        _ => Ok(()),
    }
}

/// Single-head attention `softmax(q kᵀ / sqrt(d)) v`.
///
/// Returns the output and the per-query dead-row flags.
pub fn scaled_dot_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    key_mask: Option<&[bool]>,
) -> Result<(Matrix<T>, Vec<bool>)> {
    if q.cols != k.cols || k.rows != v.rows {
        return Err(Error::dim(format!(
            "q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    check_mask(key_mask, k.rows)?;
    let scale = T::one() / T::from_usize(q.cols.max(1)).unwrap().sqrt();
    let mut scores = Matrix::zeros(q.rows, k.rows);
    gemm(scale, q.view(), k.view().t(), T::zero(), scores.view_mut());
    let (probs, dead) = softmax_rows(&scores, key_mask);
    let mut out = Matrix::zeros(q.rows, v.cols);
    gemm(T::one(), probs.view(), v.view(), T::zero(), out.view_mut());
    Ok((out, dead))
}

/// Multi-head attention with separate query and key/value inputs. The
/// key/value input width may differ from the model width.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention<T> {
    pub heads: usize,
    pub wq: Dense<T>,
    pub wk: Dense<T>,
    pub wv: Dense<T>,
    pub wo: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    q_in: Matrix<T>,
    kv_in: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    probs: Vec<Matrix<T>>,
    concat: Matrix<T>,
    groups: usize,
    pub dead_rows: Vec<bool>,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(model_dim: usize, kv_dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !model_dim.is_multiple_of(heads) {
            return Err(Error::dim(format!(
                "{heads} heads do not divide model width {model_dim}"
            )));
        }
        Ok(MultiHeadAttention {
            heads,
            wq: Dense::new(model_dim, model_dim, rng),
            wk: Dense::new(kv_dim, model_dim, rng),
            wv: Dense::new(kv_dim, model_dim, rng),
            wo: Dense::new(model_dim, model_dim, rng),
        })
    }

    pub fn model_dim(&self) -> usize {
        self.wq.output_dim()
    }

    pub fn forward(
        &self,
        q_in: &Matrix<T>,
        kv_in: &Matrix<T>,
        key_mask: Option<&[bool]>,
    ) -> Result<(Matrix<T>, AttentionCache<T>)> {
        self.forward_impl(q_in, kv_in, key_mask, None, 1)
    }

    /// Like [`forward`](Self::forward), but when `segments` is given (one id
    /// per row, shared by queries and keys) a query only sees keys with the
    /// same id. This runs several independent sequences as one stacked
    /// matrix.
    pub fn forward_segmented(
        &self,
        q_in: &Matrix<T>,
        kv_in: &Matrix<T>,
        key_mask: Option<&[bool]>,
        segments: Option<&[u32]>,
    ) -> Result<(Matrix<T>, AttentionCache<T>)> {
        if let Some(seg) = segments {
            if seg.len() != q_in.rows || seg.len() != kv_in.rows {
                return Err(Error::dim(format!(
                    "{} segment ids for {} queries and {} keys",
                    seg.len(),
                    q_in.rows,
                    kv_in.rows
                )));
            }
        }
        self.forward_impl(q_in, kv_in, key_mask, segments, 1)
    }

    /// Cross-attention over `groups` independent samples stacked row-wise:
    /// query rows and key rows are split into `groups` equal blocks and
    /// block `g` of the queries attends only to block `g` of the keys.
    pub fn forward_grouped(
        &self,
        q_in: &Matrix<T>,
        kv_in: &Matrix<T>,
        groups: usize,
    ) -> Result<(Matrix<T>, AttentionCache<T>)> {
        if groups == 0 || !q_in.rows.is_multiple_of(groups) || !kv_in.rows.is_multiple_of(groups) {
            return Err(Error::dim(format!(
                "{} query rows and {} key rows do not split into {groups} groups",
                q_in.rows, kv_in.rows
            )));
        }
        self.forward_impl(q_in, kv_in, None, None, groups)
    }

    fn forward_impl(
        &self,
        q_in: &Matrix<T>,
        kv_in: &Matrix<T>,
        key_mask: Option<&[bool]>,
        segments: Option<&[u32]>,
        groups: usize,
    ) -> Result<(Matrix<T>, AttentionCache<T>)> {
        if q_in.cols != self.wq.input_dim() || kv_in.cols != self.wk.input_dim() {
            return Err(Error::dim(format!(
                "attention expects query width {} and key width {}, got {} and {}",
                self.wq.input_dim(),
                self.wk.input_dim(),
                q_in.cols,
                kv_in.cols
            )));
        }
        check_mask(key_mask, kv_in.rows)?;
        let d = self.model_dim();
        let dh = d / self.heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let q = self.wq.apply(q_in);
        let k = self.wk.apply(kv_in);
        let v = self.wv.apply(kv_in);
        let (qg, kg) = (q_in.rows / groups, kv_in.rows / groups);
        let mut concat = Matrix::zeros(q_in.rows, d);
        let mut probs = Vec::with_capacity(self.heads * groups);
        let mut dead_rows = vec![false; q_in.rows];
        let mut row_mask = vec![false; kg];
        for g in 0..groups {
            let (q0, k0) = (g * qg, g * kg);
            for h in 0..self.heads {
                let mut p = Matrix::zeros(qg, kg);
                gemm(
                    scale,
                    q.block(q0, qg, h * dh, dh),
                    k.block(k0, kg, h * dh, dh).t(),
                    T::zero(),
                    p.view_mut(),
                );
                for r in 0..qg {
                    let mask = match (segments, key_mask) {
                        (Some(seg), _) => {
                            for (j, m) in row_mask.iter_mut().enumerate() {
                                *m = seg[j] == seg[r] && key_mask.is_none_or(|km| km[j]);
                            }
                            Some(&row_mask[..])
                        }
                        (None, Some(km)) => Some(&km[k0..k0 + kg]),
                        (None, None) => None,
                    };
                    dead_rows[q0 + r] |= masked_softmax_row(p.row_mut(r), mask);
                }
                gemm(
                    T::one(),
                    p.view(),
                    v.block(k0, kg, h * dh, dh),
                    T::zero(),
                    concat.block_mut(q0, qg, h * dh, dh),
                );
                probs.push(p);
            }
        }
        let out = self.wo.apply(&concat);
        Ok((
            out,
            AttentionCache {
                q_in: q_in.clone(),
                kv_in: kv_in.clone(),
                q,
                k,
                v,
                probs,
                concat,
                groups,
                dead_rows,
            },
        ))
    }

    /// Returns gradients with respect to the query input and the key/value
    /// input.
    pub fn backward(&mut self, cache: &AttentionCache<T>, dy: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
        let d = self.model_dim();
        let dh = d / self.heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let dconcat = self.wo.backprop(&cache.concat, dy);
        let mut dq = Matrix::zeros(cache.q.rows, d);
        let mut dk = Matrix::zeros(cache.k.rows, d);
        let mut dv = Matrix::zeros(cache.v.rows, d);
        let groups = cache.groups;
        let (qg, kg) = (cache.q.rows / groups, cache.k.rows / groups);
        for g in 0..groups {
            let (q0, k0) = (g * qg, g * kg);
            for h in 0..self.heads {
                let p = &cache.probs[g * self.heads + h];
                let mut ds = Matrix::zeros(qg, kg);
                gemm(
                    T::one(),
                    dconcat.block(q0, qg, h * dh, dh),
                    cache.v.block(k0, kg, h * dh, dh).t(),
                    T::zero(),
                    ds.view_mut(),
                );
                gemm(
                    T::one(),
                    p.view().t(),
                    dconcat.block(q0, qg, h * dh, dh),
                    T::zero(),
                    dv.block_mut(k0, kg, h * dh, dh),
                );
                // Softmax backward: dS = P ⊙ (dP - rowsum(dP ⊙ P)).
                for r in 0..qg {
                    let prow = p.row(r);
                    let dot: T = ds.row(r).iter().zip(prow).map(|(&a, &b)| a * b).sum();
                    for (x, &pv) in ds.row_mut(r).iter_mut().zip(prow) {
                        *x = pv * (*x - dot);
                    }
                }
                gemm(
                    scale,
                    ds.view(),
                    cache.k.block(k0, kg, h * dh, dh),
                    T::zero(),
                    dq.block_mut(q0, qg, h * dh, dh),
                );
                gemm(
                    scale,
                    ds.view().t(),
                    cache.q.block(q0, qg, h * dh, dh),
                    T::zero(),
                    dk.block_mut(k0, kg, h * dh, dh),
                );
            }
        }
        let dq_in = self.wq.backprop(&cache.q_in, &dq);
        let mut dkv_in = self.wk.backprop(&cache.kv_in, &dk);
        dkv_in.add_assign(&self.wv.backprop(&cache.kv_in, &dv));
        (dq_in, dkv_in)
    }
}

impl<T: Scalar> Module<T> for MultiHeadAttention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.wq.visit(&join(prefix, "wq"), f);
        self.wk.visit(&join(prefix, "wk"), f);
        self.wv.visit(&join(prefix, "wv"), f);
        self.wo.visit(&join(prefix, "wo"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.wq.visit_mut(&join(prefix, "wq"), f);
        self.wk.visit_mut(&join(prefix, "wk"), f);
        self.wv.visit_mut(&join(prefix, "wv"), f);
        self.wo.visit_mut(&join(prefix, "wo"), f);
    }
}

/// Unmasked self-attention as a [`Block`].
impl<T: Scalar> Block<T> for MultiHeadAttention<T> {
    type Cache = AttentionCache<T>;

    fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, AttentionCache<T>) {
        MultiHeadAttention::forward(self, x, x, None).expect("self-attention shapes")
    }

    fn backward(&mut self, cache: &AttentionCache<T>, dy: &Matrix<T>) -> Matrix<T> {
        let (mut dq, dkv) = MultiHeadAttention::backward(self, cache, dy);
        dq.add_assign(&dkv);
        dq
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouped_matches_separate_runs() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let att = MultiHeadAttention::<f64>::new(8, 5, 2, &mut rng).unwrap();
        let mut m = |r: usize, c: usize| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let (q, kv) = (m(6, 8), m(8, 5));
        let (joint, _) = att.forward_grouped(&q, &kv, 2).unwrap();
        for g in 0..2 {
            let qs = q.select_rows(&[3 * g, 3 * g + 1, 3 * g + 2]);
            let ks = kv.select_rows(&(4 * g..4 * g + 4).collect::<Vec<_>>());
            let (y, _) = att.forward(&qs, &ks, None).unwrap();
            for (p, r) in joint.data[g * 24..(g + 1) * 24].iter().zip(&y.data) {
                assert!((p - r).abs() < 1e-12);
            }
        }
        assert!(att.forward_grouped(&q, &kv, 4).is_err());
    }

    #[test]
    fn segmented_matches_separate_runs() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let att = MultiHeadAttention::<f64>::new(8, 8, 2, &mut rng).unwrap();
        let rand_m = |r: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            Matrix::from_vec(r, 8, (0..r * 8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let (a, b) = (rand_m(3, &mut rng), rand_m(4, &mut rng));
        let mut stacked = a.clone();
        stacked.rows += b.rows;
        stacked.data.extend_from_slice(&b.data);
        let seg = [0, 0, 0, 1, 1, 1, 1];
        let (joint, _) = att.forward_segmented(&stacked, &stacked, None, Some(&seg)).unwrap();
        let (ya, _) = att.forward(&a, &a, None).unwrap();
        let (yb, _) = att.forward(&b, &b, None).unwrap();
        let separate: Vec<f64> = ya.data.iter().chain(&yb.data).copied().collect();
        for (p, q) in joint.data.iter().zip(&separate) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!(att.forward_segmented(&a, &a, None, Some(&seg)).is_err());
    }
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// O(n²) reference written directly from the definition.
    fn naive_attention(q: &Matrix<f64>, k: &Matrix<f64>, v: &Matrix<f64>, mask: &[bool]) -> Matrix<f64> {
        let mut out = Matrix::zeros(q.rows, v.cols);
        for i in 0..q.rows {
            let mut w = vec![0.0; k.rows];
            for j in 0..k.rows {
                if mask[j] {
                    let dot: f64 = (0..q.cols).map(|c| q.get(i, c) * k.get(j, c)).sum();
                    w[j] = (dot / (q.cols as f64).sqrt()).exp();
                }
            }
            let total: f64 = w.iter().sum();
            for (j, wj) in w.iter().enumerate() {
                for c in 0..v.cols {
                    let o = out.get(i, c) + wj / total * v.get(j, c);
                    out.set(i, c, o);
                }
            }
        }
        out
    }

    #[test]
    fn single_unmasked_key_returns_its_value() {
        let k = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![3.0, 4.0], vec![7.0, 8.0]]).unwrap();
        let q = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let (out, dead) = scaled_dot_attention(&q, &k, &v, Some(&[false, true])).unwrap();
        assert_eq!(out.row(0), &[7.0, 8.0]);
        assert_eq!(dead, vec![false]);
    }

    #[test]
    fn fully_masked_row_is_zero_and_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, k, v) = (random(2, 4, &mut rng), random(3, 4, &mut rng), random(3, 4, &mut rng));
        let (out, dead) = scaled_dot_attention(&q, &k, &v, Some(&[false; 3])).unwrap();
        assert!(out.data.iter().all(|&x| x == 0.0));
        assert_eq!(dead, vec![true, true]);
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (q, k, v) = (random(4, 6, &mut rng), random(5, 6, &mut rng), random(5, 3, &mut rng));
            let mask = [true, false, true, true, false];
            let (out, _) = scaled_dot_attention(&q, &k, &v, Some(&mask)).unwrap();
            let reference = naive_attention(&q, &k, &v, &mask);
            for (a, b) in out.data.iter().zip(&reference.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_uniform_keys_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(6, 9, &mut rng);
        let (p, _) = softmax_rows(&x, None);
        for r in 0..6 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let k = Matrix::from_rows(&vec![vec![0.5, -0.2]; 4]).unwrap();
        let v = random(4, 3, &mut rng);
        let q = random(2, 2, &mut rng);
        let (out, _) = scaled_dot_attention(&q, &k, &v, None).unwrap();
        for c in 0..3 {
            let mean = (0..4).map(|r| v.get(r, c)).sum::<f64>() / 4.0;
            assert!((out.get(0, c) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random(2, 4, &mut rng);
        let k = random(3, 5, &mut rng);
        assert!(scaled_dot_attention(&q, &k, &k, None).is_err());
        assert!(scaled_dot_attention(&q, &q, &q, Some(&[true])).is_err());
        assert!(MultiHeadAttention::<f64>::new(10, 10, 3, &mut rng).is_err());
    }

    #[test]
    fn multi_head_masked_keys_are_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mha: MultiHeadAttention<f64> = MultiHeadAttention::new(8, 8, 2, &mut rng).unwrap();
        let x = random(3, 8, &mut rng);
        let mut padded = x.clone();
        padded.data.extend(random(2, 8, &mut rng).data);
        padded.rows = 5;
        let mask = [true, true, true, false, false];
        let (a, _) = mha.forward(&x, &x, None).unwrap();
        let (b, _) = mha.forward(&padded, &padded, Some(&mask)).unwrap();
        for r in 0..3 {
            for c in 0..8 {
                assert!((a.get(r, c) - b.get(r, c)).abs() < 1e-12);
            }
        }
    }
}
