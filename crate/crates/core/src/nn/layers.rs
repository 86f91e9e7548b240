//! Dense, layer-norm and feed-forward blocks with hand-written backward
//! passes. Backward calls accumulate into parameter gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::{join, Module, Param};
use super::tensor::{gemm, MatView, MatViewMut, Matrix, Scalar};

/// A differentiable map from a matrix to a matrix.
pub trait Block<T: Scalar>: Module<T> {
    type Cache;
    fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, Self::Cache);
    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, cache: &Self::Cache, dy: &Matrix<T>) -> Matrix<T>;
}

/// `y = x W + b`, with `W` stored as `[in, out]`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Dense<T> {
    /// Uniform init with bound `1/sqrt(fan_in)` for weight and bias.
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Dense {
            weight: Param::uniform(&[input, output], bound, rng),
            bias: Param::uniform(&[output], bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn apply(&self, x: &Matrix<T>) -> Matrix<T> {
        let (i, o) = (self.input_dim(), self.output_dim());
        assert_eq!(x.cols, i, "dense input width");
        let mut y = Matrix::zeros(x.rows, o);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.bias.value);
        }
        let w = MatView {
            data: &self.weight.value,
            offset: 0,
            rows: i,
            cols: o,
            rs: o as isize,
            cs: 1,
        };
        gemm(T::one(), x.view(), w, T::one(), y.view_mut());
        y
    }

    /// Gradient step for input `x` and output gradient `dy`.
    pub fn backprop(&mut self, x: &Matrix<T>, dy: &Matrix<T>) -> Matrix<T> {
        let (i, o) = (self.input_dim(), self.output_dim());
        // dW += xᵀ dy
        {
            let dw = MatViewMut {
                data: &mut self.weight.grad,
                offset: 0,
                rows: i,
                cols: o,
                rs: o as isize,
                cs: 1,
            };
            gemm(T::one(), x.view().t(), dy.view(), T::one(), dw);
        }
        for r in 0..dy.rows {
            for (g, &d) in self.bias.grad.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        // dx = dy Wᵀ
        let mut dx = Matrix::zeros(dy.rows, i);
        let w = MatView {
            data: &self.weight.value,
            offset: 0,
            rows: i,
            cols: o,
            rs: o as isize,
            cs: 1,
        };
        gemm(T::one(), dy.view(), w.t(), T::zero(), dx.view_mut());
        dx
    }
}

impl<T: Scalar> Module<T> for Dense<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl<T: Scalar> Block<T> for Dense<T> {
    type Cache = Matrix<T>;
    fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
        (self.apply(x), x.clone())
    }
    fn backward(&mut self, x: &Matrix<T>, dy: &Matrix<T>) -> Matrix<T> {
        self.backprop(x, dy)
    }
}

/// Per-row layer normalization with learnable gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Param::filled(&[dim], T::one()),
            beta: Param::zeros(&[dim]),
            eps: LAYER_NORM_EPS,
        }
    }
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta` per row, with the
/// population variance.
pub fn layer_norm<T: Scalar>(x: &Matrix<T>, gamma: &[T], beta: &[T], eps: f64) -> Matrix<T> {
    normalize_rows(x, gamma, beta, eps).0
}

fn normalize_rows<T: Scalar>(x: &Matrix<T>, gamma: &[T], beta: &[T], eps: f64) -> (Matrix<T>, LayerNormCache<T>) {
    assert_eq!(gamma.len(), x.cols);
    let n = T::from_usize(x.cols).unwrap();
    let mut y = Matrix::zeros(x.rows, x.cols);
    let mut xhat = Matrix::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + T::of(eps)).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(r);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * is;
        }
        let yr = y.row_mut(r);
        for c in 0..x.cols {
            yr[c] = gamma[c] * xh[c] + beta[c];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

impl<T: Scalar> Block<T> for LayerNorm<T> {
    type Cache = LayerNormCache<T>;

    fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, LayerNormCache<T>) {
        normalize_rows(x, &self.gamma.value, &self.beta.value, self.eps)
    }

    fn backward(&mut self, cache: &LayerNormCache<T>, dy: &Matrix<T>) -> Matrix<T> {
        let cols = dy.cols;
        let n = T::from_usize(cols).unwrap();
        let mut dx = Matrix::zeros(dy.rows, cols);
        let mut dxhat = vec![T::zero(); cols];
        for r in 0..dy.rows {
            let g = dy.row(r);
            let xh = cache.xhat.row(r);
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for c in 0..cols {
                self.gamma.grad[c] += g[c] * xh[c];
                self.beta.grad[c] += g[c];
                dxhat[c] = g[c] * self.gamma.value[c];
                sum_d += dxhat[c];
                sum_dx += dxhat[c] * xh[c];
            }
            let is = cache.inv_std[r];
            let out = dx.row_mut(r);
            for c in 0..cols {
                out[c] = is / n * (n * dxhat[c] - sum_d - xh[c] * sum_dx);
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Tanh approximation of GELU.
    #[default]
    Gelu,
    Relu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
                T::of(0.5) * x * (T::one() + u.tanh())
            }
            Activation::Relu => x.max(T::zero()),
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let x2 = x * x;
                let u = T::of(GELU_C) * (x + T::of(GELU_A) * x2 * x);
                let t = u.tanh();
                let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x2);
                T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Two dense layers with an activation in between.
#[derive(Debug, Clone)]
pub struct FeedForward<T> {
    pub fc1: Dense<T>,
    pub fc2: Dense<T>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache<T> {
    x: Matrix<T>,
    pre: Matrix<T>,
    act: Matrix<T>,
}

impl<T: Scalar> FeedForward<T> {
    pub fn new(dim: usize, hidden: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        FeedForward {
            fc1: Dense::new(dim, hidden, rng),
            fc2: Dense::new(hidden, dim, rng),
            activation,
        }
    }
}

impl<T: Scalar> Module<T> for FeedForward<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

impl<T: Scalar> Block<T> for FeedForward<T> {
    type Cache = FeedForwardCache<T>;

    fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, FeedForwardCache<T>) {
        let pre = self.fc1.apply(x);
        let act = pre.map(|v| self.activation.apply(v));
        let y = self.fc2.apply(&act);
        (y, FeedForwardCache { x: x.clone(), pre, act })
    }

    fn backward(&mut self, cache: &FeedForwardCache<T>, dy: &Matrix<T>) -> Matrix<T> {
        let mut dact = self.fc2.backprop(&cache.act, dy);
        for (d, &p) in dact.data.iter_mut().zip(&cache.pre.data) {
            *d *= self.activation.derivative(p);
        }
        self.fc1.backprop(&cache.x, &dact)
    }
}

/// Sinusoidal position table, `rows x dim`.
pub fn sinusoidal_positions<T: Scalar>(rows: usize, dim: usize) -> Matrix<T> {
    let mut pe = Matrix::zeros(rows, dim);
    for pos in 0..rows {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            pe.set(pos, i, T::of(v));
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layer_norm_examples() {
        let x = Matrix::from_vec(1, 2, vec![1.0f64, 3.0]).unwrap();
        let y = layer_norm(&x, &[1.0, 1.0], &[0.0, 0.0], 1e-12);
        assert!((y.get(0, 0) + 1.0).abs() < 1e-9 && (y.get(0, 1) - 1.0).abs() < 1e-9);

        let c = Matrix::from_vec(1, 3, vec![5.0f64; 3]).unwrap();
        let y = layer_norm(&c, &[1.0; 3], &[0.0; 3], 1e-5);
        assert!(y.data.iter().all(|v| v.abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..40).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = Matrix::from_vec(4, 10, data).unwrap();
        let y = layer_norm(&x, &[1.0; 10], &[0.0; 10], 1e-12);
        for r in 0..4 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 10.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-12);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d: Dense<f64> = Dense::new(3, 2, &mut rng);
        let x = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let y = d.apply(&x);
        for o in 0..2 {
            let mut expect = d.bias.value[o];
            for i in 0..3 {
                expect += x.get(0, i) * d.weight.value[i * 2 + o];
            }
            assert!((y.get(0, o) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            assert!((num - Activation::Gelu.derivative(x)).abs() < 1e-8);
        }
    }
}
