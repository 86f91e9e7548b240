//! Central-difference gradient checking in f64.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Block;
use super::tensor::Matrix;

/// Denominator floor for relative errors. Entries whose true gradient is ~0
/// (key biases, for one) are compared in absolute terms; central differences
/// of an O(10) objective at eps=1e-5 carry ~1e-10 of rounding noise.
pub const REL_ERR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name (or `"input"`) and flat index of the worst entry.
    pub worst: (String, usize),
    pub checked: usize,
}

/// Compares analytic gradients of `block` against central differences of the
/// scalar objective `sum(R ⊙ block(x))`, with `R` a fixed random projection.
/// Every parameter entry and every input entry is checked.
pub fn grad_check<B: Block<f64>>(block: &mut B, input: &Matrix<f64>, eps: f64) -> GradCheckReport {
    let (y, cache) = block.forward(input);
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37);
    let proj = Matrix::from_vec(
        y.rows,
        y.cols,
        (0..y.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape");
    let objective = |b: &B, x: &Matrix<f64>| -> f64 {
        let (y, _) = b.forward(x);
        y.data.iter().zip(&proj.data).map(|(a, r)| a * r).sum()
    };

    block.zero_grad();
    let dx = block.backward(&cache, &proj);
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    block.visit("", &mut |name, p| analytic.push((name.to_string(), p.grad.clone())));

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (String::new(), 0),
        checked: 0,
    };
    let mut record = |name: &str, i: usize, a: f64, n: f64| {
        let e = relative_error(a, n);
        report.checked += 1;
        if e > report.max_rel_err || report.worst.0.is_empty() {
            report.max_rel_err = report.max_rel_err.max(e);
            report.worst = (name.to_string(), i);
        }
    };

    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = param_value(block, pi, i);
            set_param_value(block, pi, i, orig + eps);
            let up = objective(block, input);
            set_param_value(block, pi, i, orig - eps);
            let down = objective(block, input);
            set_param_value(block, pi, i, orig);
            record(name, i, a, (up - down) / (2.0 * eps));
        }
    }
    let mut x = input.clone();
    for i in 0..x.data.len() {
        let orig = x.data[i];
        x.data[i] = orig + eps;
        let up = objective(block, &x);
        x.data[i] = orig - eps;
        let down = objective(block, &x);
        x.data[i] = orig;
        record("input", i, dx.data[i], (up - down) / (2.0 * eps));
    }
    report
}

fn param_value<B: Block<f64>>(block: &B, index: usize, i: usize) -> f64 {
    let mut k = 0;
    let mut out = 0.0;
    block.visit("", &mut |_, p| {
        if k == index {
            out = p.value[i];
        }
        k += 1;
    });
    out
}

fn set_param_value<B: Block<f64>>(block: &mut B, index: usize, i: usize, v: f64) {
    let mut k = 0;
    block.visit_mut("", &mut |_, p| {
        if k == index {
            p.value[i] = v;
        }
        k += 1;
    });
}
