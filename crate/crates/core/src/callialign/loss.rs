//! Alignment objectives. Each returns the loss and its gradient with respect
//! to the predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{mse_loss, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AlignLoss {
    #[default]
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "l2+rat")]
    L2Ratio,
    #[serde(rename = "l2+crd")]
    L2Crd,
}

impl AlignLoss {
    pub fn as_str(self) -> &'static str {
        match self {
            AlignLoss::L2 => "l2",
            AlignLoss::L2Ratio => "l2+rat",
            AlignLoss::L2Crd => "l2+crd",
        }
    }
}

impl std::str::FromStr for AlignLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(AlignLoss::L2),
            "l2+rat" => Ok(AlignLoss::L2Ratio),
            "l2+crd" => Ok(AlignLoss::L2Crd),
            other => Err(Error::invalid(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatioParams {
    pub w_min: f64,
    pub w_max: f64,
    pub eps: f64,
}

impl Default for RatioParams {
    fn default() -> Self {
        RatioParams {
            w_min: 0.1,
            w_max: 0.9,
            eps: 1e-6,
        }
    }
}

impl RatioParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.w_min && self.w_min < self.w_max && self.w_max < 1.0) || !(self.eps > 0.0) {
            return Err(Error::invalid(format!("invalid ratio loss params {self:?}")));
        }
        Ok(())
    }

    /// Weight of the deviation-ratio term at iteration `step` of `total`.
    pub fn weight(&self, step: usize, total: usize) -> f64 {
        let frac = if total == 0 { 0.0 } else { step as f64 / total as f64 };
        frac * (self.w_max - self.w_min) + self.w_min
    }
}

pub fn l2_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    mse_loss(pred, target, None)
}

/// `w * mean(|y - p| / (|y| + eps)) + mean((y - p)^2)` with `w` ramped
/// linearly over training.
pub fn ratio_loss<T: Scalar>(
    pred: &[T],
    target: &[T],
    params: &RatioParams,
    step: usize,
    total: usize,
) -> Result<(T, Vec<T>)> {
    let (mse, mut grad) = mse_loss(pred, target, None)?;
    let w = params.weight(step, total);
    let n = pred.len() as f64;
    let mut ratio = 0.0;
    for ((g, &p), &y) in grad.iter_mut().zip(pred).zip(target) {
        let (p, y) = (p.to_f64().unwrap(), y.to_f64().unwrap());
        let denom = y.abs() + params.eps;
        ratio += (y - p).abs() / denom;
        let sign = if p > y {
            1.0
        } else if p < y {
            -1.0
        } else {
            0.0
        };
        *g += T::of(w * sign / (denom * n));
    }
    Ok((mse + T::of(w * ratio / n), grad))
}

/// Supervised contrastive loss over `labels.len()` samples whose flattened
/// predictions are the consecutive chunks of `pred`. Each sample is scaled
/// to unit length; positives share a label. Summed over anchors that have
/// at least one positive.
pub fn crd_loss<T: Scalar>(pred: &[T], labels: &[usize], temperature: f64) -> Result<(T, Vec<T>)> {
    let n = labels.len();
    if n < 2 || !pred.len().is_multiple_of(n) || pred.is_empty() {
        return Err(Error::dim(format!("{} values for {n} samples", pred.len())));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature {temperature} must be positive")));
    }
    let m = pred.len() / n;
    let norms: Vec<f64> = pred
        .chunks(m)
        .map(|c| {
            c.iter()
                .map(|v| v.to_f64().unwrap().powi(2))
                .sum::<f64>()
                .sqrt()
                .max(1e-12)
        })
        .collect();
    let z: Vec<Vec<f64>> = pred
        .chunks(m)
        .zip(&norms)
        .map(|(c, nrm)| c.iter().map(|v| v.to_f64().unwrap() / nrm).collect())
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let s: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dot(&z[i], &z[j]) / temperature).collect())
        .collect();
    let mut loss = 0.0;
    let mut anchors = 0;
    let mut dz = vec![vec![0.0; m]; n];
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let max = (0..n)
            .filter(|&a| a != i)
            .map(|a| s[i][a])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| (s[i][a] - max).exp()).sum();
        let lse = max + denom.ln();
        let np = positives.len() as f64;
        loss += lse - positives.iter().map(|&p| s[i][p]).sum::<f64>() / np;
        for a in (0..n).filter(|&a| a != i) {
            let mut coef = (s[i][a] - lse).exp();
            if labels[a] == labels[i] {
                coef -= 1.0 / np;
            }
            let coef = coef / temperature;
            for k in 0..m {
                dz[i][k] += coef * z[a][k];
                dz[a][k] += coef * z[i][k];
            }
        }
    }
    if anchors == 0 {
        return Err(Error::invalid("batch has no positive pairs"));
    }
    let mut grad = Vec::with_capacity(pred.len());
    for i in 0..n {
        let proj = dot(&z[i], &dz[i]);
        grad.extend((0..m).map(|k| T::of((dz[i][k] - z[i][k] * proj) / norms[i])));
    }
    Ok((T::of(loss), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::relative_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check(f: impl Fn(&[f64]) -> (f64, Vec<f64>), x: &[f64]) -> f64 {
        let (_, g) = f(x);
        let mut worst: f64 = 0.0;
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.to_vec();
            p[i] += h;
            let up = f(&p).0;
            p[i] -= 2.0 * h;
            let down = f(&p).0;
            worst = worst.max(relative_error(g[i], (up - down) / (2.0 * h)));
        }
        worst
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn zero_residual() {
        let y = random(12, 1);
        assert_eq!(l2_loss(&y, &y).unwrap().0, 0.0);
        let p = RatioParams::default();
        assert_eq!(ratio_loss(&y, &y, &p, 5, 10).unwrap().0, 0.0);
        let labels = [0, 0, 1, 1];
        let (matched, _) = crd_loss(&[1.0f64, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0], &labels, 0.1).unwrap();
        let (mixed, _) = crd_loss(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0], &labels, 0.1).unwrap();
        assert!(matched.is_finite() && matched < mixed);
    }

    #[test]
    fn ratio_weight_ramps() {
        let p = RatioParams::default();
        assert_eq!(p.weight(0, 100), 0.1);
        assert!((p.weight(100, 100) - 0.9).abs() < 1e-15);
        assert!((p.weight(50, 100) - 0.5).abs() < 1e-15);
        // Single element, y = 1, p = 0: w * 1/(1 + eps) + 1.
        let (l, _) = ratio_loss(&[0.0f64], &[1.0], &p, 0, 10).unwrap();
        assert!((l - (0.1 / (1.0 + 1e-6) + 1.0)).abs() < 1e-12);
        assert!(RatioParams {
            w_min: 0.5,
            w_max: 0.4,
            eps: 1e-6
        }
        .validate()
        .is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let y = random(24, 2);
        let x = random(24, 3);
        assert!(check(|p| l2_loss(p, &y).unwrap(), &x) < 1e-4);
        let params = RatioParams::default();
        assert!(check(|p| ratio_loss(p, &y, &params, 3, 10).unwrap(), &x) < 1e-4);
        let labels = [0, 1, 0, 2, 1, 3];
        assert!(check(|p| crd_loss(p, &labels, 0.1).unwrap(), &x) < 1e-4);
        assert!(check(|p| crd_loss(p, &labels, 0.7).unwrap(), &x) < 1e-4);
    }

    #[test]
    fn crd_needs_positives() {
        assert!(crd_loss(&random(8, 4), &[0, 1, 2, 3], 0.1).is_err());
        assert!(crd_loss(&random(2, 4), &[0], 0.1).is_err());
        assert!("l2+crd".parse::<AlignLoss>().unwrap() == AlignLoss::L2Crd);
        assert!("l1".parse::<AlignLoss>().is_err());
    }
}
