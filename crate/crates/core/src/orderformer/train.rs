use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::model::{OrderModel, OrderModelConfig, MODEL_TYPE};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_into, read_manifest, save_checkpoint, CheckpointManifest};
use crate::nn::{mse_loss, AdamW, AdamWConfig, LrSchedule, Matrix, Module};
use crate::preprocess::{column_ranks, prepare_page, ClusterParams};
use crate::types::PageSample;

/// One training pair: presorted column boxes and each column's reading rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSample {
    pub rows: Vec<[f64; 4]>,
    pub ranks: Vec<usize>,
}

/// Builds a training sample from a page with a known reading order.
pub fn order_sample(page: &PageSample, params: &ClusterParams) -> Result<OrderSample> {
    let prep = prepare_page(page, params)?;
    let ranks = column_ranks(page, &prep.columns)
        .ok_or_else(|| Error::invalid(format!("page {} has no reading order", page.id)))?;
    Ok(OrderSample {
        rows: prep.seq.rows[..prep.seq.valid_len].to_vec(),
        ranks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderTrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub amsgrad: bool,
    pub t0: f64,
    pub t_mult: f64,
    pub eta_min: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub model: OrderModelConfig,
}

impl Default for OrderTrainConfig {
    fn default() -> Self {
        OrderTrainConfig {
            lr0: 2e-4,
            weight_decay: 0.0,
            amsgrad: true,
            t0: 10.0,
            t_mult: 2.0,
            eta_min: 1e-6,
            batch: 4,
            epochs: 200,
            seed: 0,
            model: OrderModelConfig::default(),
        }
    }
}

impl OrderTrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr0: self.lr0,
            eta_min: self.eta_min,
            t0: self.t0,
            t_mult: self.t_mult,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch and epochs must be positive"));
        }
        self.schedule().validate()?;
        self.model.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub model: OrderModel<f32>,
    pub curve: Vec<EpochStats>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |e| e.loss)
    }
}

/// Trains from scratch. Each step averages the squared error over all
/// columns in the batch. A batch runs as one stacked forward pass with
/// per-sample attention, so the gradient reduction order is fixed. The learning rate follows the warm-restart
/// schedule at fractional epoch `epoch + step / steps_per_epoch`.
pub fn train(
    samples: &[OrderSample],
    cfg: &OrderTrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples: Vec<&OrderSample> = samples.iter().filter(|s| !s.rows.is_empty()).collect();
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    for s in &samples {
        if s.rows.len() > cfg.model.max_len || s.ranks.len() != s.rows.len() {
            return Err(Error::dim(format!(
                "sample with {} rows and {} ranks (limit {})",
                s.rows.len(),
                s.ranks.len(),
                cfg.model.max_len
            )));
        }
    }
    let inputs: Vec<Matrix<f32>> = samples
        .iter()
        .map(|s| Matrix::from_vec(s.rows.len(), 4, s.rows.iter().flatten().map(|&v| v as f32).collect()))
        .collect::<Result<_>>()?;

    let mut model = OrderModel::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let mut opt = AdamW::new(
        &model,
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            amsgrad: cfg.amsgrad,
            ..Default::default()
        },
    );
    let schedule = cfg.schedule();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0fde);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd209);
    let use_dropout = cfg.model.dropout > 0.0;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let steps = samples.len().div_ceil(cfg.batch);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut count) = (0.0f64, 0usize);
        let mut lr = schedule.lr_at(epoch as f64);
        for (step, batch) in order.chunks(cfg.batch).enumerate() {
            model.zero_grad();
            let lengths: Vec<usize> = batch.iter().map(|&i| samples[i].rows.len()).collect();
            let n: usize = lengths.iter().sum();
            let mut x = Vec::with_capacity(n * 4);
            let mut target = Vec::with_capacity(n);
            for &i in batch {
                x.extend_from_slice(&inputs[i].data);
                target.extend(samples[i].ranks.iter().map(|&r| r as f32));
            }
            let x = Matrix::from_vec(n, 4, x)?;
            let rng = if use_dropout { Some(&mut dropout_rng) } else { None };
            let (pred, cache) = model.forward_stacked(&x, &lengths, rng)?;
            let (loss, grad) = mse_loss(&pred, &target, None)?;
            let batch_loss = loss as f64 * n as f64;
            model.backward_seq(&cache, &grad);
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss became {batch_loss} at epoch {epoch}, step {step}"
                )));
            }
            total += batch_loss;
            count += n;
            lr = schedule.lr_at(epoch as f64 + step as f64 / steps as f64);
            opt.step(&mut model, lr)?;
        }
        let stats = EpochStats {
            epoch,
            loss: total / count as f64,
            lr,
        };
        on_epoch(&stats);
        curve.push(stats);
    }
    Ok(TrainOutcome { model, curve })
}

pub fn save_order_model(
    dir: &Path,
    model: &OrderModel<f32>,
    train_cfg: Option<&OrderTrainConfig>,
    curve: &[EpochStats],
) -> Result<CheckpointManifest> {
    let extra = json!({
        "train": train_cfg,
        "final_loss": curve.last().map(|e| e.loss),
        "loss_curve": curve.iter().map(|e| e.loss).collect::<Vec<_>>(),
    });
    save_checkpoint(dir, MODEL_TYPE, serde_json::to_value(&model.config)?, extra, model)
}

pub fn load_order_model(dir: &Path) -> Result<OrderModel<f32>> {
    let manifest = read_manifest(dir)?;
    let config: OrderModelConfig =
        serde_json::from_value(manifest.config.clone()).map_err(|e| Error::parse("config", e.to_string()))?;
    let mut model = OrderModel::new(config, 0)?;
    load_into(dir, MODEL_TYPE, &mut model)?;
    Ok(model)
}

/// Reads `extra.final_loss` from a saved checkpoint, if present.
pub fn checkpoint_final_loss(manifest: &CheckpointManifest) -> Option<f64> {
    manifest.extra.get("final_loss").and_then(Value::as_f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> OrderTrainConfig {
        OrderTrainConfig {
            model: OrderModelConfig {
                dim: 32,
                heads: 4,
                layers: 2,
                ff_dim: 64,
                ..Default::default()
            },
            lr0: 2e-3,
            epochs: 300,
            batch: 1,
            ..Default::default()
        }
    }

    fn sample() -> OrderSample {
        OrderSample {
            rows: vec![[0.6, 0.0, 0.7, 0.5], [0.3, 0.0, 0.4, 0.5], [0.0, 0.2, 0.05, 0.4]],
            ranks: vec![1, 0, 2],
        }
    }

    #[test]
    fn memorizes_one_sample() {
        let out = train(&[sample()], &tiny(), |_| {}).unwrap();
        assert!(out.final_loss() < 1e-3, "{}", out.final_loss());
        assert!(out.curve.iter().all(|e| e.loss.is_finite()));
    }

    #[test]
    fn deterministic_checkpoints() {
        let cfg = OrderTrainConfig { epochs: 3, ..tiny() };
        let a = train(&[sample(), sample()], &cfg, |_| {}).unwrap();
        let b = train(&[sample(), sample()], &cfg, |_| {}).unwrap();
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = save_order_model(da.path(), &a.model, Some(&cfg), &a.curve).unwrap();
        let mb = save_order_model(db.path(), &b.model, Some(&cfg), &b.curve).unwrap();
        assert_eq!(ma, mb);
        let back = load_order_model(da.path()).unwrap();
        assert_eq!(
            back.score(&crate::preprocess::pad_to_n(&sample().rows, 50).unwrap())
                .unwrap(),
            a.model
                .score(&crate::preprocess::pad_to_n(&sample().rows, 50).unwrap())
                .unwrap()
        );
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(train(&[], &tiny(), |_| {}).is_err());
    }
}
