use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::features::{FeatureBank, FeatureConfig};
use super::loss::{crd_loss, l2_loss, ratio_loss, AlignLoss, RatioParams};
use super::model::{AlignModel, AlignModelConfig, MODEL_TYPE};
use super::table::{nn_decode, EmbedTable, TableConfig, PAD, QUERIES};
use crate::error::{Error, Result};
use crate::nn::{save_checkpoint, AdamW, AdamWConfig, CheckpointManifest, LrSchedule, Matrix, Module};

// Model init uses stream 0 of the same seed.
const TRAIN_STREAM: u64 = 0x7ea1 << 32;
const HELD_OUT_STREAM: u64 = 0xe7a1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignTrainConfig {
    /// Learning rate at `lr_reference_dim` width.
    pub lr0: f64,
    /// Width `lr0` was tuned for. Adam steps do not shrink with width, so
    /// the applied rate is `lr0 * lr_reference_dim / model.dim`; 0 disables
    /// the scaling.
    pub lr_reference_dim: usize,
    pub eta_min: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub steps: usize,
    pub loss: AlignLoss,
    pub ratio: RatioParams,
    pub crd_temperature: f64,
    /// Multiplier on the contrastive term, which is summed over anchors.
    pub crd_weight: f64,
    /// Held-out accuracy is measured every this many steps (0 = only at
    /// the end).
    pub eval_every: usize,
    pub seed: u64,
    pub model: AlignModelConfig,
    pub table: TableConfig,
    pub features: FeatureConfig,
}

impl Default for AlignTrainConfig {
    fn default() -> Self {
        AlignTrainConfig {
            lr0: 1e-4,
            lr_reference_dim: 4096,
            eta_min: 0.0,
            weight_decay: 0.01,
            batch: 64,
            steps: 5000,
            loss: AlignLoss::L2,
            ratio: RatioParams::default(),
            crd_temperature: 0.1,
            crd_weight: 0.01,
            eval_every: 500,
            seed: 0,
            model: AlignModelConfig::default(),
            table: TableConfig::default(),
            features: FeatureConfig::default(),
        }
    }
}

impl AlignTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.table.validate()?;
        self.ratio.validate()?;
        if !(self.lr0 > 0.0) || self.batch == 0 || self.steps == 0 || !(self.crd_temperature > 0.0) {
            return Err(Error::invalid("lr0, batch, steps and crd_temperature must be positive"));
        }
        if self.loss == AlignLoss::L2Crd && (self.batch < 2 || !self.batch.is_multiple_of(2)) {
            return Err(Error::invalid(
                "contrastive batches pair up views, so batch must be even",
            ));
        }
        if self.model.dim != self.table.dim
            || self.model.tokens != self.features.tokens
            || self.model.feature_dim != self.features.dim
        {
            return Err(Error::invalid(
                "model dim must match the table and tokens/feature_dim must match the features",
            ));
        }
        self.schedule().validate()
    }

    pub fn effective_lr0(&self) -> f64 {
        if self.lr_reference_dim == 0 {
            self.lr0
        } else {
            self.lr0 * self.lr_reference_dim as f64 / self.model.dim as f64
        }
    }

    /// One cosine decay over the whole run, no restarts.
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr0: self.effective_lr0(),
            eta_min: self.eta_min,
            t0: self.steps as f64,
            t_mult: 1.0,
        }
    }
}

/// Table and feature bank shared by training and evaluation.
#[derive(Debug, Clone)]
pub struct AlignSetup {
    pub table: EmbedTable,
    pub bank: FeatureBank,
}

impl AlignSetup {
    pub fn new(cfg: &AlignTrainConfig) -> Result<Self> {
        let table = EmbedTable::random(cfg.table.clone())?;
        let bank = FeatureBank::new(cfg.table.chars, cfg.features.clone())?;
        Ok(AlignSetup { table, bank })
    }

    /// Fresh noisy views of characters for evaluation, drawn from a stream
    /// the training loop never uses.
    pub fn held_out(&self, ids: &[usize], seed: u64) -> Result<Vec<(usize, Matrix<f64>)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(HELD_OUT_STREAM);
        ids.iter()
            .map(|&id| Ok((id, self.bank.sample(id, &mut rng, self.bank.config.noise)?)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignEval {
    pub chars: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Fraction of non-pad target positions decoded to the right token.
    pub token_accuracy: f64,
}

/// A character counts as correct when every non-pad position decodes to its
/// target token.
pub fn evaluate_align(
    model: &AlignModel<f32>,
    table: &EmbedTable,
    samples: &[(usize, Matrix<f64>)],
) -> Result<AlignEval> {
    let (mut correct, mut tok_ok, mut tok_total) = (0, 0, 0);
    for chunk in samples.chunks(64) {
        let feats: Vec<Matrix<f32>> = chunk.iter().map(|(_, f)| f.cast()).collect();
        let out = model.forward(&feats)?;
        let d = out.dims[2];
        let rows = Matrix::from_vec(out.dims[0] * QUERIES, d, out.data.iter().map(|&v| v as f64).collect())?;
        let decoded = nn_decode(&rows, table);
        for (i, (id, _)) in chunk.iter().enumerate() {
            let target = table.char_tokens(*id)?;
            let mut all = true;
            for (q, &t) in target.iter().enumerate() {
                if t == PAD {
                    continue;
                }
                tok_total += 1;
                if decoded[i * QUERIES + q].0 == t {
                    tok_ok += 1;
                } else {
                    all = false;
                }
            }
            correct += all as usize;
        }
    }
    let chars = samples.len();
    Ok(AlignEval {
        chars,
        correct,
        accuracy: if chars == 0 { 0.0 } else { correct as f64 / chars as f64 },
        token_accuracy: if tok_total == 0 {
            0.0
        } else {
            tok_ok as f64 / tok_total as f64
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct AlignOutcome {
    pub model: AlignModel<f32>,
    /// Loss of every step.
    pub losses: Vec<f64>,
    pub evals: Vec<EvalPoint>,
}

impl AlignOutcome {
    /// Mean loss over consecutive windows of `width` steps.
    pub fn windowed_losses(&self, width: usize) -> Vec<f64> {
        self.losses
            .chunks(width.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

fn batch_ids(cfg: &AlignTrainConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let chars = cfg.table.chars;
    if cfg.loss == AlignLoss::L2Crd {
        // Two views of each character so every anchor has a positive.
        let mut ids: Vec<usize> = (0..cfg.batch / 2).map(|_| rng.gen_range(0..chars)).collect();
        ids.extend(ids.clone());
        ids.shuffle(rng);
        ids
    } else {
        (0..cfg.batch).map(|_| rng.gen_range(0..chars)).collect()
    }
}

/// Trains a resampler on noisy views of every character. `on_eval` sees
/// each held-out accuracy point as it is measured.
pub fn train_align(
    setup: &AlignSetup,
    cfg: &AlignTrainConfig,
    mut on_eval: impl FnMut(&EvalPoint, f64),
) -> Result<AlignOutcome> {
    cfg.validate()?;
    if setup.table.config != cfg.table || setup.bank.config != cfg.features {
        return Err(Error::invalid("setup was built from a different config"));
    }
    let mut model = AlignModel::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let mut opt = AdamW::new(
        &model,
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    );
    let schedule = cfg.schedule();
    let all_ids: Vec<usize> = (0..cfg.table.chars).collect();
    let held_out = setup.held_out(&all_ids, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);
    let (v, dv, d) = (cfg.model.tokens, cfg.model.feature_dim, cfg.model.dim);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut evals = Vec::new();
    for step in 0..cfg.steps {
        let ids = batch_ids(cfg, &mut rng);
        let mut feats = Matrix::<f32>::zeros(ids.len() * v, dv);
        let mut target = Vec::with_capacity(ids.len() * QUERIES * d);
        for (i, &id) in ids.iter().enumerate() {
            let f = setup.bank.sample(id, &mut rng, cfg.features.noise)?;
            for (dst, &src) in feats.data[i * v * dv..(i + 1) * v * dv].iter_mut().zip(&f.data) {
                *dst = src as f32;
            }
            target.extend(setup.table.targets(id)?.data.iter().map(|&x| x as f32));
        }
        let (pred, cache) = model.forward_stacked(&feats, ids.len())?;
        let (loss, grad) = match cfg.loss {
            AlignLoss::L2 => l2_loss(&pred.data, &target)?,
            AlignLoss::L2Ratio => ratio_loss(&pred.data, &target, &cfg.ratio, step, cfg.steps)?,
            AlignLoss::L2Crd => {
                let (l2, mut g) = l2_loss(&pred.data, &target)?;
                let (c, gc) = crd_loss(&pred.data, &ids, cfg.crd_temperature)?;
                let w = cfg.crd_weight as f32;
                g.iter_mut().zip(&gc).for_each(|(a, b)| *a += w * b);
                (l2 + w * c, g)
            }
        };
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss became {loss} at step {step}")));
        }
        losses.push(loss as f64);
        model.zero_grad();
        model.backward_stacked(&cache, &Matrix::from_vec(pred.rows, pred.cols, grad)?);
        opt.step(&mut model, schedule.lr_at(step as f64))?;
        let done = step + 1;
        if done == cfg.steps || (cfg.eval_every > 0 && done % cfg.eval_every == 0) {
            let eval = evaluate_align(&model, &setup.table, &held_out)?;
            let point = EvalPoint {
                step: done,
                accuracy: eval.accuracy,
            };
            on_eval(&point, loss as f64);
            evals.push(point);
        }
    }
    Ok(AlignOutcome { model, losses, evals })
}

pub fn save_align_model(
    dir: &Path,
    model: &AlignModel<f32>,
    cfg: Option<&AlignTrainConfig>,
    outcome: Option<&AlignOutcome>,
) -> Result<CheckpointManifest> {
    let extra = json!({
        "train": cfg,
        "loss_curve": outcome.map(|o| o.windowed_losses(100)),
        "accuracy_curve": outcome.map(|o| &o.evals),
    });
    save_checkpoint(dir, MODEL_TYPE, serde_json::to_value(&model.config)?, extra, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::callialign::model::load_align_model;

    fn tiny() -> AlignTrainConfig {
        AlignTrainConfig {
            lr0: 3e-3,
            lr_reference_dim: 0,
            batch: 8,
            steps: 60,
            eval_every: 30,
            model: AlignModelConfig {
                dim: 16,
                heads: 2,
                blocks: 1,
                ff_dim: 32,
                tokens: 4,
                feature_dim: 4,
                ..Default::default()
            },
            table: TableConfig {
                chars: 6,
                extra_tokens: 2,
                dim: 16,
                seed: 1,
            },
            features: FeatureConfig {
                tokens: 4,
                dim: 4,
                noise: 0.1,
                seed: 2,
            },
            ..Default::default()
        }
    }

    #[test]
    fn loss_falls_and_runs_repeat() {
        let cfg = tiny();
        let setup = AlignSetup::new(&cfg).unwrap();
        let a = train_align(&setup, &cfg, |_, _| {}).unwrap();
        let w = a.windowed_losses(20);
        assert!(w[0] > 0.0 && w[2] < w[0], "{w:?}");
        assert_eq!(a.evals.len(), 2);
        let b = train_align(&setup, &cfg, |_, _| {}).unwrap();
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_align_model(da.path(), &a.model, Some(&cfg), Some(&a)).unwrap();
        save_align_model(db.path(), &b.model, Some(&cfg), Some(&b)).unwrap();
        for name in ["manifest.json", "queries.bin", "blocks.0.attn.wq.weight.bin"] {
            assert_eq!(
                std::fs::read(da.path().join(name)).unwrap(),
                std::fs::read(db.path().join(name)).unwrap()
            );
        }
        let back = load_align_model(da.path()).unwrap();
        assert_eq!(back.queries.value, a.model.queries.value);
    }

    #[test]
    fn every_loss_variant_trains() {
        for loss in [AlignLoss::L2Ratio, AlignLoss::L2Crd] {
            let cfg = AlignTrainConfig {
                loss,
                steps: 20,
                ..tiny()
            };
            let setup = AlignSetup::new(&cfg).unwrap();
            let out = train_align(&setup, &cfg, |_, _| {}).unwrap();
            assert!(out.losses.iter().all(|l| l.is_finite() && *l > 0.0));
        }
        let odd = AlignTrainConfig {
            loss: AlignLoss::L2Crd,
            batch: 7,
            ..tiny()
        };
        assert!(odd.validate().is_err());
        let mismatch = AlignTrainConfig {
            table: TableConfig { dim: 8, ..tiny().table },
            ..tiny()
        };
        assert!(mismatch.validate().is_err());
    }

    #[test]
    fn learning_rate_scales_with_width() {
        let cfg = AlignTrainConfig::default();
        assert!((cfg.effective_lr0() - 3.2e-3).abs() < 1e-15);
        let wide = AlignTrainConfig {
            model: AlignModelConfig {
                dim: 4096,
                heads: 64,
                ..Default::default()
            },
            ..Default::default()
        };
        assert_eq!(wide.effective_lr0(), 1e-4);
        assert_eq!(tiny().effective_lr0(), 3e-3);
    }
}
