//! Seeded stand-in for a language model's token embedding table, with the
//! stub tokenizer that maps each character to three target rows.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::nn::checkpoint::load_tensors;
use crate::nn::{read_manifest, save_checkpoint, CheckpointManifest, Matrix, Module, Param};

pub const TABLE_TYPE: &str = "embedtable/v1";
/// Target rows per character.
pub const QUERIES: usize = 3;
/// Row 0 of every table is the pad token.
pub const PAD: usize = 0;
const TABLE_STREAM: u64 = 0x7ab1e << 32;
/// Divisor floor for per-row normalization.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableConfig {
    /// Character vocabulary size.
    pub chars: usize,
    /// Shared sub-character tokens that may follow a character's own token.
    pub extra_tokens: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            chars: 500,
            extra_tokens: 64,
            dim: 128,
            seed: 0,
        }
    }
}

impl TableConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chars < 2 || self.dim < 2 {
            return Err(Error::invalid(format!(
                "table needs at least 2 characters and 2 dims, got {} and {}",
                self.chars, self.dim
            )));
        }
        Ok(())
    }

    pub fn vocab(&self) -> usize {
        1 + self.chars + self.extra_tokens
    }
}

/// Raw rows plus the derived views used for targets and decoding.
#[derive(Debug, Clone)]
pub struct EmbedTable {
    pub config: TableConfig,
    pub rows: Matrix<f64>,
    /// Mean and population std over every entry of `rows`.
    pub mean: f64,
    pub std: f64,
    /// Per-row normalized rows, the regression targets.
    pub normalized: Matrix<f64>,
    /// `normalized` scaled to unit length, for cosine decoding.
    unit: Matrix<f64>,
    /// Target token ids of each character.
    pub tokens: Vec<[usize; QUERIES]>,
}

/// `(x - mean) / std` with the population std of the row.
pub fn normalize_target(row: &[f64]) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(NORM_EPS);
    row.iter().map(|v| (v - mean) / sd).collect()
}

fn unit(row: &[f64]) -> Vec<f64> {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return row.to_vec();
    }
    row.iter().map(|v| v / norm).collect()
}

fn tokenize(cfg: &TableConfig) -> Vec<[usize; QUERIES]> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x70c3);
    let extras: Vec<usize> = (1 + cfg.chars..cfg.vocab()).collect();
    (0..cfg.chars)
        .map(|id| {
            let mut t = [PAD; QUERIES];
            t[0] = id + 1;
            let k = if extras.is_empty() {
                0
            } else {
                rng.gen_range(0..QUERIES)
            };
            for (slot, &e) in t[1..].iter_mut().zip(extras.choose_multiple(&mut rng, k)) {
                *slot = e;
            }
            t
        })
        .collect()
}

impl EmbedTable {
    /// Gaussian rows with a random offset and scale per row, so per-row
    /// normalization changes them.
    pub fn random(config: TableConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TABLE_STREAM);
        let (v, d) = (config.vocab(), config.dim);
        let mut data = Vec::with_capacity(v * d);
        for _ in 0..v {
            let offset: f64 = 0.5 * rng.sample::<f64, _>(StandardNormal);
            let scale = rng.gen_range(0.5..2.0);
            data.extend((0..d).map(|_| offset + scale * rng.sample::<f64, _>(StandardNormal)));
        }
        let tokens = tokenize(&config);
        Self::from_rows(config, Matrix::from_vec(v, d, data)?, tokens)
    }

    pub fn from_rows(config: TableConfig, rows: Matrix<f64>, tokens: Vec<[usize; QUERIES]>) -> Result<Self> {
        config.validate()?;
        if rows.shape() != (config.vocab(), config.dim) {
            return Err(Error::dim(format!(
                "table rows are {:?}, config wants {}x{}",
                rows.shape(),
                config.vocab(),
                config.dim
            )));
        }
        if !rows.all_finite() {
            return Err(Error::invalid("table rows must be finite"));
        }
        if tokens.len() != config.chars || tokens.iter().flatten().any(|&t| t >= config.vocab()) {
            return Err(Error::invalid("token map does not fit the table"));
        }
        let n = rows.data.len() as f64;
        let mean = rows.data.iter().sum::<f64>() / n;
        let std = (rows.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let mut normalized = Matrix::zeros(rows.rows, rows.cols);
        let mut unit_rows = Matrix::zeros(rows.rows, rows.cols);
        for r in 0..rows.rows {
            let t = normalize_target(rows.row(r));
            unit_rows.row_mut(r).copy_from_slice(&unit(&t));
            normalized.row_mut(r).copy_from_slice(&t);
        }
        Ok(EmbedTable {
            config,
            rows,
            mean,
            std,
            normalized,
            unit: unit_rows,
            tokens,
        })
    }

    pub fn vocab(&self) -> usize {
        self.rows.rows
    }

    pub fn dim(&self) -> usize {
        self.rows.cols
    }

    pub fn char_tokens(&self, id: usize) -> Result<[usize; QUERIES]> {
        self.tokens
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("character {id} outside vocabulary of {}", self.tokens.len())))
    }

    /// The `QUERIES x dim` target block of one character.
    pub fn targets(&self, id: usize) -> Result<Matrix<f64>> {
        let t = self.char_tokens(id)?;
        Ok(self.normalized.select_rows(&t))
    }

    /// Normalization by the table-wide statistics; inverse of
    /// [`denormalize`].
    pub fn normalize_global(&self, x: &Matrix<f64>) -> Matrix<f64> {
        let sd = self.std.max(NORM_EPS);
        x.map(|v| (v - self.mean) / sd)
    }

    /// Maps model outputs back to the raw embedding scale.
    pub fn denormalize(&self, x: &Matrix<f64>) -> Matrix<f64> {
        x.map(|v| v * self.std + self.mean)
    }

    /// Nearest table row by cosine similarity, ties to the lowest id.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let x = unit(x);
        let mut best = (0, f64::NEG_INFINITY);
        for r in 0..self.unit.rows {
            let s: f64 = self.unit.row(r).iter().zip(&x).map(|(a, b)| a * b).sum();
            if s > best.1 {
                best = (r, s);
            }
        }
        best
    }

    pub fn save(&self, dir: &Path) -> Result<CheckpointManifest> {
        let holder = RowsParam(Param {
            shape: vec![self.rows.rows, self.rows.cols],
            value: self.rows.data.clone(),
            grad: Vec::new(),
        });
        save_checkpoint(
            dir,
            TABLE_TYPE,
            serde_json::to_value(&self.config)?,
            json!({ "tokens": self.tokens, "mean": self.mean, "std": self.std }),
            &holder,
        )
    }

    /// Loads a saved table. Rows are stored as f32, so statistics are
    /// recomputed from the stored values.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        if manifest.model_type != TABLE_TYPE {
            return Err(Error::Format {
                expected: TABLE_TYPE.into(),
                found: manifest.model_type,
            });
        }
        let config: TableConfig =
            serde_json::from_value(manifest.config.clone()).map_err(|e| Error::parse("config", e.to_string()))?;
        let tokens: Vec<[usize; QUERIES]> = serde_json::from_value(manifest.extra["tokens"].clone())
            .map_err(|e| Error::parse("tokens", e.to_string()))?;
        let mut tensors = load_tensors(dir, &manifest)?;
        let (shape, values) = tensors
            .remove("rows")
            .ok_or_else(|| Error::parse("params", "missing rows"))?;
        if shape.len() != 2 {
            return Err(Error::dim(format!("rows tensor has shape {shape:?}")));
        }
        let rows = Matrix::from_vec(shape[0], shape[1], values.iter().map(|&v| v as f64).collect())?;
        Self::from_rows(config, rows, tokens)
    }
}

/// Nearest-neighbor decode of every row of `x`: `(token id, cosine)`.
pub fn nn_decode(x: &Matrix<f64>, table: &EmbedTable) -> Vec<(usize, f64)> {
    (0..x.rows).map(|r| table.nearest(x.row(r))).collect()
}

struct RowsParam(Param<f64>);

impl Module<f64> for RowsParam {
    fn visit(&self, _: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
        f("rows", &self.0);
    }
    fn visit_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        f("rows", &mut self.0);
    }
}

/// Fraction of visual tokens removed when `v` tokens become `q`.
pub fn compression_ratio(v: usize, q: usize) -> Result<f64> {
    if q == 0 || v < q {
        return Err(Error::invalid(format!("need v >= q >= 1, got v={v} q={q}")));
    }
    Ok(1.0 - q as f64 / v as f64)
}

/// Input sequence for the language model: embeddings of the query tokens,
/// then denormalized pseudo embeddings, then optional page feature rows.
pub fn assemble_eit_sample(
    query: &[usize],
    pseudo: &Matrix<f64>,
    page_features: Option<&Matrix<f64>>,
    table: &EmbedTable,
) -> Result<Matrix<f64>> {
    let d = table.dim();
    if pseudo.rows > 0 && pseudo.cols != d || page_features.is_some_and(|p| p.rows > 0 && p.cols != d) {
        return Err(Error::dim(format!("embedding width must be {d}")));
    }
    if !pseudo.rows.is_multiple_of(QUERIES) {
        return Err(Error::dim(format!(
            "{} pseudo rows is not a multiple of {QUERIES}",
            pseudo.rows
        )));
    }
    if let Some(&t) = query.iter().find(|&&t| t >= table.vocab()) {
        return Err(Error::invalid(format!("query token {t} outside vocabulary")));
    }
    let mut out = table.rows.select_rows(query);
    let mut push = |m: &Matrix<f64>| {
        out.data.extend_from_slice(&m.data);
        out.rows += m.rows;
    };
    if pseudo.rows > 0 {
        push(&table.denormalize(pseudo));
    }
    if let Some(p) = page_features {
        push(p);
    }
    out.cols = d;
    Ok(out)
}
