//! Run configuration: TOML (or a previous `run.json`) plus overrides, and
//! the `run.json` record written next to every command's artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use calli_core::callialign::{AlignTrainConfig, TableConfig};
use calli_core::orderformer::OrderTrainConfig;
use calli_core::pilots::NoiseGridConfig;
use calli_core::preprocess::ClusterParams;
use calli_core::synthgen::GenConfig;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SEED_ENV: &str = "CALLI_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicingConfig {
    pub chars: usize,
}

impl Default for SlicingConfig {
    fn default() -> Self {
        SlicingConfig { chars: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Copied into every section's seed when the run is resolved.
    pub seed: u64,
    pub gen: GenConfig,
    pub cluster: ClusterParams,
    pub order: OrderTrainConfig,
    pub align: AlignTrainConfig,
    pub noise: NoiseGridConfig,
    pub noise_table: TableConfig,
    pub slicing: SlicingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            gen: GenConfig::default(),
            cluster: ClusterParams::default(),
            order: OrderTrainConfig::default(),
            align: AlignTrainConfig::default(),
            noise: NoiseGridConfig::default(),
            noise_table: TableConfig {
                chars: 500,
                extra_tokens: 0,
                dim: 64,
                seed: 0,
            },
            slicing: SlicingConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads TOML, or JSON when the file ends in `.json`. A `run.json`
    /// written by an earlier command is accepted: its `config` field is used.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let bad = |e: String| CliError::usage(format!("config {}: {e}", path.display()));
        if path.extension().is_some_and(|e| e == "json") {
            let value: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            let inner = match value.get("config") {
                Some(c) if value.get("command").is_some() => c.clone(),
                _ => value,
            };
            serde_json::from_value(inner).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.message().to_string()))
        }
    }

    /// Applies the seed precedence (flag, then `CALLI_SEED`, then file) and
    /// propagates the result to every section.
    pub fn resolve(mut self, flag_seed: Option<u64>) -> Result<Self, CliError> {
        if let Some(s) = flag_seed {
            self.seed = s;
        } else if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        }
        let s = self.seed;
        self.gen.seed = s;
        self.order.seed = s;
        self.align.seed = s;
        self.align.table.seed = s;
        self.align.features.seed = s;
        self.noise.seed = s;
        self.noise_table.seed = s;
        // Shapes shared between the model, the table and the feature bank
        // are set once, under [align.model].
        self.align.table.dim = self.align.model.dim;
        self.align.features.tokens = self.align.model.tokens;
        self.align.features.dim = self.align.model.feature_dim;
        Ok(self)
    }
}

/// Git-style content hash: SHA-256 of `blob <len>\0<bytes>` for files; for
/// directories, of the sorted `<name>\0<hash>\n` lines of their entries.
pub fn content_hash(path: &Path) -> Result<String, CliError> {
    let meta = fs::metadata(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    if meta.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        names.sort();
        h.update(b"tree\0");
        for p in names {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            h.update(name.as_bytes());
            h.update([0]);
            h.update(content_hash(&p)?.as_bytes());
            h.update(b"\n");
        }
    } else {
        let bytes = fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        h.update(format!("blob {}\0", bytes.len()).as_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Writes `run.json` into `dir`. No timestamps, so identical runs give
/// identical records.
pub fn write_run_record(
    dir: &Path,
    command: &str,
    args: Value,
    config: &RunConfig,
    inputs: &[&Path],
) -> Result<(), CliError> {
    let mut hashes = serde_json::Map::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), Value::String(content_hash(p)?));
    }
    let record = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "args": args,
        "config": config,
        "inputs": hashes,
    });
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let path = dir.join("run.json");
    let text = serde_json::to_string_pretty(&record).map_err(|e| CliError::internal(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}
