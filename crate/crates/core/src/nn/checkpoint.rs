//! Checkpoints: `manifest.json` plus one little-endian f32 file per parameter.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::param::Module;
use super::tensor::Scalar;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model_type: String,
    pub config: Value,
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub extra: Value,
}

/// Parses and validates a manifest without touching parameter files.
pub fn parse_manifest(text: &str) -> Result<CheckpointManifest> {
    let m: CheckpointManifest = serde_json::from_str(text).map_err(|e| Error::parse("manifest", e.to_string()))?;
    if m.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format {
            expected: format!("checkpoint format_version {CHECKPOINT_FORMAT_VERSION}"),
            found: m.format_version.to_string(),
        });
    }
    let mut seen = std::collections::BTreeSet::new();
    for (i, p) in m.params.iter().enumerate() {
        let field = format!("params[{i}]");
        if !seen.insert(p.name.as_str()) {
            return Err(Error::parse(field, format!("duplicate parameter {}", p.name)));
        }
        if p.file.is_empty() || p.file.contains(['/', '\\']) || p.file.starts_with('.') {
            return Err(Error::parse(field, format!("bad file name {:?}", p.file)));
        }
        if p.shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).is_none() {
            return Err(Error::parse(field, "shape overflows"));
        }
        if p.sha256.len() != 64 || !p.sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::parse(field, "sha256 must be 64 hex digits"));
        }
    }
    Ok(m)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every parameter of `module` (cast to f32) plus the manifest.
pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    model_type: &str,
    config: Value,
    extra: Value,
    module: &impl Module<T>,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = Vec::new();
    let mut failure = None;
    module.visit("", &mut |name, p| {
        if failure.is_some() {
            return;
        }
        let bytes: Vec<u8> = p.value.iter().flat_map(|&v| Scalar::to_f32(v).to_le_bytes()).collect();
        let file = format!("{name}.bin");
        let path = dir.join(&file);
        if let Err(e) = fs::write(&path, &bytes) {
            failure = Some(Error::io(&path, e));
            return;
        }
        params.push(ParamEntry {
            name: name.to_string(),
            shape: p.shape.clone(),
            file,
            sha256: sha256_hex(&bytes),
        });
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model_type: model_type.to_string(),
        config,
        params,
        extra,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_manifest(&text)
}

/// Little-endian f32 values of a tensor blob with the given shape.
pub fn decode_tensor(bytes: &[u8], shape: &[usize]) -> Result<Vec<f32>> {
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::dim(format!("shape {shape:?} overflows")))?;
    if bytes.len() != n {
        return Err(Error::dim(format!(
            "shape {shape:?} needs {n} bytes, blob has {}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Reads and hash-verifies every parameter listed in the manifest.
/// Parameter name to (shape, values).
pub type TensorMap = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

pub fn load_tensors(dir: &Path, manifest: &CheckpointManifest) -> Result<TensorMap> {
    let mut out = BTreeMap::new();
    for p in &manifest.params {
        let path = dir.join(&p.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != p.sha256.to_ascii_lowercase() {
            return Err(Error::Format {
                expected: format!("sha256 {} for {}", p.sha256, p.name),
                found: sha256_hex(&bytes),
            });
        }
        let values = decode_tensor(&bytes, &p.shape).map_err(|_| {
            Error::dim(format!(
                "{}: shape {:?} does not fit {} bytes",
                p.name,
                p.shape,
                bytes.len()
            ))
        })?;
        out.insert(p.name.clone(), (p.shape.clone(), values));
    }
    Ok(out)
}

/// Loads a checkpoint into an already-constructed module of matching shape.
pub fn load_into<T: Scalar>(dir: &Path, model_type: &str, module: &mut impl Module<T>) -> Result<CheckpointManifest> {
    let manifest = read_manifest(dir)?;
    if manifest.model_type != model_type {
        return Err(Error::Format {
            expected: model_type.to_string(),
            found: manifest.model_type.clone(),
        });
    }
    let mut tensors = load_tensors(dir, &manifest)?;
    let mut failure = None;
    module.visit_mut("", &mut |name, p| {
        if failure.is_some() {
            return;
        }
        match tensors.remove(name) {
            Some((shape, values)) if shape == p.shape => {
                for (dst, v) in p.value.iter_mut().zip(values) {
                    *dst = T::of(v as f64);
                }
            }
            Some((shape, _)) => {
                failure = Some(Error::dim(format!(
                    "{name}: checkpoint shape {shape:?}, model {:?}",
                    p.shape
                )))
            }
            None => failure = Some(Error::parse("params", format!("missing parameter {name}"))),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(name) = tensors.keys().next() {
        return Err(Error::parse("params", format!("unexpected parameter {name}")));
    }
    Ok(manifest)
}
