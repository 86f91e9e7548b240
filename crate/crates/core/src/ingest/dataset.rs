//! Internal dataset layout: one JSON document per page under `pages/`, plus
//! a `manifest.json` listing every page with its split.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Layout, PageSample};

use super::parse_labelme;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const DATASET_KIND: &str = "calli-dataset";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Deterministic 80/10/10 assignment by page index.
    pub fn for_index(index: usize) -> Split {
        match index % 10 {
            8 => Split::Val,
            9 => Split::Test,
            _ => Split::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub split: Split,
    pub layout: Layout,
    pub char_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: String,
    /// Free-form provenance: generator algorithm, seed and config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
    pub files: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(generator: Option<serde_json::Value>) -> Self {
        DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            kind: DATASET_KIND.to_string(),
            generator,
            files: Vec::new(),
        }
    }
}

pub fn write_page(path: &Path, page: &PageSample) -> Result<()> {
    let text = serde_json::to_string_pretty(page)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses and validates one page JSON document.
pub fn parse_page(text: &str) -> Result<PageSample> {
    parse_page_named(text, "page")
}

fn parse_page_named(text: &str, name: &str) -> Result<PageSample> {
    let page: PageSample = serde_json::from_str(text).map_err(|e| Error::parse(name, e.to_string()))?;
    page.validate()?;
    Ok(page)
}

pub fn read_page(path: &Path) -> Result<PageSample> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_page_named(&text, &path.display().to_string())
}

/// Writes pages and the manifest. Page files are named after page ids.
pub fn write_dataset(
    dir: &Path,
    generator: Option<serde_json::Value>,
    pages: &[(PageSample, Split, Option<usize>)],
) -> Result<DatasetManifest> {
    let pages_dir = dir.join("pages");
    fs::create_dir_all(&pages_dir).map_err(|e| Error::io(&pages_dir, e))?;
    let mut manifest = DatasetManifest::new(generator);
    for (page, split, columns) in pages {
        let rel = format!("pages/{}.json", page.id);
        write_page(&dir.join(&rel), page)?;
        manifest.files.push(ManifestEntry {
            id: page.id.clone(),
            path: rel,
            split: *split,
            layout: page.layout.clone(),
            char_count: page.boxes.len(),
            column_count: *columns,
        });
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Parses and checks a dataset manifest: kind, format version, and that
/// every page path stays inside the dataset directory.
pub fn parse_dataset_manifest(text: &str) -> Result<DatasetManifest> {
    let manifest: DatasetManifest =
        serde_json::from_str(text).map_err(|e| Error::parse("manifest.json", e.to_string()))?;
    if manifest.kind != DATASET_KIND || manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format {
            expected: format!("{DATASET_KIND} v{DATASET_FORMAT_VERSION}"),
            found: format!("{} v{}", manifest.kind, manifest.format_version),
        });
    }
    for (i, entry) in manifest.files.iter().enumerate() {
        let inside = Path::new(&entry.path)
            .components()
            .all(|c| matches!(c, std::path::Component::Normal(_)));
        if !inside || entry.path.is_empty() {
            return Err(Error::parse(
                format!("manifest.json files[{i}].path"),
                format!("{:?} must be a relative path inside the dataset", entry.path),
            ));
        }
    }
    Ok(manifest)
}

/// Loads a dataset directory; pages come back in manifest order.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<PageSample>)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = parse_dataset_manifest(&text)?;
    let pages = manifest
        .files
        .par_iter()
        .map(|entry| read_page(&dir.join(&entry.path)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, pages))
}

/// Parses every `*.json` LabelMe file in a directory, sorted by filename.
pub fn load_labelme_dir(dir: &Path) -> Result<Vec<PageSample>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    files.sort();
    files
        .par_iter()
        .map(|path| {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut page = parse_labelme(&text).map_err(|e| match e {
                Error::Parse { field, message } => Error::Parse {
                    field: format!("{}: {field}", path.display()),
                    message,
                },
                other => other,
            })?;
            if page.id.is_empty() {
                page.id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
            }
            Ok(page)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BBox, CharBox};

    fn page(id: &str) -> PageSample {
        PageSample {
            id: id.to_string(),
            width: 50,
            height: 50,
            boxes: vec![CharBox::new(BBox::new(1., 1., 9., 9.).unwrap()).with_label("字")],
            reading_order: Some(vec![0]),
            layout: Layout::Album,
            style: None,
            author: None,
            raster: None,
        }
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let pages = vec![(page("a"), Split::Train, Some(1)), (page("b"), Split::Test, None)];
        let written = write_dataset(dir.path(), None, &pages).unwrap();
        let (manifest, loaded) = load_dataset(dir.path()).unwrap();
        assert_eq!(manifest, written);
        assert_eq!(loaded, vec![page("a"), page("b")]);
    }

    #[test]
    fn rejects_foreign_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.json"),
            r#"{"format_version": 9, "kind": "calli-dataset", "files": []}"#,
        )
        .unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn rejects_paths_outside_the_dataset() {
        for path in ["../x.json", "/etc/passwd", "pages/../../x", ""] {
            let text = format!(
                r#"{{"format_version": 1, "kind": "calli-dataset", "files": [{{"id": "a", "path": {path:?}, "split": "train", "layout": "banner", "char_count": 1}}]}}"#
            );
            assert!(
                matches!(parse_dataset_manifest(&text), Err(Error::Parse { .. })),
                "{path}"
            );
        }
    }

    #[test]
    fn split_assignment_is_80_10_10() {
        let splits: Vec<Split> = (0..100).map(Split::for_index).collect();
        assert_eq!(splits.iter().filter(|s| **s == Split::Train).count(), 80);
        assert_eq!(splits.iter().filter(|s| **s == Split::Test).count(), 10);
    }
}
