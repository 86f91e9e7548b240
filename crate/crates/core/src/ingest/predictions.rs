use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Predicted text keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub by_id: BTreeMap<String, String>,
    /// Number of lines whose id had already been seen; later lines win.
    pub duplicates: usize,
}

#[derive(Deserialize)]
struct Line {
    id: String,
    prediction: String,
}

/// Parses JSONL text of `{"id": ..., "prediction": ...}` objects. Blank
/// lines are skipped.
pub fn parse_predictions(text: &str) -> Result<Predictions> {
    let mut out = Predictions::default();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(line).map_err(|e| Error::parse(format!("line {}", n + 1), e.to_string()))?;
        if out.by_id.insert(parsed.id, parsed.prediction).is_some() {
            out.duplicates += 1;
        }
    }
    if out.duplicates > 0 {
        log::warn!("{} duplicate prediction ids; later lines kept", out.duplicates);
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Predictions> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(parse_predictions("").unwrap().by_id.len(), 0);
        let two = "{\"id\": \"a\", \"prediction\": \"永和\"}\n{\"id\": \"b\", \"prediction\": \"\"}\n";
        assert_eq!(parse_predictions(two).unwrap().by_id.len(), 2);
        let dup = "{\"id\": \"a\", \"prediction\": \"x\"}\n{\"id\": \"a\", \"prediction\": \"y\"}";
        let p = parse_predictions(dup).unwrap();
        assert_eq!(p.by_id.len(), 1);
        assert_eq!(p.duplicates, 1);
        assert_eq!(p.by_id["a"], "y");
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = "{\"id\": \"a\", \"prediction\": \"x\"}\n\n{\"id\": 3}\n";
        let err = parse_predictions(text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }
}
