use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PageSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Histogram of sizes relative to page height, in bins of 0.01
    /// (key = bin index).
    pub relative_histogram: BTreeMap<u32, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub pages: usize,
    pub total_chars: usize,
    /// Characters per page → number of pages.
    pub char_count_histogram: BTreeMap<usize, usize>,
    pub layouts: BTreeMap<String, Distribution>,
    pub styles: BTreeMap<String, Distribution>,
    pub box_width: SizeSummary,
    pub box_height: SizeSummary,
}

impl DatasetStats {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "pages {}  characters {}  box height px min/mean/max {:.1}/{:.1}/{:.1}\n",
            self.pages, self.total_chars, self.box_height.min, self.box_height.mean, self.box_height.max
        );
        out.push_str(&format!("{:<16} {:>7} {:>8}\n", "layout", "pages", "share"));
        for (name, d) in &self.layouts {
            out.push_str(&format!("{:<16} {:>7} {:>7.1}%\n", name, d.count, d.fraction * 100.0));
        }
        out.push_str(&format!("{:<16} {:>7} {:>8}\n", "style", "pages", "share"));
        for (name, d) in &self.styles {
            out.push_str(&format!("{:<16} {:>7} {:>7.1}%\n", name, d.count, d.fraction * 100.0));
        }
        out
    }
}

fn distribution(counts: BTreeMap<String, usize>, total: usize) -> BTreeMap<String, Distribution> {
    counts
        .into_iter()
        .map(|(k, count)| {
            (
                k,
                Distribution {
                    count,
                    fraction: count as f64 / total as f64,
                },
            )
        })
        .collect()
}

fn summarize(values: &[(f64, f64)]) -> SizeSummary {
    let mut hist = BTreeMap::new();
    let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &(v, page_h) in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
        *hist.entry(((v / page_h) * 100.0).floor() as u32).or_default() += 1;
    }
    let n = values.len().max(1) as f64;
    if values.is_empty() {
        min = 0.0;
        max = 0.0;
    }
    SizeSummary {
        min,
        mean: sum / n,
        max,
        relative_histogram: hist,
    }
}

pub fn dataset_stats(pages: &[PageSample]) -> Result<DatasetStats> {
    if pages.is_empty() {
        return Err(Error::invalid("no pages to summarize"));
    }
    let mut chars = BTreeMap::new();
    let mut layouts = BTreeMap::new();
    let mut styles = BTreeMap::new();
    let mut widths = Vec::new();
    let mut heights = Vec::new();
    for p in pages {
        *chars.entry(p.boxes.len()).or_default() += 1;
        *layouts.entry(p.layout.to_string()).or_default() += 1;
        let style = p.style.as_ref().map_or("unspecified".to_string(), |s| s.to_string());
        *styles.entry(style).or_default() += 1;
        for b in &p.boxes {
            widths.push((b.bbox.width(), p.height as f64));
            heights.push((b.bbox.height(), p.height as f64));
        }
    }
    Ok(DatasetStats {
        pages: pages.len(),
        total_chars: widths.len(),
        char_count_histogram: chars,
        layouts: distribution(layouts, pages.len()),
        styles: distribution(styles, pages.len()),
        box_width: summarize(&widths),
        box_height: summarize(&heights),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BBox, CharBox, Layout};

    fn page(layout: Layout, n: usize) -> PageSample {
        PageSample {
            id: String::new(),
            width: 100,
            height: 100,
            boxes: (0..n)
                .map(|i| {
                    let y = i as f64 * 10.0;
                    CharBox::new(BBox::new(0., y, 8., y + 8.).unwrap())
                })
                .collect(),
            reading_order: None,
            layout,
            style: None,
            author: None,
            raster: None,
        }
    }

    #[test]
    fn examples() {
        let s = dataset_stats(&[page(Layout::Banner, 6)]).unwrap();
        assert_eq!(s.char_count_histogram, BTreeMap::from([(6, 1)]));
        assert_eq!(s.box_height.relative_histogram, BTreeMap::from([(8, 6)]));

        let s = dataset_stats(&[page(Layout::Couplet, 2), page(Layout::Banner, 3)]).unwrap();
        assert_eq!(s.layouts["couplet"].fraction, 0.5);
        assert_eq!(s.layouts["banner"].fraction, 0.5);
        assert_eq!(s.total_chars, 5);

        assert!(dataset_stats(&[]).is_err());
    }
}
