//! Synthetic page layouts with ground-truth reading order.
//!
//! Pages are built in an abstract frame measured in base glyph sizes, then
//! scaled and placed on the page. Each layout appends its columns in reading
//! order, so the order is known by construction.

mod fixtures;

pub use fixtures::{gen_slicing_fixture, SlicePolicy};

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::ingest::{write_dataset, DatasetManifest, Split};
use crate::types::{BBox, CharBox, Layout, PageSample, Style};

/// Vertical distance between glyph centers in a column, in glyph sizes.
const ROW_PITCH: f64 = 1.7;
/// Horizontal distance between column centers.
const COL_PITCH: f64 = 1.8;
/// Signature glyphs relative to content glyphs.
const SIGNATURE_SCALE: f64 = 0.5;
/// Gap from a content column to a signature column beside it.
const SIGNATURE_OFFSET: f64 = 1.6;
/// Center distance between the last content glyph and a signature placed
/// below it in the same column.
const SIGNATURE_DROP: f64 = 5.0;
/// Center distance between the two stacked blocks of a squared sheet.
const BLOCK_DROP: f64 = 6.0;
/// Extra space between the two leaves of an album.
const ALBUM_GUTTER: f64 = 3.0;
/// Jitter is clamped to this many standard deviations.
const JITTER_CLAMP: f64 = 2.5;
/// Fraction of the page the layout may occupy along each axis.
const FILL: f64 = 0.92;

/// First codepoint of the label alphabet (CJK Unified Ideographs).
const LABEL_BASE: u32 = 0x4E00;
const LABEL_COUNT: u32 = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    /// Relative layout frequencies.
    pub layout_mix: BTreeMap<Layout, f64>,
    /// Content columns per page (inclusive). Hand scrolls use twice this.
    pub columns: [usize; 2],
    /// Characters per content column (inclusive); banner length.
    pub chars_per_column: [usize; 2],
    /// Base glyph size as a fraction of the shorter page side.
    pub char_size: [f64; 2],
    /// Per-glyph size variation, ± this fraction of the base size.
    pub size_variation: f64,
    /// Standard deviation of box-center noise, as a fraction of glyph size.
    pub jitter: f64,
    /// Probability that a scroll carries a signature.
    pub signature_prob: f64,
    pub page_size: [u32; 2],
    pub count: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            layout_mix: Layout::KNOWN.iter().map(|l| (l.clone(), 1.0)).collect(),
            columns: [2, 8],
            chars_per_column: [3, 10],
            char_size: [0.02, 0.05],
            size_variation: 0.3,
            jitter: 0.08,
            signature_prob: 0.5,
            page_size: [1024, 1024],
            count: 5000,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.columns[0] < 1 || self.columns[0] > self.columns[1] {
            return bad(format!("columns range {:?} is empty", self.columns));
        }
        if self.chars_per_column[0] < 1 || self.chars_per_column[0] > self.chars_per_column[1] {
            return bad(format!("chars_per_column range {:?} is empty", self.chars_per_column));
        }
        let [lo, hi] = self.char_size;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad(format!("char_size range {:?} is invalid", self.char_size));
        }
        if !(0.0..0.5).contains(&self.size_variation) {
            return bad(format!("size_variation {} outside [0, 0.5)", self.size_variation));
        }
        if !(self.jitter >= 0.0 && self.jitter <= 0.15) {
            return bad(format!("jitter {} outside [0, 0.15]", self.jitter));
        }
        if !(0.0..=1.0).contains(&self.signature_prob) {
            return bad(format!("signature_prob {} outside [0, 1]", self.signature_prob));
        }
        if self.page_size.contains(&0) {
            return bad("page_size must be positive".into());
        }
        if self.layout_mix.values().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("layout weights must be non-negative".into());
        }
        if self.layout_mix.values().sum::<f64>() <= 0.0 {
            return bad("layout weights must have a positive sum".into());
        }
        if let Some(l) = self.layout_mix.keys().find(|l| matches!(l, Layout::Other(_))) {
            return bad(format!("unsupported layout {l}"));
        }
        Ok(())
    }

    fn pick_layout(&self, rng: &mut impl Rng) -> Layout {
        let total: f64 = self.layout_mix.values().sum();
        let mut t = rng.gen_range(0.0..total);
        for (l, w) in &self.layout_mix {
            if t < *w {
                return l.clone();
            }
            t -= w;
        }
        self.layout_mix.keys().last().cloned().expect("non-empty mix")
    }
}

/// Per-page random stream: ChaCha8 keyed by the seed, stream = page index.
pub fn page_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// One glyph in layout units: center and size relative to the base size.
#[derive(Debug, Clone, Copy)]
struct Glyph {
    x: f64,
    y: f64,
    size: f64,
}

/// Columns in reading order; each column top to bottom.
type Plan = Vec<Vec<Glyph>>;

fn column(rng: &mut impl Rng, var: f64, x: f64, y0: f64, n: usize, scale: f64, pitch: f64) -> Vec<Glyph> {
    (0..n)
        .map(|j| Glyph {
            x,
            y: y0 + j as f64 * pitch,
            size: scale * rng.gen_range(1.0 - var..=1.0 + var),
        })
        .collect()
}

fn signature(rng: &mut impl Rng, var: f64, x: f64, y0: f64, content_chars: usize) -> Vec<Glyph> {
    let n = rng.gen_range(2..=4).min((content_chars / 2).max(1));
    column(rng, var, x, y0, n, SIGNATURE_SCALE, SIGNATURE_SCALE * ROW_PITCH)
}

fn signature_span(n: usize) -> f64 {
    n.saturating_sub(1) as f64 * SIGNATURE_SCALE * ROW_PITCH
}

fn range(rng: &mut impl Rng, r: [usize; 2]) -> usize {
    rng.gen_range(r[0]..=r[1])
}

fn plan_layout(layout: &Layout, cfg: &GenConfig, rng: &mut impl Rng) -> Plan {
    let var = cfg.size_variation;
    let mut plan: Plan = Vec::new();
    match layout {
        Layout::HangingScroll | Layout::MiddleScroll | Layout::HandScroll => {
            let cols = match layout {
                Layout::HandScroll => range(rng, [2 * cfg.columns[0], 2 * cfg.columns[1]]),
                _ => range(rng, cfg.columns),
            };
            let rows = range(rng, cfg.chars_per_column);
            for k in 0..cols {
                let n = if k + 1 == cols { rng.gen_range(1..=rows) } else { rows };
                plan.push(column(rng, var, -(k as f64) * COL_PITCH, 0.0, n, 1.0, ROW_PITCH));
            }
            if rng.gen_bool(cfg.signature_prob) {
                let chars: usize = plan.iter().map(Vec::len).sum();
                let last = plan.last().expect("at least one column");
                let (lx, ly) = (last[0].x, last.last().unwrap().y);
                if last.len() < rows && rng.gen_bool(0.5) {
                    plan.push(signature(rng, var, lx, ly + SIGNATURE_DROP, chars));
                } else {
                    let sig = signature(rng, var, lx - SIGNATURE_OFFSET, 0.0, chars);
                    let room = ((rows - 1) as f64 * ROW_PITCH - signature_span(sig.len())).max(0.0);
                    let dy = rng.gen_range(0.0..=room);
                    plan.push(sig.into_iter().map(|g| Glyph { y: g.y + dy, ..g }).collect());
                }
            }
        }
        Layout::Couplet => {
            let rows = range(rng, cfg.chars_per_column);
            let gap = rng.gen_range(4.0..=10.0);
            plan.push(column(rng, var, 0.0, 0.0, rows, 1.0, ROW_PITCH));
            plan.push(column(rng, var, -gap, 0.0, rows, 1.0, ROW_PITCH));
            let x = if rng.gen_bool(0.5) {
                -gap - SIGNATURE_OFFSET
            } else {
                SIGNATURE_OFFSET
            };
            let sig = signature(rng, var, x, 0.0, 2 * rows);
            let room = ((rows - 1) as f64 * ROW_PITCH - signature_span(sig.len())).max(0.0);
            let dy = rng.gen_range(0.0..=room);
            plan.push(sig.into_iter().map(|g| Glyph { y: g.y + dy, ..g }).collect());
        }
        Layout::Banner => {
            let n = range(rng, cfg.chars_per_column);
            let dir = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            for k in 0..n {
                plan.push(column(rng, var, dir * k as f64 * COL_PITCH, 0.0, 1, 1.0, ROW_PITCH));
            }
            // The signature sits at the reading end, which tells the direction.
            let end = dir * ((n - 1) as f64 * COL_PITCH + SIGNATURE_OFFSET);
            plan.push(signature(rng, var, end, -0.25, n.max(4)));
        }
        Layout::SquaredSheet => {
            let cols = range(rng, cfg.columns);
            let top = range(rng, cfg.chars_per_column);
            let bottom = range(rng, cfg.chars_per_column);
            let y0 = (top - 1) as f64 * ROW_PITCH + BLOCK_DROP;
            for (rows, y) in [(top, 0.0), (bottom, y0)] {
                for k in 0..cols {
                    plan.push(column(rng, var, -(k as f64) * COL_PITCH, y, rows, 1.0, ROW_PITCH));
                }
            }
        }
        Layout::Album => {
            let right = range(rng, cfg.columns);
            let left = range(rng, cfg.columns);
            let rows = range(rng, cfg.chars_per_column);
            for k in 0..right + left {
                let extra = if k >= right { ALBUM_GUTTER } else { 0.0 };
                plan.push(column(
                    rng,
                    var,
                    -(k as f64) * COL_PITCH - extra,
                    0.0,
                    rows,
                    1.0,
                    ROW_PITCH,
                ));
            }
        }
        Layout::Other(_) => unreachable!("validated"),
    }
    plan
}

/// Generates one page; `rng` should be the page's own stream.
pub fn gen_page(layout: &Layout, cfg: &GenConfig, id: &str, rng: &mut impl Rng) -> Result<PageSample> {
    if matches!(layout, Layout::Other(_)) {
        return Err(Error::invalid(format!("unsupported layout {layout}")));
    }
    let plan = plan_layout(layout, cfg, rng);
    let glyphs = plan.iter().flatten();
    let max_size = glyphs.clone().map(|g| g.size).fold(0.0, f64::max);
    let margin = max_size / 2.0 + JITTER_CLAMP * cfg.jitter * max_size;
    let (minx, maxx) = glyphs
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), g| (a.min(g.x), b.max(g.x)));
    let (miny, maxy) = glyphs
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), g| (a.min(g.y), b.max(g.y)));
    let (span_x, span_y) = (maxx - minx + 2.0 * margin, maxy - miny + 2.0 * margin);

    let (w, h) = (cfg.page_size[0] as f64, cfg.page_size[1] as f64);
    let short = w.min(h);
    let fit = (FILL * w / span_x).min(FILL * h / span_y);
    let (lo, hi) = (cfg.char_size[0] * short, (cfg.char_size[1] * short).min(fit));
    if hi < lo {
        return Err(Error::invalid(format!(
            "{layout} page with {} columns cannot fit glyphs of at least {lo:.1}px on a {w}x{h} page",
            plan.len()
        )));
    }
    let s = rng.gen_range(lo..=hi);
    let off_x = rng.gen_range(0.0..=(w - span_x * s)) + (margin - minx) * s;
    let off_y = rng.gen_range(0.0..=(h - span_y * s)) + (margin - miny) * s;

    let mut placed = Vec::new();
    for (c, col) in plan.iter().enumerate() {
        for (r, g) in col.iter().enumerate() {
            let size = g.size * s;
            let sigma = cfg.jitter * size;
            let mut jit = || {
                if sigma == 0.0 {
                    0.0
                } else {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    (z * sigma).clamp(-JITTER_CLAMP * sigma, JITTER_CLAMP * sigma)
                }
            };
            let (cx, cy) = (off_x + g.x * s + jit(), off_y + g.y * s + jit());
            let half = size / 2.0;
            let bbox = BBox::new(
                (cx - half).max(0.0),
                (cy - half).max(0.0),
                (cx + half).min(w),
                (cy + half).min(h),
            )?;
            let label = char::from_u32(LABEL_BASE + rng.gen_range(0..LABEL_COUNT)).expect("CJK range");
            placed.push(CharBox::new(bbox).with_label(label).with_grid(c as u32, r as u32));
        }
    }

    // Store boxes in random order; reading order maps back.
    let mut slots: Vec<usize> = (0..placed.len()).collect();
    slots.shuffle(rng);
    let mut boxes = vec![None; placed.len()];
    let mut reading_order = vec![0; placed.len()];
    for (k, b) in placed.into_iter().enumerate() {
        boxes[slots[k]] = Some(b);
        reading_order[k] = slots[k];
    }
    let style = Style::KNOWN[rng.gen_range(0..Style::KNOWN.len())].clone();
    let page = PageSample {
        id: id.to_string(),
        width: cfg.page_size[0],
        height: cfg.page_size[1],
        boxes: boxes.into_iter().map(|b| b.expect("filled")).collect(),
        reading_order: Some(reading_order),
        layout: layout.clone(),
        style: Some(style),
        author: None,
        raster: None,
    };
    page.validate()?;
    Ok(page)
}

pub fn page_id(index: usize) -> String {
    format!("syn-{index:06}")
}

/// Generates page `index` of the dataset described by `cfg`.
pub fn gen_indexed_page(cfg: &GenConfig, index: usize) -> Result<PageSample> {
    let mut rng = page_rng(cfg.seed, index);
    let layout = cfg.pick_layout(&mut rng);
    gen_page(&layout, cfg, &page_id(index), &mut rng)
}

/// Generates `cfg.count` pages in memory, in index order.
pub fn gen_pages(cfg: &GenConfig) -> Result<Vec<PageSample>> {
    cfg.validate()?;
    (0..cfg.count)
        .into_par_iter()
        .map(|i| gen_indexed_page(cfg, i))
        .collect()
}

/// Manifest `generator` record: enough to regenerate the dataset elsewhere.
pub fn generator_record(cfg: &GenConfig) -> serde_json::Value {
    json!({
        "name": "calli-synthgen",
        "version": env!("CARGO_PKG_VERSION"),
        "prng": "ChaCha8 (rand_chacha), seed_from_u64(seed), set_stream(page index)",
        "seed": cfg.seed,
        "config": cfg,
    })
}

/// Writes `cfg.count` pages plus `manifest.json` under `dir`.
pub fn gen_dataset(cfg: &GenConfig, dir: &Path) -> Result<DatasetManifest> {
    let pages = gen_pages(cfg)?;
    let entries: Vec<_> = pages
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let cols = p
                .boxes
                .iter()
                .filter_map(|b| b.column_index)
                .max()
                .map(|c| c as usize + 1);
            (p, Split::for_index(i), cols)
        })
        .collect();
    write_dataset(dir, Some(generator_record(cfg)), &entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::derive_reading_order;
    use crate::metrics::iou;
    use crate::types::check_permutation;

    fn still(cfg: GenConfig) -> GenConfig {
        GenConfig {
            jitter: 0.0,
            size_variation: 0.0,
            ..cfg
        }
    }

    #[test]
    fn hanging_scroll_two_by_three() {
        let cfg = still(GenConfig {
            columns: [2, 2],
            chars_per_column: [3, 3],
            signature_prob: 0.0,
            ..Default::default()
        });
        // The last column length is drawn; find a seed giving a full 2×3.
        let page = (0..)
            .map(|i| gen_page(&Layout::HangingScroll, &cfg, "p", &mut page_rng(1, i)).unwrap())
            .find(|p| p.boxes.len() == 6)
            .unwrap();
        let order = page.reading_order.clone().unwrap();
        let centers: Vec<(f64, f64)> = order.iter().map(|&i| page.boxes[i].bbox.center()).collect();
        assert!(centers[0].0 > centers[3].0);
        for col in [&centers[0..3], &centers[3..6]] {
            assert!(col
                .windows(2)
                .all(|w| w[0].1 < w[1].1 && (w[0].0 - w[1].0).abs() < 1e-9));
        }
    }

    #[test]
    fn couplet_signature_last() {
        let cfg = GenConfig::default();
        for i in 0..20 {
            let page = gen_page(&Layout::Couplet, &cfg, "c", &mut page_rng(3, i)).unwrap();
            let order = page.reading_order.as_ref().unwrap();
            let col = |k: usize| page.boxes[order[k]].column_index.unwrap();
            let cols: Vec<u32> = (0..order.len()).map(col).collect();
            assert!(cols.windows(2).all(|w| w[0] <= w[1]));
            let x = |c: u32| {
                let b = page.boxes.iter().find(|b| b.column_index == Some(c)).unwrap();
                (b.bbox.center().0, b.bbox.height())
            };
            assert!(x(0).0 > x(1).0);
            assert_eq!(*cols.last().unwrap(), 2);
            assert!(x(2).1 < x(0).1.min(x(1).1));
        }
    }

    #[test]
    fn pages_are_valid_and_consistent() {
        let cfg = GenConfig {
            count: 140,
            seed: 9,
            ..Default::default()
        };
        for page in gen_pages(&cfg).unwrap() {
            let order = page.reading_order.clone().unwrap();
            check_permutation(&order, page.boxes.len()).unwrap();
            assert_eq!(derive_reading_order(&page).unwrap(), order);
            for i in 0..page.boxes.len() {
                for j in i + 1..page.boxes.len() {
                    assert!(iou(&page.boxes[i].bbox, &page.boxes[j].bbox) <= 0.05, "{}", page.id);
                }
            }
            let pos = crate::types::invert_permutation(&order);
            for a in &page.boxes {
                for b in &page.boxes {
                    if a.column_index == b.column_index && a.row_index < b.row_index {
                        assert!(a.bbox.center().1 < b.bbox.center().1);
                    }
                }
            }
            assert_eq!(pos.len(), page.boxes.len());
        }
    }

    #[test]
    fn deterministic_and_order_independent() {
        let cfg = GenConfig {
            count: 12,
            seed: 5,
            ..Default::default()
        };
        let a = gen_pages(&cfg).unwrap();
        let b: Vec<_> = (0..12)
            .rev()
            .map(|i| gen_indexed_page(&cfg, i).unwrap())
            .rev()
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_and_invalid_configs() {
        let cramped = GenConfig {
            page_size: [64, 64],
            char_size: [0.2, 0.3],
            columns: [8, 8],
            ..Default::default()
        };
        assert!(gen_page(&Layout::HandScroll, &cramped, "x", &mut page_rng(0, 0)).is_err());
        assert!(GenConfig {
            columns: [3, 2],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GenConfig {
            layout_mix: BTreeMap::new(),
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GenConfig {
            jitter: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
