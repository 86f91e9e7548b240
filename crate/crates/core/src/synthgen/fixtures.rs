use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::SliceGrid;
use crate::types::{BBox, CharBox, Layout, PageSample};

/// How characters relate to slice boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlicePolicy {
    /// Several characters per slice, none cut.
    Multi,
    /// One character per slice, none cut.
    Single,
    /// Every character straddles one horizontal boundary.
    Intersect,
    /// Every character is centered on a four-slice corner.
    Cross,
}

impl SlicePolicy {
    pub const ALL: [SlicePolicy; 4] = [
        SlicePolicy::Multi,
        SlicePolicy::Single,
        SlicePolicy::Intersect,
        SlicePolicy::Cross,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlicePolicy::Multi => "multi",
            SlicePolicy::Single => "single",
            SlicePolicy::Intersect => "intersect",
            SlicePolicy::Cross => "cross",
        }
    }
}

impl std::str::FromStr for SlicePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SlicePolicy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown slicing policy {s:?}")))
    }
}

const CELL: f64 = 100.0;
const PER_MULTI: usize = 3;

/// A single column of `n_chars` glyphs with a slice grid arranged per
/// `policy`. Glyph sizes vary in `[0.5, 0.7]` cells.
pub fn gen_slicing_fixture(policy: SlicePolicy, n_chars: usize, rng: &mut impl Rng) -> Result<(PageSample, SliceGrid)> {
    if n_chars == 0 {
        return Err(Error::invalid("a slicing fixture needs at least one character"));
    }
    // Glyph centers and grid lines, in cells.
    let (centers, xs, ys): (Vec<(f64, f64)>, Vec<f64>, Vec<f64>) = match policy {
        SlicePolicy::Single => (
            (0..n_chars).map(|i| (0.5, i as f64 + 0.5)).collect(),
            vec![0.0, 1.0],
            (0..=n_chars).map(|i| i as f64).collect(),
        ),
        SlicePolicy::Multi => {
            let slices = n_chars.div_ceil(PER_MULTI);
            let sub = 1.0 / PER_MULTI as f64;
            (
                (0..n_chars).map(|i| (0.5, (i as f64 + 0.5) * sub)).collect(),
                vec![0.0, 1.0],
                (0..=slices).map(|i| i as f64).collect(),
            )
        }
        SlicePolicy::Intersect => (
            (0..n_chars).map(|i| (0.5, i as f64 + 1.0)).collect(),
            vec![0.0, 1.0],
            (0..=n_chars + 1).map(|i| i as f64).collect(),
        ),
        SlicePolicy::Cross => (
            (0..n_chars).map(|i| (1.0, i as f64 + 1.0)).collect(),
            vec![0.0, 1.0, 2.0],
            (0..=n_chars + 1).map(|i| i as f64).collect(),
        ),
    };
    let sub = if policy == SlicePolicy::Multi {
        1.0 / PER_MULTI as f64
    } else {
        1.0
    };
    let width = xs.last().unwrap() * CELL;
    let height = ys.last().unwrap() * CELL;
    let boxes = centers
        .iter()
        .enumerate()
        .map(|(i, &(cx, cy))| {
            let half = rng.gen_range(0.25..=0.35) * sub * CELL;
            let (cx, cy) = (cx * CELL, cy * CELL);
            Ok(CharBox::new(BBox::new(cx - half, cy - half, cx + half, cy + half)?).with_grid(0, i as u32))
        })
        .collect::<Result<Vec<_>>>()?;
    let page = PageSample {
        id: format!("slice-{}-{n_chars}", policy.as_str()),
        width: width as u32,
        height: height as u32,
        reading_order: Some((0..n_chars).collect()),
        boxes,
        layout: Layout::HangingScroll,
        style: None,
        author: None,
        raster: None,
    };
    page.validate()?;
    Ok((
        page,
        SliceGrid {
            xs: xs.iter().map(|x| x * CELL).collect(),
            ys: ys.iter().map(|y| y * CELL).collect(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::slice_fragmentation;
    use rand::SeedableRng;

    fn frags(policy: SlicePolicy, n: usize) -> (Vec<usize>, SliceGrid) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (page, grid) = gen_slicing_fixture(policy, n, &mut rng).unwrap();
        let boxes: Vec<BBox> = page.boxes.iter().map(|b| b.bbox).collect();
        (slice_fragmentation(&boxes, &grid).unwrap().fragments, grid)
    }

    #[test]
    fn single_policy() {
        let (f, grid) = frags(SlicePolicy::Single, 6);
        assert_eq!(grid.cell_count(), 6);
        assert_eq!(f, vec![1; 6]);
    }

    #[test]
    fn multi_policy() {
        let (f, grid) = frags(SlicePolicy::Multi, 7);
        assert_eq!(grid.cell_count(), 3);
        assert_eq!(f, vec![1; 7]);
    }

    #[test]
    fn intersect_policy() {
        assert_eq!(frags(SlicePolicy::Intersect, 6).0, vec![2; 6]);
    }

    #[test]
    fn cross_policy() {
        assert_eq!(frags(SlicePolicy::Cross, 1).0, vec![4]);
        assert_eq!(frags(SlicePolicy::Cross, 5).0, vec![4; 5]);
    }

    #[test]
    fn zero_chars_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(gen_slicing_fixture(SlicePolicy::Single, 0, &mut rng).is_err());
        assert_eq!("cross".parse::<SlicePolicy>().unwrap(), SlicePolicy::Cross);
    }
}
