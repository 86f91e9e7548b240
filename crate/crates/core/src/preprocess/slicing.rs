use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BBox;

/// Axis-aligned slice boundaries. `xs` and `ys` are strictly increasing and
/// include both page edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl SliceGrid {
    pub fn uniform(width: f64, height: f64, cols: usize, rows: usize) -> Self {
        SliceGrid {
            xs: (0..=cols).map(|i| width * i as f64 / cols as f64).collect(),
            ys: (0..=rows).map(|i| height * i as f64 / rows as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for axis in [&self.xs, &self.ys] {
            if axis.len() < 2 || axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::invalid(
                    "slice boundaries must be strictly increasing with at least one cell",
                ));
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        (self.xs.len() - 1) * (self.ys.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentationReport {
    /// Cells touched by each character, in input order.
    pub fragments: Vec<usize>,
    pub uncut: usize,
    /// Fragment count → number of characters.
    pub histogram: BTreeMap<usize, usize>,
}

impl FragmentationReport {
    pub fn uncut_rate(&self) -> f64 {
        if self.fragments.is_empty() {
            1.0
        } else {
            self.uncut as f64 / self.fragments.len() as f64
        }
    }
}

fn intervals_hit(bounds: &[f64], lo: f64, hi: f64) -> usize {
    bounds.windows(2).filter(|w| w[0].max(lo) < w[1].min(hi)).count()
}

/// Counts the grid cells each character box intersects with positive area.
pub fn slice_fragmentation(boxes: &[BBox], grid: &SliceGrid) -> Result<FragmentationReport> {
    grid.validate()?;
    let fragments: Vec<usize> = boxes
        .iter()
        .map(|b| intervals_hit(&grid.xs, b.x1, b.x2) * intervals_hit(&grid.ys, b.y1, b.y2))
        .collect();
    let mut histogram = BTreeMap::new();
    for &f in &fragments {
        *histogram.entry(f).or_insert(0) += 1;
    }
    Ok(FragmentationReport {
        uncut: fragments.iter().filter(|&&f| f == 1).count(),
        fragments,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_cells() {
        let grid = SliceGrid::uniform(100.0, 100.0, 2, 2);
        let boxes = [
            BBox::new(10.0, 10.0, 20.0, 20.0).unwrap(),
            BBox::new(40.0, 10.0, 60.0, 20.0).unwrap(),
            BBox::new(40.0, 40.0, 60.0, 60.0).unwrap(),
            // Touching a boundary is not a cut.
            BBox::new(30.0, 50.0, 50.0, 70.0).unwrap(),
        ];
        let r = slice_fragmentation(&boxes, &grid).unwrap();
        assert_eq!(r.fragments, vec![1, 2, 4, 1]);
        assert_eq!(r.uncut, 2);
        assert_eq!(r.histogram, BTreeMap::from([(1, 2), (2, 1), (4, 1)]));
    }

    #[test]
    fn bad_grid() {
        let grid = SliceGrid {
            xs: vec![0.0, 0.0],
            ys: vec![0.0, 1.0],
        };
        assert!(slice_fragmentation(&[], &grid).is_err());
    }
}
