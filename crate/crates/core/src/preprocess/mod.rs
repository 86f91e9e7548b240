//! From character boxes to the model's column sequence and back.

mod cluster;
mod patch;
mod slicing;

pub use cluster::{cluster_columns, ClusterParams};
pub use patch::{crop_pad_resize, Patch};
pub use slicing::{slice_fragmentation, FragmentationReport, SliceGrid};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{check_permutation, BBox, Column, PageSample};

/// Maximum number of columns the order model accepts.
pub const MAX_SEQ: usize = 50;

/// Column boxes padded to a fixed length with `[0, 0, 0, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSeq {
    pub rows: Vec<[f64; 4]>,
    pub valid_len: usize,
}

impl NormalizedSeq {
    /// `true` for real rows, `false` for padding.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.rows.len()).map(|i| i < self.valid_len).collect()
    }
}

/// Shifts by the minimum corner over all boxes and scales by page size.
pub fn normalize_boxes(boxes: &[BBox], width: f64, height: f64) -> Result<Vec<[f64; 4]>> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::invalid(format!("page size {width}x{height} must be positive")));
    }
    let xmin = boxes.iter().map(|b| b.x1).fold(f64::INFINITY, f64::min);
    let ymin = boxes.iter().map(|b| b.y1).fold(f64::INFINITY, f64::min);
    Ok(boxes
        .iter()
        .map(|b| {
            [
                (b.x1 - xmin) / width,
                (b.y1 - ymin) / height,
                (b.x2 - xmin) / width,
                (b.y2 - ymin) / height,
            ]
        })
        .collect())
}

/// Canonical order of boxes: x-center descending, then y-top ascending, then
/// x1 ascending. Remaining ties fall to y2 and x2 so equal keys only occur
/// for identical rows. Returns the indices in canonical order.
pub fn presort(rows: &[[f64; 4]]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&rows[a], &rows[b]);
        let (ca, cb) = (ra[0] + ra[2], rb[0] + rb[2]);
        cb.total_cmp(&ca)
            .then(ra[1].total_cmp(&rb[1]))
            .then(ra[0].total_cmp(&rb[0]))
            .then(ra[3].total_cmp(&rb[3]))
            .then(ra[2].total_cmp(&rb[2]))
    });
    idx
}

pub fn pad_to_n(seq: &[[f64; 4]], n: usize) -> Result<NormalizedSeq> {
    if seq.len() > n {
        return Err(Error::Capacity(format!(
            "{} columns exceed the limit of {n}",
            seq.len()
        )));
    }
    let mut rows = seq.to_vec();
    rows.resize(n, [0.0; 4]);
    Ok(NormalizedSeq {
        rows,
        valid_len: seq.len(),
    })
}

/// Concatenates columns in `column_order` (a reading sequence of column
/// indices), each column top to bottom. Returns box indices.
pub fn reconstruct_char_order(columns: &[Column], column_order: &[usize]) -> Result<Vec<usize>> {
    check_permutation(column_order, columns.len())?;
    Ok(column_order
        .iter()
        .flat_map(|&c| columns[c].member_indices.iter().copied())
        .collect())
}

/// A page reduced to presorted columns and the padded model input.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPage {
    /// Columns in canonical (presorted) order; row `i` of `seq` is column `i`.
    pub columns: Vec<Column>,
    pub seq: NormalizedSeq,
}

pub fn prepare_page(page: &PageSample, params: &ClusterParams) -> Result<PreparedPage> {
    if page.boxes.is_empty() {
        return Err(Error::invalid(format!("page {} has no boxes", page.id)));
    }
    let columns = cluster_columns(&page.boxes, params);
    if columns.len() > MAX_SEQ {
        return Err(Error::Capacity(format!(
            "page {} has {} columns, the limit is {MAX_SEQ}",
            page.id,
            columns.len()
        )));
    }
    let extents: Vec<BBox> = columns.iter().map(|c| c.extent).collect();
    let norm = normalize_boxes(&extents, page.width as f64, page.height as f64)?;
    let order = presort(&norm);
    let sorted: Vec<[f64; 4]> = order.iter().map(|&i| norm[i]).collect();
    let mut slots: Vec<Option<Column>> = columns.into_iter().map(Some).collect();
    let columns = order.iter().map(|&i| slots[i].take().expect("permutation")).collect();
    Ok(PreparedPage {
        columns,
        seq: pad_to_n(&sorted, MAX_SEQ)?,
    })
}

/// Ground-truth rank of each column: columns ordered by the earliest reading
/// position among their members. `None` without a page reading order.
pub fn column_ranks(page: &PageSample, columns: &[Column]) -> Option<Vec<usize>> {
    let order = page.reading_order.as_ref()?;
    let pos = crate::types::invert_permutation(order);
    let first: Vec<usize> = columns
        .iter()
        .map(|c| c.member_indices.iter().map(|&i| pos[i]).min().unwrap_or(usize::MAX))
        .collect();
    let mut seq: Vec<usize> = (0..columns.len()).collect();
    seq.sort_by_key(|&c| (first[c], c));
    Some(crate::types::invert_permutation(&seq))
}
