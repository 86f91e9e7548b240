use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{decode_order, OrderModel};
use crate::error::Result;
use crate::nn::Scalar;
use crate::preprocess::{prepare_page, reconstruct_char_order, ClusterParams};
use crate::types::{invert_permutation, PageSample};

/// A predicted page order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageOrder {
    /// Box indices in reading order.
    pub box_order: Vec<usize>,
    /// Number of clustered columns.
    pub columns: usize,
}

/// cluster → normalize → presort → pad → score → decode → reconstruct.
pub fn predict_reading_order<T: Scalar>(
    page: &PageSample,
    model: &OrderModel<T>,
    params: &ClusterParams,
) -> Result<PageOrder> {
    let prep = prepare_page(page, params)?;
    let scores = model.score(&prep.seq)?;
    let ranks = decode_order(&scores, prep.seq.valid_len);
    let column_order = invert_permutation(&ranks);
    Ok(PageOrder {
        box_order: reconstruct_char_order(&prep.columns, &column_order)?,
        columns: prep.columns.len(),
    })
}

/// Reads columns in presort order (right to left, top first), no model.
pub fn rule_baseline(page: &PageSample, params: &ClusterParams) -> Result<PageOrder> {
    let prep = prepare_page(page, params)?;
    let identity: Vec<usize> = (0..prep.columns.len()).collect();
    Ok(PageOrder {
        box_order: reconstruct_char_order(&prep.columns, &identity)?,
        columns: prep.columns.len(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayoutScore {
    pub pages: usize,
    pub exact: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderEvalReport {
    pub pages: usize,
    /// Pages whose predicted order equals the ground truth exactly.
    pub exact: usize,
    pub exact_accuracy: f64,
    /// Mean fraction of reading positions predicted correctly.
    pub position_accuracy: f64,
    pub per_layout: BTreeMap<String, LayoutScore>,
    /// Pages skipped for lacking ground truth.
    pub skipped: usize,
}

/// Scores `predict` against each page's reading order. Pages without a
/// ground-truth order are skipped; prediction errors propagate.
pub fn evaluate_order(
    pages: &[PageSample],
    mut predict: impl FnMut(&PageSample) -> Result<PageOrder>,
) -> Result<OrderEvalReport> {
    let mut report = OrderEvalReport {
        pages: 0,
        exact: 0,
        exact_accuracy: 0.0,
        position_accuracy: 0.0,
        per_layout: BTreeMap::new(),
        skipped: 0,
    };
    let mut positions = 0.0;
    for page in pages {
        let Some(truth) = &page.reading_order else {
            report.skipped += 1;
            continue;
        };
        let pred = predict(page)?;
        let hit = pred.box_order == *truth;
        let correct = pred.box_order.iter().zip(truth).filter(|(a, b)| a == b).count();
        positions += if truth.is_empty() {
            1.0
        } else {
            correct as f64 / truth.len() as f64
        };
        report.pages += 1;
        report.exact += hit as usize;
        let entry = report.per_layout.entry(page.layout.to_string()).or_default();
        entry.pages += 1;
        entry.exact += hit as usize;
    }
    if report.pages > 0 {
        report.exact_accuracy = report.exact as f64 / report.pages as f64;
        report.position_accuracy = positions / report.pages as f64;
    }
    Ok(report)
}
