use serde::{Deserialize, Serialize};

use crate::types::{CharBox, Column};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    /// Minimum overlap between a box's x-interval and the column's running
    /// x-extent, as a fraction of the narrower of the two.
    pub min_overlap: f64,
    /// A column is split where the vertical gap between consecutive members
    /// exceeds this multiple of the page's median box height.
    pub split_gap: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            min_overlap: 0.5,
            split_gap: 2.5,
        }
    }
}

/// Groups character boxes into vertical columns.
///
/// Boxes are swept right to left by x-center; a box joins the column whose
/// x-extent it overlaps most (latest column on ties), provided the overlap
/// is at least `min_overlap` of the narrower interval, otherwise it opens a
/// new column. Columns
/// are then split at large vertical gaps. Output columns are in sweep order,
/// segments of a split column top to bottom.
pub fn cluster_columns(boxes: &[CharBox], params: &ClusterParams) -> Vec<Column> {
    if boxes.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (boxes[a].bbox.center().0, boxes[b].bbox.center().0);
        cb.total_cmp(&ca).then(a.cmp(&b))
    });

    let mut groups: Vec<(Vec<usize>, f64, f64)> = Vec::new();
    for i in order {
        let b = &boxes[i].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (g, (_, lo, hi)) in groups.iter().enumerate() {
            let overlap = (b.x2.min(*hi) - b.x1.max(*lo)).max(0.0);
            if overlap >= params.min_overlap * b.width().min(hi - lo) && best.is_none_or(|(_, o)| overlap >= o) {
                best = Some((g, overlap));
            }
        }
        match best {
            Some((g, _)) => {
                let (members, lo, hi) = &mut groups[g];
                members.push(i);
                *lo = lo.min(b.x1);
                *hi = hi.max(b.x2);
            }
            None => groups.push((vec![i], b.x1, b.x2)),
        }
    }

    let median_h = median(boxes.iter().map(|b| b.bbox.height()).collect());
    let threshold = params.split_gap * median_h;
    let mut columns = Vec::new();
    for (mut members, _, _) in groups {
        members.sort_by(|&a, &b| {
            let (ya, yb) = (boxes[a].bbox.center().1, boxes[b].bbox.center().1);
            ya.total_cmp(&yb).then(a.cmp(&b))
        });
        let mut start = 0;
        for k in 1..=members.len() {
            let split = k == members.len() || boxes[members[k]].bbox.y1 - boxes[members[k - 1]].bbox.y2 > threshold;
            if split {
                columns.push(make_column(boxes, members[start..k].to_vec()));
                start = k;
            }
        }
    }
    columns
}

pub(crate) fn make_column(boxes: &[CharBox], member_indices: Vec<usize>) -> Column {
    let extent = member_indices
        .iter()
        .skip(1)
        .fold(boxes[member_indices[0]].bbox, |acc, &i| acc.union(&boxes[i].bbox));
    Column { member_indices, extent }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BBox;

    fn cb(cx: f64, cy: f64, s: f64) -> CharBox {
        CharBox::new(BBox::new(cx - s / 2.0, cy - s / 2.0, cx + s / 2.0, cy + s / 2.0).unwrap())
    }

    #[test]
    fn one_stack() {
        let boxes = vec![cb(0.8, 0.5, 0.1), cb(0.8, 0.1, 0.1), cb(0.8, 0.3, 0.1)];
        let cols = cluster_columns(&boxes, &ClusterParams::default());
        assert_eq!(cols.len(), 1);
        assert_eq!(cols[0].member_indices, vec![1, 2, 0]);
        let want = [0.75, 0.05, 0.85, 0.55];
        assert!(cols[0]
            .extent
            .to_array()
            .iter()
            .zip(want)
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn two_stacks() {
        let boxes = vec![
            cb(0.3, 0.1, 0.1),
            cb(0.8, 0.1, 0.1),
            cb(0.3, 0.3, 0.1),
            cb(0.8, 0.3, 0.1),
        ];
        let cols = cluster_columns(&boxes, &ClusterParams::default());
        let members: Vec<_> = cols.iter().map(|c| c.member_indices.clone()).collect();
        assert_eq!(members, vec![vec![1, 3], vec![0, 2]]);
    }

    #[test]
    fn internal_gap_splits() {
        // Edge gap between the second and third box is 4 heights.
        let s = 10.0;
        let boxes = vec![cb(100.0, 10.0, s), cb(100.0, 25.0, s), cb(100.0, 75.0, s)];
        let cols = cluster_columns(&boxes, &ClusterParams::default());
        let members: Vec<_> = cols.iter().map(|c| c.member_indices.clone()).collect();
        assert_eq!(members, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn single_and_empty() {
        assert_eq!(
            cluster_columns(&[cb(1.0, 1.0, 1.0)], &ClusterParams::default()).len(),
            1
        );
        assert!(cluster_columns(&[], &ClusterParams::default()).is_empty());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(200))]
        #[test]
        fn jitter_free_pages_give_generator_columns(seed in 0u64..1000, index in 0usize..1000) {
            use crate::synthgen::{gen_indexed_page, GenConfig};
            use std::collections::{BTreeMap, BTreeSet};
            let page = gen_indexed_page(&GenConfig { jitter: 0.0, seed, ..Default::default() }, index).unwrap();
            let mut want: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
            for (i, b) in page.boxes.iter().enumerate() {
                want.entry(b.column_index.unwrap()).or_default().insert(i);
            }
            let want: BTreeSet<BTreeSet<usize>> = want.into_values().collect();
            let got: BTreeSet<BTreeSet<usize>> = cluster_columns(&page.boxes, &ClusterParams::default())
                .into_iter()
                .map(|c| c.member_indices.into_iter().collect())
                .collect();
            proptest::prop_assert_eq!(got, want, "{} {}", page.layout, page.id);
        }
    }
}
