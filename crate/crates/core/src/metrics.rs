//! Recognition and ordering metrics: character precision/recall/F1,
//! normalized edit distance, IoU, ROUGE-L and permutation accuracy.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{check_permutation, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

/// Size of the multiset intersection of two sequences.
pub fn multiset_matches<T: Eq + Hash>(pred: &[T], gt: &[T]) -> usize {
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for t in gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut matches = 0;
    for t in pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                matches += 1;
            }
        }
    }
    matches
}

/// Character precision/recall/F1 over multisets of characters.
///
/// Both sequences empty scores a perfect 1.
pub fn char_prf(pred: &str, gt: &str) -> Prf {
    let p: Vec<char> = pred.chars().collect();
    let g: Vec<char> = gt.chars().collect();
    prf_tokens(&p, &g)
}

pub fn prf_tokens<T: Eq + Hash>(pred: &[T], gt: &[T]) -> Prf {
    if pred.is_empty() && gt.is_empty() {
        return Prf::from_pr(1.0, 1.0);
    }
    let m = multiset_matches(pred, gt) as f64;
    let precision = if pred.is_empty() { 0.0 } else { m / pred.len() as f64 };
    let recall = if gt.is_empty() { 0.0 } else { m / gt.len() as f64 };
    Prf::from_pr(precision, recall)
}

/// Levenshtein distance with unit costs, two-row dynamic program.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized edit distance: Levenshtein over the longer length.
pub fn ned(pred: &str, gt: &str) -> f64 {
    let p: Vec<char> = pred.chars().collect();
    let g: Vec<char> = gt.chars().collect();
    ned_tokens(&p, &g)
}

pub fn ned_tokens<T: PartialEq>(pred: &[T], gt: &[T]) -> f64 {
    let denom = pred.len().max(gt.len());
    if denom == 0 {
        return 0.0;
    }
    levenshtein(pred, gt) as f64 / denom as f64
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ca in a {
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure (balanced) from the longest common subsequence.
pub fn rouge_l<T: PartialEq>(pred: &[T], gt: &[T]) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let lcs = lcs_len(pred, gt);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / pred.len() as f64;
    let r = lcs as f64 / gt.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderAccuracy {
    /// 1 when the permutations are identical, else 0.
    pub exact: u8,
    /// Fraction of positions that agree.
    pub elementwise: f64,
}

pub fn order_accuracy(pred: &[usize], gt: &[usize]) -> Result<OrderAccuracy> {
    if pred.len() != gt.len() {
        return Err(Error::dim(format!(
            "prediction has {} entries, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    check_permutation(pred, pred.len())?;
    check_permutation(gt, gt.len())?;
    if gt.is_empty() {
        return Ok(OrderAccuracy {
            exact: 1,
            elementwise: 1.0,
        });
    }
    let agree = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(OrderAccuracy {
        exact: u8::from(agree == gt.len()),
        elementwise: agree as f64 / gt.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Easy,
    Medium,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub prf: Prf,
    pub ned: f64,
}

impl SampleScore {
    pub fn score(id: impl Into<String>, pred: &str, gt: &str) -> Self {
        SampleScore {
            id: id.into(),
            prf: char_prf(pred, gt),
            ned: ned(pred, gt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub ned: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<SampleScore>,
    pub aggregates: Aggregates,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<Tier>,
}

impl EvalReport {
    /// Aligned plain-text table of the aggregates.
    pub fn to_table(&self) -> String {
        let a = &self.aggregates;
        let tier = self.tier.map_or("all".to_string(), |t| format!("{t:?}").to_lowercase());
        format!(
            "{:<8} {:>7} {:>9} {:>9} {:>9} {:>9}\n{:<8} {:>7} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
            "tier", "samples", "P", "R", "F1", "NED", tier, a.count, a.precision, a.recall, a.macro_f1, a.ned
        )
    }
}

/// Averages per-sample scores. Macro-F1 is the mean of per-sample F1.
pub fn aggregate(samples: Vec<SampleScore>, tier: Option<Tier>) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty sample set"));
    }
    let n = samples.len() as f64;
    let mean = |f: &dyn Fn(&SampleScore) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let aggregates = Aggregates {
        precision: mean(&|s| s.prf.precision),
        recall: mean(&|s| s.prf.recall),
        macro_f1: mean(&|s| s.prf.f1),
        ned: mean(&|s| s.ned),
        count: samples.len(),
    };
    Ok(EvalReport {
        per_sample: samples,
        aggregates,
        tier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn naive_lev(a: &[char], b: &[char]) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let cost = usize::from(a[0] != b[0]);
        (naive_lev(&a[1..], &b[1..]) + cost)
            .min(naive_lev(&a[1..], b) + 1)
            .min(naive_lev(a, &b[1..]) + 1)
    }

    #[test]
    fn prf_examples() {
        let p = char_prf("ab", "ab");
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = char_prf("ab", "cd");
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        let p = char_prf("aab", "ab");
        assert_abs_diff_eq!(p.precision, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(p.recall, 1.0);
        assert_abs_diff_eq!(p.f1, 0.8, epsilon = 1e-15);
        let p = char_prf("", "");
        assert_eq!(p.f1, 1.0);
        let p = char_prf("", "a");
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ned_examples() {
        assert_eq!(ned("abc", "abc"), 0.0);
        assert_abs_diff_eq!(ned("abc", "abd"), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(ned("", "ab"), 1.0);
        assert_eq!(ned("", ""), 0.0);
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0., 0., 2., 2.).unwrap();
        let b = BBox::new(1., 1., 3., 3.).unwrap();
        let c = BBox::new(5., 5., 6., 6.).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &c), 0.0);
        assert_abs_diff_eq!(iou(&a, &b), 1.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn rouge_examples() {
        let s: Vec<char> = "abcd".chars().collect();
        assert_eq!(rouge_l(&s, &s), 1.0);
        let t: Vec<char> = "acbd".chars().collect();
        assert_abs_diff_eq!(rouge_l(&s, &t), 0.75, epsilon = 1e-15);
        let u: Vec<char> = "wxyz".chars().collect();
        assert_eq!(rouge_l(&s, &u), 0.0);
        let e: Vec<char> = Vec::new();
        assert_eq!(rouge_l(&e, &e), 1.0);
    }

    #[test]
    fn order_accuracy_examples() {
        let r = order_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!((r.exact, r.elementwise), (1, 1.0));
        let r = order_accuracy(&[0, 1, 2], &[0, 2, 1]).unwrap();
        assert_eq!(r.exact, 0);
        assert_abs_diff_eq!(r.elementwise, 1.0 / 3.0, epsilon = 1e-15);
        let r = order_accuracy(&[1, 0], &[0, 1]).unwrap();
        assert_eq!((r.exact, r.elementwise), (0, 0.0));
        assert!(order_accuracy(&[0, 1], &[0]).is_err());
        assert!(order_accuracy(&[0, 0], &[0, 1]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let one = SampleScore::score("a", "ab", "ab");
        let r = aggregate(vec![one.clone()], None).unwrap();
        assert_eq!(r.aggregates.macro_f1, one.prf.f1);
        assert_eq!(r.aggregates.ned, one.ned);
        let zero = SampleScore::score("b", "xy", "ab");
        let r = aggregate(vec![one, zero], None).unwrap();
        assert_eq!(r.aggregates.macro_f1, 0.5);
        assert!(aggregate(vec![], None).is_err());
        assert!(r.to_table().contains("0.5000"));
    }

    fn small_string() -> impl Strategy<Value = String> {
        proptest::collection::vec(proptest::sample::select(vec!['a', 'b', 'c', '字', '书']), 0..30)
            .prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn ned_properties(a in small_string(), b in small_string()) {
            let d = ned(&a, &b);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, ned(&b, &a));
            prop_assert_eq!(d == 0.0, a == b);
        }

        #[test]
        fn levenshtein_matches_recursive(
            a in proptest::collection::vec(proptest::sample::select(vec!['a', 'b', 'c']), 0..8),
            b in proptest::collection::vec(proptest::sample::select(vec!['a', 'b', 'c']), 0..8),
        ) {
            prop_assert_eq!(levenshtein(&a, &b), naive_lev(&a, &b));
        }

        #[test]
        fn f1_is_one_iff_equal_multisets(a in small_string(), b in small_string()) {
            let mut sa: Vec<char> = a.chars().collect();
            let mut sb: Vec<char> = b.chars().collect();
            sa.sort();
            sb.sort();
            prop_assert_eq!(char_prf(&a, &b).f1 == 1.0, sa == sb);
        }

        #[test]
        fn rouge_properties(a in small_string(), b in small_string()) {
            let ca: Vec<char> = a.chars().collect();
            let cb: Vec<char> = b.chars().collect();
            let r = rouge_l(&ca, &cb);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(r == 1.0, ca == cb);
            // Prepending a shared token extends the LCS by exactly one.
            let mut pa = vec!['z'];
            pa.extend(&ca);
            let mut pb = vec!['z'];
            pb.extend(&cb);
            prop_assert_eq!(lcs_len(&pa, &pb), lcs_len(&ca, &cb) + 1);
        }

        #[test]
        fn iou_properties(
            x in 0.0..10.0f64, y in 0.0..10.0f64, w in 0.5..10.0f64, h in 0.5..10.0f64,
            x2 in 0.0..10.0f64, y2 in 0.0..10.0f64, w2 in 0.5..10.0f64, h2 in 0.5..10.0f64,
            shrink in 0.05..0.45f64,
        ) {
            let a = BBox { x1: x, y1: y, x2: x + w, y2: y + h };
            let b = BBox { x1: x2, y1: y2, x2: x2 + w2, y2: y2 + h2 };
            prop_assert_eq!(iou(&a, &b), iou(&b, &a));
            prop_assert_eq!(iou(&a, &a), 1.0);
            let inner = BBox {
                x1: x + shrink * w, y1: y + shrink * h,
                x2: x + w - shrink * w, y2: y + h - shrink * h,
            };
            let smaller = BBox {
                x1: x + 0.5 * shrink * w, y1: y + 0.5 * shrink * h,
                x2: x + w - 0.5 * shrink * w, y2: y + h - 0.5 * shrink * h,
            };
            prop_assert!(iou(&a, &inner) <= iou(&a, &smaller) + 1e-12);
        }
    }
}
