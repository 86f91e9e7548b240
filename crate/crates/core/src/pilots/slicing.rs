//! Fragmentation of characters under the four slicing policies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::preprocess::slice_fragmentation;
use crate::synthgen::{gen_slicing_fixture, SlicePolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy: SlicePolicy,
    pub chars: usize,
    pub uncut_fraction: f64,
    pub mean_fragments: f64,
    /// Fragment count → number of characters.
    pub histogram: std::collections::BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicingReport {
    pub n_chars: usize,
    pub seed: u64,
    pub policies: Vec<PolicyReport>,
}

pub fn slicing_pilot(n_chars: usize, seed: u64) -> Result<SlicingReport> {
    let policies = SlicePolicy::ALL
        .iter()
        .enumerate()
        .map(|(i, &policy)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (page, grid) = gen_slicing_fixture(policy, n_chars, &mut rng)?;
            let boxes: Vec<_> = page.boxes.iter().map(|b| b.bbox).collect();
            let r = slice_fragmentation(&boxes, &grid)?;
            Ok(PolicyReport {
                policy,
                chars: r.fragments.len(),
                uncut_fraction: r.uncut_rate(),
                mean_fragments: r.fragments.iter().sum::<usize>() as f64 / r.fragments.len() as f64,
                histogram: r.histogram,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SlicingReport {
        n_chars,
        seed,
        policies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_expectations() {
        let r = slicing_pilot(30, 7).unwrap();
        let get = |p: SlicePolicy| r.policies.iter().find(|x| x.policy == p).unwrap();
        assert_eq!(get(SlicePolicy::Single).uncut_fraction, 1.0);
        assert_eq!(get(SlicePolicy::Single).mean_fragments, 1.0);
        assert_eq!(get(SlicePolicy::Intersect).mean_fragments, 2.0);
        assert_eq!(get(SlicePolicy::Cross).mean_fragments, 4.0);
        assert!(r.policies.iter().all(|p| p.chars == 30));
        assert!(slicing_pilot(0, 1).is_err());
    }
}
