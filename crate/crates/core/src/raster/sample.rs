use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{invalid, Result};
use crate::seed;

/// The labelled positive pixels `P` out of a universe of `universe_size`
/// pixels; every other pixel is unlabelled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub positive_indices: Vec<usize>,
    pub universe_size: usize,
}

impl LabeledSet {
    pub fn new(positive_indices: Vec<usize>, universe_size: usize) -> Result<Self> {
        let mut seen = vec![false; universe_size];
        for &i in &positive_indices {
            if i >= universe_size {
                return Err(invalid!("positive index {i} outside universe of {universe_size}"));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(invalid!("duplicate positive index {i}"));
            }
        }
        Ok(LabeledSet { positive_indices, universe_size })
    }

    pub fn len(&self) -> usize {
        self.positive_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive_indices.is_empty()
    }

    pub fn membership(&self) -> Vec<bool> {
        let mut m = vec![false; self.universe_size];
        for &i in &self.positive_indices {
            m[i] = true;
        }
        m
    }

    /// The first `n` labels; a smaller draw from the same permutation.
    pub fn prefix(&self, n: usize) -> Result<LabeledSet> {
        if n == 0 || n > self.len() {
            return Err(invalid!("prefix of {n} from a set of {}", self.len()));
        }
        Ok(LabeledSet { positive_indices: self.positive_indices[..n].to_vec(), universe_size: self.universe_size })
    }
}

/// Draws `npos` labelled positives from `ground_truth`: the first `npos`
/// entries of a seed-determined permutation of all positive pixels, so larger
/// draws with the same seed always contain smaller ones as an ordered prefix.
pub fn sample_positive_set(ground_truth: &BinaryMask, npos: usize, seed: u64) -> Result<LabeledSet> {
    if npos == 0 {
        return Err(invalid!("npos must be at least 1"));
    }
    let mut positives = ground_truth.indices();
    if npos > positives.len() {
        return Err(invalid!("npos = {npos} exceeds the {} positive pixels available", positives.len()));
    }
    positives.shuffle(&mut seed::rng(seed));
    positives.truncate(npos);
    Ok(LabeledSet { positive_indices: positives, universe_size: ground_truth.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_with(pos: &[usize], n: usize) -> BinaryMask {
        let mut d = vec![false; n];
        for &i in pos {
            d[i] = true;
        }
        BinaryMask::new(1, n, d).unwrap()
    }

    #[test]
    fn exhaustion_returns_all_positives() {
        let m = mask_with(&[1, 4, 7, 9], 12);
        let mut s = sample_positive_set(&m, 4, 3).unwrap().positive_indices;
        s.sort();
        assert_eq!(s, vec![1, 4, 7, 9]);
    }

    #[test]
    fn too_many_or_zero_is_error() {
        let m = mask_with(&[0, 1, 2], 5);
        assert!(sample_positive_set(&m, 4, 0).is_err());
        assert!(sample_positive_set(&m, 0, 0).is_err());
    }

    #[test]
    fn nested_prefix_100_250() {
        let m = mask_with(&(0..1000).step_by(3).collect::<Vec<_>>(), 1000);
        let a = sample_positive_set(&m, 100, 42).unwrap();
        let b = sample_positive_set(&m, 250, 42).unwrap();
        assert_eq!(a.positive_indices[..], b.positive_indices[..100]);
    }

    #[test]
    fn rejects_duplicates() {
        assert!(LabeledSet::new(vec![1, 1], 4).is_err());
        assert!(LabeledSet::new(vec![4], 4).is_err());
    }

    proptest! {
        #[test]
        fn nesting_holds_for_any_seed(seed in any::<u64>(), m in 1usize..60, extra in 0usize..60) {
            let mask = mask_with(&(0..240).step_by(2).collect::<Vec<_>>(), 240);
            let small = sample_positive_set(&mask, m, seed).unwrap();
            let large = sample_positive_set(&mask, (m + extra).min(120), seed).unwrap();
            prop_assert_eq!(&small.positive_indices[..], &large.positive_indices[..m]);
        }
    }
}
