use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ChoiceProblem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub ratio: f64,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

impl DatasetSplit {
    pub fn is_test(&self, id: &str) -> bool {
        self.test_ids.contains(id)
    }
}

/// Seeded split over unique problem ids. `ratio` is the test fraction.
///
/// The ids are sorted before shuffling, so the result depends only on the id
/// set, the seed and the ratio.
pub fn split_dataset<S: AsRef<str>>(ids: &[S], seed: u64, ratio: f64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::domain(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_ref()) {
            return Err(Error::domain(format!("duplicate problem id {:?}", id.as_ref())));
        }
    }
    let mut order: Vec<&str> = ids.iter().map(AsRef::as_ref).collect();
    order.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_test = (ratio * order.len() as f64).round() as usize;
    let (test, train) = order.split_at(n_test);
    Ok(DatasetSplit {
        seed,
        ratio,
        train_ids: train.iter().map(|s| s.to_string()).collect(),
        test_ids: test.iter().map(|s| s.to_string()).collect(),
    })
}

/// Split a record list that may hold repeated measures of one problem; every
/// record of an id lands on the same side.
pub fn split_records(problems: &[ChoiceProblem], seed: u64, ratio: f64) -> Result<DatasetSplit> {
    let unique: BTreeSet<&str> = problems.iter().map(|p| p.id.as_str()).collect();
    let ids: Vec<&str> = unique.into_iter().collect();
    split_dataset(&ids, seed, ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Gamble;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i:05}")).collect()
    }

    #[test]
    fn ten_ids() {
        let s = split_dataset(&ids(10), 7, 0.10).unwrap();
        assert_eq!(s.test_ids.len(), 1);
        assert_eq!(s.train_ids.len(), 9);
        assert!(s.train_ids.is_disjoint(&s.test_ids));
    }

    #[test]
    fn corpus_sized_split() {
        let s = split_dataset(&ids(14_564), 0, 0.10).unwrap();
        assert_eq!(s.test_ids.len(), 1_456);
        assert_eq!(s.train_ids.len(), 13_108);
    }

    #[test]
    fn deterministic_and_order_independent() {
        let mut v = ids(50);
        let a = split_dataset(&v, 11, 0.2).unwrap();
        assert_eq!(a, split_dataset(&v, 11, 0.2).unwrap());
        v.reverse();
        assert_eq!(a, split_dataset(&v, 11, 0.2).unwrap());
        assert_ne!(a.test_ids, split_dataset(&v, 12, 0.2).unwrap().test_ids);
    }

    #[test]
    fn rejects_duplicates_and_bad_ratio() {
        assert!(split_dataset(&["a", "b", "a"], 0, 0.5).is_err());
        assert!(split_dataset(&["a", "b"], 0, 0.0).is_err());
        assert!(split_dataset(&["a", "b"], 0, 1.0).is_err());
    }

    #[test]
    fn repeated_measures_stay_together() {
        let mk = |id: &str| ChoiceProblem::new(id, Gamble::certain(1.0), Gamble::certain(2.0));
        let problems: Vec<_> = ["a", "b", "a", "c", "b", "d"].into_iter().map(mk).collect();
        let s = split_records(&problems, 5, 0.5).unwrap();
        assert_eq!(s.train_ids.len() + s.test_ids.len(), 4);
    }
}
