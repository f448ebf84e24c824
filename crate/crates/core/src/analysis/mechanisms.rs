use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backend::normalize_tag;

/// One thought's mechanism labels, keyed by the checkpoint epoch it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedThought {
    pub epoch: f64,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSeries {
    pub epochs: Vec<f64>,
    /// Every tag seen, most frequent overall first (ties by name).
    pub tags: Vec<String>,
    /// `proportions[tag][epoch]`: share of that epoch's thoughts carrying the tag.
    pub proportions: Vec<Vec<f64>>,
    /// `ranks[tag][epoch]`: 1-based rank of the tag within the epoch.
    pub ranks: Vec<Vec<usize>>,
    pub thoughts_per_epoch: Vec<usize>,
}

impl MechanismSeries {
    pub fn top(&self, n: usize) -> &[String] {
        &self.tags[..n.min(self.tags.len())]
    }

    pub fn proportion(&self, tag: &str, epoch_index: usize) -> Option<f64> {
        let i = self.tags.iter().position(|t| t == tag)?;
        self.proportions[i].get(epoch_index).copied()
    }

    pub fn rank_series(&self, tag: &str) -> Option<&[usize]> {
        let i = self.tags.iter().position(|t| t == tag)?;
        Some(&self.ranks[i])
    }
}

pub fn mechanism_series(thoughts: &[TaggedThought]) -> MechanismSeries {
    let mut epochs: Vec<f64> = thoughts.iter().map(|t| t.epoch).collect();
    epochs.sort_by(f64::total_cmp);
    epochs.dedup();

    // a tag counts once per thought
    let normalized: Vec<BTreeSet<String>> = thoughts
        .iter()
        .map(|t| t.tags.iter().map(|s| normalize_tag(s)).filter(|s| !s.is_empty()).collect())
        .collect();
    let mut overall: BTreeMap<&str, usize> = BTreeMap::new();
    for set in &normalized {
        for tag in set {
            *overall.entry(tag).or_default() += 1;
        }
    }
    let mut tags: Vec<String> = overall.keys().map(|s| s.to_string()).collect();
    tags.sort_by(|a, b| overall[b.as_str()].cmp(&overall[a.as_str()]).then_with(|| a.cmp(b)));

    let mut counts = vec![vec![0usize; epochs.len()]; tags.len()];
    let mut thoughts_per_epoch = vec![0usize; epochs.len()];
    let tag_index: BTreeMap<&str, usize> = tags.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    for (t, set) in thoughts.iter().zip(&normalized) {
        let e = epochs.binary_search_by(|x| x.total_cmp(&t.epoch)).expect("epoch collected above");
        thoughts_per_epoch[e] += 1;
        for tag in set {
            counts[tag_index[tag.as_str()]][e] += 1;
        }
    }
    let proportions: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| row.iter().zip(&thoughts_per_epoch).map(|(&c, &n)| c as f64 / n as f64).collect())
        .collect();

    let mut ranks = vec![vec![0usize; epochs.len()]; tags.len()];
    for e in 0..epochs.len() {
        let mut order: Vec<usize> = (0..tags.len()).collect();
        order.sort_by(|&a, &b| counts[b][e].cmp(&counts[a][e]).then_with(|| tags[a].cmp(&tags[b])));
        for (r, &i) in order.iter().enumerate() {
            ranks[i][e] = r + 1;
        }
    }
    MechanismSeries { epochs, tags, proportions, ranks, thoughts_per_epoch }
}
