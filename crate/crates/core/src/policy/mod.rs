//! Policies: per-token log-probabilities and sampling, with a built-in toy
//! autoregressive policy small enough to train and differentiate exactly.

mod features;
mod grammar;
mod toy;

pub use features::{featurize, FeatureNormalizer, ProblemFeatures};
pub use grammar::{
    detokenize, detokenize_with_spans, TokenId, TokenSequence, ToyGrammar, END, FIRST_MARKER,
    N_DIGITS, STOP_THINKING, THOUGHT_MARKERS, VOCAB_SIZE,
};
pub use toy::ToyPolicyParams;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Anything that can sample completions and score tokens.
pub trait Policy {
    fn sample(&self, features: &ProblemFeatures, seed: u64, max_tokens: usize) -> TokenSequence;
    fn token_logprobs(&self, features: &ProblemFeatures, tokens: &[TokenId]) -> Result<Vec<f64>>;
}

impl Policy for ToyPolicyParams {
    fn sample(&self, features: &ProblemFeatures, seed: u64, max_tokens: usize) -> TokenSequence {
        ToyPolicyParams::sample(self, features, seed, max_tokens)
    }

    fn token_logprobs(&self, features: &ProblemFeatures, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.sequence_logprobs(features, tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewRole {
    Current,
    Old,
    Reference,
}

static NEXT_SNAPSHOT: AtomicU64 = AtomicU64::new(1);

/// An immutable parameter snapshot. Cloning shares the snapshot; later
/// updates to the live parameters never reach it.
#[derive(Debug, Clone)]
pub struct PolicyView {
    pub snapshot_id: u64,
    pub role: ViewRole,
    params: Arc<ToyPolicyParams>,
}

impl PolicyView {
    pub fn snapshot(params: &ToyPolicyParams, role: ViewRole) -> Self {
        Self {
            snapshot_id: NEXT_SNAPSHOT.fetch_add(1, Ordering::Relaxed),
            role,
            params: Arc::new(params.clone()),
        }
    }

    pub fn params(&self) -> &ToyPolicyParams {
        &self.params
    }
}

impl Policy for PolicyView {
    fn sample(&self, features: &ProblemFeatures, seed: u64, max_tokens: usize) -> TokenSequence {
        self.params.sample(features, seed, max_tokens)
    }

    fn token_logprobs(&self, features: &ProblemFeatures, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.params.sequence_logprobs(features, tokens)
    }
}

pub fn toy_sample(params: &ToyPolicyParams, features: &ProblemFeatures, seed: u64, max_tokens: usize) -> TokenSequence {
    params.sample(features, seed, max_tokens)
}

pub fn sequence_logprobs(view: &PolicyView, features: &ProblemFeatures, tokens: &[TokenId]) -> Result<Vec<f64>> {
    view.token_logprobs(features, tokens)
}

pub fn logprob_gradient(params: &ToyPolicyParams, features: &ProblemFeatures, tokens: &[TokenId]) -> Result<Vec<f64>> {
    params.logprob_gradient(features, tokens)
}

/// Saved toy policy weights with the metadata needed to reuse them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCheckpoint {
    pub step: usize,
    pub epoch: f64,
    pub seed: u64,
    pub normalizer: FeatureNormalizer,
    pub params: ToyPolicyParams,
}

impl ToyCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshots_are_immutable() {
        let mut live = ToyPolicyParams::zeros(ToyGrammar::default(), ProblemFeatures::DIM);
        let view = PolicyView::snapshot(&live, ViewRole::Old);
        let f = ProblemFeatures(vec![1.0; ProblemFeatures::DIM]);
        let tokens = [STOP_THINKING, 4, 2, END];
        let before = sequence_logprobs(&view, &f, &tokens).unwrap();
        for w in live.weights.iter_mut() {
            *w += 1.5;
        }
        *live.weight_mut(3, 0, 4) = 9.0;
        assert_eq!(sequence_logprobs(&view, &f, &tokens).unwrap(), before);
        let other = PolicyView::snapshot(&live, ViewRole::Current);
        assert_ne!(other.snapshot_id, view.snapshot_id);
        assert_ne!(sequence_logprobs(&other, &f, &tokens).unwrap(), before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut params = ToyPolicyParams::zeros(ToyGrammar::default(), ProblemFeatures::DIM);
        params.weights[7] = -0.25;
        let ck = ToyCheckpoint { step: 4, epoch: 0.1, seed: 2, normalizer: FeatureNormalizer::default(), params };
        ck.save(&path).unwrap();
        assert_eq!(ToyCheckpoint::load(&path).unwrap(), ck);
    }
}
