use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::ProblemFeatures;
use super::grammar::{Step, TokenId, TokenSequence, ToyGrammar, VOCAB_SIZE};
use crate::error::{Error, Result};

/// Log-linear autoregressive policy: at weight slot `s` the logit of token `v`
/// is `sum_f x_f * W[s][f][v]`, softmaxed over the tokens legal at that position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicyParams {
    pub grammar: ToyGrammar,
    pub n_features: usize,
    /// Row-major `[slot][feature][token]`.
    pub weights: Vec<f64>,
}

impl ToyPolicyParams {
    pub fn zeros(grammar: ToyGrammar, n_features: usize) -> Self {
        let len = grammar.n_slots() * n_features * VOCAB_SIZE;
        Self { grammar, n_features, weights: vec![0.0; len] }
    }

    pub fn n_params(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn index(&self, slot: usize, feature: usize, token: TokenId) -> usize {
        (slot * self.n_features + feature) * VOCAB_SIZE + token
    }

    pub fn weight_mut(&mut self, slot: usize, feature: usize, token: TokenId) -> &mut f64 {
        let i = self.index(slot, feature, token);
        &mut self.weights[i]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    fn check_features(&self, features: &ProblemFeatures) -> Result<()> {
        if features.len() != self.n_features {
            return Err(Error::domain(format!(
                "feature vector has {} entries, policy expects {}",
                features.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    /// Probabilities over `legal` at weight slot `slot`.
    pub(crate) fn distribution(&self, x: &[f64], slot: usize, legal: &[TokenId]) -> Vec<f64> {
        let logits: Vec<f64> = legal
            .iter()
            .map(|&v| x.iter().enumerate().map(|(f, xf)| xf * self.weights[self.index(slot, f, v)]).sum())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    /// Sample until the terminator or until `max_tokens` tokens exist.
    pub fn sample(&self, features: &ProblemFeatures, seed: u64, max_tokens: usize) -> TokenSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = features.as_slice();
        let mut tokens = Vec::new();
        while tokens.len() < max_tokens {
            match self.grammar.step(&tokens) {
                Step::Done => break,
                Step::Forced(t) => tokens.push(t),
                Step::Choice { slot, legal } => {
                    let probs = self.distribution(x, slot, &legal);
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = *legal.last().expect("non-empty legal set");
                    for (&tok, p) in legal.iter().zip(&probs) {
                        acc += p;
                        if u < acc {
                            pick = tok;
                            break;
                        }
                    }
                    tokens.push(pick);
                }
            }
        }
        TokenSequence::from_tokens(tokens)
    }

    /// Walk `tokens` through the grammar, calling `visit(position, slot, legal, chosen_index)`
    /// at every sampled position.
    fn walk(
        &self,
        tokens: &[TokenId],
        mut visit: impl FnMut(usize, usize, &[TokenId], usize),
    ) -> Result<()> {
        for (pos, &tok) in tokens.iter().enumerate() {
            match self.grammar.step(&tokens[..pos]) {
                Step::Done => {
                    return Err(Error::domain(format!("token at position {pos} follows the terminator")))
                }
                Step::Forced(t) if t == tok => {}
                Step::Forced(t) => {
                    return Err(Error::domain(format!(
                        "position {pos} must be token {t}, found {tok}"
                    )))
                }
                Step::Choice { slot, legal } => {
                    let Some(k) = legal.iter().position(|&v| v == tok) else {
                        return Err(Error::domain(format!("token {tok} is not legal at position {pos}")));
                    };
                    visit(pos, slot, &legal, k);
                }
            }
        }
        Ok(())
    }

    /// Per-token log-probabilities; forced positions contribute 0.
    pub fn sequence_logprobs(&self, features: &ProblemFeatures, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.check_features(features)?;
        let x = features.as_slice();
        let mut out = vec![0.0; tokens.len()];
        self.walk(tokens, |pos, slot, legal, k| {
            out[pos] = self.distribution(x, slot, legal)[k].ln();
        })?;
        Ok(out)
    }

    /// The full next-token distribution at every sampled position of `tokens`;
    /// `None` at forced positions.
    pub fn step_distributions(
        &self,
        features: &ProblemFeatures,
        tokens: &[TokenId],
    ) -> Result<Vec<Option<(Vec<TokenId>, Vec<f64>)>>> {
        self.check_features(features)?;
        let x = features.as_slice();
        let mut out = vec![None; tokens.len()];
        self.walk(tokens, |pos, slot, legal, _| {
            out[pos] = Some((legal.to_vec(), self.distribution(x, slot, legal)));
        })?;
        Ok(out)
    }

    /// Distribution of the emitted option-B integer for an untruncated
    /// completion. Digit slots do not depend on the thoughts before them, so
    /// the thought prefix marginalizes out.
    pub fn prediction_distribution(&self, features: &ProblemFeatures) -> Result<Vec<(u32, f64)>> {
        self.check_features(features)?;
        let x = features.as_slice();
        let mut prefix = Vec::new();
        if self.grammar.max_thoughts > 0 {
            prefix.push(super::grammar::STOP_THINKING);
        }
        let mut out = Vec::with_capacity(101);
        self.expand(x, &mut prefix, 1.0, &mut out);
        Ok(out)
    }

    fn expand(&self, x: &[f64], prefix: &mut Vec<TokenId>, mass: f64, out: &mut Vec<(u32, f64)>) {
        match self.grammar.step(prefix) {
            Step::Done => {
                let value = prefix
                    .iter()
                    .filter(|&&t| t < super::grammar::N_DIGITS)
                    .fold(0u32, |acc, &d| acc * 10 + d as u32);
                out.push((value, mass));
            }
            Step::Forced(t) => {
                prefix.push(t);
                self.expand(x, prefix, mass, out);
                prefix.pop();
            }
            Step::Choice { slot, legal } => {
                let probs = self.distribution(x, slot, &legal);
                for (&t, p) in legal.iter().zip(probs) {
                    prefix.push(t);
                    self.expand(x, prefix, mass * p, out);
                    prefix.pop();
                }
            }
        }
    }

    /// Accumulate `sum_t coeff[t] * d log pi(token_t) / dW` into `grad`.
    pub fn accumulate_weighted_gradient(
        &self,
        features: &ProblemFeatures,
        tokens: &[TokenId],
        coeff: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_features(features)?;
        if coeff.len() != tokens.len() || grad.len() != self.weights.len() {
            return Err(Error::domain("gradient buffers do not match the sequence or parameters"));
        }
        let x = features.as_slice();
        self.walk(tokens, |pos, slot, legal, k| {
            let c = coeff[pos];
            if c == 0.0 {
                return;
            }
            let probs = self.distribution(x, slot, legal);
            for (j, (&v, p)) in legal.iter().zip(&probs).enumerate() {
                let dlogit = if j == k { 1.0 - p } else { -p };
                for (f, xf) in x.iter().enumerate() {
                    grad[self.index(slot, f, v)] += c * xf * dlogit;
                }
            }
        })
    }

    /// Gradient of the sequence log-probability with respect to the weights.
    pub fn logprob_gradient(&self, features: &ProblemFeatures, tokens: &[TokenId]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.weights.len()];
        self.accumulate_weighted_gradient(features, tokens, &vec![1.0; tokens.len()], &mut grad)?;
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::grammar::{END, FIRST_MARKER, STOP_THINKING};

    fn feats() -> ProblemFeatures {
        ProblemFeatures(vec![1.0, 0.3, -0.2, 0.5, 0.33, 0.66, 0.9, -0.1])
    }

    /// Weights that make `token` overwhelmingly likely at `slot` via the bias feature.
    fn force(p: &mut ToyPolicyParams, slot: usize, token: TokenId) {
        *p.weight_mut(slot, 0, token) = 40.0;
    }

    #[test]
    fn forced_logits_emit_known_json() {
        let mut p = ToyPolicyParams::zeros(ToyGrammar::default(), ProblemFeatures::DIM);
        force(&mut p, 0, FIRST_MARKER);
        force(&mut p, 1, STOP_THINKING);
        force(&mut p, 3, 7);
        force(&mut p, 4, 1);
        let seq = p.sample(&feats(), 5, 64);
        assert_eq!(seq.tokens, vec![FIRST_MARKER, STOP_THINKING, 7, 1, END]);
        assert!(seq.text.contains(r#"{"option_A": 29, "option_B": 71}"#));
        for lp in p.sequence_logprobs(&feats(), &seq.tokens).unwrap() {
            assert!(lp.abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let mut p = ToyPolicyParams::zeros(ToyGrammar::default(), ProblemFeatures::DIM);
        for (i, w) in p.weights.iter_mut().enumerate() {
            *w = ((i * 37 % 11) as f64 - 5.0) * 0.1;
        }
        assert_eq!(p.sample(&feats(), 9, 64), p.sample(&feats(), 9, 64));
        let distinct: std::collections::HashSet<_> =
            (0..50).map(|s| p.sample(&feats(), s, 64).tokens).collect();
        assert!(distinct.len() > 10);
    }

    #[test]
    fn uniform_log_probs() {
        let p = ToyPolicyParams::zeros(ToyGrammar::default(), ProblemFeatures::DIM);
        let lp = p.sequence_logprobs(&feats(), &[FIRST_MARKER, STOP_THINKING, 5, 0, END]).unwrap();
        let k_thought = 5.0f64;
        assert!((lp[0] - (1.0 / k_thought).ln()).abs() < 1e-12);
        assert!((lp[1] - (1.0 / k_thought).ln()).abs() < 1e-12);
        assert!((lp[2] - (0.1f64).ln()).abs() < 1e-12);
        assert!((lp[3] - (1.0f64 / 11.0).ln()).abs() < 1e-12);
        assert_eq!(lp[4], 0.0);
    }

    #[test]
    fn off_grammar_tokens_rejected() {
        let p = ToyPolicyParams::zeros(ToyGrammar::default(), ProblemFeatures::DIM);
        assert!(p.sequence_logprobs(&feats(), &[5]).is_err());
        assert!(p.sequence_logprobs(&feats(), &[STOP_THINKING, 0, 3]).is_err());
        assert!(p.sequence_logprobs(&feats(), &[STOP_THINKING, 1, END, 2]).is_err());
        assert!(p.sequence_logprobs(&ProblemFeatures(vec![1.0]), &[STOP_THINKING]).is_err());
    }

    #[test]
    fn max_tokens_truncates() {
        let p = ToyPolicyParams::zeros(ToyGrammar::default(), ProblemFeatures::DIM);
        assert_eq!(p.sample(&feats(), 1, 2).len(), 2);
        assert!(p.sample(&feats(), 1, 0).is_empty());
    }

    #[test]
    fn prediction_distribution_covers_zero_to_hundred() {
        let p = ToyPolicyParams::zeros(ToyGrammar::default(), ProblemFeatures::DIM);
        let d = p.prediction_distribution(&feats()).unwrap();
        let mut values: Vec<u32> = d.iter().map(|(v, _)| *v).collect();
        values.sort_unstable();
        assert_eq!(values, (0..=100).collect::<Vec<_>>());
        assert!((d.iter().map(|(_, m)| m).sum::<f64>() - 1.0).abs() < 1e-12);
        // uniform slots: P(0) = 1/10, P(7) = 1/10 * 1/11, P(100) = 1/10 * 1/11 * 1/2
        let mass = |v: u32| d.iter().find(|(x, _)| *x == v).unwrap().1;
        assert!((mass(0) - 0.1).abs() < 1e-15);
        assert!((mass(7) - 1.0 / 110.0).abs() < 1e-15);
        assert!((mass(100) - 1.0 / 220.0).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_gradient_is_one_minus_one_over_k() {
        let p = ToyPolicyParams::zeros(ToyGrammar { max_thoughts: 0 }, ProblemFeatures::DIM);
        let grad = p.logprob_gradient(&feats(), &[3, END]).unwrap();
        // slot 0 has 10 legal digits; the bias feature is 1
        assert!((grad[p.index(0, 0, 3)] - 0.9).abs() < 1e-12);
        assert!((grad[p.index(0, 0, 4)] + 0.1).abs() < 1e-12);
        assert!((grad[p.index(0, 1, 3)] - 0.9 * 0.3).abs() < 1e-12);
    }
}
