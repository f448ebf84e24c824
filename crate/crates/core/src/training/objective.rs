//! The clipped group-relative surrogate and the KL penalty, with gradients
//! taken with respect to the current policy's per-token log-probabilities.

use crate::error::{Error, Result};
use crate::policy::{ProblemFeatures, TokenId, ToyPolicyParams};

use super::GrpoConfig;

/// `min(r A, clip(r, 1 - eps_low, 1 + eps_high) A)`.
pub fn clipped_term(ratio: f64, advantage: f64, cfg: &GrpoConfig) -> f64 {
    let clipped = ratio.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_term`] with respect to the ratio: `A` while the
/// unclipped branch is the minimum, 0 once the clipped constant takes over.
fn clipped_slope(ratio: f64, advantage: f64, cfg: &GrpoConfig) -> f64 {
    let clipped = ratio.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

/// Per-token KL estimate `exp(d) - d - 1` with `d = log pi_ref - log pi_theta`.
pub fn kl_estimate(logp_current: f64, logp_reference: f64) -> f64 {
    let d = logp_reference - logp_current;
    d.exp() - d - 1.0
}

/// Summed per-token estimate over one sequence, before the `beta` factor.
/// Forced positions have log-probability 0 under both policies and add nothing.
pub fn sequence_kl(current: &[f64], reference: &[f64]) -> Result<f64> {
    if current.len() != reference.len() {
        return Err(Error::domain("current and reference log-probs differ in length"));
    }
    Ok(current.iter().zip(reference).map(|(&c, &r)| kl_estimate(c, r)).sum())
}

/// `beta * sum_t k(d_t)` for one sequence scored by both policies.
pub fn kl_penalty(current: &[f64], reference: &[f64], beta: f64) -> Result<f64> {
    Ok(beta * sequence_kl(current, reference)?)
}

/// Exact `KL(pi_theta || pi_ref)` summed over the sampled positions of one
/// sequence, using the toy policy's full next-token distributions.
pub fn exact_sequence_kl(
    current: &ToyPolicyParams,
    reference: &ToyPolicyParams,
    features: &ProblemFeatures,
    tokens: &[TokenId],
) -> Result<f64> {
    let p = current.step_distributions(features, tokens)?;
    let q = reference.step_distributions(features, tokens)?;
    let mut kl = 0.0;
    for (p, q) in p.iter().zip(&q) {
        if let (Some((_, p)), Some((_, q))) = (p, q) {
            kl += p.iter().zip(q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / qi).ln()).sum::<f64>();
        }
    }
    Ok(kl)
}

/// One group with everything the objective needs: advantages and, per
/// completion, per-token log-probs under the sampling, current and reference
/// policies.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredGroup {
    pub advantages: Vec<f64>,
    pub old_logprobs: Vec<Vec<f64>>,
    pub new_logprobs: Vec<Vec<f64>>,
    pub ref_logprobs: Vec<Vec<f64>>,
}

impl ScoredGroup {
    fn validate(&self) -> Result<()> {
        let g = self.advantages.len();
        if g == 0 || self.old_logprobs.len() != g || self.new_logprobs.len() != g || self.ref_logprobs.len() != g {
            return Err(Error::domain(format!(
                "group sizes disagree: {} advantages, {} old, {} new, {} reference sequences",
                g,
                self.old_logprobs.len(),
                self.new_logprobs.len(),
                self.ref_logprobs.len()
            )));
        }
        for (i, ((o, n), r)) in self.old_logprobs.iter().zip(&self.new_logprobs).zip(&self.ref_logprobs).enumerate() {
            if o.len() != n.len() || n.len() != r.len() {
                return Err(Error::domain(format!("completion {i}: log-prob sequences differ in length")));
            }
        }
        Ok(())
    }
}

/// Objective value and its gradient with respect to every new log-prob.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    /// Clipped surrogate `J`, averaged over groups.
    pub surrogate: f64,
    /// Mean over groups of `(1/G) sum_i sum_t k`, without `beta`.
    pub kl: f64,
    /// `surrogate - beta * kl`, the quantity ascended.
    pub value: f64,
    /// `d value / d log pi_theta(o_{i,t})`, indexed `[group][completion][token]`.
    pub token_grads: Vec<Vec<Vec<f64>>>,
}

/// `J = (1/G) sum_i sum_t min(r A_i, clip(r) A_i)` per group, averaged over the
/// batch, minus `beta` times the matching average of per-token KL estimates.
/// Token sums are not divided by sequence length.
pub fn grpo_objective(groups: &[ScoredGroup], cfg: &GrpoConfig) -> Result<ObjectiveEval> {
    if groups.is_empty() {
        return Err(Error::domain("objective needs at least one group"));
    }
    let batch = groups.len() as f64;
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    let mut token_grads = Vec::with_capacity(groups.len());
    for group in groups {
        group.validate()?;
        let scale = 1.0 / (group.advantages.len() as f64 * batch);
        let mut grads = Vec::with_capacity(group.advantages.len());
        for (i, &a) in group.advantages.iter().enumerate() {
            let (old, new, reference) = (&group.old_logprobs[i], &group.new_logprobs[i], &group.ref_logprobs[i]);
            let mut g = Vec::with_capacity(new.len());
            for t in 0..new.len() {
                let ratio = (new[t] - old[t]).exp();
                surrogate += scale * clipped_term(ratio, a, cfg);
                let d = reference[t] - new[t];
                kl += scale * (d.exp() - d - 1.0);
                // d r / d log pi = r;  d k / d log pi = 1 - exp(d)
                let d_surrogate = clipped_slope(ratio, a, cfg) * ratio;
                let d_kl = 1.0 - d.exp();
                g.push(scale * (d_surrogate - cfg.beta * d_kl));
            }
            grads.push(g);
        }
        token_grads.push(grads);
    }
    Ok(ObjectiveEval { surrogate, kl, value: surrogate - cfg.beta * kl, token_grads })
}

/// One toy-policy group: the problem's features and the sampled token
/// sequences, with the fixed quantities of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGroup {
    pub features: ProblemFeatures,
    pub sequences: Vec<Vec<TokenId>>,
    pub advantages: Vec<f64>,
    pub old_logprobs: Vec<Vec<f64>>,
    pub ref_logprobs: Vec<Vec<f64>>,
}

/// Evaluate the objective at `params` and chain its token gradients through
/// the toy policy, giving `d (J - beta KL) / d W`.
pub fn toy_objective(
    params: &ToyPolicyParams,
    groups: &[ToyGroup],
    cfg: &GrpoConfig,
) -> Result<(ObjectiveEval, Vec<f64>)> {
    let scored = groups
        .iter()
        .map(|g| {
            if g.sequences.len() != g.advantages.len() {
                return Err(Error::domain("sequences and advantages differ in count"));
            }
            let new_logprobs = g
                .sequences
                .iter()
                .map(|s| params.sequence_logprobs(&g.features, s))
                .collect::<Result<Vec<_>>>()?;
            Ok(ScoredGroup {
                advantages: g.advantages.clone(),
                old_logprobs: g.old_logprobs.clone(),
                new_logprobs,
                ref_logprobs: g.ref_logprobs.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let eval = grpo_objective(&scored, cfg)?;
    let mut grad = vec![0.0; params.n_params()];
    for (g, coeffs) in groups.iter().zip(&eval.token_grads) {
        for (seq, c) in g.sequences.iter().zip(coeffs) {
            params.accumulate_weighted_gradient(&g.features, seq, c, &mut grad)?;
        }
    }
    Ok((eval, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GrpoConfig {
        GrpoConfig::default()
    }

    #[test]
    fn clipped_term_cases() {
        let c = cfg();
        assert_eq!(clipped_term(1.0, 0.3, &c), 0.3);
        assert!((clipped_term(1.5, 0.3, &c) - 0.384).abs() < 1e-12);
        assert!((clipped_term(0.5, -0.2, &c) + 0.16).abs() < 1e-12);
    }

    #[test]
    fn kl_estimator_values() {
        assert_eq!(kl_estimate(-1.3, -1.3), 0.0);
        assert!((kl_estimate(-1.0, -0.9) - 0.005_170_918_075_647_624).abs() < 1e-15);
        for d in [-5.0, -0.5, 0.0, 0.01, 3.0] {
            assert!(kl_estimate(0.0, d) >= 0.0);
        }
    }

    #[test]
    fn ratio_one_reduces_to_length_weighted_advantages() {
        let c = cfg();
        let lp = |n: usize| vec![-0.7; n];
        let g = ScoredGroup {
            advantages: vec![0.5, -0.25, -0.25],
            old_logprobs: vec![lp(4), lp(2), lp(3)],
            new_logprobs: vec![lp(4), lp(2), lp(3)],
            ref_logprobs: vec![lp(4), lp(2), lp(3)],
        };
        let e = grpo_objective(&[g], &c).unwrap();
        let expected = (4.0 * 0.5 + 2.0 * -0.25 + 3.0 * -0.25) / 3.0;
        assert!((e.surrogate - expected).abs() < 1e-12);
        assert_eq!(e.kl, 0.0);
    }

    #[test]
    fn hand_computed_two_completion_group() {
        let c = GrpoConfig { beta: 0.0, ..cfg() };
        // completion 0: ratio 1.5, A = 0.3 -> 1.28 * 0.3; completion 1: ratio 0.9, A = -0.3 -> -0.27
        let g = ScoredGroup {
            advantages: vec![0.3, -0.3],
            old_logprobs: vec![vec![(0.2f64).ln()], vec![(0.5f64).ln()]],
            new_logprobs: vec![vec![(0.3f64).ln()], vec![(0.45f64).ln()]],
            ref_logprobs: vec![vec![(0.2f64).ln()], vec![(0.5f64).ln()]],
        };
        let e = grpo_objective(&[g], &c).unwrap();
        assert!((e.value - (0.384 - 0.27) / 2.0).abs() < 1e-12);
        assert_eq!(e.token_grads[0][0][0], 0.0);
        assert!((e.token_grads[0][1][0] - (-0.3 * 0.9 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_advantages_zero_gradient() {
        let g = ScoredGroup {
            advantages: vec![0.0, 0.0],
            old_logprobs: vec![vec![-1.0, -0.2], vec![-3.0]],
            new_logprobs: vec![vec![-0.5, -0.1], vec![-2.0]],
            ref_logprobs: vec![vec![-0.5, -0.1], vec![-2.0]],
        };
        let e = grpo_objective(&[g], &cfg()).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.token_grads.iter().flatten().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn mismatched_groups_rejected() {
        let g = ScoredGroup {
            advantages: vec![0.1, -0.1],
            old_logprobs: vec![vec![-1.0]],
            new_logprobs: vec![vec![-1.0]],
            ref_logprobs: vec![vec![-1.0]],
        };
        assert!(grpo_objective(&[g], &cfg()).is_err());
        let g = ScoredGroup {
            advantages: vec![0.1],
            old_logprobs: vec![vec![-1.0, -2.0]],
            new_logprobs: vec![vec![-1.0]],
            ref_logprobs: vec![vec![-1.0]],
        };
        assert!(grpo_objective(&[g], &cfg()).is_err());
    }
}
