use serde::{Deserialize, Serialize};

use crate::dataset::{expected_value, ChoiceProblem};

/// Problem features fed to the toy policy, each in [-1, 1]:
/// `[bias, EV(A), EV(B), EV(B)-EV(A), n_A, n_B, max payoff, min payoff]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFeatures(pub Vec<f64>);

impl ProblemFeatures {
    pub const DIM: usize = 8;

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Normalization constants; stored with checkpoints so features can be rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    /// Dollar amounts are divided by this.
    pub value_scale: f64,
    /// Outcome counts are divided by this.
    pub max_outcomes: f64,
    /// The EV difference enters as `tanh(diff / ev_diff_scale)`.
    pub ev_diff_scale: f64,
}

impl Default for FeatureNormalizer {
    fn default() -> Self {
        Self { value_scale: 100.0, max_outcomes: 3.0, ev_diff_scale: 5.0 }
    }
}

impl FeatureNormalizer {
    /// Scale dollar amounts by the largest magnitude and counts by the largest
    /// count in `problems`.
    pub fn fit(problems: &[ChoiceProblem]) -> Self {
        let mut value_scale: f64 = 0.0;
        let mut max_outcomes: f64 = 1.0;
        for p in problems {
            for g in [&p.option_a, &p.option_b] {
                max_outcomes = max_outcomes.max(g.len() as f64);
                for o in g.outcomes() {
                    value_scale = value_scale.max(o.value.abs());
                }
            }
        }
        if value_scale <= 0.0 {
            value_scale = 1.0;
        }
        Self { value_scale, max_outcomes, ev_diff_scale: value_scale / 20.0 }
    }

    pub fn featurize(&self, problem: &ChoiceProblem) -> ProblemFeatures {
        let ev_a = expected_value(&problem.option_a);
        let ev_b = expected_value(&problem.option_b);
        let scale = |v: f64| (v / self.value_scale).clamp(-1.0, 1.0);
        let count = |n: usize| (n as f64 / self.max_outcomes).clamp(-1.0, 1.0);
        let max_payoff = problem.option_a.max_value().max(problem.option_b.max_value());
        let min_payoff = problem.option_a.min_value().min(problem.option_b.min_value());
        ProblemFeatures(vec![
            1.0,
            scale(ev_a),
            scale(ev_b),
            ((ev_b - ev_a) / self.ev_diff_scale).tanh(),
            count(problem.option_a.len()),
            count(problem.option_b.len()),
            scale(max_payoff),
            scale(min_payoff),
        ])
    }
}

/// Features under the default normalizer.
pub fn featurize(problem: &ChoiceProblem) -> ProblemFeatures {
    FeatureNormalizer::default().featurize(problem)
}
