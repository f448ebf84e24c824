use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{expected_value, BehavioralTarget, ChoiceProblem, TargetSource};

/// Expected values closer than this are treated as a tie.
pub const EV_TIE_TOLERANCE: f64 = 1e-9;

/// Expected-value maximizer: everyone picks the option with the larger EV, ties split evenly.
pub fn ev_oracle(problem: &ChoiceProblem) -> BehavioralTarget {
    let diff = expected_value(&problem.option_b) - expected_value(&problem.option_a);
    let b_rate = if diff.abs() <= EV_TIE_TOLERANCE {
        0.5
    } else if diff > 0.0 {
        1.0
    } else {
        0.0
    };
    BehavioralTarget { problem_id: problem.id.clone(), b_rate, source: TargetSource::Ev }
}

/// Complexity aversion: each option is chosen in proportion to the other option's outcome count.
pub fn complexity_oracle(problem: &ChoiceProblem) -> BehavioralTarget {
    let n_a = problem.option_a.len() as f64;
    let n_b = problem.option_b.len() as f64;
    BehavioralTarget {
        problem_id: problem.id.clone(),
        b_rate: n_a / (n_a + n_b),
        source: TargetSource::Complexity,
    }
}

/// I.i.d. uniform choice rates, one per id in the given order, reproducible from `seed`.
pub fn random_oracle<S: AsRef<str>>(problem_ids: &[S], seed: u64) -> Vec<BehavioralTarget> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    problem_ids
        .iter()
        .map(|id| BehavioralTarget {
            problem_id: id.as_ref().to_string(),
            b_rate: rng.random::<f64>(),
            source: TargetSource::Random,
        })
        .collect()
}
