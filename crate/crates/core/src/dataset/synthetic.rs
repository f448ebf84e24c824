use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ChoiceProblem, Gamble, Outcome};

/// Shape of randomly generated two-option problems.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub max_outcomes: usize,
    pub min_value: i64,
    pub max_value: i64,
    /// Probabilities are multiples of `1 / probability_grid`.
    pub probability_grid: u32,
    pub id_prefix: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            max_outcomes: 3,
            min_value: -20,
            max_value: 100,
            probability_grid: 20,
            id_prefix: "syn".into(),
        }
    }
}

fn random_gamble(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig) -> Gamble {
    let grid = cfg.probability_grid.max(1);
    let n = rng.random_range(1..=cfg.max_outcomes.clamp(1, grid as usize));
    // n-1 distinct interior cut points on the grid give n positive masses.
    let mut cuts: Vec<u32> = Vec::with_capacity(n + 1);
    while cuts.len() < n - 1 {
        let c = rng.random_range(1..grid);
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.push(0);
    cuts.push(grid);
    cuts.sort_unstable();
    let outcomes = cuts
        .windows(2)
        .map(|w| {
            let p = f64::from(w[1] - w[0]) / f64::from(grid);
            Outcome::new(p, rng.random_range(cfg.min_value..=cfg.max_value) as f64)
        })
        .collect();
    Gamble::new(outcomes).expect("grid masses sum to one")
}

/// Seeded synthetic problems with ids `{prefix}{index:05}`.
pub fn generate_problems(n: usize, seed: u64, cfg: &GeneratorConfig) -> Vec<ChoiceProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let a = random_gamble(&mut rng, cfg);
            let b = random_gamble(&mut rng, cfg);
            ChoiceProblem::new(format!("{}{i:05}", cfg.id_prefix), a, b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_valid() {
        let cfg = GeneratorConfig::default();
        let a = generate_problems(200, 9, &cfg);
        assert_eq!(a, generate_problems(200, 9, &cfg));
        for p in &a {
            for g in [&p.option_a, &p.option_b] {
                assert!((1..=3).contains(&g.len()));
                assert!(g.outcomes().iter().all(|o| o.probability > 0.0));
            }
        }
        assert!(a.iter().any(|p| p.option_a.len() == 3));
    }
}
