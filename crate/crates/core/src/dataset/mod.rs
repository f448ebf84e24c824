//! Risky-choice problems: gambles, prompt rendering, behavioral targets,
//! train/test splits and the synthetic target generators used as data controls.

mod choices13k;
mod io;
mod oracles;
mod split;
mod synthetic;

pub use choices13k::{Choices13kAdapter, RateAggregation};
pub use io::{
    dataset_hash, read_problems_jsonl, read_split, write_problems_jsonl, write_split,
    ProblemRecord,
};
pub use oracles::{complexity_oracle, ev_oracle, random_oracle, EV_TIE_TOLERANCE};
pub use split::{split_dataset, split_records, DatasetSplit};
pub use synthetic::{generate_problems, GeneratorConfig};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities of a gamble must sum to one within this tolerance.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    #[serde(rename = "p")]
    pub probability: f64,
    #[serde(rename = "v")]
    pub value: f64,
}

impl Outcome {
    pub fn new(probability: f64, value: f64) -> Self {
        Self { probability, value }
    }
}

/// A lottery over monetary outcomes. Construction validates the outcome list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Outcome>", into = "Vec<Outcome>")]
pub struct Gamble {
    outcomes: Vec<Outcome>,
}

impl Gamble {
    pub fn new(outcomes: Vec<Outcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::domain("a gamble needs at least one outcome"));
        }
        for o in &outcomes {
            if !(0.0..=1.0).contains(&o.probability) {
                return Err(Error::domain(format!(
                    "outcome probability {} outside [0, 1]",
                    o.probability
                )));
            }
            if !o.value.is_finite() {
                return Err(Error::domain("outcome value must be finite"));
            }
        }
        let total: f64 = outcomes.iter().map(|o| o.probability).sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(Error::domain(format!(
                "outcome probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { outcomes })
    }

    /// Convenience constructor from `(probability, value)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(p, v)| Outcome::new(p, v)).collect())
    }

    /// A sure thing.
    pub fn certain(value: f64) -> Self {
        Self { outcomes: vec![Outcome::new(1.0, value)] }
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn expected_value(&self) -> f64 {
        expected_value(self)
    }

    pub fn max_value(&self) -> f64 {
        self.outcomes.iter().map(|o| o.value).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.outcomes.iter().map(|o| o.value).fold(f64::INFINITY, f64::min)
    }
}

impl TryFrom<Vec<Outcome>> for Gamble {
    type Error = Error;

    fn try_from(outcomes: Vec<Outcome>) -> Result<Self> {
        Gamble::new(outcomes)
    }
}

impl From<Gamble> for Vec<Outcome> {
    fn from(g: Gamble) -> Self {
        g.outcomes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceProblem {
    pub id: String,
    pub option_a: Gamble,
    pub option_b: Gamble,
}

impl ChoiceProblem {
    pub fn new(id: impl Into<String>, option_a: Gamble, option_b: Gamble) -> Self {
        Self { id: id.into(), option_a, option_b }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSource {
    Human,
    Ev,
    Complexity,
    Random,
}

impl std::str::FromStr for TargetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "human" => Ok(Self::Human),
            "ev" => Ok(Self::Ev),
            "complexity" => Ok(Self::Complexity),
            "random" => Ok(Self::Random),
            other => Err(Error::Parse(format!("unknown target source {other:?}"))),
        }
    }
}

impl std::fmt::Display for TargetSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Human => "human",
            Self::Ev => "ev",
            Self::Complexity => "complexity",
            Self::Random => "random",
        })
    }
}

/// Observed (or synthetic) proportion of choices for option B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralTarget {
    pub problem_id: String,
    pub b_rate: f64,
    pub source: TargetSource,
}

impl BehavioralTarget {
    pub fn new(problem_id: impl Into<String>, b_rate: f64, source: TargetSource) -> Result<Self> {
        if !(0.0..=1.0).contains(&b_rate) {
            return Err(Error::domain(format!("b_rate {b_rate} outside [0, 1]")));
        }
        Ok(Self { problem_id: problem_id.into(), b_rate, source })
    }
}

pub fn expected_value(g: &Gamble) -> f64 {
    g.outcomes.iter().map(|o| o.probability * o.value).sum()
}

fn render_outcome(out: &mut String, o: &Outcome) {
    let verb = if o.value < 0.0 { "lose" } else { "win" };
    // `abs` also folds a negative zero into "$0.0".
    let _ = write!(out, "a {:.1}% chance to {verb} ${:.1}", o.probability * 100.0, o.value.abs());
}

fn render_option(out: &mut String, label: char, g: &Gamble) {
    let _ = write!(out, "Option {label} offers ");
    if let [only] = g.outcomes() {
        render_outcome(out, only);
    } else {
        for (i, o) in g.outcomes().iter().enumerate() {
            if i > 0 {
                out.push_str("; ");
            }
            let _ = write!(out, "({}) ", i + 1);
            render_outcome(out, o);
        }
    }
    out.push('.');
}

/// Natural-language description of both options, one line each.
pub fn render_problem(problem: &ChoiceProblem) -> String {
    let mut out = String::new();
    render_option(&mut out, 'A', &problem.option_a);
    out.push('\n');
    render_option(&mut out, 'B', &problem.option_b);
    out
}

/// SFT target text: option-B percentage rounded half away from zero, option A as the complement.
pub fn format_target_json(b_rate: f64) -> Result<String> {
    let b = target_percent(b_rate)?;
    Ok(format!("{{\"option_A\": {}, \"option_B\": {}}}", 100 - b, b))
}

/// Centaur-style target: the same JSON with both numbers wrapped in `<<` `>>`.
pub fn format_centaur_target(b_rate: f64) -> Result<String> {
    let b = target_percent(b_rate)?;
    Ok(format!("{{\"option_A\": <<{}>>, \"option_B\": <<{}>>}}", 100 - b, b))
}

/// Integer option-B percentage used by the SFT formatters.
pub fn target_percent(b_rate: f64) -> Result<u32> {
    if !(0.0..=1.0).contains(&b_rate) {
        return Err(Error::domain(format!("b_rate {b_rate} outside [0, 1]")));
    }
    // f64::round rounds half away from zero.
    Ok((b_rate * 100.0).round() as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn appendix_problem() -> ChoiceProblem {
        ChoiceProblem::new(
            "fixture",
            Gamble::from_pairs(&[(0.5, 2.0), (0.5, 0.0)]).unwrap(),
            Gamble::certain(1.0),
        )
    }

    #[test]
    fn renders_multi_and_single_outcome_options() {
        assert_eq!(
            render_problem(&appendix_problem()),
            "Option A offers (1) a 50.0% chance to win $2.0; (2) a 50.0% chance to win $0.0.\n\
             Option B offers a 100.0% chance to win $1.0."
        );
    }

    #[test]
    fn renders_sure_zero() {
        let p = ChoiceProblem::new("z", Gamble::certain(3.0), Gamble::certain(0.0));
        assert!(render_problem(&p).ends_with("Option B offers a 100.0% chance to win $0.0."));
        let neg_zero = ChoiceProblem::new("z", Gamble::certain(3.0), Gamble::certain(-0.0));
        assert!(render_problem(&neg_zero).ends_with("a 100.0% chance to win $0.0."));
    }

    #[test]
    fn renders_hand_checked_gamble() {
        let p = ChoiceProblem::new(
            "fig1",
            Gamble::from_pairs(&[(0.9, 25.0), (0.1, 92.0)]).unwrap(),
            Gamble::certain(27.0),
        );
        assert!(render_problem(&p).starts_with(
            "Option A offers (1) a 90.0% chance to win $25.0; (2) a 10.0% chance to win $92.0.\n"
        ));
    }

    #[test]
    fn renders_losses() {
        let p = ChoiceProblem::new(
            "loss",
            Gamble::from_pairs(&[(0.25, -10.5), (0.75, 4.0)]).unwrap(),
            Gamble::certain(-1.0),
        );
        assert_eq!(
            render_problem(&p),
            "Option A offers (1) a 25.0% chance to lose $10.5; (2) a 75.0% chance to win $4.0.\n\
             Option B offers a 100.0% chance to lose $1.0."
        );
    }

    #[test]
    fn target_json_examples() {
        assert_eq!(format_target_json(0.7111).unwrap(), r#"{"option_A": 29, "option_B": 71}"#);
        assert_eq!(format_target_json(0.5).unwrap(), r#"{"option_A": 50, "option_B": 50}"#);
        assert_eq!(format_target_json(0.715).unwrap(), r#"{"option_A": 28, "option_B": 72}"#);
        assert_eq!(format_target_json(0.0).unwrap(), r#"{"option_A": 100, "option_B": 0}"#);
        assert!(format_target_json(1.01).is_err());
        assert!(format_target_json(-0.1).is_err());
        assert!(format_target_json(f64::NAN).is_err());
    }

    #[test]
    fn centaur_target_brackets_both_numbers() {
        assert_eq!(
            format_centaur_target(0.7111).unwrap(),
            r#"{"option_A": <<29>>, "option_B": <<71>>}"#
        );
    }

    #[test]
    fn expected_values() {
        assert_eq!(expected_value(&Gamble::certain(27.0)), 27.0);
        let g = Gamble::from_pairs(&[(0.9, 25.0), (0.1, 92.0)]).unwrap();
        assert!((expected_value(&g) - 31.7).abs() < 1e-12);
        let h = Gamble::from_pairs(&[(0.5, 2.0), (0.5, 0.0)]).unwrap();
        assert_eq!(expected_value(&h), 1.0);
    }

    #[test]
    fn gamble_invariants() {
        assert!(Gamble::new(vec![]).is_err());
        assert!(Gamble::from_pairs(&[(0.5, 1.0), (0.4, 2.0)]).is_err());
        assert!(Gamble::from_pairs(&[(1.5, 1.0), (-0.5, 2.0)]).is_err());
        assert!(Gamble::from_pairs(&[(0.1, 1.0); 10]).is_ok());
    }

    #[test]
    fn gamble_serde_validates() {
        let g: Gamble = serde_json::from_str(r#"[{"p":0.5,"v":2},{"p":0.5,"v":0}]"#).unwrap();
        assert_eq!(g.len(), 2);
        assert!(serde_json::from_str::<Gamble>(r#"[{"p":0.5,"v":2}]"#).is_err());
        assert_eq!(serde_json::to_string(&Gamble::certain(1.0)).unwrap(), r#"[{"p":1.0,"v":1.0}]"#);
    }

    #[test]
    fn target_range() {
        assert!(BehavioralTarget::new("x", 1.2, TargetSource::Human).is_err());
        assert!(BehavioralTarget::new("x", 0.3, TargetSource::Human).is_ok());
    }
}
