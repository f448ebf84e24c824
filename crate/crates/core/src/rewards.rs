//! Outcome and format rewards, and group-relative advantages.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parsing::{FormatFeatures, PredictionOutcome};
use crate::policy::TokenSequence;

pub const FORMAT_SINGLE_JSON_BONUS: f64 = 0.25;
pub const FORMAT_POSITION_BONUS: f64 = 0.25;

/// Probability clamp used by the cross-entropy variant.
const CE_EPS: f64 = 1e-6;

/// Scoring rule for coherent predictions. `AbsoluteError` is the trained default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardFunction {
    /// `1 - |o_b - p_b|`
    #[default]
    AbsoluteError,
    /// `1 - (o_b - p_b)^2`
    SquaredError,
    /// `p_b ln o_b + (1 - p_b) ln(1 - o_b)`, with `o_b` clamped away from 0 and 1.
    NegCrossEntropy,
}

impl RewardFunction {
    fn score(self, o_b: f64, p_b: f64) -> f64 {
        match self {
            Self::AbsoluteError => 1.0 - (o_b - p_b).abs(),
            Self::SquaredError => 1.0 - (o_b - p_b).powi(2),
            Self::NegCrossEntropy => {
                let q = o_b.clamp(CE_EPS, 1.0 - CE_EPS);
                p_b * q.ln() + (1.0 - p_b) * (1.0 - q).ln()
            }
        }
    }

    /// Score for incoherent or missing predictions: the variant's worst value.
    fn invalid(self) -> f64 {
        match self {
            Self::AbsoluteError | Self::SquaredError => 0.0,
            Self::NegCrossEntropy => CE_EPS.ln(),
        }
    }
}

impl std::str::FromStr for RewardFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute_error" | "abs" => Ok(Self::AbsoluteError),
            "squared_error" | "sq" => Ok(Self::SquaredError),
            "neg_cross_entropy" | "ce" => Ok(Self::NegCrossEntropy),
            other => Err(Error::Parse(format!("unknown reward function {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub outcome: f64,
    pub format: f64,
    pub total: f64,
}

/// `1 - |o_b - p_b|` for coherent predictions, 0 otherwise.
pub fn outcome_reward(pred: &PredictionOutcome, b_rate: f64) -> f64 {
    outcome_reward_with(RewardFunction::AbsoluteError, pred, b_rate)
}

pub fn outcome_reward_with(f: RewardFunction, pred: &PredictionOutcome, b_rate: f64) -> f64 {
    match pred {
        PredictionOutcome::Coherent(p) => f.score(p.o_b, b_rate),
        PredictionOutcome::Incoherent { .. } | PredictionOutcome::Missing => f.invalid(),
    }
}

/// 0.25 for exactly one JSON block, another 0.25 if it follows the reasoning.
pub fn format_reward(features: &FormatFeatures) -> f64 {
    if features.json_count != 1 {
        return 0.0;
    }
    let mut r = FORMAT_SINGLE_JSON_BONUS;
    if features.prediction_after_reasoning {
        r += FORMAT_POSITION_BONUS;
    }
    r
}

pub fn total_reward(pred: &PredictionOutcome, b_rate: f64, features: &FormatFeatures) -> RewardBreakdown {
    total_reward_with(RewardFunction::AbsoluteError, pred, b_rate, features)
}

pub fn total_reward_with(
    f: RewardFunction,
    pred: &PredictionOutcome,
    b_rate: f64,
    features: &FormatFeatures,
) -> RewardBreakdown {
    let outcome = outcome_reward_with(f, pred, b_rate);
    let format = format_reward(features);
    RewardBreakdown { outcome, format, total: outcome + format }
}

/// How group rewards become advantages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// `R_i - mean(R)`.
    #[default]
    Centered,
    /// Centered and divided by the sample standard deviation (plus 1e-4).
    /// Diagnostic only: reproduces the collapse seen with the original GRPO normalization.
    StdNormalized,
}

/// Group-relative advantages: each reward minus the group mean, no scaling.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    group_advantages_with(rewards, AdvantageMode::Centered)
}

pub fn group_advantages_with(rewards: &[f64], mode: AdvantageMode) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::domain(format!(
            "a group needs at least 2 rewards for a contrast, got {}",
            rewards.len()
        )));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        // averaging identical values can be off by an ulp; keep the contrast exactly zero
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let centered = rewards.iter().map(|r| r - mean);
    Ok(match mode {
        AdvantageMode::Centered => centered.collect(),
        AdvantageMode::StdNormalized => {
            let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let scale = var.sqrt() + 1e-4;
            centered.map(|a| a / scale).collect()
        }
    })
}

/// A generated completion with its parsed prediction and reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub tokens: Option<TokenSequence>,
    /// Per-token log-probabilities under the sampling policy, when known.
    pub logprobs: Option<Vec<f64>>,
    pub prediction: PredictionOutcome,
    pub reward: RewardBreakdown,
}

/// One problem's G completions with their rewards and centered advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGroup {
    pub problem_id: String,
    pub completions: Vec<Completion>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl TrajectoryGroup {
    pub fn new(problem_id: impl Into<String>, completions: Vec<Completion>, mode: AdvantageMode) -> Result<Self> {
        let rewards: Vec<f64> = completions.iter().map(|c| c.reward.total).collect();
        let advantages = group_advantages_with(&rewards, mode)?;
        Ok(Self { problem_id: problem_id.into(), completions, rewards, advantages })
    }

    pub fn size(&self) -> usize {
        self.completions.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardLogRow {
    pub step: usize,
    pub problem_id: String,
    pub completion_index: usize,
    pub outcome: f64,
    pub format: f64,
    pub total: f64,
    pub advantage: f64,
}

impl RewardLogRow {
    pub fn from_group(step: usize, group: &TrajectoryGroup) -> Vec<Self> {
        group
            .completions
            .iter()
            .zip(&group.advantages)
            .enumerate()
            .map(|(i, (c, &advantage))| Self {
                step,
                problem_id: group.problem_id.clone(),
                completion_index: i,
                outcome: c.reward.outcome,
                format: c.reward.format,
                total: c.reward.total,
                advantage,
            })
            .collect()
    }
}

pub fn write_reward_log<W: Write>(w: W, rows: &[RewardLogRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}
