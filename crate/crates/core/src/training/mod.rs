//! Training: the clipped group-relative objective with a KL penalty, SFT and
//! bracketed-only losses, learning-rate schedules, and toy training loops.

mod objective;
mod optim;
mod runner;
mod sft;

pub use objective::{
    clipped_term, exact_sequence_kl, grpo_objective, kl_estimate, kl_penalty, sequence_kl, toy_objective,
    ObjectiveEval, ScoredGroup, ToyGroup,
};
pub use optim::{Optimizer, OptimizerKind};
pub use runner::{
    derive_seed, expected_outcome, grpo_step, rollout_group, train, train_grpo, train_sft, StepContext, StepReport, ToyDataset,
    ToyProblem, TrainMethod, TrainRun,
};
pub use sft::{masked_nll, sft_loss, sft_mask, sft_target, MaskMode};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::rewards::{AdvantageMode, RewardFunction};

/// `base_lr * 0.5 * (1 + cos(pi * step / total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    #[default]
    Cosine,
    Constant,
}

impl Scheduler {
    pub fn lr(self, step: usize, total_steps: usize, base_lr: f64) -> f64 {
        match self {
            Self::Cosine => cosine_lr(step, total_steps, base_lr),
            Self::Constant => base_lr,
        }
    }
}

impl std::str::FromStr for Scheduler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "constant" => Ok(Self::Constant),
            other => Err(Error::Parse(format!("unknown scheduler {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scheduler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::Constant => "constant",
        })
    }
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn parse_snake<T: for<'de> Deserialize<'de>>(key: &str, raw: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(raw.to_string()))
        .map_err(|_| Error::Parse(format!("invalid value {raw:?} for {key}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub scheduler: Scheduler,
    pub epochs: usize,
    pub max_tokens: usize,
    pub problems_per_step: usize,
    pub reward_fn: RewardFunction,
    pub advantage_mode: AdvantageMode,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for GrpoConfig {
    /// Toy-policy defaults.
    fn default() -> Self {
        Self {
            group_size: 12,
            eps_low: 0.2,
            eps_high: 0.28,
            beta: 1e-4,
            learning_rate: 1.0,
            scheduler: Scheduler::Cosine,
            epochs: 3,
            max_tokens: 1024,
            problems_per_step: 1,
            reward_fn: RewardFunction::AbsoluteError,
            advantage_mode: AdvantageMode::Centered,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    /// The settings used for the full-size language model.
    pub fn reference() -> Self {
        Self { learning_rate: 3e-6, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.eps_low > 0.0 && self.eps_low < 1.0 && self.eps_high > 0.0 && self.eps_high < 1.0) {
            return bad(format!("clip range ({}, {}) must lie in (0, 1)", self.eps_low, self.eps_high));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.learning_rate >= 0.0) || self.learning_rate.is_infinite() {
            return bad(format!("learning rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.problems_per_step == 0 || self.max_tokens == 0 {
            return bad("problems_per_step and max_tokens must be positive".into());
        }
        Ok(())
    }

    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let out = Self {
            group_size: cfg.get_or("group_size", d.group_size)?,
            eps_low: cfg.get_or("eps_low", d.eps_low)?,
            eps_high: cfg.get_or("eps_high", d.eps_high)?,
            beta: cfg.get_or("beta", d.beta)?,
            learning_rate: cfg.get_or("learning_rate", d.learning_rate)?,
            scheduler: cfg.get_or("scheduler", d.scheduler)?,
            epochs: cfg.get_or("epochs", d.epochs)?,
            max_tokens: cfg.get_or("max_tokens", d.max_tokens)?,
            problems_per_step: cfg.get_or("problems_per_step", d.problems_per_step)?,
            reward_fn: cfg.get_or("reward_fn", d.reward_fn)?,
            advantage_mode: match cfg.get("advantage_mode") {
                Some(raw) => parse_snake("advantage_mode", raw)?,
                None => d.advantage_mode,
            },
            optimizer: cfg.get_or("optimizer", d.optimizer)?,
            seed: cfg.get_or("seed", d.seed)?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("group_size", self.group_size);
        kv.set("eps_low", self.eps_low);
        kv.set("eps_high", self.eps_high);
        kv.set("beta", self.beta);
        kv.set("learning_rate", self.learning_rate);
        kv.set("scheduler", self.scheduler);
        kv.set("epochs", self.epochs);
        kv.set("max_tokens", self.max_tokens);
        kv.set("problems_per_step", self.problems_per_step);
        kv.set("reward_fn", snake(&self.reward_fn));
        kv.set("advantage_mode", snake(&self.advantage_mode));
        kv.set("optimizer", self.optimizer);
        kv.set("seed", self.seed);
        kv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub accumulation_steps: usize,
    pub mask_mode: MaskMode,
    pub scheduler: Scheduler,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 6,
            accumulation_steps: 8,
            mask_mode: MaskMode::AllTokens,
            scheduler: Scheduler::Constant,
            optimizer: OptimizerKind::adam(),
            seed: 0,
        }
    }
}

impl SftConfig {
    /// The settings used for the full-size language model.
    pub fn reference() -> Self {
        Self { learning_rate: 1e-5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.accumulation_steps == 0 {
            return Err(Error::Validation("SFT needs epochs >= 1 and accumulation_steps >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || self.learning_rate.is_infinite() {
            return Err(Error::Validation(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let out = Self {
            learning_rate: cfg.get_or("learning_rate", d.learning_rate)?,
            epochs: cfg.get_or("epochs", d.epochs)?,
            accumulation_steps: cfg.get_or("accumulation_steps", d.accumulation_steps)?,
            mask_mode: cfg.get_or("mask_mode", d.mask_mode)?,
            scheduler: cfg.get_or("scheduler", d.scheduler)?,
            optimizer: cfg.get_or("optimizer", d.optimizer)?,
            seed: cfg.get_or("seed", d.seed)?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("learning_rate", self.learning_rate);
        kv.set("epochs", self.epochs);
        kv.set("accumulation_steps", self.accumulation_steps);
        kv.set("mask_mode", snake(&self.mask_mode));
        kv.set("scheduler", self.scheduler);
        kv.set("optimizer", self.optimizer);
        kv.set("seed", self.seed);
        kv
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub step: usize,
    pub epoch_fraction: f64,
    pub mean_outcome: f64,
    pub mean_format: f64,
    pub mean_length: f64,
    pub kl: f64,
    pub lr: f64,
    pub loss: f64,
}

impl TrainMetrics {
    pub fn is_finite(&self) -> bool {
        [self.epoch_fraction, self.mean_outcome, self.mean_format, self.mean_length, self.kl, self.lr, self.loss]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn write_metrics_csv<W: Write>(w: W, rows: &[TrainMetrics]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(r: R) -> Result<Vec<TrainMetrics>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}
