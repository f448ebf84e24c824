//! Evaluation and analytics over completions: MSE against behavioral targets,
//! learning curves, CoT-swap continuations, thought clustering, mechanism
//! frequencies and the t tests used to compare them.

mod cluster;
mod mechanisms;
mod plot;
mod stats;

pub use cluster::{
    cosine, embed_thoughts, fnv1a, kmeans_cluster, kmeans_with, pca_2d, Embedder, HashedBowEmbedder, KMeansResult,
    ThoughtCluster, DEFAULT_MAX_ITER,
};
pub use mechanisms::{mechanism_series, MechanismSeries, TaggedThought};
pub use plot::{line_chart_svg, Series};
pub use stats::{mean_se, one_sample_t, one_sample_t_summary, paired_t, TTest};

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{continue_chat, ChatClient, SamplingParams};
use crate::dataset::ChoiceProblem;
use crate::error::{Error, Result};
use crate::parsing::{parse_prediction, CompletionRecord};
use crate::policy::{FeatureNormalizer, ToyPolicyParams};
use crate::prompts::{user_prompt, PromptStyle};
use crate::training::derive_seed;

/// Reported reference values, printed next to local results by the report command.
pub mod reported {
    pub const TEST_MSE_SFT: f64 = 0.0144;
    pub const TEST_MSE_CENTAUR: f64 = 0.0155;
    pub const TEST_MSE_RL: f64 = 0.0148;
    /// Rows: continuing model (base, RL); columns: CoT source (base, RL).
    pub const SWAP_MATRIX: [[f64; 2]; 2] = [[0.0694, 0.0212], [0.0695, 0.0148]];
    pub const FOREIGN_COT_SFT: f64 = 0.0785;
    pub const FOREIGN_COT_CENTAUR: f64 = 0.0728;
    pub const HUMAN_EVAL_RATE: f64 = 0.615;
    pub const HUMAN_EVAL_T: f64 = 2.19;
    pub const HUMAN_EVAL_DF: usize = 19;
    /// Share of thoughts invoking expected value or risk aversion.
    pub const TOP_MECHANISM_SHARE: (f64, f64) = (0.29, 0.36);
}

/// Rate scored for a missing or incoherent prediction.
pub const INVALID_IMPUTATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub checkpoint: String,
    pub problem_ids: Vec<String>,
    pub squared_errors: Vec<f64>,
    /// Problems whose prediction was missing or incoherent and got imputed.
    pub invalid: Vec<bool>,
    pub mean: f64,
    pub se: f64,
    pub invalid_rate: f64,
}

impl EvalResult {
    pub fn n(&self) -> usize {
        self.squared_errors.len()
    }

    /// Per-problem rows as CSV: problem_id, squared_error, invalid.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["problem_id", "squared_error", "invalid"])?;
        for ((id, e), inv) in self.problem_ids.iter().zip(&self.squared_errors).zip(&self.invalid) {
            out.write_record([id.as_str(), &e.to_string(), &inv.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Option-B rate per problem; `None` for missing or incoherent predictions.
pub fn predictions_from_records(records: &[CompletionRecord]) -> BTreeMap<String, Option<f64>> {
    records.iter().map(|r| (r.problem_id.clone(), r.prediction().b_rate())).collect()
}

/// Mean squared error over problems present in both maps, in id order.
/// Invalid predictions are scored as [`INVALID_IMPUTATION`] and flagged.
pub fn mse_eval(
    checkpoint: &str,
    predictions: &BTreeMap<String, Option<f64>>,
    targets: &BTreeMap<String, f64>,
) -> Result<EvalResult> {
    let mut problem_ids = Vec::new();
    let mut squared_errors = Vec::new();
    let mut invalid = Vec::new();
    for (id, pred) in predictions {
        let Some(&p) = targets.get(id) else { continue };
        let o = pred.unwrap_or(INVALID_IMPUTATION);
        problem_ids.push(id.clone());
        squared_errors.push((o - p) * (o - p));
        invalid.push(pred.is_none());
    }
    if problem_ids.is_empty() {
        return Err(Error::domain("predictions and targets share no problems"));
    }
    let (mean, se) = mean_se(&squared_errors);
    let invalid_rate = invalid.iter().filter(|&&b| b).count() as f64 / invalid.len() as f64;
    Ok(EvalResult { checkpoint: checkpoint.to_string(), problem_ids, squared_errors, invalid, mean, se, invalid_rate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: f64,
    pub mse: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub method: String,
    pub points: Vec<CurvePoint>,
    /// Index into `points` of the lowest MSE; the earliest wins ties.
    pub argmin: usize,
}

impl LearningCurve {
    pub fn best(&self) -> CurvePoint {
        self.points[self.argmin]
    }
}

pub fn learning_curve(method: &str, evals: &[(f64, EvalResult)]) -> Result<LearningCurve> {
    if evals.is_empty() {
        return Err(Error::domain("learning curve needs at least one checkpoint"));
    }
    let mut points: Vec<CurvePoint> = evals.iter().map(|(e, r)| CurvePoint { epoch: *e, mse: r.mean, se: r.se }).collect();
    points.sort_by(|a, b| a.epoch.total_cmp(&b.epoch));
    let argmin = (0..points.len()).fold(0, |best, i| if points[i].mse < points[best].mse { i } else { best });
    Ok(LearningCurve { method: method.to_string(), points, argmin })
}

/// One sampled toy completion per problem, parsed like a remote completion.
pub fn toy_predictions(
    params: &ToyPolicyParams,
    normalizer: &FeatureNormalizer,
    problems: &[ChoiceProblem],
    checkpoint: &str,
    seed: u64,
    max_tokens: usize,
) -> Vec<CompletionRecord> {
    problems
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let seq = params.sample(&normalizer.featurize(p), derive_seed(seed, &[i as u64]), max_tokens);
            CompletionRecord::from_text(p.id.clone(), checkpoint, seq.text)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Continuation {
    pub problem_id: String,
    pub cot_source: String,
    pub continuer: String,
    pub text: String,
    pub b_rate: Option<f64>,
}

/// Hand `continuer` each source CoT with its final JSON removed and read the
/// prediction it completes with.
pub fn continue_cots(
    problems: &HashMap<String, ChoiceProblem>,
    sources: &[CompletionRecord],
    continuer: &ChatClient,
    params: SamplingParams,
) -> Result<Vec<Continuation>> {
    sources
        .par_iter()
        .map(|rec| {
            let problem = problems
                .get(&rec.problem_id)
                .ok_or_else(|| Error::Setup(format!("no problem text for {}", rec.problem_id)))?;
            let user = user_prompt(PromptStyle::Reasoning, problem);
            let text = continue_chat(continuer, &user, &rec.cot(), params)?;
            let b_rate = parse_prediction(&text).b_rate();
            Ok(Continuation {
                problem_id: rec.problem_id.clone(),
                cot_source: rec.checkpoint.clone(),
                continuer: continuer.backend().model().to_string(),
                text,
                b_rate,
            })
        })
        .collect()
}

fn continuation_predictions(cs: &[Continuation]) -> BTreeMap<String, Option<f64>> {
    cs.iter().map(|c| (c.problem_id.clone(), c.b_rate)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapMatrix {
    pub labels: [String; 2],
    /// `cells[continuer][cot_source]`. Diagonal cells score the original
    /// completions; off-diagonal cells score continuations of the other
    /// model's reasoning.
    pub cells: [[EvalResult; 2]; 2],
    pub continuations: Vec<Continuation>,
}

impl SwapMatrix {
    pub fn means(&self) -> [[f64; 2]; 2] {
        [[self.cells[0][0].mean, self.cells[0][1].mean], [self.cells[1][0].mean, self.cells[1][1].mean]]
    }
}

pub struct SwapModel<'a> {
    pub label: String,
    pub completions: &'a [CompletionRecord],
    pub continuer: &'a ChatClient,
}

pub fn swap_cot_experiment(
    problems: &HashMap<String, ChoiceProblem>,
    a: SwapModel<'_>,
    b: SwapModel<'_>,
    targets: &BTreeMap<String, f64>,
    params: SamplingParams,
) -> Result<SwapMatrix> {
    let own_a = mse_eval(&format!("{} on {}", a.label, a.label), &predictions_from_records(a.completions), targets)?;
    let own_b = mse_eval(&format!("{} on {}", b.label, b.label), &predictions_from_records(b.completions), targets)?;
    let a_on_b = continue_cots(problems, b.completions, a.continuer, params)?;
    let b_on_a = continue_cots(problems, a.completions, b.continuer, params)?;
    let cell_ab = mse_eval(&format!("{} on {}", a.label, b.label), &continuation_predictions(&a_on_b), targets)?;
    let cell_ba = mse_eval(&format!("{} on {}", b.label, a.label), &continuation_predictions(&b_on_a), targets)?;
    let mut continuations = a_on_b;
    continuations.extend(b_on_a);
    Ok(SwapMatrix { labels: [a.label, b.label], cells: [[own_a, cell_ab], [cell_ba, own_b]], continuations })
}

/// Continue CoTs produced by another model (e.g. an SFT-generated rationale)
/// and score the resulting predictions.
pub fn foreign_cot_test(
    problems: &HashMap<String, ChoiceProblem>,
    sources: &[CompletionRecord],
    continuer: &ChatClient,
    targets: &BTreeMap<String, f64>,
    params: SamplingParams,
) -> Result<(EvalResult, Vec<Continuation>)> {
    let cs = continue_cots(problems, sources, continuer, params)?;
    let label = sources.first().map_or("foreign", |r| r.checkpoint.as_str());
    let eval = mse_eval(&format!("continued {label}"), &continuation_predictions(&cs), targets)?;
    Ok((eval, cs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSpace {
    /// Cluster in the full embedding space.
    #[default]
    Embedding,
    /// Cluster the 2D principal-component projection.
    Projected,
}

impl std::str::FromStr for ClusterSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(Self::Embedding),
            "projected" | "2d" => Ok(Self::Projected),
            other => Err(Error::Parse(format!("unknown cluster space {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub size: usize,
    pub representative: String,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub space: ClusterSpace,
    pub k: usize,
    pub seed: u64,
    pub clusters: Vec<ClusterSummary>,
    pub objective: Vec<f64>,
    pub projection: Vec<[f64; 2]>,
}

pub fn cluster_thoughts<S: AsRef<str>>(
    thoughts: &[S],
    embedder: &dyn Embedder,
    k: usize,
    seed: u64,
    space: ClusterSpace,
) -> Result<ClusterReport> {
    let vectors = embed_thoughts(thoughts, embedder)?;
    let projection = pca_2d(&vectors)?;
    let result = match space {
        ClusterSpace::Embedding => kmeans_cluster(&vectors, k, seed)?,
        ClusterSpace::Projected => {
            let flat: Vec<Vec<f64>> = projection.iter().map(|p| p.to_vec()).collect();
            kmeans_cluster(&flat, k, seed)?
        }
    };
    let clusters = result
        .clusters
        .iter()
        .map(|c| ClusterSummary {
            id: c.id,
            size: c.members.len(),
            representative: thoughts.get(c.representative).map_or(String::new(), |t| t.as_ref().to_string()),
            members: c.members.clone(),
        })
        .collect();
    Ok(ClusterReport { space, k, seed, clusters, objective: result.objective, projection })
}
