use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use choicelab::analysis;
use choicelab::dataset::{self, Gamble};
use choicelab::parsing;
use choicelab::policy::{FeatureNormalizer, ToyGrammar, ToyPolicyParams};
use choicelab::rewards;
use choicelab::training::{self, GrpoConfig, MaskMode, SftConfig, ToyDataset};

fn err(e: choicelab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "ChoiceProblem", module = "choicelab_py", from_py_object)]
#[derive(Clone)]
struct PyChoiceProblem {
    inner: dataset::ChoiceProblem,
}

#[pymethods]
impl PyChoiceProblem {
    /// Options are lists of (probability, payoff) pairs.
    #[new]
    fn new(id: String, option_a: Vec<(f64, f64)>, option_b: Vec<(f64, f64)>) -> PyResult<Self> {
        let a = Gamble::from_pairs(&option_a).map_err(err)?;
        let b = Gamble::from_pairs(&option_b).map_err(err)?;
        Ok(Self { inner: dataset::ChoiceProblem::new(id, a, b) })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    fn expected_values(&self) -> (f64, f64) {
        (self.inner.option_a.expected_value(), self.inner.option_b.expected_value())
    }

    fn render(&self) -> String {
        dataset::render_problem(&self.inner)
    }

    fn ev_oracle(&self) -> f64 {
        dataset::ev_oracle(&self.inner).b_rate
    }

    fn complexity_oracle(&self) -> f64 {
        dataset::complexity_oracle(&self.inner).b_rate
    }

    fn __repr__(&self) -> String {
        format!("ChoiceProblem({:?})", self.inner.id)
    }
}

#[pyfunction]
#[pyo3(signature = (n, seed=0))]
fn generate_problems(n: usize, seed: u64) -> Vec<PyChoiceProblem> {
    dataset::generate_problems(n, seed, &dataset::GeneratorConfig::default())
        .into_iter()
        .map(|inner| PyChoiceProblem { inner })
        .collect()
}

#[pyfunction]
fn random_oracle(ids: Vec<String>, seed: u64) -> Vec<f64> {
    dataset::random_oracle(&ids, seed).into_iter().map(|t| t.b_rate).collect()
}

#[pyfunction]
fn format_target_json(b_rate: f64) -> PyResult<String> {
    dataset::format_target_json(b_rate).map_err(err)
}

/// (o_a, o_b) as fractions for a coherent prediction, otherwise None.
#[pyfunction]
fn parse_prediction(text: &str) -> Option<(f64, f64)> {
    parsing::parse_prediction(text).coherent().map(|p| (p.o_a, p.o_b))
}

#[pyfunction]
fn strip_final_json(text: &str) -> String {
    parsing::strip_final_json(text)
}

#[pyfunction]
fn segment_thoughts(text: &str) -> Vec<String> {
    parsing::segment_thoughts(text).into_iter().map(|t| t.text).collect()
}

#[pyfunction]
fn outcome_reward(text: &str, b_rate: f64) -> f64 {
    rewards::outcome_reward(&parsing::parse_prediction(text), b_rate)
}

#[pyfunction]
fn format_reward(text: &str) -> f64 {
    rewards::format_reward(&parsing::format_features(text))
}

#[pyfunction]
fn group_advantages(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    rewards::group_advantages(&rewards).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (ratio, advantage, eps_low=0.2, eps_high=0.28))]
fn clipped_term(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    training::clipped_term(ratio, advantage, &GrpoConfig { eps_low, eps_high, ..GrpoConfig::default() })
}

#[pyfunction]
fn masked_nll(logprobs: Vec<f64>, mask: Vec<bool>) -> PyResult<f64> {
    training::masked_nll(&logprobs, &mask).map_err(err)
}

/// A toy policy together with the feature normalizer it was trained with.
#[pyclass(name = "ToyPolicy", module = "choicelab_py")]
struct PyToyPolicy {
    params: ToyPolicyParams,
    normalizer: FeatureNormalizer,
}

#[pymethods]
impl PyToyPolicy {
    #[getter]
    fn n_params(&self) -> usize {
        self.params.n_params()
    }

    #[pyo3(signature = (problem, seed=0, max_tokens=64))]
    fn sample(&self, problem: &PyChoiceProblem, seed: u64, max_tokens: usize) -> String {
        self.params.sample(&self.normalizer.featurize(&problem.inner), seed, max_tokens).text
    }

    /// Probability of each emitted option-B percentage.
    fn prediction_distribution(&self, problem: &PyChoiceProblem) -> PyResult<Vec<(u32, f64)>> {
        self.params.prediction_distribution(&self.normalizer.featurize(&problem.inner)).map_err(err)
    }

    fn expected_prediction(&self, problem: &PyChoiceProblem) -> PyResult<f64> {
        Ok(self.prediction_distribution(problem)?.iter().map(|&(b, p)| p * f64::from(b) / 100.0).sum())
    }
}

fn toy_data(problems: &[PyChoiceProblem], targets: Vec<f64>) -> PyResult<ToyDataset> {
    if problems.len() != targets.len() {
        return Err(PyValueError::new_err("problems and targets differ in length"));
    }
    let ps: Vec<_> = problems.iter().map(|p| p.inner.clone()).collect();
    let ts = ps
        .iter()
        .zip(targets)
        .map(|(p, b)| dataset::BehavioralTarget::new(p.id.clone(), b, dataset::TargetSource::Human))
        .collect::<choicelab::Result<Vec<_>>>()
        .map_err(err)?;
    ToyDataset::new(&ps, &ts, FeatureNormalizer::fit(&ps)).map_err(err)
}

/// Train a toy policy with group-relative RL. Returns the policy and the
/// per-epoch mean outcome reward.
#[pyfunction]
#[pyo3(signature = (problems, targets, epochs=3, learning_rate=None, seed=0, max_thoughts=3))]
fn train_grpo(
    py: Python<'_>,
    problems: Vec<PyChoiceProblem>,
    targets: Vec<f64>,
    epochs: usize,
    learning_rate: Option<f64>,
    seed: u64,
    max_thoughts: usize,
) -> PyResult<(PyToyPolicy, Vec<f64>)> {
    let data = toy_data(&problems, targets)?;
    let d = GrpoConfig::default();
    let cfg = GrpoConfig { epochs, seed, learning_rate: learning_rate.unwrap_or(d.learning_rate), ..d };
    let init = ToyPolicyParams::zeros(ToyGrammar { max_thoughts }, choicelab::policy::ProblemFeatures::DIM);
    let run = py.detach(|| training::train_grpo(init, &data, &cfg)).map_err(err)?;
    let curve = run.epoch_mean_outcome();
    Ok((PyToyPolicy { params: run.params, normalizer: data.normalizer }, curve))
}

/// Supervised toy training; `bracketed` restricts the loss to the bracketed
/// number tokens. Returns the policy and the training NLL before and after each epoch.
#[pyfunction]
#[pyo3(signature = (problems, targets, epochs=6, bracketed=false, seed=0))]
fn train_sft(
    py: Python<'_>,
    problems: Vec<PyChoiceProblem>,
    targets: Vec<f64>,
    epochs: usize,
    bracketed: bool,
    seed: u64,
) -> PyResult<(PyToyPolicy, Vec<f64>)> {
    let data = toy_data(&problems, targets)?;
    let mask_mode = if bracketed { MaskMode::BracketedOnly } else { MaskMode::AllTokens };
    let cfg = SftConfig { epochs, seed, mask_mode, ..SftConfig::default() };
    let init = ToyPolicyParams::zeros(ToyGrammar::default(), choicelab::policy::ProblemFeatures::DIM);
    let run = py.detach(|| training::train_sft(init, &data, &cfg)).map_err(err)?;
    Ok((PyToyPolicy { params: run.params, normalizer: data.normalizer }, run.epoch_losses))
}

/// Mean squared error over shared ids; None predictions are imputed.
/// Returns (mean, se, invalid_rate).
#[pyfunction]
fn mse_eval(predictions: BTreeMap<String, Option<f64>>, targets: BTreeMap<String, f64>) -> PyResult<(f64, f64, f64)> {
    let r = analysis::mse_eval("python", &predictions, &targets).map_err(err)?;
    Ok((r.mean, r.se, r.invalid_rate))
}

/// (t, df, two-sided p) against `null_mean`.
#[pyfunction]
fn one_sample_t(values: Vec<f64>, null_mean: f64) -> PyResult<(f64, usize, f64)> {
    let t = analysis::one_sample_t(&values, null_mean).map_err(err)?;
    Ok((t.t, t.df, t.p_two_sided))
}

#[pyfunction]
fn one_sample_t_summary(mean: f64, se: f64, n: usize, null_mean: f64) -> PyResult<(f64, usize, f64)> {
    let t = analysis::one_sample_t_summary(mean, se, n, null_mean).map_err(err)?;
    Ok((t.t, t.df, t.p_two_sided))
}

#[pyfunction]
fn paired_t(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, usize, f64)> {
    let t = analysis::paired_t(&a, &b).map_err(err)?;
    Ok((t.t, t.df, t.p_two_sided))
}

/// (assignments, objective per iteration).
#[pyfunction]
#[pyo3(signature = (vectors, k, seed=0))]
fn kmeans(vectors: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let r = analysis::kmeans_cluster(&vectors, k, seed).map_err(err)?;
    Ok((r.assignments, r.objective))
}

/// Cluster thought texts with the hashed bag-of-words embedder; returns the
/// cluster id of each thought.
#[pyfunction]
#[pyo3(signature = (thoughts, k, seed=0))]
fn cluster_thoughts(thoughts: Vec<String>, k: usize, seed: u64) -> PyResult<Vec<usize>> {
    let emb = analysis::HashedBowEmbedder::default();
    let report = analysis::cluster_thoughts(&thoughts, &emb, k, seed, analysis::ClusterSpace::Embedding).map_err(err)?;
    let mut ids = vec![0; thoughts.len()];
    for c in &report.clusters {
        for &m in &c.members {
            ids[m] = c.id;
        }
    }
    Ok(ids)
}

#[pymodule]
fn choicelab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChoiceProblem>()?;
    m.add_class::<PyToyPolicy>()?;
    m.add_function(wrap_pyfunction!(generate_problems, m)?)?;
    m.add_function(wrap_pyfunction!(random_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(format_target_json, m)?)?;
    m.add_function(wrap_pyfunction!(parse_prediction, m)?)?;
    m.add_function(wrap_pyfunction!(strip_final_json, m)?)?;
    m.add_function(wrap_pyfunction!(segment_thoughts, m)?)?;
    m.add_function(wrap_pyfunction!(outcome_reward, m)?)?;
    m.add_function(wrap_pyfunction!(format_reward, m)?)?;
    m.add_function(wrap_pyfunction!(group_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_term, m)?)?;
    m.add_function(wrap_pyfunction!(masked_nll, m)?)?;
    m.add_function(wrap_pyfunction!(train_grpo, m)?)?;
    m.add_function(wrap_pyfunction!(train_sft, m)?)?;
    m.add_function(wrap_pyfunction!(mse_eval, m)?)?;
    m.add_function(wrap_pyfunction!(one_sample_t, m)?)?;
    m.add_function(wrap_pyfunction!(one_sample_t_summary, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_thoughts, m)?)?;
    Ok(())
}
