//! Pairwise human evaluation of reasoning: session creation, response
//! recording with an append-only event log, result aggregation, the HTTP API,
//! and run manifests for training artifacts.

mod api;

pub use api::{router, serve, AppState};

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{mean_se, one_sample_t, TTest};
use crate::error::{Error, Result};
use crate::parsing::{extract_json_blocks, strip_all_json};

pub const DEFAULT_TRIALS: usize = 10;
pub const LEFT_LABEL: &str = "Model A";
pub const RIGHT_LABEL: &str = "Model B";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub n_trials: usize,
    /// The model whose preference rate is reported.
    pub model_x: String,
    pub model_y: String,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { n_trials: DEFAULT_TRIALS, model_x: "rl".into(), model_y: "base".into() }
    }
}

/// Test problems with a completion from each of the two compared models.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialPool {
    pub problem_text: BTreeMap<String, String>,
    pub completions_x: BTreeMap<String, String>,
    pub completions_y: BTreeMap<String, String>,
}

impl TrialPool {
    /// Problems with text and both completions, in id order.
    pub fn eligible(&self) -> Vec<&str> {
        self.problem_text
            .keys()
            .filter(|id| self.completions_x.contains_key(*id) && self.completions_y.contains_key(*id))
            .map(String::as_str)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub problem_id: String,
    pub problem_text: String,
    pub left_model: String,
    pub right_model: String,
    pub left_text: String,
    pub right_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub choice: Choice,
    pub confidence: u8,
    pub timestamp: chrono::DateTime<chrono::Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSession {
    pub id: String,
    #[serde(default)]
    pub participant: serde_json::Map<String, serde_json::Value>,
    pub seed: u64,
    pub model_x: String,
    pub model_y: String,
    pub trials: Vec<Trial>,
    pub responses: Vec<Option<Response>>,
}

impl EvalSession {
    pub fn next_trial(&self) -> Option<&Trial> {
        self.responses.iter().position(Option::is_none).map(|i| &self.trials[i])
    }

    pub fn is_complete(&self) -> bool {
        self.responses.iter().all(Option::is_some)
    }

    pub fn answered(&self) -> usize {
        self.responses.iter().filter(|r| r.is_some()).count()
    }

    /// Record the response to the next unanswered trial. Earlier trials
    /// cannot be revisited.
    pub fn record(&mut self, trial: usize, choice: Choice, confidence: i64) -> Result<Response> {
        if !(0..=100).contains(&confidence) {
            return Err(Error::Validation(format!("confidence {confidence} outside 0..=100")));
        }
        if trial >= self.trials.len() {
            return Err(Error::Validation(format!("trial {trial} out of range for {} trials", self.trials.len())));
        }
        if self.responses[trial].is_some() {
            return Err(Error::Conflict(format!("trial {trial} already answered")));
        }
        let next = self.responses.iter().position(Option::is_none).expect("an unanswered trial exists");
        if trial != next {
            return Err(Error::Validation(format!("trial {trial} is not the current trial {next}")));
        }
        let r = Response { choice, confidence: confidence as u8, timestamp: chrono::Utc::now() };
        self.responses[trial] = Some(r.clone());
        Ok(r)
    }

    pub fn summary(&self) -> SessionSummary {
        let mut prefer_x = 0;
        let mut confidence = 0.0;
        for (t, r) in self.trials.iter().zip(&self.responses) {
            if let Some(r) = r {
                let chosen = match r.choice {
                    Choice::Left => &t.left_model,
                    Choice::Right => &t.right_model,
                };
                if *chosen == self.model_x {
                    prefer_x += 1;
                }
                confidence += f64::from(r.confidence);
            }
        }
        let answered = self.answered();
        let rate = if answered == 0 { f64::NAN } else { prefer_x as f64 / answered as f64 };
        SessionSummary {
            session_id: self.id.clone(),
            n_trials: self.trials.len(),
            answered,
            complete: self.is_complete(),
            preference_rate: rate,
            mean_confidence: if answered == 0 { f64::NAN } else { confidence / answered as f64 },
        }
    }
}

/// Sample trials from the pool, strip every JSON block from both completions
/// and randomize sides, all from `seed`.
pub fn create_session(
    cfg: &SessionConfig,
    pool: &TrialPool,
    seed: u64,
    participant: serde_json::Map<String, serde_json::Value>,
) -> Result<EvalSession> {
    if cfg.n_trials == 0 {
        return Err(Error::Validation("a session needs at least one trial".into()));
    }
    let eligible = pool.eligible();
    if eligible.len() < cfg.n_trials {
        return Err(Error::Setup(format!(
            "{} problems have completions from both models, {} needed",
            eligible.len(),
            cfg.n_trials
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, eligible.len(), cfg.n_trials);
    let mut trials = Vec::with_capacity(cfg.n_trials);
    for (index, pi) in picks.iter().enumerate() {
        let id = eligible[pi];
        let x = strip_all_json(&pool.completions_x[id]);
        let y = strip_all_json(&pool.completions_y[id]);
        let x_left = rng.random_bool(0.5);
        let ((lm, lt), (rm, rt)) =
            if x_left { ((&cfg.model_x, x), (&cfg.model_y, y)) } else { ((&cfg.model_y, y), (&cfg.model_x, x)) };
        trials.push(Trial {
            index,
            problem_id: id.to_string(),
            problem_text: pool.problem_text[id].clone(),
            left_model: lm.clone(),
            right_model: rm.clone(),
            left_text: lt,
            right_text: rt,
        });
    }
    Ok(EvalSession {
        id: uuid::Uuid::new_v4().to_string(),
        participant,
        seed,
        model_x: cfg.model_x.clone(),
        model_y: cfg.model_y.clone(),
        responses: vec![None; trials.len()],
        trials,
    })
}

/// What a participant's browser receives for one trial: anonymized labels,
/// no model identity, no JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialView {
    pub session_id: String,
    pub index: usize,
    pub n_trials: usize,
    pub problem_text: String,
    pub left: Panel,
    pub right: Panel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Panel {
    pub label: String,
    pub text: String,
}

impl TrialView {
    pub fn new(session: &EvalSession, trial: &Trial) -> Result<Self> {
        let left = strip_all_json(&trial.left_text);
        let right = strip_all_json(&trial.right_text);
        if !extract_json_blocks(&left).is_empty() || !extract_json_blocks(&right).is_empty() {
            return Err(Error::Validation(format!("trial {} still carries a JSON block", trial.index)));
        }
        Ok(Self {
            session_id: session.id.clone(),
            index: trial.index,
            n_trials: session.trials.len(),
            problem_text: trial.problem_text.clone(),
            left: Panel { label: LEFT_LABEL.into(), text: left },
            right: Panel { label: RIGHT_LABEL.into(), text: right },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub n_trials: usize,
    pub answered: usize,
    pub complete: bool,
    /// Share of answered trials where the participant chose model x's reasoning.
    pub preference_rate: f64,
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResults {
    pub model_x: String,
    pub sessions: Vec<SessionSummary>,
    /// Complete sessions entering the aggregate.
    pub n_complete: usize,
    pub mean_rate: f64,
    pub se: f64,
    /// One-sample t of complete-session rates against 0.5, once two exist.
    pub t_test: Option<TTest>,
}

/// Aggregate over complete sessions. Rates go through the same statistics
/// functions as offline analysis.
pub fn aggregate(model_x: &str, sessions: &[SessionSummary]) -> AggregateResults {
    let rates: Vec<f64> = sessions.iter().filter(|s| s.complete).map(|s| s.preference_rate).collect();
    let (mean_rate, se) = mean_se(&rates);
    AggregateResults {
        model_x: model_x.to_string(),
        sessions: sessions.to_vec(),
        n_complete: rates.len(),
        mean_rate,
        se,
        t_test: one_sample_t(&rates, 0.5).ok(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created { session: EvalSession },
    Responded { session_id: String, trial: usize, response: Response },
}

/// Live sessions, optionally backed by a JSON Lines event log that is written
/// before state changes and can be replayed after a restart.
#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<EvalSession>>>>,
    order: RwLock<Vec<String>>,
    log: Option<Mutex<File>>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Replay `path` if it exists, then keep appending to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut store = Self::default();
        if path.exists() {
            for event in read_events(path)? {
                store.apply(event)?;
            }
        }
        store.log = Some(Mutex::new(OpenOptions::new().create(true).append(true).open(path)?));
        Ok(store)
    }

    fn append(&self, event: &SessionEvent) -> Result<()> {
        if let Some(log) = &self.log {
            let mut line = serde_json::to_string(event)?;
            line.push('\n');
            let mut f = log.lock();
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }

    fn apply(&mut self, event: SessionEvent) -> Result<()> {
        match event {
            SessionEvent::Created { session } => {
                self.order.get_mut().push(session.id.clone());
                self.sessions.get_mut().insert(session.id.clone(), Arc::new(Mutex::new(session)));
            }
            SessionEvent::Responded { session_id, trial, response } => {
                let s = self.get(&session_id)?;
                let mut s = s.lock();
                let slot = s
                    .responses
                    .get_mut(trial)
                    .ok_or_else(|| Error::Parse(format!("event log names missing trial {trial}")))?;
                *slot = Some(response);
            }
        }
        Ok(())
    }

    pub fn insert(&self, session: EvalSession) -> Result<()> {
        self.append(&SessionEvent::Created { session: session.clone() })?;
        self.order.write().push(session.id.clone());
        self.sessions.write().insert(session.id.clone(), Arc::new(Mutex::new(session)));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<EvalSession>>> {
        self.sessions.read().get(id).cloned().ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    pub fn snapshot(&self, id: &str) -> Result<EvalSession> {
        Ok(self.get(id)?.lock().clone())
    }

    /// Validate, log, then apply; responses for one session are serialized by its lock.
    pub fn respond(&self, id: &str, trial: usize, choice: Choice, confidence: i64) -> Result<Response> {
        let s = self.get(id)?;
        let mut s = s.lock();
        let mut draft = s.clone();
        let response = draft.record(trial, choice, confidence)?;
        self.append(&SessionEvent::Responded { session_id: id.to_string(), trial, response: response.clone() })?;
        *s = draft;
        Ok(response)
    }

    /// Summaries in creation order.
    pub fn summaries(&self) -> Vec<SessionSummary> {
        let sessions = self.sessions.read();
        self.order.read().iter().filter_map(|id| sessions.get(id)).map(|s| s.lock().summary()).collect()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<SessionEvent>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Record of one training or evaluation run. Once marked complete the file
/// on disk is never rewritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created: chrono::DateTime<chrono::Utc>,
    pub config: BTreeMap<String, String>,
    pub dataset_hash: String,
    pub checkpoints: Vec<PathBuf>,
    pub metric_files: Vec<PathBuf>,
    pub complete: bool,
}

impl RunManifest {
    pub fn new(config: BTreeMap<String, String>, dataset_hash: impl Into<String>) -> Self {
        Self {
            run_id: uuid::Uuid::new_v4().to_string(),
            created: chrono::Utc::now(),
            config,
            dataset_hash: dataset_hash.into(),
            checkpoints: Vec::new(),
            metric_files: Vec::new(),
            complete: false,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.exists() && Self::load(path).map(|m| m.complete).unwrap_or(false) {
            return Err(Error::Conflict(format!("{} belongs to a completed run", path.display())));
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pool(n: usize) -> TrialPool {
        let mut p = TrialPool::default();
        for i in 0..n {
            let id = format!("p{i:02}");
            p.problem_text.insert(id.clone(), format!("problem {i}"));
            p.completions_x.insert(id.clone(), format!("1. x reasons {i}\n{{\"option_A\": 40, \"option_B\": 60}}"));
            p.completions_y.insert(id, format!("1. y reasons {i}\n```json\n{{\"option_A\": 50, \"option_B\": 50}}\n```"));
        }
        p
    }

    #[test]
    fn sessions_are_seeded_and_stripped() {
        let p = pool(30);
        let cfg = SessionConfig::default();
        let a = create_session(&cfg, &p, 7, Default::default()).unwrap();
        let b = create_session(&cfg, &p, 7, Default::default()).unwrap();
        assert_eq!(a.trials, b.trials);
        assert_eq!(a.trials.len(), 10);
        for t in &a.trials {
            assert!(extract_json_blocks(&t.left_text).is_empty() && extract_json_blocks(&t.right_text).is_empty());
        }
        let one = create_session(&SessionConfig { n_trials: 1, ..cfg.clone() }, &p, 1, Default::default()).unwrap();
        assert_eq!(one.trials.len(), 1);
        assert!(matches!(create_session(&cfg, &pool(5), 0, Default::default()), Err(Error::Setup(_))));
    }

    #[test]
    fn responses_in_order_once() {
        let mut s = create_session(&SessionConfig::default(), &pool(10), 3, Default::default()).unwrap();
        assert!(matches!(s.record(0, Choice::Left, 101), Err(Error::Validation(_))));
        assert!(matches!(s.record(1, Choice::Left, 50), Err(Error::Validation(_))));
        s.record(0, Choice::Left, 50).unwrap();
        assert!(matches!(s.record(0, Choice::Right, 50), Err(Error::Conflict(_))));
        assert_eq!(s.next_trial().unwrap().index, 1);
    }

    #[test]
    fn replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let id = {
            let store = SessionStore::open(&path).unwrap();
            let s = create_session(&SessionConfig::default(), &pool(12), 5, Default::default()).unwrap();
            let id = s.id.clone();
            store.insert(s).unwrap();
            store.respond(&id, 0, Choice::Right, 80).unwrap();
            id
        };
        let store = SessionStore::open(&path).unwrap();
        let s = store.snapshot(&id).unwrap();
        assert_eq!(s.answered(), 1);
        assert_eq!(s.responses[0].as_ref().unwrap().confidence, 80);
    }

    #[test]
    fn completed_manifest_is_frozen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = RunManifest::new(BTreeMap::new(), "abc");
        m.save(&path).unwrap();
        m.complete = true;
        m.save(&path).unwrap();
        assert!(matches!(m.save(&path), Err(Error::Conflict(_))));
    }
}
