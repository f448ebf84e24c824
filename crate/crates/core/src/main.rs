use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use choicelab::analysis::{
    self, cluster_thoughts, foreign_cot_test, learning_curve, line_chart_svg, mechanism_series, mse_eval,
    predictions_from_records, reported, swap_cot_experiment, toy_predictions, ClusterSpace, EvalResult,
    HashedBowEmbedder, Series, SwapMatrix, SwapModel, TaggedThought,
};
use choicelab::backend::{batch_rollouts, judge_completion, tag_mechanisms, BackendConfig, ChatClient, RequestLog, SamplingParams};
use choicelab::config::KvConfig;
use choicelab::dataset::{
    complexity_oracle, dataset_hash, ev_oracle, generate_problems, random_oracle, read_problems_jsonl, read_split,
    render_problem, split_records, write_problems_jsonl, write_split, BehavioralTarget, ChoiceProblem, Choices13kAdapter,
    GeneratorConfig, ProblemRecord,
};
use choicelab::parsing::{read_completions_jsonl, segment_thoughts, strip_final_json, write_completions_jsonl, CompletionRecord};
use choicelab::policy::{FeatureNormalizer, ProblemFeatures, ToyCheckpoint, ToyGrammar, ToyPolicyParams};
use choicelab::prompts::{user_prompt, PromptStyle};
use choicelab::service::{self, AppState, RunManifest, SessionConfig, SessionStore, TrialPool};
use choicelab::training::{read_metrics_csv, train, GrpoConfig, SftConfig, ToyDataset, TrainMethod};

#[derive(Parser)]
#[command(name = "choicelab", version, about = "Train and analyze risky-choice prediction policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest choices13k or generate synthetic problems, attach targets, split.
    PrepareData(PrepareArgs),
    /// Print the prompt text for one problem.
    Render(RenderArgs),
    /// Train the toy policy with GRPO, SFT or Centaur-style SFT.
    Train(TrainArgs),
    /// Sample completions from a remote chat model.
    Rollout(RolloutArgs),
    /// Mean squared error of predictions against targets.
    Evaluate(EvaluateArgs),
    /// Two-model CoT-swap experiment.
    SwapCot(SwapArgs),
    /// Continue another model's CoTs and score the predictions.
    ForeignCot(ForeignArgs),
    /// Split completion reasoning into thoughts.
    Segment(SegmentArgs),
    /// k-means over embedded thoughts.
    Cluster(ClusterArgs),
    /// Label thoughts with psychological mechanisms via a judge model.
    Tag(TagArgs),
    /// Score completions 0-100 via a judge model.
    Judge(JudgeArgs),
    /// Tables and SVG plots from run outputs, next to reported reference values.
    Report(ReportArgs),
    /// Human-evaluation API and static app.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetKind {
    /// Targets stored with the problems (human rates for choices13k).
    File,
    Ev,
    Complexity,
    Random,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Subset {
    Train,
    Test,
    All,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Problems JSON Lines file; without it, synthetic problems are generated.
    #[arg(long)]
    problems: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n_problems: usize,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, value_enum, default_value_t = TargetKind::File)]
    targets: TargetKind,
    /// Split file restricting the problems to one side.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Subset::All)]
    subset: Subset,
}

struct Data {
    problems: Vec<ChoiceProblem>,
    targets: Vec<BehavioralTarget>,
    hash: String,
}

impl DataArgs {
    fn load(&self) -> Result<Data> {
        let (mut problems, mut targets, hash) = match &self.problems {
            Some(path) => {
                let records = read_problems_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
                let problems: Vec<ChoiceProblem> = records.iter().map(ProblemRecord::problem).collect();
                let targets: Vec<BehavioralTarget> =
                    records.iter().filter_map(|r| r.target().transpose()).collect::<choicelab::Result<_>>()?;
                (problems, targets, dataset_hash(path)?)
            }
            None => {
                let problems = generate_problems(self.n_problems, self.data_seed, &GeneratorConfig::default());
                (problems, Vec::new(), format!("synthetic:{}:{}", self.n_problems, self.data_seed))
            }
        };
        let ids: Vec<&str> = problems.iter().map(|p| p.id.as_str()).collect();
        match self.targets {
            TargetKind::File => {}
            TargetKind::Ev => targets = problems.iter().map(ev_oracle).collect(),
            TargetKind::Complexity => targets = problems.iter().map(complexity_oracle).collect(),
            TargetKind::Random => targets = random_oracle(&ids, self.data_seed),
        }
        if let Some(split) = &self.split {
            let split = read_split(split)?;
            let keep = |id: &str| match self.subset {
                Subset::All => true,
                Subset::Test => split.test_ids.contains(id),
                Subset::Train => split.train_ids.contains(id),
            };
            problems.retain(|p| keep(&p.id));
            targets.retain(|t| keep(&t.problem_id));
        } else if self.subset != Subset::All {
            bail!("--subset needs --split");
        }
        Ok(Data { problems, targets, hash })
    }
}

impl Data {
    fn target_map(&self) -> BTreeMap<String, f64> {
        self.targets.iter().map(|t| (t.problem_id.clone(), t.b_rate)).collect()
    }

    fn problem_map(&self) -> HashMap<String, ChoiceProblem> {
        self.problems.iter().map(|p| (p.id.clone(), p.clone())).collect()
    }
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// choices13k CSV; synthetic problems are generated when absent.
    #[arg(long)]
    choices13k: Option<PathBuf>,
    /// key = value file mapping the CSV layout.
    #[arg(long)]
    adapter_config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n_problems: usize,
    #[arg(long, value_enum, default_value_t = TargetKind::Ev)]
    targets: TargetKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    test_ratio: f64,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    problem_id: String,
    /// Print the full user prompt instead of the option description alone.
    #[arg(long, value_enum)]
    prompt: Option<Style>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Grpo,
    Sft,
    Centaur,
}

impl From<Method> for TrainMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Grpo => TrainMethod::Grpo,
            Method::Sft => TrainMethod::Sft,
            Method::Centaur => TrainMethod::Centaur,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Direct,
    Reasoning,
}

impl From<Style> for PromptStyle {
    fn from(s: Style) -> Self {
        match s {
            Style::Direct => PromptStyle::Direct,
            Style::Reasoning => PromptStyle::Reasoning,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = Method::Grpo)]
    method: Method,
    #[arg(long, default_value = "toy")]
    engine: String,
    /// key = value training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 3)]
    max_thoughts: usize,
    #[arg(long, default_value = "runs/toy")]
    out: PathBuf,
}

#[derive(Args)]
struct BackendArgs {
    /// key = value backend config (endpoint, model, auth_env, ...).
    #[arg(long)]
    backend: PathBuf,
    /// JSON Lines request log.
    #[arg(long)]
    request_log: Option<PathBuf>,
}

impl BackendArgs {
    fn client(&self) -> Result<ChatClient> {
        let cfg = BackendConfig::from_kv(&KvConfig::load(&self.backend)?)?;
        let mut client = ChatClient::http(&cfg)?;
        if let Some(p) = &self.request_log {
            client = client.with_log(RequestLog::open(p)?);
        }
        Ok(client)
    }
}

#[derive(Args)]
struct RolloutArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, value_enum, default_value_t = Style::Reasoning)]
    style: Style,
    #[arg(long, default_value_t = 1)]
    group_size: usize,
    #[arg(long)]
    limit: Option<usize>,
    /// Label stored with each completion, e.g. the model or checkpoint name.
    #[arg(long, default_value = "remote")]
    label: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// A toy checkpoint file, a run's checkpoint directory, or `none`.
    #[arg(long)]
    checkpoint: Option<String>,
    /// Predict this option-B rate for every problem (with `--checkpoint none`).
    #[arg(long)]
    predict_constant: Option<f64>,
    /// Completions JSON Lines to score instead of a checkpoint.
    #[arg(long)]
    completions: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for per-checkpoint CSV and JSON results.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SwapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    completions_a: PathBuf,
    #[arg(long)]
    completions_b: PathBuf,
    #[arg(long)]
    backend_a: PathBuf,
    #[arg(long)]
    backend_b: PathBuf,
    #[arg(long, default_value = "base")]
    label_a: String,
    #[arg(long, default_value = "rl")]
    label_b: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ForeignArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    completions: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    completions: PathBuf,
    /// Epoch stamped on every thought, for mechanism series.
    #[arg(long)]
    epoch: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Thoughts JSON Lines written by `segment`.
    #[arg(long)]
    thoughts: PathBuf,
    #[arg(long, default_value_t = 9)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "embedding")]
    space: String,
    #[arg(long, default_value_t = 4096)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TagArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    thoughts: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct JudgeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    completions: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Training run directories (each with metrics.csv).
    #[arg(long)]
    run: Vec<PathBuf>,
    /// Evaluation directories written by `evaluate --out`.
    #[arg(long)]
    eval: Vec<PathBuf>,
    #[arg(long)]
    swap: Option<PathBuf>,
    /// Tagged thoughts written by `tag`.
    #[arg(long)]
    tags: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: std::net::SocketAddr,
    /// Problems JSON Lines for the trial texts.
    #[arg(long)]
    problems: PathBuf,
    #[arg(long)]
    completions_x: PathBuf,
    #[arg(long)]
    completions_y: PathBuf,
    #[arg(long, default_value = "rl")]
    model_x: String,
    #[arg(long, default_value = "base")]
    model_y: String,
    #[arg(long, default_value_t = service::DEFAULT_TRIALS)]
    n_trials: usize,
    /// Restrict trials to the test side of this split.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value = "sessions.jsonl")]
    events: PathBuf,
    /// Built evaluation app.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ThoughtRecord {
    problem_id: String,
    checkpoint: String,
    index: usize,
    #[serde(default)]
    epoch: Option<f64>,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<Vec<String>>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn prepare(a: PrepareArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out_dir)?;
    let (problems, targets) = match &a.choices13k {
        Some(csv) => {
            let cfg = match &a.adapter_config {
                Some(p) => KvConfig::load(p)?,
                None => KvConfig::default(),
            };
            let rows = Choices13kAdapter::from_config(&cfg)?.ingest(File::open(csv)?)?;
            let (problems, human): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
            (problems, Some(human))
        }
        None => (generate_problems(a.n_problems, a.seed, &GeneratorConfig::default()), None),
    };
    let ids: Vec<&str> = problems.iter().map(|p| p.id.as_str()).collect();
    let targets: Vec<BehavioralTarget> = match a.targets {
        TargetKind::File => human_or_bail(targets)?,
        TargetKind::Ev => problems.iter().map(ev_oracle).collect(),
        TargetKind::Complexity => problems.iter().map(complexity_oracle).collect(),
        TargetKind::Random => random_oracle(&ids, a.seed),
    };
    let records: Vec<ProblemRecord> = problems.iter().zip(&targets).map(|(p, t)| ProblemRecord::new(p, Some(t))).collect();
    let problems_path = a.out_dir.join("problems.jsonl");
    write_problems_jsonl(&problems_path, &records)?;
    let split = split_records(&problems, a.seed, a.test_ratio)?;
    write_split(a.out_dir.join("split.json"), &split)?;
    println!(
        "{} problems ({} train / {} test), dataset hash {}",
        records.len(),
        split.train_ids.len(),
        split.test_ids.len(),
        dataset_hash(&problems_path)?
    );
    Ok(())
}

fn human_or_bail(t: Option<Vec<BehavioralTarget>>) -> Result<Vec<BehavioralTarget>> {
    t.context("--targets file needs --choices13k (synthetic problems carry no observed rates)")
}

fn render(a: RenderArgs) -> Result<()> {
    let data = a.data.load()?;
    let p = data.problems.iter().find(|p| p.id == a.problem_id).with_context(|| format!("no problem {}", a.problem_id))?;
    match a.prompt {
        Some(style) => println!("{}", user_prompt(style.into(), p)),
        None => println!("{}", render_problem(p)),
    }
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    if a.engine != "toy" {
        bail!("engine {:?} is not available; only the toy engine trains locally", a.engine);
    }
    let method: TrainMethod = a.method.into();
    let kv = match &a.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::default(),
    };
    let mut grpo = GrpoConfig::from_kv(&kv)?;
    let mut sft = SftConfig::from_kv(&kv)?;
    if let Some(e) = a.epochs {
        grpo.epochs = e;
        sft.epochs = e;
    }
    if let Some(lr) = a.lr {
        grpo.learning_rate = lr;
        sft.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        grpo.seed = s;
        sft.seed = s;
    }
    let data = if a.data.problems.is_none() && matches!(a.data.targets, TargetKind::File) {
        DataArgs { targets: TargetKind::Ev, ..a.data.clone() }.load()?
    } else {
        a.data.load()?
    };
    let normalizer = FeatureNormalizer::fit(&data.problems);
    let dataset = ToyDataset::new(&data.problems, &data.targets, normalizer)?;
    let initial = ToyPolicyParams::zeros(ToyGrammar { max_thoughts: a.max_thoughts }, ProblemFeatures::DIM);
    let started = std::time::Instant::now();
    let run = train(initial, &dataset, method, &grpo, &sft)?;
    std::fs::create_dir_all(&a.out)?;
    let checkpoints = run.save(&a.out)?;

    let mut config: BTreeMap<String, String> = BTreeMap::new();
    config.insert("method".into(), format!("{method:?}").to_lowercase());
    config.insert("engine".into(), a.engine.clone());
    config.insert("max_thoughts".into(), a.max_thoughts.to_string());
    let section = if method == TrainMethod::Grpo { grpo.to_kv() } else { sft.to_kv() };
    config.extend(section.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    let mut manifest = RunManifest::new(config, data.hash.clone());
    manifest.checkpoints = checkpoints;
    manifest.metric_files.push(a.out.join("metrics.csv"));
    if !run.reward_log.is_empty() {
        manifest.metric_files.push(a.out.join("rewards.csv"));
    }
    manifest.complete = true;
    manifest.save(a.out.join("manifest.json"))?;

    println!("{} steps in {:.2?}, {} checkpoints -> {}", run.metrics.len(), started.elapsed(), run.checkpoints.len(), a.out.display());
    if method == TrainMethod::Grpo {
        for (e, (s, x)) in run.epoch_mean_outcome().iter().zip(run.epoch_mean_expected_outcome()).enumerate() {
            println!("epoch {}: mean outcome reward {s:.4} (expected {x:.4})", e + 1);
        }
    } else {
        for (e, l) in run.epoch_losses.iter().enumerate() {
            println!("after epoch {e}: masked NLL {l:.4}");
        }
    }
    Ok(())
}

fn rollout(a: RolloutArgs) -> Result<()> {
    let data = a.data.load()?;
    let client = a.backend.client()?;
    let mut problems = data.problems;
    if let Some(n) = a.limit {
        problems.truncate(n);
    }
    let style: PromptStyle = a.style.into();
    let params = match style {
        PromptStyle::Direct => SamplingParams::direct(),
        PromptStyle::Reasoning => SamplingParams::reasoning(),
    };
    let prompts: Vec<String> = problems.iter().map(|p| user_prompt(style, p)).collect();
    let groups = batch_rollouts(&client, None, &prompts, params, a.group_size)?;
    let mut records = Vec::new();
    let mut incomplete = 0;
    for g in &groups {
        if !g.is_complete() {
            incomplete += 1;
            for f in &g.failures {
                eprintln!("{}: {f}", problems[g.prompt_index].id);
            }
        }
        for c in &g.completions {
            records.push(CompletionRecord::from_text(problems[g.prompt_index].id.clone(), a.label.clone(), c.text.clone()));
        }
    }
    write_completions_jsonl(&a.out, &records)?;
    println!("{} completions for {} problems ({incomplete} incomplete groups)", records.len(), problems.len());
    Ok(())
}

fn print_eval(r: &EvalResult) {
    println!("{}: MSE {:.4} (SE {:.4}), n {}, invalid {:.1}%", r.checkpoint, r.mean, r.se, r.n(), 100.0 * r.invalid_rate);
}

fn save_eval(dir: &Option<PathBuf>, epoch: Option<f64>, r: &EvalResult) -> Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    std::fs::create_dir_all(dir)?;
    let stem = r.checkpoint.replace(['/', ' '], "_");
    r.write_csv(File::create(dir.join(format!("{stem}.csv")))?)?;
    write_json(&dir.join(format!("{stem}.json")), &serde_json::json!({ "epoch": epoch, "result": r }))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let data = a.data.load()?;
    let targets = data.target_map();
    if let Some(path) = &a.completions {
        let records = read_completions_jsonl(path)?;
        let label = records.first().map_or("completions".to_string(), |r| r.checkpoint.clone());
        let r = mse_eval(&label, &predictions_from_records(&records), &targets)?;
        print_eval(&r);
        return save_eval(&a.out, None, &r);
    }
    match a.checkpoint.as_deref() {
        None | Some("none") => {
            let c = a.predict_constant.context("--checkpoint none needs --predict-constant")?;
            if !(0.0..=1.0).contains(&c) {
                bail!("--predict-constant must lie in [0, 1]");
            }
            let preds = data.problems.iter().map(|p| (p.id.clone(), Some(c))).collect();
            let r = mse_eval(&format!("constant {c}"), &preds, &targets)?;
            print_eval(&r);
            save_eval(&a.out, None, &r)
        }
        Some(path) => {
            let path = Path::new(path);
            let files: Vec<PathBuf> = if path.is_dir() {
                let mut v: Vec<PathBuf> = std::fs::read_dir(path)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "json"))
                    .collect();
                v.sort();
                v
            } else {
                vec![path.to_path_buf()]
            };
            let mut curve = Vec::new();
            for f in &files {
                let ck = ToyCheckpoint::load(f)?;
                let label = format!("step_{:06}", ck.step);
                let records = toy_predictions(&ck.params, &ck.normalizer, &data.problems, &label, a.seed, 1024);
                let r = mse_eval(&label, &predictions_from_records(&records), &targets)?;
                print_eval(&r);
                save_eval(&a.out, Some(ck.epoch), &r)?;
                curve.push((ck.epoch, r));
            }
            let c = learning_curve("toy", &curve)?;
            let best = c.best();
            println!("lowest MSE {:.4} (SE {:.4}) at epoch {:.2}", best.mse, best.se, best.epoch);
            Ok(())
        }
    }
}

fn swap(a: SwapArgs) -> Result<()> {
    let data = a.data.load()?;
    let load = |p: &Path| -> Result<ChatClient> { Ok(ChatClient::http(&BackendConfig::from_kv(&KvConfig::load(p)?)?)?) };
    let (ca, cb) = (load(&a.backend_a)?, load(&a.backend_b)?);
    let (ra, rb) = (read_completions_jsonl(&a.completions_a)?, read_completions_jsonl(&a.completions_b)?);
    let m = swap_cot_experiment(
        &data.problem_map(),
        SwapModel { label: a.label_a, completions: &ra, continuer: &ca },
        SwapModel { label: a.label_b, completions: &rb, continuer: &cb },
        &data.target_map(),
        SamplingParams::reasoning(),
    )?;
    print_swap(&m);
    write_json(&a.out, &m)
}

fn print_swap(m: &SwapMatrix) {
    println!("{:<16}{:>18}{:>18}", "CoT source ->", m.labels[0], m.labels[1]);
    for (i, row) in m.cells.iter().enumerate() {
        println!("{:<16}{:>18}{:>18}", m.labels[i], format!("{:.4} ({:.4})", row[0].mean, row[0].se), format!("{:.4} ({:.4})", row[1].mean, row[1].se));
    }
}

fn foreign(a: ForeignArgs) -> Result<()> {
    let data = a.data.load()?;
    let client = a.backend.client()?;
    let sources = read_completions_jsonl(&a.completions)?;
    let (r, cs) = foreign_cot_test(&data.problem_map(), &sources, &client, &data.target_map(), SamplingParams::reasoning())?;
    print_eval(&r);
    write_json(&a.out, &serde_json::json!({ "result": r, "continuations": cs }))
}

fn segment(a: SegmentArgs) -> Result<()> {
    let records = read_completions_jsonl(&a.completions)?;
    let mut out = Vec::new();
    for r in &records {
        for t in segment_thoughts(&strip_final_json(&r.text)) {
            if t.body().is_empty() {
                continue;
            }
            out.push(ThoughtRecord {
                problem_id: r.problem_id.clone(),
                checkpoint: r.checkpoint.clone(),
                index: t.index,
                epoch: a.epoch,
                text: t.body().to_string(),
                tags: None,
            });
        }
    }
    write_jsonl(&a.out, &out)?;
    println!("{} thoughts from {} completions", out.len(), records.len());
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let thoughts: Vec<ThoughtRecord> = read_jsonl(&a.thoughts)?;
    let texts: Vec<&str> = thoughts.iter().map(|t| t.text.as_str()).collect();
    let space: ClusterSpace = a.space.parse()?;
    let report = cluster_thoughts(&texts, &HashedBowEmbedder { dim: a.dim }, a.k, a.seed, space)?;
    for c in &report.clusters {
        println!("cluster {} ({} thoughts): {}", c.id, c.size, c.representative.chars().take(100).collect::<String>());
    }
    write_json(&a.out, &report)
}

fn tag(a: TagArgs) -> Result<()> {
    let client = a.backend.client()?;
    let mut thoughts: Vec<ThoughtRecord> = read_jsonl(&a.thoughts)?;
    let mut failed = 0;
    for t in &mut thoughts {
        match tag_mechanisms(&client, &t.text) {
            Ok(tags) => t.tags = Some(tags),
            Err(e) => {
                failed += 1;
                eprintln!("{} #{}: {e}", t.problem_id, t.index);
            }
        }
    }
    write_jsonl(&a.out, &thoughts)?;
    println!("tagged {} thoughts ({failed} failed)", thoughts.len() - failed);
    Ok(())
}

fn judge(a: JudgeArgs) -> Result<()> {
    let data = a.data.load()?;
    let problems = data.problem_map();
    let client = a.backend.client()?;
    let records = read_completions_jsonl(&a.completions)?;
    let mut rows = Vec::new();
    for r in &records {
        let p = problems.get(&r.problem_id).with_context(|| format!("no problem {}", r.problem_id))?;
        let text = format!("{}\n\n{}", user_prompt(PromptStyle::Reasoning, p), r.text);
        let score = judge_completion(&client, &text);
        if let Err(e) = &score {
            eprintln!("{}: {e}", r.problem_id);
        }
        rows.push(serde_json::json!({ "problem_id": r.problem_id, "checkpoint": r.checkpoint, "score": score.ok() }));
    }
    let scores: Vec<f64> = rows.iter().filter_map(|r| r["score"].as_f64()).collect();
    let (m, se) = analysis::mean_se(&scores);
    println!("{} scored, mean {m:.2} (SE {se:.2})", scores.len());
    write_jsonl(&a.out, &rows)
}

fn report(a: ReportArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let mut md = String::from("# Report\n\n");

    if !a.run.is_empty() {
        let mut series = Vec::new();
        md.push_str("## Training runs\n\n| run | steps | final mean outcome | final loss |\n|---|---|---|---|\n");
        for dir in &a.run {
            let metrics = read_metrics_csv(File::open(dir.join("metrics.csv"))?)?;
            let name = dir.file_name().map_or("run".into(), |s| s.to_string_lossy().into_owned());
            let last = metrics.last();
            md.push_str(&format!(
                "| {name} | {} | {:.4} | {:.4} |\n",
                metrics.len(),
                last.map_or(f64::NAN, |m| m.mean_outcome),
                last.map_or(f64::NAN, |m| m.loss)
            ));
            series.push(Series { name, points: metrics.iter().map(|m| (m.epoch_fraction, m.mean_outcome)).collect() });
        }
        std::fs::write(a.out.join("reward_curve.svg"), line_chart_svg("Mean outcome reward", "epoch", "reward", &series))?;
        md.push('\n');
    }

    if !a.eval.is_empty() {
        let mut series = Vec::new();
        md.push_str("## Learning curves\n\n| method | lowest MSE | SE | epoch |\n|---|---|---|---|\n");
        for dir in &a.eval {
            let mut evals = Vec::new();
            for e in std::fs::read_dir(dir)? {
                let p = e?.path();
                if p.extension().is_some_and(|x| x == "json") {
                    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
                    let r: EvalResult = serde_json::from_value(v["result"].clone())?;
                    evals.push((v["epoch"].as_f64().unwrap_or(0.0), r));
                }
            }
            let name = dir.file_name().map_or("eval".into(), |s| s.to_string_lossy().into_owned());
            let c = learning_curve(&name, &evals)?;
            let b = c.best();
            md.push_str(&format!("| {name} | {:.4} | {:.4} | {:.2} |\n", b.mse, b.se, b.epoch));
            series.push(Series { name, points: c.points.iter().map(|p| (p.epoch, p.mse)).collect() });
        }
        std::fs::write(a.out.join("learning_curve.svg"), line_chart_svg("Test MSE", "epoch", "MSE", &series))?;
        md.push_str(&format!(
            "\nReported reference (full-size model, test set): SFT {:.4}, Centaur-style SFT {:.4}, RL {:.4}\n\n",
            reported::TEST_MSE_SFT,
            reported::TEST_MSE_CENTAUR,
            reported::TEST_MSE_RL
        ));
    }

    if let Some(p) = &a.swap {
        let m: SwapMatrix = serde_json::from_str(&std::fs::read_to_string(p)?)?;
        let r = reported::SWAP_MATRIX;
        md.push_str(&format!(
            "## CoT swap\n\n| continuing model | {a} CoT | {b} CoT | reported |\n|---|---|---|---|\n",
            a = m.labels[0],
            b = m.labels[1]
        ));
        for i in 0..2 {
            md.push_str(&format!(
                "| {} | {:.4} | {:.4} | {:.4} / {:.4} |\n",
                m.labels[i], m.cells[i][0].mean, m.cells[i][1].mean, r[i][0], r[i][1]
            ));
        }
        md.push('\n');
    }

    if let Some(p) = &a.tags {
        let thoughts: Vec<ThoughtRecord> = read_jsonl(p)?;
        let tagged: Vec<TaggedThought> = thoughts
            .iter()
            .filter_map(|t| Some(TaggedThought { epoch: t.epoch.unwrap_or(0.0), tags: t.tags.clone()? }))
            .collect();
        let s = mechanism_series(&tagged);
        md.push_str("## Mechanisms\n\n| mechanism | share by epoch |\n|---|---|\n");
        let mut series = Vec::new();
        for tag in s.top(8) {
            let i = s.tags.iter().position(|t| t == tag).expect("top tags come from tags");
            let shares: Vec<String> = s.proportions[i].iter().map(|v| format!("{v:.3}")).collect();
            md.push_str(&format!("| {tag} | {} |\n", shares.join(", ")));
            series.push(Series { name: tag.clone(), points: s.epochs.iter().copied().zip(s.proportions[i].iter().copied()).collect() });
        }
        let (lo, hi) = reported::TOP_MECHANISM_SHARE;
        md.push_str(&format!("\nReported reference: the two leading mechanisms cover about {:.0}-{:.0}% of thoughts.\n\n", lo * 100.0, hi * 100.0));
        std::fs::write(a.out.join("mechanisms.svg"), line_chart_svg("Mechanism share", "epoch", "share", &series))?;
    }

    md.push_str(&format!(
        "Reported human evaluation: RL reasoning preferred in {:.1}% of trials, t({}) = {:.2}\n",
        reported::HUMAN_EVAL_RATE * 100.0,
        reported::HUMAN_EVAL_DF,
        reported::HUMAN_EVAL_T
    ));
    std::fs::write(a.out.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let records = read_problems_jsonl(&a.problems)?;
    let test = a.split.as_ref().map(read_split).transpose()?;
    let mut pool = TrialPool::default();
    for r in &records {
        if test.as_ref().is_none_or(|s| s.is_test(&r.id)) {
            pool.problem_text.insert(r.id.clone(), render_problem(&r.problem()));
        }
    }
    // first completion per problem
    for (path, slot) in [(&a.completions_x, &mut pool.completions_x), (&a.completions_y, &mut pool.completions_y)] {
        for c in read_completions_jsonl(path)? {
            slot.entry(c.problem_id.clone()).or_insert(c.text);
        }
    }
    let cfg = SessionConfig { n_trials: a.n_trials, model_x: a.model_x, model_y: a.model_y };
    let store = SessionStore::open(&a.events)?;
    println!("{} eligible problems, {} sessions replayed", pool.eligible().len(), store.len());
    let mut state = AppState::new(store, pool, cfg);
    state.static_dir = a.static_dir;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(a.addr, state))?;
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse().command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::PrepareData(a) => prepare(a),
        Command::Render(a) => render(a),
        Command::Train(a) => run_train(a),
        Command::Rollout(a) => rollout(a),
        Command::Evaluate(a) => evaluate(a),
        Command::SwapCot(a) => swap(a),
        Command::ForeignCot(a) => foreign(a),
        Command::Segment(a) => segment(a),
        Command::Cluster(a) => cluster(a),
        Command::Tag(a) => tag(a),
        Command::Judge(a) => judge(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
    }
}
