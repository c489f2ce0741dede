//! Command-line entry points.
//!
//! Every experiment command resolves its settings in three layers (built-in
//! defaults, then an optional JSON config file whose keys are the flag names
//! in snake_case, then explicit flags), runs, and writes next to `--out`:
//!
//! - `<out>`: metrics JSON (an array of two objects for `--debias both`),
//! - `<stem>.manifest.json`: a [`RunManifest`] that `replay` can rerun,
//! - `<stem>.baseline.ndjson` / `<stem>.debiased.ndjson`: per-step logs.
//!
//! Exit codes: 0 success, 1 check failure, 2 input error, 3 divergence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::synthetic::{planted_gender, BiasedProbe};
use crate::data::{
    analogy_examples, complete_analogy, compute_bias_subspace, default_gender_pairs,
    encode_features, generate_toy, load_adult, load_analogies, load_embeddings, load_pairs,
    AdultCodec, AnalogyItem, EmbeddingTable, ToyConfig,
};
use crate::error::Error;
use crate::fairness::{format_confusion_tables, FairnessReport, GroupReport};
use crate::grad_engine::ScheduleSpec;
use crate::models::{check_model_gradients, AnalogyPredictor, GradCheckTarget};
use crate::numerics::SeededRng;
use crate::trainer::{
    evaluate_analogy, evaluate_classification, fit, named_coefficients, AnalogyTask,
    ClassificationTask, FairnessMode, Task, TrainConfig, TrainState,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Relative output paths are resolved against this directory when set.
pub const OUT_DIR_ENV: &str = "ADVDEBIAS_OUT_DIR";

/// Gradient checks pass below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Offset between the toy training seed and its fresh test-set seed.
const TOY_TEST_SEED_OFFSET: u64 = 1_000_003;

/// Completions listed per query.
const QUERY_TOP_N: usize = 9;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("{0}")]
    Input(String),

    #[error("training diverged at step {step}: {reason} (log written to {})", log.display())]
    Diverged { step: u64, reason: String, log: PathBuf },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Diverged { .. } => EXIT_DIVERGED,
            CliError::Core(e) => match e {
                Error::Divergence { .. } => EXIT_DIVERGED,
                Error::Io { .. }
                | Error::Parse { .. }
                | Error::MissingWord(_)
                | Error::InvalidArgument(_)
                | Error::Rank { .. } => EXIT_INPUT,
                _ => EXIT_CHECK_FAILED,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn input(message: impl Into<String>) -> CliError {
    CliError::Input(message.into())
}

// ---------------------------------------------------------------------------
// Arguments

#[derive(Debug, Parser)]
#[command(name = "advdebias", version, about = "Adversarial debiasing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic task where the protected bit leaks into a feature.
    Toy(ToyArgs),
    /// UCI Adult income prediction with sex as the protected variable.
    Adult(AdultArgs),
    /// Debias an analogy-completion transform over word embeddings.
    Embed(EmbedArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebiasChoice {
    On,
    Off,
    Both,
}

impl DebiasChoice {
    fn runs(self) -> &'static [bool] {
        match self {
            DebiasChoice::On => &[true],
            DebiasChoice::Off => &[false],
            DebiasChoice::Both => &[false, true],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeChoice {
    Parity,
    Odds,
    Opportunity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaChoice {
    Constant,
    #[value(name = "inverse_t", alias = "inverse-t")]
    InverseT,
}

/// Training flags shared by the experiment commands. Unset flags fall back
/// to the config file, then to the command's defaults.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrainArgs {
    /// JSON file with any of the flag names (snake_case) as keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub predictor_lr: Option<f64>,
    #[arg(long)]
    pub adversary_lr: Option<f64>,
    /// α(t) = alpha0·√t.
    #[arg(long)]
    pub alpha0: Option<f64>,
    /// Predictor step scale: constant, or min(1, t0/t).
    #[arg(long, value_enum)]
    pub eta: Option<EtaChoice>,
    #[arg(long)]
    pub t0: Option<u64>,
    #[arg(long, value_enum)]
    pub debias: Option<DebiasChoice>,
    /// Project weights and bias separately when composing the direction.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub per_segment_projection: Option<bool>,
    /// Abort (exit 3) when any loss exceeds this or is non-finite.
    #[arg(long)]
    pub loss_blowup_limit: Option<f64>,
    /// Metrics JSON path; manifest and logs are written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the text report here (it is always printed).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ToyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Training sample count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Size of the freshly drawn test set.
    #[arg(long)]
    pub test_n: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct AdultArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub train_path: Option<PathBuf>,
    #[arg(long)]
    pub test_path: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeChoice>,
    /// Label the adversary is restricted to in opportunity mode.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub target_y: Option<u8>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct EmbedArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Text embedding file ("word v1 v2 ..." per line).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Use the built-in planted-gender vocabulary instead of files.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub synthetic: Option<bool>,
    #[arg(long)]
    pub analogies: Option<PathBuf>,
    /// "male female" pairs; defaults to a built-in list.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Bias subspace dimension; training uses its leading direction.
    #[arg(long)]
    pub k: Option<usize>,
    /// Analogy query a:b:c to complete before and after debiasing.
    #[arg(long)]
    pub query: Vec<String>,
    /// Read at most this many embedding rows.
    #[arg(long)]
    pub max_vocab: Option<usize>,
    /// Standard deviation of the initial transform weights (default 1/√d).
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Fraction of analogies held out for evaluation.
    #[arg(long)]
    pub holdout: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Model name, or "all".
    #[arg(long, default_value = "all")]
    pub model: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Corrupt the analytic gradients (negative control).
    #[arg(long, hide = true)]
    pub tamper: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write the replayed metrics here instead of the recorded path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Resolved settings

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub predictor_lr: f64,
    pub adversary_lr: f64,
    pub alpha0: f64,
    pub eta: EtaChoice,
    pub t0: u64,
    pub debias: DebiasChoice,
    pub per_segment_projection: bool,
    pub loss_blowup_limit: f64,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl TrainSettings {
    pub fn train_config(&self, debias: bool, mode: FairnessMode) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            predictor_lr: self.predictor_lr,
            adversary_lr: self.adversary_lr,
            schedule: match self.eta {
                EtaChoice::Constant => ScheduleSpec::constant(self.alpha0),
                EtaChoice::InverseT => ScheduleSpec::inverse_t(self.alpha0, self.t0),
            },
            mode,
            debias,
            seed: self.seed,
            per_segment_projection: self.per_segment_projection,
            loss_blowup_limit: self.loss_blowup_limit,
        }
    }

    fn out_path(&self, command: &str) -> PathBuf {
        resolve_out(self.out.clone().unwrap_or_else(|| PathBuf::from(format!("{command}.json"))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySettings {
    #[serde(flatten)]
    pub train: TrainSettings,
    pub n: usize,
    pub test_n: usize,
}

impl Default for ToySettings {
    fn default() -> Self {
        ToySettings {
            train: TrainSettings {
                seed: 0,
                steps: 5000,
                batch_size: 128,
                predictor_lr: 0.01,
                adversary_lr: 0.1,
                alpha0: 1.0,
                eta: EtaChoice::InverseT,
                t0: 500,
                debias: DebiasChoice::Both,
                per_segment_projection: false,
                loss_blowup_limit: 1e3,
                out: None,
                report: None,
            },
            n: 10_000,
            test_n: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdultSettings {
    #[serde(flatten)]
    pub train: TrainSettings,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub mode: ModeChoice,
    pub target_y: u8,
}

impl Default for AdultSettings {
    fn default() -> Self {
        AdultSettings {
            train: TrainSettings {
                seed: 0,
                steps: 10_000,
                batch_size: 128,
                predictor_lr: 0.01,
                adversary_lr: 0.01,
                alpha0: 1.0,
                eta: EtaChoice::InverseT,
                t0: 1000,
                debias: DebiasChoice::Both,
                per_segment_projection: false,
                loss_blowup_limit: 1e3,
                out: None,
                report: None,
            },
            train_path: None,
            test_path: None,
            mode: ModeChoice::Odds,
            target_y: 1,
        }
    }
}

impl AdultSettings {
    fn fairness_mode(&self) -> FairnessMode {
        match self.mode {
            ModeChoice::Parity => FairnessMode::DemographicParity,
            ModeChoice::Odds => FairnessMode::EqualityOfOdds,
            ModeChoice::Opportunity => FairnessMode::EqualityOfOpportunity {
                target_y: self.target_y,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSettings {
    #[serde(flatten)]
    pub train: TrainSettings,
    pub embeddings: Option<PathBuf>,
    pub synthetic: bool,
    pub analogies: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub k: usize,
    pub query: Vec<String>,
    pub max_vocab: Option<usize>,
    pub init_scale: Option<f64>,
    pub holdout: f64,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        EmbedSettings {
            train: TrainSettings {
                seed: 0,
                steps: 10_000,
                batch_size: 32,
                predictor_lr: 0.01,
                adversary_lr: 0.001,
                alpha0: 0.1,
                eta: EtaChoice::InverseT,
                t0: 100,
                debias: DebiasChoice::Both,
                per_segment_projection: false,
                loss_blowup_limit: 1e3,
                out: None,
                report: None,
            },
            embeddings: None,
            synthetic: false,
            analogies: None,
            pairs: None,
            k: 1,
            query: Vec::new(),
            max_vocab: None,
            init_scale: None,
            holdout: 0.2,
        }
    }
}

/// Layers `config` (a JSON object file) and then `flags` over `defaults`.
/// Null values and empty arrays in `flags` mean "not given". Unknown keys
/// in the config file are rejected.
pub fn resolve_settings<S: Serialize + DeserializeOwned>(
    defaults: &S,
    config: Option<&Path>,
    flags: &impl Serialize,
) -> CliResult<S> {
    let mut merged = match serde_json::to_value(defaults).expect("settings serialize") {
        Value::Object(m) => m,
        _ => unreachable!("settings are structs"),
    };
    if let Some(path) = config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| input(format!("{}: {e}", path.display())))?;
        let Value::Object(entries) = value else {
            return Err(input(format!("{}: config must be a JSON object", path.display())));
        };
        for (key, v) in entries {
            if !merged.contains_key(&key) {
                return Err(input(format!("{}: unknown key {key:?}", path.display())));
            }
            merged.insert(key, v);
        }
    }
    if let Value::Object(entries) = serde_json::to_value(flags).expect("flags serialize") {
        for (key, v) in entries {
            let unset = v.is_null() || v.as_array().is_some_and(|a| a.is_empty());
            if !unset {
                merged.insert(key, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| input(format!("invalid settings: {e}")))
}

fn resolve_out(path: PathBuf) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() => PathBuf::from(dir).join(path),
        _ => path,
    }
}

/// `dir/name.json` → `dir/name.<suffix>`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Manifest

/// Everything needed to rerun a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved settings.
    pub config: Value,
    pub seed: u64,
    pub dataset_paths: Vec<PathBuf>,
    pub artifact_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub wall_time_s: f64,
    pub outputs: Vec<PathBuf>,
}

struct Recorder {
    command: &'static str,
    started: Instant,
    started_at: String,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    fn start(command: &'static str) -> Self {
        Recorder {
            command,
            started: Instant::now(),
            started_at: timestamp(),
            outputs: Vec::new(),
        }
    }

    fn write(&mut self, path: PathBuf, contents: &str) -> CliResult<()> {
        write_file(&path, contents)?;
        self.outputs.push(path);
        Ok(())
    }

    fn finish(
        self,
        out: &Path,
        config: &impl Serialize,
        seed: u64,
        dataset_paths: Vec<PathBuf>,
    ) -> CliResult<()> {
        let manifest = RunManifest {
            command: self.command.into(),
            config: serde_json::to_value(config).expect("settings serialize"),
            seed,
            dataset_paths,
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            started_at: self.started_at,
            finished_at: timestamp(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        let path = sibling(out, "manifest.json");
        write_file(&path, &to_json(&manifest))?;
        log::info!("manifest written to {}", path.display());
        Ok(())
    }
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub fpr: f64,
    pub fnr: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub positive_rate: f64,
}

impl From<&GroupReport> for GroupMetrics {
    fn from(g: &GroupReport) -> Self {
        GroupMetrics {
            fpr: g.fpr,
            fnr: g.fnr,
            tp: g.tp,
            fp: g.fp,
            tn: g.tn,
            fn_: g.fn_,
            positive_rate: g.positive_rate,
        }
    }
}

/// One classification run. `wall_time_s` stays null so that reruns are
/// byte-identical; timing lives in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub command: String,
    pub seed: u64,
    pub debias: bool,
    pub mode: String,
    pub accuracy: f64,
    pub groups: BTreeMap<String, GroupMetrics>,
    pub dp_gap: f64,
    pub eo_gap_y0: f64,
    pub eo_gap_y1: f64,
    pub p_value_y0: f64,
    pub p_value_y1: f64,
    pub steps: u64,
    pub wall_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<BTreeMap<String, f64>>,
    pub adversary_bce: Option<f64>,
    pub entropy_z: f64,
    pub entropy_z_given_y: Option<f64>,
    /// Mean adversary sub-batch size over training.
    pub mean_adversary_batch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub neutral_kept: usize,
    pub neutral_total: usize,
    pub biased_changed: usize,
    pub biased_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedMetrics {
    pub command: String,
    pub seed: u64,
    pub debias: bool,
    pub mode: String,
    pub k: usize,
    pub w_dot_g: f64,
    pub w_norm: f64,
    pub heldout_loss: f64,
    pub adversary_loss: Option<f64>,
    pub train_size: usize,
    pub test_size: usize,
    pub dropped_analogies: usize,
    pub steps: u64,
    pub wall_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<ProbeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub model: String,
    pub wrt: String,
    pub trials: usize,
    pub worst_error: f64,
    pub pass: bool,
}

fn metrics_json<M: Serialize>(runs: &[M]) -> String {
    match runs {
        [one] => to_json(one),
        many => to_json(&many),
    }
}

fn run_label(debias: bool) -> &'static str {
    if debias {
        "debiased"
    } else {
        "baseline"
    }
}

fn run_title(debias: bool) -> &'static str {
    if debias {
        "With debiasing"
    } else {
        "Without debiasing"
    }
}

/// Trains, writing the per-step log beside `out` whether or not the run
/// diverges.
fn train_logged<T: Task>(
    task: &T,
    cfg: &TrainConfig,
    data: &[T::Example],
    recorder: &mut Recorder,
    out: &Path,
) -> CliResult<TrainState<T>> {
    let log_path = sibling(out, &format!("{}.ndjson", run_label(cfg.debias)));
    match fit(task, cfg, data) {
        Ok(state) => {
            recorder.write(log_path, &state.log.to_ndjson())?;
            Ok(state)
        }
        Err(Error::Divergence { step, reason, log }) => {
            write_file(&log_path, &log.to_ndjson())?;
            Err(CliError::Diverged {
                step,
                reason,
                log: log_path,
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn classification_metrics<T: Task>(
    command: &str,
    cfg: &TrainConfig,
    state: &TrainState<T>,
    eval: &crate::trainer::ClassificationEval,
    group_names: [&str; 2],
) -> ClassificationMetrics {
    let r = &eval.report;
    let mean_adversary_batch = cfg.debias.then(|| {
        let records = &state.log.records;
        records.iter().map(|s| s.adversary_batch as f64).sum::<f64>() / records.len().max(1) as f64
    });
    ClassificationMetrics {
        command: command.into(),
        seed: cfg.seed,
        debias: cfg.debias,
        mode: cfg.mode.name().into(),
        accuracy: r.accuracy,
        groups: group_names
            .iter()
            .zip(&r.groups)
            .map(|(n, g)| (n.to_string(), g.into()))
            .collect(),
        dp_gap: r.dp_gap,
        eo_gap_y0: r.eo_gap_y0,
        eo_gap_y1: r.eo_gap_y1,
        p_value_y0: r.p_value_y0,
        p_value_y1: r.p_value_y1,
        steps: state.t,
        wall_time_s: None,
        coefficients: None,
        adversary_bce: eval.adversary_bce,
        entropy_z: eval.entropy.h_z,
        entropy_z_given_y: eval.entropy.h_z_given_y,
        mean_adversary_batch,
    }
}

/// FPR/FNR per group and run, with the two z-test p-values.
pub fn format_rate_table(runs: &[(&str, &FairnessReport)], group_names: [&str; 2]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<14}", "");
    for (title, _) in runs {
        let _ = write!(out, "{title:^24}");
    }
    out.push('\n');
    let _ = write!(out, "{:<14}", "");
    for _ in runs {
        let _ = write!(out, "{:>12}{:>12}", group_names[0], group_names[1]);
    }
    out.push('\n');
    for (name, fnr) in [("FPR", false), ("FNR", true)] {
        let _ = write!(out, "{name:<14}");
        for (_, r) in runs {
            for g in &r.groups {
                let _ = write!(out, "{:>12.4}", if fnr { g.fnr } else { g.fpr });
            }
        }
        out.push('\n');
    }
    for (name, pick) in [("accuracy", 0), ("p (y=0)", 1), ("p (y=1)", 2)] {
        let _ = write!(out, "{name:<14}");
        for (_, r) in runs {
            let v = [r.accuracy, r.p_value_y0, r.p_value_y1][pick];
            let _ = write!(out, "{v:^24.4}");
        }
        out.push('\n');
    }
    out
}

fn emit_report(text: &str, path: Option<&Path>, recorder: &mut Recorder) -> CliResult<()> {
    print!("{text}");
    if let Some(p) = path {
        recorder.write(resolve_out(p.to_path_buf()), text)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands

pub fn cmd_toy(s: &ToySettings) -> CliResult<i32> {
    let out = s.train.out_path("toy");
    let mut rec = Recorder::start("toy");
    let train = generate_toy(&ToyConfig {
        n: s.n,
        seed: s.train.seed,
    })?;
    let test = generate_toy(&ToyConfig {
        n: s.test_n,
        seed: s.train.seed.wrapping_add(TOY_TEST_SEED_OFFSET),
    })?;
    let task = ClassificationTask {
        dim: 2,
        mode: FairnessMode::DemographicParity,
    };
    let mut runs = Vec::new();
    let mut report = String::new();
    for &debias in s.train.debias.runs() {
        let cfg = s.train.train_config(debias, task.mode);
        let state = train_logged(&task, &cfg, &train, &mut rec, &out)?;
        let adversary = state.adversary.as_ref().map(|a| &a.model);
        let eval = evaluate_classification(&state.predictor, adversary, &test, cfg.mode)?;
        let coefs = named_coefficients(&state.predictor, &["r", "u"]);
        let mut m = classification_metrics("toy", &cfg, &state, &eval, ["z0", "z1"]);
        m.coefficients = Some(coefs.iter().cloned().collect());
        let c: BTreeMap<_, _> = coefs.into_iter().collect();
        let _ = writeln!(
            report,
            "{:<9} y = σ({:+.3}·u {:+.3}·r {:+.3})   accuracy {:.4}   dp_gap {:.4}",
            run_label(debias),
            c["u"],
            c["r"],
            c["bias"],
            m.accuracy,
            m.dp_gap
        );
        if let Some(bce) = m.adversary_bce {
            let _ = writeln!(report, "{:<9} adversary BCE {bce:.4} vs H(Z) {:.4}", "", m.entropy_z);
        }
        runs.push(m);
    }
    rec.write(out.clone(), &metrics_json(&runs))?;
    emit_report(&report, s.train.report.as_deref(), &mut rec)?;
    let mut recorded = s.clone();
    recorded.train.out = Some(out.clone());
    rec.finish(&out, &recorded, s.train.seed, Vec::new())?;
    Ok(EXIT_OK)
}

pub fn cmd_adult(s: &AdultSettings) -> CliResult<i32> {
    let (Some(train_path), Some(test_path)) = (&s.train_path, &s.test_path) else {
        return Err(input("adult needs --train-path and --test-path"));
    };
    let out = s.train.out_path("adult");
    let mut rec = Recorder::start("adult");
    let (train_rows, test_rows) = load_adult(train_path, test_path)?;
    let codec = AdultCodec::fitted(&train_rows)?;
    let train = encode_features(&train_rows, &codec)?;
    let test = encode_features(&test_rows, &codec)?;
    log::info!("adult: {} train rows, {} test rows, {} features", train.len(), test.len(), codec.dim()?);
    let task = ClassificationTask {
        dim: codec.dim()?,
        mode: s.fairness_mode(),
    };
    let names = ["female", "male"];
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for &debias in s.train.debias.runs() {
        let cfg = s.train.train_config(debias, task.mode);
        let state = train_logged(&task, &cfg, &train, &mut rec, &out)?;
        let adversary = state.adversary.as_ref().map(|a| &a.model);
        let eval = evaluate_classification(&state.predictor, adversary, &test, cfg.mode)?;
        runs.push(classification_metrics("adult", &cfg, &state, &eval, names));
        reports.push((run_title(debias), eval.report));
    }
    let confusion: Vec<(&str, &_)> = reports.iter().map(|(t, r)| (*t, &r.confusion)).collect();
    let rates: Vec<(&str, &FairnessReport)> = reports.iter().map(|(t, r)| (*t, r)).collect();
    let mut text = format_confusion_tables(&confusion, ["Female", "Male"]);
    text.push('\n');
    text.push_str(&format_rate_table(&rates, ["Female", "Male"]));
    rec.write(out.clone(), &metrics_json(&runs))?;
    emit_report(&text, s.train.report.as_deref(), &mut rec)?;
    let mut recorded = s.clone();
    recorded.train.out = Some(out.clone());
    rec.finish(&out, &recorded, s.train.seed, vec![train_path.clone(), test_path.clone()])?;
    Ok(EXIT_OK)
}

struct EmbedInputs {
    table: EmbeddingTable,
    pairs: Vec<(String, String)>,
    items: Vec<AnalogyItem>,
    dropped: usize,
    probes: Option<(Vec<AnalogyItem>, Vec<BiasedProbe>)>,
    paths: Vec<PathBuf>,
}

fn embed_inputs(s: &EmbedSettings) -> CliResult<EmbedInputs> {
    if s.synthetic {
        let f = planted_gender(s.train.seed)?;
        return Ok(EmbedInputs {
            table: f.table,
            pairs: f.pairs,
            items: f.analogies,
            dropped: 0,
            probes: Some((f.neutral_probes, f.biased_probes)),
            paths: Vec::new(),
        });
    }
    let Some(emb) = &s.embeddings else {
        return Err(input("embed needs --embeddings (or --synthetic)"));
    };
    let Some(analogies) = &s.analogies else {
        return Err(input("embed needs --analogies with --embeddings"));
    };
    let table = load_embeddings(emb, s.max_vocab)?;
    let mut paths = vec![emb.clone(), analogies.clone()];
    let pairs = match &s.pairs {
        Some(p) => {
            paths.push(p.clone());
            let pairs = load_pairs(p)?;
            let missing: Vec<&str> = pairs
                .iter()
                .flat_map(|(m, f)| [m.as_str(), f.as_str()])
                .filter(|w| !table.contains(w))
                .collect();
            if !missing.is_empty() {
                return Err(input(format!("pair words not in vocabulary: {}", missing.join(", "))));
            }
            pairs
        }
        None => {
            let (kept, skipped): (Vec<_>, Vec<_>) = default_gender_pairs()
                .into_iter()
                .partition(|(m, f)| table.contains(m) && table.contains(f));
            for (m, f) in &skipped {
                log::warn!("skipping default pair {m}/{f}: not in vocabulary");
            }
            kept
        }
    };
    let set = load_analogies(analogies, &table)?;
    Ok(EmbedInputs {
        table,
        pairs,
        items: set.items,
        dropped: set.dropped,
        probes: None,
        paths,
    })
}

fn parse_query(q: &str) -> CliResult<[String; 3]> {
    match q.split(':').collect::<Vec<_>>().as_slice() {
        [a, b, c] if !a.is_empty() && !b.is_empty() && !c.is_empty() => {
            Ok([a.to_string(), b.to_string(), c.to_string()])
        }
        _ => Err(input(format!("query {q:?} is not of the form a:b:c"))),
    }
}

fn top1(table: &EmbeddingTable, a: &str, b: &str, c: &str, t: &AnalogyPredictor) -> CliResult<String> {
    let best = complete_analogy(table, a, b, c, Some(t), 1)?;
    Ok(best.into_iter().next().map(|(w, _)| w).unwrap_or_default())
}

/// Side-by-side top completions, one column per run.
fn format_query_table(query: &[String; 3], columns: &[(&str, Vec<(String, f64)>)]) -> String {
    const WIDTH: usize = 28;
    let mut out = format!("{} : {} :: {} : ?\n", query[0], query[1], query[2]);
    for (title, _) in columns {
        let _ = write!(out, "{title:<WIDTH$}");
    }
    out.push('\n');
    let rows = columns.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for i in 0..rows {
        for (_, col) in columns {
            let cell = col
                .get(i)
                .map(|(w, score)| format!("{w:<18}{score:>8.4}"))
                .unwrap_or_default();
            let _ = write!(out, "{cell:<WIDTH$}");
        }
        out.push('\n');
    }
    out
}

pub fn cmd_embed(s: &EmbedSettings) -> CliResult<i32> {
    if !(s.holdout > 0.0 && s.holdout < 1.0) {
        return Err(input(format!("holdout must be in (0, 1), got {}", s.holdout)));
    }
    let queries = s.query.iter().map(|q| parse_query(q)).collect::<CliResult<Vec<_>>>()?;
    let out = s.train.out_path("embed");
    let mut rec = Recorder::start("embed");
    let inputs = embed_inputs(s)?;
    let table = &inputs.table;
    let missing: Vec<&str> = queries
        .iter()
        .flatten()
        .map(String::as_str)
        .filter(|w| !table.contains(w))
        .collect();
    if !missing.is_empty() {
        return Err(input(format!("query words not in vocabulary: {}", missing.join(", "))));
    }
    let subspace = compute_bias_subspace(table, &inputs.pairs, s.k)?;

    let mut items = inputs.items.clone();
    SeededRng::new(s.train.seed).shuffle(&mut items);
    let n_test = ((items.len() as f64) * s.holdout).round() as usize;
    if n_test == 0 || n_test >= items.len() {
        return Err(input(format!("{} usable analogies is too few to split", items.len())));
    }
    let (test_items, train_items) = items.split_at(n_test);
    let train = analogy_examples(table, train_items, &subspace)?;
    let test = analogy_examples(table, test_items, &subspace)?;
    let dim = table.dim();
    let task = AnalogyTask {
        dim,
        init_scale: s.init_scale.unwrap_or(1.0 / (dim as f64).sqrt()),
    };

    let mut runs = Vec::new();
    let mut transforms = Vec::new();
    let mut report = String::new();
    for &debias in s.train.debias.runs() {
        let cfg = s.train.train_config(debias, FairnessMode::DemographicParity);
        let state = train_logged(&task, &cfg, &train, &mut rec, &out)?;
        let adversary = state.adversary.as_ref().map(|a| &a.model);
        let eval = evaluate_analogy(&state.predictor, adversary, &test, &subspace)?;
        let probes = match &inputs.probes {
            Some((neutral, biased)) => {
                let mut summary = ProbeSummary {
                    neutral_kept: 0,
                    neutral_total: neutral.len(),
                    biased_changed: 0,
                    biased_total: biased.len(),
                };
                for p in neutral {
                    summary.neutral_kept += (top1(table, &p.a, &p.b, &p.c, &state.predictor)? == p.d) as usize;
                }
                for p in biased {
                    summary.biased_changed +=
                        (top1(table, &p.a, &p.b, &p.c, &state.predictor)? != p.biased) as usize;
                }
                Some(summary)
            }
            None => None,
        };
        let _ = writeln!(
            report,
            "{:<9} wᵀg {:+.4}   ||w|| {:.4}   held-out loss {:.5}",
            run_label(debias),
            eval.w_dot_g,
            eval.w_norm,
            eval.heldout_loss
        );
        runs.push(EmbedMetrics {
            command: "embed".into(),
            seed: s.train.seed,
            debias,
            mode: "embedding".into(),
            k: s.k,
            w_dot_g: eval.w_dot_g,
            w_norm: eval.w_norm,
            heldout_loss: eval.heldout_loss,
            adversary_loss: eval.adversary_loss,
            train_size: train.len(),
            test_size: test.len(),
            dropped_analogies: inputs.dropped,
            steps: state.t,
            wall_time_s: None,
            probes,
        });
        transforms.push((if debias { "Debiased" } else { "Biased" }, state.predictor));
    }
    for q in &queries {
        let columns = transforms
            .iter()
            .map(|(title, t)| Ok((*title, complete_analogy(table, &q[0], &q[1], &q[2], Some(t), QUERY_TOP_N)?)))
            .collect::<CliResult<Vec<_>>>()?;
        report.push('\n');
        report.push_str(&format_query_table(q, &columns));
    }
    rec.write(out.clone(), &metrics_json(&runs))?;
    emit_report(&report, s.train.report.as_deref(), &mut rec)?;
    let mut recorded = s.clone();
    recorded.train.out = Some(out.clone());
    rec.finish(&out, &recorded, s.train.seed, inputs.paths)?;
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<i32> {
    let targets: Vec<GradCheckTarget> = if a.model == "all" {
        GradCheckTarget::ALL.to_vec()
    } else {
        let t = GradCheckTarget::from_name(&a.model).ok_or_else(|| {
            let names: Vec<&str> = GradCheckTarget::ALL.iter().map(|t| t.name()).collect();
            input(format!("unknown model {:?}; expected all or one of {}", a.model, names.join(", ")))
        })?;
        vec![t]
    };
    if a.trials == 0 {
        return Err(input("trials must be positive"));
    }
    let mut rec = Recorder::start("gradcheck");
    let mut rows = Vec::new();
    for t in targets {
        for o in check_model_gradients(t, a.seed, a.trials, a.tamper)? {
            let pass = o.worst_error < GRADCHECK_TOLERANCE;
            println!(
                "{:<12} d/d{}  worst relative error {:.3e}  {}",
                t.name(),
                o.wrt,
                o.worst_error,
                if pass { "ok" } else { "FAIL" }
            );
            rows.push(GradcheckRow {
                model: t.name().into(),
                wrt: o.wrt.into(),
                trials: o.trials,
                worst_error: o.worst_error,
                pass,
            });
        }
    }
    let all_pass = rows.iter().all(|r| r.pass);
    if let Some(out) = &a.out {
        let out = resolve_out(out.clone());
        rec.write(out.clone(), &to_json(&rows))?;
        let config = serde_json::json!({
            "model": a.model,
            "seed": a.seed,
            "trials": a.trials,
            "tamper": a.tamper,
            "out": out,
        });
        rec.finish(&out, &config, a.seed, Vec::new())?;
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn settings_from<S: DeserializeOwned>(config: Value) -> CliResult<S> {
    serde_json::from_value(config).map_err(|e| input(format!("manifest config: {e}")))
}

pub fn cmd_replay(a: &ReplayArgs) -> CliResult<i32> {
    let m = read_manifest(&a.manifest)?;
    let mut config = m.config;
    if let (Some(out), Value::Object(map)) = (&a.out, &mut config) {
        map.insert("out".into(), serde_json::to_value(out).expect("path"));
    }
    match m.command.as_str() {
        "toy" => cmd_toy(&settings_from(config)?),
        "adult" => cmd_adult(&settings_from(config)?),
        "embed" => cmd_embed(&settings_from(config)?),
        "gradcheck" => {
            let field = |k: &str| config.get(k).cloned().unwrap_or(Value::Null);
            cmd_gradcheck(&GradcheckArgs {
                model: settings_from(field("model"))?,
                seed: settings_from(field("seed"))?,
                trials: settings_from(field("trials"))?,
                out: settings_from(field("out"))?,
                tamper: settings_from(field("tamper"))?,
            })
        }
        other => Err(input(format!("manifest names unknown command {other:?}"))),
    }
}

pub fn dispatch(cli: &Cli) -> CliResult<i32> {
    match &cli.command {
        Command::Toy(a) => {
            let s: ToySettings =
                resolve_settings(&ToySettings::default(), a.train.config.as_deref(), a)?;
            cmd_toy(&s)
        }
        Command::Adult(a) => {
            let s: AdultSettings =
                resolve_settings(&AdultSettings::default(), a.train.config.as_deref(), a)?;
            cmd_adult(&s)
        }
        Command::Embed(a) => {
            let s: EmbedSettings =
                resolve_settings(&EmbedSettings::default(), a.train.config.as_deref(), a)?;
            cmd_embed(&s)
        }
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
