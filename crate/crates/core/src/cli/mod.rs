//! Command-line front end: `sample`, `partition`, `train`, `predict` and
//! `verify`.
//!
//! Every subcommand needs an explicit `--seed` (or a `seed` key in the
//! `--config` file). Keys in the config file override flags of the same name.
//! Exit codes: 2 for configuration errors, 3 for estimator or sampler
//! failures, 4 for verification failures.

mod verify;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::model::{joint_dim, l2_norm, label_only_input, Dataset, Params};
use crate::oracle;
use crate::output_spaces::{OutputSpace, Structure};
use crate::partition::{self, EstimatorMode, PartitionEstimate, DEFAULT_P};
use crate::rng::RngStream;
use crate::samplers::{GibbsTarget, SamplerMode, SamplerReport, DEFAULT_MAX_EPOCHS};
use crate::training::{self, AnnealConfig, GradientMode, StepSize, TrainConfig, TrainedModel};

pub use verify::{run_suite, CheckResult, VerifySummary, DEFAULT_VERIFY_SEED};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ESTIMATOR: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Failure of a subcommand, with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EpochBudgetExhausted { .. } | Error::TooFewRuns { .. } | Error::InsufficientSamples(_) => EXIT_ESTIMATOR,
            _ => EXIT_CONFIG,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::config(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "structpred", version, about = "Sampling, partition estimation and training for structured output spaces")]
pub struct Cli {
    /// JSON object whose keys override flags of the same name.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw structures from the Gibbs distribution.
    Sample(SampleArgs),
    /// Estimate the log partition function.
    Partition(PartitionArgs),
    /// Train a model by projected gradient descent.
    Train(TrainArgs),
    /// Predict structures with a trained model.
    Predict(PredictArgs),
    /// Run the oracle invariant suite.
    Verify(VerifyArgs),
}

/// Where `θ` comes from: a JSON file, or a random direction scaled to `theta_norm`.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ThetaArgs {
    /// JSON array of parameters, or a model file with a `theta` field.
    #[arg(long)]
    pub theta_file: Option<PathBuf>,
    /// Norm of the random parameter vector (default 1).
    #[arg(long)]
    pub theta_norm: Option<f64>,
    /// Seed of the random parameter vector (default: --seed).
    #[arg(long)]
    pub theta_seed: Option<u64>,
    /// Input features, comma separated; omitted means label-only features.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Option<Vec<f64>>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Output space, e.g. hypercube:4, permutations:3, cycles:5, subtrees:tree.txt.
    #[arg(long)]
    pub space: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Inverse temperature in [0, 1] (default 1).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Number of samples (default 1).
    #[arg(long)]
    pub n: Option<usize>,
    /// cftp, rejection or approx (default cftp).
    #[arg(long)]
    pub sampler: Option<String>,
    /// Shorthand for --sampler cftp.
    #[arg(long)]
    #[serde(default)]
    pub exact_cftp: bool,
    /// Total-variation budget of the approximate sampler (default 0.01).
    #[arg(long)]
    pub eps_tv: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<u32>,
    /// Failure probability of the retry policy: an exhausted draw is retried
    /// on up to ⌈ln(1/δ)⌉ fresh streams (default 0.01).
    #[arg(long)]
    pub delta: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub theta: ThetaArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct PartitionArgs {
    #[arg(long)]
    pub space: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relative accuracy in (0, 1] (default 0.2).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Schedule granularity (default 3).
    #[arg(long)]
    pub p: Option<u32>,
    /// exact or approximate (default exact).
    #[arg(long)]
    pub mode: Option<String>,
    /// Boost confidence to 1 − δ with a median of independent runs.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Emit the exact log partition function and the relative error.
    #[arg(long)]
    #[serde(default)]
    pub oracle: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub theta: ThetaArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset JSON (see `Dataset`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Regularization weight (default 0.1).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Iteration cap (default 200).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Initial step size (default 1/(2λ + 1)).
    #[arg(long)]
    pub step: Option<f64>,
    /// decay or fixed (default decay).
    #[arg(long)]
    pub step_rule: Option<String>,
    /// exact or mcmc (default exact).
    #[arg(long)]
    pub mode: Option<String>,
    /// Gradient accuracy for mcmc mode (default 0.05).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Gradient failure probability for mcmc mode (default 0.05).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Sampler for mcmc mode: cftp, rejection or approx (default cftp).
    #[arg(long)]
    pub sampler: Option<String>,
    /// Projection radius (default √(ln|Y|/λ)).
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Model JSON path (default model.json).
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Trace CSV path (default trace.csv).
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Add a wall-time column to the trace (breaks byte-identical reruns).
    #[arg(long)]
    #[serde(default)]
    pub timings: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single input, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Option<Vec<f64>>,
    /// Dataset whose inputs are predicted, one line per instance.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub rungs: Option<usize>,
    #[arg(long)]
    pub beta_max: Option<f64>,
    #[arg(long)]
    pub steps_per_rung: Option<usize>,
    /// Also emit the exact argmax by enumeration.
    #[arg(long)]
    #[serde(default)]
    pub oracle: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// Seed of the randomized checks (default 20240611).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse arguments, run the subcommand and return the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let overrides = match &cli.config {
        Some(path) => Some(read_config(path)?),
        None => None,
    };
    match cli.command {
        Command::Sample(a) => cmd_sample(&merge(a, overrides.as_ref())?),
        Command::Partition(a) => cmd_partition(&merge(a, overrides.as_ref())?),
        Command::Train(a) => cmd_train(&merge(a, overrides.as_ref())?),
        Command::Predict(a) => cmd_predict(&merge(a, overrides.as_ref())?),
        Command::Verify(a) => cmd_verify(&merge(a, overrides.as_ref())?),
    }
}

fn read_config(path: &Path) -> CliResult<serde_json::Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::config("config file must hold a JSON object")),
        Err(e) => Err(CliError::config(format!("{}: {e}", path.display()))),
    }
}

/// Overlay config keys (snake or kebab case) onto parsed flags.
pub fn merge<T: Serialize + DeserializeOwned>(args: T, overrides: Option<&serde_json::Map<String, Value>>) -> CliResult<T> {
    let Some(overrides) = overrides else { return Ok(args) };
    let mut value = serde_json::to_value(&args).map_err(|e| CliError::config(e.to_string()))?;
    let fields = value.as_object_mut().expect("argument structs serialize to objects");
    for (key, v) in overrides {
        let key = key.replace('-', "_");
        if !fields.contains_key(&key) {
            return Err(CliError::config(format!("unknown config key {key:?}")));
        }
        fields.insert(key, v.clone());
    }
    serde_json::from_value(value).map_err(|e| CliError::config(format!("config: {e}")))
}

fn require<T: Clone>(value: &Option<T>, name: &str) -> CliResult<T> {
    value.clone().ok_or_else(|| CliError::config(format!("--{name} is required")))
}

fn parse_space(desc: &Option<String>) -> CliResult<OutputSpace> {
    Ok(OutputSpace::parse_descriptor(&require(desc, "space")?)?)
}

fn parse_sampler(name: Option<&str>, eps_tv: f64, max_epochs: u32) -> CliResult<SamplerMode> {
    match name.unwrap_or("cftp") {
        "cftp" | "exact" | "exact-cftp" => Ok(SamplerMode::ExactCftp { max_epochs }),
        "rejection" => Ok(SamplerMode::Rejection),
        "approx" | "approximate" => {
            if !(eps_tv > 0.0 && eps_tv < 1.0) {
                return Err(CliError::config(format!("eps-tv must lie in (0, 1), got {eps_tv}")));
            }
            Ok(SamplerMode::Approximate { eps_tv })
        }
        other => Err(CliError::config(format!("unknown sampler {other:?}"))),
    }
}

fn sampler_name(mode: &SamplerMode) -> &'static str {
    match mode {
        SamplerMode::ExactCftp { .. } => "exact_cftp",
        SamplerMode::Rejection => "rejection",
        SamplerMode::Approximate { .. } => "approximate",
    }
}

/// Random direction scaled to `norm`, or the contents of a file.
pub fn load_theta(theta: &ThetaArgs, dim: usize, seed: u64) -> CliResult<Params> {
    let values = match &theta.theta_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let array = match &value {
                Value::Object(map) => map.get("theta").cloned().unwrap_or(Value::Null),
                other => other.clone(),
            };
            serde_json::from_value::<Vec<f64>>(array)
                .map_err(|_| CliError::config(format!("{}: expected an array of numbers or an object with `theta`", path.display())))?
        }
        None => {
            let norm = theta.theta_norm.unwrap_or(1.0);
            if !(norm >= 0.0 && norm.is_finite()) {
                return Err(CliError::config(format!("theta-norm must be non-negative, got {norm}")));
            }
            random_theta(dim, norm, theta.theta_seed.unwrap_or(seed))
        }
    };
    if values.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: values.len() }.into());
    }
    Ok(Params::from_theta(values))
}

/// Uniform direction (normalized Gaussian) of the given norm.
pub fn random_theta(dim: usize, norm: f64, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed).child(THETA_KEY).rng();
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = l2_norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|t| *t *= norm / n);
    }
    v
}

const THETA_KEY: u64 = 0x7468_6574_61;
const DRAW_KEY: u64 = 1;

fn input_of(theta: &ThetaArgs) -> Vec<f64> {
    theta.x.clone().unwrap_or_else(label_only_input)
}

fn open_output(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn retries_for(delta: f64) -> CliResult<u64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CliError::config(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok((1.0 / delta).ln().ceil() as u64)
}

/// Draw from `stream`, retrying an exhausted epoch budget on fresh
/// sub-streams `stream/1 .. stream/retries`.
pub fn draw_with_retries(
    target: &GibbsTarget,
    mode: SamplerMode,
    stream: &RngStream,
    retries: u64,
) -> crate::Result<(Structure, SamplerReport)> {
    let mut last = mode.draw(target, &mut stream.rng());
    for r in 1..=retries {
        match last {
            Err(Error::EpochBudgetExhausted { .. }) => last = mode.draw(target, &mut stream.child(r).rng()),
            _ => break,
        }
    }
    last
}

#[derive(Serialize)]
struct SampleRecord<'a> {
    structure: &'a Structure,
    score: f64,
    sampler: &'static str,
    steps: u64,
}

pub fn cmd_sample(a: &SampleArgs) -> CliResult<()> {
    let space = parse_space(&a.space)?;
    let seed = require(&a.seed, "seed")?;
    let x = input_of(&a.theta);
    let params = load_theta(&a.theta, joint_dim(x.len(), &space), seed)?;
    let target = GibbsTarget::new(space.clone(), params, a.beta.unwrap_or(1.0), x)?;
    let name = if a.exact_cftp { Some("cftp") } else { a.sampler.as_deref() };
    let mode = parse_sampler(name, a.eps_tv.unwrap_or(0.01), a.max_epochs.unwrap_or(DEFAULT_MAX_EPOCHS))?;
    let retries = retries_for(a.delta.unwrap_or(0.01))?;
    let stream = RngStream::new(seed).child(DRAW_KEY);
    let mut out = open_output(&a.out)?;
    for i in 0..a.n.unwrap_or(1) {
        let (y, report) = draw_with_retries(&target, mode, &stream.child(i as u64), retries)?;
        if !space.contains(&y) {
            return Err(CliError { code: EXIT_ESTIMATOR, message: format!("sampler produced a non-member {y}") });
        }
        let record = SampleRecord { structure: &y, score: target.score(&y), sampler: sampler_name(&mode), steps: report.steps_taken };
        writeln!(out, "{}", serde_json::to_string(&record).map_err(|e| CliError::config(e.to_string()))?)?;
    }
    out.flush()?;
    Ok(())
}

/// Run the estimator (with median boosting when `delta` is set) and return
/// the JSON document `cmd_partition` prints.
pub fn partition_report(a: &PartitionArgs) -> CliResult<Value> {
    let space = parse_space(&a.space)?;
    let seed = require(&a.seed, "seed")?;
    let x = input_of(&a.theta);
    let params = load_theta(&a.theta, joint_dim(x.len(), &space), seed)?;
    let target = GibbsTarget::new(space.clone(), params.clone(), 1.0, x.clone())?;
    let epsilon = a.epsilon.unwrap_or(0.2);
    let p = a.p.unwrap_or(DEFAULT_P);
    let mode: EstimatorMode = a.mode.as_deref().unwrap_or("exact").parse()?;
    let stream = RngStream::new(seed);
    let estimate: PartitionEstimate = match a.delta {
        None => partition::estimate_partition(&target, epsilon, p, mode, &stream)?,
        Some(delta) => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(CliError::config(format!("delta must lie in (0, 1), got {delta}")));
            }
            let runs = (0..partition::runs_for_confidence(delta))
                .map(|r| partition::estimate_partition(&target, epsilon, p, mode, &stream.child(r as u64)))
                .collect::<crate::Result<Vec<_>>>()?;
            partition::boost_by_median(&runs, delta)?
        }
    };
    let mut value = serde_json::to_value(&estimate).map_err(|e| CliError::config(e.to_string()))?;
    if a.oracle {
        let exact = oracle::exact_log_partition_at(&space, &params, &x)?;
        let map = value.as_object_mut().expect("estimates serialize to objects");
        map.insert("oracle_log_value".into(), json!(exact));
        map.insert("relative_error".into(), json!(((estimate.log_value - exact).exp() - 1.0).abs()));
    }
    Ok(value)
}

pub fn cmd_partition(a: &PartitionArgs) -> CliResult<()> {
    let value = partition_report(a)?;
    let mut out = open_output(&a.out)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&value).map_err(|e| CliError::config(e.to_string()))?)?;
    out.flush()?;
    Ok(())
}

pub fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut config = TrainConfig::new(a.lambda.unwrap_or(0.1));
    config.max_iters = a.iters.unwrap_or(config.max_iters);
    let eta0 = a.step.unwrap_or(config.step_size.at(0));
    config.step_size = match a.step_rule.as_deref().unwrap_or("decay") {
        "decay" => StepSize::Decay(eta0),
        "fixed" => StepSize::Fixed(eta0),
        other => return Err(CliError::config(format!("unknown step rule {other:?}"))),
    };
    config.gradient_mode = match a.mode.as_deref().unwrap_or("exact") {
        "exact" => GradientMode::ExactOracle,
        "mcmc" => GradientMode::Mcmc {
            epsilon: a.epsilon.unwrap_or(0.05),
            delta: a.delta.unwrap_or(0.05),
            sampler: parse_sampler(a.sampler.as_deref(), 0.01, DEFAULT_MAX_EPOCHS)?,
        },
        other => return Err(CliError::config(format!("unknown training mode {other:?}"))),
    };
    config.projection_radius = a.radius;
    config.tolerance = a.tolerance.unwrap_or(config.tolerance);
    config.validate()?;
    Ok(config)
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let data_path = require(&a.data, "data")?;
    let seed = require(&a.seed, "seed")?;
    let data = Dataset::read(&data_path).map_err(|e| CliError::config(format!("{}: {e}", data_path.display())))?;
    let config = train_config(a)?;
    let (params, trace) = training::train(&data, &config, &RngStream::new(seed))?;
    let model = TrainedModel::new(&data, &params, seed);
    let model_out = a.model_out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    let trace_out = a.trace_out.clone().unwrap_or_else(|| PathBuf::from("trace.csv"));
    fs::write(&model_out, model.to_json()? + "\n")?;
    fs::write(&trace_out, trace.to_csv(a.timings))?;
    Ok(())
}

#[derive(Serialize)]
struct PredictRecord {
    x: Vec<f64>,
    structure: Structure,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_argmax: Option<Structure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_score: Option<f64>,
}

pub fn cmd_predict(a: &PredictArgs) -> CliResult<()> {
    let model_path = require(&a.model, "model")?;
    let seed = require(&a.seed, "seed")?;
    let model = TrainedModel::read(&model_path).map_err(|e| CliError::config(format!("{}: {e}", model_path.display())))?;
    let params = model.params()?;
    let inputs: Vec<Vec<f64>> = match (&a.x, &a.data) {
        (Some(x), None) => vec![x.clone()],
        (None, Some(path)) => Dataset::read(path)?.instances.into_iter().map(|i| i.x).collect(),
        (None, None) => vec![label_only_input()],
        (Some(_), Some(_)) => return Err(CliError::config("give either --x or --data, not both")),
    };
    let defaults = AnnealConfig::default();
    let anneal = AnnealConfig {
        rungs: a.rungs.unwrap_or(defaults.rungs),
        beta_max: a.beta_max.unwrap_or(defaults.beta_max),
        steps_per_rung: a.steps_per_rung.unwrap_or(defaults.steps_per_rung),
    };
    let stream = RngStream::new(seed).child(DRAW_KEY);
    let mut out = open_output(&a.out)?;
    for (i, x) in inputs.into_iter().enumerate() {
        if x.len() != model.input_dim {
            return Err(Error::DimensionMismatch { expected: model.input_dim, got: x.len() }.into());
        }
        let y = training::predict_map(&model.space, &x, &params, &anneal, &mut stream.child(i as u64).rng())?;
        let score = training::model_score(&model.space, &x, &params, &y)?;
        let (oracle_argmax, oracle_score) = if a.oracle {
            let target = GibbsTarget::new(model.space.clone(), params.clone(), 1.0, x.clone())?;
            let best = oracle::exact_argmax(&target)?;
            let s = target.score(&best);
            (Some(best), Some(s))
        } else {
            (None, None)
        };
        let record = PredictRecord { x, structure: y, score, oracle_argmax, oracle_score };
        writeln!(out, "{}", serde_json::to_string(&record).map_err(|e| CliError::config(e.to_string()))?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_verify(a: &VerifyArgs) -> CliResult<()> {
    let summary = run_suite(a.seed.unwrap_or(DEFAULT_VERIFY_SEED));
    let mut out = open_output(&a.out)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&summary).map_err(|e| CliError::config(e.to_string()))?)?;
    out.flush()?;
    if summary.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = summary.checks.iter().filter(|c| c.status != "pass").map(|c| c.name.as_str()).collect();
        Err(CliError { code: EXIT_VERIFY, message: format!("failed checks: {}", failed.join(", ")) })
    }
}
