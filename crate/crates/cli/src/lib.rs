//! The `mindrel` command line.

pub mod dialogue;

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use mindrel_core::artifacts::Artifacts;
use mindrel_core::data::{sample_partition, DataError, FeaturePartition};
use mindrel_core::engine::{EngineConfig, SelectorRegistry};
use mindrel_core::eval::{self, ExperimentSpec, Method};
use mindrel_core::gaussian::{GaussianError, DEFAULT_RIDGE};
use mindrel_core::model::{Classifier, ModelError, ModelFamily, TrainConfig};
use mindrel_core::{synth, Error};

/// Spec used by `evaluate --spec quick`.
pub const QUICK_SPEC: &str = include_str!("../specs/quick.toml");

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

#[derive(Debug, Parser)]
#[command(name = "mindrel", version, about = "Ask only for the features a prediction needs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and feature statistics; writes model.json, stats.json, normalizer.json.
    Train(TrainArgs),
    /// Run an experiment spec; writes results.json, results.csv, core_sizes.csv, timings.json.
    Evaluate(EvaluateArgs),
    /// Disclose sensitive features one at a time from standard input.
    Interactive(SessionArgs),
    /// Run the protocol on one complete record and print the step log as JSON.
    Audit(AuditArgs),
    /// Serve sessions over HTTP.
    Serve(ServeArgs),
    /// Write a bundled dataset as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Bundled dataset name or CSV path.
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value = synth::LABEL_COLUMN)]
    pub label: String,
    #[arg(long, default_value = "logistic")]
    pub model: ModelFamily,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// TOML or JSON spec path, or `quick` for the bundled one.
    #[arg(long)]
    pub spec: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Directory holding model.json, stats.json and normalizer.json.
    #[arg(long)]
    pub artifacts: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long, default_value = "fscore")]
    pub selector: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EngineArgs {
    fn config(&self) -> EngineConfig {
        EngineConfig {
            delta: self.delta,
            selector: self.selector.clone(),
            seed: self.seed,
            ..EngineConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Raw public values, `name=value,...`; every other feature is sensitive.
    #[arg(long, default_value = "")]
    pub public: String,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Raw values for every feature, `name=value,...`.
    #[arg(long)]
    pub record: String,
    /// Comma-separated feature names, or a count drawn at random under `--seed`.
    #[arg(long)]
    pub sensitive: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: exit::USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            exit::NUMERICAL
        } else {
            match &e {
                Error::InvalidArgument(_) | Error::UnknownSelector(_) | Error::Budget(_) => exit::USAGE,
                Error::Data(DataError::UnknownFeature(_) | DataError::TooManySensitive { .. }) => exit::USAGE,
                Error::Data(_) | Error::Io { .. } | Error::Model(ModelError::Invalid(_)) => exit::DATA,
                Error::Gaussian(GaussianError::Invalid(_) | GaussianError::Shape { .. }) => exit::DATA,
                _ => exit::NUMERICAL,
            }
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn write_out<W: Write>(out: &mut W, text: &str) -> CmdResult {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::from(Error::Io {
            path: "<stdout>".into(),
            source: e,
        }))
}

/// `name=value` pairs, in order.
pub fn parse_assignments(text: &str) -> Result<Vec<(String, f64)>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (name, value) = pair
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("expected name=value, got `{pair}`")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Failure::usage(format!("`{value}` is not a number (feature `{name}`)")))?;
            if !v.is_finite() {
                return Err(Failure::usage(format!("value for `{name}` must be finite")));
            }
            Ok((name.trim().to_owned(), v))
        })
        .collect()
}

/// Sensitive set from names or from a count sampled under `seed`.
pub fn parse_sensitive(text: &str, artifacts: &Artifacts, seed: u64) -> Result<FeaturePartition, Failure> {
    let d = artifacts.feature_names().len();
    if let Ok(count) = text.trim().parse::<usize>() {
        return Ok(sample_partition(d, count, seed).map_err(Error::from)?);
    }
    let names: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    Ok(FeaturePartition::from_names(&artifacts.feature_names(), &names).map_err(Error::from)?)
}

fn load_artifacts(dir: &Path) -> Result<Artifacts, Failure> {
    Ok(Artifacts::load(dir)?)
}

fn train<W: Write>(a: &TrainArgs, out: &mut W) -> CmdResult {
    let raw = eval::load_dataset(&a.dataset, &a.label)?;
    let mut config = match a.model {
        ModelFamily::Logistic => TrainConfig::logistic_default(a.seed),
        ModelFamily::Mlp => TrainConfig::mlp_default(a.seed),
    };
    config.epochs = a.epochs.unwrap_or(config.epochs);
    config.lr = a.lr.unwrap_or(config.lr);
    let trained = eval::train_pipeline(&raw, a.model, &config, a.train_fraction, DEFAULT_RIDGE)?;
    Artifacts::from_trained(&trained)?.save(&a.out)?;
    let model = trained.model();
    write_out(
        out,
        &format!(
            "trained {} on {} rows ({} features); train accuracy {:.4}, test accuracy {:.4}\nartifacts in {}\n",
            a.model,
            trained.train.num_rows(),
            model.num_features(),
            mindrel_core::model::accuracy(model, &trained.train),
            mindrel_core::model::accuracy(model, &trained.test),
            a.out.display()
        ),
    )
}

fn load_spec(spec: &str) -> Result<ExperimentSpec, Failure> {
    if spec == "quick" {
        return Ok(ExperimentSpec::from_toml(QUICK_SPEC)?);
    }
    Ok(ExperimentSpec::from_path(Path::new(spec))?)
}

fn evaluate<W: Write>(a: &EvaluateArgs, out: &mut W) -> CmdResult {
    let spec = load_spec(&a.spec)?;
    let start = Instant::now();
    let result = eval::run_experiment(&spec)?;
    result.write_outputs(&a.out)?;
    let mut text = format!(
        "{}: {} cells in {:.1}s, outputs in {}\n",
        spec.name,
        result.cells.len(),
        start.elapsed().as_secs_f64(),
        a.out.display()
    );
    for c in &result.cells {
        let label = match c.method {
            Method::Mindrel => format!(
                "mindrel {} delta={}",
                c.selector.as_deref().unwrap_or("-"),
                c.delta.unwrap_or_default()
            ),
            m => m.as_str().to_owned(),
        };
        text.push_str(&format!(
            "  |S|={:<3} {:<32} accuracy {:.4}  leakage {:.4}\n",
            c.sensitive_size, label, c.mean_accuracy, c.mean_leakage
        ));
    }
    write_out(out, &text)
}

fn interactive<R: BufRead, W: Write>(a: &SessionArgs, input: &mut R, out: &mut W) -> CmdResult {
    let artifacts = load_artifacts(&a.engine.artifacts)?;
    let engine = artifacts.engine(a.engine.config(), &SelectorRegistry::builtin())?;
    let pairs = parse_assignments(&a.public)?;
    let names: Vec<&str> = pairs.iter().map(|(n, _)| n.as_str()).collect();
    let partition = artifacts.partition_public(&names)?;
    let public: Vec<f64> = partition
        .public_idx
        .iter()
        .map(|&i| {
            let name = &artifacts.feature_names()[i];
            pairs.iter().rev().find(|(n, _)| n == name).map(|(_, v)| *v).unwrap_or_default()
        })
        .collect();
    dialogue::run(&engine, &artifacts, &partition, &public, input, out)?;
    Ok(())
}

fn audit<W: Write>(a: &AuditArgs, out: &mut W) -> CmdResult {
    let artifacts = load_artifacts(&a.engine.artifacts)?;
    let engine = artifacts.engine(a.engine.config(), &SelectorRegistry::builtin())?;
    let names = artifacts.feature_names();
    let pairs = parse_assignments(&a.record)?;
    let mut x = vec![None; names.len()];
    for (name, raw) in &pairs {
        let i = artifacts
            .feature_index(name)
            .ok_or_else(|| Failure::from(Error::from(DataError::UnknownFeature(name.clone()))))?;
        x[i] = Some(artifacts.normalize(i, *raw).clamp(-1.0, 1.0));
    }
    let x: Vec<f64> = x
        .into_iter()
        .zip(&names)
        .map(|(v, n)| v.ok_or_else(|| Failure::usage(format!("record is missing `{n}`"))))
        .collect::<Result<_, _>>()?;
    let partition = parse_sensitive(&a.sensitive, &artifacts, a.engine.seed)?;
    let session = engine.run_auto(&x, &partition)?;
    let report = serde_json::json!({
        "label": session.label(),
        "all_features_label": artifacts.model.hard_predict(&x).map_err(Error::from)?,
        "confidence": session.confidence,
        "sensitive": partition.sensitive_idx.iter().map(|&i| &names[i]).collect::<Vec<_>>(),
        "revealed": session.revealed.iter().map(|r| &names[r.feature]).collect::<Vec<_>>(),
        "leakage": session.leakage(),
        "log": session.log,
    });
    write_out(out, &format!("{}\n", serde_json::to_string_pretty(&report).expect("json")))
}

fn serve(a: &ServeArgs) -> CmdResult {
    let artifacts = load_artifacts(&a.engine.artifacts)?;
    let state = mindrel_service::AppState::new(artifacts, a.engine.config(), mindrel_service::DEFAULT_TTL)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::usage(e.to_string()))?;
    rt.block_on(mindrel_service::serve(state, a.bind))
        .map_err(|e| Failure::usage(format!("cannot serve on {}: {e}", a.bind)))
}

fn generate(a: &GenerateArgs) -> CmdResult {
    let text = synth::csv_text(&a.dataset).map_err(Error::from)?;
    std::fs::write(&a.out, text).map_err(|source| {
        Failure::from(Error::Io {
            path: a.out.display().to_string(),
            source,
        })
    })
}

pub fn execute<R: BufRead, W: Write>(cli: &Cli, input: &mut R, out: &mut W) -> CmdResult {
    match &cli.command {
        Command::Train(a) => train(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Interactive(a) => interactive(a, input, out),
        Command::Audit(a) => audit(a, out),
        Command::Serve(a) => serve(a),
        Command::Generate(a) => generate(a),
    }
}

/// Parses `args`, runs the command and returns the exit code. Errors go to `err`.
pub fn run<I, T, R, W, E>(args: I, input: &mut R, out: &mut W, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    R: BufRead,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match execute(&cli, input, out) {
        Ok(()) => exit::OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
