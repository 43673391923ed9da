//! Experiment harness: random sensitive sets, repeated runs, accuracy and
//! data-leakage metrics against the All-features and Optimal baselines.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coreset::{optimal_min_core, TestConfig};
use crate::data::{apply_normalizer, fit_normalizer, load_csv, sample_partition, split, Dataset, NormalizationSpec};
use crate::engine::{Engine, EngineConfig, SelectorRegistry, Session};
use crate::error::{Error, Result};
use crate::gaussian::{estimate, GaussianStats, DEFAULT_RIDGE};
use crate::model::{train_logistic, train_mlp, Classifier, Model, ModelArtifact, ModelFamily, TrainConfig};
use crate::{rng, synth};

/// Largest `|S|` for which the exhaustive baseline may be requested.
pub const OPTIMAL_BUDGET: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Bundled dataset name or path to a CSV file.
    pub dataset: String,
    pub label_column: String,
    pub model: ModelFamily,
    pub sensitive_sizes: Vec<usize>,
    pub deltas: Vec<f64>,
    pub selectors: Vec<String>,
    pub repetitions: usize,
    pub seed: u64,
    pub train_fraction: f64,
    /// Cap on evaluated test rows; `None` uses the whole test split.
    pub max_test: Option<usize>,
    pub include_optimal: bool,
    pub mc_samples: usize,
    pub probe_samples: usize,
    pub ridge: f64,
    /// Overrides the family's default training hyperparameters.
    pub train: Option<TrainConfig>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            dataset: "synthetic".into(),
            label_column: synth::LABEL_COLUMN.into(),
            model: ModelFamily::Logistic,
            sensitive_sizes: vec![5],
            deltas: vec![0.0],
            selectors: vec!["fscore".into()],
            repetitions: 20,
            seed: 0,
            train_fraction: 0.7,
            max_test: Some(500),
            include_optimal: false,
            mc_samples: 100,
            probe_samples: 100_000,
            ridge: DEFAULT_RIDGE,
            train: None,
        }
    }
}

impl ExperimentSpec {
    /// Reads a `.toml` or JSON spec.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&text)
        } else {
            Self::from_json(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("bad spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("bad spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
        }
        if let Some(d) = self.deltas.iter().find(|d| !(0.0..0.5).contains(*d)) {
            return Err(Error::InvalidArgument(format!("delta must lie in [0, 0.5), got {d}")));
        }
        if self.mc_samples == 0 || self.probe_samples == 0 {
            return Err(Error::InvalidArgument("sample counts must be at least 1".into()));
        }
        if self.include_optimal {
            if let Some(k) = self.sensitive_sizes.iter().find(|&&k| k > OPTIMAL_BUDGET) {
                return Err(Error::Budget(format!(
                    "Optimal baseline requested for |S| = {k}; it enumerates 2^|S| subsets and is limited to |S| <= {OPTIMAL_BUDGET}"
                )));
            }
        }
        let registry = SelectorRegistry::builtin();
        for s in &self.selectors {
            registry.get(s)?;
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or(match self.model {
            ModelFamily::Logistic => TrainConfig::logistic_default(self.seed),
            ModelFamily::Mlp => TrainConfig::mlp_default(self.seed),
        })
    }
}

/// Loads a bundled dataset by name, otherwise a CSV file by path.
pub fn load_dataset(name_or_path: &str, label_column: &str) -> Result<Dataset> {
    if synth::BUNDLED.contains(&name_or_path) {
        return Ok(synth::load_bundled(name_or_path)?);
    }
    Ok(load_csv(name_or_path, label_column)?)
}

/// Everything derived from the training split.
#[derive(Debug, Clone)]
pub struct Trained {
    pub normalizer: NormalizationSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub artifact: ModelArtifact,
    pub stats: GaussianStats,
}

impl Trained {
    pub fn model(&self) -> &Model {
        &self.artifact.model
    }

    pub fn importance(&self) -> Vec<f64> {
        self.artifact.importance.clone().unwrap_or_default()
    }
}

/// Split, normalize with train-only ranges, fit the model and the Gaussian.
/// The importance vector always comes from a logistic fit on all features.
pub fn train_pipeline(
    raw: &Dataset,
    family: ModelFamily,
    config: &TrainConfig,
    train_fraction: f64,
    ridge: f64,
) -> Result<Trained> {
    let (train_raw, test_raw) = split(raw, train_fraction, config.seed)?;
    let normalizer = fit_normalizer(&train_raw)?;
    let train = apply_normalizer(&normalizer, &train_raw)?;
    let test = apply_normalizer(&normalizer, &test_raw)?;
    let (model, importance): (Model, Vec<f64>) = match family {
        ModelFamily::Logistic => {
            let m = train_logistic(&train, config)?;
            let imp = m.importance();
            (m.into(), imp)
        }
        ModelFamily::Mlp => {
            let m = train_mlp(&train, config)?;
            let aux = train_logistic(&train, &TrainConfig::logistic_default(config.seed))?;
            (m.into(), aux.importance())
        }
    };
    let stats = estimate(&train, ridge)?;
    Ok(Trained {
        normalizer,
        train,
        test,
        artifact: ModelArtifact {
            model,
            config: Some(config.clone()),
            importance: Some(importance),
        },
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepMetrics {
    pub accuracy: f64,
    pub leakage: f64,
    /// Fraction of samples whose label equals the all-features prediction.
    pub agreement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mindrel,
    AllFeatures,
    Optimal,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mindrel => "mindrel",
            Method::AllFeatures => "all_features",
            Method::Optimal => "optimal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub sensitive_size: usize,
    /// Absent for the All-features baseline.
    pub delta: Option<f64>,
    pub method: Method,
    pub selector: Option<String>,
    pub mean_accuracy: f64,
    pub se_accuracy: f64,
    pub mean_leakage: f64,
    pub se_leakage: f64,
    pub mean_agreement: f64,
    /// Revealed-set size → number of samples, over all repetitions.
    pub core_sizes: BTreeMap<usize, usize>,
    pub repetitions: Vec<RepMetrics>,
}

impl CellResult {
    fn new(sensitive_size: usize, delta: Option<f64>, method: Method, selector: Option<String>) -> Self {
        Self {
            sensitive_size,
            delta,
            method,
            selector,
            mean_accuracy: 0.0,
            se_accuracy: 0.0,
            mean_leakage: 0.0,
            se_leakage: 0.0,
            mean_agreement: 0.0,
            core_sizes: BTreeMap::new(),
            repetitions: Vec::new(),
        }
    }

    fn push(&mut self, outcomes: &[Outcome], truth: &[usize], plain: &[usize]) -> Result<()> {
        let labels: Vec<usize> = outcomes.iter().map(|o| o.label).collect();
        let n = outcomes.len() as f64;
        let leakage = if self.sensitive_size == 0 {
            0.0
        } else {
            outcomes.iter().map(|o| o.revealed as f64).sum::<f64>() / (n * self.sensitive_size as f64)
        };
        self.repetitions.push(RepMetrics {
            accuracy: accuracy_of(&labels, truth)?,
            leakage,
            agreement: accuracy_of(&labels, plain)?,
        });
        for o in outcomes {
            *self.core_sizes.entry(o.revealed).or_default() += 1;
        }
        Ok(())
    }

    fn finish(&mut self) {
        let (m, s) = mean_se(self.repetitions.iter().map(|r| r.accuracy));
        self.mean_accuracy = m;
        self.se_accuracy = s;
        let (m, s) = mean_se(self.repetitions.iter().map(|r| r.leakage));
        self.mean_leakage = m;
        self.se_leakage = s;
        self.mean_agreement = mean_se(self.repetitions.iter().map(|r| r.agreement)).0;
    }

    fn matches(&self, k: usize, delta: Option<f64>, method: Method, selector: Option<&str>) -> bool {
        self.sensitive_size == k && self.delta == delta && self.method == method && self.selector.as_deref() == selector
    }
}

/// Mean and standard error of the mean (0 for a single value).
fn mean_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub prepare_secs: f64,
    pub run_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub num_features: usize,
    pub num_classes: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub cells: Vec<CellResult>,
    /// Wall-clock times; kept out of `results.json` so reruns compare equal.
    #[serde(skip)]
    pub timings: Timings,
}

impl ExperimentResult {
    pub fn cell(&self, k: usize, delta: Option<f64>, method: Method, selector: Option<&str>) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.matches(k, delta, method, selector))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "sensitive_size",
            "delta",
            "method",
            "selector",
            "mean_accuracy",
            "se_accuracy",
            "mean_leakage",
            "se_leakage",
            "mean_agreement",
            "repetitions",
        ])
        .expect("in-memory write");
        for c in &self.cells {
            w.write_record([
                c.sensitive_size.to_string(),
                c.delta.map(|d| d.to_string()).unwrap_or_default(),
                c.method.as_str().to_owned(),
                c.selector.clone().unwrap_or_default(),
                c.mean_accuracy.to_string(),
                c.se_accuracy.to_string(),
                c.mean_leakage.to_string(),
                c.se_leakage.to_string(),
                c.mean_agreement.to_string(),
                c.repetitions.len().to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Per-cell histogram of revealed-set sizes with its cumulative count.
    pub fn core_sizes_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sensitive_size", "delta", "method", "selector", "core_size", "count", "cumulative"])
            .expect("in-memory write");
        for c in &self.cells {
            let cum = cumulative(&c.core_sizes);
            for (size, total) in cum.iter().enumerate() {
                w.write_record([
                    c.sensitive_size.to_string(),
                    c.delta.map(|d| d.to_string()).unwrap_or_default(),
                    c.method.as_str().to_owned(),
                    c.selector.clone().unwrap_or_default(),
                    size.to_string(),
                    c.core_sizes.get(&size).copied().unwrap_or(0).to_string(),
                    total.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Writes `results.json`, `results.csv`, `core_sizes.csv` and `timings.json`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path, source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let files = [
            ("results.json", self.to_json()),
            ("results.csv", self.to_csv()),
            ("core_sizes.csv", self.core_sizes_csv()),
            (
                "timings.json",
                serde_json::to_string_pretty(&self.timings).expect("timings serialize"),
            ),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| io(&path, e))?;
        }
        Ok(())
    }
}

/// Per-sample result of one method on one test row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Outcome {
    revealed: usize,
    label: usize,
}

fn accuracy_of(labels: &[usize], truth: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set of sessions".into()));
    }
    if labels.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels against {} ground-truth values",
            labels.len(),
            truth.len()
        )));
    }
    let hits = labels.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

fn require_terminal(sessions: &[Session]) -> Result<()> {
    if sessions.iter().any(|s| !s.is_terminal()) {
        return Err(Error::InvalidArgument("every session must be decided".into()));
    }
    Ok(())
}

/// Mean of `|R| / |S|` over decided sessions.
pub fn data_leakage(sessions: &[Session]) -> Result<f64> {
    require_terminal(sessions)?;
    if sessions.is_empty() {
        return Err(Error::InvalidArgument("leakage of an empty set of sessions".into()));
    }
    if sessions.iter().any(|s| s.partition.sensitive_idx.is_empty()) {
        return Err(Error::InvalidArgument("leakage needs at least one sensitive feature".into()));
    }
    Ok(sessions.iter().map(Session::leakage).sum::<f64>() / sessions.len() as f64)
}

/// Fraction of sessions whose representative label matches `truth`.
pub fn accuracy(sessions: &[Session], truth: &[usize]) -> Result<f64> {
    require_terminal(sessions)?;
    let labels: Vec<usize> = sessions.iter().map(|s| s.label().expect("decided")).collect();
    accuracy_of(&labels, truth)
}

pub fn histogram_core_sizes(sessions: &[Session]) -> Result<BTreeMap<usize, usize>> {
    require_terminal(sessions)?;
    let mut h = BTreeMap::new();
    for s in sessions {
        *h.entry(s.revealed.len()).or_default() += 1;
    }
    Ok(h)
}

/// Running totals over sizes `0..=max`.
pub fn cumulative(histogram: &BTreeMap<usize, usize>) -> Vec<usize> {
    let Some(&max) = histogram.keys().next_back() else {
        return Vec::new();
    };
    let mut total = 0;
    (0..=max)
        .map(|k| {
            total += histogram.get(&k).copied().unwrap_or(0);
            total
        })
        .collect()
}

/// Loads the dataset, trains the model and runs every cell of `spec`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let start = Instant::now();
    let raw = load_dataset(&spec.dataset, &spec.label_column)?;
    let trained = train_pipeline(&raw, spec.model, &spec.train_config(), spec.train_fraction, spec.ridge)?;
    let prepare_secs = start.elapsed().as_secs_f64();
    let mut result = run_trained(spec, &trained)?;
    result.timings.prepare_secs = prepare_secs;
    Ok(result)
}

/// Runs every cell of `spec` against an already trained pipeline.
pub fn run_trained(spec: &ExperimentSpec, trained: &Trained) -> Result<ExperimentResult> {
    spec.validate()?;
    let start = Instant::now();
    let model = Arc::new(trained.model().clone());
    let stats = Arc::new(trained.stats.clone());
    let cap = spec.max_test.unwrap_or(usize::MAX).min(trained.test.num_rows());
    let test = trained.test.select_rows(&(0..cap).collect::<Vec<_>>());
    if test.is_empty() {
        return Err(Error::InvalidArgument("test split is empty".into()));
    }
    let d = model.num_features();
    let plain: Vec<usize> = test
        .features
        .iter()
        .map(|x| model.hard_predict(x))
        .collect::<std::result::Result<_, _>>()?;

    let mut cells = Vec::new();
    for &k in &spec.sensitive_sizes {
        let mut group: Vec<CellResult> = Vec::new();
        for &delta in &spec.deltas {
            for sel in &spec.selectors {
                group.push(CellResult::new(k, Some(delta), Method::Mindrel, Some(sel.clone())));
            }
            if spec.include_optimal {
                group.push(CellResult::new(k, Some(delta), Method::Optimal, None));
            }
        }
        let mut all = CellResult::new(k, None, Method::AllFeatures, None);

        for rep in 0..spec.repetitions {
            let partition = sample_partition(d, k, rng::derive_seed(spec.seed, &[k as u64, rep as u64]))?;
            let sample_seed = |i: usize| rng::derive_seed(spec.seed, &[rng::tag::SAMPLE, k as u64, rep as u64, i as u64]);
            for cell in group.iter_mut() {
                let delta = cell.delta.expect("mindrel and optimal cells carry delta");
                let outcomes: Vec<Outcome> = match cell.method {
                    Method::Mindrel => {
                        let config = EngineConfig {
                            delta,
                            selector: cell.selector.clone().expect("selector"),
                            mc_samples: spec.mc_samples,
                            probe_samples: spec.probe_samples,
                            seed: 0,
                        };
                        let engine = Engine::new(model.clone(), stats.clone(), config)?
                            .with_importance(trained.importance())?;
                        test.features
                            .par_iter()
                            .enumerate()
                            .map(|(i, x)| {
                                let s = engine.reseeded(sample_seed(i)).run_auto(x, &partition)?;
                                Ok(Outcome {
                                    revealed: s.revealed.len(),
                                    label: s.label().expect("run_auto ends decided"),
                                })
                            })
                            .collect::<Result<_>>()?
                    }
                    Method::Optimal => test
                        .features
                        .par_iter()
                        .enumerate()
                        .map(|(i, x)| {
                            let cfg = TestConfig {
                                delta,
                                probe_samples: spec.probe_samples,
                                mc_samples: spec.mc_samples,
                                seed: sample_seed(i),
                            };
                            let o = optimal_min_core(&model, &stats, &partition, x, &cfg)?;
                            Ok(Outcome {
                                revealed: o.revealed.len(),
                                label: o.result.label.expect("core result has a label"),
                            })
                        })
                        .collect::<Result<_>>()?,
                    Method::AllFeatures => unreachable!(),
                };
                cell.push(&outcomes, &test.labels, &plain)?;
            }
            let everything: Vec<Outcome> = plain.iter().map(|&label| Outcome { revealed: k, label }).collect();
            all.push(&everything, &test.labels, &plain)?;
        }
        cells.extend(group);
        cells.push(all);
    }
    cells.iter_mut().for_each(CellResult::finish);

    Ok(ExperimentResult {
        spec: spec.clone(),
        num_features: d,
        num_classes: model.num_classes(),
        train_rows: trained.train.num_rows(),
        test_rows: test.num_rows(),
        train_accuracy: crate::model::accuracy(model.as_ref(), &trained.train),
        test_accuracy: accuracy_of(&plain, &test.labels)?,
        cells,
        timings: Timings {
            prepare_secs: 0.0,
            run_secs: start.elapsed().as_secs_f64(),
        },
    })
}
