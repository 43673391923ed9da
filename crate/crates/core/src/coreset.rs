//! Core feature set tests: decide whether the known features pin the
//! prediction down, exactly or with probability at least `1 - δ`.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::data::FeaturePartition;
use crate::error::{Error, Result};
use crate::gaussian::{Conditioner, ConditionalGaussian, GaussianStats};
use crate::model::{Classifier, LinearModel, Model};
use crate::predictive::{law_for, Evidence};
use crate::rng;

/// Largest sensitive set the exhaustive baseline will enumerate.
pub const OPTIMAL_MAX_SENSITIVE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreSetResult {
    pub is_core: bool,
    /// Representative label, present iff `is_core`.
    pub label: Option<usize>,
    /// Max class probability under the predictive law; 1 for passing pure tests.
    pub confidence: f64,
}

impl CoreSetResult {
    pub fn core(label: usize, confidence: f64) -> Self {
        Self {
            is_core: true,
            label: Some(label),
            confidence,
        }
    }

    pub fn not_core(confidence: f64) -> Self {
        Self {
            is_core: false,
            label: None,
            confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub delta: f64,
    /// Posterior probes for the sampled pure test, and draws for
    /// multi-class laws when `delta > 0`.
    pub probe_samples: usize,
    /// Draws for multi-class laws reported alongside a failed pure test.
    pub mc_samples: usize,
    pub seed: u64,
}

impl TestConfig {
    pub fn pure(seed: u64) -> Self {
        Self {
            delta: 0.0,
            probe_samples: 100_000,
            mc_samples: 100,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.delta) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in [0, 0.5), got {}",
                self.delta
            )));
        }
        if self.probe_samples == 0 || self.mc_samples == 0 {
            return Err(Error::InvalidArgument("sample counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// A verdict together with the entropy of the label law it was read from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assessment {
    pub result: CoreSetResult,
    pub entropy: f64,
}

/// `(c, w)` with `c` the score from known features and bias and
/// `w = ‖θ_U‖₁`; over the box the score ranges over `[c - w, c + w]`.
pub fn linear_interval(model: &LinearModel, evidence: &Evidence, unrevealed: &[usize]) -> (f64, f64) {
    let theta = model.theta();
    let c = model.bias()[0]
        + evidence
            .idx
            .iter()
            .zip(&evidence.values)
            .map(|(&i, v)| theta[i] * v)
            .sum::<f64>();
    let w = unrevealed.iter().map(|&i| theta[i].abs()).sum();
    (c, w)
}

/// Box test for binary linear models: `Some(1)` if `c - w >= 0`, `Some(0)`
/// if `c + w < 0`, `None` when the interval straddles the boundary.
pub fn pure_linear_verdict(model: &LinearModel, evidence: &Evidence, unrevealed: &[usize]) -> Option<usize> {
    let (c, w) = linear_interval(model, evidence, unrevealed);
    if c - w >= 0.0 {
        Some(1)
    } else if c + w < 0.0 {
        Some(0)
    } else {
        None
    }
}

/// Probes the posterior (plus its mean) and reports the label if it never
/// changes. A `None` is always sound; `Some` may be optimistic.
pub fn sampled_verdict(
    model: &Model,
    posterior: &ConditionalGaussian,
    evidence: &Evidence,
    num_probe: usize,
    seed: u64,
) -> Result<Option<usize>> {
    let x = evidence.to_full(model.num_features());
    let mut eval = model.restricted(&x, &posterior.target_idx);
    let mean = posterior.mean.as_slice();
    if mean.iter().chain(&x).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("posterior mean"));
    }
    let label = eval.label(mean);
    if posterior.dim() == 0 {
        return Ok(Some(label));
    }
    let sampler = posterior.sampler();
    let mut rng = rng::stream(seed, &[rng::tag::PROBE]);
    let mut eps = vec![0.0; posterior.dim()];
    let mut draw = vec![0.0; posterior.dim()];
    for _ in 0..num_probe {
        sampler.draw_with(&mut rng, &mut eps, &mut draw);
        if eval.label(&draw) != label {
            return Ok(None);
        }
    }
    Ok(Some(label))
}

fn uses_box_test(model: &Model, delta: f64) -> Option<&LinearModel> {
    match model {
        Model::Linear(m) if delta == 0.0 && m.is_binary() => Some(m),
        _ => None,
    }
}

/// Runs the applicable test given the posterior over the unrevealed block
/// (`posterior.target_idx` is `U`, conditioned on everything in `evidence`).
pub fn assess(
    model: &Model,
    posterior: &ConditionalGaussian,
    evidence: &Evidence,
    cfg: &TestConfig,
) -> Result<Assessment> {
    let pass = |label| Assessment {
        result: CoreSetResult::core(label, 1.0),
        entropy: 0.0,
    };
    if posterior.dim() == 0 {
        let x = evidence.to_full(model.num_features());
        return Ok(pass(model.hard_predict(&x)?));
    }
    let law_seed = rng::derive_seed(cfg.seed, &[rng::tag::LAW]);
    if cfg.delta == 0.0 {
        let verdict = match uses_box_test(model, cfg.delta) {
            Some(m) => pure_linear_verdict(m, evidence, &posterior.target_idx),
            None => sampled_verdict(model, posterior, evidence, cfg.probe_samples, cfg.seed)?,
        };
        if let Some(label) = verdict {
            return Ok(pass(label));
        }
        let law = law_for(model, posterior, evidence, cfg.mc_samples, law_seed)?;
        return Ok(Assessment {
            result: CoreSetResult::not_core(law.max_prob()),
            entropy: law.entropy(),
        });
    }
    let law = law_for(model, posterior, evidence, cfg.probe_samples, law_seed)?;
    let confidence = law.max_prob();
    let result = if confidence >= 1.0 - cfg.delta {
        CoreSetResult::core(law.argmax(), confidence)
    } else {
        CoreSetResult::not_core(confidence)
    };
    Ok(Assessment {
        result,
        entropy: law.entropy(),
    })
}

fn posterior(
    stats: &GaussianStats,
    evidence: &Evidence,
    unrevealed: &[usize],
) -> Result<ConditionalGaussian> {
    Ok(Conditioner::new(stats, unrevealed, &evidence.idx)?.at(&evidence.values)?)
}

/// Dispatches to the pure or probabilistic test by `cfg.delta`.
pub fn test_core(
    model: &Model,
    stats: &GaussianStats,
    evidence: &Evidence,
    unrevealed: &[usize],
    cfg: &TestConfig,
) -> Result<CoreSetResult> {
    cfg.validate()?;
    let post = posterior(stats, evidence, unrevealed)?;
    Ok(assess(model, &post, evidence, cfg)?.result)
}

/// Box test for binary linear models. The verdict ignores `stats`; a
/// failing test reports the Φ-law confidence under the posterior.
pub fn test_pure_linear(
    model: &LinearModel,
    stats: &GaussianStats,
    evidence: &Evidence,
    unrevealed: &[usize],
) -> Result<CoreSetResult> {
    if !model.is_binary() {
        return Err(Error::Unsupported("box test needs a binary linear model".into()));
    }
    let wrapped = Model::Linear(model.clone());
    test_core(&wrapped, stats, evidence, unrevealed, &TestConfig::pure(0))
}

/// Sampled constancy test, for any model.
pub fn test_pure_nonlinear(
    model: &Model,
    stats: &GaussianStats,
    evidence: &Evidence,
    unrevealed: &[usize],
    num_probe: usize,
    seed: u64,
) -> Result<CoreSetResult> {
    let post = posterior(stats, evidence, unrevealed)?;
    let cfg = TestConfig {
        probe_samples: num_probe.max(1),
        ..TestConfig::pure(seed)
    };
    Ok(match sampled_verdict(model, &post, evidence, num_probe, seed)? {
        Some(label) => CoreSetResult::core(label, 1.0),
        None => assess_law_only(model, &post, evidence, &cfg)?,
    })
}

fn assess_law_only(
    model: &Model,
    post: &ConditionalGaussian,
    evidence: &Evidence,
    cfg: &TestConfig,
) -> Result<CoreSetResult> {
    let law = law_for(model, post, evidence, cfg.mc_samples, rng::derive_seed(cfg.seed, &[rng::tag::LAW]))?;
    Ok(CoreSetResult::not_core(law.max_prob()))
}

/// Probabilistic test; `cfg.delta` must be positive.
pub fn test_delta(
    model: &Model,
    stats: &GaussianStats,
    evidence: &Evidence,
    unrevealed: &[usize],
    cfg: &TestConfig,
) -> Result<CoreSetResult> {
    if cfg.delta <= 0.0 {
        return Err(Error::InvalidArgument("test_delta needs delta > 0".into()));
    }
    test_core(model, stats, evidence, unrevealed, cfg)
}

/// Known features when `revealed` (sensitive indices) are disclosed from `x_full`.
pub fn evidence_for(partition: &FeaturePartition, x_full: &[f64], revealed: &[usize]) -> Evidence {
    let idx: Vec<usize> = partition.public_idx.iter().chain(revealed).copied().collect();
    let values = idx.iter().map(|&i| x_full[i]).collect();
    Evidence::new(idx, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalResult {
    /// Smallest core subset of the sensitive features, ascending.
    pub revealed: Vec<usize>,
    pub result: CoreSetResult,
}

/// Exhaustive baseline: the first subset of `S`, by size then
/// lexicographically, that passes the applicable test on `x_full`.
pub fn optimal_min_core(
    model: &Model,
    stats: &GaussianStats,
    partition: &FeaturePartition,
    x_full: &[f64],
    cfg: &TestConfig,
) -> Result<OptimalResult> {
    cfg.validate()?;
    let sensitive = &partition.sensitive_idx;
    if sensitive.len() > OPTIMAL_MAX_SENSITIVE {
        return Err(Error::Budget(format!(
            "exhaustive search over {} sensitive features exceeds the limit of {OPTIMAL_MAX_SENSITIVE}",
            sensitive.len()
        )));
    }
    if x_full.len() != model.num_features() {
        return Err(Error::InvalidArgument(format!(
            "expected {} feature values, got {}",
            model.num_features(),
            x_full.len()
        )));
    }
    let box_model = uses_box_test(model, cfg.delta);
    for k in 0..=sensitive.len() {
        for (rank, subset) in sensitive.iter().copied().combinations(k).enumerate() {
            let evidence = evidence_for(partition, x_full, &subset);
            let unrevealed: Vec<usize> = sensitive.iter().copied().filter(|i| !subset.contains(i)).collect();
            let result = match box_model {
                Some(m) => match pure_linear_verdict(m, &evidence, &unrevealed) {
                    Some(label) => CoreSetResult::core(label, 1.0),
                    None => continue,
                },
                None => {
                    let sub_cfg = TestConfig {
                        seed: rng::derive_seed(cfg.seed, &[k as u64, rank as u64]),
                        ..*cfg
                    };
                    test_core(model, stats, &evidence, &unrevealed, &sub_cfg)?
                }
            };
            if result.is_core {
                return Ok(OptimalResult {
                    revealed: subset,
                    result,
                });
            }
        }
    }
    // unreachable in practice: with everything revealed every test passes
    Ok(OptimalResult {
        revealed: sensitive.clone(),
        result: CoreSetResult::core(model.hard_predict(x_full)?, 1.0),
    })
}
