//! The sequential disclosure protocol: test, select, reveal, repeat.

mod selector;
mod session;

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use selector::{FScore, Importance, Random, Selector, SelectorRegistry};
pub use session::{ConditionerCache, FeatureScore, Revealed, Selection, Session, Status, StepRecord};

use crate::coreset::{assess, Assessment, CoreSetResult, TestConfig};
use crate::data::FeaturePartition;
use crate::error::{Error, Result};
use crate::gaussian::{ConditionalGaussian, GaussianStats};
use crate::model::{Classifier, Model};
use crate::predictive::{law_for, Evidence};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub delta: f64,
    pub selector: String,
    /// Samples `T` per feature score, and draws per multi-class law.
    pub mc_samples: usize,
    /// Probes for the sampled pure test.
    pub probe_samples: usize,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            delta: 0.0,
            selector: "fscore".into(),
            mc_samples: 100,
            probe_samples: 100_000,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.test_config(0).validate()
    }

    fn test_config(&self, seed: u64) -> TestConfig {
        TestConfig {
            delta: self.delta,
            probe_samples: self.probe_samples,
            mc_samples: self.mc_samples,
            seed,
        }
    }
}

/// Result of previewing a disclosure without committing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub feature: usize,
    pub value: f64,
    pub clipped: bool,
    pub confidence_after: f64,
    pub would_decide: bool,
    pub label_if_decided: Option<usize>,
}

/// Model, feature statistics and configuration; immutable and cheap to clone.
#[derive(Clone, Debug)]
pub struct Engine {
    model: Arc<Model>,
    stats: Arc<GaussianStats>,
    importance: Option<Arc<Vec<f64>>>,
    selector: Arc<dyn Selector>,
    config: EngineConfig,
}

fn clip(value: f64) -> (f64, bool) {
    let c = value.clamp(-1.0, 1.0);
    (c, c != value)
}

impl Engine {
    pub fn new(model: Arc<Model>, stats: Arc<GaussianStats>, config: EngineConfig) -> Result<Self> {
        Self::with_registry(model, stats, config, &SelectorRegistry::builtin())
    }

    pub fn with_registry(
        model: Arc<Model>,
        stats: Arc<GaussianStats>,
        config: EngineConfig,
        registry: &SelectorRegistry,
    ) -> Result<Self> {
        config.validate()?;
        if model.num_features() != stats.dim() {
            return Err(Error::InvalidArgument(format!(
                "model takes {} features but statistics cover {}",
                model.num_features(),
                stats.dim()
            )));
        }
        let importance = model.as_linear().map(|m| Arc::new(m.importance()));
        Ok(Self {
            selector: registry.get(&config.selector)?,
            model,
            stats,
            importance,
            config,
        })
    }

    pub fn with_importance(mut self, importance: Vec<f64>) -> Result<Self> {
        if importance.len() != self.model.num_features() {
            return Err(Error::InvalidArgument("importance length differs from feature count".into()));
        }
        self.importance = Some(Arc::new(importance));
        Ok(self)
    }

    /// Same engine with a different base seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut e = self.clone();
        e.config.seed = seed;
        e
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn stats(&self) -> &GaussianStats {
        &self.stats
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn selector(&self) -> &dyn Selector {
        self.selector.as_ref()
    }

    pub fn importance(&self) -> Option<&[f64]> {
        self.importance.as_deref().map(Vec::as_slice)
    }

    /// Opens a session from public values (aligned with `partition.public_idx`)
    /// and runs the first core-set test, so it may be born decided.
    pub fn start(&self, partition: &FeaturePartition, public_values: &[f64]) -> Result<Session> {
        if partition.num_features() != self.model.num_features() {
            return Err(Error::InvalidArgument(format!(
                "partition covers {} features, model takes {}",
                partition.num_features(),
                self.model.num_features()
            )));
        }
        if public_values.len() != partition.public_idx.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} public values, got {}",
                partition.public_idx.len(),
                public_values.len()
            )));
        }
        if public_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("public values must be finite".into()));
        }
        let values = public_values
            .iter()
            .map(|&v| {
                let (c, clipped) = clip(v);
                if clipped {
                    log::warn!("public value {v} clipped to {c}");
                }
                c
            })
            .collect();
        let mut session = Session::new(partition.clone(), values);
        self.advance(&mut session)?;
        Ok(session)
    }

    fn posterior(&self, session: &Session, evidence: &Evidence, unrevealed: &[usize]) -> Result<ConditionalGaussian> {
        let cond = session.cache.get(&self.stats, unrevealed, &evidence.idx)?;
        Ok(cond.at(&evidence.values)?)
    }

    fn assess_at(&self, session: &Session, evidence: &Evidence, unrevealed: &[usize]) -> Result<Assessment> {
        let post = self.posterior(session, evidence, unrevealed)?;
        let step = (evidence.idx.len() - session.partition.public_idx.len()) as u64;
        let cfg = self.config.test_config(rng::derive_seed(self.config.seed, &[step]));
        assess(&self.model, &post, evidence, &cfg)
    }

    /// Core-set test of the session's current state.
    pub fn test_core(&self, session: &Session) -> Result<CoreSetResult> {
        Ok(self
            .assess_at(session, &session.evidence(), &session.unrevealed())?
            .result)
    }

    fn advance(&self, session: &mut Session) -> Result<Assessment> {
        let a = self.assess_at(session, &session.evidence(), &session.unrevealed())?;
        session.confidence = a.result.confidence;
        session.entropy = a.entropy;
        if a.result.is_core {
            session.terminal = Some(a.result);
            session.pending = None;
        } else {
            session.pending = Some(self.select_next(session)?);
        }
        Ok(a)
    }

    /// Standard normals shared by every feature at one step, in antithetic
    /// pairs so that mirror-image features score identically.
    fn score_normals(&self, step: u64) -> Vec<f64> {
        let t = self.config.mc_samples;
        let mut rng = rng::stream(self.config.seed, &[rng::tag::SCORE, step]);
        let mut eps = Vec::with_capacity(t);
        for _ in 0..t / 2 {
            let e: f64 = rng.sample(StandardNormal);
            eps.push(e);
            eps.push(-e);
        }
        if t % 2 == 1 {
            eps.push(0.0);
        }
        eps
    }

    /// `F(X_j)`: minus the mean entropy of the prediction law after
    /// revealing `X_j = z`, over `T` draws of `z` from its posterior.
    pub fn score_feature(&self, session: &Session, feature: usize) -> Result<f64> {
        let unrevealed = session.unrevealed();
        if !unrevealed.contains(&feature) {
            return Err(Error::InvalidArgument(format!("feature {feature} is not unrevealed")));
        }
        let evidence = session.evidence();
        let post = self.posterior(session, &evidence, &unrevealed)?;
        let step = session.revealed.len() as u64;
        self.score_with(session, &evidence, &unrevealed, &post, feature, &self.score_normals(step), step)
    }

    /// Scores of every unrevealed feature, ascending by index.
    pub fn score_all(&self, session: &Session) -> Result<Vec<FeatureScore>> {
        let unrevealed = session.unrevealed();
        let evidence = session.evidence();
        let post = self.posterior(session, &evidence, &unrevealed)?;
        let step = session.revealed.len() as u64;
        let eps = self.score_normals(step);
        unrevealed
            .iter()
            .map(|&feature| {
                let score = self.score_with(session, &evidence, &unrevealed, &post, feature, &eps, step)?;
                Ok(FeatureScore { feature, score })
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn score_with(
        &self,
        session: &Session,
        evidence: &Evidence,
        unrevealed: &[usize],
        post: &ConditionalGaussian,
        feature: usize,
        eps: &[f64],
        step: u64,
    ) -> Result<f64> {
        let k = unrevealed.iter().position(|&i| i == feature).expect("feature is unrevealed");
        let mean = post.mean[k];
        let sd = post.cov[(k, k)].max(0.0).sqrt();
        let rest: Vec<usize> = unrevealed.iter().copied().filter(|&i| i != feature).collect();
        let mut known = evidence.with(feature, mean);
        let cond = session.cache.get(&self.stats, &rest, &known.idx)?;
        let mut inner = ConditionalGaussian {
            target_idx: rest,
            mean: DVector::zeros(cond.target_idx().len()),
            cov: cond.covariance().clone(),
        };
        let last = known.values.len() - 1;
        let mut total = 0.0;
        let mut t = 0u64;
        for pair in eps.chunks(2) {
            let mut pair_sum = 0.0;
            for e in pair {
                known.values[last] = mean + sd * e;
                inner.mean = cond.mean_at(&known.values)?;
                let seed = rng::derive_seed(self.config.seed, &[rng::tag::SCORE_INNER, step, t]);
                pair_sum += law_for(&self.model, &inner, &known, self.config.mc_samples, seed)?.entropy();
                t += 1;
            }
            total += pair_sum;
        }
        let score = -total / eps.len() as f64;
        if !score.is_finite() {
            return Err(Error::NonFinite("feature score"));
        }
        Ok(score)
    }

    pub fn select_next(&self, session: &Session) -> Result<Selection> {
        if session.is_terminal() {
            return Err(Error::SessionTerminal);
        }
        if session.unrevealed().is_empty() {
            return Err(Error::NothingToReveal);
        }
        self.selector.select(self, session)
    }

    /// Discloses `value` for the requested feature and re-tests. The value
    /// is clipped to [-1, 1] with a warning. On error the session is unchanged.
    pub fn step(&self, session: &mut Session, value: f64) -> Result<StepRecord> {
        if session.is_terminal() {
            return Err(Error::SessionTerminal);
        }
        let selection = session.pending.clone().ok_or(Error::NothingToReveal)?;
        if !value.is_finite() {
            return Err(Error::InvalidArgument("revealed value must be finite".into()));
        }
        let (used, clipped) = clip(value);
        if clipped {
            log::warn!("value {value} for feature {} clipped to {used}", selection.feature);
        }
        let mut next = session.clone();
        next.revealed.push(Revealed {
            feature: selection.feature,
            value: used,
        });
        let a = self.advance(&mut next)?;
        let record = StepRecord {
            feature: selection.feature,
            value: used,
            clipped,
            scores: selection.scores,
            is_core_after: a.result.is_core,
            confidence_after: a.result.confidence,
            entropy_after: a.entropy,
        };
        next.log.push(record.clone());
        *session = next;
        Ok(record)
    }

    /// Runs the protocol on a complete record, answering each request from
    /// `x_full`. Terminates within `|S|` reveals.
    pub fn run_auto(&self, x_full: &[f64], partition: &FeaturePartition) -> Result<Session> {
        if x_full.len() != self.model.num_features() {
            return Err(Error::InvalidArgument(format!(
                "expected {} feature values, got {}",
                self.model.num_features(),
                x_full.len()
            )));
        }
        let public: Vec<f64> = partition.public_idx.iter().map(|&i| x_full[i]).collect();
        let mut session = self.start(partition, &public)?;
        while let Some(feature) = session.requested() {
            self.step(&mut session, x_full[feature])?;
        }
        Ok(session)
    }

    /// Core-set test as if `feature = value` were disclosed next; the
    /// session is not modified.
    pub fn whatif(&self, session: &Session, feature: usize, value: f64) -> Result<WhatIf> {
        if session.is_terminal() {
            return Err(Error::SessionTerminal);
        }
        if !session.partition.is_sensitive(feature) || session.is_revealed(feature) {
            return Err(Error::InvalidArgument(format!(
                "feature {feature} is not an unrevealed sensitive feature"
            )));
        }
        if !value.is_finite() {
            return Err(Error::InvalidArgument("value must be finite".into()));
        }
        let (used, clipped) = clip(value);
        let evidence = session.evidence().with(feature, used);
        let unrevealed: Vec<usize> = session.unrevealed().into_iter().filter(|&i| i != feature).collect();
        let a = self.assess_at(session, &evidence, &unrevealed)?;
        Ok(WhatIf {
            feature,
            value: used,
            clipped,
            confidence_after: a.result.confidence,
            would_decide: a.result.is_core,
            label_if_decided: a.result.label,
        })
    }

    /// Re-applies the disclosed values of `session` to a fresh session.
    pub fn replay(&self, session: &Session) -> Result<Session> {
        let mut fresh = self.start(&session.partition, &session.public_values)?;
        for r in &session.revealed {
            if fresh.requested() != Some(r.feature) {
                return Err(Error::InvalidArgument(format!(
                    "replay diverged: expected a request for feature {}",
                    r.feature
                )));
            }
            self.step(&mut fresh, r.value)?;
        }
        Ok(fresh)
    }
}
