//! Rules for choosing the next sensitive feature to request.

use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::seq::IndexedRandom;

use super::session::{FeatureScore, Selection, Session};
use super::Engine;
use crate::error::{Error, Result};
use crate::rng;

pub trait Selector: Send + Sync {
    /// Registry key, also accepted on the command line.
    fn name(&self) -> &str;

    /// Picks one of `session.unrevealed()`, which is never empty here.
    fn select(&self, engine: &Engine, session: &Session) -> Result<Selection>;
}

impl fmt::Debug for dyn Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Selector({})", self.name())
    }
}

/// First feature with the strictly largest score.
fn argmax(scores: &[FeatureScore]) -> Option<usize> {
    let mut best: Option<&FeatureScore> = None;
    for s in scores {
        if best.is_none_or(|b| s.score > b.score) {
            best = Some(s);
        }
    }
    best.map(|b| b.feature)
}

/// Expected negative entropy of the prediction after revealing each feature.
#[derive(Debug, Default)]
pub struct FScore;

impl Selector for FScore {
    fn name(&self) -> &str {
        "fscore"
    }

    fn select(&self, engine: &Engine, session: &Session) -> Result<Selection> {
        let scores = engine.score_all(session)?;
        let feature = argmax(&scores).ok_or(Error::NothingToReveal)?;
        Ok(Selection { feature, scores })
    }
}

/// Static order by weight magnitude of a logistic fit on all features.
#[derive(Debug, Default)]
pub struct Importance;

impl Selector for Importance {
    fn name(&self) -> &str {
        "importance"
    }

    fn select(&self, engine: &Engine, session: &Session) -> Result<Selection> {
        let importance = engine.importance().ok_or_else(|| {
            Error::InvalidArgument("importance selector needs per-feature importance weights".into())
        })?;
        let scores: Vec<FeatureScore> = session
            .unrevealed()
            .into_iter()
            .map(|feature| FeatureScore {
                feature,
                score: importance[feature],
            })
            .collect();
        let feature = argmax(&scores).ok_or(Error::NothingToReveal)?;
        Ok(Selection { feature, scores })
    }
}

/// Uniform choice among unrevealed features.
#[derive(Debug, Default)]
pub struct Random;

impl Selector for Random {
    fn name(&self) -> &str {
        "random"
    }

    fn select(&self, engine: &Engine, session: &Session) -> Result<Selection> {
        let step = session.revealed.len() as u64;
        let mut rng = rng::stream(engine.config().seed, &[rng::tag::RANDOM_SELECT, step]);
        let feature = *session
            .unrevealed()
            .choose(&mut rng)
            .ok_or(Error::NothingToReveal)?;
        Ok(Selection {
            feature,
            scores: Vec::new(),
        })
    }
}

/// Selectors by name. Starts with `fscore`, `importance` and `random`.
#[derive(Clone)]
pub struct SelectorRegistry {
    entries: IndexMap<String, Arc<dyn Selector>>,
}

impl SelectorRegistry {
    pub fn empty() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(FScore));
        reg.register(Arc::new(Importance));
        reg.register(Arc::new(Random));
        reg
    }

    /// Adds or replaces the selector under its own name.
    pub fn register(&mut self, selector: Arc<dyn Selector>) -> Option<Arc<dyn Selector>> {
        self.entries.insert(selector.name().to_owned(), selector)
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Selector>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownSelector(name.to_owned()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

impl Default for SelectorRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl fmt::Debug for SelectorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}
