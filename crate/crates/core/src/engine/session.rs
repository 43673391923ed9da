use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::coreset::CoreSetResult;
use crate::data::FeaturePartition;
use crate::error::Result;
use crate::gaussian::{Conditioner, GaussianStats};
use crate::predictive::Evidence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Revealed {
    pub feature: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: usize,
    pub score: f64,
}

/// The feature a selector asks for next, with the scores behind the choice
/// (expected negative entropy, importance, or nothing for random order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub feature: usize,
    pub scores: Vec<FeatureScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub feature: usize,
    /// Value used, after clipping to [-1, 1].
    pub value: f64,
    pub clipped: bool,
    pub scores: Vec<FeatureScore>,
    pub is_core_after: bool,
    pub confidence_after: f64,
    pub entropy_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingFeature,
    Decided,
}

type ConditionerMap = HashMap<(Vec<usize>, Vec<usize>), Arc<Conditioner>>;

/// Conditioners keyed by `(target, given)`, shared by clones of a session.
#[derive(Debug, Clone, Default)]
pub struct ConditionerCache {
    inner: Arc<Mutex<ConditionerMap>>,
}

impl ConditionerCache {
    pub fn get(&self, stats: &GaussianStats, target: &[usize], given: &[usize]) -> Result<Arc<Conditioner>> {
        let key = (target.to_vec(), given.to_vec());
        if let Some(hit) = self.inner.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let fresh = Arc::new(Conditioner::new(stats, target, given)?);
        self.inner
            .lock()
            .expect("cache lock")
            .insert(key, fresh.clone());
        Ok(fresh)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One individual's progress through the protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub partition: FeaturePartition,
    /// Aligned with `partition.public_idx`.
    pub public_values: Vec<f64>,
    /// In the order disclosed.
    pub revealed: Vec<Revealed>,
    pub log: Vec<StepRecord>,
    /// Next feature requested; `None` once decided.
    pub pending: Option<Selection>,
    pub terminal: Option<CoreSetResult>,
    /// Max class probability under the current predictive law.
    pub confidence: f64,
    pub entropy: f64,
    #[serde(skip)]
    pub(crate) cache: ConditionerCache,
}

impl Session {
    pub(crate) fn new(partition: FeaturePartition, public_values: Vec<f64>) -> Self {
        Self {
            partition,
            public_values,
            revealed: Vec::new(),
            log: Vec::new(),
            pending: None,
            terminal: None,
            confidence: 0.0,
            entropy: 0.0,
            cache: ConditionerCache::default(),
        }
    }

    pub fn status(&self) -> Status {
        if self.terminal.is_some() {
            Status::Decided
        } else {
            Status::AwaitingFeature
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal.is_some()
    }

    pub fn requested(&self) -> Option<usize> {
        self.pending.as_ref().map(|s| s.feature)
    }

    pub fn is_revealed(&self, feature: usize) -> bool {
        self.revealed.iter().any(|r| r.feature == feature)
    }

    /// Sensitive features not yet disclosed, ascending.
    pub fn unrevealed(&self) -> Vec<usize> {
        self.partition
            .sensitive_idx
            .iter()
            .copied()
            .filter(|&i| !self.is_revealed(i))
            .collect()
    }

    /// Public values followed by revealed ones in disclosure order.
    pub fn evidence(&self) -> Evidence {
        let mut idx = self.partition.public_idx.clone();
        let mut values = self.public_values.clone();
        for r in &self.revealed {
            idx.push(r.feature);
            values.push(r.value);
        }
        Evidence::new(idx, values)
    }

    /// `|R| / |S|`, 0 when nothing is sensitive.
    pub fn leakage(&self) -> f64 {
        let s = self.partition.sensitive_idx.len();
        if s == 0 {
            0.0
        } else {
            self.revealed.len() as f64 / s as f64
        }
    }

    pub fn label(&self) -> Option<usize> {
        self.terminal.and_then(|t| t.label)
    }
}
