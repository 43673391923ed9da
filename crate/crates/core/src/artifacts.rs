//! The on-disk triple `model.json`, `stats.json`, `normalizer.json`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::data::{DataError, FeaturePartition, NormalizationSpec};
use crate::engine::{Engine, EngineConfig, SelectorRegistry};
use crate::error::{Error, Result};
use crate::eval::Trained;
use crate::gaussian::{GaussianError, GaussianStats};
use crate::model::{Classifier, Model, ModelArtifact};

pub const MODEL_FILE: &str = "model.json";
pub const STATS_FILE: &str = "stats.json";
pub const NORMALIZER_FILE: &str = "normalizer.json";

/// Everything needed to run sessions on raw feature values.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub model: Arc<Model>,
    pub stats: Arc<GaussianStats>,
    pub normalizer: NormalizationSpec,
    pub importance: Option<Vec<f64>>,
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

impl Artifacts {
    pub fn new(artifact: ModelArtifact, stats: GaussianStats, normalizer: NormalizationSpec) -> Result<Self> {
        let d = artifact.model.num_features();
        if stats.dim() != d || normalizer.len() != d {
            return Err(Error::InvalidArgument(format!(
                "model takes {d} features, statistics cover {}, normalizer {}",
                stats.dim(),
                normalizer.len()
            )));
        }
        Ok(Self {
            model: Arc::new(artifact.model),
            stats: Arc::new(stats),
            normalizer,
            importance: artifact.importance,
        })
    }

    pub fn from_trained(t: &Trained) -> Result<Self> {
        Self::new(t.artifact.clone(), t.stats.clone(), t.normalizer.clone())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let artifact = ModelArtifact::from_json(&read(dir, MODEL_FILE)?)?;
        let stats: GaussianStats = serde_json::from_str(&read(dir, STATS_FILE)?)
            .map_err(|e| GaussianError::Invalid(e.to_string()))?;
        let normalizer: NormalizationSpec = serde_json::from_str(&read(dir, NORMALIZER_FILE)?)
            .map_err(|e| DataError::Invalid(e.to_string()))?;
        Self::new(artifact, stats, normalizer)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let artifact = ModelArtifact {
            model: (*self.model).clone(),
            config: None,
            importance: self.importance.clone(),
        };
        write(dir, MODEL_FILE, &artifact.to_json())?;
        write(dir, STATS_FILE, &self.stats.to_json())?;
        write(dir, NORMALIZER_FILE, &self.normalizer.to_json())
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.normalizer.feature_names()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.normalizer.ranges.get_index_of(name)
    }

    /// Raw value to the model's scale, not clipped.
    pub fn normalize(&self, feature: usize, raw: f64) -> f64 {
        self.normalizer.normalize_value(feature, raw)
    }

    /// Partition with exactly the named features public.
    pub fn partition_public(&self, public: &[&str]) -> Result<FeaturePartition> {
        let names = self.feature_names();
        let mut public_idx = Vec::with_capacity(public.len());
        for name in public {
            let i = self
                .feature_index(name)
                .ok_or_else(|| DataError::UnknownFeature((*name).to_owned()))?;
            public_idx.push(i);
        }
        let sensitive: Vec<usize> = (0..names.len()).filter(|i| !public_idx.contains(i)).collect();
        Ok(FeaturePartition::from_sensitive(names.len(), &sensitive)?)
    }

    pub fn engine(&self, config: EngineConfig, registry: &SelectorRegistry) -> Result<Engine> {
        let engine = Engine::with_registry(self.model.clone(), self.stats.clone(), config, registry)?;
        match &self.importance {
            Some(imp) => engine.with_importance(imp.clone()),
            None => Ok(engine),
        }
    }
}
