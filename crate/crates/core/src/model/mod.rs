//! Classifier families: (multinomial) logistic regression and a ReLU MLP.
//!
//! Binary models emit a single score with the decision `score >= 0 → 1`.
//! Multi-class models emit one score per class and predict the argmax,
//! breaking ties toward the lowest class index.

mod linear;
mod mlp;
mod train;

pub use linear::LinearModel;
pub use mlp::{Dense, ForwardBuf, MlpModel};
pub use train::{accuracy, train_logistic, train_mlp, TrainConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("expected {expected} input features, got {found}")]
    InputLength { expected: usize, found: usize },
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Common interface over the model families.
pub trait Classifier: Send + Sync {
    fn num_features(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Soft scores: length 1 for binary models, `num_classes` otherwise.
    fn soft_predict(&self, x: &[f64]) -> Result<Vec<f64>, ModelError>;

    /// Gradient of score component `class` (0 for binary models) with
    /// respect to the input.
    fn input_gradient(&self, x: &[f64], class: Option<usize>) -> Result<Vec<f64>, ModelError>;

    fn hard_predict(&self, x: &[f64]) -> Result<usize, ModelError> {
        Ok(label_from_scores(&self.soft_predict(x)?))
    }

    fn is_binary(&self) -> bool {
        self.num_classes() == 2
    }

    fn num_outputs(&self) -> usize {
        if self.is_binary() {
            1
        } else {
            self.num_classes()
        }
    }
}

pub fn label_from_scores(scores: &[f64]) -> usize {
    if scores.len() == 1 {
        return usize::from(scores[0] >= 0.0);
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn check_len(expected: usize, x: &[f64]) -> Result<(), ModelError> {
    if x.len() != expected {
        return Err(ModelError::InputLength {
            expected,
            found: x.len(),
        });
    }
    Ok(())
}

fn resolve_class(class: Option<usize>, num_outputs: usize, num_classes: usize) -> Result<usize, ModelError> {
    let c = class.unwrap_or(0);
    if num_outputs == 1 {
        // binary models have a single score regardless of the requested class
        return Ok(0);
    }
    if c >= num_outputs {
        return Err(ModelError::ClassOutOfRange {
            class: c,
            num_classes,
        });
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Logistic,
    Mlp,
}

impl std::str::FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" | "linear" => Ok(Self::Logistic),
            "mlp" => Ok(Self::Mlp),
            other => Err(format!("unknown model family `{other}` (expected logistic or mlp)")),
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Logistic => "logistic",
            Self::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn family(&self) -> ModelFamily {
        match self {
            Model::Linear(_) => ModelFamily::Logistic,
            Model::Mlp(_) => ModelFamily::Mlp,
        }
    }

    pub fn as_linear(&self) -> Option<&LinearModel> {
        match self {
            Model::Linear(m) => Some(m),
            Model::Mlp(_) => None,
        }
    }

    /// Hard label without input validation or allocation; `x` must have
    /// `num_features` entries.
    pub fn label_fast(&self, x: &[f64], buf: &mut ForwardBuf) -> usize {
        match self {
            Model::Linear(m) => m.label_fast(x, buf),
            Model::Mlp(m) => m.label_fast(x, buf),
        }
    }

    pub fn forward_buf(&self) -> ForwardBuf {
        match self {
            Model::Linear(m) => ForwardBuf::with_widths(&[m.num_outputs()]),
            Model::Mlp(m) => m.forward_buf(),
        }
    }

    /// Evaluator for repeated hard predictions where only the `free`
    /// coordinates of `x` change; the rest of the first affine map is
    /// computed once.
    pub fn restricted(&self, x: &[f64], free: &[usize]) -> Restricted<'_> {
        let (rows, weight): (usize, Box<dyn Fn(usize, usize) -> f64 + '_>) = match self {
            Model::Linear(m) => (m.num_outputs(), Box::new(move |r, c| m.weights()[r][c])),
            Model::Mlp(m) => {
                let l = &m.layers()[0];
                (l.rows, Box::new(move |r, c| l.row(r)[c]))
            }
        };
        let mut x0 = x.to_vec();
        for &i in free {
            x0[i] = 0.0;
        }
        let base = match self {
            Model::Linear(m) => {
                let mut out = vec![0.0; rows];
                m.scores_into(&x0, &mut out);
                out
            }
            Model::Mlp(m) => {
                let l = &m.layers()[0];
                (0..rows)
                    .map(|r| l.bias[r] + l.row(r).iter().zip(&x0).map(|(w, v)| w * v).sum::<f64>())
                    .collect()
            }
        };
        // column-major block of the free columns
        let cols = free.iter().flat_map(|&c| (0..rows).map(move |r| (r, c))).map(|(r, c)| weight(r, c)).collect();
        Restricted {
            model: self,
            base,
            cols,
            buf: self.forward_buf(),
        }
    }

    fn as_classifier(&self) -> &dyn Classifier {
        match self {
            Model::Linear(m) => m,
            Model::Mlp(m) => m,
        }
    }
}

pub struct Restricted<'a> {
    model: &'a Model,
    base: Vec<f64>,
    cols: Vec<f64>,
    buf: ForwardBuf,
}

impl Restricted<'_> {
    /// Hard label with the free coordinates set to `values`.
    pub fn label(&mut self, values: &[f64]) -> usize {
        let rows = self.base.len();
        let first = match self.model {
            Model::Linear(_) => self.buf.output_mut(),
            Model::Mlp(_) => MlpModel::first_mut(&mut self.buf),
        };
        first.copy_from_slice(&self.base);
        for (v, col) in values.iter().zip(self.cols.chunks_exact(rows)) {
            for (f, w) in first.iter_mut().zip(col) {
                *f += w * v;
            }
        }
        match self.model {
            Model::Linear(_) => label_from_scores(self.buf.output_mut()),
            Model::Mlp(m) => m.label_from_first(&mut self.buf),
        }
    }
}

impl Classifier for Model {
    fn num_features(&self) -> usize {
        self.as_classifier().num_features()
    }

    fn num_classes(&self) -> usize {
        self.as_classifier().num_classes()
    }

    fn soft_predict(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.as_classifier().soft_predict(x)
    }

    fn input_gradient(&self, x: &[f64], class: Option<usize>) -> Result<Vec<f64>, ModelError> {
        self.as_classifier().input_gradient(x, class)
    }
}

impl From<LinearModel> for Model {
    fn from(m: LinearModel) -> Self {
        Model::Linear(m)
    }
}

impl From<MlpModel> for Model {
    fn from(m: MlpModel) -> Self {
        Model::Mlp(m)
    }
}

/// A model plus what was used to produce it; the `model.json` document.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: Model,
    pub config: Option<TrainConfig>,
    /// Per-feature importance (`|θ_j|₂` of a logistic fit on all features).
    pub importance: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    shape: [usize; 2],
    /// Row-major `shape[0] × shape[1]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    family: ModelFamily,
    num_features: usize,
    num_classes: usize,
    layers: Vec<LayerFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    importance: Option<Vec<f64>>,
}

impl ModelArtifact {
    pub fn new(model: impl Into<Model>) -> Self {
        Self {
            model: model.into(),
            config: None,
            importance: None,
        }
    }

    pub fn to_json(&self) -> String {
        let layers = match &self.model {
            Model::Linear(m) => vec![LayerFile {
                shape: [m.num_outputs(), m.num_features()],
                weights: m.weights().iter().flatten().copied().collect(),
                bias: m.bias().to_vec(),
            }],
            Model::Mlp(m) => m
                .layers()
                .iter()
                .map(|l| LayerFile {
                    shape: [l.rows, l.cols],
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        };
        let file = ModelFile {
            family: self.model.family(),
            num_features: self.model.num_features(),
            num_classes: self.model.num_classes(),
            layers,
            config: self.config.clone(),
            importance: self.importance.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ModelError::Invalid(e.to_string()))?;
        let dense: Vec<Dense> = file
            .layers
            .into_iter()
            .map(|l| Dense::new(l.shape[0], l.shape[1], l.weights, l.bias))
            .collect::<Result<_, _>>()?;
        let model = match file.family {
            ModelFamily::Logistic => {
                let [layer] = <[Dense; 1]>::try_from(dense)
                    .map_err(|_| ModelError::Invalid("logistic model needs exactly one layer".into()))?;
                let weights = layer
                    .weights
                    .chunks(layer.cols.max(1))
                    .take(layer.rows)
                    .map(<[f64]>::to_vec)
                    .collect();
                Model::Linear(LinearModel::new(weights, layer.bias, file.num_classes)?)
            }
            ModelFamily::Mlp => Model::Mlp(MlpModel::new(dense, file.num_classes)?),
        };
        if model.num_features() != file.num_features {
            return Err(ModelError::Invalid(format!(
                "declared {} features, layers take {}",
                file.num_features,
                model.num_features()
            )));
        }
        if let Some(imp) = &file.importance {
            if imp.len() != file.num_features {
                return Err(ModelError::Invalid("importance length mismatch".into()));
            }
        }
        Ok(Self {
            model,
            config: file.config,
            importance: file.importance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_rules() {
        assert_eq!(label_from_scores(&[0.0]), 1);
        assert_eq!(label_from_scores(&[-1e-12]), 0);
        assert_eq!(label_from_scores(&[2.0, 2.0, 1.0]), 0);
        assert_eq!(label_from_scores(&[1.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn artifact_round_trip() {
        let lin = LinearModel::binary(vec![1.0, -0.5, 0.5], 0.25);
        let art = ModelArtifact {
            model: lin.into(),
            config: Some(TrainConfig::logistic_default(3)),
            importance: Some(vec![1.0, 0.5, 0.5]),
        };
        let back = ModelArtifact::from_json(&art.to_json()).unwrap();
        assert_eq!(back, art);
        assert_eq!(back.to_json(), art.to_json());

        let mlp = MlpModel::init(4, 3, 10, 7);
        let art = ModelArtifact::new(mlp);
        let back = ModelArtifact::from_json(&art.to_json()).unwrap();
        assert_eq!(back, art);
    }

    #[test]
    fn rejects_malformed_artifact() {
        let text = r#"{"family":"logistic","num_features":2,"num_classes":2,
            "layers":[{"shape":[1,2],"weights":[1.0],"bias":[0.0]}]}"#;
        assert!(ModelArtifact::from_json(text).is_err());
    }
}
