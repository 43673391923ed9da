use super::{check_len, label_from_scores, resolve_class, Classifier, ForwardBuf, ModelError};

/// `score = θ x + bias`, one row of `θ` per output.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    num_classes: usize,
}

impl LinearModel {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, num_classes: usize) -> Result<Self, ModelError> {
        let outputs = if num_classes == 2 { 1 } else { num_classes };
        if num_classes < 2 || weights.len() != outputs || bias.len() != outputs {
            return Err(ModelError::Invalid(format!(
                "{num_classes} classes need {outputs} weight rows and biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        let d = weights[0].len();
        if weights.iter().any(|r| r.len() != d) {
            return Err(ModelError::Invalid("ragged weight rows".into()));
        }
        if weights.iter().flatten().chain(&bias).any(|w| !w.is_finite()) {
            return Err(ModelError::Invalid("non-finite weight".into()));
        }
        Ok(Self {
            weights,
            bias,
            num_classes,
        })
    }

    pub fn binary(theta: Vec<f64>, bias: f64) -> Self {
        Self::new(vec![theta], vec![bias], 2).expect("valid binary model")
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Weight vector of a binary model.
    pub fn theta(&self) -> &[f64] {
        &self.weights[0]
    }

    /// `‖θ_j‖₂` over output rows, per feature.
    pub fn importance(&self) -> Vec<f64> {
        (0..self.num_features())
            .map(|j| self.weights.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt())
            .collect()
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [Vec<f64>], &mut [f64]) {
        (&mut self.weights, &mut self.bias)
    }

    pub(crate) fn scores_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, row), b) in out.iter_mut().zip(&self.weights).zip(&self.bias) {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub(crate) fn label_fast(&self, x: &[f64], buf: &mut ForwardBuf) -> usize {
        let out = buf.output_mut();
        self.scores_into(x, out);
        label_from_scores(out)
    }
}

impl Classifier for LinearModel {
    fn num_features(&self) -> usize {
        self.weights[0].len()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn soft_predict(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_len(self.num_features(), x)?;
        let mut out = vec![0.0; self.weights.len()];
        self.scores_into(x, &mut out);
        Ok(out)
    }

    fn input_gradient(&self, x: &[f64], class: Option<usize>) -> Result<Vec<f64>, ModelError> {
        check_len(self.num_features(), x)?;
        let c = resolve_class(class, self.num_outputs(), self.num_classes)?;
        Ok(self.weights[c].clone())
    }
}
