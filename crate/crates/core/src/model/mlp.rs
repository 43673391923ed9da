use rand::Rng;

use super::{check_len, label_from_scores, resolve_class, Classifier, ModelError};
use crate::rng;

/// Fully connected layer, `out = W x + b` with `W` row-major `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, ModelError> {
        if weights.len() != rows * cols || bias.len() != rows {
            return Err(ModelError::Invalid(format!(
                "layer {rows}x{cols} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(ModelError::Invalid("non-finite weight".into()));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.bias[r] + self.row(r).iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Per-layer activation buffers for allocation-free forward passes.
#[derive(Debug, Clone)]
pub struct ForwardBuf {
    layers: Vec<Vec<f64>>,
}

impl ForwardBuf {
    pub fn with_widths(widths: &[usize]) -> Self {
        Self {
            layers: widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }

    pub(crate) fn output_mut(&mut self) -> &mut [f64] {
        self.layers.last_mut().expect("at least one layer")
    }
}

/// ReLU network: every layer but the last is followed by `max(0, ·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
    num_classes: usize,
}

pub const HIDDEN_WIDTH: usize = 10;

impl MlpModel {
    pub fn new(layers: Vec<Dense>, num_classes: usize) -> Result<Self, ModelError> {
        let outputs = if num_classes == 2 { 1 } else { num_classes };
        if num_classes < 2 || layers.is_empty() {
            return Err(ModelError::Invalid("need at least one layer and two classes".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(ModelError::Invalid(format!(
                    "layer of width {} feeds a layer expecting {}",
                    pair[0].rows, pair[1].cols
                )));
            }
        }
        if layers.last().map(|l| l.rows) != Some(outputs) {
            return Err(ModelError::Invalid(format!("output layer must have width {outputs}")));
        }
        Ok(Self {
            layers,
            num_classes,
        })
    }

    /// Two hidden ReLU layers of width `hidden`, He-style uniform weights
    /// `U(-√(6/fan_in), √(6/fan_in))` and zero biases.
    pub fn init(num_features: usize, num_classes: usize, hidden: usize, seed: u64) -> Self {
        let outputs = if num_classes == 2 { 1 } else { num_classes };
        let mut rng = rng::stream(seed, &[0x1417]);
        let shapes = [(hidden, num_features), (hidden, hidden), (outputs, hidden)];
        let layers = shapes
            .iter()
            .map(|&(rows, cols)| {
                let limit = (6.0 / cols.max(1) as f64).sqrt();
                Dense {
                    rows,
                    cols,
                    weights: (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect(),
                    bias: vec![0.0; rows],
                }
            })
            .collect();
        Self {
            layers,
            num_classes,
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn forward_buf(&self) -> ForwardBuf {
        ForwardBuf::with_widths(&self.layers.iter().map(|l| l.rows).collect::<Vec<_>>())
    }

    /// Fills `buf` with post-activation values of every layer (raw scores for
    /// the last).
    pub(crate) fn forward_into(&self, x: &[f64], buf: &mut ForwardBuf) {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (done, rest) = buf.layers.split_at_mut(i);
            let input: &[f64] = if i == 0 { x } else { &done[i - 1] };
            let out = &mut rest[0];
            layer.forward(input, out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    /// Finishes a forward pass from first-layer pre-activations held in
    /// `buf`'s first slot and returns the hard label.
    pub(crate) fn label_from_first(&self, buf: &mut ForwardBuf) -> usize {
        let last = self.layers.len() - 1;
        if last > 0 {
            buf.layers[0].iter_mut().for_each(|v| *v = v.max(0.0));
        }
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            let (done, rest) = buf.layers.split_at_mut(i);
            let out = &mut rest[0];
            layer.forward(&done[i - 1], out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        label_from_scores(buf.output_mut())
    }

    pub(crate) fn first_mut(buf: &mut ForwardBuf) -> &mut [f64] {
        &mut buf.layers[0]
    }

    pub(crate) fn label_fast(&self, x: &[f64], buf: &mut ForwardBuf) -> usize {
        self.forward_into(x, buf);
        label_from_scores(buf.output_mut())
    }

    /// Backpropagates `upstream` (d loss / d output scores) through the
    /// network whose activations are in `buf`. Returns d / d input.
    /// ReLU units with pre-activation exactly 0 pass no gradient.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        buf: &ForwardBuf,
        upstream: &[f64],
        mut on_layer: impl FnMut(usize, &[f64], &[f64]),
    ) -> Vec<f64> {
        let mut delta = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input: &[f64] = if i == 0 { x } else { &buf.layers[i - 1] };
            on_layer(i, &delta, input);
            let mut prev = vec![0.0; layer.cols];
            for (r, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (p, w) in prev.iter_mut().zip(layer.row(r)) {
                        *p += w * d;
                    }
                }
            }
            if i > 0 {
                // post-ReLU value > 0 iff pre-activation > 0
                for (p, a) in prev.iter_mut().zip(&buf.layers[i - 1]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }
}

impl Classifier for MlpModel {
    fn num_features(&self) -> usize {
        self.layers[0].cols
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn soft_predict(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_len(self.num_features(), x)?;
        let mut buf = self.forward_buf();
        self.forward_into(x, &mut buf);
        Ok(buf.output_mut().to_vec())
    }

    fn input_gradient(&self, x: &[f64], class: Option<usize>) -> Result<Vec<f64>, ModelError> {
        check_len(self.num_features(), x)?;
        let c = resolve_class(class, self.num_outputs(), self.num_classes)?;
        let mut buf = self.forward_buf();
        self.forward_into(x, &mut buf);
        let mut upstream = vec![0.0; self.num_outputs()];
        upstream[c] = 1.0;
        Ok(self.backward(x, &buf, &upstream, |_, _, _| {}))
    }
}
