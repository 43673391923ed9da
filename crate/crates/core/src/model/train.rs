//! Mini-batch SGD on the cross-entropy loss for both model families.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::HIDDEN_WIDTH;
use super::{Classifier, Dense, LinearModel, MlpModel, ModelError};
use crate::data::Dataset;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn logistic_default(seed: u64) -> Self {
        Self {
            lr: 0.01,
            epochs: 300,
            batch: 32,
            seed,
        }
    }

    pub fn mlp_default(seed: u64) -> Self {
        Self {
            lr: 0.001,
            epochs: 300,
            batch: 32,
            seed,
        }
    }
}

/// Loss gradient with respect to the output scores, plus the loss itself.
fn output_gradient(scores: &[f64], label: usize, grad: &mut [f64]) -> f64 {
    if scores.len() == 1 {
        let s = scores[0];
        let y = label as f64;
        let p = 1.0 / (1.0 + (-s).exp());
        grad[0] = p - y;
        // softplus(s) - y s, computed stably
        s.max(0.0) + (-s.abs()).exp().ln_1p() - y * s
    } else {
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        for (k, (g, s)) in grad.iter_mut().zip(scores).enumerate() {
            *g = (s - max).exp() / z - if k == label { 1.0 } else { 0.0 };
        }
        max + z.ln() - scores[label]
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[0x7e4, epoch as u64]));
    order
}

pub fn train_logistic(train: &Dataset, config: &TrainConfig) -> Result<LinearModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let d = train.num_features();
    let outputs = if train.num_classes == 2 { 1 } else { train.num_classes };
    let mut model = LinearModel::new(vec![vec![0.0; d]; outputs], vec![0.0; outputs], train.num_classes)?;
    let mut grad_w = vec![vec![0.0; d]; outputs];
    let mut grad_b = vec![0.0; outputs];
    let mut scores = vec![0.0; outputs];
    let mut g = vec![0.0; outputs];
    let batch = config.batch.max(1);

    for epoch in 0..config.epochs {
        let mut loss = 0.0;
        for chunk in epoch_order(train.num_rows(), config.seed, epoch).chunks(batch) {
            grad_w.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v = 0.0));
            grad_b.iter_mut().for_each(|v| *v = 0.0);
            for &i in chunk {
                let x = &train.features[i];
                model.scores_into(x, &mut scores);
                loss += output_gradient(&scores, train.labels[i], &mut g);
                for k in 0..outputs {
                    grad_b[k] += g[k];
                    for (gw, v) in grad_w[k].iter_mut().zip(x) {
                        *gw += g[k] * v;
                    }
                }
            }
            let step = config.lr / chunk.len() as f64;
            let (weights, bias) = model.params_mut();
            for k in 0..outputs {
                bias[k] -= step * grad_b[k];
                for (w, gw) in weights[k].iter_mut().zip(&grad_w[k]) {
                    *w -= step * gw;
                }
            }
        }
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
    }
    Ok(model)
}

pub fn train_mlp(train: &Dataset, config: &TrainConfig) -> Result<MlpModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut model = MlpModel::init(train.num_features(), train.num_classes, HIDDEN_WIDTH, config.seed);
    let mut grads: Vec<Dense> = model.layers().iter().map(|l| Dense::zeros(l.rows, l.cols)).collect();
    let mut buf = model.forward_buf();
    let mut g = vec![0.0; model.num_outputs()];
    let batch = config.batch.max(1);

    for epoch in 0..config.epochs {
        let mut loss = 0.0;
        for chunk in epoch_order(train.num_rows(), config.seed, epoch).chunks(batch) {
            for layer in grads.iter_mut() {
                layer.weights.iter_mut().for_each(|v| *v = 0.0);
                layer.bias.iter_mut().for_each(|v| *v = 0.0);
            }
            for &i in chunk {
                let x = &train.features[i];
                model.forward_into(x, &mut buf);
                loss += output_gradient(buf.output_mut(), train.labels[i], &mut g);
                model.backward(x, &buf, &g, |layer, delta, input| {
                    let acc = &mut grads[layer];
                    for (r, d) in delta.iter().enumerate() {
                        acc.bias[r] += d;
                        if *d != 0.0 {
                            let row = &mut acc.weights[r * acc.cols..(r + 1) * acc.cols];
                            for (w, v) in row.iter_mut().zip(input) {
                                *w += d * v;
                            }
                        }
                    }
                });
            }
            let step = config.lr / chunk.len() as f64;
            for (layer, grad) in model.layers_mut().iter_mut().zip(&grads) {
                for (w, gw) in layer.weights.iter_mut().zip(&grad.weights) {
                    *w -= step * gw;
                }
                for (b, gb) in layer.bias.iter_mut().zip(&grad.bias) {
                    *b -= step * gb;
                }
            }
        }
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
    }
    Ok(model)
}

pub fn accuracy<C: Classifier + ?Sized>(model: &C, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .features
        .iter()
        .zip(&data.labels)
        .filter(|(x, y)| model.hard_predict(x).ok() == Some(**y))
        .count();
    correct as f64 / data.num_rows() as f64
}
