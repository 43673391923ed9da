//! Probability laws of model predictions when some features are still
//! unrevealed and distributed as a conditional Gaussian.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{ConditionalGaussian, Conditioner, GaussianStats};
use crate::model::{Classifier, LinearModel, Model};
use crate::rng;

/// Smallest probability fed to the logarithm in [`entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Known feature values: public features plus revealed sensitive ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Evidence {
    pub fn new(idx: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(idx.len(), values.len());
        Self { idx, values }
    }

    pub fn with(&self, index: usize, value: f64) -> Self {
        let mut out = self.clone();
        out.idx.push(index);
        out.values.push(value);
        out
    }

    /// Writes the known values into a full-width feature vector.
    pub fn fill(&self, x: &mut [f64]) {
        for (&i, &v) in self.idx.iter().zip(&self.values) {
            x[i] = v;
        }
    }

    pub fn to_full(&self, dim: usize) -> Vec<f64> {
        let mut x = vec![0.0; dim];
        self.fill(&mut x);
        x
    }
}

/// Gaussian law `N(mean, var)` of a scalar soft score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveGaussian {
    pub mean: f64,
    pub var: f64,
}

impl PredictiveGaussian {
    pub fn std_dev(&self) -> f64 {
        self.var.max(0.0).sqrt()
    }
}

/// Distribution over hard labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictiveLaw {
    pub class_probs: Vec<f64>,
}

impl PredictiveLaw {
    pub fn degenerate(num_classes: usize, label: usize) -> Self {
        let mut class_probs = vec![0.0; num_classes];
        class_probs[label] = 1.0;
        Self { class_probs }
    }

    /// Binary law with `P(class 1) = p`.
    pub fn binary(p: f64) -> Self {
        Self {
            class_probs: vec![1.0 - p, p],
        }
    }

    /// Most likely class, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.class_probs.iter().enumerate().skip(1) {
            if p > self.class_probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_prob(&self) -> f64 {
        self.class_probs[self.argmax()]
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Shannon entropy in nats, `0 log 0 = 0`.
pub fn entropy(law: &PredictiveLaw) -> f64 {
    -law.class_probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let p = p.clamp(PROB_FLOOR, 1.0);
            p * p.ln()
        })
        .sum::<f64>()
}

/// Binary entropy `-z ln z - (1-z) ln(1-z)`.
pub fn binary_entropy(z: f64) -> f64 {
    entropy(&PredictiveLaw::binary(z))
}

fn require_binary(model: &LinearModel) -> Result<()> {
    if !model.is_binary() {
        return Err(Error::Unsupported(
            "closed-form soft-score law needs a binary linear model".into(),
        ));
    }
    Ok(())
}

/// Exact law of `θᵀx + b` when the unrevealed block follows `cond`.
pub fn linear_soft_law_given(
    model: &LinearModel,
    cond: &ConditionalGaussian,
    evidence: &Evidence,
) -> Result<PredictiveGaussian> {
    require_binary(model)?;
    let theta = model.theta();
    let known = model.bias()[0]
        + evidence
            .idx
            .iter()
            .zip(&evidence.values)
            .map(|(&i, v)| theta[i] * v)
            .sum::<f64>();
    let theta_u = DVector::from_iterator(cond.dim(), cond.target_idx.iter().map(|&i| theta[i]));
    let mean = known + theta_u.dot(&cond.mean);
    let var = (cond.cov.clone() * &theta_u).dot(&theta_u).max(0.0);
    finite(PredictiveGaussian { mean, var })
}

/// Law of the linear soft score with the unrevealed features integrated
/// against the Gaussian posterior given `evidence`.
pub fn linear_soft_law(
    model: &LinearModel,
    stats: &GaussianStats,
    evidence: &Evidence,
    unrevealed: &[usize],
) -> Result<PredictiveGaussian> {
    require_binary(model)?;
    let cond = Conditioner::new(stats, unrevealed, &evidence.idx)?.at(&evidence.values)?;
    linear_soft_law_given(model, &cond, evidence)
}

fn finite(pg: PredictiveGaussian) -> Result<PredictiveGaussian> {
    if pg.mean.is_finite() && pg.var.is_finite() {
        Ok(pg)
    } else {
        Err(Error::NonFinite("predictive gaussian"))
    }
}

/// Bernoulli law of `1{score >= 0}`: `P(1) = Φ(m/σ)`, or `1{m >= 0}` when σ = 0.
pub fn threshold_law(pg: PredictiveGaussian) -> Result<PredictiveLaw> {
    let pg = finite(pg)?;
    let sd = pg.std_dev();
    let p = if sd == 0.0 {
        if pg.mean >= 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        normal_cdf(pg.mean / sd)
    };
    Ok(PredictiveLaw::binary(p))
}

/// First-order Taylor law of score component `class` around the posterior
/// mean: `N(f(μ_pos), gᵀ Σ_pos g)` with `g` the input gradient on the
/// unrevealed block.
pub fn taylor_soft_law<C: Classifier + ?Sized>(
    model: &C,
    cond: &ConditionalGaussian,
    evidence: &Evidence,
    class: Option<usize>,
) -> Result<PredictiveGaussian> {
    let mut x = evidence.to_full(model.num_features());
    for (k, &i) in cond.target_idx.iter().enumerate() {
        x[i] = cond.mean[k];
    }
    let c = if model.is_binary() { 0 } else { class.unwrap_or(0) };
    let mean = model.soft_predict(&x)?[c];
    let grad = model.input_gradient(&x, Some(c))?;
    let g = DVector::from_iterator(cond.dim(), cond.target_idx.iter().map(|&i| grad[i]));
    let var = (cond.cov.clone() * &g).dot(&g).max(0.0);
    finite(PredictiveGaussian { mean, var })
}

/// Monte Carlo law of the hard label: the fraction of posterior draws of
/// the unrevealed block landing in each class.
pub fn multiclass_law(
    model: &Model,
    cond: &ConditionalGaussian,
    evidence: &Evidence,
    num_samples: usize,
    seed: u64,
) -> Result<PredictiveLaw> {
    if num_samples == 0 {
        return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
    }
    let x = evidence.to_full(model.num_features());
    let mut eval = model.restricted(&x, &cond.target_idx);
    if cond.dim() == 0 {
        return Ok(PredictiveLaw::degenerate(model.num_classes(), eval.label(&[])));
    }
    let sampler = cond.sampler();
    let mut rng = rng::stream(seed, &[rng::tag::LAW]);
    let mut eps = vec![0.0; cond.dim()];
    let mut draw = vec![0.0; cond.dim()];
    let mut counts = vec![0usize; model.num_classes()];
    for _ in 0..num_samples {
        sampler.draw_with(&mut rng, &mut eps, &mut draw);
        counts[eval.label(&draw)] += 1;
    }
    Ok(PredictiveLaw {
        class_probs: counts
            .into_iter()
            .map(|c| c as f64 / num_samples as f64)
            .collect(),
    })
}

/// Law of the hard label under `cond`: exact Φ law for binary linear
/// models, Taylor + Φ for binary networks, Monte Carlo for multi-class.
pub fn law_for(
    model: &Model,
    cond: &ConditionalGaussian,
    evidence: &Evidence,
    mc_samples: usize,
    seed: u64,
) -> Result<PredictiveLaw> {
    match model {
        _ if !model.is_binary() => multiclass_law(model, cond, evidence, mc_samples, seed),
        Model::Linear(m) => threshold_law(linear_soft_law_given(m, cond, evidence)?),
        Model::Mlp(m) => threshold_law(taylor_soft_law(m, cond, evidence, None)?),
    }
}
