//! Joint Gaussian model of the features: estimation, conditioning on
//! revealed values (Schur complement), and sampling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::rng;

pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GaussianError {
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("index {0} is both a target and a conditioning index")]
    Overlap(usize),
    #[error("index {index} out of range for dimension {dim}")]
    OutOfRange { index: usize, dim: usize },
    #[error("expected {expected} conditioning values, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("covariance of the conditioning block is not positive definite")]
    Singular,
    #[error("covariance is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("dimension mismatch: mean has {mean} entries, covariance is {rows}x{cols}")]
    Shape { mean: usize, rows: usize, cols: usize },
    #[error("invalid statistics file: {0}")]
    Invalid(String),
}

/// Mean vector and (ridge-regularized) covariance of the feature distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StatsFile", into = "StatsFile")]
pub struct GaussianStats {
    mu: DVector<f64>,
    /// Includes `ridge` on the diagonal.
    sigma: DMatrix<f64>,
    ridge: f64,
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    ridge: f64,
}

impl From<GaussianStats> for StatsFile {
    fn from(s: GaussianStats) -> Self {
        let d = s.dim();
        StatsFile {
            mu: s.mu.iter().copied().collect(),
            sigma: (0..d).map(|i| (0..d).map(|j| s.sigma[(i, j)]).collect()).collect(),
            ridge: s.ridge,
        }
    }
}

impl TryFrom<StatsFile> for GaussianStats {
    type Error = GaussianError;

    fn try_from(f: StatsFile) -> Result<Self, Self::Error> {
        let d = f.mu.len();
        if f.sigma.len() != d || f.sigma.iter().any(|r| r.len() != d) {
            return Err(GaussianError::Shape {
                mean: d,
                rows: f.sigma.len(),
                cols: f.sigma.first().map_or(0, Vec::len),
            });
        }
        let sigma = DMatrix::from_fn(d, d, |i, j| f.sigma[i][j]);
        GaussianStats::validated(DVector::from_vec(f.mu), sigma, f.ridge)
    }
}

impl GaussianStats {
    /// `sigma` is the unregularized covariance; `ridge * I` is added here.
    /// Positive definiteness is not required up front: a singular block
    /// surfaces as [`GaussianError::Singular`] when it is conditioned on.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, ridge: f64) -> Result<Self, GaussianError> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(GaussianError::Shape {
                mean: d,
                rows: sigma.nrows(),
                cols: sigma.ncols(),
            });
        }
        let sigma = sigma + DMatrix::identity(d, d) * ridge;
        Self::validated(mu, sigma, ridge)
    }

    fn validated(mu: DVector<f64>, sigma: DMatrix<f64>, ridge: f64) -> Result<Self, GaussianError> {
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-9 {
            return Err(GaussianError::Asymmetric(asym));
        }
        Ok(Self { mu, sigma, ridge })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

/// Sample mean and biased (divide-by-n) sample covariance plus `ridge * I`.
pub fn estimate(train: &Dataset, ridge: f64) -> Result<GaussianStats, GaussianError> {
    let n = train.num_rows();
    if n < 2 {
        return Err(GaussianError::TooFewRows(n));
    }
    let d = train.num_features();
    let x = DMatrix::from_fn(n, d, |i, j| train.features[i][j]);
    let mu = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let mut sigma = centered.transpose() * &centered / n as f64;
    sigma = (&sigma + sigma.transpose()) * 0.5;
    GaussianStats::new(mu, sigma, ridge)
}

fn check_indices(dim: usize, target: &[usize], given: &[usize]) -> Result<(), GaussianError> {
    for &index in target.iter().chain(given) {
        if index >= dim {
            return Err(GaussianError::OutOfRange { index, dim });
        }
    }
    if let Some(&i) = target.iter().find(|i| given.contains(i)) {
        return Err(GaussianError::Overlap(i));
    }
    Ok(())
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// The value-independent part of conditioning a target block on a given
/// block: the gain `Σ_TG Σ_GG⁻¹` and the Schur-complement covariance.
/// Reusable for any values of the given block.
#[derive(Debug, Clone)]
pub struct Conditioner {
    target_idx: Vec<usize>,
    given_idx: Vec<usize>,
    mu_target: DVector<f64>,
    mu_given: DVector<f64>,
    gain: DMatrix<f64>,
    cov: DMatrix<f64>,
}

impl Conditioner {
    pub fn new(stats: &GaussianStats, target: &[usize], given: &[usize]) -> Result<Self, GaussianError> {
        check_indices(stats.dim(), target, given)?;
        let mu_target = DVector::from_fn(target.len(), |i, _| stats.mu[target[i]]);
        let mu_given = DVector::from_fn(given.len(), |i, _| stats.mu[given[i]]);
        let s_tt = submatrix(&stats.sigma, target, target);
        let (gain, cov) = if given.is_empty() {
            (DMatrix::zeros(target.len(), 0), s_tt)
        } else {
            let s_gg = submatrix(&stats.sigma, given, given);
            let s_gt = submatrix(&stats.sigma, given, target);
            let chol = Cholesky::new(s_gg).ok_or(GaussianError::Singular)?;
            // Σ_GG⁻¹ Σ_GT, solved rather than inverted
            let solved = chol.solve(&s_gt);
            let cov = &s_tt - s_gt.transpose() * &solved;
            (solved.transpose(), (&cov + cov.transpose()) * 0.5)
        };
        Ok(Self {
            target_idx: target.to_vec(),
            given_idx: given.to_vec(),
            mu_target,
            mu_given,
            gain,
            cov,
        })
    }

    pub fn target_idx(&self) -> &[usize] {
        &self.target_idx
    }

    pub fn given_idx(&self) -> &[usize] {
        &self.given_idx
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn mean_at(&self, given_values: &[f64]) -> Result<DVector<f64>, GaussianError> {
        if given_values.len() != self.given_idx.len() {
            return Err(GaussianError::LengthMismatch {
                expected: self.given_idx.len(),
                found: given_values.len(),
            });
        }
        let delta = DVector::from_fn(given_values.len(), |i, _| given_values[i] - self.mu_given[i]);
        Ok(&self.mu_target + &self.gain * delta)
    }

    pub fn at(&self, given_values: &[f64]) -> Result<ConditionalGaussian, GaussianError> {
        Ok(ConditionalGaussian {
            target_idx: self.target_idx.clone(),
            mean: self.mean_at(given_values)?,
            cov: self.cov.clone(),
        })
    }
}

/// Distribution of `X_target | X_given = given_values`.
pub fn condition(
    stats: &GaussianStats,
    target: &[usize],
    given: &[usize],
    given_values: &[f64],
) -> Result<ConditionalGaussian, GaussianError> {
    Conditioner::new(stats, target, given)?.at(given_values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalGaussian {
    pub target_idx: Vec<usize>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ConditionalGaussian {
    pub fn dim(&self) -> usize {
        self.target_idx.len()
    }

    pub fn sampler(&self) -> GaussianSampler {
        GaussianSampler::new(self.mean.clone(), &self.cov)
    }

    /// `count` i.i.d. draws as rows of a `count × dim` matrix.
    pub fn sample(&self, count: usize, seed: u64) -> DMatrix<f64> {
        let sampler = self.sampler();
        let mut rng = rng::stream(seed, &[rng::tag::SAMPLE]);
        let mut out = DMatrix::zeros(count, self.dim());
        let mut buf = vec![0.0; self.dim()];
        for r in 0..count {
            sampler.draw_into(&mut rng, &mut buf);
            for (c, v) in buf.iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
        out
    }
}

/// Draws `mean + L ε` with `L Lᵀ = cov`. Falls back to an eigenvalue
/// factorization (negative eigenvalues clamped to 0) when Cholesky fails.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Self {
        Self {
            mean,
            factor: symmetric_factor(cov),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn set_mean(&mut self, mean: DVector<f64>) {
        debug_assert_eq!(mean.len(), self.mean.len());
        self.mean = mean;
    }

    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let mut eps = vec![0.0; self.dim()];
        self.draw_with(rng, &mut eps, out);
    }

    /// As [`draw_into`](Self::draw_into) with caller-provided scratch for the
    /// standard-normal vector.
    pub fn draw_with<R: Rng + ?Sized>(&self, rng: &mut R, eps: &mut [f64], out: &mut [f64]) {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        self.transform(eps, out);
    }

    /// Maps standard-normal `eps` to a draw.
    pub fn transform(&self, eps: &[f64], out: &mut [f64]) {
        let k = self.dim();
        for i in 0..k {
            let mut acc = self.mean[i];
            for (j, e) in eps.iter().enumerate() {
                acc += self.factor[(i, j)] * e;
            }
            out[i] = acc;
        }
    }
}

pub fn symmetric_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if cov.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    if let Some(chol) = Cholesky::<f64, Dyn>::new(cov.clone()) {
        return chol.l();
    }
    let eig = SymmetricEigen::new(cov.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn stats_2d(rho: f64) -> GaussianStats {
        GaussianStats::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn two_point_estimate() {
        let d = Dataset::new(
            vec![vec![0.0, 0.0], vec![2.0, 2.0]],
            vec![0, 1],
            vec!["a".into(), "b".into()],
            2,
        )
        .unwrap();
        let s = estimate(&d, 0.0).unwrap();
        assert_eq!(s.mean().as_slice(), &[1.0, 1.0]);
        assert_eq!(s.covariance(), &DMatrix::from_element(2, 2, 1.0));
        // the singular block only fails once conditioned on
        assert!(condition(&s, &[1], &[0], &[0.0]).is_ok());
        let r = estimate(&d, 1e-6).unwrap();
        assert_eq!(r.covariance()[(0, 0)], 1.0 + 1e-6);
    }

    #[test]
    fn too_few_rows() {
        let d = Dataset::new(vec![vec![1.0]], vec![0], vec!["a".into()], 2).unwrap();
        assert_eq!(estimate(&d, 0.0), Err(GaussianError::TooFewRows(1)));
    }

    #[test]
    fn ridge_shifts_diagonal_exactly() {
        let base = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let s = GaussianStats::new(DVector::zeros(2), base.clone(), 1e-6).unwrap();
        for i in 0..2 {
            assert_eq!(s.covariance()[(i, i)], base[(i, i)] + 1e-6);
        }
        assert_eq!(s.covariance()[(0, 1)], 0.3);
    }

    #[test]
    fn conditions_bivariate_normal() {
        let c = condition(&stats_2d(0.5), &[1], &[0], &[1.0]).unwrap();
        assert_abs_diff_eq!(c.mean[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.cov[(0, 0)], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn identity_covariance_is_independent() {
        let s = GaussianStats::new(
            DVector::from_vec(vec![0.1, -0.2, 0.3]),
            DMatrix::identity(3, 3),
            0.0,
        )
        .unwrap();
        let c = condition(&s, &[0, 2], &[1], &[0.9]).unwrap();
        assert_eq!(c.mean.as_slice(), &[0.1, 0.3]);
        assert_eq!(c.cov, DMatrix::identity(2, 2));
    }

    #[test]
    fn empty_given_is_marginal() {
        let c = condition(&stats_2d(0.5), &[1, 0], &[], &[]).unwrap();
        assert_eq!(c.mean.as_slice(), &[0.0, 0.0]);
        assert_eq!(c.cov, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
    }

    #[test]
    fn rejects_bad_index_sets() {
        let s = stats_2d(0.5);
        assert_eq!(condition(&s, &[0], &[0], &[1.0]), Err(GaussianError::Overlap(0)));
        assert!(matches!(
            condition(&s, &[2], &[0], &[1.0]),
            Err(GaussianError::OutOfRange { index: 2, dim: 2 })
        ));
        assert!(matches!(
            condition(&s, &[1], &[0], &[]),
            Err(GaussianError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn singular_given_block_detected() {
        let s = GaussianStats::new(
            DVector::zeros(3),
            DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
            0.0,
        )
        .unwrap();
        assert_eq!(
            condition(&s, &[2], &[0, 1], &[0.0, 0.0]),
            Err(GaussianError::Singular)
        );
    }

    #[test]
    fn zero_variance_samples_equal_mean() {
        let c = ConditionalGaussian {
            target_idx: vec![0],
            mean: DVector::from_vec(vec![0.25]),
            cov: DMatrix::zeros(1, 1),
        };
        let s = c.sample(50, 1);
        assert!(s.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn standard_normal_moments() {
        let c = ConditionalGaussian {
            target_idx: vec![0],
            mean: DVector::zeros(1),
            cov: DMatrix::identity(1, 1),
        };
        let s = c.sample(100_000, 11);
        let n = s.nrows() as f64;
        let mean = s.sum() / n;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        assert_eq!(c.sample(10, 4), c.sample(10, 4));
    }

    #[test]
    fn semidefinite_covariance_uses_eigen_fallback() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = symmetric_factor(&cov);
        assert!((&l * l.transpose() - &cov).amax() < 1e-12);
    }

    #[test]
    fn json_layout() {
        let s = stats_2d(0.25);
        let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(v["mu"], serde_json::json!([0.0, 0.0]));
        assert_eq!(v["sigma"][0], serde_json::json!([1.0, 0.25]));
        assert_eq!(v["ridge"], serde_json::json!(0.0));
        let back: GaussianStats = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn identity_estimate_from_standard_normal_data() {
        let mut rng = rng::stream(5, &[]);
        let rows: Vec<Vec<f64>> = (0..100_000)
            .map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let n = rows.len();
        let d = Dataset::new(rows, vec![0; n], vec!["a".into(), "b".into(), "c".into()], 2).unwrap();
        let s = estimate(&d, DEFAULT_RIDGE).unwrap();
        let err = (s.covariance() - DMatrix::<f64>::identity(3, 3)).amax();
        assert!(err < 0.05, "max deviation {err}");
    }

    fn random_spd(seed: u64, d: usize) -> GaussianStats {
        let mut rng = rng::stream(seed, &[]);
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mu = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        GaussianStats::new(mu, &a * a.transpose() / d as f64, 0.1).unwrap()
    }

    proptest! {
        #[test]
        fn nested_conditioning_matches_one_shot(seed: u64, x in prop::collection::vec(-1.0f64..1.0, 3)) {
            let s = random_spd(seed, 5);
            let one_shot = condition(&s, &[3, 4], &[0, 1, 2], &x).unwrap();
            // condition on {0,1} first, then condition that posterior on 2
            let first = condition(&s, &[2, 3, 4], &[0, 1], &x[..2]).unwrap();
            let inner = GaussianStats {
                mu: first.mean.clone(),
                sigma: first.cov.clone(),
                ridge: 0.0,
            };
            let nested = condition(&inner, &[1, 2], &[0], &x[2..]).unwrap();
            prop_assert!((&one_shot.mean - &nested.mean).amax() < 1e-8);
            prop_assert!((&one_shot.cov - &nested.cov).amax() < 1e-8);
        }

        #[test]
        fn conditioning_never_increases_variance(seed: u64, x in prop::collection::vec(-1.0f64..1.0, 3)) {
            let s = random_spd(seed, 6);
            let c = condition(&s, &[0, 4, 5], &[1, 2, 3], &x).unwrap();
            for (k, &j) in [0usize, 4, 5].iter().enumerate() {
                prop_assert!(c.cov[(k, k)] <= s.covariance()[(j, j)] + 1e-10);
            }
        }
    }
}
