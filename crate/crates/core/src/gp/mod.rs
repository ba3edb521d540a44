//! Per-channel Gaussian process regression with an ARD squared-exponential
//! kernel: marginal-likelihood training, mean/variance prediction, and
//! high-probability prediction-error constants.

mod bound;
mod io;
mod train;

pub use bound::{compute_bound, BoundConstants};
pub use io::{load_model, save_model, ModelFile};
pub use train::{train_channel, TrainOptions, TrainReport};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("Cholesky factorization failed even with jitter {jitter:.3e}")]
    Factorization { jitter: f64 },
    #[error("non-finite value in training objective")]
    NonFinite,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("training needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("prediction requested from an untrained model")]
    Untrained,
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("confidence level must lie strictly inside (0, 1), got {0}")]
    BadConfidence(f64),
    #[error("model file error: {0}")]
    Io(String),
}

/// ARD kernel hyperparameters: per-dimension weights `W` (inverse squared
/// length scales), signal scale `sigma_f`, and noise scale `noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub weights: Vec<f64>,
    pub sigma_f: f64,
    pub noise: f64,
}

impl Hyperparams {
    pub fn new(weights: Vec<f64>, sigma_f: f64, noise: f64) -> Result<Self, GpError> {
        let h = Self { weights, sigma_f, noise };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(GpError::InvalidHyper("all ARD weights must be > 0".into()));
        }
        if !(self.sigma_f > 0.0) {
            return Err(GpError::InvalidHyper("sigma_f must be > 0".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(GpError::InvalidHyper("noise must be >= 0".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.weights.len()
    }

    /// Prior variance `sigma_f^2 + noise^2`, the supremum of any posterior
    /// channel variance.
    pub fn variance_cap(&self) -> f64 {
        self.sigma_f * self.sigma_f + self.noise * self.noise
    }
}

/// Squared-exponential ARD covariance between two inputs.
///
/// `same_index` adds the noise term, i.e. evaluates the covariance of two
/// observations of the *same* training sample.
pub fn kernel_eval(x1: &DVector<f64>, x2: &DVector<f64>, hyper: &Hyperparams, same_index: bool) -> f64 {
    debug_assert_eq!(x1.len(), hyper.weights.len());
    debug_assert_eq!(x2.len(), hyper.weights.len());
    let mut quad = 0.0;
    for i in 0..x1.len() {
        let d = x1[i] - x2[i];
        quad += hyper.weights[i] * d * d;
    }
    let se = hyper.sigma_f * hyper.sigma_f * (-0.5 * quad).exp();
    if same_index {
        se + hyper.noise * hyper.noise
    } else {
        se
    }
}

/// Relative jitter added to the kernel diagonal before factorization.
pub(crate) const BASE_JITTER: f64 = 1e-8;
pub(crate) const MAX_JITTER: f64 = 1e-2;

pub(crate) fn build_kernel_matrix(x: &[DVector<f64>], hyper: &Hyperparams, jitter: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel_eval(&x[i], &x[j], hyper, i == j);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let scale = hyper.variance_cap();
    for i in 0..n {
        k[(i, i)] += jitter * scale;
    }
    k
}

/// One trained scalar-output GP.
#[derive(Debug)]
pub struct GpChannel {
    x_train: Vec<DVector<f64>>,
    y: DVector<f64>,
    hyper: Hyperparams,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
    negative_variance_clamps: AtomicU64,
}

impl Clone for GpChannel {
    fn clone(&self) -> Self {
        Self {
            x_train: self.x_train.clone(),
            y: self.y.clone(),
            hyper: self.hyper.clone(),
            chol: self.chol.clone(),
            alpha: self.alpha.clone(),
            jitter: self.jitter,
            negative_variance_clamps: AtomicU64::new(
                self.negative_variance_clamps.load(Ordering::Relaxed),
            ),
        }
    }
}

impl GpChannel {
    /// Factorize the kernel at fixed hyperparameters. Jitter escalates
    /// tenfold from the base value until the factorization succeeds.
    pub fn fit(x: Vec<DVector<f64>>, y: DVector<f64>, hyper: Hyperparams) -> Result<Self, GpError> {
        hyper.validate()?;
        if x.len() != y.len() {
            return Err(GpError::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        if x.is_empty() {
            return Ok(Self::prior(hyper));
        }
        for xi in &x {
            if xi.len() != hyper.input_dim() {
                return Err(GpError::DimensionMismatch {
                    expected: hyper.input_dim(),
                    got: xi.len(),
                });
            }
        }
        let mut jitter = BASE_JITTER;
        loop {
            let k = build_kernel_matrix(&x, &hyper, jitter);
            if let Some(chol) = Cholesky::new(k) {
                let alpha = chol.solve(&y);
                return Ok(Self {
                    x_train: x,
                    y,
                    hyper,
                    chol: Some(chol),
                    alpha,
                    jitter,
                    negative_variance_clamps: AtomicU64::new(0),
                });
            }
            jitter *= 10.0;
            if jitter > MAX_JITTER {
                return Err(GpError::Factorization { jitter });
            }
        }
    }

    /// Data-free channel: zero prior mean, full prior variance.
    pub fn prior(hyper: Hyperparams) -> Self {
        Self {
            x_train: Vec::new(),
            y: DVector::zeros(0),
            hyper,
            chol: None,
            alpha: DVector::zeros(0),
            jitter: 0.0,
            negative_variance_clamps: AtomicU64::new(0),
        }
    }

    pub(crate) fn fit_with_stored_alpha(
        x: Vec<DVector<f64>>,
        y: DVector<f64>,
        hyper: Hyperparams,
        alpha: DVector<f64>,
    ) -> Result<Self, GpError> {
        let mut channel = Self::fit(x, y, hyper)?;
        if alpha.len() != channel.len() {
            return Err(GpError::DimensionMismatch { expected: channel.len(), got: alpha.len() });
        }
        channel.alpha = alpha;
        Ok(channel)
    }

    pub fn len(&self) -> usize {
        self.x_train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_train.is_empty()
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn training_inputs(&self) -> &[DVector<f64>] {
        &self.x_train
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Times prediction variance had to be clamped up to zero.
    pub fn negative_variance_clamps(&self) -> u64 {
        self.negative_variance_clamps.load(Ordering::Relaxed)
    }

    fn cross_covariance(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| kernel_eval(&self.x_train[i], x, &self.hyper, false))
    }

    pub fn predict_mean(&self, x: &DVector<f64>) -> Result<f64, GpError> {
        self.check_query(x)?;
        if self.is_empty() {
            return Ok(0.0);
        }
        Ok(self.cross_covariance(x).dot(&self.alpha))
    }

    /// Posterior mean and (latent-function) variance at a query point.
    pub fn predict(&self, x: &DVector<f64>) -> Result<(f64, f64), GpError> {
        self.check_query(x)?;
        let k_star = self.hyper.sigma_f * self.hyper.sigma_f;
        if self.is_empty() {
            return Ok((0.0, k_star));
        }
        let chol = self.chol.as_ref().ok_or(GpError::Untrained)?;
        let k = self.cross_covariance(x);
        let mean = k.dot(&self.alpha);
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .ok_or(GpError::Factorization { jitter: self.jitter })?;
        let mut var = k_star - v.norm_squared();
        if var < 0.0 {
            self.negative_variance_clamps.fetch_add(1, Ordering::Relaxed);
            var = 0.0;
        }
        Ok((mean, var))
    }

    /// Negative log marginal likelihood of the training data at the stored
    /// hyperparameters (including the normalization constant).
    pub fn nlml(&self) -> Result<f64, GpError> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let chol = self.chol.as_ref().ok_or(GpError::Untrained)?;
        let alpha = chol.solve(&self.y);
        let log_det: f64 = (0..self.len()).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
        let n = self.len() as f64;
        Ok(0.5 * self.y.dot(&alpha) + 0.5 * log_det + 0.5 * n * (2.0 * std::f64::consts::PI).ln())
    }

    fn check_query(&self, x: &DVector<f64>) -> Result<(), GpError> {
        if x.len() != self.hyper.input_dim() {
            return Err(GpError::DimensionMismatch { expected: self.hyper.input_dim(), got: x.len() });
        }
        Ok(())
    }
}

/// Which state components form the GP input vector, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputSpec {
    /// `x = [q, qdot]`
    PosVel,
    /// `x = [q, qdot, qddot]`
    PosVelAcc,
}

impl InputSpec {
    pub fn input_dim(&self, dof: usize) -> usize {
        match self {
            InputSpec::PosVel => 2 * dof,
            InputSpec::PosVelAcc => 3 * dof,
        }
    }

    /// Build the GP input from state components. A missing acceleration is
    /// filled with zeros (startup tick).
    pub fn assemble(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        qddot: Option<&DVector<f64>>,
    ) -> DVector<f64> {
        let dof = q.len();
        match self {
            InputSpec::PosVel => {
                let mut x = DVector::zeros(2 * dof);
                x.rows_mut(0, dof).copy_from(q);
                x.rows_mut(dof, dof).copy_from(qdot);
                x
            }
            InputSpec::PosVelAcc => {
                let mut x = DVector::zeros(3 * dof);
                x.rows_mut(0, dof).copy_from(q);
                x.rows_mut(dof, dof).copy_from(qdot);
                if let Some(a) = qddot {
                    x.rows_mut(2 * dof, dof).copy_from(a);
                }
                x
            }
        }
    }
}

/// Per-channel prediction: mean vector and variance vector (the diagonal of
/// the predictive covariance).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mu: DVector<f64>,
    pub sigma: DVector<f64>,
}

impl Prediction {
    pub fn zero(channels: usize) -> Self {
        Self { mu: DVector::zeros(channels), sigma: DVector::zeros(channels) }
    }
}

/// A vector-valued GP: one independent channel per output dimension, all
/// sharing the same training inputs.
#[derive(Debug, Clone)]
pub struct GpVectorModel {
    pub channels: Vec<GpChannel>,
    pub input_spec: InputSpec,
}

impl GpVectorModel {
    pub fn new(channels: Vec<GpChannel>, input_spec: InputSpec) -> Self {
        Self { channels, input_spec }
    }

    /// Prior-only model (no data): zero mean, prior variance.
    pub fn prior(n_channels: usize, hyper: Hyperparams, input_spec: InputSpec) -> Self {
        let channels = (0..n_channels).map(|_| GpChannel::prior(hyper.clone())).collect();
        Self { channels, input_spec }
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_train(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<Prediction, GpError> {
        let mut mu = DVector::zeros(self.channels.len());
        let mut sigma = DVector::zeros(self.channels.len());
        for (i, ch) in self.channels.iter().enumerate() {
            let (m, v) = ch.predict(x)?;
            mu[i] = m;
            sigma[i] = v;
        }
        Ok(Prediction { mu, sigma })
    }

    pub fn predict_mean(&self, x: &DVector<f64>) -> Result<DVector<f64>, GpError> {
        let mut mu = DVector::zeros(self.channels.len());
        for (i, ch) in self.channels.iter().enumerate() {
            mu[i] = ch.predict_mean(x)?;
        }
        Ok(mu)
    }

    /// Supremum of the per-channel predictive standard deviation:
    /// `max_i sqrt(sigma_f_i^2 + noise_i^2)`.
    pub fn variance_sup(&self) -> f64 {
        self.channels
            .iter()
            .map(|c| c.hyper().variance_cap().sqrt())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_hyper(dim: usize) -> Hyperparams {
        Hyperparams::new(vec![1.0; dim], 1.0, 0.0).unwrap()
    }

    #[test]
    fn kernel_zero_distance() {
        let h = Hyperparams::new(vec![1.0, 1.0], 2.0, 0.5).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7]);
        assert_relative_eq!(kernel_eval(&x, &x, &h, true), 4.0 + 0.25, epsilon = 1e-15);
        assert_relative_eq!(kernel_eval(&x, &x, &h, false), 4.0, epsilon = 1e-15);
    }

    #[test]
    fn kernel_unit_offset() {
        let h = unit_hyper(3);
        let x1 = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let x2 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert_relative_eq!(kernel_eval(&x1, &x2, &h, false), (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn kernel_decays_monotonically() {
        let h = unit_hyper(1);
        let x0 = DVector::from_vec(vec![0.0]);
        let mut prev = f64::INFINITY;
        for k in 1..40 {
            let x = DVector::from_vec(vec![0.25 * k as f64]);
            let v = kernel_eval(&x0, &x, &h, false);
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn single_point_prediction_matches_scalar_algebra() {
        let h = Hyperparams::new(vec![1.0], 1.3, 0.4).unwrap();
        let x1 = DVector::from_vec(vec![0.8]);
        let y1 = 2.0;
        let ch = GpChannel::fit(vec![x1.clone()], DVector::from_vec(vec![y1]), h.clone()).unwrap();
        let mean = ch.predict_mean(&x1).unwrap();
        let sf2 = h.sigma_f * h.sigma_f;
        let expected = sf2 * y1 / (sf2 + h.noise * h.noise + BASE_JITTER * h.variance_cap());
        assert_relative_eq!(mean, expected, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Hyperparams::new(vec![2.0, 0.5], 1.0, 1e-6).unwrap();
        let x: Vec<_> = (0..12)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0)))
            .collect();
        let y = DVector::from_fn(12, |i, _| f64::sin(x[i][0] - 0.3 * x[i][1]));
        let ch = GpChannel::fit(x.clone(), y.clone(), h).unwrap();
        for (xi, yi) in x.iter().zip(y.iter()) {
            let (mean, var) = ch.predict(xi).unwrap();
            assert_relative_eq!(mean, *yi, epsilon = 1e-4);
            // Variance floor is set by the relative jitter on the kernel
            // diagonal.
            assert!(var.abs() < 1e-7);
        }
    }

    #[test]
    fn prior_reversion_far_away() {
        let h = Hyperparams::new(vec![1.0], 1.5, 0.2).unwrap();
        let ch = GpChannel::fit(
            vec![DVector::from_vec(vec![0.0])],
            DVector::from_vec(vec![3.0]),
            h.clone(),
        )
        .unwrap();
        let far = DVector::from_vec(vec![40.0]);
        let (mean, var) = ch.predict(&far).unwrap();
        assert_relative_eq!(mean, 0.0, epsilon = 1e-12);
        assert_relative_eq!(var, h.sigma_f * h.sigma_f, epsilon = 1e-12);
    }

    #[test]
    fn variance_never_exceeds_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let h = Hyperparams::new(vec![0.7, 1.4, 0.2], 0.9, 0.3).unwrap();
        let x: Vec<_> = (0..30)
            .map(|_| DVector::from_fn(3, |_, _| rng.gen_range(-3.0..3.0)))
            .collect();
        let y = DVector::from_fn(30, |i, _| x[i].sum());
        let ch = GpChannel::fit(x, y, h.clone()).unwrap();
        for _ in 0..500 {
            let q = DVector::from_fn(3, |_, _| rng.gen_range(-6.0..6.0));
            let (_, var) = ch.predict(&q).unwrap();
            assert!(var <= h.variance_cap() + 1e-9);
            assert!(var >= 0.0);
        }
    }

    #[test]
    fn prediction_linear_in_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = Hyperparams::new(vec![1.0, 1.0], 1.0, 0.1).unwrap();
        let x: Vec<_> = (0..10)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let y1 = DVector::from_fn(10, |i, _| (i as f64 * 0.37).sin());
        let y2 = DVector::from_fn(10, |i, _| (i as f64 * 0.91).cos());
        let (a, b) = (2.5, -1.25);
        let combo = &y1 * a + &y2 * b;
        let c1 = GpChannel::fit(x.clone(), y1, h.clone()).unwrap();
        let c2 = GpChannel::fit(x.clone(), y2, h.clone()).unwrap();
        let cc = GpChannel::fit(x, combo, h).unwrap();
        for _ in 0..20 {
            let q = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let lhs = cc.predict_mean(&q).unwrap();
            let rhs = a * c1.predict_mean(&q).unwrap() + b * c2.predict_mean(&q).unwrap();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn variance_sup_formula() {
        let h1 = Hyperparams::new(vec![1.0], 1.0, 0.1).unwrap();
        let model = GpVectorModel::prior(1, h1, InputSpec::PosVel);
        assert_relative_eq!(model.variance_sup(), 1.01f64.sqrt(), epsilon = 1e-12);

        let h2 = Hyperparams::new(vec![1.0], 3.0, 0.0).unwrap();
        let mixed = GpVectorModel::new(
            vec![
                GpChannel::prior(Hyperparams::new(vec![1.0], 1.0, 0.1).unwrap()),
                GpChannel::prior(h2),
            ],
            InputSpec::PosVel,
        );
        assert_relative_eq!(mixed.variance_sup(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_targets_give_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = Hyperparams::new(vec![1.0], 1.0, 0.05).unwrap();
        let x: Vec<_> = (0..8)
            .map(|_| DVector::from_fn(1, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let ch = GpChannel::fit(x, DVector::zeros(8), h.clone()).unwrap();
        for _ in 0..30 {
            let q = DVector::from_fn(1, |_, _| rng.gen_range(-3.0..3.0));
            let (mean, var) = ch.predict(&q).unwrap();
            assert_eq!(mean, 0.0);
            assert!(var <= h.variance_cap() + 1e-9);
        }
    }
}
