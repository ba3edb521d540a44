use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GpChannel, GpError, Hyperparams, BASE_JITTER};

/// Settings for marginal-likelihood hyperparameter optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// Random restarts in addition to the supplied initial point.
    pub restarts: usize,
    /// Gradient-descent iteration cap per start.
    pub max_iters: usize,
    /// Stop when the max-norm of the gradient falls below this.
    pub grad_tol: f64,
    /// Initial line-search step in log-hyperparameter space.
    pub step0: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { restarts: 4, max_iters: 200, grad_tol: 1e-6, step0: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub nlml_init: f64,
    pub nlml_final: f64,
    pub iterations: usize,
    pub best_start: usize,
}

/// Log-space bounds keep the optimizer away from degenerate kernels.
const LOG_W_RANGE: (f64, f64) = (-20.0, 16.0);
const LOG_SF_RANGE: (f64, f64) = (-12.0, 12.0);
const LOG_NOISE_RANGE: (f64, f64) = (-13.8, 12.0);

struct Objective<'a> {
    x: &'a [DVector<f64>],
    y: &'a DVector<f64>,
    /// Per-input-dimension matrices of squared coordinate differences.
    dist2: Vec<DMatrix<f64>>,
    dim: usize,
}

impl<'a> Objective<'a> {
    fn new(x: &'a [DVector<f64>], y: &'a DVector<f64>) -> Self {
        let n = x.len();
        let dim = x[0].len();
        let mut dist2 = Vec::with_capacity(dim);
        for d in 0..dim {
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in (i + 1)..n {
                    let diff = x[i][d] - x[j][d];
                    m[(i, j)] = diff * diff;
                    m[(j, i)] = m[(i, j)];
                }
            }
            dist2.push(m);
        }
        Self { x, y, dist2, dim }
    }

    fn n_params(&self) -> usize {
        self.dim + 2
    }

    fn clamp(&self, theta: &mut DVector<f64>) {
        for d in 0..self.dim {
            theta[d] = theta[d].clamp(LOG_W_RANGE.0, LOG_W_RANGE.1);
        }
        theta[self.dim] = theta[self.dim].clamp(LOG_SF_RANGE.0, LOG_SF_RANGE.1);
        theta[self.dim + 1] = theta[self.dim + 1].clamp(LOG_NOISE_RANGE.0, LOG_NOISE_RANGE.1);
    }

    fn hyper_from(&self, theta: &DVector<f64>) -> Hyperparams {
        Hyperparams {
            weights: (0..self.dim).map(|d| theta[d].exp()).collect(),
            sigma_f: theta[self.dim].exp(),
            noise: theta[self.dim + 1].exp(),
        }
    }

    fn theta_from(&self, hyper: &Hyperparams) -> DVector<f64> {
        let mut theta = DVector::zeros(self.n_params());
        for d in 0..self.dim {
            theta[d] = hyper.weights[d].ln();
        }
        theta[self.dim] = hyper.sigma_f.ln();
        theta[self.dim + 1] = hyper.noise.ln();
        theta
    }

    /// Noise-free kernel matrix and the full (jittered) training matrix.
    fn kernel_parts(&self, theta: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.x.len();
        let sf2 = (2.0 * theta[self.dim]).exp();
        let noise2 = (2.0 * theta[self.dim + 1]).exp();
        let jitter = BASE_JITTER * (sf2 + noise2);
        let mut quad = DMatrix::zeros(n, n);
        for d in 0..self.dim {
            let w = theta[d].exp();
            quad.zip_apply(&self.dist2[d], |acc, d2| *acc += w * d2);
        }
        let k_se = quad.map(|v: f64| sf2 * (-0.5 * v).exp());
        let mut k = k_se.clone();
        for i in 0..n {
            k[(i, i)] += noise2 + jitter;
        }
        (k_se, k)
    }

    fn value(&self, theta: &DVector<f64>) -> Option<f64> {
        let (_, k) = self.kernel_parts(theta);
        let chol = Cholesky::new(k)?;
        Some(nlml_from_chol(&chol, self.y)).filter(|v| v.is_finite())
    }

    fn value_grad(&self, theta: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let n = self.x.len();
        let (k_se, k) = self.kernel_parts(theta);
        let chol = Cholesky::new(k)?;
        let value = nlml_from_chol(&chol, self.y);
        if !value.is_finite() {
            return None;
        }
        let alpha = chol.solve(self.y);
        // A = K^{-1} - alpha alpha^T; dNLML/dtheta_j = 0.5 tr(A dK/dtheta_j).
        let mut a = chol.inverse();
        a.ger(-1.0, &alpha, &alpha, 1.0);

        let sf2 = (2.0 * theta[self.dim]).exp();
        let noise2 = (2.0 * theta[self.dim + 1]).exp();
        let trace_a: f64 = (0..n).map(|i| a[(i, i)]).sum();

        let mut grad = DVector::zeros(self.n_params());
        for d in 0..self.dim {
            let w = theta[d].exp();
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += a[(i, j)] * k_se[(i, j)] * self.dist2[d][(i, j)];
                }
            }
            grad[d] = -0.25 * w * s;
        }
        let mut s_sf = 0.0;
        for i in 0..n {
            for j in 0..n {
                s_sf += a[(i, j)] * k_se[(i, j)];
            }
        }
        // Jitter scales with sigma_f^2 + noise^2, so it contributes to both
        // scale gradients.
        grad[self.dim] = s_sf + BASE_JITTER * sf2 * trace_a;
        grad[self.dim + 1] = noise2 * (1.0 + BASE_JITTER) * trace_a;
        Some((value, grad))
    }
}

fn nlml_from_chol(chol: &Cholesky<f64, nalgebra::Dyn>, y: &DVector<f64>) -> f64 {
    let alpha = chol.solve(y);
    let n = y.len();
    let log_det: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
    0.5 * y.dot(&alpha) + 0.5 * log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Gradient descent with backtracking line search from one start point.
fn descend(
    obj: &Objective,
    start: DVector<f64>,
    opts: &TrainOptions,
) -> Option<(DVector<f64>, f64, usize)> {
    let mut theta = start;
    obj.clamp(&mut theta);
    let (mut f, mut grad) = obj.value_grad(&theta)?;
    let mut step = opts.step0;
    let mut iters = 0;
    for _ in 0..opts.max_iters {
        if grad.amax() < opts.grad_tol * f.abs().max(1.0) {
            break;
        }
        let mut accepted = false;
        while step >= 1e-14 {
            let mut candidate = &theta - &grad * step;
            obj.clamp(&mut candidate);
            if let Some(f_new) = obj.value(&candidate) {
                let descent = grad.dot(&(&theta - &candidate));
                if f_new <= f - 1e-4 * descent.max(0.0) && f_new < f {
                    theta = candidate;
                    f = f_new;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        iters += 1;
        step = (step * 1.5).min(1.0);
        match obj.value_grad(&theta) {
            Some((fv, g)) => {
                f = fv;
                grad = g;
            }
            None => break,
        }
    }
    Some((theta, f, iters))
}

/// Optimize hyperparameters by minimizing the negative log marginal
/// likelihood over log-parameters, with multi-start gradient descent, then
/// factorize the winning kernel.
pub fn train_channel(
    x: Vec<DVector<f64>>,
    y: DVector<f64>,
    init: Hyperparams,
    opts: &TrainOptions,
) -> Result<(GpChannel, TrainReport), GpError> {
    init.validate()?;
    if x.len() < 2 {
        return Err(GpError::TooFewSamples(x.len()));
    }
    if x.len() != y.len() {
        return Err(GpError::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if !(init.noise > 0.0) {
        return Err(GpError::InvalidHyper("training requires noise > 0".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite);
    }

    let obj = Objective::new(&x, &y);
    let theta0 = obj.theta_from(&init);
    let nlml_init = obj.value(&theta0).ok_or(GpError::NonFinite)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(DVector<f64>, f64, usize, usize)> = None;
    for start_idx in 0..=opts.restarts {
        let start = if start_idx == 0 {
            theta0.clone()
        } else {
            DVector::from_fn(obj.n_params(), |i, _| theta0[i] + rng.gen_range(-1.5..1.5))
        };
        if let Some((theta, f, iters)) = descend(&obj, start, opts) {
            let better = best.as_ref().map_or(true, |(_, bf, _, _)| f < *bf);
            if better {
                best = Some((theta, f, iters, start_idx));
            }
        }
    }
    let (theta, nlml_final, iterations, best_start) = best.ok_or(GpError::NonFinite)?;
    let hyper = obj.hyper_from(&theta);
    let channel = GpChannel::fit(x, y, hyper)?;
    Ok((channel, TrainReport { nlml_init, nlml_final, iterations, best_start }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<DVector<f64>> {
        (0..n)
            .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..2.0)))
            .collect()
    }

    /// Draw targets from the GP prior at given hyperparameters.
    fn sample_from_prior(
        rng: &mut ChaCha8Rng,
        x: &[DVector<f64>],
        hyper: &Hyperparams,
    ) -> DVector<f64> {
        let k = super::super::build_kernel_matrix(x, hyper, BASE_JITTER);
        let chol = Cholesky::new(k).unwrap();
        let z = DVector::from_fn(x.len(), |_, _| {
            // Box-Muller
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        chol.l() * z
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let x = random_inputs(&mut rng, 14, 3);
        let y = DVector::from_fn(14, |i, _| (x[i][0] * 1.3 - x[i][2]).sin() + 0.1 * x[i][1]);
        let obj = Objective::new(&x, &y);
        let step = 1e-5;
        for _ in 0..10 {
            let theta = DVector::from_fn(obj.n_params(), |_, _| rng.gen_range(-1.5..1.0));
            let (_, grad) = obj.value_grad(&theta).unwrap();
            for p in 0..obj.n_params() {
                let mut tp = theta.clone();
                tp[p] += step;
                let mut tm = theta.clone();
                tm[p] -= step;
                let fd = (obj.value(&tp).unwrap() - obj.value(&tm).unwrap()) / (2.0 * step);
                let scale = grad[p].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (grad[p] - fd).abs() / scale < 1e-4,
                    "param {p}: analytic {} vs fd {}",
                    grad[p],
                    fd
                );
            }
        }
    }

    #[test]
    fn training_never_worse_than_truth_on_own_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = Hyperparams::new(vec![1.5, 0.8], 1.2, 0.15).unwrap();
        let x = random_inputs(&mut rng, 25, 2);
        let y = sample_from_prior(&mut rng, &x, &truth);
        let opts = TrainOptions { restarts: 2, max_iters: 120, seed: 3, ..Default::default() };
        let (_, report) = train_channel(x.clone(), y.clone(), truth.clone(), &opts).unwrap();
        assert!(report.nlml_final <= report.nlml_init + 1e-6);
    }

    #[test]
    fn zero_targets_trained_model_predicts_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_inputs(&mut rng, 10, 2);
        let init = Hyperparams::new(vec![1.0, 1.0], 1.0, 0.1).unwrap();
        let opts = TrainOptions { restarts: 1, max_iters: 50, ..Default::default() };
        let (channel, _) = train_channel(x, DVector::zeros(10), init, &opts).unwrap();
        let q = DVector::from_vec(vec![0.3, -0.4]);
        assert_eq!(channel.predict_mean(&q).unwrap(), 0.0);
        let (_, var) = channel.predict(&q).unwrap();
        assert!(var <= channel.hyper().variance_cap() + 1e-9);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_inputs(&mut rng, 12, 2);
        let y = DVector::from_fn(12, |i, _| (x[i][0] + x[i][1]).tanh());
        let init = Hyperparams::new(vec![0.5, 2.0], 0.8, 0.2).unwrap();
        let opts = TrainOptions { restarts: 3, max_iters: 60, seed: 42, ..Default::default() };
        let (c1, r1) = train_channel(x.clone(), y.clone(), init.clone(), &opts).unwrap();
        let (c2, r2) = train_channel(x, y, init, &opts).unwrap();
        assert_eq!(c1.hyper(), c2.hyper());
        assert_eq!(r1.nlml_final.to_bits(), r2.nlml_final.to_bits());
    }

    #[test]
    fn rejects_degenerate_training_setups() {
        let x = vec![DVector::from_vec(vec![0.0])];
        let y = DVector::from_vec(vec![1.0]);
        let init = Hyperparams::new(vec![1.0], 1.0, 0.1).unwrap();
        assert!(matches!(
            train_channel(x, y, init.clone(), &TrainOptions::default()),
            Err(GpError::TooFewSamples(1))
        ));

        let x2 = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])];
        let y2 = DVector::from_vec(vec![1.0, f64::NAN]);
        assert!(matches!(
            train_channel(x2.clone(), y2, init.clone(), &TrainOptions::default()),
            Err(GpError::NonFinite)
        ));

        let zero_noise = Hyperparams::new(vec![1.0], 1.0, 0.0).unwrap();
        let y3 = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            train_channel(x2, y3, zero_noise, &TrainOptions::default()),
            Err(GpError::InvalidHyper(_))
        ));
    }

    #[test]
    fn interpolates_smooth_function_after_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_inputs(&mut rng, 30, 1);
        let y = DVector::from_fn(30, |i, _| x[i][0].sin());
        let init = Hyperparams::new(vec![1.0], 1.0, 0.05).unwrap();
        let opts = TrainOptions { restarts: 2, max_iters: 100, seed: 4, ..Default::default() };
        let (channel, report) = train_channel(x, y, init, &opts).unwrap();
        assert!(report.nlml_final < report.nlml_init);
        for k in 0..20 {
            let q = DVector::from_vec(vec![-1.8 + 0.19 * k as f64]);
            let mean = channel.predict_mean(&q).unwrap();
            assert_relative_eq!(mean, q[0].sin(), epsilon = 0.05);
        }
    }
}
