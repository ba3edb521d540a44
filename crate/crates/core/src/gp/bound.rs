use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{kernel_eval, GpError, GpVectorModel};

/// Constants of the high-probability prediction-error bound
/// `Pr{ |Δ_i| <= kappa_i sqrt(Σ_i(x)) } >= eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// Confidence level of the whole vector model.
    pub eta: f64,
    /// Per-channel RKHS-norm estimate of the regression target.
    pub rkhs_norm: Vec<f64>,
    /// Per-channel information-capacity constant
    /// `varsigma_i = max_{x,x' in X} 0.5 ln |1 + noise^{-2} k_i(x, x')|`.
    pub varsigma: Vec<f64>,
    /// Per-channel multiplier on the predictive standard deviation.
    pub kappa: Vec<f64>,
}

impl BoundConstants {
    pub fn kappa_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.kappa.clone())
    }

    pub fn kappa_norm(&self) -> f64 {
        self.kappa_vector().norm()
    }
}

/// Assemble the bound constants for a trained vector model.
///
/// The RKHS norm of the target is not observable; the posterior-mean norm
/// `sqrt(Y^T K^{-1} Y)` is used unless an override is supplied.
pub fn compute_bound(
    model: &GpVectorModel,
    eta: f64,
    rkhs_override: Option<&[f64]>,
) -> Result<BoundConstants, GpError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(GpError::BadConfidence(eta));
    }
    if let Some(o) = rkhs_override {
        if o.len() != model.n_channels() {
            return Err(GpError::DimensionMismatch {
                expected: model.n_channels(),
                got: o.len(),
            });
        }
    }
    let n_channels = model.n_channels() as f64;
    let mut rkhs_norm = Vec::with_capacity(model.n_channels());
    let mut varsigma = Vec::with_capacity(model.n_channels());
    let mut kappa = Vec::with_capacity(model.n_channels());

    for (ci, channel) in model.channels.iter().enumerate() {
        let b = match rkhs_override {
            Some(o) => o[ci],
            None => channel.targets().dot(channel.alpha()).max(0.0).sqrt(),
        };
        let noise2 = channel.hyper().noise * channel.hyper().noise;
        // Exhaustive max over training pairs; O(N^2) is fine at this scale.
        let mut vs: f64 = 0.0;
        let x = channel.training_inputs();
        for i in 0..x.len() {
            for j in i..x.len() {
                let k = kernel_eval(&x[i], &x[j], channel.hyper(), false);
                let v = 0.5 * (1.0 + k / noise2).abs().ln();
                vs = vs.max(v);
            }
        }
        let n_data = channel.len() as f64;
        let log_term = ((n_data + 1.0) / (1.0 - eta.powf(1.0 / n_channels))).ln();
        let k_val = (2.0 * b * b + 300.0 * vs * log_term.powi(3)).sqrt();
        rkhs_norm.push(b);
        varsigma.push(vs);
        kappa.push(k_val);
    }
    Ok(BoundConstants { eta, rkhs_norm, varsigma, kappa })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{GpChannel, Hyperparams, InputSpec};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn single_point_model(sigma_f: f64, noise: f64, y: f64) -> GpVectorModel {
        let hyper = Hyperparams::new(vec![1.0], sigma_f, noise).unwrap();
        let ch =
            GpChannel::fit(vec![DVector::from_vec(vec![0.0])], DVector::from_vec(vec![y]), hyper)
                .unwrap();
        GpVectorModel::new(vec![ch], InputSpec::PosVel)
    }

    #[test]
    fn plug_in_formula_single_point() {
        // N = 1, one channel, eta = 0.9, sigma_f = 1, noise = 1:
        // varsigma = 0.5 ln 2, log term = ln(2 / 0.1) = ln 20.
        let model = single_point_model(1.0, 1.0, 1.5);
        let bc = compute_bound(&model, 0.9, None).unwrap();
        assert_relative_eq!(bc.varsigma[0], 0.5 * 2f64.ln(), epsilon = 1e-12);
        let b = bc.rkhs_norm[0];
        let expected = (2.0 * b * b + 300.0 * 0.5 * 2f64.ln() * 20f64.ln().powi(3)).sqrt();
        assert_relative_eq!(bc.kappa[0], expected, epsilon = 1e-12);
        assert!(bc.kappa[0] >= 2f64.sqrt() * b);
    }

    #[test]
    fn kappa_increases_with_confidence() {
        let model = single_point_model(1.0, 0.5, 1.0);
        let mut prev = 0.0;
        for eta in [0.5, 0.7, 0.9, 0.99, 0.999] {
            let bc = compute_bound(&model, eta, None).unwrap();
            assert!(bc.kappa[0] > prev, "kappa not increasing at eta={eta}");
            prev = bc.kappa[0];
        }
    }

    #[test]
    fn rejects_bad_confidence() {
        let model = single_point_model(1.0, 0.5, 1.0);
        assert!(matches!(compute_bound(&model, 0.0, None), Err(GpError::BadConfidence(_))));
        assert!(matches!(compute_bound(&model, 1.0, None), Err(GpError::BadConfidence(_))));
    }

    #[test]
    fn rkhs_override_is_used() {
        let model = single_point_model(1.0, 1.0, 1.5);
        let bc = compute_bound(&model, 0.9, Some(&[2.0])).unwrap();
        assert_relative_eq!(bc.rkhs_norm[0], 2.0, epsilon = 1e-15);
        let expected = (2.0 * 4.0 + 300.0 * 0.5 * 2f64.ln() * 20f64.ln().powi(3)).sqrt();
        assert_relative_eq!(bc.kappa[0], expected, epsilon = 1e-12);
    }
}
