use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::conditions::spectral_norm;
use crate::dynamics::{JointState, Partition, RobotModel};
use crate::eic::{ControlError, PdSchedules};

/// Ingredients of the ultimate-bound calculation: affine perturbation
/// constants (config or fitted), sampled norm bounds of the nominal inertia
/// blocks, extreme singular values of the coupling block, variance caps and
/// prediction-error multipliers of the trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundParams {
    pub c: [f64; 4],
    pub d_a1: f64,
    pub d_a2: f64,
    pub d_u1: f64,
    pub d_u2: f64,
    pub sigma1: f64,
    pub sigma_m: f64,
    pub sigma_max_a: f64,
    pub sigma_max_u: f64,
    pub kappa_a_norm: f64,
    pub kappa_u_norm: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBoundReport {
    /// Eigenvalues of the closed-loop matrix A (re, im).
    pub eigenvalues: Vec<(f64, f64)>,
    pub hurwitz: bool,
    /// Spectral norm of the Lyapunov solution P (for Q = I).
    pub p_norm: f64,
    pub d1: f64,
    pub d2: f64,
    pub l_a: f64,
    pub l_u: f64,
    /// Ultimate ball radius; infinite when the perturbation slope defeats
    /// the Lyapunov decay.
    pub radius: f64,
    pub eta: f64,
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let scale = a[(i, j)];
            for p in 0..br {
                for q in 0..bc {
                    out[(i * br + p, j * bc + q)] = scale * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Solve `A^T P + P A = -Q` by vectorization (sizes here are tiny).
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let at = a.transpose();
    let eye = DMatrix::identity(n, n);
    let m = kron(&eye, &at) + kron(&at, &eye);
    let rhs = DVector::from_column_slice((-q).as_slice());
    let sol = m.lu().solve(&rhs)?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    // Symmetrize away vectorization round-off.
    Some((&p + p.transpose()) * 0.5)
}

/// Closed-loop matrix `A = [[0, I], [-kp, -kd]]` for stacked gains.
pub fn closed_loop_matrix(kp: &DMatrix<f64>, kd: &DMatrix<f64>) -> DMatrix<f64> {
    let n = kp.nrows();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = 1.0;
    }
    a.view_mut((n, 0), (n, n)).copy_from(&(-kp));
    a.view_mut((n, n), (n, n)).copy_from(&(-kd));
    a
}

/// Stack subsystem gain diagonals into the full tracking-error gain.
pub fn stack_gains(outer: &DVector<f64>, inner: &DVector<f64>) -> DMatrix<f64> {
    let mut diag = DVector::zeros(outer.len() + inner.len());
    diag.rows_mut(0, outer.len()).copy_from(outer);
    diag.rows_mut(outer.len(), inner.len()).copy_from(inner);
    DMatrix::from_diagonal(&diag)
}

/// Evaluate the probabilistic ultimate bound of the closed-loop error.
///
/// With `Q = I`:
/// `radius = |P| (d1 + l_a |κ_a| + l_u |κ_u|) / (1/2 - |P| d2)`,
/// reported as infinite when the denominator is not positive.
pub fn error_bound(
    params: &ErrorBoundParams,
    kp: &DMatrix<f64>,
    kd: &DMatrix<f64>,
) -> Result<ErrorBoundReport, ControlError> {
    let a = closed_loop_matrix(kp, kd);
    let eigs = a.complex_eigenvalues();
    let eigenvalues: Vec<(f64, f64)> = eigs.iter().map(|z| (z.re, z.im)).collect();
    let hurwitz = eigenvalues.iter().all(|(re, _)| *re < 0.0);
    if !hurwitz {
        return Err(ControlError::NotHurwitz);
    }
    let n = a.nrows();
    let p = solve_lyapunov(&a, &DMatrix::identity(n, n)).ok_or(ControlError::NotHurwitz)?;
    let p_norm = p.symmetric_eigen().eigenvalues.abs().max();

    let [c1, c2, c3, c4] = params.c;
    let d1 = c2 + (1.0 + params.d_u2 / params.sigma1) * c4;
    let d2 = c1 + (params.d_u2 / params.sigma1) * c3;
    let l_a = params.sigma_max_a * (params.d_u1 + params.sigma_m) / (params.d_u1 * params.d_a1);
    let l_u = params.sigma_max_u / params.d_u1;

    let numerator = p_norm * (d1 + l_a * params.kappa_a_norm + l_u * params.kappa_u_norm);
    let denom = 0.5 - p_norm * d2;
    let radius = if denom > 0.0 { numerator / denom } else { f64::INFINITY };
    Ok(ErrorBoundReport {
        eigenvalues,
        hurwitz,
        p_norm,
        d1,
        d2,
        l_a,
        l_u,
        radius,
        eta: params.eta,
    })
}

/// Sample the nominal-model block norms and coupling singular values over
/// the operating region.
pub fn sample_block_bounds<N: RobotModel>(
    nominal: &N,
    _partition: &Partition,
    states: &[JointState],
) -> Result<(f64, f64, f64, f64, f64, f64), ControlError> {
    let mut d_a1 = f64::INFINITY;
    let mut d_a2 = 0.0f64;
    let mut d_u1 = f64::INFINITY;
    let mut d_u2 = 0.0f64;
    let mut sigma1 = f64::INFINITY;
    let mut sigma_m = 0.0f64;
    for state in states {
        let eval = nominal.eval(state)?;
        let na = spectral_norm(&eval.d_aa());
        let nu = spectral_norm(&eval.d_uu());
        d_a1 = d_a1.min(na);
        d_a2 = d_a2.max(na);
        d_u1 = d_u1.min(nu);
        d_u2 = d_u2.max(nu);
        let sv = eval.d_ua().svd(false, false).singular_values;
        sigma1 = sigma1.min(sv.min());
        sigma_m = sigma_m.max(sv.max());
    }
    Ok((d_a1, d_a2, d_u1, d_u2, sigma1, sigma_m))
}

/// Verify the closed-loop matrix stays Hurwitz for every gain the schedules
/// can produce over the reachable variance range `[0, sigma_cap]`.
pub fn verify_hurwitz_over_range(
    outer: &PdSchedules,
    inner: &PdSchedules,
    sigma_cap_a: f64,
    sigma_cap_u: f64,
    grid: usize,
) -> Result<bool, ControlError> {
    let n = outer.kp.len();
    let m = inner.kp.len();
    for i in 0..grid {
        for j in 0..grid {
            let sa = DVector::from_element(n, sigma_cap_a * i as f64 / (grid - 1) as f64);
            let su = DVector::from_element(m, sigma_cap_u * j as f64 / (grid - 1) as f64);
            let kp = stack_gains(&outer.kp.eval(&sa), &inner.kp.eval(&su));
            let kd = stack_gains(&outer.kd.eval(&sa), &inner.kd.eval(&su));
            let a = closed_loop_matrix(&kp, &kd);
            if a.complex_eigenvalues().iter().any(|z| z.re >= 0.0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Fit the affine perturbation constants from a logged error trajectory.
///
/// The residual `O_tot = ë_q + kp e_q + kd ė_q` is reconstructed by central
/// differences; its norm is regressed on `|e|` with the slope capped (so the
/// ultimate-bound denominator stays positive) and the intercept lifted to an
/// envelope: every logged point satisfies
/// `|O| <= c2 + gp_terms + c1 |e|`. Returns `[c1, c2, 0, 0]`.
pub fn fit_perturbation_constants(
    e_q: &[DVector<f64>],
    edot_q: &[DVector<f64>],
    dt: f64,
    kp: &DMatrix<f64>,
    kd: &DMatrix<f64>,
    slope_cap: f64,
    gp_terms: f64,
) -> [f64; 4] {
    if e_q.len() < 3 {
        return [0.0, 0.0, 0.0, 0.0];
    }
    let mut e_norms = Vec::with_capacity(e_q.len() - 2);
    let mut o_norms = Vec::with_capacity(e_q.len() - 2);
    for k in 1..e_q.len() - 1 {
        let eddot = (&edot_q[k + 1] - &edot_q[k - 1]) / (2.0 * dt);
        let o = eddot + kp * &e_q[k] + kd * &edot_q[k];
        let e_full =
            (e_q[k].norm_squared() + edot_q[k].norm_squared()).sqrt();
        e_norms.push(e_full);
        o_norms.push(o.norm());
    }
    let n = e_norms.len() as f64;
    let mean_e: f64 = e_norms.iter().sum::<f64>() / n;
    let mean_o: f64 = o_norms.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (e, o) in e_norms.iter().zip(&o_norms) {
        cov += (e - mean_e) * (o - mean_o);
        var += (e - mean_e) * (e - mean_e);
    }
    let slope = if var > 1e-12 { (cov / var).clamp(0.0, slope_cap) } else { 0.0 };
    let mut intercept = 0.0f64;
    for (e, o) in e_norms.iter().zip(&o_norms) {
        intercept = intercept.max(o - slope * e);
    }
    let c2 = (intercept - gp_terms).max(0.0);
    [slope, c2, 0.0, 0.0]
}
