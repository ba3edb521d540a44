use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ControlError;

/// Root-finder settings for the balance equilibrium manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BemConfig {
    /// Search bracket per unactuated coordinate (rad).
    pub bracket: (f64, f64),
    /// Grid resolution per dimension for the fallback scan.
    pub grid_points: usize,
    /// Residual norm at which polishing stops (an exact root).
    pub tolerance: f64,
    /// Largest residual minimum still accepted as an equilibrium estimate.
    /// Learned residuals carry a model-error floor, so the equilibrium is
    /// the minimizer of the residual norm rather than an exact zero; above
    /// this the system is considered outside the controllable region.
    pub accept_tolerance: f64,
    pub max_newton_iters: usize,
}

impl Default for BemConfig {
    fn default() -> Self {
        Self {
            bracket: (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
            grid_points: 721,
            tolerance: 1e-9,
            accept_tolerance: 1e-2,
            max_newton_iters: 50,
        }
    }
}

/// Instantaneous equilibrium of the unactuated coordinates with solver
/// diagnostics. Time derivatives are filled by the controller-level
/// estimator; the raw solver leaves them at zero.
#[derive(Debug, Clone)]
pub struct BemSolution {
    pub qu_e: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub qu_e_dot: DVector<f64>,
    pub qu_e_ddot: DVector<f64>,
}

fn numeric_jacobian<F>(residual: &F, qu: &DVector<f64>) -> Result<DMatrix<f64>, ControlError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, ControlError>,
{
    let m = qu.len();
    let mut jac = DMatrix::zeros(m, m);
    let h = 1e-6;
    for j in 0..m {
        let mut plus = qu.clone();
        plus[j] += h;
        let mut minus = qu.clone();
        minus[j] -= h;
        let fp = residual(&plus)?;
        let fm = residual(&minus)?;
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

fn newton_polish<F>(
    residual: &F,
    start: &DVector<f64>,
    cfg: &BemConfig,
) -> Result<(DVector<f64>, f64, usize), ControlError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, ControlError>,
{
    let mut qu = start.clone();
    let mut r = residual(&qu)?;
    let mut norm = r.norm();
    let mut iters = 0;
    while norm > cfg.tolerance && iters < cfg.max_newton_iters {
        let jac = numeric_jacobian(residual, &qu)?;
        let Some(step) = jac.lu().solve(&(-&r)) else { break };
        // Damped update: halve until the residual actually shrinks.
        let mut lambda = 1.0;
        let mut advanced = false;
        let margin = 0.05 * (cfg.bracket.1 - cfg.bracket.0);
        while lambda > 1e-6 {
            let candidate = &qu + &step * lambda;
            if candidate
                .iter()
                .all(|v| *v >= cfg.bracket.0 - margin && *v <= cfg.bracket.1 + margin)
            {
                if let Ok(rc) = residual(&candidate) {
                    let cn = rc.norm();
                    if cn < norm {
                        qu = candidate;
                        r = rc;
                        norm = cn;
                        advanced = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        iters += 1;
        if !advanced {
            break;
        }
    }
    Ok((qu, norm, iters))
}

fn grid_candidates(cfg: &BemConfig, m: usize) -> Vec<DVector<f64>> {
    let (lo, hi) = cfg.bracket;
    let pts = cfg.grid_points.max(2);
    let axis: Vec<f64> =
        (0..pts).map(|i| lo + (hi - lo) * i as f64 / (pts - 1) as f64).collect();
    match m {
        1 => axis.iter().map(|&v| DVector::from_vec(vec![v])).collect(),
        2 => {
            let mut out = Vec::with_capacity(pts * pts);
            for &a in &axis {
                for &b in &axis {
                    out.push(DVector::from_vec(vec![a, b]));
                }
            }
            out
        }
        _ => Vec::new(),
    }
}

/// Find the root of a balance-equilibrium residual nearest the guess.
///
/// Damped Newton from the warm start; if that stalls, a dense scan over the
/// bracket picks the candidate minimizing the residual norm (ties broken by
/// distance to the guess) and Newton polishes it.
pub fn solve_bem_root<F>(
    residual: &F,
    m: usize,
    guess: &DVector<f64>,
    cfg: &BemConfig,
) -> Result<BemSolution, ControlError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, ControlError>,
{
    let solution = |qu: DVector<f64>, norm: f64, iterations: usize| BemSolution {
        qu_e: qu,
        residual_norm: norm,
        iterations,
        qu_e_dot: DVector::zeros(m),
        qu_e_ddot: DVector::zeros(m),
    };
    let (qu, norm, iters) = newton_polish(residual, guess, cfg)?;
    if norm <= cfg.tolerance {
        return Ok(solution(qu, norm, iters));
    }

    let candidates = grid_candidates(cfg, m);
    if candidates.is_empty() {
        if norm <= cfg.accept_tolerance {
            return Ok(solution(qu, norm, iters));
        }
        return Err(ControlError::BemNotFound { min_residual: norm });
    }
    let mut best_norm = f64::INFINITY;
    let mut values = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let v = residual(c).map(|r| r.norm()).unwrap_or(f64::INFINITY);
        best_norm = best_norm.min(v);
        values.push(v);
    }
    // Near-minimal scan points compete by distance to the warm start, so a
    // multi-root residual keeps following the branch it was on.
    let cutoff = (best_norm * 10.0).max(cfg.tolerance);
    let mut chosen: Option<(f64, usize)> = None;
    for (i, v) in values.iter().enumerate() {
        if *v <= cutoff {
            let dist = (&candidates[i] - guess).norm();
            if chosen.map_or(true, |(d, _)| dist < d) {
                chosen = Some((dist, i));
            }
        }
    }
    let (_, idx) = chosen.ok_or(ControlError::BemNotFound { min_residual: best_norm })?;
    let (qu_scan, norm_scan, polish_iters) = newton_polish(residual, &candidates[idx], cfg)?;
    // Keep whichever branch ended lower; accept a residual floor from
    // learned-model bias, reject anything worse.
    let (qu, norm) = if norm_scan <= norm { (qu_scan, norm_scan) } else { (qu, norm) };
    if norm <= cfg.accept_tolerance {
        Ok(solution(qu, norm, iters + polish_iters))
    } else {
        Err(ControlError::BemNotFound { min_residual: norm })
    }
}

/// Finite-difference estimator for BEM time derivatives with first-order
/// low-pass smoothing.
#[derive(Debug, Clone)]
pub struct BemDerivativeFilter {
    dt: f64,
    alpha: f64,
    prev_qu_e: Option<DVector<f64>>,
    vel: DVector<f64>,
    acc: DVector<f64>,
}

impl BemDerivativeFilter {
    pub fn new(m: usize, dt: f64, cutoff_hz: f64) -> Self {
        let tau = 1.0 / (2.0 * std::f64::consts::PI * cutoff_hz);
        Self {
            dt,
            alpha: dt / (dt + tau),
            prev_qu_e: None,
            vel: DVector::zeros(m),
            acc: DVector::zeros(m),
        }
    }

    pub fn reset(&mut self) {
        self.prev_qu_e = None;
        self.vel.fill(0.0);
        self.acc.fill(0.0);
    }

    /// Push the latest BEM solution; returns (velocity, acceleration)
    /// estimates.
    pub fn update(&mut self, qu_e: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let raw_vel = match &self.prev_qu_e {
            Some(prev) => (qu_e - prev) / self.dt,
            None => DVector::zeros(qu_e.len()),
        };
        let prev_vel = self.vel.clone();
        self.vel += (&raw_vel - &self.vel) * self.alpha;
        let raw_acc = (&self.vel - &prev_vel) / self.dt;
        self.acc += (&raw_acc - &self.acc) * self.alpha;
        self.prev_qu_e = Some(qu_e.clone());
        (self.vel.clone(), self.acc.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_residual(f: impl Fn(f64) -> f64) -> impl Fn(&DVector<f64>) -> Result<DVector<f64>, ControlError> {
        move |qu: &DVector<f64>| Ok(DVector::from_vec(vec![f(qu[0])]))
    }

    #[test]
    fn finds_symmetric_gravity_root() {
        let residual = scalar_residual(|q| -q.sin());
        let sol =
            solve_bem_root(&residual, 1, &DVector::from_vec(vec![0.3]), &BemConfig::default())
                .unwrap();
        assert_relative_eq!(sol.qu_e[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn closed_form_root_of_surrogate_residual() {
        // -0.02 cos(q) * 50 - sin(q) = 0  =>  tan(q) = -1.
        let residual = scalar_residual(|q| -0.02 * q.cos() * 50.0 - q.sin());
        let sol =
            solve_bem_root(&residual, 1, &DVector::from_vec(vec![0.0]), &BemConfig::default())
                .unwrap();
        assert_relative_eq!(sol.qu_e[0], -std::f64::consts::FRAC_PI_4, epsilon = 1e-6);
    }

    #[test]
    fn grid_fallback_picks_root_nearest_guess() {
        // Roots at +-
        // pi/4; a guess far up the hill forces the scan to choose.
        let residual = scalar_residual(|q| q.sin().powi(2) - 0.5);
        let sol = solve_bem_root(
            &residual,
            1,
            &DVector::from_vec(vec![-1.2]),
            &BemConfig { max_newton_iters: 0, ..Default::default() },
        )
        .unwrap();
        assert!(sol.qu_e[0] < 0.0, "expected negative branch, got {}", sol.qu_e[0]);
        assert_relative_eq!(sol.qu_e[0].abs(), std::f64::consts::FRAC_PI_4, epsilon = 1e-6);
    }

    #[test]
    fn reports_missing_root() {
        let residual = scalar_residual(|q| 1.0 + 0.1 * q.cos());
        let err =
            solve_bem_root(&residual, 1, &DVector::zeros(1), &BemConfig::default()).unwrap_err();
        match err {
            ControlError::BemNotFound { min_residual } => assert!(min_residual > 0.5),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn derivative_filter_settles_to_zero_for_constant_input() {
        let mut filt = BemDerivativeFilter::new(1, 0.005, 10.0);
        let qu = DVector::from_vec(vec![0.4]);
        let mut vel = DVector::zeros(1);
        for _ in 0..400 {
            let (v, _) = filt.update(&qu);
            vel = v;
        }
        assert!(vel.norm() < 1e-12);
    }

    #[test]
    fn derivative_filter_tracks_ramp() {
        let dt = 0.005;
        let mut filt = BemDerivativeFilter::new(1, dt, 10.0);
        let mut vel = DVector::zeros(1);
        for k in 0..1000 {
            let qu = DVector::from_vec(vec![0.2 * k as f64 * dt]);
            let (v, _) = filt.update(&qu);
            vel = v;
        }
        assert_relative_eq!(vel[0], 0.2, epsilon = 1e-6);
    }
}
