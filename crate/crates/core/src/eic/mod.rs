//! External/internal convertible (EIC) control: feedback linearization of
//! the actuated subsystem, stabilization of the unactuated coordinates on
//! their balance equilibrium manifold, and the singular-value analysis that
//! exposes the uncontrolled-motion subspace of the classic design.

mod bem;
mod svd;

pub use bem::{solve_bem_root, BemConfig, BemDerivativeFilter, BemSolution};
pub use svd::{analyze_svd, SvdAnalysis};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{condition_number, Dims, DynamicsError, DynamicsEval, JointState, RobotModel};
use crate::gp::GpError;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("unactuated inertia block near singular (condition {cond:.3e})")]
    SingularDuu { cond: f64 },
    #[error("coupling block rank deficient (smallest singular value {sigma_min:.3e})")]
    RankDeficient { sigma_min: f64 },
    #[error("no balance equilibrium in bracket (best residual {min_residual:.3e})")]
    BemNotFound { min_residual: f64 },
    #[error("balance coupling block ill-conditioned (condition {cond:.3e})")]
    Controllability { cond: f64 },
    #[error("invalid gains: {0}")]
    BadGains(String),
    #[error("nominal-model conditions not satisfied: {0}")]
    Conditions(String),
    #[error("closed-loop matrix is not Hurwitz")]
    NotHurwitz,
}

/// Model evaluation as seen by a controller: dynamics blocks plus the
/// per-channel prediction variances of a learned model (zero for exact or
/// nominal models).
#[derive(Debug, Clone)]
pub struct ModelEval {
    pub eval: DynamicsEval,
    pub sigma_a: DVector<f64>,
    pub sigma_u: DVector<f64>,
}

/// Dynamics source a controller can query at synthetic states (e.g. with
/// the unactuated velocity zeroed for equilibrium residuals).
pub trait ControlModel {
    fn dims(&self) -> Dims;

    fn eval_query(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        qddot: Option<&DVector<f64>>,
    ) -> Result<ModelEval, ControlError>;

    /// Variance-free variant for inner solver loops; learned models skip
    /// the covariance solve here.
    fn eval_query_mean(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        qddot: Option<&DVector<f64>>,
    ) -> Result<ModelEval, ControlError> {
        self.eval_query(q, qdot, qddot)
    }
}

impl<M: RobotModel> ControlModel for M {
    fn dims(&self) -> Dims {
        RobotModel::dims(self)
    }

    fn eval_query(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        qddot: Option<&DVector<f64>>,
    ) -> Result<ModelEval, ControlError> {
        let state = JointState { q: q.clone(), qdot: qdot.clone(), qddot: qddot.cloned() };
        let eval = self.eval(&state)?;
        let dims = RobotModel::dims(self);
        Ok(ModelEval {
            eval,
            sigma_a: DVector::zeros(dims.n),
            sigma_u: DVector::zeros(dims.m),
        })
    }
}

/// Positive-definite PD gain pair (stored as full matrices; the shipped
/// schedules produce diagonal ones).
#[derive(Debug, Clone, PartialEq)]
pub struct AuxGains {
    pub kp: DMatrix<f64>,
    pub kd: DMatrix<f64>,
}

impl AuxGains {
    pub fn from_diagonals(kp: &DVector<f64>, kd: &DVector<f64>) -> Self {
        Self {
            kp: DMatrix::from_diagonal(kp),
            kd: DMatrix::from_diagonal(kd),
        }
    }

    pub fn validate(&self, k_low: f64, k_high: f64) -> Result<(), ControlError> {
        for (name, m) in [("kp", &self.kp), ("kd", &self.kd)] {
            if (m - m.transpose()).abs().max() > 1e-12 {
                return Err(ControlError::BadGains(format!("{name} not symmetric")));
            }
            let eigs = m.clone().symmetric_eigen().eigenvalues;
            let (lo, hi) = (eigs.min(), eigs.max());
            if lo <= 0.0 {
                return Err(ControlError::BadGains(format!("{name} not positive definite")));
            }
            if lo < k_low || hi > k_high {
                return Err(ControlError::BadGains(format!(
                    "{name} eigenvalues [{lo:.4}, {hi:.4}] outside [{k_low}, {k_high}]"
                )));
            }
        }
        Ok(())
    }
}

/// Affine variance-to-gain schedule with eigenvalue clamping:
/// `k(Σ) = clamp(base + slope ⊙ Σ, k_low, k_high)` entrywise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub base: Vec<f64>,
    pub slope: Vec<f64>,
    pub k_low: f64,
    pub k_high: f64,
}

impl GainSchedule {
    pub fn constant(base: Vec<f64>) -> Self {
        let slope = vec![0.0; base.len()];
        Self { base, slope, k_low: 1e-6, k_high: 1e9 }
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn eval(&self, sigma: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.base.len(), |i, _| {
            let s = if sigma.len() == self.base.len() {
                sigma[i]
            } else {
                // Scalar variance broadcast over a vector gain.
                sigma.max()
            };
            (self.base[i] + self.slope[i] * s).clamp(self.k_low, self.k_high)
        })
    }
}

/// PD pair of schedules for one subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdSchedules {
    pub kp: GainSchedule,
    pub kd: GainSchedule,
}

impl PdSchedules {
    pub fn eval(&self, sigma: &DVector<f64>) -> AuxGains {
        AuxGains::from_diagonals(&self.kp.eval(sigma), &self.kd.eval(sigma))
    }
}

/// One sample of the desired actuated-coordinate trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RefPoint {
    pub q_d: DVector<f64>,
    pub qd_d: DVector<f64>,
    pub qdd_d: DVector<f64>,
}

impl RefPoint {
    pub fn zero(n: usize) -> Self {
        Self { q_d: DVector::zeros(n), qd_d: DVector::zeros(n), qdd_d: DVector::zeros(n) }
    }
}

/// Outer-loop auxiliary input: `v_ext = q̈_a^d - kp e_a - kd ė_a`.
pub fn outer_aux(
    q_a: &DVector<f64>,
    qdot_a: &DVector<f64>,
    target: &RefPoint,
    gains: &AuxGains,
) -> DVector<f64> {
    let e = q_a - &target.q_d;
    let edot = qdot_a - &target.qd_d;
    &target.qdd_d - &gains.kp * e - &gains.kd * edot
}

/// Tracking-phase control `u = D_aa v + D_au q̈_u + H_a`, with the
/// unactuated acceleration eliminated through the internal dynamics:
/// `q̈_u = -D_uu^{-1}(D_ua v + H_u)`.
pub fn control_uext(me: &ModelEval, v: &DVector<f64>) -> Result<DVector<f64>, ControlError> {
    let d_uu = me.eval.d_uu();
    let cond = condition_number(&d_uu);
    if !(cond < 1e12) {
        return Err(ControlError::SingularDuu { cond });
    }
    let rhs = -(me.eval.d_ua() * v + me.eval.h_u());
    let qdd_u = d_uu.lu().solve(&rhs).ok_or(ControlError::SingularDuu { cond })?;
    Ok(me.eval.d_aa() * v + me.eval.d_au() * qdd_u + me.eval.h_a())
}

/// Balance-phase control: identical assembly with the balance-updated
/// auxiliary input substituted.
pub fn control_uint(me: &ModelEval, v_int: &DVector<f64>) -> Result<DVector<f64>, ControlError> {
    control_uext(me, v_int)
}

/// Balance update `v_int = -D_ua^+ (H_u + D_uu v_u_int)` using the
/// minimum-norm pseudo-inverse.
pub fn control_vint(me: &ModelEval, v_u_int: &DVector<f64>) -> Result<DVector<f64>, ControlError> {
    let n = me.eval.dims.n;
    let analysis = analyze_svd(&me.eval.d_ua(), &DVector::zeros(n), &DVector::zeros(n), None);
    control_vint_with(&analysis, me, v_u_int)
}

pub fn control_vint_with(
    analysis: &SvdAnalysis,
    me: &ModelEval,
    v_u_int: &DVector<f64>,
) -> Result<DVector<f64>, ControlError> {
    let pinv = analysis.pseudo_inverse(1e-10)?;
    Ok(-(pinv * (me.eval.h_u() + me.eval.d_uu() * v_u_int)))
}

/// Balance-equilibrium residual `Γ0(q_u; v_ext) = D_ua v_ext + H_u`
/// with the unactuated velocity and acceleration zeroed. Learned models see
/// the commanded actuated acceleration in their input's acceleration slots.
pub fn bem_residual<M: ControlModel + ?Sized>(
    model: &M,
    q_a: &DVector<f64>,
    qdot_a: &DVector<f64>,
    qu: &DVector<f64>,
    v_ext: &DVector<f64>,
) -> Result<DVector<f64>, ControlError> {
    let dims = model.dims();
    let mut q = DVector::zeros(dims.total());
    q.rows_mut(0, dims.n).copy_from(q_a);
    q.rows_mut(dims.n, dims.m).copy_from(qu);
    let mut qdot = DVector::zeros(dims.total());
    qdot.rows_mut(0, dims.n).copy_from(qdot_a);
    let mut qddot = DVector::zeros(dims.total());
    qddot.rows_mut(0, dims.n).copy_from(v_ext);
    let me = model.eval_query_mean(&q, &qdot, Some(&qddot))?;
    Ok(me.eval.d_ua() * v_ext + me.eval.h_u())
}

/// Solve `Γ0 = 0` for the unactuated equilibrium nearest the guess.
pub fn solve_bem<M: ControlModel + ?Sized>(
    model: &M,
    q_a: &DVector<f64>,
    qdot_a: &DVector<f64>,
    v_ext: &DVector<f64>,
    guess: &DVector<f64>,
    cfg: &BemConfig,
) -> Result<BemSolution, ControlError> {
    let residual = |qu: &DVector<f64>| bem_residual(model, q_a, qdot_a, qu, v_ext);
    solve_bem_root(&residual, model.dims().m, guess, cfg)
}

/// Per-tick controller output: torque command plus everything the trace
/// logger wants to see.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub u: DVector<f64>,
    pub diag: TickDiag,
}

#[derive(Debug, Clone)]
pub struct TickDiag {
    pub qu_e: DVector<f64>,
    pub qu_e_dot: DVector<f64>,
    pub e_a: DVector<f64>,
    pub e_a_dot: DVector<f64>,
    pub e_u: DVector<f64>,
    pub e_u_dot: DVector<f64>,
    pub sigma_a: DVector<f64>,
    pub sigma_u: DVector<f64>,
    pub p_a: DVector<f64>,
    pub singular_values: DVector<f64>,
    pub kernel_components: DVector<f64>,
    pub kp1: DVector<f64>,
    pub kd1: DVector<f64>,
    pub kp2: DVector<f64>,
    pub kd2: DVector<f64>,
    pub bem_residual: f64,
    pub bem_iterations: usize,
}

/// Stateful control loop interface driven by the simulator.
pub trait Controller {
    fn dims(&self) -> Dims;
    fn tick(&mut self, t: f64, state: &JointState, target: &RefPoint)
        -> Result<TickOutput, ControlError>;
    fn reset(&mut self);
}

/// Shared loop configuration for the EIC-style controllers.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub outer: PdSchedules,
    pub inner: PdSchedules,
    pub bem: BemConfig,
    pub bem_filter_cutoff_hz: f64,
    pub control_dt: f64,
    pub torque_limit: Option<f64>,
    /// Initial BEM guess (the balance goal).
    pub goal_qu: DVector<f64>,
}

impl LoopConfig {
    pub fn validate(&self, dims: Dims) -> Result<(), ControlError> {
        if self.outer.kp.len() != dims.n
            || self.outer.kd.len() != dims.n
            || self.inner.kp.len() != dims.m
            || self.inner.kd.len() != dims.m
        {
            return Err(ControlError::BadGains(format!(
                "schedule lengths must be n={} (outer) and m={} (inner)",
                dims.n, dims.m
            )));
        }
        if !(self.control_dt > 0.0) {
            return Err(ControlError::BadGains("control period must be positive".into()));
        }
        let zeros_n = DVector::zeros(dims.n);
        let zeros_m = DVector::zeros(dims.m);
        self.outer.eval(&zeros_n).validate(self.outer.kp.k_low, self.outer.kp.k_high)?;
        self.inner.eval(&zeros_m).validate(self.inner.kp.k_low, self.inner.kp.k_high)?;
        Ok(())
    }
}

/// Classic EIC controller against any dynamics source.
pub struct EicController<M: ControlModel> {
    pub model: M,
    pub cfg: LoopConfig,
    filter: BemDerivativeFilter,
    prev_qu_e: Option<DVector<f64>>,
    prev_v: Option<DMatrix<f64>>,
}

impl<M: ControlModel> EicController<M> {
    pub fn new(model: M, cfg: LoopConfig) -> Result<Self, ControlError> {
        let dims = model.dims();
        cfg.validate(dims)?;
        let filter = BemDerivativeFilter::new(dims.m, cfg.control_dt, cfg.bem_filter_cutoff_hz);
        Ok(Self { model, cfg, filter, prev_qu_e: None, prev_v: None })
    }
}

pub(crate) fn clamp_torque(u: &mut DVector<f64>, limit: Option<f64>) {
    if let Some(lim) = limit {
        for v in u.iter_mut() {
            *v = v.clamp(-lim, lim);
        }
    }
}

impl<M: ControlModel> Controller for EicController<M> {
    fn dims(&self) -> Dims {
        self.model.dims()
    }

    fn tick(
        &mut self,
        _t: f64,
        state: &JointState,
        target: &RefPoint,
    ) -> Result<TickOutput, ControlError> {
        let dims = self.model.dims();
        let q_a = state.q.rows(0, dims.n).into_owned();
        let q_u = state.q.rows(dims.n, dims.m).into_owned();
        let qdot_a = state.qdot.rows(0, dims.n).into_owned();
        let qdot_u = state.qdot.rows(dims.n, dims.m).into_owned();

        let me = self.model.eval_query(&state.q, &state.qdot, state.qddot.as_ref())?;

        let outer_gains = self.cfg.outer.eval(&me.sigma_a);
        let v_ext = outer_aux(&q_a, &qdot_a, target, &outer_gains);

        let guess = self.prev_qu_e.clone().unwrap_or_else(|| self.cfg.goal_qu.clone());
        let mut sol = solve_bem(&self.model, &q_a, &qdot_a, &v_ext, &guess, &self.cfg.bem)?;
        let (qu_e_dot, qu_e_ddot) = self.filter.update(&sol.qu_e);
        sol.qu_e_dot = qu_e_dot.clone();
        sol.qu_e_ddot = qu_e_ddot.clone();
        self.prev_qu_e = Some(sol.qu_e.clone());

        let e_u = &q_u - &sol.qu_e;
        let e_u_dot = &qdot_u - &qu_e_dot;
        let inner_gains = self.cfg.inner.eval(&me.sigma_u);
        let v_u_int = &qu_e_ddot - &inner_gains.kp * &e_u - &inner_gains.kd * &e_u_dot;

        let analysis = analyze_svd(&me.eval.d_ua(), &q_a, &v_ext, self.prev_v.as_ref());
        self.prev_v = Some(analysis.v.clone());

        let v_int = control_vint_with(&analysis, &me, &v_u_int)?;
        let mut u = control_uint(&me, &v_int)?;
        clamp_torque(&mut u, self.cfg.torque_limit);

        let diag = TickDiag {
            qu_e: sol.qu_e.clone(),
            qu_e_dot,
            e_a: &q_a - &target.q_d,
            e_a_dot: &qdot_a - &target.qd_d,
            e_u,
            e_u_dot,
            sigma_a: me.sigma_a.clone(),
            sigma_u: me.sigma_u.clone(),
            p_a: analysis.p_a.clone(),
            singular_values: analysis.sigma.clone(),
            kernel_components: analysis.kernel_basis.transpose() * &q_a,
            kp1: outer_gains.kp.diagonal(),
            kd1: outer_gains.kd.diagonal(),
            kp2: inner_gains.kp.diagonal(),
            kd2: inner_gains.kd.diagonal(),
            bem_residual: sol.residual_norm,
            bem_iterations: sol.iterations,
        };
        Ok(TickOutput { u, diag })
    }

    fn reset(&mut self) {
        self.filter.reset();
        self.prev_qu_e = None;
        self.prev_v = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LegNominal, Sn1Nominal};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sn1_eval(q2: f64) -> ModelEval {
        let q = DVector::from_vec(vec![0.0, q2]);
        ControlModel::eval_query(&Sn1Nominal, &q, &DVector::zeros(2), None).unwrap()
    }

    #[test]
    fn outer_aux_examples() {
        let gains = AuxGains::from_diagonals(
            &DVector::from_vec(vec![10.0]),
            &DVector::from_vec(vec![3.0]),
        );
        let target = RefPoint {
            q_d: DVector::from_vec(vec![0.0]),
            qd_d: DVector::from_vec(vec![0.0]),
            qdd_d: DVector::from_vec(vec![2.0]),
        };
        // Zero error passes the feedforward through.
        let v = outer_aux(&DVector::zeros(1), &DVector::zeros(1), &target, &gains);
        assert_relative_eq!(v[0], 2.0, epsilon = 1e-15);

        // kp = 10 on e = 0.1 pulls -1.0.
        let target0 = RefPoint::zero(1);
        let v = outer_aux(&DVector::from_vec(vec![0.1]), &DVector::zeros(1), &target0, &gains);
        assert_relative_eq!(v[0], -1.0, epsilon = 1e-15);

        // Doubling kp doubles the proportional term only.
        let gains2 = AuxGains::from_diagonals(
            &DVector::from_vec(vec![20.0]),
            &DVector::from_vec(vec![3.0]),
        );
        let v2 = outer_aux(&DVector::from_vec(vec![0.1]), &DVector::zeros(1), &target0, &gains2);
        assert_relative_eq!(v2[0], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn control_uext_decoupled_and_equilibrium() {
        // Decoupled system: D_au = 0, H = 0 reduces to u = D_aa v.
        let dims = crate::dynamics::Dims { n: 1, m: 1 };
        let eval = DynamicsEval {
            dims,
            d: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
            c: DMatrix::zeros(2, 2),
            g: DVector::zeros(2),
            h: DVector::zeros(2),
            b: crate::dynamics::input_matrix(dims),
        };
        let me = ModelEval { eval, sigma_a: DVector::zeros(1), sigma_u: DVector::zeros(1) };
        let u = control_uext(&me, &DVector::from_vec(vec![3.0])).unwrap();
        assert_relative_eq!(u[0], 6.0, epsilon = 1e-15);

        // Equilibrium with H = 0, v = 0 needs no torque.
        let u0 = control_uext(&me, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(u0[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn control_uext_matches_substitution_oracle() {
        // Two-line oracle: qdd_u = -H_u / D_uu, u = D_aa v + D_au qdd_u + H_a.
        let me = sn1_eval(0.1);
        let u = control_uext(&me, &DVector::zeros(1)).unwrap();
        let qdd_u = 0.1f64.sin() / 0.02;
        let expected = -0.02 * 0.1f64.cos() * qdd_u;
        assert_relative_eq!(u[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn bem_residual_surrogate_root() {
        // Γ0(qu) = -0.02 cos(qu) v - sin(qu); root at -pi/4 for v = 50.
        let v_ext = DVector::from_vec(vec![50.0]);
        let r = bem_residual(
            &Sn1Nominal,
            &DVector::zeros(1),
            &DVector::zeros(1),
            &DVector::from_vec(vec![-std::f64::consts::FRAC_PI_4]),
            &v_ext,
        )
        .unwrap();
        assert_relative_eq!(r[0], 0.0, epsilon = 1e-12);

        // Continuity over the scan range: no NaN, no jumps.
        let mut prev: Option<f64> = None;
        for k in 0..=720 {
            let qu = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * k as f64 / 720.0;
            let r = bem_residual(
                &Sn1Nominal,
                &DVector::zeros(1),
                &DVector::zeros(1),
                &DVector::from_vec(vec![qu]),
                &v_ext,
            )
            .unwrap();
            assert!(r[0].is_finite());
            if let Some(p) = prev {
                assert!((r[0] - p).abs() < 0.05);
            }
            prev = Some(r[0]);
        }
    }

    #[test]
    fn solve_bem_closed_form_and_symmetry() {
        let cfg = BemConfig::default();
        // Symmetric gravity residual roots at zero.
        let sol = solve_bem(
            &Sn1Nominal,
            &DVector::zeros(1),
            &DVector::zeros(1),
            &DVector::zeros(1),
            &DVector::from_vec(vec![0.2]),
            &cfg,
        )
        .unwrap();
        assert_relative_eq!(sol.qu_e[0], 0.0, epsilon = 1e-9);

        let sol = solve_bem(
            &Sn1Nominal,
            &DVector::zeros(1),
            &DVector::zeros(1),
            &DVector::from_vec(vec![50.0]),
            &DVector::zeros(1),
            &cfg,
        )
        .unwrap();
        assert_relative_eq!(sol.qu_e[0], -std::f64::consts::FRAC_PI_4, epsilon = 1e-6);
        assert!(sol.residual_norm <= cfg.tolerance);
    }

    #[test]
    fn control_vint_square_and_wide_cases() {
        // Square case: plain inverse.
        let me = sn1_eval(0.0);
        let v_u = DVector::from_vec(vec![2.0]);
        let v_int = control_vint(&me, &v_u).unwrap();
        let d_ua = me.eval.d_ua()[(0, 0)];
        let expected = -(me.eval.h_u()[0] + me.eval.d_uu()[(0, 0)] * 2.0) / d_ua;
        assert_relative_eq!(v_int[0], expected, epsilon = 1e-12);

        // Wide case: 1x2 pseudo-inverse closed form.
        let dims = crate::dynamics::Dims { n: 2, m: 1 };
        let mut d = DMatrix::identity(3, 3);
        d[(2, 0)] = 0.025;
        d[(2, 1)] = 0.05;
        d[(0, 2)] = 0.025;
        d[(1, 2)] = 0.05;
        let eval = DynamicsEval {
            dims,
            d,
            c: DMatrix::zeros(3, 3),
            g: DVector::from_vec(vec![0.0, 0.0, 0.1]),
            h: DVector::from_vec(vec![0.0, 0.0, 0.1]),
            b: crate::dynamics::input_matrix(dims),
        };
        let me = ModelEval { eval, sigma_a: DVector::zeros(2), sigma_u: DVector::zeros(1) };
        let v_int = control_vint(&me, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(v_int[0], -0.8, epsilon = 1e-12);
        assert_relative_eq!(v_int[1], -1.6, epsilon = 1e-12);
    }

    #[test]
    fn vint_has_no_kernel_component() {
        // Restated uncontrolled-motion theorem: V^T v_int vanishes on the
        // kernel coordinates for any state and any auxiliary input.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let q = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let qdot = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let me = ControlModel::eval_query(&LegNominal, &q, &qdot, None).unwrap();
            let v_u = DVector::from_fn(1, |_, _| rng.gen_range(-10.0..10.0));
            let analysis = analyze_svd(
                &me.eval.d_ua(),
                &DVector::zeros(2),
                &DVector::zeros(2),
                None,
            );
            let v_int = control_vint_with(&analysis, &me, &v_u).unwrap();
            let transformed = analysis.v.transpose() * &v_int;
            assert!(transformed[1].abs() < 1e-10, "kernel leak {}", transformed[1]);
        }
    }

    #[test]
    fn bem_invariant_under_kernel_perturbation() {
        let cfg = BemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..50 {
            let q_a = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
            let qdot_a = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let v_ext = DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let guess = DVector::zeros(1);
            let base = solve_bem(&LegNominal, &q_a, &qdot_a, &v_ext, &guess, &cfg).unwrap();

            let me = ControlModel::eval_query(
                &LegNominal,
                &{
                    let mut q = DVector::zeros(3);
                    q.rows_mut(0, 2).copy_from(&q_a);
                    q[2] = base.qu_e[0];
                    q
                },
                &DVector::zeros(3),
                None,
            )
            .unwrap();
            let analysis =
                analyze_svd(&me.eval.d_ua(), &q_a, &v_ext, None);
            let w = rng.gen_range(-5.0..5.0);
            let perturbed = &v_ext + analysis.kernel_basis.column(0) * w;
            let shifted = solve_bem(&LegNominal, &q_a, &qdot_a, &perturbed, &guess, &cfg).unwrap();
            assert!(
                (shifted.qu_e[0] - base.qu_e[0]).abs() < 1e-8,
                "BEM moved by {}",
                (shifted.qu_e[0] - base.qu_e[0]).abs()
            );
        }
    }

    #[test]
    fn uint_equals_uext_on_same_input() {
        let me = sn1_eval(0.2);
        let v = DVector::from_vec(vec![1.7]);
        assert_eq!(control_uext(&me, &v).unwrap(), control_uint(&me, &v).unwrap());
    }

    #[test]
    fn gain_schedule_clamps_and_broadcasts() {
        let sched = GainSchedule { base: vec![10.0, 10.0], slope: vec![50.0, 50.0], k_low: 1.0, k_high: 20.0 };
        let g = sched.eval(&DVector::from_vec(vec![0.1, 1.0]));
        assert_relative_eq!(g[0], 15.0, epsilon = 1e-15);
        assert_relative_eq!(g[1], 20.0, epsilon = 1e-15); // clamped

        // Scalar variance broadcast to a vector gain.
        let g2 = sched.eval(&DVector::from_vec(vec![0.05]));
        assert_relative_eq!(g2[0], 12.5, epsilon = 1e-15);
        assert_relative_eq!(g2[1], 12.5, epsilon = 1e-15);
    }

    #[test]
    fn gains_validate_bounds() {
        let g = AuxGains::from_diagonals(
            &DVector::from_vec(vec![5.0]),
            &DVector::from_vec(vec![2.0]),
        );
        assert!(g.validate(1.0, 10.0).is_ok());
        assert!(g.validate(6.0, 10.0).is_err());
        let bad = AuxGains::from_diagonals(
            &DVector::from_vec(vec![-1.0]),
            &DVector::from_vec(vec![2.0]),
        );
        assert!(bad.validate(0.0, 10.0).is_err());
    }
}
