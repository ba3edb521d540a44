//! Partial-EIC control with a GP-enhanced dynamics model: residual
//! learning against a nominal model, nominal-model admissibility checks,
//! variance-adaptive gains, BEM estimation on the learned dynamics, the
//! partitioned control law, and the closed-loop error-bound calculator.

mod bound;
mod conditions;

pub use bound::{
    closed_loop_matrix, error_bound, fit_perturbation_constants, sample_block_bounds,
    solve_lyapunov, stack_gains, verify_hurwitz_over_range, ErrorBoundParams, ErrorBoundReport,
};
pub use conditions::{
    check_conditions, sample_states, C1Report, C2Report, C3Report, C4Report, ConditionCheckConfig,
    ConditionReport,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Dims, DynamicsEval, JointState, Partition, RobotModel};
use crate::eic::{
    analyze_svd, clamp_torque, outer_aux, solve_bem, BemConfig, BemDerivativeFilter, BemSolution,
    ControlError, Controller, ControlModel, LoopConfig, ModelEval, PdSchedules, RefPoint, TickDiag,
    TickOutput,
};
use crate::gp::{GpVectorModel, InputSpec, Prediction};

/// How the controller fills the acceleration slots of the GP input at
/// prediction time, where the true acceleration is not yet measurable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccelPolicy {
    /// Use the previous-tick finite-difference acceleration (one-tick lag).
    PreviousStep,
    /// Train and predict without acceleration inputs.
    Omit,
}

impl AccelPolicy {
    pub fn input_spec(&self) -> InputSpec {
        match self {
            AccelPolicy::PreviousStep => InputSpec::PosVelAcc,
            AccelPolicy::Omit => InputSpec::PosVel,
        }
    }
}

/// Nominal model plus per-subsystem residual GPs.
///
/// Evaluation yields the nominal inertia blocks with
/// `H^gp = H_nominal + mu(x)` and the per-channel prediction variances.
#[derive(Debug, Clone)]
pub struct GpDynamics<N: RobotModel> {
    pub nominal: N,
    pub gp_a: GpVectorModel,
    pub gp_u: GpVectorModel,
    pub accel_policy: AccelPolicy,
}

impl<N: RobotModel> GpDynamics<N> {
    pub fn new(
        nominal: N,
        gp_a: GpVectorModel,
        gp_u: GpVectorModel,
        accel_policy: AccelPolicy,
    ) -> Result<Self, ControlError> {
        let dims = nominal.dims();
        if gp_a.n_channels() != dims.n || gp_u.n_channels() != dims.m {
            return Err(ControlError::Conditions(format!(
                "residual models must have n={} and m={} channels, got {} and {}",
                dims.n,
                dims.m,
                gp_a.n_channels(),
                gp_u.n_channels()
            )));
        }
        let expected = accel_policy.input_spec();
        if gp_a.input_spec != expected || gp_u.input_spec != expected {
            return Err(ControlError::Conditions(format!(
                "GP input spec {:?}/{:?} inconsistent with accel policy {:?}",
                gp_a.input_spec, gp_u.input_spec, accel_policy
            )));
        }
        Ok(Self { nominal, gp_a, gp_u, accel_policy })
    }

    fn gp_input(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        qddot: Option<&DVector<f64>>,
    ) -> DVector<f64> {
        let accel = match self.accel_policy {
            AccelPolicy::PreviousStep => qddot,
            AccelPolicy::Omit => None,
        };
        self.gp_a.input_spec.assemble(q, qdot, accel)
    }

    fn enhanced(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        qddot: Option<&DVector<f64>>,
        with_variance: bool,
    ) -> Result<ModelEval, ControlError> {
        let dims = self.nominal.dims();
        let state = JointState { q: q.clone(), qdot: qdot.clone(), qddot: None };
        let mut eval: DynamicsEval = self.nominal.eval(&state)?;
        let x = self.gp_input(q, qdot, qddot);
        let (pred_a, pred_u) = if with_variance {
            (self.gp_a.predict(&x)?, self.gp_u.predict(&x)?)
        } else {
            (
                Prediction { mu: self.gp_a.predict_mean(&x)?, sigma: DVector::zeros(dims.n) },
                Prediction { mu: self.gp_u.predict_mean(&x)?, sigma: DVector::zeros(dims.m) },
            )
        };
        for i in 0..dims.n {
            eval.h[i] += pred_a.mu[i];
            eval.g[i] += pred_a.mu[i];
        }
        for j in 0..dims.m {
            eval.h[dims.n + j] += pred_u.mu[j];
            eval.g[dims.n + j] += pred_u.mu[j];
        }
        Ok(ModelEval { eval, sigma_a: pred_a.sigma, sigma_u: pred_u.sigma })
    }
}

impl<N: RobotModel> ControlModel for GpDynamics<N> {
    fn dims(&self) -> Dims {
        self.nominal.dims()
    }

    fn eval_query(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        qddot: Option<&DVector<f64>>,
    ) -> Result<ModelEval, ControlError> {
        self.enhanced(q, qdot, qddot, true)
    }

    fn eval_query_mean(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        qddot: Option<&DVector<f64>>,
    ) -> Result<ModelEval, ControlError> {
        self.enhanced(q, qdot, qddot, false)
    }
}

/// One supervised residual sample: GP input plus the dynamics discrepancy
/// targets for the actuated and unactuated rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    pub x: DVector<f64>,
    pub target_a: DVector<f64>,
    pub target_u: DVector<f64>,
}

/// Compute residual targets `H^e = [u; 0] - D̄ q̈ - H̄` for logged samples
/// of (state with acceleration, applied input).
pub fn residual_targets<N: RobotModel>(
    nominal: &N,
    samples: &[(JointState, DVector<f64>)],
    input_spec: InputSpec,
) -> Result<Vec<ResidualSample>, ControlError> {
    let dims = nominal.dims();
    let mut out = Vec::with_capacity(samples.len());
    for (state, u) in samples {
        let qddot = state.qddot.as_ref().ok_or_else(|| {
            ControlError::Conditions("residual targets need measured accelerations".into())
        })?;
        let eval = nominal.eval(state)?;
        let mut target = &eval.b * u - &eval.d * qddot - &eval.h;
        let target_u = target.rows(dims.n, dims.m).into_owned();
        target.resize_vertically_mut(dims.n, 0.0);
        let x = input_spec.assemble(&state.q, &state.qdot, Some(qddot));
        out.push(ResidualSample { x, target_a: target, target_u });
    }
    Ok(out)
}

/// Variance-adaptive gain evaluation (affine in the predicted variances,
/// eigenvalue-clamped).
pub fn adaptive_gains(schedule: &PdSchedules, sigma: &DVector<f64>) -> crate::eic::AuxGains {
    schedule.eval(sigma)
}

/// Estimate the BEM on the GP-enhanced dynamics. Identical residual
/// geometry to the nominal solver; the learned mean shifts the root.
pub fn estimate_bem<N: RobotModel>(
    gpdyn: &GpDynamics<N>,
    q_a: &DVector<f64>,
    qdot_a: &DVector<f64>,
    v_ext: &DVector<f64>,
    guess: &DVector<f64>,
    cfg: &BemConfig,
) -> Result<BemSolution, ControlError> {
    solve_bem(gpdyn, q_a, qdot_a, v_ext, guess, cfg)
}

/// Partitioned blocks of the actuated/unactuated structure for one model
/// evaluation.
struct PartitionedBlocks {
    daa_a: DMatrix<f64>,
    daa_au: DMatrix<f64>,
    daa_ua: DMatrix<f64>,
    daa_u: DMatrix<f64>,
    dau_a: DMatrix<f64>,
    dau_u: DMatrix<f64>,
    dua_a: DMatrix<f64>,
    dua_u: DMatrix<f64>,
    d_uu: DMatrix<f64>,
    h_aa: DVector<f64>,
    h_au: DVector<f64>,
    h_u: DVector<f64>,
}

impl PartitionedBlocks {
    fn new(me: &ModelEval, partition: &Partition) -> Self {
        let d_aa = me.eval.d_aa();
        let d_au = me.eval.d_au();
        let d_ua = me.eval.d_ua();
        let h_a = me.eval.h_a();
        let aa = &partition.aa_indices;
        let au = &partition.au_indices;
        Self {
            daa_a: d_aa.select_rows(aa.iter()).select_columns(aa.iter()),
            daa_au: d_aa.select_rows(aa.iter()).select_columns(au.iter()),
            daa_ua: d_aa.select_rows(au.iter()).select_columns(aa.iter()),
            daa_u: d_aa.select_rows(au.iter()).select_columns(au.iter()),
            dau_a: d_au.select_rows(aa.iter()),
            dau_u: d_au.select_rows(au.iter()),
            dua_a: d_ua.select_columns(aa.iter()),
            dua_u: d_ua.select_columns(au.iter()),
            d_uu: me.eval.d_uu(),
            h_aa: h_a.select_rows(aa.iter()),
            h_au: h_a.select_rows(au.iter()),
            h_u: me.eval.h_u(),
        }
    }
}

/// Predicted unactuated acceleration through the balance group of the
/// partitioned model, given commanded actuated accelerations. The group is
/// structurally independent of the tracking-group input.
pub fn predicted_unactuated_accel(
    me: &ModelEval,
    partition: &Partition,
    qdd_aa: &DVector<f64>,
    qdd_au: &DVector<f64>,
) -> Result<DVector<f64>, ControlError> {
    let blocks = PartitionedBlocks::new(me, partition);
    let rhs = -(&blocks.dua_a * qdd_aa + &blocks.dua_u * qdd_au + &blocks.h_u);
    blocks
        .d_uu
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(ControlError::SingularDuu { cond: f64::INFINITY })
}

/// Partial-EIC controller: the balance duty is assigned to exactly `m`
/// actuated coordinates so no control direction falls into the coupling
/// kernel.
pub struct PeicController<N: RobotModel> {
    pub model: GpDynamics<N>,
    pub partition: Partition,
    pub cfg: LoopConfig,
    filter: BemDerivativeFilter,
    prev_qu_e: Option<DVector<f64>>,
    prev_v: Option<DMatrix<f64>>,
}

impl<N: RobotModel> PeicController<N> {
    pub fn new(
        model: GpDynamics<N>,
        partition: Partition,
        cfg: LoopConfig,
    ) -> Result<Self, ControlError> {
        let dims = model.dims();
        if partition.n != dims.n || partition.m != dims.m {
            return Err(ControlError::Conditions(format!(
                "partition ({}, {}) does not match model ({}, {})",
                partition.n, partition.m, dims.n, dims.m
            )));
        }
        cfg.validate(dims)?;
        let filter = BemDerivativeFilter::new(dims.m, cfg.control_dt, cfg.bem_filter_cutoff_hz);
        Ok(Self { model, partition, cfg, filter, prev_qu_e: None, prev_v: None })
    }
}

impl<N: RobotModel> Controller for PeicController<N> {
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
        let blocks = PartitionedBlocks::new(&me, &self.partition);

        let cond_dua_u = crate::dynamics::condition_number(&blocks.dua_u);
        if !(cond_dua_u < 1e8) {
            return Err(ControlError::Controllability { cond: cond_dua_u });
        }

        let outer_gains = self.cfg.outer.eval(&me.sigma_a);
        let v_ext = outer_aux(&q_a, &qdot_a, target, &outer_gains);
        let v_a_ext = v_ext.select_rows(self.partition.aa_indices.iter());

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

        // Balance group: H_un collects the tracking-group coupling at the
        // commanded acceleration, then the m balance coordinates invert it.
        let h_un = &blocks.dua_a * &v_a_ext + &blocks.h_u;
        let rhs = -(&h_un + &blocks.d_uu * &v_u_int);
        let v_int = blocks
            .dua_u
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(ControlError::Controllability { cond: cond_dua_u })?;

        // Tracking-group and balance-group torques, accelerations replaced
        // by their own commanded values.
        let h_an_a = &blocks.daa_au * &v_int + &blocks.dau_a * &v_u_int + &blocks.h_aa;
        let u_a = &blocks.daa_a * &v_a_ext + h_an_a;
        let h_an_u = &blocks.daa_ua * &v_a_ext + &blocks.h_au;
        let u_u = &blocks.daa_u * &v_int + &blocks.dau_u * &v_u_int + h_an_u;

        let mut u = DVector::zeros(dims.n);
        for (k, &idx) in self.partition.aa_indices.iter().enumerate() {
            u[idx] = u_a[k];
        }
        for (k, &idx) in self.partition.au_indices.iter().enumerate() {
            u[idx] = u_u[k];
        }
        clamp_torque(&mut u, self.cfg.torque_limit);

        let analysis = analyze_svd(&me.eval.d_ua(), &q_a, &v_ext, self.prev_v.as_ref());
        self.prev_v = Some(analysis.v.clone());

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
