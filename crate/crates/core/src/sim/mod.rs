//! Fixed-step closed-loop simulation, open-loop excitation for training
//! data, and trace post-processing.

mod trace;

pub use trace::{
    error_plane, error_stats, ErrorPlane, ErrorStats, JointStats, SimTrace, Table, TraceRow,
    TraceStatus,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{forward_accel, DynamicsError, JointState, PhysicalPlant, RobotModel};
use crate::eic::{ControlError, Controller, RefPoint};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("no samples in requested window")]
    EmptyWindow,
    #[error("non-finite state during integration at t = {0}")]
    NonFinite(f64),
    #[error("io error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
}

/// One sinusoid term `amp * sin(omega t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineTerm {
    pub amp: f64,
    pub omega: f64,
    pub phase: f64,
}

impl SineTerm {
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let arg = self.omega * t + self.phase;
        (
            self.amp * arg.sin(),
            self.amp * self.omega * arg.cos(),
            -self.amp * self.omega * self.omega * arg.sin(),
        )
    }
}

/// Sum-of-sines reference per actuated joint with analytic derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub joints: Vec<Vec<SineTerm>>,
}

impl Reference {
    pub fn zero(n: usize) -> Self {
        Self { joints: vec![Vec::new(); n] }
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn eval(&self, t: f64) -> RefPoint {
        let n = self.joints.len();
        let mut q_d = DVector::zeros(n);
        let mut qd_d = DVector::zeros(n);
        let mut qdd_d = DVector::zeros(n);
        for (i, terms) in self.joints.iter().enumerate() {
            for term in terms {
                let (p, v, a) = term.eval(t);
                q_d[i] += p;
                qd_d[i] += v;
                qdd_d[i] += a;
            }
        }
        RefPoint { q_d, qd_d, qdd_d }
    }
}

/// Classical fourth-order Runge-Kutta step on the first-order form of the
/// rigid-body dynamics with the input held constant.
pub fn rk4_step<P: RobotModel>(
    plant: &P,
    state: &JointState,
    u: &DVector<f64>,
    h: f64,
) -> Result<JointState, SimError> {
    let deriv = |q: &DVector<f64>, qdot: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>), SimError> {
        let s = JointState { q: q.clone(), qdot: qdot.clone(), qddot: None };
        let eval = plant.eval(&s)?;
        let acc = forward_accel(&eval, u)?;
        Ok((qdot.clone(), acc))
    };
    let (k1q, k1v) = deriv(&state.q, &state.qdot)?;
    let (k2q, k2v) = deriv(&(&state.q + &k1q * (h / 2.0)), &(&state.qdot + &k1v * (h / 2.0)))?;
    let (k3q, k3v) = deriv(&(&state.q + &k2q * (h / 2.0)), &(&state.qdot + &k2v * (h / 2.0)))?;
    let (k4q, k4v) = deriv(&(&state.q + &k3q * h), &(&state.qdot + &k3v * h))?;
    let q = &state.q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
    let qdot = &state.qdot + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
    if !(q.iter().all(|v| v.is_finite()) && qdot.iter().all(|v| v.is_finite())) {
        return Err(SimError::NonFinite(0.0));
    }
    Ok(JointState { q, qdot, qddot: None })
}

/// Early-termination thresholds mirroring "the system fell over".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergenceConfig {
    /// Balance goal for the unactuated coordinates (rad).
    pub qu_goal: Vec<f64>,
    /// Tolerated distance from the goal per unactuated coordinate (rad).
    pub angle_limit: f64,
    /// Tolerated joint-speed norm (rad/s).
    pub speed_limit: f64,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            qu_goal: Vec::new(),
            angle_limit: std::f64::consts::FRAC_PI_2,
            speed_limit: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub duration: f64,
    pub control_hz: f64,
    /// Integration substeps per control tick.
    pub substeps: usize,
    pub divergence: DivergenceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            duration: 10.0,
            control_hz: 400.0,
            substeps: 10,
            divergence: DivergenceConfig::default(),
        }
    }
}

/// Run a closed loop: sample sensors, evaluate the controller, hold the
/// torque over the integration substeps, log every tick.
///
/// The sensed acceleration is the previous-step finite difference of the
/// joint velocities. Divergence and controller failures set status flags,
/// never crash the run: after a controller failure the loop keeps
/// integrating under zero torque (safety stop), so a lost balance shows up
/// as the physical divergence it causes.
pub fn run_closed_loop<P: PhysicalPlant>(
    plant: &P,
    controller: &mut dyn Controller,
    reference: &Reference,
    initial: &JointState,
    cfg: &RunConfig,
) -> Result<SimTrace, SimError> {
    let dims = plant.dims();
    let dt = 1.0 / cfg.control_hz;
    let h = dt / cfg.substeps as f64;
    let ticks = (cfg.duration * cfg.control_hz).round() as usize;
    let goal = if cfg.divergence.qu_goal.len() == dims.m {
        DVector::from_vec(cfg.divergence.qu_goal.clone())
    } else {
        DVector::zeros(dims.m)
    };

    let mut trace = SimTrace::new(dims, dt);
    let mut state = initial.clone();
    let mut sensor_qddot: Option<DVector<f64>> = None;
    let mut safety_stop = false;

    for k in 0..ticks {
        let t = k as f64 * dt;
        trace.status.end_time = t;

        let finite = state.q.iter().all(|v| v.is_finite()) && state.qdot.iter().all(|v| v.is_finite());
        let q_u = state.q.rows(dims.n, dims.m);
        let fell = (0..dims.m).any(|j| (q_u[j] - goal[j]).abs() > cfg.divergence.angle_limit);
        if !finite || fell || state.qdot.norm() > cfg.divergence.speed_limit {
            trace.status.diverged = true;
            return Ok(trace);
        }

        let sensed = JointState {
            q: state.q.clone(),
            qdot: state.qdot.clone(),
            qddot: sensor_qddot.clone(),
        };
        let target = reference.eval(t);
        let out = if safety_stop {
            safety_stop_output(dims, &sensed, &target, &goal)
        } else {
            match controller.tick(t, &sensed, &target) {
                Ok(out) => out,
                Err(e) => {
                    trace.status.bem_failed |= matches!(e, ControlError::BemNotFound { .. });
                    trace.status.controller_error = Some(e.to_string());
                    safety_stop = true;
                    safety_stop_output(dims, &sensed, &target, &goal)
                }
            }
        };

        trace.rows.push(TraceRow {
            t,
            q: state.q.clone(),
            qdot: state.qdot.clone(),
            qddot: sensor_qddot.clone().unwrap_or_else(|| DVector::zeros(dims.total())),
            u: out.u.clone(),
            diag: out.diag,
        });

        let qdot_before = state.qdot.clone();
        for _ in 0..cfg.substeps {
            match rk4_step(plant, &state, &out.u, h) {
                Ok(next) => state = next,
                Err(_) => {
                    trace.status.diverged = true;
                    return Ok(trace);
                }
            }
        }
        sensor_qddot = Some((&state.qdot - qdot_before) / dt);
    }
    trace.status.end_time = cfg.duration;
    trace.status.completed = !safety_stop;
    Ok(trace)
}

/// Zero-torque tick logged after a controller failure: errors are reported
/// against the reference and the balance goal, solver diagnostics zeroed.
fn safety_stop_output(
    dims: crate::dynamics::Dims,
    sensed: &JointState,
    target: &RefPoint,
    goal: &DVector<f64>,
) -> crate::eic::TickOutput {
    let q_a = sensed.q.rows(0, dims.n).into_owned();
    let qdot_a = sensed.qdot.rows(0, dims.n).into_owned();
    crate::eic::TickOutput {
        u: DVector::zeros(dims.n),
        diag: crate::eic::TickDiag {
            qu_e: goal.clone(),
            qu_e_dot: DVector::zeros(dims.m),
            e_a: &q_a - &target.q_d,
            e_a_dot: &qdot_a - &target.qd_d,
            e_u: sensed.q.rows(dims.n, dims.m).into_owned() - goal,
            e_u_dot: sensed.qdot.rows(dims.n, dims.m).into_owned(),
            sigma_a: DVector::zeros(dims.n),
            sigma_u: DVector::zeros(dims.m),
            p_a: DVector::zeros(dims.n),
            singular_values: DVector::zeros(dims.m),
            kernel_components: DVector::zeros(dims.n - dims.m),
            kp1: DVector::zeros(dims.n),
            kd1: DVector::zeros(dims.n),
            kp2: DVector::zeros(dims.m),
            kd2: DVector::zeros(dims.m),
            bem_residual: 0.0,
            bem_iterations: 0,
        },
    }
}

/// Open-loop excitation signal: sum of sine torques per input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub joints: Vec<Vec<SineTerm>>,
    pub duration: f64,
    /// Abort (and truncate the log) when any coordinate leaves this range.
    pub q_limit: f64,
}

impl ExcitationSpec {
    pub fn torque(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(self.joints.len(), |i, _| {
            self.joints[i].iter().map(|term| term.eval(t).0).sum()
        })
    }
}

/// How the logged acceleration is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccelSource {
    /// Exact accelerations from the simulated plant.
    Exact,
    /// Central finite differences of the logged velocities, mimicking
    /// hardware estimation.
    FiniteDifference,
}

#[derive(Debug, Clone)]
pub struct ExcitationLog {
    /// (state with acceleration, applied torque) at the control rate.
    pub samples: Vec<(JointState, DVector<f64>)>,
    pub truncated: bool,
    pub collected: usize,
}

/// Drive the plant open loop and log training samples.
pub fn run_excitation<P: PhysicalPlant>(
    plant: &P,
    spec: &ExcitationSpec,
    control_hz: f64,
    substeps: usize,
    initial: &JointState,
    accel_source: AccelSource,
    target_n: usize,
) -> Result<ExcitationLog, SimError> {
    let dims = plant.dims();
    let dt = 1.0 / control_hz;
    let h = dt / substeps as f64;
    let ticks = (spec.duration * control_hz).round() as usize;

    let mut state = initial.clone();
    let mut raw: Vec<(JointState, DVector<f64>)> = Vec::new();
    let mut truncated = false;

    for k in 0..ticks {
        let t = k as f64 * dt;
        if state.q.iter().any(|v| v.abs() > spec.q_limit) {
            truncated = true;
            break;
        }
        let u = spec.torque(t);
        let eval = plant.eval(&state)?;
        let qddot = forward_accel(&eval, &u)?;
        raw.push((
            JointState {
                q: state.q.clone(),
                qdot: state.qdot.clone(),
                qddot: Some(qddot),
            },
            u.clone(),
        ));
        for _ in 0..substeps {
            state = rk4_step(plant, &state, &u, h)?;
        }
    }

    if accel_source == AccelSource::FiniteDifference {
        // Replace logged accelerations by central differences; the first
        // and last samples have no two-sided neighborhood and are dropped.
        let velocities: Vec<DVector<f64>> = raw.iter().map(|(s, _)| s.qdot.clone()).collect();
        let mut fd = Vec::with_capacity(raw.len().saturating_sub(2));
        for k in 1..raw.len().saturating_sub(1) {
            let accel = (&velocities[k + 1] - &velocities[k - 1]) / (2.0 * dt);
            let (mut s, u) = raw[k].clone();
            s.qddot = Some(accel);
            fd.push((s, u));
        }
        raw = fd;
    }

    let collected = raw.len();
    let samples = downsample(raw, target_n);
    let _ = dims;
    Ok(ExcitationLog { samples, truncated, collected })
}

/// Pick `min(target, len)` samples by uniform stride (first and last kept).
fn downsample<T: Clone>(items: Vec<T>, target: usize) -> Vec<T> {
    let total = items.len();
    if total <= target || target == 0 {
        return items;
    }
    if target == 1 {
        return vec![items[0].clone()];
    }
    (0..target)
        .map(|i| {
            let idx = (i as f64 * (total - 1) as f64 / (target - 1) as f64).round() as usize;
            items[idx].clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{FurutaParams, FurutaPlant, Leg3Plant};
    use crate::eic::{ControlError, TickDiag, TickOutput};
    use approx::assert_relative_eq;

    /// Plant-free linear test model q̈ = -q (per coordinate).
    #[derive(Debug, Clone)]
    struct Oscillator;

    impl RobotModel for Oscillator {
        fn dims(&self) -> crate::dynamics::Dims {
            crate::dynamics::Dims { n: 1, m: 1 }
        }
        fn eval(&self, state: &JointState) -> Result<crate::dynamics::DynamicsEval, DynamicsError> {
            let dims = RobotModel::dims(self);
            Ok(crate::dynamics::DynamicsEval::from_parts(
                dims,
                nalgebra::DMatrix::identity(2, 2),
                nalgebra::DMatrix::zeros(2, 2),
                state.q.clone(),
                &state.qdot,
            ))
        }
    }

    #[test]
    fn rk4_exact_for_linear_motion() {
        // q̈ = 0 via zero gravity: constant velocity advances exactly.
        let plant = FurutaPlant::new(FurutaParams {
            gravity: 0.0,
            friction: [0.0, 0.0],
            ..FurutaParams::default()
        });
        let state = JointState::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let next = rk4_step(&plant, &state, &DVector::zeros(1), 1.0).unwrap();
        assert_relative_eq!(next.q[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rk4_fourth_order_on_oscillator() {
        // Analytic solution q = cos t over 10 s; halving h cuts the error
        // by about 16.
        let run = |h: f64| -> f64 {
            let mut state = JointState::new(
                DVector::from_vec(vec![1.0, 0.0]),
                DVector::zeros(2),
            )
            .unwrap();
            let steps = (10.0 / h).round() as usize;
            for _ in 0..steps {
                state = rk4_step(&Oscillator, &state, &DVector::zeros(1), h).unwrap();
            }
            (state.q[0] - 10.0f64.cos()).abs()
        };
        let e1 = run(0.02);
        let e2 = run(0.01);
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "order ratio {ratio}");
    }

    #[test]
    fn frictionless_pendulum_energy_drift() {
        let plant = FurutaPlant::new(FurutaParams::default().frictionless());
        let mut state = JointState::new(
            DVector::from_vec(vec![0.0, 2.6]),
            DVector::zeros(2),
        )
        .unwrap();
        let e0 = plant.energy(&state);
        let h = 2.5e-4;
        let mut max_drift = 0.0f64;
        for _ in 0..40_000 {
            state = rk4_step(&plant, &state, &DVector::zeros(1), h).unwrap();
            max_drift = max_drift.max((plant.energy(&state) - e0).abs());
        }
        assert!(
            max_drift / e0.abs() < 1e-5,
            "relative drift {}",
            max_drift / e0.abs()
        );
    }

    struct ZeroController(crate::dynamics::Dims);

    impl Controller for ZeroController {
        fn dims(&self) -> crate::dynamics::Dims {
            self.0
        }
        fn tick(
            &mut self,
            _t: f64,
            state: &JointState,
            target: &RefPoint,
        ) -> Result<TickOutput, ControlError> {
            let dims = self.0;
            let q_a = state.q.rows(0, dims.n).into_owned();
            Ok(TickOutput {
                u: DVector::zeros(dims.n),
                diag: TickDiag {
                    qu_e: DVector::zeros(dims.m),
                    qu_e_dot: DVector::zeros(dims.m),
                    e_a: &q_a - &target.q_d,
                    e_a_dot: state.qdot.rows(0, dims.n).into_owned(),
                    e_u: state.q.rows(dims.n, dims.m).into_owned(),
                    e_u_dot: state.qdot.rows(dims.n, dims.m).into_owned(),
                    sigma_a: DVector::zeros(dims.n),
                    sigma_u: DVector::zeros(dims.m),
                    p_a: DVector::zeros(dims.n),
                    singular_values: DVector::zeros(dims.m),
                    kernel_components: DVector::zeros(dims.n - dims.m),
                    kp1: DVector::zeros(dims.n),
                    kd1: DVector::zeros(dims.n),
                    kp2: DVector::zeros(dims.m),
                    kd2: DVector::zeros(dims.m),
                    bem_residual: 0.0,
                    bem_iterations: 0,
                },
            })
        }
        fn reset(&mut self) {}
    }

    #[test]
    fn uncontrolled_inverted_leg_diverges_quickly() {
        let plant = Leg3Plant::default();
        let mut controller = ZeroController(RobotModel::dims(&plant));
        let mut initial = JointState::zero(3);
        initial.q[2] = 0.02;
        let cfg = RunConfig { duration: 5.0, control_hz: 200.0, ..Default::default() };
        let trace = run_closed_loop(
            &plant,
            &mut controller,
            &Reference::zero(2),
            &initial,
            &cfg,
        )
        .unwrap();
        assert!(trace.status.diverged);
        assert!(trace.status.end_time < 5.0);
        for row in &trace.rows {
            assert!(row.q.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn excitation_log_matches_spec_and_downsamples() {
        let plant = FurutaPlant::default();
        let spec = ExcitationSpec {
            joints: vec![vec![
                SineTerm { amp: 0.4, omega: 3.0, phase: 0.0 },
                SineTerm { amp: 0.2, omega: 8.0, phase: 1.0 },
            ]],
            duration: 1.0,
            q_limit: 10.0,
        };
        let log = run_excitation(
            &plant,
            &spec,
            400.0,
            5,
            &JointState::zero(2),
            AccelSource::Exact,
            100,
        )
        .unwrap();
        assert_eq!(log.samples.len(), 100.min(log.collected));
        // Logged torque equals the analytic signal at the logged state's
        // time; check the first sample (t = 0).
        let (_, u0) = &log.samples[0];
        assert_relative_eq!(u0[0], 0.2 * 1.0f64.sin(), epsilon = 1e-12);
    }

    #[test]
    fn excitation_truncates_at_range_violation() {
        let plant = Leg3Plant::default();
        let mut initial = JointState::zero(3);
        initial.q[2] = 0.05;
        let spec = ExcitationSpec {
            joints: vec![
                vec![SineTerm { amp: 0.5, omega: 3.0, phase: 0.0 }],
                vec![SineTerm { amp: 0.5, omega: 8.0, phase: 0.5 }],
            ],
            duration: 30.0,
            q_limit: std::f64::consts::FRAC_PI_2,
        };
        let log = run_excitation(
            &plant,
            &spec,
            200.0,
            10,
            &initial,
            AccelSource::Exact,
            10_000,
        )
        .unwrap();
        assert!(log.truncated);
        assert!(log.collected < 6000);
        assert_eq!(log.samples.len(), log.collected);
    }

    #[test]
    fn finite_difference_accel_close_to_truth() {
        let plant = FurutaPlant::default();
        let spec = ExcitationSpec {
            joints: vec![vec![SineTerm { amp: 0.3, omega: 2.0, phase: 0.0 }]],
            duration: 0.5,
            q_limit: 10.0,
        };
        let exact = run_excitation(&plant, &spec, 400.0, 5, &JointState::zero(2), AccelSource::Exact, 10_000).unwrap();
        let fd = run_excitation(&plant, &spec, 400.0, 5, &JointState::zero(2), AccelSource::FiniteDifference, 10_000).unwrap();
        // FD drops the endpoints; sample k of fd corresponds to k+1 of exact.
        for (k, (s_fd, _)) in fd.samples.iter().enumerate().take(50) {
            let truth = exact.samples[k + 1].0.qddot.as_ref().unwrap();
            let approx_err = (s_fd.qddot.as_ref().unwrap() - truth).norm();
            assert!(approx_err < 0.05, "fd error {approx_err}");
        }
    }

    #[test]
    fn reference_derivatives_consistent() {
        let reference = Reference {
            joints: vec![vec![
                SineTerm { amp: 0.5, omega: 1.0, phase: 0.0 },
                SineTerm { amp: 0.3, omega: 1.5, phase: 0.0 },
            ]],
        };
        let h = 1e-5;
        for k in 0..50 {
            let t = 0.13 * k as f64;
            let p = reference.eval(t);
            let plus = reference.eval(t + h);
            let minus = reference.eval(t - h);
            let fd_vel = (&plus.q_d - &minus.q_d) / (2.0 * h);
            let fd_acc = (&plus.qd_d - &minus.qd_d) / (2.0 * h);
            assert_relative_eq!(p.qd_d[0], fd_vel[0], epsilon = 1e-7);
            assert_relative_eq!(p.qdd_d[0], fd_acc[0], epsilon = 1e-6);
        }
    }

    #[test]
    fn downsample_counts() {
        let items: Vec<usize> = (0..1000).collect();
        assert_eq!(downsample(items.clone(), 400).len(), 400);
        assert_eq!(downsample(items.clone(), 2000).len(), 1000);
        let picked = downsample(items, 400);
        assert_eq!(picked[0], 0);
        assert_eq!(*picked.last().unwrap(), 999);
    }
}
