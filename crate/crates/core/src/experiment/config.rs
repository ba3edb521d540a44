use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::dynamics::{
    ConstantNominal, Dims, DynamicsError, DynamicsEval, FurutaParams, FurutaPlant, JointState,
    Leg3Params, Leg3Plant, LegNominal, Partition, PhysicalPlant, RobotModel, Sn1Nominal,
    Sn2Nominal,
};
use crate::eic::{BemConfig, GainSchedule, PdSchedules};
use crate::peic::{AccelPolicy, ConditionCheckConfig};
use crate::sim::{
    AccelSource, DivergenceConfig, ExcitationSpec, Reference, RunConfig, SineTerm,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {reason}")]
    Field { field: String, reason: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("toml parse error: {0}")]
    Parse(String),
}

fn field_err(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub duration_s: f64,
    /// Transient cut before error statistics are computed (s).
    pub stats_transient_s: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            seed: 0,
            out_dir: PathBuf::from("runs/unnamed"),
            duration_s: 10.0,
            stats_transient_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RobotKind {
    Furuta,
    Leg3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    pub kind: RobotKind,
    /// Plant parameter overrides (defaults when omitted).
    pub furuta: Option<FurutaParams>,
    pub leg3: Option<Leg3Params>,
}

impl Default for RobotSection {
    fn default() -> Self {
        Self { kind: RobotKind::Furuta, furuta: None, leg3: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    /// EIC on a physical model (optionally perturbed).
    EicModel,
    /// EIC on the GP-enhanced nominal model.
    EicGp,
    /// Partial EIC on the GP-enhanced nominal model.
    PeicGp,
}

impl ControllerKind {
    pub fn needs_model(&self) -> bool {
        matches!(self, ControllerKind::EicGp | ControllerKind::PeicGp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub kind: ControllerKind,
    pub torque_limit: Option<f64>,
    /// Relative parameter error applied to the physical model used by
    /// `eic-model` (signs drawn from the experiment seed).
    pub model_perturbation: f64,
    /// Low-pass cutoff for the BEM derivative estimates (Hz).
    pub bem_filter_cutoff_hz: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            kind: ControllerKind::EicModel,
            torque_limit: None,
            model_perturbation: 0.0,
            bem_filter_cutoff_hz: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NominalKind {
    SN1,
    SN2,
    LegDefault,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NominalSection {
    pub kind: NominalKind,
    /// Constant inertia matrix for `custom` (row-major).
    pub d: Option<Vec<Vec<f64>>>,
    /// Constant nonlinear vector for `custom`.
    pub h: Option<Vec<f64>>,
}

impl Default for NominalSection {
    fn default() -> Self {
        Self { kind: NominalKind::SN1, d: None, h: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsSection {
    pub kp1_base: Vec<f64>,
    pub kp1_slope: Vec<f64>,
    pub kd1_base: Vec<f64>,
    pub kd1_slope: Vec<f64>,
    pub kp2_base: Vec<f64>,
    pub kp2_slope: Vec<f64>,
    pub kd2_base: Vec<f64>,
    pub kd2_slope: Vec<f64>,
    pub k_low: f64,
    pub k_high: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        Self {
            kp1_base: vec![10.0],
            kp1_slope: vec![50.0],
            kd1_base: vec![3.0],
            kd1_slope: vec![10.0],
            kp2_base: vec![1000.0],
            kp2_slope: vec![500.0],
            kd2_base: vec![100.0],
            kd2_slope: vec![200.0],
            k_low: 1e-3,
            k_high: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    /// Sinusoid terms per actuated joint.
    pub joints: Vec<Vec<SineTerm>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    pub control_hz: f64,
    pub substeps: usize,
}

impl Default for RatesSection {
    fn default() -> Self {
        Self { control_hz: 400.0, substeps: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    /// Explicit initial coordinates; defaults to the reference at t = 0
    /// with the unactuated coordinates at the balance goal.
    pub q: Option<Vec<f64>>,
    pub qdot: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpSection {
    pub accel_policy: AccelPolicy,
    /// Training set size after downsampling.
    pub n_train: usize,
    /// Per-subsystem confidence level of the prediction-error bound.
    pub eta: f64,
    pub eta_a: Option<f64>,
    pub eta_u: Option<f64>,
    pub restarts: usize,
    pub max_iters: usize,
    /// Optional RKHS-norm overrides per channel.
    pub rkhs_override_a: Option<Vec<f64>>,
    pub rkhs_override_u: Option<Vec<f64>>,
}

impl Default for GpSection {
    fn default() -> Self {
        Self {
            accel_policy: AccelPolicy::PreviousStep,
            n_train: 400,
            eta: 0.9,
            eta_a: None,
            eta_u: None,
            restarts: 4,
            max_iters: 200,
            rkhs_override_a: None,
            rkhs_override_u: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationSection {
    pub joints: Vec<Vec<SineTerm>>,
    pub duration_s: f64,
    pub q_limit: f64,
    pub accel_source: AccelSource,
}

impl Default for ExcitationSection {
    fn default() -> Self {
        Self {
            joints: Vec::new(),
            duration_s: 20.0,
            q_limit: std::f64::consts::FRAC_PI_2,
            accel_source: AccelSource::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSection {
    /// Affine perturbation constants c1..c4; refitted on the run when
    /// `fit` is set.
    pub c: [f64; 4],
    pub fit: bool,
    /// Fitted slope is capped at this fraction of the stability margin.
    pub slope_cap_fraction: f64,
}

impl Default for BoundSection {
    fn default() -> Self {
        Self { c: [0.0; 4], fit: true, slope_cap_fraction: 0.8 }
    }
}

/// Full experiment description; the on-disk TOML mirrors this structure
/// section by section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub robot: RobotSection,
    pub partition: PartitionSection,
    pub controller: ControllerSection,
    pub nominal: NominalSection,
    pub gains: GainsSection,
    pub reference: ReferenceSection,
    pub rates: RatesSection,
    pub initial: InitialSection,
    pub gp: GpSection,
    pub excitation: ExcitationSection,
    pub bem: BemConfig,
    pub bound: BoundSection,
    pub divergence: DivergenceConfig,
    pub check: ConditionCheckConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    /// Actuated coordinates (0-based) assigned to balance duty.
    pub au_indices: Vec<usize>,
}

/// Concrete plant dispatch (keeps the controllers monomorphic).
#[derive(Debug, Clone)]
pub enum Plant {
    Furuta(FurutaPlant),
    Leg3(Leg3Plant),
}

impl RobotModel for Plant {
    fn dims(&self) -> Dims {
        match self {
            Plant::Furuta(p) => RobotModel::dims(p),
            Plant::Leg3(p) => RobotModel::dims(p),
        }
    }
    fn eval(&self, state: &JointState) -> Result<DynamicsEval, DynamicsError> {
        match self {
            Plant::Furuta(p) => p.eval(state),
            Plant::Leg3(p) => p.eval(state),
        }
    }
}

impl PhysicalPlant for Plant {
    fn energy(&self, state: &JointState) -> f64 {
        match self {
            Plant::Furuta(p) => p.energy(state),
            Plant::Leg3(p) => p.energy(state),
        }
    }
}

/// Concrete nominal-model dispatch.
#[derive(Debug, Clone)]
pub enum Nominal {
    Sn1(Sn1Nominal),
    Sn2(Sn2Nominal),
    Leg(LegNominal),
    Constant(ConstantNominal),
}

impl RobotModel for Nominal {
    fn dims(&self) -> Dims {
        match self {
            Nominal::Sn1(n) => RobotModel::dims(n),
            Nominal::Sn2(n) => RobotModel::dims(n),
            Nominal::Leg(n) => RobotModel::dims(n),
            Nominal::Constant(n) => RobotModel::dims(n),
        }
    }
    fn eval(&self, state: &JointState) -> Result<DynamicsEval, DynamicsError> {
        match self {
            Nominal::Sn1(n) => n.eval(state),
            Nominal::Sn2(n) => n.eval(state),
            Nominal::Leg(n) => n.eval(state),
            Nominal::Constant(n) => n.eval(state),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn dims(&self) -> Dims {
        match self.robot.kind {
            RobotKind::Furuta => Dims { n: 1, m: 1 },
            RobotKind::Leg3 => Dims { n: 2, m: 1 },
        }
    }

    pub fn partition(&self) -> Result<Partition, ConfigError> {
        let dims = self.dims();
        if self.partition.au_indices.is_empty() && dims.n == dims.m {
            return Ok(Partition::degenerate(dims.n));
        }
        Partition::new(dims.n, dims.m, self.partition.au_indices.clone())
            .map_err(|e| field_err("partition.au_indices", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let dims = self.dims();
        if !(self.experiment.duration_s > 0.0) {
            return Err(field_err("experiment.duration_s", "must be positive"));
        }
        if !(self.rates.control_hz > 0.0) {
            return Err(field_err("rates.control_hz", "must be positive"));
        }
        if self.rates.substeps == 0 {
            return Err(field_err("rates.substeps", "must be at least 1"));
        }
        self.partition()?;

        let check_len = |name: &str, got: usize, want: usize| -> Result<(), ConfigError> {
            if got != want {
                Err(field_err(name, format!("expected {want} entries, got {got}")))
            } else {
                Ok(())
            }
        };
        check_len("gains.kp1_base", self.gains.kp1_base.len(), dims.n)?;
        check_len("gains.kp1_slope", self.gains.kp1_slope.len(), dims.n)?;
        check_len("gains.kd1_base", self.gains.kd1_base.len(), dims.n)?;
        check_len("gains.kd1_slope", self.gains.kd1_slope.len(), dims.n)?;
        check_len("gains.kp2_base", self.gains.kp2_base.len(), dims.m)?;
        check_len("gains.kp2_slope", self.gains.kp2_slope.len(), dims.m)?;
        check_len("gains.kd2_base", self.gains.kd2_base.len(), dims.m)?;
        check_len("gains.kd2_slope", self.gains.kd2_slope.len(), dims.m)?;
        for (name, vals) in [
            ("gains.kp1_base", &self.gains.kp1_base),
            ("gains.kd1_base", &self.gains.kd1_base),
            ("gains.kp2_base", &self.gains.kp2_base),
            ("gains.kd2_base", &self.gains.kd2_base),
        ] {
            if vals.iter().any(|v| !(*v > 0.0)) {
                return Err(field_err(name, "gains must be positive"));
            }
        }
        if !self.reference.joints.is_empty() {
            check_len("reference.joints", self.reference.joints.len(), dims.n)?;
        }
        if let Some(q) = &self.initial.q {
            check_len("initial.q", q.len(), dims.total())?;
        }
        if let Some(qd) = &self.initial.qdot {
            check_len("initial.qdot", qd.len(), dims.total())?;
        }

        match self.nominal.kind {
            NominalKind::SN1 | NominalKind::SN2 => {
                if self.robot.kind != RobotKind::Furuta {
                    return Err(field_err("nominal.kind", "s-n1/s-n2 pair with the furuta robot"));
                }
            }
            NominalKind::LegDefault => {
                if self.robot.kind != RobotKind::Leg3 {
                    return Err(field_err("nominal.kind", "leg-default pairs with the leg3 robot"));
                }
            }
            NominalKind::Custom => {
                let d = self.nominal.d.as_ref().ok_or_else(|| {
                    field_err("nominal.d", "custom nominal requires the inertia matrix")
                })?;
                let h = self.nominal.h.as_ref().ok_or_else(|| {
                    field_err("nominal.h", "custom nominal requires the nonlinear vector")
                })?;
                let total = dims.total();
                if d.len() != total || d.iter().any(|row| row.len() != total) {
                    return Err(field_err("nominal.d", format!("must be {total}x{total}")));
                }
                if h.len() != total {
                    return Err(field_err("nominal.h", format!("must have {total} entries")));
                }
            }
        }

        if self.controller.kind.needs_model() {
            if !(self.gp.eta > 0.0 && self.gp.eta < 1.0) {
                return Err(field_err("gp.eta", "must lie strictly inside (0, 1)"));
            }
            if self.gp.n_train < 2 {
                return Err(field_err("gp.n_train", "need at least 2 training samples"));
            }
            if !self.excitation.joints.is_empty() {
                check_len("excitation.joints", self.excitation.joints.len(), dims.n)?;
            }
        }
        if !(self.controller.model_perturbation >= 0.0 && self.controller.model_perturbation < 1.0)
        {
            return Err(field_err("controller.model_perturbation", "must lie in [0, 1)"));
        }
        if self.controller.kind == ControllerKind::PeicGp {
            // Explicit partition data required beyond the degenerate case.
            let p = self.partition()?;
            if p.n > p.m && self.partition.au_indices.is_empty() {
                return Err(field_err(
                    "partition.au_indices",
                    "peic-gp on an n > m robot needs the balance assignment",
                ));
            }
        }
        Ok(())
    }

    pub fn build_plant(&self) -> Plant {
        match self.robot.kind {
            RobotKind::Furuta => {
                Plant::Furuta(FurutaPlant::new(self.robot.furuta.clone().unwrap_or_default()))
            }
            RobotKind::Leg3 => {
                Plant::Leg3(Leg3Plant::new(self.robot.leg3.clone().unwrap_or_default()))
            }
        }
    }

    /// The physical model handed to `eic-model`, with the configured
    /// relative parameter error applied (signs seeded by the experiment).
    pub fn build_controller_plant_model(&self) -> Plant {
        let rel = self.controller.model_perturbation;
        if rel == 0.0 {
            return self.build_plant();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.experiment.seed.wrapping_add(77));
        let mut bump = |v: &mut f64| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            *v *= 1.0 + sign * rel;
        };
        match self.build_plant() {
            Plant::Furuta(mut p) => {
                bump(&mut p.params.arm_mass);
                bump(&mut p.params.arm_length);
                bump(&mut p.params.pend_mass);
                bump(&mut p.params.pend_length);
                bump(&mut p.params.rotor_inertia);
                bump(&mut p.params.friction[0]);
                bump(&mut p.params.friction[1]);
                Plant::Furuta(p)
            }
            Plant::Leg3(mut p) => {
                for i in 0..3 {
                    bump(&mut p.params.masses[i]);
                    bump(&mut p.params.lengths[i]);
                    bump(&mut p.params.hub_inertias[i]);
                    bump(&mut p.params.friction[i]);
                }
                Plant::Leg3(p)
            }
        }
    }

    pub fn build_nominal(&self) -> Result<Nominal, ConfigError> {
        Ok(match self.nominal.kind {
            NominalKind::SN1 => Nominal::Sn1(Sn1Nominal),
            NominalKind::SN2 => Nominal::Sn2(Sn2Nominal),
            NominalKind::LegDefault => Nominal::Leg(LegNominal),
            NominalKind::Custom => {
                let total = self.dims().total();
                let d_rows = self.nominal.d.as_ref().unwrap();
                let flat: Vec<f64> = d_rows.iter().flatten().copied().collect();
                let d = DMatrix::from_row_slice(total, total, &flat);
                let h = DVector::from_vec(self.nominal.h.clone().unwrap());
                Nominal::Constant(
                    ConstantNominal::new(self.dims(), d, h)
                        .map_err(|e| field_err("nominal", e.to_string()))?,
                )
            }
        })
    }

    pub fn build_reference(&self) -> Reference {
        if self.reference.joints.is_empty() {
            Reference::zero(self.dims().n)
        } else {
            Reference { joints: self.reference.joints.clone() }
        }
    }

    pub fn build_schedules(&self) -> (PdSchedules, PdSchedules) {
        let g = &self.gains;
        let mk = |base: &[f64], slope: &[f64]| GainSchedule {
            base: base.to_vec(),
            slope: slope.to_vec(),
            k_low: g.k_low,
            k_high: g.k_high,
        };
        (
            PdSchedules { kp: mk(&g.kp1_base, &g.kp1_slope), kd: mk(&g.kd1_base, &g.kd1_slope) },
            PdSchedules { kp: mk(&g.kp2_base, &g.kp2_slope), kd: mk(&g.kd2_base, &g.kd2_slope) },
        )
    }

    pub fn build_initial_state(&self) -> JointState {
        let dims = self.dims();
        let total = dims.total();
        let reference = self.build_reference();
        let at0 = reference.eval(0.0);
        let mut q = DVector::zeros(total);
        let mut qdot = DVector::zeros(total);
        q.rows_mut(0, dims.n).copy_from(&at0.q_d);
        qdot.rows_mut(0, dims.n).copy_from(&at0.qd_d);
        for j in 0..dims.m {
            q[dims.n + j] = self.divergence.qu_goal.get(j).copied().unwrap_or(0.0);
        }
        if let Some(q0) = &self.initial.q {
            q = DVector::from_vec(q0.clone());
        }
        if let Some(qd0) = &self.initial.qdot {
            qdot = DVector::from_vec(qd0.clone());
        }
        JointState { q, qdot, qddot: None }
    }

    pub fn build_run_config(&self) -> RunConfig {
        RunConfig {
            duration: self.experiment.duration_s,
            control_hz: self.rates.control_hz,
            substeps: self.rates.substeps,
            divergence: self.divergence.clone(),
        }
    }

    pub fn build_excitation(&self) -> ExcitationSpec {
        ExcitationSpec {
            joints: if self.excitation.joints.is_empty() {
                vec![Vec::new(); self.dims().n]
            } else {
                self.excitation.joints.clone()
            },
            duration: self.excitation.duration_s,
            q_limit: self.excitation.q_limit,
        }
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.rates.control_hz
    }
}
