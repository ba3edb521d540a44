use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::config::{ConfigError, ControllerKind, ExperimentConfig, Nominal};
use crate::dynamics::{DynamicsError, JointState};
use crate::eic::{ControlError, Controller, EicController, LoopConfig};
use crate::gp::{
    compute_bound, train_channel, BoundConstants, GpChannel, GpError, GpVectorModel, Hyperparams,
    InputSpec, ModelFile, TrainOptions,
};
use crate::peic::{
    check_conditions, error_bound, fit_perturbation_constants, sample_block_bounds, sample_states,
    AccelPolicy, ConditionCheckConfig, ConditionReport, ErrorBoundParams, GpDynamics,
    PeicController, ResidualSample,
};
use crate::sim::{error_plane, error_stats, run_closed_loop, run_excitation, ErrorStats, SimError, SimTrace};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("io error: {0}")]
    Io(String),
    #[error("serialization error: {0}")]
    Json(String),
    #[error("model error: {0}")]
    Model(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Json(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Json(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub robot: String,
    pub nominal: String,
    pub seed: u64,
    pub control_hz: f64,
    pub input_spec: InputSpec,
    pub toolkit_version: String,
    pub truncated: bool,
    pub collected: usize,
}

/// Residual training data: inputs plus per-subsystem targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetFile {
    pub meta: DatasetMeta,
    pub inputs: Vec<Vec<f64>>,
    pub targets_a: Vec<Vec<f64>>,
    pub targets_u: Vec<Vec<f64>>,
}

impl DatasetFile {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn from_residuals(meta: DatasetMeta, residuals: &[ResidualSample]) -> Self {
        Self {
            meta,
            inputs: residuals.iter().map(|r| r.x.as_slice().to_vec()).collect(),
            targets_a: residuals.iter().map(|r| r.target_a.as_slice().to_vec()).collect(),
            targets_u: residuals.iter().map(|r| r.target_u.as_slice().to_vec()).collect(),
        }
    }
}

/// Excite the plant open loop, compute residual targets against the
/// nominal model, and write the dataset.
pub fn cmd_collect(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    quiet: bool,
) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let plant = cfg.build_plant();
    let spec = cfg.build_excitation();
    let initial = excitation_initial(cfg);
    let log = run_excitation(
        &plant,
        &spec,
        cfg.rates.control_hz,
        cfg.rates.substeps,
        &initial,
        cfg.excitation.accel_source,
        cfg.gp.n_train,
    )?;
    let nominal = cfg.build_nominal()?;
    let input_spec = cfg.gp.accel_policy.input_spec();
    let residuals = crate::peic::residual_targets(&nominal, &log.samples, input_spec)?;
    let meta = DatasetMeta {
        name: cfg.experiment.name.clone(),
        robot: format!("{:?}", cfg.robot.kind),
        nominal: format!("{:?}", cfg.nominal.kind),
        seed: cfg.experiment.seed,
        control_hz: cfg.rates.control_hz,
        input_spec,
        toolkit_version: TOOLKIT_VERSION.to_string(),
        truncated: log.truncated,
        collected: log.collected,
    };
    let dataset = DatasetFile::from_residuals(meta, &residuals);
    let path = out_dir.join("dataset.json");
    write_json(&path, &dataset)?;
    if !quiet {
        println!(
            "collected {} samples ({} logged{}) -> {}",
            dataset.len(),
            log.collected,
            if log.truncated { ", truncated at range limit" } else { "" },
            path.display()
        );
    }
    Ok(path)
}

fn excitation_initial(cfg: &ExperimentConfig) -> JointState {
    let dims = cfg.dims();
    let mut state = JointState::zero(dims.total());
    for j in 0..dims.m {
        state.q[dims.n + j] = cfg.divergence.qu_goal.get(j).copied().unwrap_or(0.0);
    }
    if let Some(q0) = &cfg.initial.q {
        state.q = DVector::from_vec(q0.clone());
    }
    state
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelTrainSummary {
    pub nlml_before: f64,
    pub nlml_after: f64,
    pub iterations: usize,
    pub holdout_rmse: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModelFile {
    pub meta: DatasetMeta,
    pub accel_policy: AccelPolicy,
    pub gp_a: ModelFile,
    pub gp_u: ModelFile,
    pub bound_a: BoundConstants,
    pub bound_u: BoundConstants,
    pub summary_a: Vec<ChannelTrainSummary>,
    pub summary_u: Vec<ChannelTrainSummary>,
}

/// In-memory trained model pair.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub gp_a: GpVectorModel,
    pub gp_u: GpVectorModel,
    pub bound_a: BoundConstants,
    pub bound_u: BoundConstants,
    pub accel_policy: AccelPolicy,
}

pub fn load_trained_model(path: &Path) -> Result<TrainedModel, PipelineError> {
    let file: TrainedModelFile = read_json(path)?;
    Ok(TrainedModel {
        gp_a: file.gp_a.into_model()?,
        gp_u: file.gp_u.into_model()?,
        bound_a: file.bound_a,
        bound_u: file.bound_u,
        accel_policy: file.accel_policy,
    })
}

fn init_hyper(x: &[DVector<f64>], y: &DVector<f64>) -> Hyperparams {
    let dim = x[0].len();
    let n = x.len() as f64;
    let mut weights = Vec::with_capacity(dim);
    for d in 0..dim {
        let mean = x.iter().map(|v| v[d]).sum::<f64>() / n;
        let var = x.iter().map(|v| (v[d] - mean) * (v[d] - mean)).sum::<f64>() / n;
        weights.push(1.0 / var.max(1e-4));
    }
    let y_mean = y.sum() / n;
    let y_std = (y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n).sqrt();
    Hyperparams {
        weights,
        sigma_f: y_std.max(1e-3),
        noise: (0.1 * y_std).max(1e-4),
    }
}

fn train_subsystem(
    inputs: &[DVector<f64>],
    targets: &[Vec<f64>],
    channels: usize,
    input_spec: InputSpec,
    cfg: &ExperimentConfig,
    seed_base: u64,
    label: &str,
    quiet: bool,
) -> Result<(GpVectorModel, Vec<ChannelTrainSummary>), PipelineError> {
    let mut gp_channels = Vec::with_capacity(channels);
    let mut summaries = Vec::with_capacity(channels);
    for ci in 0..channels {
        let y = DVector::from_fn(targets.len(), |k, _| targets[k][ci]);
        let init = init_hyper(inputs, &y);
        let opts = TrainOptions {
            restarts: cfg.gp.restarts,
            max_iters: cfg.gp.max_iters,
            seed: seed_base.wrapping_mul(1000).wrapping_add(ci as u64),
            ..Default::default()
        };
        let (channel, report) = train_channel(inputs.to_vec(), y.clone(), init, &opts)
            .map_err(|e| PipelineError::Model(format!("{label} channel {ci}: {e}")))?;
        let holdout_rmse = holdout_rmse(inputs, &y, channel.hyper());
        if !quiet {
            println!(
                "trained {label}[{ci}]: NLML {:.4} -> {:.4} ({} iters), holdout RMSE {}",
                report.nlml_init,
                report.nlml_final,
                report.iterations,
                holdout_rmse.map_or("n/a".to_string(), |v| format!("{v:.3e}"))
            );
        }
        summaries.push(ChannelTrainSummary {
            nlml_before: report.nlml_init,
            nlml_after: report.nlml_final,
            iterations: report.iterations,
            holdout_rmse,
        });
        gp_channels.push(channel);
    }
    Ok((GpVectorModel::new(gp_channels, input_spec), summaries))
}

/// Refit at the trained hyperparameters on an 80% split, report RMSE on
/// the held-out 20%. The shipped model keeps the full data.
fn holdout_rmse(x: &[DVector<f64>], y: &DVector<f64>, hyper: &Hyperparams) -> Option<f64> {
    if x.len() < 10 {
        return None;
    }
    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    let mut held = Vec::new();
    for k in 0..x.len() {
        if k % 5 == 4 {
            held.push(k);
        } else {
            train_x.push(x[k].clone());
            train_y.push(y[k]);
        }
    }
    let channel =
        GpChannel::fit(train_x, DVector::from_vec(train_y), hyper.clone()).ok()?;
    let mut sq = 0.0;
    for &k in &held {
        let mu = channel.predict_mean(&x[k]).ok()?;
        sq += (mu - y[k]) * (mu - y[k]);
    }
    Some((sq / held.len() as f64).sqrt())
}

/// Train the per-subsystem residual models from a dataset and persist them
/// with their error-bound constants.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    dataset_path: &Path,
    out_dir: &Path,
    quiet: bool,
) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let dataset: DatasetFile = read_json(dataset_path)?;
    if dataset.len() < 2 {
        return Err(PipelineError::Model(format!(
            "dataset holds {} samples; need at least 2",
            dataset.len()
        )));
    }
    let input_spec = cfg.gp.accel_policy.input_spec();
    if dataset.meta.input_spec != input_spec {
        return Err(PipelineError::Model(format!(
            "dataset input spec {:?} does not match configured accel policy {:?}",
            dataset.meta.input_spec, cfg.gp.accel_policy
        )));
    }
    let dims = cfg.dims();
    let inputs: Vec<DVector<f64>> =
        dataset.inputs.iter().map(|v| DVector::from_vec(v.clone())).collect();

    let (gp_a, summary_a) = train_subsystem(
        &inputs,
        &dataset.targets_a,
        dims.n,
        input_spec,
        cfg,
        cfg.experiment.seed.wrapping_add(1),
        "gp_a",
        quiet,
    )?;
    let (gp_u, summary_u) = train_subsystem(
        &inputs,
        &dataset.targets_u,
        dims.m,
        input_spec,
        cfg,
        cfg.experiment.seed.wrapping_add(2),
        "gp_u",
        quiet,
    )?;

    let eta_a = cfg.gp.eta_a.unwrap_or(cfg.gp.eta);
    let eta_u = cfg.gp.eta_u.unwrap_or(cfg.gp.eta);
    let bound_a = compute_bound(&gp_a, eta_a, cfg.gp.rkhs_override_a.as_deref())?;
    let bound_u = compute_bound(&gp_u, eta_u, cfg.gp.rkhs_override_u.as_deref())?;
    if !quiet {
        println!(
            "bounds: |kappa_a| {:.3}, |kappa_u| {:.3}, varsigma_a {:?}, varsigma_u {:?}",
            bound_a.kappa_norm(),
            bound_u.kappa_norm(),
            bound_a.varsigma,
            bound_u.varsigma
        );
        println!(
            "variance caps: sigma_max_a {:.4}, sigma_max_u {:.4}",
            gp_a.variance_sup(),
            gp_u.variance_sup()
        );
    }

    let file = TrainedModelFile {
        meta: dataset.meta.clone(),
        accel_policy: cfg.gp.accel_policy,
        gp_a: ModelFile::from_model(&gp_a),
        gp_u: ModelFile::from_model(&gp_u),
        bound_a,
        bound_u,
        summary_a,
        summary_u,
    };
    let path = out_dir.join("model.json");
    write_json(&path, &file)?;
    if !quiet {
        println!("model -> {}", path.display());
    }
    Ok(path)
}

// ---------------------------------------------------------------------------
// Condition checking
// ---------------------------------------------------------------------------

/// Run the nominal-model condition checker for the configured robot.
/// Returns the report and whether the conditions required by the selected
/// controller all hold.
pub fn cmd_check(
    cfg: &ExperimentConfig,
    quiet: bool,
) -> Result<(ConditionReport, bool), PipelineError> {
    cfg.validate()?;
    let nominal = cfg.build_nominal()?;
    let partition = cfg.partition()?;
    let check_cfg = ConditionCheckConfig {
        seed: cfg.experiment.seed.wrapping_add(99),
        ..cfg.check.clone()
    };
    let states = sample_states(cfg.dims().total(), &check_cfg);
    let report = check_conditions(&nominal, &partition, &states, &check_cfg)?;
    let needs_structure = cfg.controller.kind == ControllerKind::PeicGp;
    let ok = report.required_pass(needs_structure);
    if !quiet {
        print!("{report}");
        println!("required conditions for {:?}: {}", cfg.controller.kind, if ok { "pass" } else { "FAIL" });
    }
    Ok((report, ok))
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundSummary {
    pub radius: f64,
    pub p_norm: f64,
    pub d1: f64,
    pub d2: f64,
    pub l_a: f64,
    pub l_u: f64,
    pub eta: f64,
    pub hurwitz: bool,
    pub fitted_c: [f64; 4],
    pub kappa_a_norm: f64,
    pub kappa_u_norm: f64,
    pub sigma_max_a: f64,
    pub sigma_max_u: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStats {
    pub name: String,
    pub robot: String,
    pub controller: String,
    pub seed: u64,
    pub toolkit_version: String,
    pub status: crate::sim::TraceStatus,
    pub ticks: usize,
    pub error_stats: Option<ErrorStats>,
    pub bound: Option<BoundSummary>,
}

#[derive(Debug)]
pub struct SimOutcome {
    pub trace: SimTrace,
    pub stats: RunStats,
    pub run_dir: PathBuf,
}

pub fn build_controller(
    cfg: &ExperimentConfig,
    model: Option<&TrainedModel>,
) -> Result<Box<dyn Controller>, PipelineError> {
    let (outer, inner) = cfg.build_schedules();
    let dims = cfg.dims();
    let goal_qu = if cfg.divergence.qu_goal.len() == dims.m {
        DVector::from_vec(cfg.divergence.qu_goal.clone())
    } else {
        DVector::zeros(dims.m)
    };
    let loop_cfg = LoopConfig {
        outer,
        inner,
        bem: cfg.bem.clone(),
        bem_filter_cutoff_hz: cfg.controller.bem_filter_cutoff_hz,
        control_dt: cfg.control_dt(),
        torque_limit: cfg.controller.torque_limit,
        goal_qu,
    };
    match cfg.controller.kind {
        ControllerKind::EicModel => {
            let model_plant = cfg.build_controller_plant_model();
            Ok(Box::new(EicController::new(model_plant, loop_cfg)?))
        }
        ControllerKind::EicGp => {
            let trained = model.ok_or_else(|| {
                PipelineError::Model("eic-gp requires a trained model (--model)".into())
            })?;
            let gpdyn = build_gp_dynamics(cfg, trained)?;
            Ok(Box::new(EicController::new(gpdyn, loop_cfg)?))
        }
        ControllerKind::PeicGp => {
            let trained = model.ok_or_else(|| {
                PipelineError::Model("peic-gp requires a trained model (--model)".into())
            })?;
            let gpdyn = build_gp_dynamics(cfg, trained)?;
            let partition = cfg.partition()?;
            Ok(Box::new(PeicController::new(gpdyn, partition, loop_cfg)?))
        }
    }
}

pub fn build_gp_dynamics(
    cfg: &ExperimentConfig,
    trained: &TrainedModel,
) -> Result<GpDynamics<Nominal>, PipelineError> {
    if trained.accel_policy != cfg.gp.accel_policy {
        return Err(PipelineError::Model(format!(
            "model accel policy {:?} does not match config {:?}",
            trained.accel_policy, cfg.gp.accel_policy
        )));
    }
    let nominal = cfg.build_nominal()?;
    Ok(GpDynamics::new(
        nominal,
        trained.gp_a.clone(),
        trained.gp_u.clone(),
        trained.accel_policy,
    )?)
}

fn assemble_bound(
    cfg: &ExperimentConfig,
    trained: &TrainedModel,
    trace: &SimTrace,
) -> Result<Option<BoundSummary>, PipelineError> {
    let nominal = cfg.build_nominal()?;
    let partition = cfg.partition()?;
    let check_cfg = ConditionCheckConfig {
        seed: cfg.experiment.seed.wrapping_add(99),
        ..cfg.check.clone()
    };
    let states = sample_states(cfg.dims().total(), &check_cfg);
    let (d_a1, d_a2, d_u1, d_u2, sigma1, sigma_m) =
        sample_block_bounds(&nominal, &partition, &states)?;
    let eta_a = cfg.gp.eta_a.unwrap_or(cfg.gp.eta);
    let eta_u = cfg.gp.eta_u.unwrap_or(cfg.gp.eta);
    let mut params = ErrorBoundParams {
        c: cfg.bound.c,
        d_a1,
        d_a2,
        d_u1,
        d_u2,
        sigma1,
        sigma_m,
        sigma_max_a: trained.gp_a.variance_sup(),
        sigma_max_u: trained.gp_u.variance_sup(),
        kappa_a_norm: trained.bound_a.kappa_norm(),
        kappa_u_norm: trained.bound_u.kappa_norm(),
        eta: eta_a * eta_u,
    };

    let (outer, inner) = cfg.build_schedules();
    let dims = cfg.dims();
    let zeros_n = DVector::zeros(dims.n);
    let zeros_m = DVector::zeros(dims.m);
    let kp = crate::peic::stack_gains(&outer.kp.eval(&zeros_n), &inner.kp.eval(&zeros_m));
    let kd = crate::peic::stack_gains(&outer.kd.eval(&zeros_n), &inner.kd.eval(&zeros_m));

    if cfg.bound.fit && trace.rows.len() > 16 {
        // Two passes: the stability margin (through |P|) sets the slope cap
        // before the constants are fitted on the post-transient window.
        let pre = error_bound(&params, &kp, &kd)?;
        let gp_terms = pre.l_a * params.kappa_a_norm + pre.l_u * params.kappa_u_norm;
        let slope_cap = cfg.bound.slope_cap_fraction * 0.5 / pre.p_norm;
        let transient = cfg.experiment.stats_transient_s;
        let mut e_q = Vec::new();
        let mut edot_q = Vec::new();
        for row in trace.rows.iter().filter(|r| r.t >= transient) {
            let mut e = DVector::zeros(dims.total());
            e.rows_mut(0, dims.n).copy_from(&row.diag.e_a);
            e.rows_mut(dims.n, dims.m).copy_from(&row.diag.e_u);
            let mut ed = DVector::zeros(dims.total());
            ed.rows_mut(0, dims.n).copy_from(&row.diag.e_a_dot);
            ed.rows_mut(dims.n, dims.m).copy_from(&row.diag.e_u_dot);
            e_q.push(e);
            edot_q.push(ed);
        }
        if e_q.len() > 16 {
            params.c = fit_perturbation_constants(
                &e_q,
                &edot_q,
                trace.control_dt,
                &kp,
                &kd,
                slope_cap,
                gp_terms,
            );
        }
    }

    let report = error_bound(&params, &kp, &kd)?;
    Ok(Some(BoundSummary {
        radius: report.radius,
        p_norm: report.p_norm,
        d1: report.d1,
        d2: report.d2,
        l_a: report.l_a,
        l_u: report.l_u,
        eta: report.eta,
        hurwitz: report.hurwitz,
        fitted_c: params.c,
        kappa_a_norm: params.kappa_a_norm,
        kappa_u_norm: params.kappa_u_norm,
        sigma_max_a: params.sigma_max_a,
        sigma_max_u: params.sigma_max_u,
    }))
}

/// Run the configured closed-loop scenario and write the run directory
/// (trace CSV, stats JSON, error-plane CSV, config snapshot).
pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    model_path: Option<&Path>,
    out_dir: &Path,
    quiet: bool,
) -> Result<SimOutcome, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let trained = match (cfg.controller.kind.needs_model(), model_path) {
        (true, Some(p)) => Some(load_trained_model(p)?),
        (true, None) => {
            return Err(PipelineError::Model(format!(
                "controller {:?} requires --model",
                cfg.controller.kind
            )))
        }
        (false, _) => None,
    };

    let plant = cfg.build_plant();
    let reference = cfg.build_reference();
    let initial = cfg.build_initial_state();
    let run_cfg = cfg.build_run_config();
    let mut controller = build_controller(cfg, trained.as_ref())?;
    let trace = run_closed_loop(&plant, controller.as_mut(), &reference, &initial, &run_cfg)?;

    let window = (cfg.experiment.stats_transient_s, trace.status.end_time);
    let stats_result = error_stats(&trace, window).ok();
    let bound = match &trained {
        Some(t) => assemble_bound(cfg, t, &trace)?,
        None => None,
    };

    let stats = RunStats {
        name: cfg.experiment.name.clone(),
        robot: format!("{:?}", cfg.robot.kind),
        controller: format!("{:?}", cfg.controller.kind),
        seed: cfg.experiment.seed,
        toolkit_version: TOOLKIT_VERSION.to_string(),
        status: trace.status.clone(),
        ticks: trace.rows.len(),
        error_stats: stats_result,
        bound,
    };

    trace.write_csv(&out_dir.join("trace.csv"))?;
    write_json(&out_dir.join("stats.json"), &stats)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml_string())
        .map_err(|e| io_err(out_dir, e))?;

    let plane = error_plane(&trace, stats.bound.as_ref().map(|b| b.radius));
    let mut plane_csv = String::from("eq_norm_rad,edq_norm_radps,bound_radius\n");
    for (eq, edq) in &plane.points {
        let radius = plane.bound_radius.unwrap_or(f64::NAN);
        plane_csv.push_str(&format!("{eq},{edq},{radius}\n"));
    }
    std::fs::write(out_dir.join("error_plane.csv"), plane_csv)
        .map_err(|e| io_err(out_dir, e))?;

    if !quiet {
        print_run_summary(&stats);
    }
    Ok(SimOutcome { trace, stats, run_dir: out_dir.to_path_buf() })
}

pub fn print_run_summary(stats: &RunStats) {
    println!(
        "run `{}` [{} / {}]: {}",
        stats.name,
        stats.robot,
        stats.controller,
        if stats.status.diverged {
            format!("DIVERGED at t = {:.3} s", stats.status.end_time)
        } else if let Some(err) = &stats.status.controller_error {
            format!("controller stopped: {err}")
        } else {
            format!("completed {:.1} s", stats.status.end_time)
        }
    );
    if let Some(es) = &stats.error_stats {
        for (i, s) in es.actuated.iter().enumerate() {
            println!(
                "  |e_a{}|: {:.4} +/- {:.4} rad (max {:.4})",
                i + 1,
                s.mean_abs,
                s.std_abs,
                s.max_abs
            );
        }
        for (j, s) in es.unactuated.iter().enumerate() {
            println!(
                "  |e_u{}|: {:.4} +/- {:.4} rad (max {:.4})",
                j + 1,
                s.mean_abs,
                s.std_abs,
                s.max_abs
            );
        }
    }
    if let Some(b) = &stats.bound {
        println!(
            "  bound: radius {:.4}, eta {:.3}, Hurwitz {}, fitted c = {:?}",
            b.radius, b.eta, b.hurwitz, b.fitted_c
        );
    }
}
