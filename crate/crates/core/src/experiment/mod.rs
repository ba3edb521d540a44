//! Experiment orchestration: configuration files, scenario builders, and
//! the collect / train / check / simulate / report pipeline used by the
//! command-line front end and the acceptance suite.

mod config;
mod pipeline;
mod report;

pub use config::{
    ConfigError, ControllerKind, ControllerSection, ExperimentConfig, ExperimentSection,
    GainsSection, GpSection, Nominal, NominalKind, Plant, RobotKind,
};
pub use pipeline::{
    build_controller, build_gp_dynamics, cmd_check, cmd_collect, cmd_simulate, cmd_train,
    load_trained_model, print_run_summary, BoundSummary, ChannelTrainSummary, DatasetFile,
    DatasetMeta, PipelineError, RunStats, SimOutcome, TrainedModel, TrainedModelFile,
    TOOLKIT_VERSION,
};
pub use report::{cmd_report, ReportSummary};
