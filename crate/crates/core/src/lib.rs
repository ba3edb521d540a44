//! Control and simulation toolkit for underactuated balance robots.
//!
//! The crate provides:
//!
//! - rigid-body models of two balance testbeds (a rotary inverted pendulum
//!   and a three-link balance leg) plus the closed-form nominal surrogates
//!   used by the learning-based controllers ([`dynamics`]);
//! - per-channel Gaussian-process regression with ARD kernels,
//!   marginal-likelihood training and high-probability error constants
//!   ([`gp`]);
//! - the classic external/internal convertible (EIC) controller, balance
//!   equilibrium manifold (BEM) solvers, and the singular-value analysis
//!   exposing its uncontrolled-motion subspace ([`eic`]);
//! - the partial-EIC (PEIC) controller over a GP-enhanced dynamics model
//!   with variance-adaptive gains and a closed-loop error-bound calculator
//!   ([`peic`]);
//! - a fixed-step simulator, excitation-based data collection and trace
//!   post-processing ([`sim`]);
//! - experiment orchestration: configs, scenario presets and the
//!   collect/train/check/simulate/report pipeline ([`experiment`]).

pub mod dynamics;
pub mod eic;
pub mod experiment;
pub mod gp;
pub mod peic;
pub mod sim;
