#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asymptotics;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod ground;
mod linalg;
pub mod operator;
pub mod stepper;

pub use error::{Error, Result};
pub use linalg::signed_pow;
pub use operator::{
    apply_operator, build_form, dual_norm, gagliardo_energy, lp_norm, principal_eigenpair,
    Domain1D, Eigenpair, FlowParams, NonlocalForm, SpatialField,
};
pub use stepper::{
    implicit_step, run_evolution, run_pair, step_pair_coupled, Evolution, StepRecord,
    StepSolution, StepperConfig, Trajectory, VariableChoice, DEFAULT_EXT_TOL,
};
