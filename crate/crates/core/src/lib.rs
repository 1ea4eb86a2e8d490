#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Inertial Newton optimization for nonsmooth finite-sum objectives.
//!
//! The crate provides the INDIAN iteration together with the objectives and
//! baselines it is compared against, a small reverse-mode differentiator for
//! multilayer perceptrons, the continuous-time flow with its Lyapunov energies,
//! and an experiment harness that writes CSV traces and SVG plots.

pub mod autodiff;
pub mod dynamics;
pub mod harness;
pub mod numkit;
pub mod objective;
pub mod optim;

pub use autodiff::{Activation, Loss, MlpObjective, MlpSpec, OutputTransform, Sample};
pub use dynamics::{euler_flow, fit_rate, lyapunov, Energies, FlowTrajectory, RateFitResult};
pub use numkit::{axpby, dot, norm2, NumError, ParamVector, Rng};
pub use objective::{
    residual_to_s, sample_batch, Batch, Evaluation, FiniteSum, Objective, ObjectiveError, PowerAbs, Quadratic,
    RosenbrockNs,
};
pub use optim::{
    check_schedule_admissible, indian_init, indian_step, Admissibility, HyperParams, OptimError, OptimState,
    Optimizer, OptimizerKind, StepSchedule,
};
