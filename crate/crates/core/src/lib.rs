//! Real-time inverse kinematics for floating-base kinematic trees.
//!
//! The main entry point is [`dynamical::step`], which turns one sample of
//! pose and velocity targets into one velocity-level QP solve and a state
//! update. [`instantaneous`] holds iterative baselines and [`harness`]
//! generates streams, computes metrics and runs benchmark grids.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod dynamical;
pub mod harness;
pub mod instantaneous;
pub mod kinematics;
pub mod qp;
pub mod so3;

pub use dynamical::{
    build_limit_constraints, corrected_velocity, pose_residual, step, track, velocity_residual, DynamicalError,
    GainConfig, SolverState, StepReport, TargetSample, TrackOutput,
};
pub use instantaneous::{
    decompose_pairwise, solve_pairwise, solve_velocity, solve_whole_body, InstantaneousConfig, InstantaneousError,
    LmStatus, Subsystem,
};
pub use kinematics::{
    generate_human_chain, load_model, load_model_file, serialize_model, Configuration, HumanDofs, KinematicModel,
    ModelError, Velocity,
};
pub use qp::{LeastSquaresQp, QpError, QpSettings, QpSolution, QpSolver, QpStatus};
pub use so3::{AngularVelocity, BaumgarteConfig, Rotation, So3Error};
