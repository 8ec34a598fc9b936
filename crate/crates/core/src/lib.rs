//! Constrained control of recurrent-neural-network plants.
//!
//! The crate designs a stabilizing state-feedback gain for a discrete-time
//! RNN plant through semidefinite feasibility with invariant-set and
//! constraint certificates, then layers a trainable, box-projected
//! internal-model-control input on top. The boosting operator family is
//! ℓp-stable for every parameter value, so performance optimisation can
//! never cost stability or constraint satisfaction, including when
//! training stops early.
//!
//! Module map:
//! - [`model`]: the plant class, activations, equilibria, constraint sets
//! - [`synthesis`]: boost-box sizing, the matrix-inequality conditions, and
//!   the escalation procedure returning the gain and certificates
//! - [`certificates`]: decay/gain constants, invariance and ℓp-bound checks
//! - [`imc`]: exogenous-signal reconstruction, box projection, simulation
//! - [`operator`]: the norm-scaled stable operator family with adjoints
//! - [`trainer`]: scenario sampling, the case-study loss, training loop
//! - [`bench`]: synthetic plants, including the `ph-like` preset
//! - [`trajectory`]: time-indexed records and the CSV format

pub mod activation;
pub mod bench;
pub mod certificates;
pub mod error;
pub mod formats;
pub mod imc;
pub mod model;
pub mod operator;
pub mod rng;
pub mod serialize;
pub mod synthesis;
pub mod trainer;
pub mod trajectory;
pub mod verify;

pub use activation::{q_deriv, Activation};
pub use certificates::{
    build_certificate, check_constraints_along, check_lp_bound, check_rpi_montecarlo,
    CheckReport, Ellipsoid, NormIndex, StabilityCertificate,
};
pub use error::{Error, Result};
pub use imc::{
    boost_input, composite_input, mismatch_gain_budget, project_box, project_box_qp_oracle,
    simulate_closed_loop, BoostOperator, ImcState, ReplayOperator, ZeroOperator,
};
pub use model::{ConstraintSets, Equilibrium, RnnModel};
pub use operator::{gain_bound, operator_adjoint, operator_step, StableOperator, StableOperatorParams};
pub use synthesis::{
    assemble_lmis, compute_vbar, init_boost_box, solve_feasibility, synthesize, BoostBox,
    SynthesisOptions, SynthesisResult,
};
pub use trainer::{
    acid_deviation, evaluate_loss, rollout_loss, sample_scenarios, train, train_with_rule,
    Envelope, LossSpec, MomentumRule, OptimizerConfig, ScenarioBatch, TrackingTerm, TrainHistory,
    UpdateRule,
};
pub use trajectory::{Trajectory, TrajectoryStep};
pub use verify::{run_verification, simulate_random_run, VerifyOptions, VerifyReport};
