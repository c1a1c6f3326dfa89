//! Formation maneuver control for leader-follower multi-agent systems with
//! m-th order integrator dynamics.
//!
//! The crate builds the pieces needed to run a closed-loop formation maneuver:
//!
//! - [`formation`]: displacement constraints from a nominal configuration, the
//!   follower matrix with its leader/follower partition, localizability, and
//!   the positive-definite-compatible variants used by the follower controllers.
//! - [`maneuver`]: piecewise-smooth scale/rotation/translation/shape plans with
//!   analytic time derivatives of any order, and the shape constraint solver.
//! - [`gains`]: integrator-chain plant matrices, pole placement for the leader
//!   gain vector, Riccati-based solutions of the two gain inequalities, the
//!   leader input bound, and the coupling gains.
//! - [`agents`]: the plant right-hand side, the observer-based leader tracking
//!   controller, and the follower controller variants.
//! - [`sim`]: fixed-step integration of the coupled system, tracking errors,
//!   and runtime bound checks.

pub mod agents;
pub mod error;
pub mod formation;
pub mod gains;
pub mod linalg;
pub mod maneuver;
pub mod sim;

pub use error::{Error, Result};
pub use formation::{
    assemble_follower_matrix, build_constraints, check_localizable, compute_displacement_parameters,
    derive_variants, edge_weights, DisplacementConstraint, FollowerMatrixSet,
    LocalizabilityCertificate, NominalFormation,
};
pub use gains::{
    build_plant, companion_matrix, design_beta, select_coupling_gains, solve_output_lmi,
    solve_state_lmi, synthesize, CouplingGains, FollowerVariant, GainSet, OutputSpec,
    PlantMatrices,
};
pub use maneuver::{
    derivative_bounds, desired_follower_states, desired_formation, desired_leader_state,
    desired_position_jet, solve_shape, solve_shape_point, DesiredState, ManeuverPlan,
    RotationSpec, ScalarFn, Segment, ShapeSolution, Sinusoid,
};
pub use sim::{
    follower_error_stack, run_scenario, tracking_errors, verify_bounds, BoundReport, ErrorSummary,
    InitialState, Integrator, ObserverInit, SimConfig, SimTrace,
};
