//! Real-time dynamic trajectories for multirotor racing.
//!
//! A minimum-snap base trajectory ([`poly`]) is deformed on the fly by
//! closed-form Gaussian modifiers ([`lgm`]) whenever the vehicle is too close
//! to the next waypoint to afford a full re-solve. [`dynamic`] decides between
//! the two and stitches regenerated trajectories onto the live one; [`sim`]
//! flies the result through a circuit of moving gates.

// `!(x > 0.0)` is used on purpose: it rejects NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamic;
pub mod error;
pub mod lgm;
pub mod poly;
pub mod sim;

pub use dynamic::{
    ComputationTimeEstimator, DynamicPlanner, DynamicTrajectory, DynamicWaypoint, ModificationOutcome,
    ReferenceSample, SecurityConfig, SolveTimeModel, SolveTiming, WaypointId,
};
pub use error::{Result, TrajError};
pub use lgm::GaussianModifier;
pub use poly::{DynamicsLimits, PiecewisePolynomial, Vec3, WaypointConstraint};
