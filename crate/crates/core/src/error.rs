use thiserror::Error;

use crate::dynamic::WaypointId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("derivative order {order} is not supported (maximum {max})")]
    InvalidOrder { order: usize, max: usize },

    #[error("constraint system is singular or ill-conditioned at segment {segment}")]
    Singular { segment: usize },

    #[error("modification of waypoint {id} arrived at its own crossing time")]
    TooLate { id: WaypointId },

    #[error("unknown waypoint id {0}")]
    UnknownWaypoint(WaypointId),

    #[error("waypoint {id} was already passed (t_w = {t_w}, now = {t_now})")]
    AlreadyPassed { id: WaypointId, t_w: f64, t_now: f64 },
}

pub type Result<T, E = TrajError> = std::result::Result<T, E>;
