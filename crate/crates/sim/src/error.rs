//! Error type shared by the simulation crate.

use thiserror::Error;

use crate::aircraft::AircraftId;
use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("aircraft {0} is destroyed")]
    DeadAircraft(AircraftId),
    #[error("no such aircraft: {0}")]
    UnknownAircraft(AircraftId),
    #[error("missing command for alive aircraft {0}")]
    MissingCommand(AircraftId),
    #[error("aircraft {0} carries no rockets")]
    NoRockets(AircraftId),
    #[error("invalid action index: {0}")]
    InvalidAction(String),
}
