//! Deterministic 2D air-to-air combat simulation.
//!
//! Two airframe types fight on a square map: the agile, rocket-carrying AC1
//! and the longer-ranged but slower AC2. The crate owns engagement geometry,
//! flight kinematics with turn-rate limits, conical weapon engagement zones
//! with probabilistic hit resolution, scenario setup, policy observations
//! and rewards, and the scripted opponents used by the training curriculum.
//!
//! Determinism contract: a world seeded identically and driven by identical
//! command sequences reproduces bit-identical states and event logs.

pub mod actions;
pub mod aircraft;
pub mod error;
pub mod geometry;
pub mod obs;
pub mod rewards;
pub mod scenario;
pub mod script;
pub mod world;

pub use actions::{decode_action, CommanderAction, DiscreteAction};
pub use aircraft::{AircraftId, AircraftKind, AircraftState, AircraftTypeSpec, Team, WeaponKind};
pub use error::SimError;
pub use geometry::{EngagementGeometry, Pose2D};
pub use obs::{ObservationVector, PolicyKind};
pub use rewards::RewardBreakdown;
pub use scenario::ScenarioConfig;
pub use world::{
    advance, check_boundary, init_episode, CombatEvent, EventKind, ManeuverCommand, Outcome,
    WorldState,
};
