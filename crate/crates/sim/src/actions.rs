//! Discrete action spaces of the low-level and commander policies, and
//! their decoding into maneuver commands.

use serde::{Deserialize, Serialize};

use crate::aircraft::{AircraftKind, AircraftState};
use crate::error::SimError;
use crate::geometry::wrap_angle;
use crate::world::ManeuverCommand;

/// Number of heading bins: h in {-6, ..., 6}.
pub const HEADING_BINS: usize = 13;
/// Number of speed bins: v in {0, ..., 8}.
pub const SPEED_BINS: usize = 9;
/// Degrees of turn per heading bin.
pub const TURN_PER_BIN: f64 = 15.0;

/// One low-level action: turn selection, speed selection, trigger flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteAction {
    /// In `{-6, ..., 6}`; positive turns right-to-left per the decode rule.
    pub heading_idx: i8,
    /// In `{0, ..., 8}`, linearly spanning the type's speed envelope.
    pub speed_idx: u8,
    pub cannon: bool,
    /// Always false for AC2.
    pub rocket: bool,
}

impl DiscreteAction {
    /// Builds the action from per-head categorical indices, where head 0 is
    /// the heading bin (0 maps to -6), head 1 the speed bin, heads 2 and 3
    /// the trigger flags.
    pub fn from_indices(indices: &[usize], kind: AircraftKind) -> Result<Self, SimError> {
        let expected = head_sizes(kind).len();
        if indices.len() != expected {
            return Err(SimError::InvalidAction(format!(
                "{} indices for {kind} (want {expected})",
                indices.len()
            )));
        }
        if indices[0] >= HEADING_BINS || indices[1] >= SPEED_BINS {
            return Err(SimError::InvalidAction(format!("indices out of range: {indices:?}")));
        }
        Ok(Self {
            heading_idx: indices[0] as i8 - 6,
            speed_idx: indices[1] as u8,
            cannon: indices[2] == 1,
            rocket: kind.spec().has_rockets && indices.get(3) == Some(&1),
        })
    }
}

/// Actor head cardinalities for the low-level policies of one airframe.
pub fn head_sizes(kind: AircraftKind) -> Vec<usize> {
    match kind {
        AircraftKind::Ac1 => vec![HEADING_BINS, SPEED_BINS, 2, 2],
        AircraftKind::Ac2 => vec![HEADING_BINS, SPEED_BINS, 2],
    }
}

/// Commander head cardinality: 0 = escape, k = fight the k-th closest opponent.
pub const COMMANDER_CHOICES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommanderAction {
    pub choice: u8,
}

impl CommanderAction {
    pub fn new(choice: u8) -> Result<Self, SimError> {
        if (choice as usize) < COMMANDER_CHOICES {
            Ok(Self { choice })
        } else {
            Err(SimError::InvalidAction(format!("commander choice {choice}")))
        }
    }

    pub fn is_escape(&self) -> bool {
        self.choice == 0
    }

    /// 1-based rank of the designated opponent when fighting.
    pub fn target_rank(&self) -> Option<usize> {
        (!self.is_escape()).then_some(self.choice as usize)
    }
}

/// Decodes a discrete action against the current state: the new target
/// heading is `heading - 15 * h`, the target speed interpolates the type's
/// envelope, and the trigger flags pass through.
pub fn decode_action(a: &DiscreteAction, state: &AircraftState) -> Result<ManeuverCommand, SimError> {
    let spec = state.spec();
    if a.rocket && !spec.has_rockets {
        return Err(SimError::NoRockets(state.id));
    }
    if !(-6..=6).contains(&a.heading_idx) || a.speed_idx > 8 {
        return Err(SimError::InvalidAction(format!("{a:?}")));
    }
    let target_heading = wrap_angle(state.pose.heading - TURN_PER_BIN * f64::from(a.heading_idx))?;
    let frac = f64::from(a.speed_idx) / (SPEED_BINS as f64 - 1.0);
    let target_speed = spec.v_min + frac * (spec.v_max - spec.v_min);
    Ok(ManeuverCommand {
        target_heading,
        target_speed,
        fire_cannon: a.cannon,
        fire_rocket: a.rocket,
    })
}
