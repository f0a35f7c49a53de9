//! Aircraft performance envelopes and per-aircraft dynamic state.

use serde::{Deserialize, Serialize};

use crate::geometry::Pose2D;

/// Episode-unique aircraft identifier. Ids are assigned in spawn order,
/// agents first, and stay stable for the whole episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AircraftId(pub u32);

impl std::fmt::Display for AircraftId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Team {
    Agents,
    Opponents,
}

impl Team {
    pub fn other(self) -> Team {
        match self {
            Team::Agents => Team::Opponents,
            Team::Opponents => Team::Agents,
        }
    }
}

/// The two modelled airframes: AC1 is more agile and carries rockets,
/// AC2 trades both for a longer-ranged cannon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AircraftKind {
    Ac1,
    Ac2,
}

impl AircraftKind {
    pub const ALL: [AircraftKind; 2] = [AircraftKind::Ac1, AircraftKind::Ac2];

    pub fn spec(self) -> &'static AircraftTypeSpec {
        match self {
            AircraftKind::Ac1 => &AC1,
            AircraftKind::Ac2 => &AC2,
        }
    }
}

impl std::fmt::Display for AircraftKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AircraftKind::Ac1 => write!(f, "AC1"),
            AircraftKind::Ac2 => write!(f, "AC2"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeaponKind {
    Cannon,
    Rocket,
}

/// Static performance envelope of one airframe type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AircraftTypeSpec {
    pub kind: AircraftKind,
    /// Maximum turn rate [deg/s].
    pub omega_max: f64,
    /// Speed envelope [knots].
    pub v_min: f64,
    pub v_max: f64,
    /// Cannon engagement cone: the shot can connect while the target is
    /// within this many degrees of the nose and inside `wez_range`.
    pub wez_half_angle: f64,
    pub wez_range: f64,
    /// Single-shot kill probability, cannon and rocket alike.
    pub p_hit: f64,
    pub has_rockets: bool,
    pub rocket_count_init: u32,
    pub cannon_count_init: u32,
    /// Steps between consecutive rocket launches.
    pub rocket_cooldown: u32,
    pub rocket_range: f64,
    pub rocket_half_angle: f64,
}

impl AircraftTypeSpec {
    pub fn clamp_speed(&self, speed: f64) -> f64 {
        speed.clamp(self.v_min, self.v_max)
    }

    /// Cone parameters (half-angle [deg], range [km]) for one weapon.
    pub fn envelope(&self, weapon: WeaponKind) -> (f64, f64) {
        match weapon {
            WeaponKind::Cannon => (self.wez_half_angle, self.wez_range),
            WeaponKind::Rocket => (self.rocket_half_angle, self.rocket_range),
        }
    }
}

pub const AC1: AircraftTypeSpec = AircraftTypeSpec {
    kind: AircraftKind::Ac1,
    omega_max: 5.0,
    v_min: 100.0,
    v_max: 900.0,
    wez_half_angle: 10.0,
    wez_range: 2.0,
    p_hit: 0.70,
    has_rockets: true,
    rocket_count_init: 5,
    cannon_count_init: 200,
    rocket_cooldown: 10,
    rocket_range: 7.0,
    rocket_half_angle: 10.0,
};

pub const AC2: AircraftTypeSpec = AircraftTypeSpec {
    kind: AircraftKind::Ac2,
    omega_max: 3.5,
    v_min: 100.0,
    v_max: 600.0,
    wez_half_angle: 7.0,
    wez_range: 4.5,
    p_hit: 0.85,
    has_rockets: false,
    rocket_count_init: 0,
    cannon_count_init: 200,
    rocket_cooldown: 10,
    rocket_range: 7.0,
    rocket_half_angle: 10.0,
};

/// Dynamic state of one aircraft within an episode.
///
/// A destroyed aircraft keeps its last state frozen; no operation mutates
/// it afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AircraftState {
    pub id: AircraftId,
    pub team: Team,
    pub kind: AircraftKind,
    pub pose: Pose2D,
    /// Current speed [knots], always inside the type's envelope.
    pub speed: f64,
    pub cannon_remaining: u32,
    pub rockets_remaining: u32,
    /// Steps until the next rocket may be launched; 0 = ready.
    pub rocket_cooldown_left: u32,
    /// True while the aircraft consumed ammunition this step.
    pub shooting: bool,
    pub alive: bool,
    /// Initial ammunition, kept for observation normalization and rewards.
    pub cannon_initial: u32,
    pub rockets_initial: u32,
}

impl AircraftState {
    pub fn new(
        id: AircraftId,
        team: Team,
        kind: AircraftKind,
        pose: Pose2D,
        speed: f64,
        cannon: u32,
        rockets: u32,
    ) -> Self {
        let spec = kind.spec();
        let rockets = if spec.has_rockets { rockets } else { 0 };
        Self {
            id,
            team,
            kind,
            pose,
            speed: spec.clamp_speed(speed),
            cannon_remaining: cannon,
            rockets_remaining: rockets,
            rocket_cooldown_left: 0,
            shooting: false,
            alive: true,
            cannon_initial: cannon,
            rockets_initial: rockets,
        }
    }

    pub fn spec(&self) -> &'static AircraftTypeSpec {
        self.kind.spec()
    }

    /// Rocket readiness indicator `w`: rockets left and cooldown elapsed.
    pub fn rocket_ready(&self) -> bool {
        self.spec().has_rockets && self.rockets_remaining > 0 && self.rocket_cooldown_left == 0
    }

    /// Total remaining ammunition `c_rem = c1 + c2`.
    pub fn ammo_remaining(&self) -> u32 {
        self.cannon_remaining + self.rockets_remaining
    }

    /// Total initial ammunition `c_max`.
    pub fn ammo_initial(&self) -> u32 {
        self.cannon_initial + self.rockets_initial
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type_specs_match_dynamics_table() {
        assert_eq!(AC1.omega_max, 5.0);
        assert_eq!((AC1.v_min, AC1.v_max), (100.0, 900.0));
        assert_eq!((AC1.wez_half_angle, AC1.wez_range), (10.0, 2.0));
        assert_eq!(AC1.p_hit, 0.70);
        assert_eq!(AC1.has_rockets, true);

        assert_eq!(AC2.omega_max, 3.5);
        assert_eq!((AC2.v_min, AC2.v_max), (100.0, 600.0));
        assert_eq!((AC2.wez_half_angle, AC2.wez_range), (7.0, 4.5));
        assert_eq!(AC2.p_hit, 0.85);
        assert_eq!(AC2.has_rockets, false);
    }

    #[test]
    fn ac2_never_carries_rockets() {
        let pose = Pose2D::new(1.0, 1.0, 0.0).unwrap();
        let s = AircraftState::new(AircraftId(0), Team::Agents, AircraftKind::Ac2, pose, 300.0, 200, 8);
        assert_eq!(s.rockets_remaining, 0);
        assert!(!s.rocket_ready());
    }

    #[test]
    fn speed_clamped_to_envelope_on_construction() {
        let pose = Pose2D::new(1.0, 1.0, 0.0).unwrap();
        let s = AircraftState::new(AircraftId(0), Team::Agents, AircraftKind::Ac2, pose, 900.0, 200, 0);
        assert_eq!(s.speed, 600.0);
    }
}
