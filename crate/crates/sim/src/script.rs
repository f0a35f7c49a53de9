//! Non-learning opponent behaviors for the lower curriculum levels.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::actions::{decode_action, DiscreteAction, HEADING_BINS, SPEED_BINS};
use crate::aircraft::{AircraftId, AircraftState, WeaponKind};
use crate::error::SimError;
use crate::geometry::{bearing, distance, wrap_angle};
use crate::world::{in_wez, ManeuverCommand, WorldState};

/// Default probability of breaking off into an escape burst, per decision.
pub const ESCAPE_PROBABILITY: f64 = 0.05;
/// Length of one escape burst in steps.
pub const ESCAPE_BURST_STEPS: u32 = 20;
/// Inside this range the pursuit throttles back proportionally to distance.
const FULL_SPEED_RANGE_KM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptMode {
    Pursue,
    Escape,
}

/// Per-opponent state of the scripted behavior.
#[derive(Debug, Clone)]
pub struct ScriptState {
    pub mode: ScriptMode,
    pub escape_steps_left: u32,
    pub rng: ChaCha8Rng,
    pub escape_probability: f64,
}

impl ScriptState {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self {
            mode: ScriptMode::Pursue,
            escape_steps_left: 0,
            rng,
            escape_probability: ESCAPE_PROBABILITY,
        }
    }
}

/// L1 behavior: hold heading at minimum speed, never fire.
pub fn static_policy(state: &AircraftState) -> ManeuverCommand {
    ManeuverCommand {
        target_heading: state.pose.heading,
        target_speed: state.spec().v_min,
        fire_cannon: false,
        fire_rocket: false,
    }
}

/// L2 behavior: a uniformly random valid discrete action.
pub fn random_policy(state: &AircraftState, rng: &mut ChaCha8Rng) -> ManeuverCommand {
    let heading_idx = rng.gen_range(0..HEADING_BINS);
    let speed_idx = rng.gen_range(0..SPEED_BINS);
    let cannon = rng.gen_range(0..2usize);
    let rocket = if state.spec().has_rockets { rng.gen_range(0..2usize) } else { 0 };
    let action = DiscreteAction {
        heading_idx: heading_idx as i8 - 6,
        speed_idx: speed_idx as u8,
        cannon: cannon == 1,
        rocket: rocket == 1,
    };
    decode_action(&action, state).expect("random action over the valid grid always decodes")
}

/// L3 behavior: pure pursuit of the closest enemy, firing whenever it sits
/// inside an envelope, with occasional fixed-length escape bursts straight
/// away from the threat.
pub fn script_policy(
    world: &WorldState,
    self_id: AircraftId,
    script: &mut ScriptState,
) -> Result<ManeuverCommand, SimError> {
    let me = world.aircraft_by_id(self_id)?;
    if !me.alive {
        return Err(SimError::DeadAircraft(self_id));
    }
    let enemies = world.enemies_by_distance(self_id)?;
    let Some(closest) = enemies.first() else {
        return Ok(ManeuverCommand::hold(me));
    };
    let spec = me.spec();
    let los = bearing(me.pose.position(), closest.pose.position())?;
    let d = distance(me.pose.position(), closest.pose.position());

    if script.mode == ScriptMode::Escape {
        script.escape_steps_left -= 1;
        if script.escape_steps_left == 0 {
            script.mode = ScriptMode::Pursue;
        }
        return Ok(ManeuverCommand {
            target_heading: wrap_angle(los + 180.0)?,
            target_speed: spec.v_max,
            fire_cannon: false,
            fire_rocket: false,
        });
    }

    if script.rng.gen::<f64>() < script.escape_probability {
        script.mode = ScriptMode::Escape;
        script.escape_steps_left = ESCAPE_BURST_STEPS;
        return Ok(ManeuverCommand {
            target_heading: wrap_angle(los + 180.0)?,
            target_speed: spec.v_max,
            fire_cannon: false,
            fire_rocket: false,
        });
    }

    // Pursue: chase the line of sight; slow down when close so the limited
    // turn rate can keep the nose on target.
    let target_speed = if d > FULL_SPEED_RANGE_KM {
        spec.v_max
    } else {
        spec.clamp_speed(spec.v_min + d / FULL_SPEED_RANGE_KM * (spec.v_max - spec.v_min))
    };
    Ok(ManeuverCommand {
        target_heading: los,
        target_speed,
        fire_cannon: in_wez(me, closest.pose.position(), WeaponKind::Cannon),
        fire_rocket: spec.has_rockets
            && me.rocket_ready()
            && in_wez(me, closest.pose.position(), WeaponKind::Rocket),
    })
}
