//! Reward terms for the three policy types.
//!
//! There is no per-time-step reward for the fight policy: everything comes
//! from kills, boundary exits and friendly kills. The escape policy earns a
//! small per-step term driven by the distance to the nearest opponent. The
//! commander earns kill/death credit over a macro step plus a bonus for
//! commanding an attack out of a favorable position.

use serde::{Deserialize, Serialize};

use crate::actions::CommanderAction;
use crate::aircraft::AircraftId;
use crate::error::SimError;
use crate::geometry::{antenna_train_angle, aspect_angle, distance};
use crate::world::{CombatEvent, EventKind, WorldState};

pub const BOUNDARY_PENALTY: f64 = -5.0;
pub const FRIENDLY_KILL_PENALTY: f64 = -2.0;
pub const ESCAPE_NEAR_KM: f64 = 6.0;
pub const ESCAPE_FAR_KM: f64 = 13.0;
pub const ESCAPE_STEP_REWARD: f64 = 0.01;
pub const COMMANDER_FAVORABLE_BONUS: f64 = 0.1;
pub const FAVORABLE_DISTANCE_KM: f64 = 5.0;
pub const FAVORABLE_ATA_DEG: f64 = 30.0;
pub const FAVORABLE_ASPECT_DEG: f64 = 50.0;

/// Itemized reward for one agent over one (low-level or macro) step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub kill_term: f64,
    pub escape_term: f64,
    pub boundary_term: f64,
    pub friendly_term: f64,
    pub commander_kill_term: f64,
    pub commander_favorable_term: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.kill_term
            + self.escape_term
            + self.boundary_term
            + self.friendly_term
            + self.commander_kill_term
            + self.commander_favorable_term
    }
}

fn boundary_and_friendly(agent_id: AircraftId, events: &[CombatEvent]) -> (f64, f64) {
    let mut boundary = 0.0;
    let mut friendly = 0.0;
    for e in events {
        match e.kind {
            EventKind::OutOfBounds if e.victim == Some(agent_id) => boundary += BOUNDARY_PENALTY,
            EventKind::FriendlyKill if e.shooter == Some(agent_id) => {
                friendly += FRIENDLY_KILL_PENALTY
            }
            _ => {}
        }
    }
    (boundary, friendly)
}

/// Fight reward over one step. Each kill scores the victim's antenna train
/// angle toward the agent (1 when shot squarely in the back) plus the
/// fraction of ammunition already spent; `c_max` is the agent's initial
/// cannon plus rocket count.
pub fn fight_reward(
    world: &WorldState,
    agent_id: AircraftId,
    events: &[CombatEvent],
    c_max: u32,
) -> Result<RewardBreakdown, SimError> {
    let agent = world.aircraft_by_id(agent_id)?;
    let mut kill_term = 0.0;
    for e in events {
        if e.kind == EventKind::Kill && e.shooter == Some(agent_id) {
            let victim = world.aircraft_by_id(e.victim.expect("kill carries victim"))?;
            // The victim's state froze at the kill instant.
            let ata = antenna_train_angle(&victim.pose, agent.pose.position())? / 180.0;
            let spent = if c_max == 0 {
                0.0
            } else {
                f64::from(c_max - agent.ammo_remaining().min(c_max)) / f64::from(c_max)
            };
            kill_term += ata + spent;
        }
    }
    let (boundary_term, friendly_term) = boundary_and_friendly(agent_id, events);
    Ok(RewardBreakdown { kill_term, boundary_term, friendly_term, ..Default::default() })
}

/// Escape reward over one step: -0.01 with an alive opponent closer than
/// 6 km, +0.01 with all of them beyond 13 km (vacuously true when none are
/// left), 0 otherwise. Both thresholds themselves fall in the 0 branch.
pub fn escape_reward(
    world: &WorldState,
    agent_id: AircraftId,
    events: &[CombatEvent],
) -> Result<RewardBreakdown, SimError> {
    let agent = world.aircraft_by_id(agent_id)?;
    let nearest = world
        .alive_of(agent.team.other())
        .map(|o| distance(agent.pose.position(), o.pose.position()))
        .fold(f64::INFINITY, f64::min);
    let escape_term = if nearest < ESCAPE_NEAR_KM {
        -ESCAPE_STEP_REWARD
    } else if nearest > ESCAPE_FAR_KM {
        ESCAPE_STEP_REWARD
    } else {
        0.0
    };
    let (boundary_term, friendly_term) = boundary_and_friendly(agent_id, events);
    Ok(RewardBreakdown { escape_term, boundary_term, friendly_term, ..Default::default() })
}

/// True when the agent holds a favorable attacking position against
/// `target`: inside 5 km, nose within 30 degrees of the target, and within
/// 50 degrees of the target's tail. All comparisons strict.
pub fn favorable_position(
    world: &WorldState,
    agent_id: AircraftId,
    target_id: AircraftId,
) -> Result<bool, SimError> {
    let agent = world.aircraft_by_id(agent_id)?;
    let target = world.aircraft_by_id(target_id)?;
    let d = distance(agent.pose.position(), target.pose.position());
    if d == 0.0 {
        return Ok(false);
    }
    let ata = antenna_train_angle(&agent.pose, target.pose.position())?;
    let aspect = aspect_angle(&agent.pose, &target.pose)?;
    Ok(d < FAVORABLE_DISTANCE_KM && ata < FAVORABLE_ATA_DEG && aspect < FAVORABLE_ASPECT_DEG)
}

/// Commander reward for one macro step of one agent. `decision_world` is
/// the state at decision time (the favorable bonus is judged there, against
/// the designated target), `macro_events` the concatenated events of the
/// low-level steps executed under the decision.
pub fn commander_reward(
    decision_world: &WorldState,
    agent_id: AircraftId,
    action: CommanderAction,
    macro_events: &[CombatEvent],
) -> Result<RewardBreakdown, SimError> {
    let mut commander_kill_term = 0.0;
    let mut boundary_term = 0.0;
    for e in macro_events {
        match e.kind {
            EventKind::Kill => {
                if e.shooter == Some(agent_id) {
                    commander_kill_term += 1.0;
                }
                if e.victim == Some(agent_id) {
                    commander_kill_term -= 1.0;
                }
            }
            EventKind::FriendlyKill if e.victim == Some(agent_id) => commander_kill_term -= 1.0,
            EventKind::OutOfBounds if e.victim == Some(agent_id) => {
                // Boundary deaths count both as a death and as the exit penalty.
                commander_kill_term -= 1.0;
                boundary_term += BOUNDARY_PENALTY;
            }
            _ => {}
        }
    }

    let mut commander_favorable_term = 0.0;
    if let Some(rank) = action.target_rank() {
        let enemies = decision_world.enemies_by_distance(agent_id)?;
        // Fall back to the closest opponent when fewer than `rank` are alive.
        let target = enemies.get(rank - 1).or_else(|| enemies.first());
        if let Some(target) = target {
            if favorable_position(decision_world, agent_id, target.id)? {
                commander_favorable_term = COMMANDER_FAVORABLE_BONUS;
            }
        }
    }

    Ok(RewardBreakdown {
        commander_kill_term,
        commander_favorable_term,
        boundary_term,
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aircraft::{AircraftKind, AircraftState, Team};
    use crate::geometry::Pose2D;

    fn craft(id: u32, team: Team, kind: AircraftKind, x: f64, y: f64, h: f64) -> AircraftState {
        AircraftState::new(AircraftId(id), team, kind, Pose2D::new(x, y, h).unwrap(), 300.0, 200, 5)
    }

    fn kill(shooter: u32, victim: u32) -> CombatEvent {
        CombatEvent {
            kind: EventKind::Kill,
            shooter: Some(AircraftId(shooter)),
            victim: Some(AircraftId(victim)),
            step: 0,
        }
    }

    #[test]
    fn kill_reward_formula() {
        // Victim heading north, agent directly south of it: the victim's ATA
        // toward the agent is 180, the most favorable geometry.
        let mut agent = craft(0, Team::Agents, AircraftKind::Ac1, 10.0, 5.0, 0.0);
        agent.cannon_remaining = 147;
        agent.rockets_remaining = 3; // 55 of 205 rounds spent in total
        let mut victim = craft(1, Team::Opponents, AircraftKind::Ac2, 10.0, 10.0, 0.0);
        victim.alive = false;
        let world = WorldState::from_aircraft(vec![agent, victim], 30.0, 200, 1);
        let r = fight_reward(&world, AircraftId(0), &[kill(0, 1)], 205).unwrap();
        assert!((r.kill_term - (1.0 + 55.0 / 205.0)).abs() < 1e-12);
        assert_eq!(r.total(), r.kill_term);
    }

    #[test]
    fn boundary_and_friendly_penalties_fire_once_each() {
        let agent = craft(0, Team::Agents, AircraftKind::Ac1, 10.0, 5.0, 0.0);
        let other = craft(1, Team::Agents, AircraftKind::Ac2, 10.0, 10.0, 0.0);
        let world = WorldState::from_aircraft(vec![agent, other], 30.0, 200, 1);
        let events = vec![
            CombatEvent {
                kind: EventKind::OutOfBounds,
                shooter: None,
                victim: Some(AircraftId(0)),
                step: 3,
            },
            CombatEvent {
                kind: EventKind::FriendlyKill,
                shooter: Some(AircraftId(0)),
                victim: Some(AircraftId(1)),
                step: 3,
            },
        ];
        let r = fight_reward(&world, AircraftId(0), &events, 205).unwrap();
        assert_eq!(r.boundary_term, -5.0);
        assert_eq!(r.friendly_term, -2.0);
        assert_eq!(r.total(), -7.0);
    }

    #[test]
    fn no_events_no_reward() {
        let agent = craft(0, Team::Agents, AircraftKind::Ac1, 10.0, 5.0, 0.0);
        let world = WorldState::from_aircraft(vec![agent], 30.0, 200, 1);
        let r = fight_reward(&world, AircraftId(0), &[], 205).unwrap();
        assert_eq!(r.total(), 0.0);
    }

    fn escape_world(d: f64) -> WorldState {
        let agent = craft(0, Team::Agents, AircraftKind::Ac1, 10.0, 10.0, 0.0);
        let opp = craft(1, Team::Opponents, AircraftKind::Ac2, 10.0, 10.0 + d, 0.0);
        WorldState::from_aircraft(vec![agent, opp], 50.0, 200, 1)
    }

    #[test]
    fn escape_branch_table() {
        for (d, want) in [(5.9, -0.01), (6.0, 0.0), (9.0, 0.0), (13.0, 0.0), (13.1, 0.01)] {
            let world = escape_world(d);
            let r = escape_reward(&world, AircraftId(0), &[]).unwrap();
            assert_eq!(r.escape_term, want, "distance {d}");
        }
    }

    #[test]
    fn escape_with_no_opponents_left_counts_as_far() {
        let mut world = escape_world(9.0);
        world.aircraft[1].alive = false;
        let r = escape_reward(&world, AircraftId(0), &[]).unwrap();
        assert_eq!(r.escape_term, 0.01);
    }

    fn commander_world(d: f64, agent_heading: f64, target_heading: f64) -> WorldState {
        // Agent south of the target, both positions on the y axis.
        let agent = craft(0, Team::Agents, AircraftKind::Ac1, 25.0, 25.0 - d, agent_heading);
        let target = craft(1, Team::Opponents, AircraftKind::Ac2, 25.0, 25.0, target_heading);
        WorldState::from_aircraft(vec![agent, target], 50.0, 400, 1)
    }

    #[test]
    fn favorable_bonus_requires_all_conjuncts() {
        // Agent nose-on behind the target: ATA 0, aspect 0, d = 4.
        let world = commander_world(4.0, 0.0, 0.0);
        let fight = CommanderAction::new(1).unwrap();
        let r = commander_reward(&world, AircraftId(0), fight, &[]).unwrap();
        assert_eq!(r.commander_favorable_term, 0.1);

        // Same geometry, escape chosen: the bonus needs an attack order.
        let escape = CommanderAction::new(0).unwrap();
        let r = commander_reward(&world, AircraftId(0), escape, &[]).unwrap();
        assert_eq!(r.commander_favorable_term, 0.0);

        // Too far.
        let world = commander_world(5.5, 0.0, 0.0);
        let r = commander_reward(&world, AircraftId(0), fight, &[]).unwrap();
        assert_eq!(r.commander_favorable_term, 0.0);

        // Head-on: aspect 180 breaks the tail conjunct.
        let world = commander_world(4.0, 0.0, 180.0);
        let r = commander_reward(&world, AircraftId(0), fight, &[]).unwrap();
        assert_eq!(r.commander_favorable_term, 0.0);
    }

    #[test]
    fn commander_kill_and_death_credit() {
        let world = commander_world(4.0, 0.0, 0.0);
        let fight = CommanderAction::new(1).unwrap();
        let events = vec![kill(0, 1), kill(1, 0)];
        let r = commander_reward(&world, AircraftId(0), fight, &events).unwrap();
        assert_eq!(r.commander_kill_term, 0.0, "+1 for the kill, -1 for dying");
        assert_eq!(r.commander_favorable_term, 0.1);
        assert_eq!(r.total(), 0.1);
    }

    #[test]
    fn breakdown_total_is_sum_of_parts() {
        let r = RewardBreakdown {
            kill_term: 1.3,
            escape_term: -0.01,
            boundary_term: -5.0,
            friendly_term: -2.0,
            commander_kill_term: 1.0,
            commander_favorable_term: 0.1,
        };
        assert_eq!(r.total(), 1.3 + -0.01 + -5.0 + -2.0 + 1.0 + 0.1);
    }
}
