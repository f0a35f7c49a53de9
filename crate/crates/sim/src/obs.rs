//! Observation vectors for the three policy types.
//!
//! Every feature is normalized into `[0, 1]`: positions by the map side,
//! speeds by the observed airframe's maximum, absolute headings by 360,
//! relative angles by 180, distances by the map diagonal, ammunition by its
//! initial count. Absent entities (dead, or none present) leave their block
//! zero-filled.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::aircraft::{AircraftId, AircraftState};
use crate::error::SimError;
use crate::geometry::{angle_off, antenna_train_angle, aspect_angle, distance};
use crate::world::WorldState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Fight,
    Escape,
    Commander,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyKind::Fight => write!(f, "fight"),
            PolicyKind::Escape => write!(f, "escape"),
            PolicyKind::Commander => write!(f, "commander"),
        }
    }
}

/// Normalized feature sequence plus the index ranges of its entity blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub policy_kind: PolicyKind,
    pub features: Vec<f64>,
    pub entity_slices: Vec<Range<usize>>,
}

impl ObservationVector {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Entity blocks as slices, in declaration order (agent first).
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.entity_slices.iter().map(|r| &self.features[r.clone()])
    }
}

struct ObsBuilder {
    features: Vec<f64>,
    slices: Vec<Range<usize>>,
    block_start: usize,
}

impl ObsBuilder {
    fn new() -> Self {
        Self { features: Vec::new(), slices: Vec::new(), block_start: 0 }
    }

    fn push(&mut self, v: f64) {
        debug_assert!((-1e-9..=1.0 + 1e-9).contains(&v), "feature out of [0,1]: {v}");
        self.features.push(v.clamp(0.0, 1.0));
    }

    fn end_block(&mut self) {
        self.slices.push(self.block_start..self.features.len());
        self.block_start = self.features.len();
    }

    fn zero_block(&mut self, width: usize) {
        self.features.resize(self.features.len() + width, 0.0);
        self.end_block();
    }

    fn finish(self, policy_kind: PolicyKind) -> ObservationVector {
        ObservationVector { policy_kind, features: self.features, entity_slices: self.slices }
    }
}

fn norm_pos(v: f64, map: f64) -> f64 {
    v / map
}

fn norm_speed(a: &AircraftState) -> f64 {
    a.speed / a.spec().v_max
}

fn norm_heading(a: &AircraftState) -> f64 {
    a.pose.heading / 360.0
}

fn norm_ammo(remaining: u32, initial: u32) -> f64 {
    if initial == 0 {
        0.0
    } else {
        f64::from(remaining) / f64::from(initial)
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Relative geometry between two distinct alive aircraft, pre-normalized.
struct RelGeom {
    /// Unsigned heading difference / 180.
    off: f64,
    /// `a`'s antenna train angle to `b` / 180.
    ata_ab: f64,
    /// `b`'s antenna train angle to `a` / 180.
    ata_ba: f64,
    /// Aspect of `a` at `b` (0 = `a` behind `b`) / 180.
    aspect_at_b: f64,
    /// Aspect of `b` at `a` (0 = `b` behind `a`) / 180.
    aspect_at_a: f64,
    /// Distance / map diagonal.
    dist: f64,
}

fn rel_geom(a: &AircraftState, b: &AircraftState, map: f64) -> Result<RelGeom, SimError> {
    let diag = map * std::f64::consts::SQRT_2;
    Ok(RelGeom {
        off: angle_off(a.pose.heading, b.pose.heading)? / 180.0,
        ata_ab: antenna_train_angle(&a.pose, b.pose.position())? / 180.0,
        ata_ba: antenna_train_angle(&b.pose, a.pose.position())? / 180.0,
        aspect_at_b: aspect_angle(&a.pose, &b.pose)? / 180.0,
        aspect_at_a: aspect_angle(&b.pose, &a.pose)? / 180.0,
        dist: distance(a.pose.position(), b.pose.position()) / diag,
    })
}

/// Fight block widths: agent, opponent, friendly.
pub fn fight_block_widths(has_rockets: bool) -> [usize; 3] {
    [if has_rockets { 12 } else { 10 }, 9, 8]
}

/// Escape block widths: agent, two opponents, friendly.
pub fn escape_block_widths(has_rockets: bool) -> [usize; 4] {
    [if has_rockets { 6 } else { 5 }, 8, 8, 7]
}

/// Commander block widths: agent, three opponents, two friendlies.
pub const COMMANDER_BLOCK_WIDTHS: [usize; 6] = [4, 9, 9, 9, 4, 4];

/// Observation of the fight policy: the agent itself, the designated
/// opponent, and the closest alive friendly (zero-filled when alone).
pub fn build_fight_obs(
    world: &WorldState,
    agent_id: AircraftId,
    target_id: AircraftId,
) -> Result<ObservationVector, SimError> {
    let agent = world.aircraft_by_id(agent_id)?;
    let target = world.aircraft_by_id(target_id)?;
    if !agent.alive {
        return Err(SimError::DeadAircraft(agent_id));
    }
    if !target.alive {
        return Err(SimError::DeadAircraft(target_id));
    }
    let map = world.map_size;
    let g = rel_geom(agent, target, map)?;
    let mut b = ObsBuilder::new();

    // Agent block: position, speed, heading, geometry w.r.t. the opponent,
    // ammunition, readiness, shooting.
    b.push(norm_pos(agent.pose.x, map));
    b.push(norm_pos(agent.pose.y, map));
    b.push(norm_speed(agent));
    b.push(norm_heading(agent));
    b.push(g.off);
    b.push(g.aspect_at_b); // how close the agent sits to the opponent's six
    b.push(g.ata_ab);
    b.push(g.dist);
    b.push(norm_ammo(agent.cannon_remaining, agent.cannon_initial));
    if agent.spec().has_rockets {
        b.push(norm_ammo(agent.rockets_remaining, agent.rockets_initial));
        b.push(flag(agent.rocket_ready()));
    }
    b.push(flag(agent.shooting));
    b.end_block();

    // Opponent block: mirrored geometry w.r.t. the agent.
    b.push(norm_pos(target.pose.x, map));
    b.push(norm_pos(target.pose.y, map));
    b.push(norm_speed(target));
    b.push(norm_heading(target));
    b.push(g.off);
    b.push(g.aspect_at_a); // how close the opponent sits to the agent's six
    b.push(g.ata_ba);
    b.push(g.dist);
    b.push(flag(target.shooting));
    b.end_block();

    match world.friendlies_by_distance(agent_id)?.first() {
        Some(fr) => {
            let fg = rel_geom(fr, agent, map)?;
            b.push(norm_pos(fr.pose.x, map));
            b.push(norm_pos(fr.pose.y, map));
            b.push(norm_speed(fr));
            b.push(fg.off);
            b.push(fg.ata_ab); // friendly's nose offset toward the agent
            b.push(fg.ata_ba); // agent's nose offset toward the friendly
            b.push(fg.dist);
            b.push(flag(fr.shooting));
            b.end_block();
        }
        None => b.zero_block(8),
    }

    Ok(b.finish(PolicyKind::Fight))
}

/// Observation of the escape policy: the agent, its two closest opponents,
/// and the closest friendly, absent entities zero-filled.
pub fn build_escape_obs(
    world: &WorldState,
    agent_id: AircraftId,
) -> Result<ObservationVector, SimError> {
    let agent = world.aircraft_by_id(agent_id)?;
    if !agent.alive {
        return Err(SimError::DeadAircraft(agent_id));
    }
    let map = world.map_size;
    let mut b = ObsBuilder::new();

    b.push(norm_pos(agent.pose.x, map));
    b.push(norm_pos(agent.pose.y, map));
    b.push(norm_speed(agent));
    b.push(norm_heading(agent));
    b.push(norm_ammo(agent.cannon_remaining, agent.cannon_initial));
    if agent.spec().has_rockets {
        b.push(norm_ammo(agent.rockets_remaining, agent.rockets_initial));
    }
    b.end_block();

    let opponents = world.enemies_by_distance(agent_id)?;
    for slot in 0..2 {
        match opponents.get(slot) {
            Some(op) => {
                let g = rel_geom(op, agent, map)?;
                b.push(norm_pos(op.pose.x, map));
                b.push(norm_pos(op.pose.y, map));
                b.push(norm_speed(op));
                b.push(norm_heading(op));
                b.push(g.off);
                b.push(g.ata_ab); // opponent's nose offset toward the agent
                b.push(g.ata_ba); // agent's nose offset toward the opponent
                b.push(g.dist);
                b.end_block();
            }
            None => b.zero_block(8),
        }
    }

    match world.friendlies_by_distance(agent_id)?.first() {
        Some(fr) => {
            let g = rel_geom(fr, agent, map)?;
            b.push(norm_pos(fr.pose.x, map));
            b.push(norm_pos(fr.pose.y, map));
            b.push(norm_speed(fr));
            b.push(norm_heading(fr));
            b.push(g.ata_ab);
            b.push(g.ata_ba);
            b.push(g.dist);
            b.end_block();
        }
        None => b.zero_block(7),
    }

    Ok(b.finish(PolicyKind::Escape))
}

/// Observation of the commander policy: the agent, its three closest
/// opponents, and its two closest friendlies.
pub fn build_commander_obs(
    world: &WorldState,
    agent_id: AircraftId,
) -> Result<ObservationVector, SimError> {
    let agent = world.aircraft_by_id(agent_id)?;
    if !agent.alive {
        return Err(SimError::DeadAircraft(agent_id));
    }
    let map = world.map_size;
    let mut b = ObsBuilder::new();

    b.push(norm_pos(agent.pose.x, map));
    b.push(norm_pos(agent.pose.y, map));
    b.push(norm_speed(agent));
    b.push(norm_heading(agent));
    b.end_block();

    let opponents = world.enemies_by_distance(agent_id)?;
    for slot in 0..3 {
        match opponents.get(slot) {
            Some(op) => {
                let g = rel_geom(op, agent, map)?;
                b.push(norm_pos(op.pose.x, map));
                b.push(norm_pos(op.pose.y, map));
                b.push(norm_speed(op));
                b.push(norm_heading(op));
                b.push(g.aspect_at_b); // opponent near the agent's six
                b.push(g.aspect_at_a); // agent near the opponent's six
                b.push(g.ata_ab);
                b.push(g.ata_ba);
                b.push(g.dist);
                b.end_block();
            }
            None => b.zero_block(9),
        }
    }

    let friendlies = world.friendlies_by_distance(agent_id)?;
    for slot in 0..2 {
        match friendlies.get(slot) {
            Some(fr) => {
                b.push(norm_pos(fr.pose.x, map));
                b.push(norm_pos(fr.pose.y, map));
                b.push(norm_speed(fr));
                b.push(
                    distance(fr.pose.position(), agent.pose.position())
                        / (map * std::f64::consts::SQRT_2),
                );
                b.end_block();
            }
            None => b.zero_block(4),
        }
    }

    Ok(b.finish(PolicyKind::Commander))
}

/// Number of aircraft slots per team in the centralized critic input.
pub const MAX_TEAM_SLOTS: usize = 5;
/// Width of one critic slot token.
pub const GLOBAL_TOKEN_WIDTH: usize = 15;

/// Global information for the centralized critic: one fixed-width token per
/// aircraft slot (agents first, then opponents, each side sorted by id,
/// padded to [`MAX_TEAM_SLOTS`]), plus an aliveness mask. Dead and empty
/// slots are zeroed and masked out. Each token carries the aircraft's state
/// and its most recently executed action.
pub fn global_state_tokens(world: &WorldState) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut tokens = vec![vec![0.0; GLOBAL_TOKEN_WIDTH]; 2 * MAX_TEAM_SLOTS];
    let mut mask = vec![0.0; 2 * MAX_TEAM_SLOTS];
    let map = world.map_size;

    let mut agents: Vec<&AircraftState> = world.aircraft.iter().collect();
    agents.sort_by_key(|a| a.id);
    let mut slot_of_team = [0usize, 0usize];
    for a in agents {
        let team_idx = match a.team {
            crate::aircraft::Team::Agents => 0,
            crate::aircraft::Team::Opponents => 1,
        };
        let slot = slot_of_team[team_idx];
        if slot >= MAX_TEAM_SLOTS {
            continue;
        }
        slot_of_team[team_idx] += 1;
        let idx = team_idx * MAX_TEAM_SLOTS + slot;
        if !a.alive {
            continue; // masked, zero-filled
        }
        mask[idx] = 1.0;
        let act = world.last_actions.get(&a.id).copied().unwrap_or_default();
        let t = &mut tokens[idx];
        t[0] = 1.0; // alive
        t[1] = team_idx as f64;
        t[2] = match a.kind {
            crate::aircraft::AircraftKind::Ac1 => 0.0,
            crate::aircraft::AircraftKind::Ac2 => 1.0,
        };
        t[3] = norm_pos(a.pose.x, map);
        t[4] = norm_pos(a.pose.y, map);
        t[5] = norm_speed(a);
        t[6] = norm_heading(a);
        t[7] = norm_ammo(a.cannon_remaining, a.cannon_initial);
        t[8] = norm_ammo(a.rockets_remaining, a.rockets_initial);
        t[9] = flag(a.rocket_ready());
        t[10] = flag(a.shooting);
        t[11] = act.heading;
        t[12] = act.speed;
        t[13] = act.cannon;
        t[14] = act.rocket;
    }
    (tokens, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aircraft::{AircraftKind, Team};
    use crate::geometry::Pose2D;
    use crate::scenario::{ScenarioConfig, TypeMix};
    use crate::world::init_episode;

    fn craft(id: u32, team: Team, kind: AircraftKind, x: f64, y: f64, h: f64) -> AircraftState {
        AircraftState::new(AircraftId(id), team, kind, Pose2D::new(x, y, h).unwrap(), 300.0, 200, 5)
    }

    fn duel_world() -> WorldState {
        let a = craft(0, Team::Agents, AircraftKind::Ac2, 15.0, 10.0, 0.0);
        let b = craft(1, Team::Opponents, AircraftKind::Ac1, 15.0, 20.0, 180.0);
        WorldState::from_aircraft(vec![a, b], 30.0, 200, 1)
    }

    #[test]
    fn fight_obs_solo_ac2_length_and_zero_friendly() {
        let world = duel_world();
        let obs = build_fight_obs(&world, AircraftId(0), AircraftId(1)).unwrap();
        assert_eq!(obs.len(), 10 + 9 + 8);
        assert_eq!(obs.entity_slices.len(), 3);
        assert!(obs.features[19..27].iter().all(|&v| v == 0.0), "friendly block zeroed");
    }

    #[test]
    fn fight_obs_ac1_length() {
        let mut world = duel_world();
        world.aircraft.push(craft(2, Team::Agents, AircraftKind::Ac1, 10.0, 10.0, 0.0));
        let obs = build_fight_obs(&world, AircraftId(2), AircraftId(1)).unwrap();
        assert_eq!(obs.len(), 12 + 9 + 8);
    }

    #[test]
    fn target_dead_ahead_has_zero_ata_feature() {
        let world = duel_world();
        let obs = build_fight_obs(&world, AircraftId(0), AircraftId(1)).unwrap();
        // Agent block AC2: [x, y, s, heading, off, aspect, ata, d, c1, s_r]
        assert_eq!(obs.features[6], 0.0, "agent ATA to target");
        assert_eq!(obs.features[4], 1.0, "opposed headings -> angle-off 180/180");
    }

    #[test]
    fn escape_obs_lengths_and_zero_fill() {
        let mut world = duel_world();
        world.aircraft.push(craft(2, Team::Agents, AircraftKind::Ac1, 10.0, 10.0, 0.0));
        let ac2 = build_escape_obs(&world, AircraftId(0)).unwrap();
        assert_eq!(ac2.len(), 5 + 8 + 8 + 7);
        let ac1 = build_escape_obs(&world, AircraftId(2)).unwrap();
        assert_eq!(ac1.len(), 6 + 8 + 8 + 7);
        // Single opponent: second opponent block zero-filled.
        let second = ac1.entity_slices[2].clone();
        assert!(ac1.features[second].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn commander_obs_length() {
        let mut cfg = ScenarioConfig::high_level(3, 3, 400);
        cfg.agents.types = TypeMix::Fixed(vec![AircraftKind::Ac1, AircraftKind::Ac2, AircraftKind::Ac1]);
        cfg.opponents.types = TypeMix::Fixed(vec![AircraftKind::Ac2, AircraftKind::Ac1, AircraftKind::Ac2]);
        let world = init_episode(&cfg, 3).unwrap();
        let obs = build_commander_obs(&world, AircraftId(0)).unwrap();
        assert_eq!(obs.len(), 4 + 3 * 9 + 2 * 4);
        assert_eq!(obs.entity_slices.len(), 6);
    }

    #[test]
    fn commander_obs_zero_fills_missing_opponents() {
        let world = duel_world();
        let obs = build_commander_obs(&world, AircraftId(0)).unwrap();
        for slot in [2, 3] {
            let r = obs.entity_slices[slot].clone();
            assert!(obs.features[r].iter().all(|&v| v == 0.0), "opponent slot {slot} zeroed");
        }
    }

    #[test]
    fn all_features_normalized_over_random_worlds() {
        for seed in 0..50 {
            let cfg = ScenarioConfig::low_level(3, 3, 200);
            let world = init_episode(&cfg, seed).unwrap();
            let agents: Vec<AircraftId> =
                world.alive_of(Team::Agents).map(|a| a.id).collect();
            let target = world.enemies_by_distance(agents[0]).unwrap()[0].id;
            for obs in [
                build_fight_obs(&world, agents[0], target).unwrap(),
                build_escape_obs(&world, agents[0]).unwrap(),
                build_commander_obs(&world, agents[0]).unwrap(),
            ] {
                assert!(
                    obs.features.iter().all(|&v| (0.0..=1.0).contains(&v)),
                    "seed {seed}: feature out of [0,1]"
                );
            }
        }
    }

    #[test]
    fn dead_agent_is_an_error() {
        let mut world = duel_world();
        world.aircraft[0].alive = false;
        assert!(build_escape_obs(&world, AircraftId(0)).is_err());
        assert!(build_fight_obs(&world, AircraftId(1), AircraftId(0)).is_err());
    }

    #[test]
    fn global_tokens_layout() {
        let world = duel_world();
        let (tokens, mask) = global_state_tokens(&world);
        assert_eq!(tokens.len(), 10);
        assert_eq!(mask, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(tokens[0].iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(tokens[5][1], 1.0, "opponent team flag");
    }

    #[test]
    fn global_tokens_zero_dead_slots() {
        let mut world = duel_world();
        world.aircraft[1].alive = false;
        let (tokens, mask) = global_state_tokens(&world);
        assert_eq!(mask[5], 0.0);
        assert!(tokens[5].iter().all(|&v| v == 0.0));
    }
}
