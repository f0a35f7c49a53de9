//! Hierarchical control loop: the commander assigns fight/escape options to
//! each agent, low-level policies execute them for up to ten steps, and any
//! trigger event hands control back to the commander.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use aircombat_sim::actions::{decode_action, CommanderAction, DiscreteAction};
use aircombat_sim::aircraft::{AircraftId, AircraftKind, Team};
use aircombat_sim::geometry::{antenna_train_angle, distance};
use aircombat_sim::obs::{
    build_commander_obs, build_escape_obs, build_fight_obs, global_state_tokens, ObservationVector,
    PolicyKind,
};
use aircombat_sim::rewards::{
    commander_reward, escape_reward, favorable_position, fight_reward, FAVORABLE_ATA_DEG,
    FAVORABLE_DISTANCE_KM,
};
use aircombat_sim::scenario::ScenarioConfig;
use aircombat_sim::world::{advance, init_episode, CombatEvent, EventKind, ManeuverCommand, Outcome, WorldState};

use crate::error::RlError;
use crate::league::LeagueRegistry;
use crate::nn::{forward_actor, forward_critic, PolicyFamily, RecurrentState};
use crate::ppo::{ppo_update, Adam, RolloutBuffer, TrainConfig, Transition};
use crate::rollout::derive_seed;

/// Commander decisions per episode.
pub const MACRO_HORIZON: usize = 40;
/// Low-level steps per option before control returns to the commander.
pub const OPTION_BUDGET: u32 = 10;
/// Trigger distance to the nearest map edge.
pub const NEAR_BOUNDARY_KM: f64 = 6.0;
/// Probability that an opponent picks fight over escape at a macro boundary.
pub const OPPONENT_FIGHT_PROB: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    AircraftDestroyed,
    NearBoundary,
    FavorableSituation,
    TwoOnOneThreat,
}

/// A condition that forces a fresh commander decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub kind: TriggerKind,
    pub subjects: Vec<AircraftId>,
}

/// Evaluates all four trigger predicates: destructions from the step's
/// combat events, plus the geometric conditions over the current world.
pub fn detect_events(world: &WorldState, step_events: &[CombatEvent]) -> Vec<TriggerEvent> {
    let mut out = Vec::new();

    for e in step_events {
        if matches!(e.kind, EventKind::Kill | EventKind::FriendlyKill | EventKind::OutOfBounds) {
            out.push(TriggerEvent {
                kind: TriggerKind::AircraftDestroyed,
                subjects: vec![e.victim.expect("destruction carries a victim")],
            });
        }
    }

    let map = world.map_size;
    for a in world.alive_of(Team::Agents) {
        let (x, y) = a.pose.position();
        let edge = x.min(map - x).min(y).min(map - y);
        if edge < NEAR_BOUNDARY_KM {
            out.push(TriggerEvent { kind: TriggerKind::NearBoundary, subjects: vec![a.id] });
        }
    }

    // Favorable situation in either direction across the teams.
    for attacker in world.alive() {
        for victim in world.alive() {
            if attacker.team == victim.team {
                continue;
            }
            if favorable_position(world, attacker.id, victim.id).unwrap_or(false) {
                out.push(TriggerEvent {
                    kind: TriggerKind::FavorableSituation,
                    subjects: vec![attacker.id, victim.id],
                });
            }
        }
    }

    for agent in world.alive_of(Team::Agents) {
        let mut threats: Vec<AircraftId> = Vec::new();
        for opp in world.alive_of(Team::Opponents) {
            let d = distance(opp.pose.position(), agent.pose.position());
            if d > 0.0 && d < FAVORABLE_DISTANCE_KM {
                if let Ok(ata) = antenna_train_angle(&opp.pose, agent.pose.position()) {
                    if ata < FAVORABLE_ATA_DEG {
                        threats.push(opp.id);
                    }
                }
            }
        }
        if threats.len() >= 2 {
            let mut subjects = vec![agent.id];
            subjects.extend(threats);
            out.push(TriggerEvent { kind: TriggerKind::TwoOnOneThreat, subjects });
        }
    }

    out
}

/// The option an agent currently executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignedOption {
    Escape,
    Fight { target: AircraftId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionAssignment {
    pub agent: AircraftId,
    pub option: AssignedOption,
    pub started_at: u32,
    pub budget: u32,
}

/// One commander decision and everything that happened under it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MacroTransition {
    pub agent: AircraftId,
    pub obs: ObservationVector,
    pub next_obs: Option<ObservationVector>,
    /// Critic input at decision time.
    pub global_tokens: Vec<Vec<f64>>,
    pub global_mask: Vec<f64>,
    pub choice: u8,
    pub log_prob: f64,
    pub value: f64,
    /// Sum of the agent's per-step low-level reward totals over the option.
    pub low_level_reward: f64,
    /// Commander kill/favorable/boundary terms of this macro step.
    pub commander_terms: f64,
    pub duration: u32,
    pub rnn_before: Vec<f64>,
    pub done: bool,
}

impl MacroTransition {
    pub fn reward(&self) -> f64 {
        self.low_level_reward + self.commander_terms
    }
}

/// Policy bundle for a hierarchical episode. Opponents run the same frozen
/// low-level policies, commanded by a fixed fight/escape mixture.
pub struct HierarchicalSetup<'a> {
    pub commander: &'a PolicyFamily,
    pub fight: &'a PolicyFamily,
    pub escape: &'a PolicyFamily,
    pub opp_fight: &'a PolicyFamily,
    pub opp_escape: &'a PolicyFamily,
    pub opponent_fight_prob: f64,
    pub scenario: &'a ScenarioConfig,
    pub seed: u64,
    /// Stochastic commander and agent options (training) vs greedy (eval).
    pub sample: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OppMode {
    Fight,
    Escape,
}

/// Full record of one hierarchical episode.
#[derive(Debug)]
pub struct HierarchicalRecord {
    pub transitions: Vec<MacroTransition>,
    pub events: Vec<CombatEvent>,
    pub outcome: Outcome,
    pub macro_steps: usize,
    /// Low-level step count of each commander round, in order.
    pub round_durations: Vec<u32>,
    pub low_level_steps: u32,
    pub agent_kinds: BTreeMap<AircraftId, AircraftKind>,
    pub opponent_kinds: BTreeMap<AircraftId, AircraftKind>,
    pub final_world: WorldState,
}

struct EpisodeState<'a> {
    setup: &'a HierarchicalSetup<'a>,
    world: WorldState,
    hidden: BTreeMap<AircraftId, RecurrentState>,
    commander_rng: ChaCha8Rng,
    agent_rng: ChaCha8Rng,
    opponent_rng: ChaCha8Rng,
    events: Vec<CombatEvent>,
    low_level_steps: u32,
}

impl<'a> EpisodeState<'a> {
    fn new(setup: &'a HierarchicalSetup<'a>) -> Result<Self, RlError> {
        let world = init_episode(setup.scenario, derive_seed(setup.seed, 1, 0))?;
        let hidden = world
            .alive_of(Team::Agents)
            .map(|a| (a.id, RecurrentState::zeros(&setup.commander.cfg)))
            .collect();
        Ok(Self {
            setup,
            world,
            hidden,
            commander_rng: ChaCha8Rng::seed_from_u64(derive_seed(setup.seed, 6, 0)),
            agent_rng: ChaCha8Rng::seed_from_u64(derive_seed(setup.seed, 5, 0)),
            opponent_rng: ChaCha8Rng::seed_from_u64(derive_seed(setup.seed, 7, 0)),
            events: Vec::new(),
            low_level_steps: 0,
        })
    }

    /// Resolves the commander choice into an option, falling back to the
    /// closest opponent when the designated rank exceeds the survivors.
    fn assign(&self, agent: AircraftId, action: CommanderAction) -> Result<AssignedOption, RlError> {
        match action.target_rank() {
            None => Ok(AssignedOption::Escape),
            Some(rank) => {
                let enemies = self.world.enemies_by_distance(agent)?;
                let target = enemies
                    .get(rank - 1)
                    .or_else(|| enemies.first())
                    .map(|t| t.id)
                    .ok_or_else(|| RlError::InvalidConfig("no opponents alive".into()))?;
                Ok(AssignedOption::Fight { target })
            }
        }
    }

    fn low_level_command(
        world: &WorldState,
        id: AircraftId,
        option: AssignedOption,
        fight: &PolicyFamily,
        escape: &PolicyFamily,
        rng: &mut ChaCha8Rng,
        sample: bool,
    ) -> Result<ManeuverCommand, RlError> {
        let me = world.aircraft_by_id(id)?;
        let (family, obs) = match option {
            AssignedOption::Fight { target } => {
                let target = if world.aircraft_by_id(target)?.alive {
                    target
                } else {
                    match world.enemies_by_distance(id)?.first() {
                        Some(t) => t.id,
                        None => return Ok(ManeuverCommand::hold(me)),
                    }
                };
                (fight, build_fight_obs(world, id, target)?)
            }
            AssignedOption::Escape => (escape, build_escape_obs(world, id)?),
        };
        let (dist, _) = forward_actor(family, me.kind, &obs, None)?;
        let indices = if sample { dist.sample(rng).0 } else { dist.argmax() };
        let action = DiscreteAction::from_indices(&indices, me.kind)?;
        Ok(decode_action(&action, me)?)
    }

    /// One commander decision round plus the low-level steps beneath it.
    fn macro_step(&mut self, is_last: bool) -> Result<Vec<MacroTransition>, RlError> {
        let setup = self.setup;
        let decision_world = self.world.clone();
        let (tokens, mask) = global_state_tokens(&self.world);

        // Commander decisions, one forward pass per alive agent. The
        // centralized value is a function of the global state alone, so one
        // critic pass serves every agent this round.
        let mut decisions: Vec<(AircraftId, CommanderAction, f64, f64, ObservationVector, Vec<f64>)> =
            Vec::new();
        let mut assignments: BTreeMap<AircraftId, AssignedOption> = BTreeMap::new();
        let agent_ids: Vec<AircraftId> =
            self.world.alive_of(Team::Agents).map(|a| a.id).collect();
        let value = forward_critic(setup.commander, AircraftKind::Ac1, &tokens, &mask)?;
        for &id in &agent_ids {
            let obs = build_commander_obs(&self.world, id)?;
            let h_before = self.hidden[&id].clone();
            let kind = self.world.aircraft_by_id(id)?.kind;
            let (dist, h_next) = forward_actor(setup.commander, kind, &obs, Some(&h_before))?;
            let (indices, log_prob) = if setup.sample {
                dist.sample(&mut self.commander_rng)
            } else {
                let idx = dist.argmax();
                let lp = dist.log_prob(&idx);
                (idx, lp)
            };
            let action = CommanderAction::new(indices[0] as u8)?;
            assignments.insert(id, self.assign(id, action)?);
            self.hidden.insert(id, h_next.expect("recurrent trunk"));
            decisions.push((id, action, log_prob, value, obs, h_before.0.to_vec()));
        }

        // Opponent macro choices: an independent fight/escape draw each.
        let mut opp_modes: BTreeMap<AircraftId, OppMode> = BTreeMap::new();
        let opp_ids: Vec<AircraftId> =
            self.world.alive_of(Team::Opponents).map(|a| a.id).collect();
        for &id in &opp_ids {
            let mode = if self.opponent_rng.gen::<f64>() < setup.opponent_fight_prob {
                OppMode::Fight
            } else {
                OppMode::Escape
            };
            opp_modes.insert(id, mode);
        }

        let mut macro_events: Vec<CombatEvent> = Vec::new();
        let mut low_rewards: BTreeMap<AircraftId, f64> =
            agent_ids.iter().map(|&id| (id, 0.0)).collect();
        let c_max: BTreeMap<AircraftId, u32> = agent_ids
            .iter()
            .map(|&id| (id, self.world.aircraft_by_id(id).unwrap().ammo_initial()))
            .collect();
        let mut tau = 0u32;

        for t in 0..OPTION_BUDGET {
            if self.world.is_terminal() {
                break;
            }
            let mut commands: BTreeMap<AircraftId, ManeuverCommand> = BTreeMap::new();
            let mut acted: Vec<AircraftId> = Vec::new();
            for &id in &agent_ids {
                if !self.world.aircraft_by_id(id)?.alive {
                    continue;
                }
                let cmd = Self::low_level_command(
                    &self.world,
                    id,
                    assignments[&id],
                    setup.fight,
                    setup.escape,
                    &mut self.agent_rng,
                    setup.sample,
                )?;
                commands.insert(id, cmd);
                acted.push(id);
            }
            for &id in &opp_ids {
                if !self.world.aircraft_by_id(id)?.alive {
                    continue;
                }
                let option = match opp_modes[&id] {
                    OppMode::Fight => {
                        match self.world.enemies_by_distance(id)?.first() {
                            Some(t) => AssignedOption::Fight { target: t.id },
                            None => AssignedOption::Escape,
                        }
                    }
                    OppMode::Escape => AssignedOption::Escape,
                };
                let cmd = Self::low_level_command(
                    &self.world,
                    id,
                    option,
                    setup.opp_fight,
                    setup.opp_escape,
                    &mut self.opponent_rng,
                    true,
                )?;
                commands.insert(id, cmd);
            }

            let step_events = advance(&mut self.world, &commands)?;
            tau = t + 1;
            self.low_level_steps += 1;

            for &id in &acted {
                let r = match assignments[&id] {
                    AssignedOption::Fight { .. } => {
                        fight_reward(&self.world, id, &step_events, c_max[&id])?
                    }
                    AssignedOption::Escape => escape_reward(&self.world, id, &step_events)?,
                };
                *low_rewards.get_mut(&id).unwrap() += r.total();
            }

            let triggers = detect_events(&self.world, &step_events);
            macro_events.extend(step_events.iter().copied());
            self.events.extend(step_events);
            if !triggers.is_empty() {
                break;
            }
        }

        let episode_over = self.world.is_terminal() || is_last;
        let mut out = Vec::new();
        for (id, action, log_prob, value, obs, rnn_before) in decisions {
            let r_cmd = commander_reward(&decision_world, id, action, &macro_events)?;
            let alive = self.world.aircraft_by_id(id)?.alive;
            let next_obs = alive.then(|| build_commander_obs(&self.world, id)).transpose()?;
            out.push(MacroTransition {
                agent: id,
                obs,
                next_obs,
                global_tokens: tokens.clone(),
                global_mask: mask.clone(),
                choice: action.choice,
                log_prob,
                value,
                low_level_reward: low_rewards[&id],
                commander_terms: r_cmd.total(),
                duration: tau.max(1),
                rnn_before,
                done: episode_over || !alive,
            });
        }
        Ok(out)
    }
}

/// Runs one full hierarchical episode per the simulation procedure: up to
/// [`MACRO_HORIZON`] commander rounds of at most [`OPTION_BUDGET`] low-level
/// steps each.
pub fn run_hierarchical_episode(setup: &HierarchicalSetup) -> Result<HierarchicalRecord, RlError> {
    let mut state = EpisodeState::new(setup)?;
    let agent_kinds: BTreeMap<AircraftId, AircraftKind> =
        state.world.alive_of(Team::Agents).map(|a| (a.id, a.kind)).collect();
    let opponent_kinds: BTreeMap<AircraftId, AircraftKind> =
        state.world.alive_of(Team::Opponents).map(|a| (a.id, a.kind)).collect();

    let mut transitions = Vec::new();
    let mut round_durations = Vec::new();
    for t_h in 0..MACRO_HORIZON {
        if state.world.is_terminal() {
            break;
        }
        let before = state.low_level_steps;
        let batch = state.macro_step(t_h + 1 == MACRO_HORIZON)?;
        round_durations.push(state.low_level_steps - before);
        transitions.extend(batch);
    }

    let outcome = state.world.outcome().unwrap_or(Outcome::Draw);
    Ok(HierarchicalRecord {
        transitions,
        events: state.events,
        outcome,
        macro_steps: round_durations.len(),
        round_durations,
        low_level_steps: state.low_level_steps,
        agent_kinds,
        opponent_kinds,
        final_world: state.world,
    })
}

/// Per-round progress of commander training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommanderProgress {
    pub episode: usize,
    pub mean_reward: f64,
    pub wins: usize,
    pub losses: usize,
    pub draws: usize,
}

/// Trains the commander on 3v3 scenarios against the fixed fight/escape
/// mixture, with the low-level policies frozen (they are only read).
pub fn train_commander(
    commander: &mut PolicyFamily,
    registry: &LeagueRegistry,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&CommanderProgress),
) -> Result<(), RlError> {
    let fight = registry.load_family(PolicyKind::Fight, 5)?;
    let escape = registry.load_family(PolicyKind::Escape, 3)?;
    let fight_snapshot = fight.clone();
    let escape_snapshot = escape.clone();

    let scenario = ScenarioConfig::high_level(3, 3, MACRO_HORIZON as u32 * OPTION_BUDGET);
    let mut adam = Adam::default();
    let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, 400, 0));
    let mut buffer = RolloutBuffer::default();
    let mut episode_counter = 0usize;
    let (mut wins, mut losses, mut draws) = (0, 0, 0);
    const ROUND: usize = 8;

    while episode_counter < cfg.commander_episodes {
        let seeds: Vec<u64> = (0..ROUND)
            .map(|i| derive_seed(cfg.master_seed, 500, (episode_counter + i) as u64))
            .collect();
        let commander_ro: &PolicyFamily = commander;
        let records: Vec<HierarchicalRecord> = seeds
            .par_iter()
            .map(|&seed| {
                let setup = HierarchicalSetup {
                    commander: commander_ro,
                    fight: &fight,
                    escape: &escape,
                    opp_fight: &fight,
                    opp_escape: &escape,
                    opponent_fight_prob: OPPONENT_FIGHT_PROB,
                    scenario: &scenario,
                    seed,
                    sample: true,
                };
                run_hierarchical_episode(&setup)
            })
            .collect::<Result<_, _>>()?;
        episode_counter += records.len();

        let mut reward_sum = 0.0;
        let mut reward_n = 0usize;
        for rec in records {
            match rec.outcome {
                Outcome::Win => wins += 1,
                Outcome::Loss => losses += 1,
                Outcome::Draw => draws += 1,
            }
            // Segment transitions per agent so advantage estimation stays
            // inside one agent's macro sequence.
            let mut per_agent: BTreeMap<AircraftId, Vec<Transition>> = BTreeMap::new();
            for m in rec.transitions {
                let reward = m.reward();
                reward_sum += reward;
                reward_n += 1;
                per_agent.entry(m.agent).or_default().push(Transition {
                    obs: m.obs,
                    global_tokens: m.global_tokens,
                    global_mask: m.global_mask,
                    action: vec![m.choice as usize],
                    log_prob: m.log_prob,
                    reward,
                    done: m.done,
                    value: m.value,
                    rnn_state: Some(m.rnn_before),
                    agent: m.agent,
                    kind: AircraftKind::Ac1,
                });
            }
            for seg in per_agent.into_values() {
                buffer.push_segment(seg);
            }
        }

        if buffer.len() >= cfg.batch_size {
            ppo_update(commander, AircraftKind::Ac1, &mut buffer, cfg, &mut adam, &mut update_rng)?;
        }
        progress(&CommanderProgress {
            episode: episode_counter,
            mean_reward: if reward_n == 0 { 0.0 } else { reward_sum / reward_n as f64 },
            wins,
            losses,
            draws,
        });
    }

    debug_assert_eq!(fight, fight_snapshot);
    debug_assert_eq!(escape, escape_snapshot);
    Ok(())
}
