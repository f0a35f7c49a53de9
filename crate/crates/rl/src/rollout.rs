//! Low-level episode execution: agents driven by a fight or escape policy
//! family against one of the curriculum's opponent behaviors.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aircombat_sim::actions::{decode_action, DiscreteAction};
use aircombat_sim::aircraft::{AircraftId, AircraftKind, Team};
use aircombat_sim::obs::{build_escape_obs, build_fight_obs, global_state_tokens, PolicyKind};
use aircombat_sim::rewards::{escape_reward, fight_reward};
use aircombat_sim::scenario::ScenarioConfig;
use aircombat_sim::script::{random_policy, script_policy, static_policy, ScriptState};
use aircombat_sim::world::{advance, init_episode, CombatEvent, EventKind, ManeuverCommand, Outcome, WorldState};

use crate::error::RlError;
use crate::nn::{forward_actor, forward_critic, PolicyFamily};
use crate::ppo::Transition;

/// Splitmix-style seed derivation: one master seed fans out into
/// independent deterministic streams.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(tag.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Resolved opponent behavior, cheap to share across parallel episodes.
#[derive(Debug, Clone)]
pub enum OpponentFlavor {
    /// Hold heading at minimum speed (L1).
    Static,
    /// Uniform random actions (L2).
    Random,
    /// Pursuit script with random escape bursts (L3).
    Script,
    /// Frozen fight policies, one single-instance family per airframe (L4+).
    Frozen(Arc<BTreeMap<AircraftKind, PolicyFamily>>),
    /// Per-episode uniform draw over the pool (L5).
    League(Arc<Vec<OpponentFlavor>>),
}

impl OpponentFlavor {
    /// Resolves league nesting with the episode's own stream.
    fn pick(&self, rng: &mut ChaCha8Rng) -> &OpponentFlavor {
        match self {
            OpponentFlavor::League(pool) => pool[rng.gen_range(0..pool.len())].pick(rng),
            other => other,
        }
    }
}

enum Controller {
    Static,
    Random(BTreeMap<AircraftId, ChaCha8Rng>),
    Script(BTreeMap<AircraftId, ScriptState>),
    Frozen {
        policies: Arc<BTreeMap<AircraftKind, PolicyFamily>>,
        rngs: BTreeMap<AircraftId, ChaCha8Rng>,
    },
}

impl Controller {
    fn build(flavor: &OpponentFlavor, world: &WorldState, seed: u64) -> Controller {
        let streams = |tag: u64| -> BTreeMap<AircraftId, ChaCha8Rng> {
            world
                .alive_of(Team::Opponents)
                .map(|a| {
                    (a.id, ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, u64::from(a.id.0))))
                })
                .collect()
        };
        match flavor {
            OpponentFlavor::Static => Controller::Static,
            OpponentFlavor::Random => Controller::Random(streams(2)),
            OpponentFlavor::Script => Controller::Script(
                streams(3).into_iter().map(|(id, rng)| (id, ScriptState::new(rng))).collect(),
            ),
            OpponentFlavor::Frozen(policies) => {
                Controller::Frozen { policies: policies.clone(), rngs: streams(4) }
            }
            OpponentFlavor::League(_) => unreachable!("league resolves before episode start"),
        }
    }

    fn command(
        &mut self,
        world: &WorldState,
        id: AircraftId,
    ) -> Result<ManeuverCommand, RlError> {
        let me = world.aircraft_by_id(id)?;
        Ok(match self {
            Controller::Static => static_policy(me),
            Controller::Random(rngs) => random_policy(me, rngs.get_mut(&id).expect("stream")),
            Controller::Script(states) => {
                script_policy(world, id, states.get_mut(&id).expect("state"))?
            }
            Controller::Frozen { policies, rngs } => {
                let Some(target) = world.enemies_by_distance(id)?.first().map(|t| t.id) else {
                    return Ok(ManeuverCommand::hold(me));
                };
                let policy = policies
                    .get(&me.kind)
                    .ok_or_else(|| RlError::MissingCheckpoint(format!("frozen {}", me.kind)))?;
                let obs = build_fight_obs(world, id, target)?;
                let (dist, _) = forward_actor(policy, me.kind, &obs, None)?;
                let (indices, _) = dist.sample(rngs.get_mut(&id).expect("stream"));
                let action = DiscreteAction::from_indices(&indices, me.kind)?;
                decode_action(&action, me)?
            }
        })
    }
}

/// Per-airframe transition segments and episode statistics of one rollout.
#[derive(Debug)]
pub struct EpisodeRecord {
    /// Contiguous per-agent transition segments, keyed by airframe type.
    pub segments: BTreeMap<AircraftKind, Vec<Vec<Transition>>>,
    pub events: Vec<CombatEvent>,
    pub outcome: Outcome,
    pub steps: u32,
    /// Total reward per agent aircraft.
    pub agent_rewards: BTreeMap<AircraftId, f64>,
    pub agent_kinds: BTreeMap<AircraftId, AircraftKind>,
    pub opponent_kinds: BTreeMap<AircraftId, AircraftKind>,
    pub final_world: WorldState,
}

impl EpisodeRecord {
    pub fn mean_agent_reward(&self) -> f64 {
        if self.agent_rewards.is_empty() {
            0.0
        } else {
            self.agent_rewards.values().sum::<f64>() / self.agent_rewards.len() as f64
        }
    }

    /// Kills of opponents credited to agent aircraft of `kind`.
    pub fn kills_by_agents(&self) -> usize {
        self.events
            .iter()
            .filter(|e| {
                e.kind == EventKind::Kill
                    && e.shooter.map(|s| self.agent_kinds.contains_key(&s)).unwrap_or(false)
            })
            .count()
    }
}

/// Everything needed to run one low-level episode.
pub struct EpisodeSpec<'a> {
    pub policy: &'a PolicyFamily,
    pub policy_kind: PolicyKind,
    pub opponents: &'a OpponentFlavor,
    pub scenario: &'a ScenarioConfig,
    pub seed: u64,
    /// Sample stochastically (training) or act greedily (evaluation).
    pub sample: bool,
    /// Record transitions for PPO.
    pub collect: bool,
}

/// Runs one complete low-level episode: every alive agent is driven by the
/// policy family (fight agents chase their closest opponent), opponents by
/// the configured behavior; rewards follow the policy kind.
pub fn run_low_level_episode(spec: &EpisodeSpec) -> Result<EpisodeRecord, RlError> {
    let mut episode_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0, 0));
    let mut world = init_episode(spec.scenario, derive_seed(spec.seed, 1, 0))?;
    let flavor = spec.opponents.pick(&mut episode_rng).clone();
    let mut controller = Controller::build(&flavor, &world, spec.seed);
    let mut agent_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 5, 0));

    let agent_ids: Vec<AircraftId> = world.alive_of(Team::Agents).map(|a| a.id).collect();
    let agent_kinds: BTreeMap<AircraftId, AircraftKind> =
        world.alive_of(Team::Agents).map(|a| (a.id, a.kind)).collect();
    let opponent_kinds: BTreeMap<AircraftId, AircraftKind> =
        world.alive_of(Team::Opponents).map(|a| (a.id, a.kind)).collect();
    let c_max: BTreeMap<AircraftId, u32> =
        world.alive_of(Team::Agents).map(|a| (a.id, a.ammo_initial())).collect();

    let mut per_agent: BTreeMap<AircraftId, Vec<Transition>> =
        agent_ids.iter().map(|&id| (id, Vec::new())).collect();
    let mut agent_rewards: BTreeMap<AircraftId, f64> =
        agent_ids.iter().map(|&id| (id, 0.0)).collect();
    let mut all_events = Vec::new();

    while !world.is_terminal() {
        let (global_tokens, global_mask) = global_state_tokens(&world);
        let mut commands: BTreeMap<AircraftId, ManeuverCommand> = BTreeMap::new();
        let mut pending: Vec<(AircraftId, AircraftKind, Transition)> = Vec::new();

        for &id in &agent_ids {
            let state = world.aircraft_by_id(id)?;
            if !state.alive {
                continue;
            }
            let kind = state.kind;
            let obs = match spec.policy_kind {
                PolicyKind::Fight => {
                    let Some(target) = world.enemies_by_distance(id)?.first().map(|t| t.id)
                    else {
                        commands.insert(id, ManeuverCommand::hold(state));
                        continue;
                    };
                    build_fight_obs(&world, id, target)?
                }
                PolicyKind::Escape => build_escape_obs(&world, id)?,
                PolicyKind::Commander => {
                    return Err(RlError::InvalidConfig(
                        "commander episodes run through the hierarchical loop".into(),
                    ))
                }
            };
            let (dist, _) = forward_actor(spec.policy, kind, &obs, None)?;
            let (indices, log_prob) = if spec.sample {
                dist.sample(&mut agent_rng)
            } else {
                let idx = dist.argmax();
                let lp = dist.log_prob(&idx);
                (idx, lp)
            };
            let action = DiscreteAction::from_indices(&indices, kind)?;
            commands.insert(id, decode_action(&action, world.aircraft_by_id(id)?)?);

            if spec.collect {
                let value =
                    forward_critic(spec.policy, kind, &global_tokens, &global_mask)?;
                pending.push((
                    id,
                    kind,
                    Transition {
                        obs,
                        global_tokens: global_tokens.clone(),
                        global_mask: global_mask.clone(),
                        action: indices,
                        log_prob,
                        reward: 0.0,
                        done: false,
                        value,
                        rnn_state: None,
                        agent: id,
                        kind,
                    },
                ));
            }
        }

        for (&id, _) in &opponent_kinds {
            if world.aircraft_by_id(id)?.alive {
                let cmd = controller.command(&world, id)?;
                commands.insert(id, cmd);
            }
        }

        let events = advance(&mut world, &commands)?;

        for (id, _kind, mut tr) in pending {
            let r = match spec.policy_kind {
                PolicyKind::Fight => fight_reward(&world, id, &events, c_max[&id])?,
                PolicyKind::Escape => escape_reward(&world, id, &events)?,
                PolicyKind::Commander => unreachable!(),
            };
            tr.reward = r.total();
            tr.done = !world.aircraft_by_id(id)?.alive || world.is_terminal();
            *agent_rewards.get_mut(&id).unwrap() += tr.reward;
            per_agent.get_mut(&id).unwrap().push(tr);
        }
        if !spec.collect {
            // Reward bookkeeping still wanted for learning curves.
            for &id in &agent_ids {
                if world.aircraft_by_id(id)?.alive || events.iter().any(|e| e.victim == Some(id)) {
                    let r = match spec.policy_kind {
                        PolicyKind::Fight => fight_reward(&world, id, &events, c_max[&id])?,
                        PolicyKind::Escape => escape_reward(&world, id, &events)?,
                        PolicyKind::Commander => unreachable!(),
                    };
                    *agent_rewards.get_mut(&id).unwrap() += r.total();
                }
            }
        }
        all_events.extend(events);
    }

    let mut segments: BTreeMap<AircraftKind, Vec<Vec<Transition>>> = BTreeMap::new();
    for (id, transitions) in per_agent {
        if transitions.is_empty() {
            continue;
        }
        segments.entry(agent_kinds[&id]).or_default().push(transitions);
    }

    Ok(EpisodeRecord {
        segments,
        events: all_events,
        outcome: world.outcome().expect("loop exits on terminal worlds"),
        steps: world.step,
        agent_rewards,
        agent_kinds,
        opponent_kinds,
        final_world: world,
    })
}
