//! Five-level curriculum with league self-play for the low-level policies.
//!
//! Opponent strength rises per level: static, random, pursuit scripts, the
//! frozen level-3 fight policy, then a league drawing uniformly per episode
//! from everything before. The time horizon grows by 50 steps per level
//! starting at 200.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use aircombat_sim::aircraft::AircraftKind;
use aircombat_sim::obs::PolicyKind;
use aircombat_sim::scenario::ScenarioConfig;
use aircombat_sim::world::Outcome;

use crate::error::RlError;
use crate::league::LeagueRegistry;
use crate::nn::PolicyFamily;
use crate::ppo::{ppo_update, Adam, RolloutBuffer, TrainConfig};
use crate::rollout::{derive_seed, run_low_level_episode, EpisodeRecord, EpisodeSpec, OpponentFlavor};

/// Episodes executed per collection round; fixed so results do not depend
/// on the worker count.
const ROUND_EPISODES: usize = 8;

/// Where a level's opponents come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpponentSource {
    Static,
    Random,
    Script,
    /// Frozen fight checkpoints of the given curriculum level.
    FrozenFight { level: u8 },
    /// Uniform per-episode draw over the pool.
    League { pool: Vec<OpponentSource> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumLevel {
    pub index: u8,
    pub source: OpponentSource,
    pub horizon: u32,
}

/// Episode horizon for a curriculum level: T = 200 + 50 * (level - 1).
pub fn level_horizon(index: u8) -> u32 {
    200 + 50 * (u32::from(index) - 1)
}

/// The standard level sequence of one policy type: all five for fight,
/// scripts only for escape.
pub fn standard_levels(policy: PolicyKind) -> Vec<CurriculumLevel> {
    match policy {
        PolicyKind::Fight => vec![
            CurriculumLevel { index: 1, source: OpponentSource::Static, horizon: level_horizon(1) },
            CurriculumLevel { index: 2, source: OpponentSource::Random, horizon: level_horizon(2) },
            CurriculumLevel { index: 3, source: OpponentSource::Script, horizon: level_horizon(3) },
            CurriculumLevel {
                index: 4,
                source: OpponentSource::FrozenFight { level: 3 },
                horizon: level_horizon(4),
            },
            CurriculumLevel {
                index: 5,
                source: OpponentSource::League {
                    pool: vec![
                        OpponentSource::Static,
                        OpponentSource::Random,
                        OpponentSource::Script,
                        OpponentSource::FrozenFight { level: 3 },
                        OpponentSource::FrozenFight { level: 4 },
                    ],
                },
                horizon: level_horizon(5),
            },
        ],
        PolicyKind::Escape => vec![CurriculumLevel {
            index: 3,
            source: OpponentSource::Script,
            horizon: level_horizon(3),
        }],
        PolicyKind::Commander => Vec::new(),
    }
}

/// Resolves an opponent source against the league registry, loading frozen
/// checkpoints. Fails when a prerequisite checkpoint is missing.
pub fn resolve_opponents(
    source: &OpponentSource,
    registry: &LeagueRegistry,
) -> Result<OpponentFlavor, RlError> {
    Ok(match source {
        OpponentSource::Static => OpponentFlavor::Static,
        OpponentSource::Random => OpponentFlavor::Random,
        OpponentSource::Script => OpponentFlavor::Script,
        OpponentSource::FrozenFight { level } => {
            let mut per_kind = BTreeMap::new();
            for kind in AircraftKind::ALL {
                per_kind.insert(kind, registry.load(PolicyKind::Fight, kind, *level)?);
            }
            OpponentFlavor::Frozen(Arc::new(per_kind))
        }
        OpponentSource::League { pool } => OpponentFlavor::League(Arc::new(
            pool.iter()
                .map(|s| resolve_opponents(s, registry))
                .collect::<Result<Vec<_>, _>>()?,
        )),
    })
}

/// One progress-log record, emitted after every collection round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub policy: PolicyKind,
    pub level: u8,
    pub episode: usize,
    pub mean_reward: f64,
    pub wins: usize,
    pub losses: usize,
    pub draws: usize,
}

/// Per-airframe rollout buffers of one collection pass.
#[derive(Debug, Default)]
pub struct InstanceBuffers {
    pub buffers: BTreeMap<AircraftKind, RolloutBuffer>,
}

impl InstanceBuffers {
    pub fn absorb(&mut self, record: &mut EpisodeRecord) {
        for (kind, segments) in std::mem::take(&mut record.segments) {
            let buf = self.buffers.entry(kind).or_default();
            for seg in segments {
                buf.push_segment(seg);
            }
        }
    }
}

/// Runs a fixed-size round of episodes in parallel; the result vector is in
/// episode order, so outcomes do not depend on the worker count.
pub fn run_round(
    policy: &PolicyFamily,
    policy_kind: PolicyKind,
    opponents: &OpponentFlavor,
    scenario: &ScenarioConfig,
    master_seed: u64,
    first_episode: usize,
    count: usize,
    sample: bool,
    collect: bool,
) -> Result<Vec<EpisodeRecord>, RlError> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = EpisodeSpec {
                policy,
                policy_kind,
                opponents,
                scenario,
                seed: derive_seed(master_seed, 100, (first_episode + i) as u64),
                sample,
                collect,
            };
            run_low_level_episode(&spec)
        })
        .collect()
}

/// Fills per-airframe buffers to at least `target` transitions each by
/// running whole episodes; returns the records for statistics.
pub fn collect_rollouts(
    policy: &PolicyFamily,
    policy_kind: PolicyKind,
    opponents: &OpponentFlavor,
    scenario: &ScenarioConfig,
    master_seed: u64,
    episode_counter: &mut usize,
    target: usize,
    buffers: &mut InstanceBuffers,
) -> Result<Vec<EpisodeRecord>, RlError> {
    let mut records = Vec::new();
    while buffers
        .buffers
        .values()
        .map(|b| b.len())
        .min()
        .unwrap_or(0)
        < target
        || buffers.buffers.is_empty()
    {
        let mut round = run_round(
            policy,
            policy_kind,
            opponents,
            scenario,
            master_seed,
            *episode_counter,
            ROUND_EPISODES,
            true,
            true,
        )?;
        *episode_counter += round.len();
        for rec in &mut round {
            buffers.absorb(rec);
        }
        records.extend(round);
    }
    Ok(records)
}

/// Trains `family` through `levels`, checkpointing each finished level into
/// the registry and carrying the parameters into the next level.
#[allow(clippy::too_many_arguments)]
pub fn run_curriculum(
    family: &mut PolicyFamily,
    levels: &[CurriculumLevel],
    cfg: &TrainConfig,
    registry: &mut LeagueRegistry,
    scenario_for: impl Fn(&CurriculumLevel) -> ScenarioConfig,
    mut progress: impl FnMut(&ProgressRecord),
) -> Result<(), RlError> {
    let policy_kind = family.cfg.policy;
    let mut adam = Adam::default();
    for level in levels {
        let opponents = resolve_opponents(&level.source, registry)?;
        let scenario = scenario_for(level);
        let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.master_seed,
            200 + u64::from(level.index),
            0,
        ));
        let mut buffers = InstanceBuffers::default();
        let mut episode_counter = 0usize;
        let level_seed = derive_seed(cfg.master_seed, 300, u64::from(level.index));
        let (mut wins, mut losses, mut draws) = (0usize, 0usize, 0usize);

        while episode_counter < cfg.episodes_per_level {
            let records = collect_rollouts(
                family,
                policy_kind,
                &opponents,
                &scenario,
                level_seed,
                &mut episode_counter,
                cfg.batch_size,
                &mut buffers,
            )?;
            let mean_reward = if records.is_empty() {
                0.0
            } else {
                records.iter().map(|r| r.mean_agent_reward()).sum::<f64>() / records.len() as f64
            };
            for r in &records {
                match r.outcome {
                    Outcome::Win => wins += 1,
                    Outcome::Loss => losses += 1,
                    Outcome::Draw => draws += 1,
                }
            }
            for kind in AircraftKind::ALL {
                let Some(buffer) = buffers.buffers.get_mut(&kind) else { continue };
                if buffer.len() >= cfg.batch_size {
                    ppo_update(family, kind, buffer, cfg, &mut adam, &mut update_rng)?;
                }
            }
            progress(&ProgressRecord {
                policy: policy_kind,
                level: level.index,
                episode: episode_counter,
                mean_reward,
                wins,
                losses,
                draws,
            });
        }
        registry.save_family(family, level.index)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkConfig;

    #[test]
    fn horizons_follow_the_schedule() {
        let levels = standard_levels(PolicyKind::Fight);
        assert_eq!(levels.len(), 5);
        let horizons: Vec<u32> = levels.iter().map(|l| l.horizon).collect();
        assert_eq!(horizons, vec![200, 250, 300, 350, 400]);
    }

    #[test]
    fn escape_trains_only_at_level_three() {
        let levels = standard_levels(PolicyKind::Escape);
        assert_eq!(levels.len(), 1);
        assert_eq!(levels[0].index, 3);
        assert_eq!(levels[0].source, OpponentSource::Script);
        assert_eq!(levels[0].horizon, 300);
    }

    #[test]
    fn level_four_requires_level_three_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let registry = LeagueRegistry::open(dir.path()).unwrap();
        let source = OpponentSource::FrozenFight { level: 3 };
        assert!(matches!(
            resolve_opponents(&source, &registry),
            Err(RlError::MissingCheckpoint(_))
        ));
    }

    #[test]
    fn league_requires_all_member_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let mut registry = LeagueRegistry::open(dir.path()).unwrap();
        let family = PolicyFamily::init(NetworkConfig::tiny(PolicyKind::Fight), 0);
        registry.save_family(&family, 3).unwrap();
        // L4 checkpoint still missing: the L5 pool cannot resolve.
        let source = OpponentSource::League {
            pool: vec![
                OpponentSource::Static,
                OpponentSource::FrozenFight { level: 3 },
                OpponentSource::FrozenFight { level: 4 },
            ],
        };
        assert!(resolve_opponents(&source, &registry).is_err());
        registry.save_family(&family, 4).unwrap();
        assert!(resolve_opponents(&source, &registry).is_ok());
    }
}
