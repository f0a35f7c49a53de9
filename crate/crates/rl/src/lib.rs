//! Hierarchical multi-agent reinforcement learning stack for the air-combat
//! simulation: actor-critic policy families with exact hand-derived
//! gradients, clipped-surrogate PPO with generalized advantage estimation,
//! a five-level opponent curriculum with league self-play, and the
//! commander option loop on top of frozen low-level policies.

pub mod commander;
pub mod curriculum;
pub mod error;
pub mod league;
pub mod nn;
pub mod ppo;
pub mod rollout;

pub use commander::{
    detect_events, run_hierarchical_episode, train_commander, HierarchicalRecord,
    HierarchicalSetup, MacroTransition, TriggerEvent, TriggerKind,
};
pub use curriculum::{
    run_curriculum, standard_levels, CurriculumLevel, OpponentSource, ProgressRecord,
};
pub use error::RlError;
pub use league::{CheckpointMeta, LeagueRegistry};
pub use nn::{
    forward_actor, forward_critic, ActionDistribution, NetworkConfig, PolicyFamily,
    RecurrentState, TrunkKind,
};
pub use ppo::{compute_gae, ppo_update, Adam, RolloutBuffer, TrainConfig, Transition};
pub use rollout::{run_low_level_episode, EpisodeRecord, EpisodeSpec, OpponentFlavor};
