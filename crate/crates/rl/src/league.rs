//! Checkpoint store for the opponent league.
//!
//! Layout on disk: `<policy>/<aircraft>/<level>/v<version>.json`, one file
//! per (policy type, airframe, curriculum level) checkpoint. A file carries
//! the shared embedding alongside the instance so it can be replayed in
//! isolation; the embedding copies of instances saved together are
//! identical. Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use aircombat_sim::aircraft::AircraftKind;
use aircombat_sim::obs::PolicyKind;

use crate::error::RlError;
use crate::nn::{InstanceParams, Linear, NetworkConfig, PolicyFamily};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CheckpointKey {
    pub policy: PolicyKind,
    pub aircraft: AircraftKind,
    pub level: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub policy: PolicyKind,
    pub aircraft: AircraftKind,
    pub level: u8,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    meta: CheckpointMeta,
    cfg: NetworkConfig,
    embed: Linear,
    instance: InstanceParams,
}

/// Disk-backed registry of frozen policy checkpoints.
#[derive(Debug)]
pub struct LeagueRegistry {
    root: PathBuf,
    entries: BTreeMap<CheckpointKey, Vec<CheckpointMeta>>,
}

fn aircraft_dir(kind: AircraftKind) -> &'static str {
    match kind {
        AircraftKind::Ac1 => "ac1",
        AircraftKind::Ac2 => "ac2",
    }
}

impl LeagueRegistry {
    /// Opens (or creates) a registry rooted at `root`, indexing any
    /// checkpoints already present.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RlError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| RlError::CheckpointIo(e.to_string()))?;
        let mut reg = Self { root, entries: BTreeMap::new() };
        reg.rescan()?;
        Ok(reg)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn rescan(&mut self) -> Result<(), RlError> {
        self.entries.clear();
        for policy in [PolicyKind::Fight, PolicyKind::Escape, PolicyKind::Commander] {
            for aircraft in AircraftKind::ALL {
                let dir = self.root.join(policy.to_string()).join(aircraft_dir(aircraft));
                let Ok(levels) = fs::read_dir(&dir) else { continue };
                for level_dir in levels.flatten() {
                    let Ok(level) = level_dir.file_name().to_string_lossy().parse::<u8>() else {
                        continue;
                    };
                    let Ok(files) = fs::read_dir(level_dir.path()) else { continue };
                    let key = CheckpointKey { policy, aircraft, level };
                    let mut metas: Vec<CheckpointMeta> = files
                        .flatten()
                        .filter_map(|f| {
                            let name = f.file_name().to_string_lossy().to_string();
                            let version =
                                name.strip_prefix('v')?.strip_suffix(".json")?.parse().ok()?;
                            Some(CheckpointMeta { policy, aircraft, level, version })
                        })
                        .collect();
                    metas.sort_by_key(|m| m.version);
                    if !metas.is_empty() {
                        self.entries.insert(key, metas);
                    }
                }
            }
        }
        Ok(())
    }

    fn path_for(&self, meta: &CheckpointMeta) -> PathBuf {
        self.root
            .join(meta.policy.to_string())
            .join(aircraft_dir(meta.aircraft))
            .join(meta.level.to_string())
            .join(format!("v{}.json", meta.version))
    }

    /// Saves every instance of `family` under `level`. Versions are the
    /// family's update counter and increase strictly across the saves of a
    /// training run.
    pub fn save_family(&mut self, family: &PolicyFamily, level: u8) -> Result<Vec<CheckpointMeta>, RlError> {
        let mut saved = Vec::new();
        // A single-instance family (commander) is airframe-independent and
        // stores its tensors once, under the ac1 directory.
        let kinds: &[AircraftKind] = if family.cfg.instances.len() == 1 {
            &[AircraftKind::Ac1]
        } else {
            &AircraftKind::ALL
        };
        for &kind in kinds {
            let idx = family.cfg.instance_index(kind);
            let meta = CheckpointMeta {
                policy: family.cfg.policy,
                aircraft: kind,
                level,
                version: family.version,
            };
            let mut cfg = family.cfg.clone();
            cfg.instances = vec![family.cfg.instances[idx].clone()];
            let file = CheckpointFile {
                meta: meta.clone(),
                cfg,
                embed: family.embed.clone(),
                instance: family.instances[idx].clone(),
            };
            let path = self.path_for(&meta);
            fs::create_dir_all(path.parent().unwrap())
                .map_err(|e| RlError::CheckpointIo(e.to_string()))?;
            let json = serde_json::to_string(&file)
                .map_err(|e| RlError::CheckpointIo(e.to_string()))?;
            fs::write(&path, json).map_err(|e| RlError::CheckpointIo(e.to_string()))?;
            let key = CheckpointKey { policy: meta.policy, aircraft: kind, level };
            let list = self.entries.entry(key).or_default();
            list.retain(|m| m.version != meta.version);
            list.push(meta.clone());
            list.sort_by_key(|m| m.version);
            saved.push(meta);
        }
        Ok(saved)
    }

    pub fn latest(&self, policy: PolicyKind, aircraft: AircraftKind, level: u8) -> Option<&CheckpointMeta> {
        self.entries
            .get(&CheckpointKey { policy, aircraft, level })
            .and_then(|v| v.last())
    }

    pub fn has(&self, policy: PolicyKind, aircraft: AircraftKind, level: u8) -> bool {
        self.latest(policy, aircraft, level).is_some()
    }

    /// Loads the newest checkpoint of (policy, aircraft, level) as a
    /// single-instance family usable for frozen inference.
    pub fn load(
        &self,
        policy: PolicyKind,
        aircraft: AircraftKind,
        level: u8,
    ) -> Result<PolicyFamily, RlError> {
        let meta = self.latest(policy, aircraft, level).ok_or_else(|| {
            RlError::MissingCheckpoint(format!("{policy}/{}/{level}", aircraft_dir(aircraft)))
        })?;
        let path = self.path_for(meta);
        let json = fs::read_to_string(&path).map_err(|e| RlError::CheckpointIo(e.to_string()))?;
        let file: CheckpointFile =
            serde_json::from_str(&json).map_err(|e| RlError::CheckpointIo(e.to_string()))?;
        Ok(PolicyFamily {
            cfg: file.cfg,
            embed: file.embed,
            instances: vec![file.instance],
            version: file.meta.version,
        })
    }

    /// Reassembles a full two-instance family from the per-airframe
    /// checkpoints of one level (they share one embedding by construction).
    pub fn load_family(&self, policy: PolicyKind, level: u8) -> Result<PolicyFamily, RlError> {
        if policy == PolicyKind::Commander {
            return self.load(policy, AircraftKind::Ac1, level);
        }
        let ac1 = self.load(policy, AircraftKind::Ac1, level)?;
        let ac2 = self.load(policy, AircraftKind::Ac2, level)?;
        if ac1.embed != ac2.embed {
            return Err(RlError::CheckpointIo(format!(
                "{policy} level {level}: per-airframe checkpoints disagree on the shared layer"
            )));
        }
        let mut cfg = NetworkConfig::standard(policy);
        cfg.embed_dim = ac1.cfg.embed_dim;
        cfg.attention_dim = ac1.cfg.attention_dim;
        cfg.recurrent_hidden = ac1.cfg.recurrent_hidden;
        cfg.hidden_dim = ac1.cfg.hidden_dim;
        cfg.token_width = ac1.cfg.token_width;
        Ok(PolicyFamily {
            cfg,
            embed: ac1.embed,
            instances: vec![ac1.instances.into_iter().next().unwrap(), ac2.instances.into_iter().next().unwrap()],
            version: ac1.version.max(ac2.version),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = LeagueRegistry::open(dir.path()).unwrap();
        let mut family = PolicyFamily::init(NetworkConfig::tiny(PolicyKind::Fight), 5);
        family.version = 3;
        reg.save_family(&family, 1).unwrap();

        let loaded = reg.load(PolicyKind::Fight, AircraftKind::Ac2, 1).unwrap();
        assert_eq!(loaded.embed, family.embed);
        assert_eq!(loaded.instances[0], family.instances[1]);
        assert_eq!(loaded.version, 3);

        let whole = reg.load_family(PolicyKind::Fight, 1).unwrap();
        assert_eq!(whole.embed, family.embed);
        assert_eq!(whole.instances, family.instances);
    }

    #[test]
    fn registry_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut reg = LeagueRegistry::open(dir.path()).unwrap();
            let family = PolicyFamily::init(NetworkConfig::tiny(PolicyKind::Escape), 5);
            reg.save_family(&family, 3).unwrap();
        }
        let reg = LeagueRegistry::open(dir.path()).unwrap();
        assert!(reg.has(PolicyKind::Escape, AircraftKind::Ac1, 3));
        assert!(reg.has(PolicyKind::Escape, AircraftKind::Ac2, 3));
        assert!(!reg.has(PolicyKind::Fight, AircraftKind::Ac1, 3));
    }

    #[test]
    fn versions_increase_across_saves() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = LeagueRegistry::open(dir.path()).unwrap();
        let mut family = PolicyFamily::init(NetworkConfig::tiny(PolicyKind::Fight), 5);
        family.version = 1;
        reg.save_family(&family, 1).unwrap();
        family.version = 7;
        reg.save_family(&family, 1).unwrap();
        assert_eq!(reg.latest(PolicyKind::Fight, AircraftKind::Ac1, 1).unwrap().version, 7);
    }

    #[test]
    fn missing_checkpoint_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let reg = LeagueRegistry::open(dir.path()).unwrap();
        assert!(reg.load(PolicyKind::Fight, AircraftKind::Ac1, 4).is_err());
    }

    #[test]
    fn commander_family_loads_single_instance() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = LeagueRegistry::open(dir.path()).unwrap();
        let family = PolicyFamily::init(NetworkConfig::tiny(PolicyKind::Commander), 5);
        reg.save_family(&family, 1).unwrap();
        let loaded = reg.load_family(PolicyKind::Commander, 1).unwrap();
        assert_eq!(loaded.instances.len(), 1);
        // Both airframes resolve to the one instance.
        assert_eq!(loaded.cfg.instance_index(AircraftKind::Ac1), 0);
        assert_eq!(loaded.cfg.instance_index(AircraftKind::Ac2), 0);
    }
}
