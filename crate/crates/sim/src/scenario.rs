//! Episode scenario configuration, loadable from JSON.

use serde::{Deserialize, Serialize};

use crate::aircraft::AircraftKind;
use crate::error::SimError;

/// How the aircraft types of one team are picked at episode start.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeMix {
    /// Explicit list; its length must equal the team size.
    Fixed(Vec<AircraftKind>),
    /// Random mix per episode with at least one of each type when the
    /// team has two or more aircraft.
    #[default]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmmoLoadout {
    pub cannon: u32,
    /// Ignored for AC2 airframes.
    pub rockets: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamConfig {
    pub count: usize,
    #[serde(default)]
    pub types: TypeMix,
    pub ammo: AmmoLoadout,
}

/// Full description of one episode family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub agents: TeamConfig,
    pub opponents: TeamConfig,
    /// Side length of the square map [km].
    pub map_size_km: f64,
    /// Episode length in simulation steps.
    pub horizon: u32,
}

impl ScenarioConfig {
    /// Low-level training scenario: 30 km map, agents with 200 cannon
    /// rounds and 5 rockets, opponents with 400 and 8.
    pub fn low_level(agents: usize, opponents: usize, horizon: u32) -> Self {
        Self {
            agents: TeamConfig {
                count: agents,
                types: TypeMix::Random,
                ammo: AmmoLoadout { cannon: 200, rockets: 5 },
            },
            opponents: TeamConfig {
                count: opponents,
                types: TypeMix::Random,
                ammo: AmmoLoadout { cannon: 400, rockets: 8 },
            },
            map_size_km: 30.0,
            horizon,
        }
    }

    /// Commander training scenario: 50 km map, 300 cannon rounds and
    /// 8 rockets on both sides.
    pub fn high_level(agents: usize, opponents: usize, horizon: u32) -> Self {
        let ammo = AmmoLoadout { cannon: 300, rockets: 8 };
        Self {
            agents: TeamConfig { count: agents, types: TypeMix::Random, ammo: ammo.clone() },
            opponents: TeamConfig { count: opponents, types: TypeMix::Random, ammo },
            map_size_km: 50.0,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (label, team) in [("agents", &self.agents), ("opponents", &self.opponents)] {
            if team.count == 0 {
                return Err(SimError::InvalidScenario(format!("{label}: team size must be >= 1")));
            }
            if let TypeMix::Fixed(types) = &team.types {
                if types.len() != team.count {
                    return Err(SimError::InvalidScenario(format!(
                        "{label}: {} types listed for {} aircraft",
                        types.len(),
                        team.count
                    )));
                }
                if team.count >= 2 {
                    for kind in AircraftKind::ALL {
                        if !types.contains(&kind) {
                            return Err(SimError::InvalidScenario(format!(
                                "{label}: teams of 2+ need at least one {kind}"
                            )));
                        }
                    }
                }
            }
        }
        if !(self.map_size_km.is_finite() && self.map_size_km > 0.0) {
            return Err(SimError::InvalidScenario("map size must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(SimError::InvalidScenario("horizon must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(json).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn map_diagonal(&self) -> f64 {
        self.map_size_km * std::f64::consts::SQRT_2
    }
}
