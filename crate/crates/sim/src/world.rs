//! World state and the per-step update: simultaneous kinematics, fire
//! resolution in id order, then boundary enforcement.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aircraft::{AircraftId, AircraftKind, AircraftState, Team, WeaponKind};
use crate::error::SimError;
use crate::geometry::{self, Pose2D};
use crate::scenario::{ScenarioConfig, TypeMix};

/// Seconds of simulated time per step.
pub const DT_SECONDS: f64 = 1.0;

/// Converts a speed in knots into kilometres travelled over `dt` seconds.
pub fn knots_to_km_per_step(speed: f64, dt: f64) -> f64 {
    speed * 1.852 / 3600.0 * dt
}

/// One step's worth of control input for a single aircraft.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverCommand {
    /// Absolute heading to slew toward [deg].
    pub target_heading: f64,
    /// Commanded speed [knots]; clamped to the type envelope on execution.
    pub target_speed: f64,
    pub fire_cannon: bool,
    pub fire_rocket: bool,
}

impl ManeuverCommand {
    pub fn hold(state: &AircraftState) -> Self {
        Self {
            target_heading: state.pose.heading,
            target_speed: state.speed,
            fire_cannon: false,
            fire_rocket: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Kill,
    FriendlyKill,
    OutOfBounds,
    RocketFired,
    CannonFired,
}

/// Something that happened during a world step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombatEvent {
    pub kind: EventKind,
    pub shooter: Option<AircraftId>,
    pub victim: Option<AircraftId>,
    pub step: u32,
}

/// Outcome classification once an episode has ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Loss,
    Draw,
}

/// Encoded last action of one aircraft, fed to the centralized critic.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LastAction {
    /// Heading index mapped to [0, 1] (0.5 = hold course).
    pub heading: f64,
    /// Speed index mapped to [0, 1].
    pub speed: f64,
    pub cannon: f64,
    pub rocket: f64,
}

/// Complete simulation state for one episode.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub aircraft: Vec<AircraftState>,
    pub map_size: f64,
    pub horizon: u32,
    pub step: u32,
    pub rng: ChaCha8Rng,
    /// Last executed action per aircraft, zeroed at episode start.
    pub last_actions: BTreeMap<AircraftId, LastAction>,
}

impl WorldState {
    /// Assembles a world directly from aircraft states; used by tests and
    /// statistics harnesses that need exact placements.
    pub fn from_aircraft(
        aircraft: Vec<AircraftState>,
        map_size: f64,
        horizon: u32,
        seed: u64,
    ) -> Self {
        let last_actions = aircraft.iter().map(|a| (a.id, LastAction::default())).collect();
        Self {
            aircraft,
            map_size,
            horizon,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_actions,
        }
    }

    pub fn aircraft_by_id(&self, id: AircraftId) -> Result<&AircraftState, SimError> {
        self.aircraft
            .iter()
            .find(|a| a.id == id)
            .ok_or(SimError::UnknownAircraft(id))
    }

    fn aircraft_by_id_mut(&mut self, id: AircraftId) -> Result<&mut AircraftState, SimError> {
        self.aircraft
            .iter_mut()
            .find(|a| a.id == id)
            .ok_or(SimError::UnknownAircraft(id))
    }

    pub fn alive(&self) -> impl Iterator<Item = &AircraftState> {
        self.aircraft.iter().filter(|a| a.alive)
    }

    pub fn alive_of(&self, team: Team) -> impl Iterator<Item = &AircraftState> {
        self.aircraft.iter().filter(move |a| a.alive && a.team == team)
    }

    pub fn alive_count(&self, team: Team) -> usize {
        self.alive_of(team).count()
    }

    /// Alive enemies of `id`, sorted by distance (ties by id).
    pub fn enemies_by_distance(&self, id: AircraftId) -> Result<Vec<&AircraftState>, SimError> {
        let me = self.aircraft_by_id(id)?;
        Ok(self.sorted_by_distance(me, me.team.other()))
    }

    /// Alive teammates of `id` (excluding itself), sorted by distance.
    pub fn friendlies_by_distance(&self, id: AircraftId) -> Result<Vec<&AircraftState>, SimError> {
        let me = self.aircraft_by_id(id)?;
        let mut list = self.sorted_by_distance(me, me.team);
        list.retain(|a| a.id != id);
        Ok(list)
    }

    fn sorted_by_distance(&self, from: &AircraftState, team: Team) -> Vec<&AircraftState> {
        let mut list: Vec<&AircraftState> = self.alive_of(team).collect();
        list.sort_by(|a, b| {
            let da = geometry::distance(from.pose.position(), a.pose.position());
            let db = geometry::distance(from.pose.position(), b.pose.position());
            da.partial_cmp(&db).unwrap().then(a.id.cmp(&b.id))
        });
        list
    }

    /// Episode ends when the horizon is reached or one team is wiped out.
    pub fn is_terminal(&self) -> bool {
        self.step >= self.horizon
            || self.alive_count(Team::Agents) == 0
            || self.alive_count(Team::Opponents) == 0
    }

    /// Outcome from the agents' perspective; `None` while still running.
    pub fn outcome(&self) -> Option<Outcome> {
        if !self.is_terminal() {
            return None;
        }
        let agents = self.alive_count(Team::Agents);
        let opponents = self.alive_count(Team::Opponents);
        Some(match (agents, opponents) {
            (1.., 0) => Outcome::Win,
            (0, 1..) => Outcome::Loss,
            // Mutual annihilation counts as a draw, like a timeout with
            // both sides standing.
            _ => Outcome::Draw,
        })
    }
}

/// Advances one aircraft by one step: slew-limited turn toward the target
/// heading, instantaneous speed change within the envelope, then translation
/// along the new heading at the new speed.
pub fn step_aircraft(
    state: &AircraftState,
    cmd: &ManeuverCommand,
    dt: f64,
) -> Result<AircraftState, SimError> {
    if !state.alive {
        return Err(SimError::DeadAircraft(state.id));
    }
    let spec = state.spec();
    let turn_budget = spec.omega_max * dt;
    let want = geometry::signed_angle_diff(cmd.target_heading, state.pose.heading)?;
    let turn = want.clamp(-turn_budget, turn_budget);
    let heading = geometry::wrap_angle(state.pose.heading + turn)?;

    let speed = spec.clamp_speed(cmd.target_speed);
    let dist = knots_to_km_per_step(speed, dt);
    let (sin, cos) = heading.to_radians().sin_cos();

    let mut next = state.clone();
    next.pose = Pose2D {
        x: state.pose.x + dist * sin,
        y: state.pose.y + dist * cos,
        heading,
    };
    next.speed = speed;
    Ok(next)
}

/// True when `target_position` lies inside the shooter's weapon cone:
/// antenna train angle within the half-angle and distance within range,
/// both inclusive. Pure geometry; the caller is responsible for aliveness
/// (a simultaneous-fire round resolves shots of aircraft destroyed within
/// the same round).
pub fn in_wez(shooter: &AircraftState, target_position: (f64, f64), weapon: WeaponKind) -> bool {
    let (half_angle, range) = shooter.spec().envelope(weapon);
    let d = geometry::distance(shooter.pose.position(), target_position);
    if d > range || d == 0.0 {
        return false;
    }
    match geometry::antenna_train_angle(&shooter.pose, target_position) {
        Ok(ata) => ata <= half_angle,
        Err(_) => false,
    }
}

/// Resolves one fire command. Consumes one unit of ammunition whenever the
/// weapon is available; engages the nearest aircraft of either team inside
/// the envelope (alive before this step's resolutions began, per
/// `alive_snapshot`). A missing weapon or a cold rocket tube makes the
/// command a silent no-op.
pub fn resolve_fire(
    world: &mut WorldState,
    shooter_id: AircraftId,
    weapon: WeaponKind,
    alive_snapshot: &[AircraftId],
) -> Result<Vec<CombatEvent>, SimError> {
    let shooter = world.aircraft_by_id(shooter_id)?.clone();
    match weapon {
        WeaponKind::Cannon => {
            if shooter.cannon_remaining == 0 {
                return Ok(vec![]);
            }
        }
        WeaponKind::Rocket => {
            if !shooter.spec().has_rockets || !shooter.rocket_ready() {
                return Ok(vec![]);
            }
        }
    }

    // Ammo spent regardless of whether anything is in the cone.
    {
        let s = world.aircraft_by_id_mut(shooter_id)?;
        match weapon {
            WeaponKind::Cannon => s.cannon_remaining -= 1,
            WeaponKind::Rocket => {
                s.rockets_remaining -= 1;
                s.rocket_cooldown_left = s.spec().rocket_cooldown;
            }
        }
        s.shooting = true;
    }

    let candidate = alive_snapshot
        .iter()
        .filter(|&&id| id != shooter_id)
        .filter_map(|&id| world.aircraft_by_id(id).ok())
        .filter(|t| in_wez(&shooter, t.pose.position(), weapon))
        .min_by(|a, b| {
            let da = geometry::distance(shooter.pose.position(), a.pose.position());
            let db = geometry::distance(shooter.pose.position(), b.pose.position());
            da.partial_cmp(&db).unwrap().then(a.id.cmp(&b.id))
        })
        .map(|t| (t.id, t.team));

    let Some((victim_id, victim_team)) = candidate else {
        return Ok(vec![]);
    };

    let step = world.step;
    let mut events = vec![CombatEvent {
        kind: match weapon {
            WeaponKind::Cannon => EventKind::CannonFired,
            WeaponKind::Rocket => EventKind::RocketFired,
        },
        shooter: Some(shooter_id),
        victim: Some(victim_id),
        step,
    }];

    let hit = world.rng.gen::<f64>() < shooter.spec().p_hit;
    if hit {
        let victim = world.aircraft_by_id_mut(victim_id)?;
        // A victim already downed earlier in this resolution round cannot
        // die twice; the shot still consumed ammo and an rng draw.
        if victim.alive {
            victim.alive = false;
            events.push(CombatEvent {
                kind: if victim_team == shooter.team {
                    EventKind::FriendlyKill
                } else {
                    EventKind::Kill
                },
                shooter: Some(shooter_id),
                victim: Some(victim_id),
                step,
            });
        }
    }
    Ok(events)
}

/// Destroys every alive aircraft outside the inclusive `[0, map_size]^2` box.
pub fn check_boundary(world: &mut WorldState) -> Vec<CombatEvent> {
    let map = world.map_size;
    let step = world.step;
    let mut events = Vec::new();
    for a in world.aircraft.iter_mut().filter(|a| a.alive) {
        let (x, y) = a.pose.position();
        if x < 0.0 || x > map || y < 0.0 || y > map {
            a.alive = false;
            events.push(CombatEvent {
                kind: EventKind::OutOfBounds,
                shooter: None,
                victim: Some(a.id),
                step,
            });
        }
    }
    events
}

/// Spawns a fresh episode: teams on opposite random halves, random positions
/// and headings, full ammunition, step 0.
pub fn init_episode(config: &ScenarioConfig, seed: u64) -> Result<WorldState, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = config.map_size_km;

    // Coin flip decides which team takes the left half.
    let agents_left = rng.gen::<bool>();

    let mut aircraft = Vec::new();
    let mut next_id = 0u32;
    for (team, team_cfg, left) in [
        (Team::Agents, &config.agents, agents_left),
        (Team::Opponents, &config.opponents, !agents_left),
    ] {
        let kinds = pick_types(&team_cfg.types, team_cfg.count, &mut rng)?;
        let (x_lo, x_hi) = if left { (0.0, map / 2.0) } else { (map / 2.0, map) };
        for kind in kinds {
            let pose = Pose2D::new(
                rng.gen_range(x_lo..x_hi),
                rng.gen_range(0.0..map),
                rng.gen_range(0.0..360.0),
            )?;
            let spec = kind.spec();
            let speed = rng.gen_range(spec.v_min..=spec.v_max);
            aircraft.push(AircraftState::new(
                AircraftId(next_id),
                team,
                kind,
                pose,
                speed,
                team_cfg.ammo.cannon,
                team_cfg.ammo.rockets,
            ));
            next_id += 1;
        }
    }

    let last_actions = aircraft.iter().map(|a| (a.id, LastAction::default())).collect();
    Ok(WorldState {
        aircraft,
        map_size: map,
        horizon: config.horizon,
        step: 0,
        rng,
        last_actions,
    })
}

fn pick_types(
    mix: &TypeMix,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AircraftKind>, SimError> {
    match mix {
        TypeMix::Fixed(types) => Ok(types.clone()),
        TypeMix::Random => {
            let mut kinds: Vec<AircraftKind> = (0..count)
                .map(|_| {
                    if rng.gen::<bool>() {
                        AircraftKind::Ac1
                    } else {
                        AircraftKind::Ac2
                    }
                })
                .collect();
            // Teams of two or more field at least one of each type.
            if count >= 2 {
                for kind in AircraftKind::ALL {
                    if !kinds.contains(&kind) {
                        let slot = rng.gen_range(0..count);
                        kinds[slot] = kind;
                    }
                }
            }
            Ok(kinds)
        }
    }
}

/// Runs one full simulation step: all alive aircraft move simultaneously
/// (from their pre-step states), fire commands resolve in ascending id order
/// against pre-resolution aliveness, then the boundary is enforced and the
/// clock advances. Commands must cover every alive aircraft; entries for
/// dead aircraft are ignored.
pub fn advance(
    world: &mut WorldState,
    commands: &BTreeMap<AircraftId, ManeuverCommand>,
) -> Result<Vec<CombatEvent>, SimError> {
    let alive_ids: Vec<AircraftId> =
        world.aircraft.iter().filter(|a| a.alive).map(|a| a.id).collect();
    for id in &alive_ids {
        if !commands.contains_key(id) {
            return Err(SimError::MissingCommand(*id));
        }
    }

    // Cooldowns tick before this step's launches restart them.
    for a in world.aircraft.iter_mut().filter(|a| a.alive) {
        a.rocket_cooldown_left = a.rocket_cooldown_left.saturating_sub(1);
        a.shooting = false;
    }

    let pre_step_headings: BTreeMap<AircraftId, f64> =
        world.aircraft.iter().map(|a| (a.id, a.pose.heading)).collect();

    // Simultaneous kinematics: every new pose derives from pre-step state.
    let moved: Vec<AircraftState> = world
        .aircraft
        .iter()
        .map(|a| {
            if a.alive {
                step_aircraft(a, &commands[&a.id], DT_SECONDS)
            } else {
                Ok(a.clone())
            }
        })
        .collect::<Result<_, _>>()?;
    world.aircraft = moved;

    let mut events = Vec::new();
    for &id in &alive_ids {
        let cmd = &commands[&id];
        if cmd.fire_cannon {
            events.extend(resolve_fire(world, id, WeaponKind::Cannon, &alive_ids)?);
        }
        if cmd.fire_rocket {
            events.extend(resolve_fire(world, id, WeaponKind::Rocket, &alive_ids)?);
        }
    }

    events.extend(check_boundary(world));

    for &id in &alive_ids {
        let cmd = &commands[&id];
        let state = world.aircraft_by_id(id)?;
        let spec = state.spec();
        // Commanded turn mapped onto the [-90, 90] action range, then to [0, 1].
        let turn = geometry::signed_angle_diff(cmd.target_heading, pre_step_headings[&id])?;
        world.last_actions.insert(
            id,
            LastAction {
                heading: (turn.clamp(-90.0, 90.0) + 90.0) / 180.0,
                speed: if spec.v_max > spec.v_min {
                    (cmd.target_speed.clamp(spec.v_min, spec.v_max) - spec.v_min)
                        / (spec.v_max - spec.v_min)
                } else {
                    0.0
                },
                cannon: if cmd.fire_cannon { 1.0 } else { 0.0 },
                rocket: if cmd.fire_rocket { 1.0 } else { 0.0 },
            },
        );
    }

    world.step += 1;
    Ok(events)
}
