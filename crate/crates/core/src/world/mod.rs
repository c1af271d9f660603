//! Deterministic 2D particle environment for cooperative coverage under pursuit.
//!
//! Agents are point masses that must cover urgency-weighted target regions in
//! formation while a scripted pursuer chases the nearest cluster of agents.
//! Target urgency decays while a valid formation covers the region; regions
//! whose urgency reaches zero are re-sampled on the candidate grid.
//!
//! Every operation is a function of an immutable [`GlobalState`]; stepping
//! returns a new state. Randomness (initial layout, target re-sampling) is
//! derived from the seed stored in the state, so identical seeds and action
//! sequences produce bit-identical trajectories.

mod coverage;
mod enemy;
mod geometry;
mod reward;

pub use coverage::{CoverageReport, Detachment};
pub use enemy::EnemyParams;
pub use geometry::{centroid, hausdorff, Vec2};
pub use reward::{RewardBreakdown, RewardWeights};

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Candidate target grid: every combination of these coordinates.
pub const GRID_COORDS: [f64; 3] = [-8.0, 0.0, 8.0];

/// Number of points on the candidate grid.
pub const GRID_SIZE: usize = 9;

/// Admissible swarm sizes in strict mode.
pub const STRICT_SWARM_SIZES: std::ops::RangeInclusive<usize> = 8..=11;

/// The candidate grid in row-major order (x outer, y inner).
pub fn candidate_grid() -> [Vec2; GRID_SIZE] {
    let mut out = [Vec2::ZERO; GRID_SIZE];
    for (i, x) in GRID_COORDS.iter().enumerate() {
        for (j, y) in GRID_COORDS.iter().enumerate() {
            out[i * 3 + j] = Vec2::new(*x, *y);
        }
    }
    out
}

/// Index of `p` on the candidate grid, if it lies (within 1e-9) on a grid point.
pub fn grid_index(p: Vec2) -> Option<usize> {
    candidate_grid()
        .iter()
        .position(|g| (g.x - p.x).abs() < 1e-9 && (g.y - p.y).abs() < 1e-9)
}

/// Identifier of a target region. Stable across re-sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetId(pub u32);

impl fmt::Display for TargetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRegion {
    pub id: TargetId,
    pub pos: Vec2,
    pub urgency: f64,
    pub radius: f64,
    /// Urgency at spawn time.
    pub spawn_urgency: f64,
    /// Accumulated covering agent-steps since spawn; urgency is
    /// `max(spawn_urgency - decay * coverage, 0)`.
    pub coverage: u64,
}

impl TargetRegion {
    pub fn new(id: TargetId, pos: Vec2, radius: f64) -> Self {
        TargetRegion {
            id,
            pos,
            urgency: 1.0,
            radius,
            spawn_urgency: 1.0,
            coverage: 0,
        }
    }

    /// A region with an arbitrary starting urgency.
    pub fn with_urgency(mut self, urgency: f64) -> Self {
        self.urgency = urgency;
        self.spawn_urgency = urgency;
        self.coverage = 0;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleDisc {
    pub center: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub pos: Vec2,
    pub vel: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnemyState {
    pub pos: Vec2,
    pub vel: Vec2,
}

/// Joint world state. Agents are stored in id order (`agents[i].id == i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub agents: Vec<AgentState>,
    pub enemy: EnemyState,
    pub targets: Vec<TargetRegion>,
    pub obstacles: Vec<ObstacleDisc>,
    pub step: usize,
    /// Seed used to derive re-sampling randomness.
    pub seed: u64,
}

impl GlobalState {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn target(&self, id: TargetId) -> Option<&TargetRegion> {
        self.targets.iter().find(|t| t.id == id)
    }

    /// Active targets sorted by id.
    pub fn sorted_targets(&self) -> Vec<&TargetRegion> {
        let mut ts: Vec<&TargetRegion> = self.targets.iter().collect();
        ts.sort_by_key(|t| t.id);
        ts
    }
}

/// A target as seen by an agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetView {
    pub id: TargetId,
    pub pos: Vec2,
    pub urgency: f64,
}

/// Per-agent view: own pose, the pursuer's pose and every target with its urgency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub self_pos: Vec2,
    pub self_vel: Vec2,
    pub enemy_pos: Vec2,
    pub enemy_vel: Vec2,
    /// Ordered by target id.
    pub targets: Vec<TargetView>,
}

impl Observation {
    pub fn target(&self, id: TargetId) -> Option<&TargetView> {
        self.targets.iter().find(|t| t.id == id)
    }

    pub fn enemy_distance(&self) -> f64 {
        self.self_pos.distance(self.enemy_pos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_agents: usize,
    pub n_targets: usize,
    /// Restrict the swarm size to 8..=11.
    pub strict: bool,
    pub episode_length: usize,
    pub decision_period: usize,
    pub dt: f64,
    /// Communication / observation range δ_obs.
    pub obs_range: f64,
    /// Urgency decrease per covering agent per step.
    pub decay: f64,
    pub target_radius: f64,
    /// Maximum Hausdorff error for a detachment to count as in formation.
    pub formation_tolerance: f64,
    /// Circumradius of the innermost formation ring.
    pub formation_radius: f64,
    pub min_formation: usize,
    pub max_formation: usize,
    pub safe_distance: f64,
    pub collision_distance: f64,
    pub arena_half_width: f64,
    pub agent_speed_limit: f64,
    pub enemy_speed_limit: f64,
    pub weights: RewardWeights,
    /// Hausdorff error at which the per-detachment formation reward reaches zero.
    pub formation_scale: f64,
    /// Distance at which the navigation reward reaches zero.
    pub navigation_scale: f64,
    pub obstacles: Vec<ObstacleDisc>,
    pub enemy: EnemyParams,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_agents: 8,
            n_targets: 3,
            strict: true,
            episode_length: 1000,
            decision_period: 50,
            dt: 0.1,
            obs_range: 3.0,
            decay: 0.003,
            target_radius: 1.5,
            formation_tolerance: 0.5,
            formation_radius: 0.75,
            min_formation: 3,
            max_formation: 8,
            safe_distance: 1.5,
            collision_distance: 0.3,
            arena_half_width: 10.0,
            agent_speed_limit: 1.0,
            enemy_speed_limit: 0.75,
            weights: RewardWeights::default(),
            formation_scale: 2.0,
            navigation_scale: 16.0 * std::f64::consts::SQRT_2,
            obstacles: vec![
                ObstacleDisc { center: Vec2::new(-4.0, 4.0), radius: 0.8 },
                ObstacleDisc { center: Vec2::new(4.0, -4.0), radius: 0.8 },
                ObstacleDisc { center: Vec2::new(4.0, 4.0), radius: 0.6 },
                ObstacleDisc { center: Vec2::new(-4.0, -4.0), radius: 0.6 },
            ],
            enemy: EnemyParams::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.strict && !STRICT_SWARM_SIZES.contains(&self.n_agents) {
            return fail(format!(
                "n_agents = {} outside {}..={} (strict mode)",
                self.n_agents,
                STRICT_SWARM_SIZES.start(),
                STRICT_SWARM_SIZES.end()
            ));
        }
        if self.n_agents == 0 {
            return fail("n_agents must be positive".into());
        }
        if self.n_targets == 0 || self.n_targets > GRID_SIZE {
            return fail(format!("n_targets = {} outside 1..={GRID_SIZE}", self.n_targets));
        }
        if self.decision_period == 0 || self.episode_length == 0 {
            return fail("episode_length and decision_period must be positive".into());
        }
        if self.min_formation == 0 || self.min_formation > self.max_formation {
            return fail(format!(
                "formation size range {}..={} is empty",
                self.min_formation, self.max_formation
            ));
        }
        let positive = [
            ("dt", self.dt),
            ("obs_range", self.obs_range),
            ("target_radius", self.target_radius),
            ("formation_radius", self.formation_radius),
            ("arena_half_width", self.arena_half_width),
            ("agent_speed_limit", self.agent_speed_limit),
            ("enemy_speed_limit", self.enemy_speed_limit),
            ("formation_scale", self.formation_scale),
            ("navigation_scale", self.navigation_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        let nonnegative = [
            ("decay", self.decay),
            ("formation_tolerance", self.formation_tolerance),
            ("safe_distance", self.safe_distance),
            ("collision_distance", self.collision_distance),
        ];
        for (name, v) in nonnegative {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be nonnegative, got {v}"));
            }
        }
        self.weights.validate()?;
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0 && o.center.is_finite()) {
                return fail(format!("obstacle {i} needs a positive radius"));
            }
        }
        Ok(())
    }

    /// Number of decision frames in one episode.
    pub fn frames_per_episode(&self) -> usize {
        self.episode_length.div_ceil(self.decision_period)
    }
}

/// A validated world configuration with the stepping, coverage and reward
/// operations attached.
#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        Ok(World { config })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    /// Initial state for `seed`: targets on distinct grid points with urgency 1,
    /// agents scattered around the arena center, the pursuer near an edge.
    pub fn init(&self, seed: u64) -> GlobalState {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x1417));

        let mut grid: Vec<Vec2> = candidate_grid().to_vec();
        let mut targets = Vec::with_capacity(cfg.n_targets);
        for id in 0..cfg.n_targets {
            let pick = rng.random_range(0..grid.len());
            let pos = grid.swap_remove(pick);
            targets.push(TargetRegion::new(TargetId(id as u32), pos, cfg.target_radius));
        }

        let clearance = cfg.collision_distance + 0.2;
        let mut agents: Vec<AgentState> = Vec::with_capacity(cfg.n_agents);
        while agents.len() < cfg.n_agents {
            let p = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let blocked = cfg
                .obstacles
                .iter()
                .any(|o| p.distance(o.center) < o.radius + clearance)
                || agents.iter().any(|a| a.pos.distance(p) < 2.0 * cfg.collision_distance);
            if !blocked {
                agents.push(AgentState {
                    id: agents.len(),
                    pos: p,
                    vel: Vec2::ZERO,
                });
            }
        }

        let edge = cfg.arena_half_width - 1.0;
        let along = rng.random_range(-edge..edge);
        let enemy_pos = match rng.random_range(0..4) {
            0 => Vec2::new(along, edge),
            1 => Vec2::new(along, -edge),
            2 => Vec2::new(edge, along),
            _ => Vec2::new(-edge, along),
        };

        GlobalState {
            agents,
            enemy: EnemyState {
                pos: enemy_pos,
                vel: Vec2::ZERO,
            },
            targets,
            obstacles: cfg.obstacles.clone(),
            step: 0,
            seed,
        }
    }

    /// Communication neighbors of `agent_id` under this world's range.
    pub fn neighbors(&self, state: &GlobalState, agent_id: usize) -> BTreeSet<usize> {
        neighbor_set(state, agent_id, self.config.obs_range)
    }

    /// Advances one timestep with semi-implicit Euler. Velocities are clamped
    /// componentwise to the speed limits; positions are clamped to the arena
    /// and outward velocity at the boundary is zeroed.
    ///
    /// Panics if `accels` does not have one entry per agent.
    pub fn step(&self, state: &GlobalState, accels: &[Vec2], enemy_accel: Vec2) -> GlobalState {
        assert_eq!(
            accels.len(),
            state.agents.len(),
            "step needs one acceleration per agent"
        );
        let cfg = &self.config;
        let mut next = state.clone();
        for (agent, a) in next.agents.iter_mut().zip(accels) {
            let (pos, vel) = integrate(agent.pos, agent.vel, *a, cfg.dt, cfg.agent_speed_limit, cfg.arena_half_width);
            agent.pos = pos;
            agent.vel = vel;
        }
        let (pos, vel) = integrate(
            state.enemy.pos,
            state.enemy.vel,
            enemy_accel,
            cfg.dt,
            cfg.enemy_speed_limit,
            cfg.arena_half_width,
        );
        next.enemy = EnemyState { pos, vel };
        next.step += 1;
        next
    }

    /// Decays urgency of covered targets and re-samples exhausted ones.
    pub fn update_urgency(&self, state: &GlobalState, report: &CoverageReport) -> GlobalState {
        let cfg = &self.config;
        let mut next = state.clone();
        let grid = candidate_grid();
        for idx in 0..next.targets.len() {
            let id = next.targets[idx].id;
            let covering = report.covering_agents(id) as u64;
            if covering == 0 {
                continue;
            }
            let t = &mut next.targets[idx];
            t.coverage += covering;
            t.urgency = (t.spawn_urgency - cfg.decay * t.coverage as f64).max(0.0);
            if t.urgency > 0.0 {
                continue;
            }
            // Re-sample onto a grid point no active target occupies.
            let occupied: Vec<Vec2> = next.targets.iter().map(|t| t.pos).collect();
            let free: Vec<Vec2> = grid
                .iter()
                .copied()
                .filter(|g| !occupied.iter().any(|o| o.distance(*g) < 1e-9))
                .collect();
            let t = &mut next.targets[idx];
            if !free.is_empty() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    state.seed,
                    ((state.step as u64) << 8) ^ u64::from(id.0) ^ 0x5eed_0000,
                ));
                t.pos = free[rng.random_range(0..free.len())];
            }
            t.urgency = 1.0;
            t.spawn_urgency = 1.0;
            t.coverage = 0;
        }
        next
    }
}

/// Convenience wrapper: validate `config` and build the initial state.
pub fn init_world(config: WorldConfig, seed: u64) -> Result<GlobalState> {
    Ok(World::new(config)?.init(seed))
}

fn integrate(pos: Vec2, vel: Vec2, accel: Vec2, dt: f64, speed: f64, half_width: f64) -> (Vec2, Vec2) {
    let mut v = (vel + accel * dt).clamp_components(speed);
    let mut p = pos + v * dt;
    if p.x > half_width {
        p.x = half_width;
        v.x = v.x.min(0.0);
    } else if p.x < -half_width {
        p.x = -half_width;
        v.x = v.x.max(0.0);
    }
    if p.y > half_width {
        p.y = half_width;
        v.y = v.y.min(0.0);
    } else if p.y < -half_width {
        p.y = -half_width;
        v.y = v.y.max(0.0);
    }
    (p, v)
}

/// Projects the global state onto agent `agent_id`'s observation.
pub fn observe(state: &GlobalState, agent_id: usize) -> Result<Observation> {
    let agent = state.agents.get(agent_id).ok_or(Error::Lookup {
        kind: "agent",
        id: agent_id,
    })?;
    let targets = state
        .sorted_targets()
        .into_iter()
        .map(|t| TargetView {
            id: t.id,
            pos: t.pos,
            urgency: t.urgency,
        })
        .collect();
    Ok(Observation {
        self_pos: agent.pos,
        self_vel: agent.vel,
        enemy_pos: state.enemy.pos,
        enemy_vel: state.enemy.vel,
        targets,
    })
}

/// Agents strictly closer than `range` to `agent_id`, excluding itself.
pub fn neighbor_set(state: &GlobalState, agent_id: usize, range: f64) -> BTreeSet<usize> {
    let Some(me) = state.agents.get(agent_id) else {
        return BTreeSet::new();
    };
    state
        .agents
        .iter()
        .filter(|a| a.id != agent_id && a.pos.distance(me.pos) < range)
        .map(|a| a.id)
        .collect()
}
