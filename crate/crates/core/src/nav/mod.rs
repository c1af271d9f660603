//! Formation geometry, slot assignment and a potential-field navigation
//! controller that drives agents to their consensus goals.

mod hungarian;

pub use hungarian::min_cost_assignment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{AgentState, EnemyState, GlobalState, ObstacleDisc, TargetId, Vec2};

/// Radial spacing between concentric formation rings.
pub const RING_SPACING: f64 = 0.5;

/// Share of the repulsion magnitude applied tangentially, steering around discs.
const TANGENTIAL_RATIO: f64 = 0.5;

/// Smallest surface gap used in the inverse-square law.
const MIN_GAP: f64 = 1e-3;

/// Circumradius of ring `chunk` given the innermost ring radius.
pub fn ring_radius(base: f64, chunk: usize) -> f64 {
    base + RING_SPACING * chunk as f64
}

/// Regular polygon formation: slot `k` sits at angle `2πk/c` on the circumcircle.
/// A single-agent template is the center point.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationTemplate {
    offsets: Vec<Vec2>,
}

impl FormationTemplate {
    pub fn regular(size: usize, radius: f64) -> Self {
        assert!(size > 0, "formation needs at least one slot");
        if size == 1 {
            return FormationTemplate { offsets: vec![Vec2::ZERO] };
        }
        let offsets = (0..size)
            .map(|k| {
                let theta = std::f64::consts::TAU * k as f64 / size as f64;
                Vec2::new(radius * theta.cos(), radius * theta.sin())
            })
            .collect();
        FormationTemplate { offsets }
    }

    /// A template whose size must lie in `[min, max]`.
    pub fn bounded(size: usize, radius: f64, min: usize, max: usize) -> Result<Self> {
        if !(min..=max).contains(&size) {
            return Err(Error::Argument(format!("formation size {size} outside {min}..={max}")));
        }
        Ok(Self::regular(size, radius))
    }

    pub fn size(&self) -> usize {
        self.offsets.len()
    }

    pub fn offsets(&self) -> &[Vec2] {
        &self.offsets
    }
}

/// Template offsets translated to `center`.
pub fn formation_slots(template: &FormationTemplate, center: Vec2) -> Vec<Vec2> {
    template.offsets.iter().map(|o| center + *o).collect()
}

/// Assigns agents to slots minimizing the total squared distance.
/// Returns the slot index for each agent, in input order.
pub fn assign_slots(agents: &[Vec2], slots: &[Vec2]) -> Result<Vec<usize>> {
    if agents.len() != slots.len() {
        return Err(Error::Argument(format!(
            "{} agents for {} slots",
            agents.len(),
            slots.len()
        )));
    }
    let n = agents.len();
    let mut cost = Vec::with_capacity(n * n);
    for a in agents {
        for s in slots {
            let d = *a - *s;
            cost.push(d.dot(d));
        }
    }
    Ok(min_cost_assignment(&cost, n))
}

/// One id-ordered chunk of agents sharing a goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetachmentPlan {
    pub target: TargetId,
    pub chunk: usize,
    pub members: Vec<usize>,
}

/// Groups agents by goal and splits each group into id-ordered chunks of at
/// most `max_size`. Ordered by (target, chunk).
pub fn group_detachments(goals: &[TargetId], max_size: usize) -> Vec<DetachmentPlan> {
    let mut targets: Vec<TargetId> = goals.to_vec();
    targets.sort();
    targets.dedup();
    let mut plans = Vec::new();
    for target in targets {
        let members: Vec<usize> = (0..goals.len()).filter(|&i| goals[i] == target).collect();
        for (chunk, part) in members.chunks(max_size.max(1)).enumerate() {
            plans.push(DetachmentPlan {
                target,
                chunk,
                members: part.to_vec(),
            });
        }
    }
    plans
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavParams {
    pub attraction: f64,
    pub damping: f64,
    pub accel_limit: f64,
    pub repulsion_gain: f64,
    /// Enemy repulsion acts inside this distance.
    pub enemy_avoid_distance: f64,
    /// Enemy repulsion at zero distance; falls linearly to 0 at `enemy_avoid_distance`.
    pub enemy_gain: f64,
    /// Teammates closer than this push each other apart.
    pub separation_distance: f64,
    /// Push at zero distance; falls linearly to 0 at `separation_distance`.
    pub separation_gain: f64,
}

impl Default for NavParams {
    fn default() -> Self {
        NavParams {
            attraction: 2.0,
            damping: 1.5,
            accel_limit: 3.0,
            repulsion_gain: 1.0,
            enemy_avoid_distance: 3.0,
            enemy_gain: 6.0,
            separation_distance: 0.5,
            separation_gain: 4.0,
        }
    }
}

/// Inverse-square repulsion from every obstacle whose center is within twice
/// its radius, plus a tangential share that slides around the disc on the
/// side of `heading`.
pub fn obstacle_repulsion(pos: Vec2, heading: Vec2, obstacles: &[ObstacleDisc], gain: f64) -> Vec2 {
    let mut total = Vec2::ZERO;
    for o in obstacles {
        let diff = pos - o.center;
        let dist = diff.norm();
        if dist >= 2.0 * o.radius {
            continue;
        }
        let radial = if dist > 0.0 { diff * (1.0 / dist) } else { Vec2::new(1.0, 0.0) };
        let gap = (dist - o.radius).max(MIN_GAP);
        let magnitude = gain / (gap * gap);
        let mut tangent = radial.perp();
        if tangent.dot(heading) < 0.0 {
            tangent = -tangent;
        }
        total += radial * magnitude + tangent * (magnitude * TANGENTIAL_RATIO);
    }
    total
}

/// Potential-field command toward `slot`: spring-damper attraction plus
/// obstacle and enemy repulsion, capped at `accel_limit`.
pub fn accel_command(
    agent: &AgentState,
    slot: Vec2,
    obstacles: &[ObstacleDisc],
    enemy: &EnemyState,
    params: &NavParams,
) -> Vec2 {
    let to_slot = slot - agent.pos;
    let mut cmd = to_slot * params.attraction - agent.vel * params.damping;
    cmd += obstacle_repulsion(agent.pos, to_slot, obstacles, params.repulsion_gain);
    let away = agent.pos - enemy.pos;
    let d = away.norm();
    if d < params.enemy_avoid_distance {
        let dir = if d > 0.0 { away * (1.0 / d) } else { Vec2::new(1.0, 0.0) };
        cmd += dir * (params.enemy_gain * (1.0 - d / params.enemy_avoid_distance));
    }
    cmd.clamp_norm(params.accel_limit)
}

/// Linear push away from every teammate inside `separation_distance`.
/// Coincident agents split along the axis given by their id order.
pub fn separation(agent: &AgentState, agents: &[AgentState], params: &NavParams) -> Vec2 {
    let mut total = Vec2::ZERO;
    for b in agents {
        if b.id == agent.id {
            continue;
        }
        let away = agent.pos - b.pos;
        let d = away.norm();
        if d >= params.separation_distance {
            continue;
        }
        let dir = if d > 0.0 {
            away * (1.0 / d)
        } else if agent.id < b.id {
            Vec2::new(-1.0, 0.0)
        } else {
            Vec2::new(1.0, 0.0)
        };
        total += dir * (params.separation_gain * (1.0 - d / params.separation_distance));
    }
    total
}

/// Maps consensus goals to per-agent formation slots and emits acceleration
/// commands. Slots are re-planned whenever goals change.
#[derive(Debug, Clone)]
pub struct FormationController {
    params: NavParams,
    formation_radius: f64,
    max_formation: usize,
    slots: Vec<Vec2>,
}

impl FormationController {
    pub fn new(params: NavParams, formation_radius: f64, max_formation: usize) -> Self {
        FormationController {
            params,
            formation_radius,
            max_formation,
            slots: Vec::new(),
        }
    }

    pub fn params(&self) -> &NavParams {
        &self.params
    }

    /// Current slot of every agent.
    pub fn slots(&self) -> &[Vec2] {
        &self.slots
    }

    /// Assigns each agent a slot in its detachment's formation around its goal.
    /// Goals that name no active target leave the agent holding position.
    pub fn plan(&mut self, state: &GlobalState, goals: &[TargetId]) {
        let mut slots: Vec<Vec2> = state.agents.iter().map(|a| a.pos).collect();
        for plan in group_detachments(goals, self.max_formation) {
            let Some(target) = state.target(plan.target) else {
                continue;
            };
            let template = FormationTemplate::regular(
                plan.members.len(),
                ring_radius(self.formation_radius, plan.chunk),
            );
            let positions = formation_slots(&template, target.pos);
            let agents: Vec<Vec2> = plan.members.iter().map(|&i| state.agents[i].pos).collect();
            let assignment = assign_slots(&agents, &positions).expect("chunk and template sizes agree");
            for (k, &agent) in plan.members.iter().enumerate() {
                slots[agent] = positions[assignment[k]];
            }
        }
        self.slots = slots;
    }

    /// Overrides one agent's slot (used for scripted roles that leave the formation).
    pub fn set_slot(&mut self, agent: usize, slot: Vec2) {
        self.slots[agent] = slot;
    }

    pub fn commands(&self, state: &GlobalState) -> Vec<Vec2> {
        state
            .agents
            .iter()
            .map(|a| {
                let cmd = accel_command(a, self.slots[a.id], &state.obstacles, &state.enemy, &self.params);
                (cmd + separation(a, &state.agents, &self.params)).clamp_norm(self.params.accel_limit)
            })
            .collect()
    }
}
