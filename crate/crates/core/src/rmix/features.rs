use crate::world::{candidate_grid, grid_index, GlobalState, Observation, TargetId, GRID_SIZE};

/// Width of the agent-identity one-hot. Covers every strict swarm size, so a
/// single network serves all of them.
pub const ID_WIDTH: usize = 11;

const POS_SCALE: f64 = 10.0;

/// Observation feature width for a given identity width.
pub const fn obs_dim(id_width: usize) -> usize {
    8 + 3 * GRID_SIZE + id_width
}

/// State feature width for `n` agents.
pub const fn state_dim(n: usize) -> usize {
    4 * n + 4 + 2 * GRID_SIZE + GRID_SIZE * n
}

/// Own pose, enemy pose, per grid point (offset, urgency or 0) and an
/// identity one-hot.
pub fn obs_features(obs: &Observation, agent: usize, id_width: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity(obs_dim(id_width));
    f.extend([
        obs.self_pos.x / POS_SCALE,
        obs.self_pos.y / POS_SCALE,
        obs.self_vel.x,
        obs.self_vel.y,
        obs.enemy_pos.x / POS_SCALE,
        obs.enemy_pos.y / POS_SCALE,
        obs.enemy_vel.x,
        obs.enemy_vel.y,
    ]);
    let mut urgency = [0.0; GRID_SIZE];
    for t in &obs.targets {
        if let Some(g) = grid_index(t.pos) {
            urgency[g] = t.urgency;
        }
    }
    for (g, p) in candidate_grid().iter().enumerate() {
        f.extend([
            (p.x - obs.self_pos.x) / POS_SCALE,
            (p.y - obs.self_pos.y) / POS_SCALE,
            urgency[g],
        ]);
    }
    let mut id = vec![0.0; id_width];
    if agent < id_width {
        id[agent] = 1.0;
    }
    f.extend(id);
    f
}

/// Agent poses, enemy pose, grid occupancy and urgency, and the intents
/// as one-hot grid indices.
pub fn state_features(state: &GlobalState, intents: &[TargetId]) -> Vec<f64> {
    let n = state.agents.len();
    let mut f = Vec::with_capacity(state_dim(n));
    for a in &state.agents {
        f.extend([a.pos.x / POS_SCALE, a.pos.y / POS_SCALE, a.vel.x, a.vel.y]);
    }
    f.extend([
        state.enemy.pos.x / POS_SCALE,
        state.enemy.pos.y / POS_SCALE,
        state.enemy.vel.x,
        state.enemy.vel.y,
    ]);
    let mut grid = [(0.0, 0.0); GRID_SIZE];
    for t in &state.targets {
        if let Some(g) = grid_index(t.pos) {
            grid[g] = (1.0, t.urgency);
        }
    }
    for (active, k) in grid {
        f.extend([active, k]);
    }
    for i in 0..n {
        let mut one_hot = [0.0; GRID_SIZE];
        let slot = intents
            .get(i)
            .and_then(|id| state.target(*id))
            .and_then(|t| grid_index(t.pos));
        if let Some(g) = slot {
            one_hot[g] = 1.0;
        }
        f.extend(one_hot);
    }
    f
}
