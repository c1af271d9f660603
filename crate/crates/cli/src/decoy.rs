//! The enemy-baiting fourth role used only by the role-count ablation.

use swarm_core::nav::FormationController;
use swarm_core::roles::Role;
use swarm_core::world::{GlobalState, Vec2};

/// Distance the decoy keeps from the pursuer. Above the interference radius
/// so baiting is not itself penalised.
pub const DECOY_STANDOFF: f64 = 2.0;

/// Executor nearest the enemy; lowest id on ties. `None` without executors.
pub fn pick_decoy(state: &GlobalState, roles: &[Role]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, a) in state.agents.iter().enumerate() {
        if roles.get(i) != Some(&Role::Executor) {
            continue;
        }
        let d = a.pos.distance(state.enemy.pos);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Point on the far side of the enemy from the closest active target, so
/// a pursuer following the decoy is led away from the work.
pub fn bait_point(state: &GlobalState, standoff: f64) -> Vec2 {
    let enemy = state.enemy.pos;
    let nearest = state
        .targets
        .iter()
        .map(|t| t.pos)
        .min_by(|a, b| a.distance(enemy).total_cmp(&b.distance(enemy)));
    let away = match nearest {
        Some(p) if p.distance(enemy) > 1e-9 => enemy - p,
        _ => Vec2::new(1.0, 0.0),
    };
    let p = enemy + away.normalized() * standoff;
    let lim = 9.5;
    Vec2::new(p.x.clamp(-lim, lim), p.y.clamp(-lim, lim))
}

/// Slot hook that keeps one agent at the bait point.
pub fn decoy_hook(decoy: Option<usize>) -> impl FnMut(&GlobalState, &mut FormationController) {
    move |state, controller| {
        if let Some(i) = decoy {
            controller.set_slot(i, bait_point(state, DECOY_STANDOFF));
        }
    }
}
