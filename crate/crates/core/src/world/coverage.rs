use serde::{Deserialize, Serialize};

use super::{centroid, hausdorff, GlobalState, TargetId, Vec2, World};
use crate::nav::{group_detachments, ring_radius, FormationTemplate};

/// A group of agents sharing a goal and currently inside that goal's region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detachment {
    pub target: TargetId,
    /// Index of the id-ordered chunk this detachment came from.
    pub chunk: usize,
    /// Member agent ids, ascending.
    pub members: Vec<usize>,
    /// Hausdorff error against the template, when the size admits a template.
    pub formation_error: Option<f64>,
    pub formation_ok: bool,
}

impl Detachment {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Ordered by (target id, chunk).
    pub detachments: Vec<Detachment>,
}

impl CoverageReport {
    /// Detachments covering `target` in a valid formation.
    pub fn covering(&self, target: TargetId) -> impl Iterator<Item = &Detachment> {
        self.detachments
            .iter()
            .filter(move |d| d.target == target && d.formation_ok)
    }

    /// Total size of the valid detachments covering `target`.
    pub fn covering_agents(&self, target: TargetId) -> usize {
        self.covering(target).map(Detachment::size).sum()
    }
}

impl World {
    /// Groups agents by goal (split into id-ordered chunks of at most
    /// `max_formation`), keeps the members inside the goal's region, and
    /// scores each group against its formation template.
    ///
    /// Relative positions are taken about the group centroid; a group is in
    /// formation when its size lies in `[min_formation, max_formation]` and its
    /// Hausdorff error is at most `formation_tolerance`.
    pub fn detect_coverage(&self, state: &GlobalState, goals: &[TargetId]) -> CoverageReport {
        assert_eq!(goals.len(), state.agents.len(), "one goal per agent");
        let cfg = self.config();
        let mut detachments = Vec::new();
        for plan in group_detachments(goals, cfg.max_formation) {
            let Some(target) = state.target(plan.target) else {
                continue;
            };
            let members: Vec<usize> = plan
                .members
                .iter()
                .copied()
                .filter(|&i| state.agents[i].pos.distance(target.pos) < target.radius)
                .collect();
            if members.is_empty() {
                continue;
            }
            let n = members.len();
            let formation_error = if (cfg.min_formation..=cfg.max_formation).contains(&n) {
                let positions: Vec<Vec2> = members.iter().map(|&i| state.agents[i].pos).collect();
                let center = centroid(&positions);
                let relative: Vec<Vec2> = positions.iter().map(|p| *p - center).collect();
                let template = FormationTemplate::regular(n, ring_radius(cfg.formation_radius, plan.chunk));
                Some(hausdorff(&relative, template.offsets()).expect("nonempty sets"))
            } else {
                None
            };
            let formation_ok = formation_error.is_some_and(|e| e <= cfg.formation_tolerance);
            detachments.push(Detachment {
                target: plan.target,
                chunk: plan.chunk,
                members,
                formation_error,
                formation_ok,
            });
        }
        CoverageReport { detachments }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{AgentState, EnemyState, TargetRegion, WorldConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state_with(agents: Vec<Vec2>, targets: Vec<(u32, Vec2)>) -> GlobalState {
        GlobalState {
            agents: agents
                .into_iter()
                .enumerate()
                .map(|(id, pos)| AgentState { id, pos, vel: Vec2::ZERO })
                .collect(),
            enemy: EnemyState { pos: Vec2::new(9.0, -9.0), vel: Vec2::ZERO },
            targets: targets
                .into_iter()
                .map(|(id, p)| TargetRegion::new(TargetId(id), p, 1.5))
                .collect(),
            obstacles: vec![],
            step: 0,
            seed: 0,
        }
    }

    fn world() -> World {
        World::new(WorldConfig { strict: false, ..WorldConfig::default() }).unwrap()
    }

    #[test]
    fn square_on_template_is_in_formation() {
        let c = Vec2::new(-8.0, 8.0);
        let square = [(0.75, 0.0), (0.0, 0.75), (-0.75, 0.0), (0.0, -0.75)];
        let agents = square.iter().map(|&(x, y)| c + Vec2::new(x, y)).collect();
        let s = state_with(agents, vec![(0, c)]);
        let report = world().detect_coverage(&s, &[TargetId(0); 4]);
        assert_eq!(report.detachments.len(), 1);
        let d = &report.detachments[0];
        assert!(d.formation_ok);
        assert_eq!(d.size(), 4);
        assert!(d.formation_error.unwrap() < 1e-12);
        assert_eq!(report.covering_agents(TargetId(0)), 4);
    }

    #[test]
    fn pair_is_below_minimum_formation() {
        let c = Vec2::new(0.0, 0.0);
        let s = state_with(vec![Vec2::new(0.5, 0.0), Vec2::new(-0.5, 0.0)], vec![(0, c)]);
        let report = world().detect_coverage(&s, &[TargetId(0); 2]);
        assert_eq!(report.detachments.len(), 1);
        assert!(!report.detachments[0].formation_ok);
        assert_eq!(report.covering_agents(TargetId(0)), 0);
    }

    #[test]
    fn agents_outside_region_do_not_count() {
        let c = Vec2::new(8.0, 0.0);
        let s = state_with(vec![Vec2::new(0.0, 0.0); 3], vec![(0, c)]);
        let report = world().detect_coverage(&s, &[TargetId(0); 3]);
        assert!(report.detachments.is_empty());
    }

    /// Brute-force grouping: walk every (agent, target) pair.
    #[test]
    fn membership_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = world();
        let grid = crate::world::candidate_grid();
        for _ in 0..300 {
            let targets: Vec<(u32, Vec2)> = (0..3).map(|i| (i, grid[(i as usize) * 3 + 1])).collect();
            let agents: Vec<Vec2> = (0..10)
                .map(|_| {
                    let t = targets[rng.random_range(0..3)].1;
                    t + Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))
                })
                .collect();
            let goals: Vec<TargetId> = (0..10).map(|_| TargetId(rng.random_range(0..3))).collect();
            let s = state_with(agents.clone(), targets.clone());
            let report = w.detect_coverage(&s, &goals);
            for (tid, tpos) in &targets {
                let mut expected: Vec<usize> = Vec::new();
                for i in 0..10 {
                    if goals[i] == TargetId(*tid) && agents[i].distance(*tpos) < 1.5 {
                        expected.push(i);
                    }
                }
                let mut got: Vec<usize> = report
                    .detachments
                    .iter()
                    .filter(|d| d.target == TargetId(*tid))
                    .flat_map(|d| d.members.clone())
                    .collect();
                got.sort();
                assert_eq!(got, expected);
            }
            // each agent in at most one detachment
            let mut all: Vec<usize> = report.detachments.iter().flat_map(|d| d.members.clone()).collect();
            let before = all.len();
            all.sort();
            all.dedup();
            assert_eq!(before, all.len());
        }
    }
}
