use serde::{Deserialize, Serialize};

use super::{centroid, GlobalState, Vec2, World};
use crate::nav::obstacle_repulsion;

/// Scripted pursuer parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnemyParams {
    /// Magnitude of the pursuit acceleration.
    pub pursuit_accel: f64,
    /// Agents closer than this are linked into one cluster.
    pub cluster_link: f64,
    /// Smallest cluster worth chasing.
    pub min_cluster: usize,
    pub repulsion_gain: f64,
    pub accel_limit: f64,
}

impl Default for EnemyParams {
    fn default() -> Self {
        EnemyParams {
            pursuit_accel: 2.0,
            cluster_link: 3.0,
            min_cluster: 3,
            repulsion_gain: 1.0,
            accel_limit: 3.0,
        }
    }
}

impl World {
    /// Clusters of agents: connected components of the graph linking agents
    /// closer than `cluster_link`. Each cluster is sorted; clusters are ordered
    /// by their smallest member.
    pub fn agent_clusters(&self, state: &GlobalState) -> Vec<Vec<usize>> {
        let link = self.config().enemy.cluster_link;
        let n = state.agents.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for i in 0..n {
            for j in i + 1..n {
                if state.agents[i].pos.distance(state.agents[j].pos) < link {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        let mut root_slot: Vec<Option<usize>> = vec![None; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            match root_slot[r] {
                Some(k) => clusters[k].push(i),
                None => {
                    root_slot[r] = Some(clusters.len());
                    clusters.push(vec![i]);
                }
            }
        }
        clusters
    }

    /// Pursuit toward the centroid of the nearest cluster with at least
    /// `min_cluster` members, bent around obstacles. Zero when no such cluster exists.
    pub fn enemy_accel(&self, state: &GlobalState) -> Vec2 {
        let params = self.config().enemy;
        let me = state.enemy.pos;
        let target = self
            .agent_clusters(state)
            .into_iter()
            .filter(|c| c.len() >= params.min_cluster)
            .map(|c| {
                let pts: Vec<Vec2> = c.iter().map(|&i| state.agents[i].pos).collect();
                centroid(&pts)
            })
            .min_by(|a, b| a.distance(me).total_cmp(&b.distance(me)));
        let Some(target) = target else {
            return Vec2::ZERO;
        };
        let heading = (target - me).normalized();
        let pursuit = heading * params.pursuit_accel;
        let avoid = obstacle_repulsion(me, heading, &state.obstacles, params.repulsion_gain);
        (pursuit + avoid).clamp_norm(params.accel_limit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{AgentState, EnemyState, ObstacleDisc, WorldConfig};

    fn state(agents: &[(f64, f64)], enemy: (f64, f64), obstacles: Vec<ObstacleDisc>) -> GlobalState {
        GlobalState {
            agents: agents
                .iter()
                .enumerate()
                .map(|(id, &(x, y))| AgentState { id, pos: Vec2::new(x, y), vel: Vec2::ZERO })
                .collect(),
            enemy: EnemyState { pos: Vec2::new(enemy.0, enemy.1), vel: Vec2::ZERO },
            targets: vec![],
            obstacles,
            step: 0,
            seed: 0,
        }
    }

    fn world(obstacles: Vec<ObstacleDisc>) -> World {
        World::new(WorldConfig { strict: false, n_agents: 3, obstacles, ..WorldConfig::default() }).unwrap()
    }

    #[test]
    fn chases_cluster_directly() {
        let s = state(&[(5.0, 5.2), (5.2, 4.9), (4.8, 4.9)], (0.0, 0.0), vec![]);
        let c = centroid(&s.agents.iter().map(|a| a.pos).collect::<Vec<_>>());
        let a = world(vec![]).enemy_accel(&s);
        let angle = a.normalized().dot(c.normalized()).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 1.0, "angle {angle}");
        let exact = state(&[(5.0, 5.0), (5.0, 5.0), (5.0, 5.0)], (0.0, 0.0), vec![]);
        let a = world(vec![]).enemy_accel(&exact).normalized();
        let diag = Vec2::new(1.0, 1.0).normalized();
        assert!(a.dot(diag).clamp(-1.0, 1.0).acos().to_degrees() < 1.0);
    }

    #[test]
    fn holds_without_a_cluster() {
        let s = state(&[(5.0, 5.0), (-5.0, 5.0), (0.0, -5.0)], (0.0, 0.0), vec![]);
        assert_eq!(world(vec![]).enemy_accel(&s), Vec2::ZERO);
    }

    #[test]
    fn clusters_are_transitive_components() {
        let s = state(&[(0.0, 0.0), (2.5, 0.0), (5.0, 0.0), (9.0, 9.0)], (0.0, 0.0), vec![]);
        let clusters = world(vec![]).agent_clusters(&s);
        assert_eq!(clusters, vec![vec![0, 1, 2], vec![3]]);
    }

    #[test]
    fn path_bends_around_obstacle() {
        let obstacle = ObstacleDisc { center: Vec2::new(3.0, 0.0), radius: 1.0 };
        let w = world(vec![obstacle]);
        let mut s = state(&[(7.0, 0.0), (7.0, 0.3), (7.0, -0.3)], (0.0, 0.0), vec![obstacle]);
        let mut max_lateral: f64 = 0.0;
        for _ in 0..100 {
            let a = w.enemy_accel(&s);
            s = w.step(&s, &[Vec2::ZERO; 3], a);
            let d = s.enemy.pos.distance(obstacle.center);
            assert!(d > obstacle.radius, "enemy entered obstacle: {d}");
            max_lateral = max_lateral.max(s.enemy.pos.y.abs());
        }
        assert!(max_lateral > 0.5, "path did not bend: {max_lateral}");
    }
}
