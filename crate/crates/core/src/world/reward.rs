use serde::{Deserialize, Serialize};

use super::{CoverageReport, GlobalState, World};
use crate::error::{Error, Result};

/// Weights of the five reward components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub formation: f64,
    pub navigation: f64,
    pub task_completion: f64,
    pub interference: f64,
    pub collision: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            formation: 15.0,
            navigation: 4.0,
            task_completion: 10.0,
            interference: 100.0,
            collision: 100.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.formation,
            self.navigation,
            self.task_completion,
            self.interference,
            self.collision,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("reward weights must be nonnegative: {all:?}")))
        }
    }

    /// `w_f R_f + w_n R_n + w_tc R_tc - w_e R_e - w_c R_c`.
    pub fn combine(&self, c: &RewardBreakdown) -> f64 {
        self.formation * c.formation + self.navigation * c.navigation + self.task_completion * c.task_completion
            - self.interference * c.interference
            - self.collision * c.collision
    }
}

/// The nonnegative reward components for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub formation: f64,
    pub navigation: f64,
    pub task_completion: f64,
    pub interference: f64,
    pub collision: f64,
}

impl RewardBreakdown {
    /// Componentwise sum.
    pub fn add(&self, other: &RewardBreakdown) -> RewardBreakdown {
        RewardBreakdown {
            formation: self.formation + other.formation,
            navigation: self.navigation + other.navigation,
            task_completion: self.task_completion + other.task_completion,
            interference: self.interference + other.interference,
            collision: self.collision + other.collision,
        }
    }
}

impl World {
    /// Component breakdown for the current step.
    ///
    /// - formation: per sized detachment, `max(0, 1 - error / formation_scale)`
    /// - navigation: urgency-weighted closeness `max(0, 1 - d / navigation_scale)`
    ///   summed over agents and targets
    /// - task completion: per target, urgency times the size of covering formations
    /// - interference: agents within `safe_distance` of the pursuer
    /// - collision: agent-obstacle pairs whose surface gap and agent-agent pairs
    ///   whose center distance fall below `collision_distance`
    pub fn reward_components(&self, state: &GlobalState, report: &CoverageReport) -> RewardBreakdown {
        let cfg = self.config();

        let formation = report
            .detachments
            .iter()
            .filter_map(|d| d.formation_error)
            .map(|e| (1.0 - e / cfg.formation_scale).max(0.0))
            .sum();

        let mut navigation = 0.0;
        for a in &state.agents {
            for t in &state.targets {
                navigation += t.urgency * (1.0 - a.pos.distance(t.pos) / cfg.navigation_scale).max(0.0);
            }
        }

        let task_completion = state
            .targets
            .iter()
            .map(|t| t.urgency * report.covering_agents(t.id) as f64)
            .sum();

        let interference = state
            .agents
            .iter()
            .filter(|a| a.pos.distance(state.enemy.pos) < cfg.safe_distance)
            .count() as f64;

        let mut collisions = 0usize;
        for (i, a) in state.agents.iter().enumerate() {
            collisions += state
                .obstacles
                .iter()
                .filter(|o| a.pos.distance(o.center) - o.radius < cfg.collision_distance)
                .count();
            collisions += state.agents[i + 1..]
                .iter()
                .filter(|b| a.pos.distance(b.pos) < cfg.collision_distance)
                .count();
        }

        RewardBreakdown {
            formation,
            navigation,
            task_completion,
            interference,
            collision: collisions as f64,
        }
    }

    /// Weighted total and its components.
    pub fn compute_reward(&self, state: &GlobalState, report: &CoverageReport) -> (f64, RewardBreakdown) {
        let c = self.reward_components(state, report);
        (self.config().weights.combine(&c), c)
    }
}
