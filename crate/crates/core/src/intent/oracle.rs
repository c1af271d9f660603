use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prompt::fmt_target;
use crate::consensus::{ConsensusPolicy, IntentPolicy, NeighborInfo, PolicyError, ProposalRequest, RefineRequest};
use crate::error::{Error, Result};
use crate::roles::Role;
use crate::world::{Observation, TargetId, TargetView};

/// Scoring constants of the scripted policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub threat_weight: f64,
    pub threat_radius: f64,
    /// Bonus per teammate already heading to a target (Coordinator only).
    pub teammate_bonus: f64,
    /// Extra weight of a Commander's intent in the teammate bonus.
    pub commander_weight: f64,
    pub max_formation: usize,
    /// Half-width of uniform score noise; 0 disables it.
    pub noise: f64,
    /// Role heuristic: Commander when this close to its intended target.
    pub commander_range: f64,
    /// Role heuristic: Coordinator when the enemy is this close.
    pub coordinator_threat_range: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            threat_weight: 0.5,
            threat_radius: 4.0,
            teammate_bonus: 0.15,
            commander_weight: 2.0,
            max_formation: 8,
            noise: 0.0,
            commander_range: 4.0,
            coordinator_threat_range: 6.0,
        }
    }
}

/// Urgency over distance, minus a penalty when the enemy sits near the target.
pub fn target_score(obs: &Observation, t: &TargetView, cfg: &OracleConfig) -> f64 {
    let d = obs.self_pos.distance(t.pos);
    let threat = (1.0 - t.pos.distance(obs.enemy_pos) / cfg.threat_radius).max(0.0);
    t.urgency / (1.0 + d) - cfg.threat_weight * threat
}

/// First index of the maximum; ties go to the lowest target id since
/// observations list targets in id order.
fn argmax_by(targets: &[TargetView], mut score: impl FnMut(&TargetView) -> f64) -> Option<TargetId> {
    let mut best: Option<(TargetId, f64)> = None;
    for t in targets {
        let s = score(t);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((t.id, s));
        }
    }
    best.map(|(id, _)| id)
}

/// Noise-free argmax of [`target_score`].
pub fn greedy_target(obs: &Observation, cfg: &OracleConfig) -> TargetId {
    argmax_by(&obs.targets, |t| target_score(obs, t, cfg)).expect("observation lists at least one target")
}

fn noisy_scores(obs: &Observation, cfg: &OracleConfig, rng: &mut impl Rng) -> Vec<f64> {
    obs.targets
        .iter()
        .map(|t| {
            let jitter = if cfg.noise > 0.0 { rng.random_range(-cfg.noise..=cfg.noise) } else { 0.0 };
            target_score(obs, t, cfg) + jitter
        })
        .collect()
}

/// Scripted goal choice for one role.
pub fn oracle_intent(
    obs: &Observation,
    role: Role,
    neighbors: &[NeighborInfo],
    cfg: &OracleConfig,
    rng: &mut impl Rng,
) -> Result<TargetId> {
    if obs.targets.is_empty() {
        return Err(Error::Domain("no active targets".into()));
    }
    let scores = noisy_scores(obs, cfg, rng);
    let score_of = |t: &TargetView| scores[obs.targets.iter().position(|u| u.id == t.id).expect("own target")];
    let active = |id: TargetId| obs.target(id).is_some();
    let goal = match role {
        Role::Commander => argmax_by(&obs.targets, score_of),
        Role::Coordinator => argmax_by(&obs.targets, |t| {
            let support: f64 = neighbors
                .iter()
                .filter(|n| n.intent == t.id)
                .map(|n| if n.role == Role::Commander { cfg.commander_weight } else { 1.0 })
                .sum();
            let heading = neighbors.iter().filter(|n| n.intent == t.id).count();
            if heading >= cfg.max_formation {
                f64::NEG_INFINITY
            } else {
                score_of(t) + cfg.teammate_bonus * support
            }
        }),
        Role::Executor => {
            let leader = [Role::Commander, Role::Coordinator].into_iter().find_map(|r| {
                neighbors
                    .iter()
                    .filter(|n| n.role == r && active(n.intent))
                    .min_by_key(|n| n.id)
            });
            match leader {
                Some(n) => Some(n.intent),
                None => argmax_by(&obs.targets, score_of),
            }
        }
    };
    Ok(goal.expect("targets nonempty"))
}

/// Stand-in role heuristic used in place of a language model when seeding
/// the replay buffer.
pub fn oracle_role(obs: &Observation, intent: TargetId, cfg: &OracleConfig) -> Role {
    let near_goal = obs
        .target(intent)
        .is_some_and(|t| obs.self_pos.distance(t.pos) < cfg.commander_range);
    if near_goal {
        Role::Commander
    } else if obs.enemy_distance() < cfg.coordinator_threat_range {
        Role::Coordinator
    } else {
        Role::Executor
    }
}

const FILLER: &[&str] = &[
    "Holding a formation inside the region is what lowers its urgency, so arriving alone achieves nothing.",
    "Every step spent near the pursuer is penalised, which argues for regions with a clear approach.",
    "Obstacles sit between several regions, and brushing against one costs more than a short detour.",
    "Switching goals every frame wastes travel time, so a stable choice is worth a small loss in score.",
    "The grid is symmetric, so distance and urgency are what separate the candidates.",
    "Teammates that share a goal should keep spacing above the collision margin while they settle.",
];

/// Free-text justification ending in the machine-readable recommendation.
/// Always between 200 and 400 whitespace-separated words.
pub fn reasoning_text(obs: &Observation, role: Role, neighbors: &[NeighborInfo], choice: TargetId, cfg: &OracleConfig) -> String {
    let mut parts: Vec<String> = Vec::new();
    parts.push(format!(
        "I am acting as {role}. I am at [{:.2}, {:.2}] and the pursuer is {:.2} m away at [{:.2}, {:.2}].",
        obs.self_pos.x,
        obs.self_pos.y,
        obs.enemy_distance(),
        obs.enemy_pos.x,
        obs.enemy_pos.y
    ));
    for t in &obs.targets {
        let d = obs.self_pos.distance(t.pos);
        let de = t.pos.distance(obs.enemy_pos);
        let threat = if de < cfg.threat_radius { "threatened by the pursuer" } else { "clear of the pursuer" };
        parts.push(format!(
            "Target {} has urgency {:.2}, lies {:.1} m from me and is {threat}, giving a score of {:.3}.",
            fmt_target(t.pos),
            t.urgency,
            d,
            target_score(obs, t, cfg)
        ));
    }
    if neighbors.is_empty() {
        parts.push("No teammate is in range, so I rely on my own assessment.".into());
    } else {
        for t in &obs.targets {
            let heading: Vec<&NeighborInfo> = neighbors.iter().filter(|n| n.intent == t.id).collect();
            if !heading.is_empty() {
                let leaders = heading.iter().filter(|n| n.role != Role::Executor).count();
                parts.push(format!(
                    "{} teammates in range intend target {}, {leaders} of them in a leading role.",
                    heading.len(),
                    fmt_target(t.pos)
                ));
            }
        }
    }
    parts.push(format!(
        "A formation needs at least three members and may not exceed {} members.",
        cfg.max_formation
    ));
    let target = obs.target(choice).map(|t| fmt_target(t.pos)).unwrap_or_default();
    let closing = format!("Weighing all of this, I recommend going to target {target}");
    let words = |ps: &[String]| ps.iter().map(|p| p.split_whitespace().count()).sum::<usize>();
    let mut k = 0;
    while words(&parts) + closing.split_whitespace().count() < 210 {
        parts.push(FILLER[k % FILLER.len()].to_string());
        k += 1;
    }
    while words(&parts) + closing.split_whitespace().count() > 400 && parts.len() > 1 {
        parts.remove(1);
    }
    parts.push(closing);
    parts.join(" ")
}

fn oracle_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Scripted stage-one policy: argmax of the target score.
#[derive(Debug, Clone, Default)]
pub struct OracleIntentPolicy {
    pub config: OracleConfig,
}

impl IntentPolicy for OracleIntentPolicy {
    fn propose(&self, req: &ProposalRequest<'_>) -> Result<String, PolicyError> {
        let mut rng = oracle_rng(req.seed);
        let goal = oracle_intent(req.obs, Role::Commander, &[], &self.config, &mut rng)
            .map_err(|e| PolicyError(e.to_string()))?;
        Ok(reasoning_text(req.obs, Role::Commander, &[], goal, &self.config))
    }
}

/// Scripted stage-two policy following the role semantics.
#[derive(Debug, Clone, Default)]
pub struct OracleConsensusPolicy {
    pub config: OracleConfig,
}

impl ConsensusPolicy for OracleConsensusPolicy {
    fn refine(&self, req: &RefineRequest<'_>) -> Result<String, PolicyError> {
        let mut rng = oracle_rng(req.seed);
        let obs = &req.info.own_obs;
        let goal = oracle_intent(obs, req.role, &req.info.neighbors, &self.config, &mut rng)
            .map_err(|e| PolicyError(e.to_string()))?;
        Ok(reasoning_text(obs, req.role, &req.info.neighbors, goal, &self.config))
    }
}

/// Replies with the same text every time. Useful for fault injection.
#[derive(Debug, Clone)]
pub struct FixedTextPolicy(pub String);

impl IntentPolicy for FixedTextPolicy {
    fn propose(&self, _: &ProposalRequest<'_>) -> Result<String, PolicyError> {
        Ok(self.0.clone())
    }
}

impl ConsensusPolicy for FixedTextPolicy {
    fn refine(&self, _: &RefineRequest<'_>) -> Result<String, PolicyError> {
        Ok(self.0.clone())
    }
}
