//! Policy wiring and the episode loop shared by the subcommands.

use serde::Serialize;
use swarm_core::consensus::{ConsensusPolicy, IntentPolicy, RoleSelector, TranscriptRecord};
use swarm_core::episode::{EpisodeRunner, StepRecord};
use swarm_core::intent::{oracle_role, OracleConfig, OracleConsensusPolicy, OracleIntentPolicy, PromptBundle, RemotePolicy};
use swarm_core::nav::NavParams;
use swarm_core::rmix::Checkpoint;
use swarm_core::roles::{DecisionSource, Role};
use swarm_core::world::{Observation, RewardBreakdown, TargetId, World};

use crate::config::{Backend, RunConfig};
use crate::decoy::{decoy_hook, pick_decoy};

/// Stage-one and stage-two policies for one backend.
#[derive(Debug)]
pub enum Policies {
    Oracle(OracleIntentPolicy, OracleConsensusPolicy),
    Remote(Box<RemotePolicy>),
}

impl Policies {
    /// The prompt carries the world's formation cap.
    pub fn from_config(cfg: &RunConfig) -> Self {
        match cfg.backend {
            Backend::Oracle => Policies::Oracle(
                OracleIntentPolicy { config: cfg.oracle.clone() },
                OracleConsensusPolicy { config: cfg.oracle.clone() },
            ),
            Backend::Remote => {
                let bundle = PromptBundle::default().with_max_formation(cfg.world.max_formation);
                Policies::Remote(Box::new(RemotePolicy::new(cfg.remote.clone(), bundle)))
            }
        }
    }

    pub fn intent(&self) -> &dyn IntentPolicy {
        match self {
            Policies::Oracle(ip, _) => ip,
            Policies::Remote(r) => r.as_ref(),
        }
    }

    pub fn consensus(&self) -> &dyn ConsensusPolicy {
        match self {
            Policies::Oracle(_, cp) => cp,
            Policies::Remote(r) => r.as_ref(),
        }
    }
}

/// How roles are assigned each frame.
#[derive(Debug, Clone, Copy)]
pub enum RoleMode<'a> {
    /// Scripted three-role rule.
    Oracle,
    /// Greedy role-value network.
    Learned(&'a Checkpoint),
    /// Everyone is an Executor.
    ExecutorOnly,
    /// Scripted rule with Coordinators demoted to Executors.
    CommanderExecutor,
}

struct ScriptedRoles {
    cfg: OracleConfig,
    demote_coordinators: bool,
    single: bool,
}

impl RoleSelector for ScriptedRoles {
    fn select(&mut self, _: usize, obs: &Observation, intent: TargetId) -> Role {
        if self.single {
            return Role::Executor;
        }
        match oracle_role(obs, intent, &self.cfg) {
            Role::Coordinator if self.demote_coordinators => Role::Executor,
            r => r,
        }
    }
}

impl<'a> RoleMode<'a> {
    pub fn selector(self, oracle: &OracleConfig, seed: u64) -> Box<dyn RoleSelector + 'a> {
        let scripted = |demote_coordinators, single| {
            Box::new(ScriptedRoles {
                cfg: oracle.clone(),
                demote_coordinators,
                single,
            })
        };
        match self {
            RoleMode::Oracle => scripted(false, false),
            RoleMode::ExecutorOnly => scripted(false, true),
            RoleMode::CommanderExecutor => scripted(true, false),
            RoleMode::Learned(ck) => Box::new(ck.role_selector(seed)),
        }
    }
}

/// Per-episode metrics row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub seed: u64,
    pub n_agents: usize,
    pub frames: usize,
    pub steps: usize,
    #[serde(rename = "return")]
    pub total: f64,
    pub formation: f64,
    pub navigation: f64,
    pub task_completion: f64,
    pub interference: f64,
    pub collision: f64,
    /// Stage-two outputs that were illegal and repaired.
    pub fallbacks: usize,
}

/// Optional sinks for an episode's records.
#[derive(Default)]
pub struct Sinks<'a> {
    pub steps: Option<&'a mut Vec<StepRecord>>,
    pub transcript: Option<&'a mut Vec<TranscriptRecord>>,
}

/// Plays one episode. With `decoy` set, the Executor nearest the enemy is
/// pulled onto a bait point every frame.
#[allow(clippy::too_many_arguments)]
pub fn play_episode(
    world: &World,
    nav: NavParams,
    episode: usize,
    seed: u64,
    policies: &Policies,
    roles: &mut dyn RoleSelector,
    decoy: bool,
    mut sinks: Sinks<'_>,
) -> EpisodeStats {
    let mut runner = EpisodeRunner::new(world, nav, seed);
    let mut total = 0.0;
    let mut parts = RewardBreakdown::default();
    let mut steps = 0;
    let mut fallbacks = 0;
    while !runner.done() {
        let outcome = runner.decide(policies.intent(), roles, policies.consensus());
        fallbacks += outcome
            .decisions
            .iter()
            .filter(|d| d.source != DecisionSource::LlmOutput)
            .count();
        if let Some(t) = sinks.transcript.as_deref_mut() {
            t.extend(outcome.transcript.iter().cloned());
        }
        let who = if decoy { pick_decoy(runner.state(), &outcome.roles()) } else { None };
        let mut hook = decoy_hook(who);
        let window = runner.advance_with(&outcome.goals(), sinks.steps.as_deref_mut(), &mut hook);
        total += window.reward;
        steps += window.steps;
        parts = parts.add(&window.components);
    }
    EpisodeStats {
        episode,
        seed,
        n_agents: world.config().n_agents,
        frames: runner.frame(),
        steps,
        total,
        formation: parts.formation,
        navigation: parts.navigation,
        task_completion: parts.task_completion,
        interference: parts.interference,
        collision: parts.collision,
        fallbacks,
    }
}

/// Mean, population standard deviation, min and max.
pub fn describe(values: &[f64]) -> (f64, f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), min, max)
}
