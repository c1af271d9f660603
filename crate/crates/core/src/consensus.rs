//! One decision frame: intent proposals, role selection, one-hop exchange,
//! consensus refinement and fallback resolution.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::{greedy_target, parse_decision, IllegalReason, OracleConfig, ParsedDecision};
use crate::roles::{fallback_resolve, ConsensusDecision, DecisionSource, Intent, NeighborDecision, Role};
use crate::seed::{derive_seed, fnv1a};
use crate::world::{observe, GlobalState, Observation, TargetId, Vec2};

/// What an agent broadcasts to its neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageFrame {
    pub sender: usize,
    pub intent: Intent,
    pub pos: Vec2,
    pub vel: Vec2,
}

/// A received neighbor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborInfo {
    pub id: usize,
    pub pos: Vec2,
    pub vel: Vec2,
    pub intent: TargetId,
    pub role: Role,
}

/// Everything agent `agent` knows when refining its goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalInfo {
    pub agent: usize,
    pub own_obs: Observation,
    /// Ordered by neighbor id.
    pub neighbors: Vec<NeighborInfo>,
}

/// Undirected communication graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    adjacency: Vec<BTreeSet<usize>>,
}

impl CommGraph {
    pub fn neighbors(&self, agent: usize) -> &BTreeSet<usize> {
        &self.adjacency[agent]
    }

    pub fn n_agents(&self) -> usize {
        self.adjacency.len()
    }

    /// Edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    /// Connected component containing `agent`.
    pub fn component(&self, agent: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([agent]);
        let mut stack = vec![agent];
        while let Some(i) = stack.pop() {
            for &j in &self.adjacency[i] {
                if seen.insert(j) {
                    stack.push(j);
                }
            }
        }
        seen
    }
}

/// Links every pair of agents strictly closer than `range`.
pub fn build_comm_graph(state: &GlobalState, range: f64) -> CommGraph {
    let n = state.agents.len();
    let mut adjacency = vec![BTreeSet::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if state.agents[i].pos.distance(state.agents[j].pos) < range {
                adjacency[i].insert(j);
                adjacency[j].insert(i);
            }
        }
    }
    CommGraph { adjacency }
}

/// Delivers each agent's frame to its one-hop neighbors.
pub fn exchange(frames: &[MessageFrame], observations: &[Observation], graph: &CommGraph) -> Vec<LocalInfo> {
    assert_eq!(frames.len(), graph.n_agents(), "one frame per agent");
    assert_eq!(observations.len(), graph.n_agents(), "one observation per agent");
    (0..graph.n_agents())
        .map(|i| LocalInfo {
            agent: i,
            own_obs: observations[i].clone(),
            neighbors: graph
                .neighbors(i)
                .iter()
                .map(|&j| {
                    let f = &frames[j];
                    NeighborInfo {
                        id: f.sender,
                        pos: f.pos,
                        vel: f.vel,
                        intent: f.intent.goal,
                        role: f.intent.role,
                    }
                })
                .collect(),
        })
        .collect()
}

/// A backend could not produce a reply.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("policy backend failure: {0}")]
pub struct PolicyError(pub String);

/// Input to the stage-one intent policy.
#[derive(Debug, Clone, Copy)]
pub struct ProposalRequest<'a> {
    pub agent: usize,
    pub obs: &'a Observation,
    pub seed: u64,
}

/// Input to the stage-two consensus policy.
#[derive(Debug, Clone, Copy)]
pub struct RefineRequest<'a> {
    pub agent: usize,
    pub info: &'a LocalInfo,
    pub role: Role,
    pub intent: Intent,
    pub seed: u64,
}

/// Stage one: proposes a goal from the agent's own observation. Returns raw
/// text that must contain the goal coordinates.
pub trait IntentPolicy: Sync {
    fn propose(&self, req: &ProposalRequest<'_>) -> Result<String, PolicyError>;
}

/// Stage two: refines the goal from the agent's local information.
pub trait ConsensusPolicy: Sync {
    fn refine(&self, req: &RefineRequest<'_>) -> Result<String, PolicyError>;
}

/// Chooses each agent's role for the frame. Called in ascending agent order.
pub trait RoleSelector {
    fn select(&mut self, agent: usize, obs: &Observation, intent: TargetId) -> Role;
}

impl<F> RoleSelector for F
where
    F: FnMut(usize, &Observation, TargetId) -> Role,
{
    fn select(&mut self, agent: usize, obs: &Observation, intent: TargetId) -> Role {
        self(agent, obs, intent)
    }
}

/// Per-agent line of the frame transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub frame: usize,
    pub step: usize,
    pub agent: usize,
    pub obs_digest: String,
    pub intent: TargetId,
    /// True when the stage-one reply was unusable and the greedy target was substituted.
    pub intent_fallback: bool,
    pub role: Role,
    pub neighbors: Vec<usize>,
    pub stage2_text: String,
    pub goal: TargetId,
    pub source: DecisionSource,
    pub illegal_reason: Option<IllegalReason>,
}

/// Short stable fingerprint of an observation.
pub fn observation_digest(obs: &Observation) -> String {
    let bytes = serde_json::to_vec(obs).expect("observation serializes");
    format!("{:016x}", fnv1a(&bytes))
}

#[derive(Debug, Clone)]
pub struct FrameOutcome {
    pub observations: Vec<Observation>,
    pub intents: Vec<Intent>,
    pub infos: Vec<LocalInfo>,
    pub stage2_texts: Vec<String>,
    /// Parsed stage-two outputs before fallback.
    pub outputs: Vec<ConsensusDecision>,
    /// Final, always-legal decisions.
    pub decisions: Vec<ConsensusDecision>,
    pub transcript: Vec<TranscriptRecord>,
}

impl FrameOutcome {
    pub fn roles(&self) -> Vec<Role> {
        self.intents.iter().map(|i| i.role).collect()
    }

    pub fn intent_goals(&self) -> Vec<TargetId> {
        self.intents.iter().map(|i| i.goal).collect()
    }

    pub fn goals(&self) -> Vec<TargetId> {
        self.decisions
            .iter()
            .map(|d| d.legal_goal().expect("resolved decisions are legal"))
            .collect()
    }
}

/// Frame-level parameters.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext {
    pub index: usize,
    pub obs_range: f64,
    pub seed: u64,
}

/// Runs one decision frame and returns a legal goal for every agent.
///
/// Policy calls for different agents may run concurrently; everything is
/// collected in agent order, so the outcome depends only on the state, the
/// policy replies and the seed. Backend failures become illegal outputs and
/// are repaired by the fallback ladder.
pub fn run_decision_frame(
    state: &GlobalState,
    intent_policy: &dyn IntentPolicy,
    roles: &mut dyn RoleSelector,
    consensus_policy: &dyn ConsensusPolicy,
    ctx: FrameContext,
) -> FrameOutcome {
    let n = state.agents.len();
    let observations: Vec<Observation> = (0..n)
        .map(|i| observe(state, i).expect("agent ids are dense"))
        .collect();
    let agent_seed = |stage: u64, i: usize| derive_seed(ctx.seed, (stage << 32) | i as u64);

    // Stage one.
    let proposals: Vec<(TargetId, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let obs = &observations[i];
            let req = ProposalRequest {
                agent: i,
                obs,
                seed: agent_seed(1, i),
            };
            let parsed = intent_policy
                .propose(&req)
                .ok()
                .and_then(|text| parse_decision(&text, &obs.targets).target());
            match parsed {
                Some(goal) => (goal, false),
                None => (greedy_target(obs, &OracleConfig::default()), true),
            }
        })
        .collect();

    // Role selection, sequential for a deterministic RNG stream.
    let intents: Vec<Intent> = (0..n)
        .map(|i| {
            let goal = proposals[i].0;
            Intent {
                goal,
                role: roles.select(i, &observations[i], goal),
            }
        })
        .collect();

    let frames: Vec<MessageFrame> = (0..n)
        .map(|i| MessageFrame {
            sender: i,
            intent: intents[i],
            pos: state.agents[i].pos,
            vel: state.agents[i].vel,
        })
        .collect();
    let graph = build_comm_graph(state, ctx.obs_range);
    let infos = exchange(&frames, &observations, &graph);

    // Stage two.
    let stage2_texts: Vec<String> = (0..n)
        .into_par_iter()
        .map(|i| {
            let req = RefineRequest {
                agent: i,
                info: &infos[i],
                role: intents[i].role,
                intent: intents[i],
                seed: agent_seed(2, i),
            };
            consensus_policy.refine(&req).unwrap_or_default()
        })
        .collect();
    let outputs: Vec<ConsensusDecision> = (0..n)
        .map(|i| {
            if stage2_texts[i].is_empty() {
                return ConsensusDecision::illegal(IllegalReason::BackendFailure);
            }
            match parse_decision(&stage2_texts[i], &observations[i].targets) {
                ParsedDecision::Goal { target, .. } => ConsensusDecision::output(target),
                ParsedDecision::Illegal(reason) => ConsensusDecision::illegal(reason),
            }
        })
        .collect();

    // Fallback, most senior roles first so subordinates see resolved superiors.
    let mut resolved: Vec<Option<ConsensusDecision>> = vec![None; n];
    for role in Role::ALL {
        for i in (0..n).filter(|&i| intents[i].role == role) {
            let neighbors: Vec<NeighborDecision> = graph
                .neighbors(i)
                .iter()
                .filter_map(|&j| {
                    resolved[j].map(|decision| NeighborDecision {
                        agent: j,
                        role: intents[j].role,
                        decision,
                    })
                })
                .collect();
            resolved[i] = Some(fallback_resolve(role, intents[i], outputs[i], &neighbors));
        }
    }
    let decisions: Vec<ConsensusDecision> = resolved.into_iter().map(|d| d.expect("every agent resolved")).collect();

    let transcript = (0..n)
        .map(|i| TranscriptRecord {
            frame: ctx.index,
            step: state.step,
            agent: i,
            obs_digest: observation_digest(&observations[i]),
            intent: intents[i].goal,
            intent_fallback: proposals[i].1,
            role: intents[i].role,
            neighbors: graph.neighbors(i).iter().copied().collect(),
            stage2_text: stage2_texts[i].clone(),
            goal: decisions[i].legal_goal().expect("legal"),
            source: decisions[i].source,
            illegal_reason: match outputs[i].goal {
                crate::roles::DecisionGoal::Illegal(r) => Some(r),
                crate::roles::DecisionGoal::Target(_) => None,
            },
        })
        .collect();

    FrameOutcome {
        observations,
        intents,
        infos,
        stage2_texts,
        outputs,
        decisions,
        transcript,
    }
}
