//! Episode driver: decision frames every `decision_period` steps, formation
//! control and physics in between.

use serde::{Deserialize, Serialize};

use crate::consensus::{run_decision_frame, ConsensusPolicy, FrameContext, FrameOutcome, IntentPolicy, RoleSelector};
use crate::nav::{FormationController, NavParams};
use crate::seed::derive_seed;
use crate::world::{AgentState, EnemyState, GlobalState, RewardBreakdown, TargetId, TargetRegion, World};

/// One environment step, as written to trace files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub frame: usize,
    pub agents: Vec<AgentState>,
    pub enemy: EnemyState,
    pub targets: Vec<TargetRegion>,
    pub goals: Vec<TargetId>,
    pub reward: f64,
    pub components: RewardBreakdown,
}

/// Totals over one decision window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowResult {
    pub steps: usize,
    pub reward: f64,
    pub components: RewardBreakdown,
}

/// Called after slots are planned each step; lets scripted behaviours move
/// individual agents' slots.
pub type SlotHook<'h> = dyn FnMut(&GlobalState, &mut FormationController) + 'h;

/// Stateful driver for one episode.
#[derive(Debug, Clone)]
pub struct EpisodeRunner<'w> {
    world: &'w World,
    controller: FormationController,
    state: GlobalState,
    frame: usize,
    seed: u64,
}

impl<'w> EpisodeRunner<'w> {
    pub fn new(world: &'w World, nav: NavParams, seed: u64) -> Self {
        let cfg = world.config();
        EpisodeRunner {
            world,
            controller: FormationController::new(nav, cfg.formation_radius, cfg.max_formation),
            state: world.init(seed),
            frame: 0,
            seed,
        }
    }

    pub fn world(&self) -> &World {
        self.world
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    /// Index of the next decision frame.
    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn done(&self) -> bool {
        self.state.step >= self.world.config().episode_length
    }

    /// Seed handed to the decision frame with index `frame`.
    pub fn frame_seed(&self, frame: usize) -> u64 {
        derive_seed(self.seed, 0xF0_0000 + frame as u64)
    }

    /// Runs the two-stage decision protocol on the current state.
    pub fn decide(
        &self,
        intent_policy: &dyn IntentPolicy,
        roles: &mut dyn RoleSelector,
        consensus_policy: &dyn ConsensusPolicy,
    ) -> FrameOutcome {
        let ctx = FrameContext {
            index: self.frame,
            obs_range: self.world.config().obs_range,
            seed: self.frame_seed(self.frame),
        };
        run_decision_frame(&self.state, intent_policy, roles, consensus_policy, ctx)
    }

    /// Executes one decision window with fixed goals.
    pub fn advance(&mut self, goals: &[TargetId], trace: Option<&mut Vec<StepRecord>>) -> WindowResult {
        self.advance_with(goals, trace, &mut |_, _| {})
    }

    pub fn advance_with(
        &mut self,
        goals: &[TargetId],
        mut trace: Option<&mut Vec<StepRecord>>,
        hook: &mut SlotHook<'_>,
    ) -> WindowResult {
        assert_eq!(goals.len(), self.state.agents.len(), "one goal per agent");
        let period = self.world.config().decision_period;
        let end = self.world.config().episode_length;
        let mut out = WindowResult::default();
        while out.steps < period && self.state.step < end {
            self.controller.plan(&self.state, goals);
            hook(&self.state, &mut self.controller);
            let accels = self.controller.commands(&self.state);
            let enemy_accel = self.world.enemy_accel(&self.state);
            let moved = self.world.step(&self.state, &accels, enemy_accel);
            let report = self.world.detect_coverage(&moved, goals);
            let (reward, components) = self.world.compute_reward(&moved, &report);
            self.state = self.world.update_urgency(&moved, &report);
            out.steps += 1;
            out.reward += reward;
            out.components = out.components.add(&components);
            if let Some(t) = trace.as_deref_mut() {
                t.push(StepRecord {
                    step: self.state.step,
                    frame: self.frame,
                    agents: moved.agents.clone(),
                    enemy: moved.enemy,
                    targets: moved.targets.clone(),
                    goals: goals.to_vec(),
                    reward,
                    components,
                });
            }
        }
        self.frame += 1;
        out
    }
}

/// Per-frame summary of a finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub frame: usize,
    pub step: usize,
    pub goals: Vec<TargetId>,
    pub window: WindowResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub frames: Vec<FrameSummary>,
    pub steps: Vec<StepRecord>,
    pub total_reward: f64,
    pub components: RewardBreakdown,
}

/// Runs a whole episode with the given policies.
pub fn run_episode(
    world: &World,
    nav: NavParams,
    seed: u64,
    intent_policy: &dyn IntentPolicy,
    roles: &mut dyn RoleSelector,
    consensus_policy: &dyn ConsensusPolicy,
    record_steps: bool,
) -> EpisodeResult {
    let mut runner = EpisodeRunner::new(world, nav, seed);
    let mut steps = Vec::new();
    let mut frames = Vec::new();
    let mut total = RewardBreakdown::default();
    let mut total_reward = 0.0;
    while !runner.done() {
        let step = runner.state().step;
        let frame = runner.frame();
        let outcome = runner.decide(intent_policy, roles, consensus_policy);
        let goals = outcome.goals();
        let window = runner.advance(&goals, record_steps.then_some(&mut steps));
        total_reward += window.reward;
        total = total.add(&window.components);
        frames.push(FrameSummary { frame, step, goals, window });
    }
    EpisodeResult {
        seed,
        frames,
        steps,
        total_reward,
        components: total,
    }
}
