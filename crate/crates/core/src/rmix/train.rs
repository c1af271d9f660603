use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::buffer::{Origin, ReplayBuffer, Transition};
use super::features::{obs_features, state_features, ID_WIDTH};
use super::mixer::{Mixer, MonotonicMixer, OutputActivation, VdnMixer};
use super::net::{role_values, Mlp, ParamSet, RoleQNet};
use crate::consensus::{ConsensusPolicy, IntentPolicy, RoleSelector};
use crate::episode::EpisodeRunner;
use crate::error::{Error, Result};
use crate::intent::{oracle_role, OracleConfig, OracleConsensusPolicy, OracleIntentPolicy};
use crate::nav::NavParams;
use crate::roles::Role;
use crate::seed::derive_seed;
use crate::world::{observe, Observation, TargetId, World};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Loss above which training is considered diverged.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    #[default]
    Rmix,
    Vdn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub tau: f64,
    /// Mixing hidden width.
    pub embed: usize,
    /// Hidden layer widths of the role-value network.
    pub hidden: Vec<usize>,
    pub n_pre: usize,
    pub n_epoch: usize,
    pub buffer_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Window rewards are multiplied by this before entering the TD target.
    pub reward_scale: f64,
    pub mixer: MixerKind,
    pub output_activation: OutputActivation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.95,
            learning_rate: 1e-5,
            batch_size: 256,
            tau: 0.01,
            embed: 128,
            hidden: vec![64, 64],
            n_pre: 50,
            n_epoch: 200,
            buffer_capacity: 50_000,
            epsilon_start: 0.5,
            epsilon_end: 0.05,
            reward_scale: 1e-3,
            mixer: MixerKind::Rmix,
            output_activation: OutputActivation::Relu,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.embed == 0 {
            return bad("batch_size and embed must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must be at least batch_size");
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon must lie in [0, 1]");
            }
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return bad("reward_scale must be positive");
        }
        Ok(())
    }

    /// Linear decay over the first half of training, then constant.
    pub fn epsilon(&self, epoch: usize) -> f64 {
        let half = (self.n_epoch as f64 / 2.0).max(1.0);
        let frac = (epoch as f64 / half).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Role-value network plus mixer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmixModel {
    pub qnet: RoleQNet,
    pub mixer: Mixer,
}

impl RmixModel {
    pub fn new(config: &TrainConfig, n_agents: usize, obs_dim: usize, state_dim: usize, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend(&config.hidden);
        sizes.push(Role::ALL.len());
        let qnet = Mlp::new(&sizes, rng);
        let mixer = match config.mixer {
            MixerKind::Rmix => {
                Mixer::Monotonic(MonotonicMixer::new(n_agents, config.embed, state_dim, config.output_activation, rng))
            }
            MixerKind::Vdn => Mixer::Vdn(VdnMixer::new(n_agents)),
        };
        RmixModel { qnet, mixer }
    }

    pub fn zeros_like(&self) -> Self {
        RmixModel {
            qnet: self.qnet.zeros_like(),
            mixer: self.mixer.zeros_like(),
        }
    }
}

impl ParamSet for RmixModel {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.qnet.slices();
        v.extend(self.mixer.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.qnet.slices_mut();
        v.extend(self.mixer.slices_mut());
        v
    }
}

/// ε-greedy role choice. Greedy ties go to the lowest role index.
pub fn select_role(q: &[f64; 3], epsilon: f64, rng: &mut impl Rng) -> Role {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Role::ALL[rng.random_range(0..Role::ALL.len())];
    }
    let mut best = 0;
    for k in 1..3 {
        if q[k] > q[best] {
            best = k;
        }
    }
    Role::ALL[best]
}

/// Mixed value of the per-agent greedy joint role choice.
pub fn greedy_q_tot(model: &RmixModel, obs: &[Vec<f64>], state: &[f64]) -> Result<f64> {
    let q = obs
        .iter()
        .map(|o| role_values(&model.qnet, o).map(|v| v.into_iter().fold(f64::NEG_INFINITY, f64::max)))
        .collect::<Result<Vec<f64>>>()?;
    model.mixer.mix(&q, state)
}

/// `R + γ · Q̄_tot(s′, greedy)`, or `R` for terminal transitions.
pub fn td_target(reward: f64, next_state: &[f64], next_obs: &[Vec<f64>], terminal: bool, target: &RmixModel, gamma: f64) -> Result<f64> {
    if terminal {
        return Ok(reward);
    }
    Ok(reward + gamma * greedy_q_tot(target, next_obs, next_state)?)
}

/// Mixed value of the roles actually taken.
pub fn q_tot(model: &RmixModel, t: &Transition) -> Result<f64> {
    let q = chosen_values(model, t)?;
    model.mixer.mix(&q, &t.state)
}

fn chosen_values(model: &RmixModel, t: &Transition) -> Result<Vec<f64>> {
    t.obs
        .iter()
        .zip(&t.roles)
        .map(|(o, r)| role_values(&model.qnet, o).map(|v| v[r.index()]))
        .collect()
}

fn sample_target(t: &Transition, target: &RmixModel, gamma: f64, reward_scale: f64) -> Result<f64> {
    td_target(t.reward * reward_scale, &t.next_state, &t.next_obs, t.terminal, target, gamma)
}

/// `Σ (y − Q_tot)²` over the batch, summed in order.
pub fn td_loss(batch: &[&Transition], online: &RmixModel, target: &RmixModel, gamma: f64, reward_scale: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut loss = 0.0;
    for t in batch {
        let y = sample_target(t, target, gamma, reward_scale)?;
        let d = y - q_tot(online, t)?;
        loss += d * d;
    }
    Ok(loss)
}

fn accumulate_sample(t: &Transition, y: f64, model: &RmixModel, grad: &mut RmixModel) -> Result<f64> {
    let traces = t
        .obs
        .iter()
        .map(|o| model.qnet.forward_trace(o))
        .collect::<Result<Vec<_>>>()?;
    let q: Vec<f64> = traces.iter().zip(&t.roles).map(|(tr, r)| tr.output()[r.index()]).collect();
    let mix = model.mixer.forward_trace(&q, &t.state)?;
    let diff = y - mix.q_tot();
    let dq = model.mixer.backward(&q, &t.state, &mix, -2.0 * diff, &mut grad.mixer);
    for ((tr, r), g) in traces.iter().zip(&t.roles).zip(dq) {
        if g != 0.0 {
            let mut dout = [0.0; 3];
            dout[r.index()] = g;
            model.qnet.backward(tr, &dout, &mut grad.qnet);
        }
    }
    Ok(diff * diff)
}

/// Fixed chunk count keeps the summation order independent of the thread pool.
const GRAD_CHUNKS: usize = 8;

/// TD loss and its gradient with respect to every online parameter.
pub fn td_loss_and_grad(
    batch: &[&Transition],
    online: &RmixModel,
    target: &RmixModel,
    gamma: f64,
    reward_scale: f64,
) -> Result<(f64, RmixModel)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let chunk = batch.len().div_ceil(GRAD_CHUNKS);
    let parts = batch
        .par_chunks(chunk)
        .map(|ts| -> Result<(f64, RmixModel)> {
            let mut grad = online.zeros_like();
            let mut loss = 0.0;
            for t in ts {
                let y = sample_target(t, target, gamma, reward_scale)?;
                loss += accumulate_sample(t, y, online, &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grad) = iter.next().expect("nonempty batch");
    for (l, g) in iter {
        loss += l;
        for (acc, part) in grad.slices_mut().into_iter().zip(g.slices()) {
            for (a, b) in acc.iter_mut().zip(part) {
                *a += b;
            }
        }
    }
    Ok((loss, grad))
}

/// Plain gradient descent: `θ ← θ − α g`.
pub fn sgd_step<P: ParamSet>(params: &mut P, grad: &P, lr: f64, update: u64) -> Result<()> {
    for (k, g) in grad.slices().iter().enumerate() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training {
                update,
                reason: format!("non-finite gradient in tensor {k} at index {i}"),
            });
        }
    }
    for (p, g) in params.slices_mut().into_iter().zip(grad.slices()) {
        for (a, b) in p.iter_mut().zip(g) {
            *a -= lr * b;
        }
    }
    Ok(())
}

/// `θ̄ ← τ θ + (1 − τ) θ̄`.
pub fn soft_update<P: ParamSet>(target: &mut P, online: &P, tau: f64) {
    for (t, o) in target.slices_mut().into_iter().zip(online.slices()) {
        for (a, b) in t.iter_mut().zip(o) {
            *a = tau * b + (1.0 - tau) * *a;
        }
    }
}

/// Online and target parameters with their update counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub n_agents: usize,
    pub id_width: usize,
    pub updates: u64,
    pub online: RmixModel,
    pub target: RmixModel,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    /// Greedy role selector for execution.
    pub fn role_selector(&self, seed: u64) -> QRoleSelector<'_> {
        QRoleSelector::new(&self.online.qnet, self.id_width, 0.0, seed)
    }
}

/// Picks roles from the role-value network.
#[derive(Debug, Clone)]
pub struct QRoleSelector<'a> {
    qnet: &'a RoleQNet,
    id_width: usize,
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl<'a> QRoleSelector<'a> {
    pub fn new(qnet: &'a RoleQNet, id_width: usize, epsilon: f64, seed: u64) -> Self {
        QRoleSelector {
            qnet,
            id_width,
            epsilon,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl RoleSelector for QRoleSelector<'_> {
    fn select(&mut self, agent: usize, obs: &Observation, _intent: TargetId) -> Role {
        let q = role_values(self.qnet, &obs_features(obs, agent, self.id_width)).expect("feature width matches network");
        select_role(&q, self.epsilon, &mut self.rng)
    }
}

/// Heuristic role selector standing in for a language model.
pub fn oracle_role_selector(cfg: OracleConfig) -> impl FnMut(usize, &Observation, TargetId) -> Role {
    move |_, obs, intent| oracle_role(obs, intent, &cfg)
}

/// Plays one episode and returns its transitions and total reward.
pub fn collect_episode(
    world: &World,
    nav: NavParams,
    seed: u64,
    intent_policy: &dyn IntentPolicy,
    roles: &mut dyn RoleSelector,
    consensus_policy: &dyn ConsensusPolicy,
    id_width: usize,
) -> (Vec<Transition>, f64) {
    let mut runner = EpisodeRunner::new(world, nav, seed);
    let n = runner.state().n_agents();
    let mut out = Vec::new();
    let mut total = 0.0;
    while !runner.done() {
        let outcome = runner.decide(intent_policy, roles, consensus_policy);
        let intents = outcome.intent_goals();
        let state = state_features(runner.state(), &intents);
        let obs: Vec<Vec<f64>> = outcome
            .observations
            .iter()
            .enumerate()
            .map(|(i, o)| obs_features(o, i, id_width))
            .collect();
        let window = runner.advance(&outcome.goals(), None);
        total += window.reward;
        let next = runner.state();
        let next_obs = (0..n)
            .map(|i| obs_features(&observe(next, i).expect("dense ids"), i, id_width))
            .collect();
        out.push(Transition {
            state,
            obs,
            roles: outcome.roles(),
            reward: window.reward,
            next_state: state_features(next, &intents),
            next_obs,
            intents,
            terminal: runner.done(),
        });
    }
    (out, total)
}

/// Fills the buffer with `n_pre` oracle-driven episodes tagged offline.
/// Episodes run in parallel and are appended in episode order.
pub fn seed_offline(world: &World, nav: NavParams, oracle: &OracleConfig, n_pre: usize, seed: u64, buffer: &mut ReplayBuffer) {
    let ip = OracleIntentPolicy { config: oracle.clone() };
    let cp = OracleConsensusPolicy { config: oracle.clone() };
    let episodes: Vec<Vec<Transition>> = (0..n_pre)
        .into_par_iter()
        .map(|e| {
            let mut roles = oracle_role_selector(oracle.clone());
            collect_episode(world, nav, derive_seed(seed, 0x0FF_0000 + e as u64), &ip, &mut roles, &cp, ID_WIDTH).0
        })
        .collect();
    for t in episodes.into_iter().flatten() {
        buffer.push(Origin::OfflineOracle, t);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// TD loss per update.
    pub losses: Vec<f64>,
    /// Episode return per training epoch.
    pub returns: Vec<f64>,
    pub updates: u64,
}

/// Mean over a trailing window; the first entries average what is available.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Online ε-greedy training on top of an optionally pre-seeded buffer.
pub fn train(world: &World, nav: NavParams, config: &TrainConfig, buffer: &mut ReplayBuffer) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    let n = world.config().n_agents;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x7EA1));
    let online = RmixModel::new(
        config,
        n,
        super::features::obs_dim(ID_WIDTH),
        super::features::state_dim(n),
        &mut rng,
    );
    let mut target = online.clone();
    let mut online = online;
    let ip = OracleIntentPolicy::default();
    let cp = OracleConsensusPolicy::default();
    let mut report = TrainReport {
        losses: Vec::new(),
        returns: Vec::new(),
        updates: 0,
    };
    for epoch in 0..config.n_epoch {
        let eps = config.epsilon(epoch);
        let mut runner = EpisodeRunner::new(world, nav, derive_seed(config.seed, epoch as u64));
        let mut total = 0.0;
        while !runner.done() {
            let outcome = {
                let mut roles = QRoleSelector::new(&online.qnet, ID_WIDTH, eps, rng.random());
                runner.decide(&ip, &mut roles, &cp)
            };
            let intents = outcome.intent_goals();
            let state = state_features(runner.state(), &intents);
            let obs: Vec<Vec<f64>> = outcome
                .observations
                .iter()
                .enumerate()
                .map(|(i, o)| obs_features(o, i, ID_WIDTH))
                .collect();
            let window = runner.advance(&outcome.goals(), None);
            total += window.reward;
            let next = runner.state();
            let next_obs = (0..n)
                .map(|i| obs_features(&observe(next, i).expect("dense ids"), i, ID_WIDTH))
                .collect();
            buffer.push(
                Origin::Online,
                Transition {
                    state,
                    obs,
                    roles: outcome.roles(),
                    reward: window.reward,
                    next_state: state_features(next, &intents),
                    next_obs,
                    intents,
                    terminal: runner.done(),
                },
            );
            if let Some(batch) = buffer.sample(config.batch_size, &mut rng) {
                let (loss, grad) = td_loss_and_grad(&batch, &online, &target, config.gamma, config.reward_scale)?;
                if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                    return Err(Error::Training {
                        update: report.updates,
                        reason: format!("loss {loss:e} exceeds divergence bound at epoch {epoch}"),
                    });
                }
                sgd_step(&mut online, &grad, config.learning_rate, report.updates)?;
                soft_update(&mut target, &online, config.tau);
                report.losses.push(loss);
                report.updates += 1;
            }
        }
        report.returns.push(total);
    }
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        n_agents: n,
        id_width: ID_WIDTH,
        updates: report.updates,
        online,
        target,
    };
    Ok((checkpoint, report))
}
