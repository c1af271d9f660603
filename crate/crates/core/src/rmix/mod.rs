//! Role-value learning: a shared role-value network, a monotonic
//! hypernetwork mixer (plus a weighted-sum baseline), replay storage and
//! the semi-offline training loop.

mod buffer;
mod features;
mod mixer;
mod net;
mod train;

pub use buffer::{Origin, ReplayBuffer, Transition};
pub use features::{obs_dim, obs_features, state_dim, state_features, ID_WIDTH};
pub use mixer::{mix, vdn_mix, MixTrace, Mixer, MixerTrace, MonotonicMixer, OutputActivation, VdnMixer};
pub use net::{role_values, Dense, Mlp, MlpTrace, ParamSet, RoleQNet};
pub use train::{
    collect_episode, greedy_q_tot, oracle_role_selector, q_tot, seed_offline, select_role, sgd_step, smooth,
    soft_update, td_loss, td_loss_and_grad, td_target, train, Checkpoint, MixerKind, QRoleSelector, RmixModel,
    TrainConfig, TrainReport, CHECKPOINT_VERSION, DIVERGENCE_LOSS,
};
