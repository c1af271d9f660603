use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{Dense, ParamSet};
use crate::error::{Error, Result};

/// Activation applied to the mixer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Relu,
    Identity,
}

/// Monotonic mixing network. Hypernetworks map the state features to the
/// mixing weights; absolute values keep `w1` and `w2` nonnegative for every
/// state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicMixer {
    pub n_agents: usize,
    pub embed: usize,
    pub state_dim: usize,
    pub output: OutputActivation,
    /// State to `embed x n_agents` raw first-layer weights.
    pub hyper_w1: Dense,
    /// State to `embed` first-layer biases.
    pub hyper_b1: Dense,
    /// State to `embed` raw second-layer weights.
    pub hyper_w2: Dense,
    /// Two-layer map from state to the scalar output bias.
    pub hyper_b2_hidden: Dense,
    pub hyper_b2_out: Dense,
}

/// Intermediate values of one mixer evaluation.
#[derive(Debug, Clone)]
pub struct MixTrace {
    pub raw_w1: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub raw_w2: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2_hidden: Vec<f64>,
    pub b2: f64,
    /// Hidden layer after ReLU.
    pub hidden: Vec<f64>,
    pub pre_output: f64,
    pub q_tot: f64,
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

impl MonotonicMixer {
    pub fn new(n_agents: usize, embed: usize, state_dim: usize, output: OutputActivation, rng: &mut impl Rng) -> Self {
        MonotonicMixer {
            n_agents,
            embed,
            state_dim,
            output,
            hyper_w1: Dense::init(state_dim, embed * n_agents, 1.0, rng),
            hyper_b1: Dense::init(state_dim, embed, 1.0, rng),
            hyper_w2: Dense::init(state_dim, embed, 1.0, rng),
            hyper_b2_hidden: Dense::init(state_dim, embed, 2f64.sqrt(), rng),
            hyper_b2_out: Dense::init(embed, 1, 1.0, rng),
        }
    }

    /// A mixer whose weights do not depend on the state.
    pub fn constant(w1: &[f64], b1: &[f64], w2: &[f64], b2: f64, state_dim: usize, output: OutputActivation) -> Result<Self> {
        let embed = b1.len();
        if w2.len() != embed {
            return Err(Error::shape(embed, w2.len()));
        }
        if embed == 0 || w1.len() % embed != 0 {
            return Err(Error::Argument("w1 must be embed x n_agents".into()));
        }
        let n_agents = w1.len() / embed;
        let mut m = MonotonicMixer {
            n_agents,
            embed,
            state_dim,
            output,
            hyper_w1: Dense::zeros(state_dim, embed * n_agents),
            hyper_b1: Dense::zeros(state_dim, embed),
            hyper_w2: Dense::zeros(state_dim, embed),
            hyper_b2_hidden: Dense::zeros(state_dim, 1),
            hyper_b2_out: Dense::zeros(1, 1),
        };
        m.hyper_w1.b.copy_from_slice(w1);
        m.hyper_b1.b.copy_from_slice(b1);
        m.hyper_w2.b.copy_from_slice(w2);
        m.hyper_b2_out.b[0] = b2;
        Ok(m)
    }

    pub fn zeros_like(&self) -> Self {
        MonotonicMixer {
            n_agents: self.n_agents,
            embed: self.embed,
            state_dim: self.state_dim,
            output: self.output,
            hyper_w1: Dense::zeros(self.hyper_w1.inputs, self.hyper_w1.outputs),
            hyper_b1: Dense::zeros(self.hyper_b1.inputs, self.hyper_b1.outputs),
            hyper_w2: Dense::zeros(self.hyper_w2.inputs, self.hyper_w2.outputs),
            hyper_b2_hidden: Dense::zeros(self.hyper_b2_hidden.inputs, self.hyper_b2_hidden.outputs),
            hyper_b2_out: Dense::zeros(self.hyper_b2_out.inputs, self.hyper_b2_out.outputs),
        }
    }

    pub fn forward_trace(&self, q: &[f64], state: &[f64]) -> Result<MixTrace> {
        if q.len() != self.n_agents {
            return Err(Error::shape(self.n_agents, q.len()));
        }
        if state.len() != self.state_dim {
            return Err(Error::shape(self.state_dim, state.len()));
        }
        let raw_w1 = self.hyper_w1.forward(state);
        let w1: Vec<f64> = raw_w1.iter().map(|v| v.abs()).collect();
        let b1 = self.hyper_b1.forward(state);
        let raw_w2 = self.hyper_w2.forward(state);
        let w2: Vec<f64> = raw_w2.iter().map(|v| v.abs()).collect();
        let mut b2_hidden = self.hyper_b2_hidden.forward(state);
        for v in &mut b2_hidden {
            *v = v.max(0.0);
        }
        let b2 = self.hyper_b2_out.forward(&b2_hidden)[0];
        let hidden: Vec<f64> = (0..self.embed)
            .map(|e| {
                let row = &w1[e * self.n_agents..(e + 1) * self.n_agents];
                (b1[e] + row.iter().zip(q).map(|(w, v)| w * v).sum::<f64>()).max(0.0)
            })
            .collect();
        let pre_output = b2 + w2.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        let q_tot = match self.output {
            OutputActivation::Relu => pre_output.max(0.0),
            OutputActivation::Identity => pre_output,
        };
        Ok(MixTrace {
            raw_w1,
            w1,
            b1,
            raw_w2,
            w2,
            b2_hidden,
            b2,
            hidden,
            pre_output,
            q_tot,
        })
    }

    /// Accumulates gradients of `dq_tot * Q_tot` into `grad` and returns
    /// dL/dq for every agent.
    pub fn backward(&self, q: &[f64], state: &[f64], trace: &MixTrace, dq_tot: f64, grad: &mut MonotonicMixer) -> Vec<f64> {
        let dy = match self.output {
            OutputActivation::Relu if trace.pre_output <= 0.0 => 0.0,
            _ => dq_tot,
        };
        let mut dq = vec![0.0; self.n_agents];
        if dy == 0.0 {
            return dq;
        }
        // Output bias path.
        let d_b2_hidden = self.hyper_b2_out.backward(&trace.b2_hidden, &[dy], &mut grad.hyper_b2_out);
        let d_b2_pre: Vec<f64> = d_b2_hidden
            .iter()
            .zip(&trace.b2_hidden)
            .map(|(g, h)| if *h > 0.0 { *g } else { 0.0 })
            .collect();
        self.hyper_b2_hidden.backward(state, &d_b2_pre, &mut grad.hyper_b2_hidden);

        let mut d_raw_w2 = vec![0.0; self.embed];
        let mut d_b1 = vec![0.0; self.embed];
        let mut d_raw_w1 = vec![0.0; self.embed * self.n_agents];
        for e in 0..self.embed {
            d_raw_w2[e] = dy * trace.hidden[e] * sign(trace.raw_w2[e]);
            if trace.hidden[e] <= 0.0 {
                continue;
            }
            let dz = dy * trace.w2[e];
            d_b1[e] = dz;
            for i in 0..self.n_agents {
                let k = e * self.n_agents + i;
                d_raw_w1[k] = dz * q[i] * sign(trace.raw_w1[k]);
                dq[i] += dz * trace.w1[k];
            }
        }
        self.hyper_w2.backward(state, &d_raw_w2, &mut grad.hyper_w2);
        self.hyper_b1.backward(state, &d_b1, &mut grad.hyper_b1);
        self.hyper_w1.backward(state, &d_raw_w1, &mut grad.hyper_w1);
        dq
    }
}

impl ParamSet for MonotonicMixer {
    fn slices(&self) -> Vec<&[f64]> {
        [&self.hyper_w1, &self.hyper_b1, &self.hyper_w2, &self.hyper_b2_hidden, &self.hyper_b2_out]
            .into_iter()
            .flat_map(|d| d.slices())
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        [
            &mut self.hyper_w1,
            &mut self.hyper_b1,
            &mut self.hyper_w2,
            &mut self.hyper_b2_hidden,
            &mut self.hyper_b2_out,
        ]
        .into_iter()
        .flat_map(|d| d.slices_mut())
        .collect()
    }
}

/// Weighted-sum baseline. The stored weights pass through `abs`, so the
/// effective weights stay nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdnMixer {
    pub raw: Vec<f64>,
}

impl VdnMixer {
    pub fn new(n_agents: usize) -> Self {
        VdnMixer { raw: vec![1.0; n_agents] }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.raw.iter().map(|w| w.abs()).collect()
    }

    pub fn zeros_like(&self) -> Self {
        VdnMixer { raw: vec![0.0; self.raw.len()] }
    }
}

impl ParamSet for VdnMixer {
    fn slices(&self) -> Vec<&[f64]> {
        vec![&self.raw]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.raw]
    }
}

/// `Σ w_i q_i`.
pub fn vdn_mix(q: &[f64], w: &[f64]) -> Result<f64> {
    if q.len() != w.len() {
        return Err(Error::shape(w.len(), q.len()));
    }
    if w.iter().any(|v| *v < 0.0) {
        return Err(Error::Argument("weights must be nonnegative".into()));
    }
    Ok(q.iter().zip(w).map(|(a, b)| a * b).sum())
}

/// Either mixer behind one interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixer {
    Monotonic(MonotonicMixer),
    Vdn(VdnMixer),
}

#[derive(Debug, Clone)]
pub enum MixerTrace {
    Monotonic(MixTrace),
    Vdn(f64),
}

impl MixerTrace {
    pub fn q_tot(&self) -> f64 {
        match self {
            MixerTrace::Monotonic(t) => t.q_tot,
            MixerTrace::Vdn(v) => *v,
        }
    }
}

impl Mixer {
    pub fn n_agents(&self) -> usize {
        match self {
            Mixer::Monotonic(m) => m.n_agents,
            Mixer::Vdn(v) => v.raw.len(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Mixer::Monotonic(m) => Mixer::Monotonic(m.zeros_like()),
            Mixer::Vdn(v) => Mixer::Vdn(v.zeros_like()),
        }
    }

    pub fn forward_trace(&self, q: &[f64], state: &[f64]) -> Result<MixerTrace> {
        match self {
            Mixer::Monotonic(m) => m.forward_trace(q, state).map(MixerTrace::Monotonic),
            Mixer::Vdn(v) => vdn_mix(q, &v.weights()).map(MixerTrace::Vdn),
        }
    }

    pub fn mix(&self, q: &[f64], state: &[f64]) -> Result<f64> {
        self.forward_trace(q, state).map(|t| t.q_tot())
    }

    pub fn backward(&self, q: &[f64], state: &[f64], trace: &MixerTrace, dq_tot: f64, grad: &mut Mixer) -> Vec<f64> {
        match (self, trace, grad) {
            (Mixer::Monotonic(m), MixerTrace::Monotonic(t), Mixer::Monotonic(g)) => m.backward(q, state, t, dq_tot, g),
            (Mixer::Vdn(v), MixerTrace::Vdn(_), Mixer::Vdn(g)) => {
                for (i, raw) in v.raw.iter().enumerate() {
                    g.raw[i] += dq_tot * q[i] * sign(*raw);
                }
                v.weights().iter().map(|w| dq_tot * w).collect()
            }
            _ => panic!("mixer, trace and gradient kinds differ"),
        }
    }
}

impl ParamSet for Mixer {
    fn slices(&self) -> Vec<&[f64]> {
        match self {
            Mixer::Monotonic(m) => m.slices(),
            Mixer::Vdn(v) => v.slices(),
        }
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Mixer::Monotonic(m) => m.slices_mut(),
            Mixer::Vdn(v) => v.slices_mut(),
        }
    }
}

/// Evaluates the monotonic mixer.
pub fn mix(q: &[f64], state: &[f64], mixer: &MonotonicMixer) -> Result<f64> {
    Ok(mixer.forward_trace(q, state)?.q_tot)
}
