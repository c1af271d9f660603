use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat access to every trainable parameter, in a fixed order.
pub trait ParamSet {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Fully connected layer, weights row-major `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    /// Uniform fan-in initialisation scaled by `gain`.
    pub fn init(inputs: usize, outputs: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain / (inputs.max(1) as f64).sqrt();
        let mut d = Dense::zeros(inputs, outputs);
        for w in &mut d.w {
            *w = rng.random_range(-bound..=bound);
        }
        d
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        (0..self.outputs)
            .map(|o| {
                let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
                self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                grad.w[row + i] += g * x[i];
                dx[i] += g * self.w[row + i];
            }
        }
        dx
    }
}

impl ParamSet for Dense {
    fn slices(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.b]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.b]
    }
}

fn relu(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

/// Feed-forward network with ReLU hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept for the backward pass: `acts[0]` is the input, `acts[k]`
/// the (post-ReLU) output of layer `k - 1`.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub acts: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an output")
    }
}

impl Mlp {
    /// `sizes` lists input, hidden and output widths.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let last = sizes.len() - 2;
        Mlp {
            layers: sizes
                .windows(2)
                .enumerate()
                .map(|(k, w)| Dense::init(w[0], w[1], if k == last { 0.1 } else { 2f64.sqrt() }, rng))
                .collect(),
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").outputs
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<MlpTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), x.len()));
        }
        let mut acts = vec![x.to_vec()];
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(acts.last().expect("input present"));
            if k + 1 < self.layers.len() {
                relu(&mut y);
            }
            acts.push(y);
        }
        Ok(MlpTrace { acts })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.acts.pop().expect("output present"))
    }

    /// Backpropagates dL/d(output) through a recorded trace.
    pub fn backward(&self, trace: &MlpTrace, dout: &[f64], grad: &mut Mlp) {
        let mut dy = dout.to_vec();
        for k in (0..self.layers.len()).rev() {
            if k + 1 < self.layers.len() {
                for (g, a) in dy.iter_mut().zip(&trace.acts[k + 1]) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            dy = self.layers[k].backward(&trace.acts[k], &dy, &mut grad.layers[k]);
        }
    }
}

impl ParamSet for Mlp {
    fn slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.slices()).collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.slices_mut()).collect()
    }
}

/// Shared role-value network: observation features to one value per role.
pub type RoleQNet = Mlp;

/// Forward pass of the role-value network.
pub fn role_values(net: &RoleQNet, obs_features: &[f64]) -> Result<[f64; 3]> {
    let out = net.forward(obs_features)?;
    out.as_slice()
        .try_into()
        .map_err(|_| Error::shape(3, out.len()))
}
