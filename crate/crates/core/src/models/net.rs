use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::distributions::RngStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Probability of dropping a hidden unit during training.
    pub dropout: f64,
    /// Batch normalization (with affine scale and shift) on the output layer.
    pub batch_norm: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { hidden: vec![64, 32], activation: Activation::Relu, dropout: 0.1, batch_norm: true }
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct BatchNormIds {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

/// Multilayer perceptron producing unnormalized log class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceNet {
    config: NetConfig,
    input_dim: usize,
    output_dim: usize,
    hidden: Vec<Linear>,
    output: Linear,
    bn: Option<BatchNormIds>,
}

fn glorot(rng: &mut RngStream, fan_in: usize, fan_out: usize) -> Tensor {
    let scale = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = rng.normal_tensor(&[fan_in, fan_out]);
    t.values_mut().iter_mut().for_each(|v| *v *= scale);
    t
}

impl InferenceNet {
    /// Registers the network's parameters in `store` under `prefix`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        config: &NetConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::Config(format!("{prefix}: layer widths must be positive")));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("{prefix}: dropout {} outside [0, 1)", config.dropout)));
        }
        let mut widths = vec![input_dim];
        widths.extend(&config.hidden);
        let mut hidden = Vec::with_capacity(config.hidden.len());
        for (i, pair) in widths.windows(2).enumerate() {
            let w = store.add(format!("{prefix}.hidden{i}.weight"), glorot(rng, pair[0], pair[1]));
            let b = store.add(format!("{prefix}.hidden{i}.bias"), Tensor::zeros(&[pair[1]]));
            hidden.push(Linear { w, b });
        }
        let last = *widths.last().expect("nonempty");
        let output = Linear {
            w: store.add(format!("{prefix}.out.weight"), glorot(rng, last, output_dim)),
            b: store.add(format!("{prefix}.out.bias"), Tensor::zeros(&[output_dim])),
        };
        let bn = config.batch_norm.then(|| BatchNormIds {
            gamma: store.add(format!("{prefix}.bn.gamma"), Tensor::full(&[output_dim], 1.0)),
            beta: store.add(format!("{prefix}.bn.beta"), Tensor::zeros(&[output_dim])),
            running_mean: store.add_buffer(format!("{prefix}.bn.running_mean"), Tensor::zeros(&[output_dim])),
            running_var: store.add_buffer(format!("{prefix}.bn.running_var"), Tensor::full(&[output_dim], 1.0)),
        });
        Ok(InferenceNet { config: config.clone(), input_dim, output_dim, hidden, output, bn })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Weight matrices, the targets of l2 regularization.
    pub fn weight_ids(&self) -> Vec<ParamId> {
        self.hidden.iter().chain(std::iter::once(&self.output)).map(|l| l.w).collect()
    }

    /// Every trainable parameter of the network.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> =
            self.hidden.iter().chain(std::iter::once(&self.output)).flat_map(|l| [l.w, l.b]).collect();
        if let Some(bn) = self.bn {
            ids.extend([bn.gamma, bn.beta]);
        }
        ids
    }

    /// Forward pass. Training mode applies dropout and normalizes with batch
    /// statistics (returned so the caller can update running averages);
    /// evaluation mode is deterministic and uses running statistics.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        train: bool,
        rng: &mut RngStream,
    ) -> Result<(Var, Option<BatchStats>)> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(Error::dim("inference_net", format!("input {s:?}, expected [_, {}]", self.input_dim)));
        }
        let mut h = x;
        for layer in &self.hidden {
            let a = tape.matmul(h, bound.get(layer.w))?;
            let a = tape.add(a, bound.get(layer.b))?;
            let a = match self.config.activation {
                Activation::Relu => tape.relu(a)?,
                Activation::Softplus => tape.softplus(a)?,
            };
            h = tape.dropout(a, 1.0 - self.config.dropout, train, rng)?;
        }
        let out = tape.matmul(h, bound.get(self.output.w))?;
        let out = tape.add(out, bound.get(self.output.b))?;
        let Some(bn) = self.bn else {
            return Ok((out, None));
        };
        let (normed, stats) = if train {
            let (v, st) = tape.batch_norm(out, BN_EPS)?;
            (v, Some(st))
        } else {
            let mean = bound.get(bn.running_mean);
            let var = tape.value(bound.get(bn.running_var)).map(|v| 1.0 / (v + BN_EPS).sqrt());
            let inv_std = tape.constant(var);
            let centred = tape.sub(out, mean)?;
            (tape.mul(centred, inv_std)?, None)
        };
        let scaled = tape.mul(normed, bound.get(bn.gamma))?;
        Ok((tape.add(scaled, bound.get(bn.beta))?, stats))
    }

    /// Exponential moving average of batch statistics into the buffers.
    pub fn update_running_stats(&self, store: &mut ParamStore, stats: &BatchStats) {
        let Some(bn) = self.bn else { return };
        for (id, new) in [(bn.running_mean, &stats.mean), (bn.running_var, &stats.var)] {
            for (r, v) in store.get_mut(id).values_mut().iter_mut().zip(new) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }

    /// Evaluation-mode logits for a full input matrix.
    pub fn logits(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let (out, _) = self.forward(&mut tape, &bound, xv, false, &mut RngStream::new(0))?;
        Ok(tape.value(out).clone())
    }
}
