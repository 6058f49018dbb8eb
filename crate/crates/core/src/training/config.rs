use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Activation, NetConfig};

/// Settings of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Minibatch size `m`.
    pub batch_size: usize,
    /// Adam step size `ρ_o`.
    pub learning_rate: f64,
    /// Step size `ρ_t` of the streaming group counts.
    pub count_step: f64,
    /// Weight of the fairness penalty. Zero trains the vanilla model.
    pub lambda: f64,
    /// Desired fairness `ε₀` of the hinge penalty.
    pub epsilon0: f64,
    /// Dirichlet smoothing of the training-time ε estimate.
    pub alpha: f64,
    pub tau0: f64,
    pub tau_min: f64,
    /// Exponential temperature decay per optimization step.
    pub tau_decay: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub batch_norm: bool,
    /// l2 weight on the variational network weight matrices.
    pub l2: f64,
    pub seed: u64,
    /// Allowed relative dev log-likelihood degradation in fair-model selection.
    pub slack: f64,
    /// SP only: pre-train the prior network and regression head first.
    pub warm_start: bool,
    pub warm_start_epochs: usize,
    /// Maintain the streaming group counts. Only a vanilla run (`lambda = 0`)
    /// may turn this off.
    pub track_counts: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        TrainConfig {
            epochs: 50,
            batch_size: 128,
            learning_rate: 0.002,
            count_step: 0.1,
            lambda: 0.0,
            epsilon0: 0.0,
            alpha: 1.0,
            tau0: 1.0,
            tau_min: 0.5,
            tau_decay: 3e-5,
            hidden: net.hidden,
            activation: net.activation,
            dropout: net.dropout,
            batch_norm: net.batch_norm,
            l2: 1e-4,
            seed: 0,
            slack: 0.02,
            warm_start: true,
            warm_start_epochs: 10,
            track_counts: true,
        }
    }
}

impl TrainConfig {
    pub fn net(&self) -> NetConfig {
        NetConfig {
            hidden: self.hidden.clone(),
            activation: self.activation,
            dropout: self.dropout,
            batch_norm: self.batch_norm,
        }
    }

    pub fn is_vanilla(&self) -> bool {
        self.lambda == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.count_step > 0.0 && self.count_step <= 1.0) {
            return bad(format!("count_step {} outside (0, 1]", self.count_step));
        }
        if !(self.tau_min > 0.0 && self.tau0 >= self.tau_min) {
            return bad(format!("need tau0 >= tau_min > 0, got {} and {}", self.tau0, self.tau_min));
        }
        if !(self.tau_decay >= 0.0) {
            return bad(format!("tau_decay {} is negative", self.tau_decay));
        }
        if !(0.0..1.0).contains(&self.slack) {
            return bad(format!("slack {} outside [0, 1)", self.slack));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.epsilon0 >= 0.0) {
            return bad("lambda and epsilon0 must be nonnegative".into());
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.l2 >= 0.0) {
            return bad(format!("l2 {} is negative", self.l2));
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if !self.track_counts && !self.is_vanilla() {
            return bad("a fairness penalty needs track_counts".into());
        }
        Ok(())
    }

    /// Gumbel-Softmax temperature at an optimization step.
    pub fn temperature(&self, step: u64) -> f64 {
        anneal_temperature(self.tau0, self.tau_min, self.tau_decay, step)
    }
}

/// `max(τ_min, τ₀ exp(−r · step))`.
pub fn anneal_temperature(tau0: f64, tau_min: f64, rate: f64, step: u64) -> f64 {
    (tau0 * (-rate * step as f64).exp()).max(tau_min)
}
