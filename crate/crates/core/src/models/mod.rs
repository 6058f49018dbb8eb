//! The three generative models with their inference networks, hyper-priors
//! and per-minibatch ELBO assembly.
//!
//! * [`NbModel`]: latent class over categorical attributes.
//! * [`GmmModel`]: Gaussian mixture over continuous attributes.
//! * [`SpModel`]: risk class `z` and binary latent `u` for criminal-justice
//!   records, with a Gaussian regression on (transformed) jail time.
//!
//! [`Model`] owns the parameter store and dispatches over the three.

mod checkpoint;
mod common;
mod gmm;
mod nb;
mod net;
mod sp;

#[cfg(test)]
mod tests;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use common::{
    assign_hard, kl_to_uniform, logsumexp, neg_entropy, softmax_rows, softplus, softplus_inv, CategoricalBlock,
    LogisticNormalPriors, PREDICTIVE_DRAWS, PREDICTIVE_SEED,
};
pub use gmm::{GmmModel, GmmPriors};
pub use nb::NbModel;
pub use net::{Activation, InferenceNet, NetConfig, BN_EPS, BN_MOMENTUM};
pub use sp::{Regression, SpDims, SpInputs, SpModel, SpPriors, SP_U, SP_Z};

use crate::autodiff::{BatchStats, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{kmeans, Dataset, KMEANS_ITERS};
use crate::distributions::RngStream;
use crate::error::{Error, Result};

/// Per-call settings of an ELBO evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboCtx {
    /// Gumbel-Softmax temperature.
    pub tau: f64,
    /// Weight of the hyper-prior term, `m / n` for a minibatch of `m` out of `n`.
    pub hyper_scale: f64,
    /// Training mode: dropout and batch statistics.
    pub train: bool,
}

/// Tape handles of one ELBO evaluation. Every term is summed over the batch.
#[derive(Debug, Clone)]
pub struct ElboOutput {
    /// `recon − kl + hyper_scale · hyper`.
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    /// Unscaled hyper-prior log-density.
    pub hyper: Var,
    /// Relaxed sample of `z`, `m × K`.
    pub z: Var,
    /// Unnormalized `log q(z | ·)`, `m × K`.
    pub logits: Var,
    /// Batch statistics per network index (see [`Model::update_bn`]).
    pub bn: Vec<(usize, BatchStats)>,
}

pub(crate) fn check_finite(tape: &Tape, v: Var, term: &str) -> Result<()> {
    if tape.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { term: term.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nb,
    Gmm,
    Sp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Nb => "nb",
            ModelKind::Gmm => "gmm",
            ModelKind::Sp => "sp",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nb" => Ok(ModelKind::Nb),
            "gmm" => Ok(ModelKind::Gmm),
            "sp" => Ok(ModelKind::Sp),
            _ => Err(Error::Config(format!("unknown model kind {s:?} (expected nb, gmm or sp)"))),
        }
    }
}

/// Model structure settings. Network architecture is part of the training
/// configuration since the grid search varies it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Number of latent classes. The SP model fixes it at 3.
    pub k: usize,
    /// Rank of the GMM covariance factor; the data dimension when unset.
    pub cov_rank: Option<usize>,
    /// Prior s.d. of the GMM component means around the k-means centers.
    pub mean_sd: f64,
    /// Inverse-Wishart degrees of freedom; `D + 2` when unset.
    pub iw_nu: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { kind: ModelKind::Nb, k: 3, cov_rank: None, mean_sd: 1.0, iw_nu: None }
    }
}

/// Everything needed to rebuild a model's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Nb { k: usize, cards: Vec<usize>, priors: LogisticNormalPriors },
    Gmm { k: usize, dim: usize, rank: usize, priors: GmmPriors },
    Sp { dims: SpDims, priors: SpPriors },
}

impl ModelSpec {
    /// Derives the structure (and data-informed priors) from a train split.
    pub fn from_data(cfg: &ModelConfig, train: &Dataset, rng: &mut RngStream) -> Result<Self> {
        match cfg.kind {
            ModelKind::Nb => {
                if train.categorical.is_empty() {
                    return Err(Error::Data("the NB model needs categorical feature columns".into()));
                }
                Ok(ModelSpec::Nb { k: cfg.k, cards: train.cardinalities(), priors: LogisticNormalPriors::standard(cfg.k) })
            }
            ModelKind::Gmm => {
                let d = train.continuous.len();
                if d == 0 {
                    return Err(Error::Data("the GMM model needs continuous feature columns".into()));
                }
                let km = kmeans(&train.continuous_matrix(), cfg.k, KMEANS_ITERS, rng)?;
                let priors = GmmPriors {
                    mean_centers: (0..cfg.k).map(|z| km.centers.row(z).to_vec()).collect(),
                    mean_sd: cfg.mean_sd,
                    iw_nu: cfg.iw_nu.unwrap_or(d as f64 + 2.0),
                };
                Ok(ModelSpec::Gmm { k: cfg.k, dim: d, rank: cfg.cov_rank.unwrap_or(d), priors })
            }
            ModelKind::Sp => {
                if cfg.k != SP_Z {
                    return Err(Error::Config(format!("the SP model has exactly {SP_Z} risk classes, got k={}", cfg.k)));
                }
                let dims = SpDims::from_dataset(train)?;
                let priors = SpPriors::informed(dims.t_mean, dims.t_sd);
                Ok(ModelSpec::Sp { dims, priors })
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Nb { .. } => ModelKind::Nb,
            ModelSpec::Gmm { .. } => ModelKind::Gmm,
            ModelSpec::Sp { .. } => ModelKind::Sp,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Variant {
    Nb(NbModel),
    Gmm(GmmModel),
    Sp(SpModel),
}

/// Encoded inputs of one model for a set of individuals.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    /// One-hot categorical attributes (NB).
    Onehot(Tensor),
    /// Standardized continuous attributes (GMM).
    Continuous(Tensor),
    Sp(SpInputs),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Onehot(t) | Inputs::Continuous(t) => t.rows(),
            Inputs::Sp(x) => x.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Inputs {
        match self {
            Inputs::Onehot(t) => Inputs::Onehot(t.select_rows(idx)),
            Inputs::Continuous(t) => Inputs::Continuous(t.select_rows(idx)),
            Inputs::Sp(x) => Inputs::Sp(x.select(idx)),
        }
    }

    /// Feature matrix used for clustering indices.
    pub fn features(&self) -> &Tensor {
        match self {
            Inputs::Onehot(t) | Inputs::Continuous(t) => t,
            Inputs::Sp(x) => &x.xz,
        }
    }
}

/// A model together with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    net: NetConfig,
    store: ParamStore,
    variant: Variant,
}

impl Model {
    /// Builds the structure of `spec` and initializes parameters from `rng`.
    pub fn build(spec: ModelSpec, net: &NetConfig, rng: &mut RngStream) -> Result<Self> {
        let mut store = ParamStore::new();
        let variant = match &spec {
            ModelSpec::Nb { k, cards, priors } => Variant::Nb(NbModel::new(&mut store, *k, cards, net, priors.clone(), rng)?),
            ModelSpec::Gmm { k, dim, rank, priors } => {
                Variant::Gmm(GmmModel::new(&mut store, *k, *dim, *rank, net, priors.clone(), rng)?)
            }
            ModelSpec::Sp { dims, priors } => Variant::Sp(SpModel::new(&mut store, dims.clone(), net, priors.clone(), rng)?),
        };
        Ok(Model { spec, net: net.clone(), store, variant })
    }

    /// Derives the [`ModelSpec`] from `train` and builds the model.
    pub fn from_data(cfg: &ModelConfig, net: &NetConfig, train: &Dataset, rng: &mut RngStream) -> Result<Self> {
        let spec = ModelSpec::from_data(cfg, train, rng)?;
        Model::build(spec, net, rng)
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn net_config(&self) -> &NetConfig {
        &self.net
    }

    /// Number of latent classes of `z`.
    pub fn k(&self) -> usize {
        match &self.variant {
            Variant::Nb(m) => m.k(),
            Variant::Gmm(m) => m.k(),
            Variant::Sp(_) => SP_Z,
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn as_sp(&self) -> Option<&SpModel> {
        match &self.variant {
            Variant::Sp(m) => Some(m),
            _ => None,
        }
    }

    pub fn inputs(&self, ds: &Dataset) -> Result<Inputs> {
        match &self.variant {
            Variant::Nb(m) => Ok(Inputs::Onehot(m.inputs(ds)?)),
            Variant::Gmm(m) => Ok(Inputs::Continuous(m.inputs(ds)?)),
            Variant::Sp(m) => Ok(Inputs::Sp(m.inputs(ds)?)),
        }
    }

    fn mismatch(&self) -> Error {
        Error::Contract(format!("inputs do not belong to a {} model", self.kind()))
    }

    /// Single-sample ELBO of a batch at parameters `bound`.
    pub fn elbo(&self, tape: &mut Tape, bound: &Bound, x: &Inputs, ctx: &ElboCtx, rng: &mut RngStream) -> Result<ElboOutput> {
        match (&self.variant, x) {
            (Variant::Nb(m), Inputs::Onehot(t)) => m.elbo(tape, bound, t, ctx, rng),
            (Variant::Gmm(m), Inputs::Continuous(t)) => m.elbo(tape, bound, t, ctx, rng),
            (Variant::Sp(m), Inputs::Sp(s)) => m.elbo(tape, bound, s, ctx, rng),
            _ => Err(self.mismatch()),
        }
    }

    /// Evaluation-mode `q(z | ·)` rows.
    pub fn posterior(&self, x: &Inputs) -> Result<Tensor> {
        match (&self.variant, x) {
            (Variant::Nb(m), Inputs::Onehot(t)) => m.posterior(&self.store, t),
            (Variant::Gmm(m), Inputs::Continuous(t)) => m.posterior(&self.store, t),
            (Variant::Sp(m), Inputs::Sp(s)) => m.posterior(&self.store, s),
            _ => Err(self.mismatch()),
        }
    }

    /// Hard assignments `argmax q(z | ·)`.
    pub fn assign(&self, x: &Inputs) -> Result<Vec<usize>> {
        Ok(assign_hard(&self.posterior(x)?))
    }

    /// Exact marginal log-likelihood of each row, enumerating the latents.
    pub fn log_evidence(&self, x: &Inputs) -> Result<Vec<f64>> {
        match (&self.variant, x) {
            (Variant::Nb(m), Inputs::Onehot(t)) => m.log_evidence(&self.store, t),
            (Variant::Gmm(m), Inputs::Continuous(t)) => m.log_evidence(&self.store, t),
            (Variant::Sp(m), Inputs::Sp(s)) => m.log_evidence(&self.store, s),
            _ => Err(self.mismatch()),
        }
    }

    /// Expected transformed target; `None` for models without a target.
    pub fn predict_t(&self, x: &Inputs) -> Result<Option<Vec<f64>>> {
        match (&self.variant, x) {
            (Variant::Sp(m), Inputs::Sp(s)) => Ok(Some(m.predict_t(&self.store, s)?)),
            (Variant::Sp(_), _) => Err(self.mismatch()),
            _ => Ok(None),
        }
    }

    fn nets(&self) -> Vec<&InferenceNet> {
        match &self.variant {
            Variant::Nb(m) => m.nets(),
            Variant::Gmm(m) => m.nets(),
            Variant::Sp(m) => m.nets(),
        }
    }

    /// Weight matrices of the variational networks, the l2 targets. The SP
    /// prior network is part of the generative model and is excluded.
    pub fn l2_weight_ids(&self) -> Vec<ParamId> {
        let nets = self.nets();
        let skip = usize::from(self.kind() == ModelKind::Sp);
        nets.into_iter().skip(skip).flat_map(InferenceNet::weight_ids).collect()
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn update_bn(&mut self, stats: &[(usize, BatchStats)]) {
        let nets: Vec<InferenceNet> = self.nets().into_iter().cloned().collect();
        for (i, s) in stats {
            nets[*i].update_running_stats(&mut self.store, s);
        }
    }

    /// Checkpoint of the current parameters.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.spec.clone(), self.net.clone(), self.store.to_map())
    }

    /// Rebuilds a model from a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.validate()?;
        let mut model = Model::build(ck.spec.clone(), &ck.net, &mut RngStream::new(0))?;
        model.store.load_map(&ck.params)?;
        Ok(model)
    }
}

/// `−(1/m) Σ_j ELBO_j + λ F`, the minimization target of one step.
///
/// With `λ = 0` the penalty is left off the tape entirely so the objective
/// and its gradients equal the vanilla ones exactly.
pub fn fair_objective(tape: &mut Tape, elbo_sum: Var, penalty: Option<Var>, lambda: f64, m: usize) -> Result<Var> {
    let neg_mean = tape.scale(elbo_sum, -1.0 / m as f64);
    match penalty {
        Some(f) if lambda != 0.0 => {
            let weighted = tape.scale(f, lambda);
            tape.add(neg_mean, weighted)
        }
        _ => Ok(neg_mean),
    }
}

/// Plain-number counterpart of [`fair_objective`].
pub fn fair_objective_value(elbo_sum: f64, penalty: f64, lambda: f64, m: usize) -> f64 {
    let base = -elbo_sum / m as f64;
    if lambda == 0.0 {
        base
    } else {
        base + lambda * penalty
    }
}
