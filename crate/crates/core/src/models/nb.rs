use serde::{Deserialize, Serialize};

use super::common::{assign_hard, kl_to_uniform, logsumexp, softmax_rows, CategoricalBlock, LogisticNormalPriors};
use super::net::{InferenceNet, NetConfig};
use super::{check_finite, ElboCtx, ElboOutput};
use crate::autodiff::{Bound, ParamStore, Tape, Tensor};
use crate::data::Dataset;
use crate::distributions::{gumbel_softmax, RngStream};
use crate::error::{Error, Result};

/// Naïve Bayes latent class model over categorical attributes with
/// logistic-normal class conditionals and a uniform class prior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NbModel {
    k: usize,
    net: InferenceNet,
    block: CategoricalBlock,
}

impl NbModel {
    #[cfg(test)]
    pub(crate) fn block(&self) -> &CategoricalBlock {
        &self.block
    }

    pub fn new(
        store: &mut ParamStore,
        k: usize,
        cards: &[usize],
        net: &NetConfig,
        priors: LogisticNormalPriors,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        let width: usize = cards.iter().sum();
        let net = InferenceNet::new(store, "q_z", width, k, net, rng)?;
        let block = CategoricalBlock::new(store, "theta", k, cards, priors, rng)?;
        Ok(NbModel { k, net, block })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cards(&self) -> &[usize] {
        self.block.cards()
    }

    pub fn net(&self) -> &InferenceNet {
        &self.net
    }

    /// One-hot observation matrix for a dataset.
    pub fn inputs(&self, ds: &Dataset) -> Result<Tensor> {
        if ds.cardinalities() != self.block.cards() {
            return Err(Error::Data(format!(
                "dataset categories {:?} differ from model {:?}",
                ds.cardinalities(),
                self.block.cards()
            )));
        }
        Ok(ds.onehot())
    }

    pub fn elbo(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        onehot: &Tensor,
        ctx: &ElboCtx,
        rng: &mut RngStream,
    ) -> Result<ElboOutput> {
        let x = tape.constant(onehot.clone());
        let (logits, bn) = self.net.forward(tape, bound, x, ctx.train, rng)?;
        check_finite(tape, logits, "inference network output")?;
        let z = gumbel_softmax(tape, logits, ctx.tau, rng)?;
        let log_y = self.block.sample_log_probs(tape, bound, rng)?;
        let recon = self.block.weighted_log_lik(tape, log_y, x, z)?;
        let kl = kl_to_uniform(tape, logits)?;
        let hyper = self.block.hyper_prior(tape, bound)?;
        let data = tape.sub(recon, kl)?;
        let scaled = tape.scale(hyper, ctx.hyper_scale);
        let total = tape.add(data, scaled)?;
        Ok(ElboOutput { total, recon, kl, hyper, z, logits, bn: bn.map(|s| vec![(0, s)]).unwrap_or_default() })
    }

    pub fn posterior(&self, store: &ParamStore, onehot: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.net.logits(store, onehot)?))
    }

    pub fn assign(&self, store: &ParamStore, onehot: &Tensor) -> Result<Vec<usize>> {
        Ok(assign_hard(&self.posterior(store, onehot)?))
    }

    /// `log Σ_z (1/K) Π_d p̄(x_d | z)` per row, with `p̄` the predictive
    /// logistic-normal category probabilities.
    pub fn log_evidence(&self, store: &ParamStore, onehot: &Tensor) -> Result<Vec<f64>> {
        let log_p = self.block.predictive(store).map(f64::ln);
        let width = self.block.width();
        let prior = -(self.k as f64).ln();
        let mut terms = vec![0.0; self.k];
        Ok(onehot
            .values()
            .chunks(width)
            .map(|row| {
                for (z, t) in terms.iter_mut().enumerate() {
                    let lp = log_p.row(z);
                    *t = prior + row.iter().zip(lp).filter(|(x, _)| **x != 0.0).map(|(_, l)| l).sum::<f64>();
                }
                logsumexp(&terms)
            })
            .collect())
    }

    pub(crate) fn nets(&self) -> Vec<&InferenceNet> {
        vec![&self.net]
    }
}
