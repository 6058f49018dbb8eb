use serde::{Deserialize, Serialize};

use super::common::{assign_hard, kl_to_uniform, logsumexp, softmax_rows};
use super::net::{InferenceNet, NetConfig};
use super::{check_finite, ElboCtx, ElboOutput};
use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::Dataset;
use crate::distributions::{gaussian_prior_tape, gumbel_softmax, RngStream};
use crate::error::{Error, Result};

/// Hyper-prior settings for the mixture components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPriors {
    /// Prior means of the component means (`k` rows of length `d`),
    /// typically k-means centers of the train split.
    pub mean_centers: Vec<Vec<f64>>,
    /// Isotropic prior s.d. of the component means.
    pub mean_sd: f64,
    /// Inverse-Wishart degrees of freedom; scale is the identity.
    pub iw_nu: f64,
}

/// Gaussian mixture with covariances `C Cᵀ + I` and a uniform class prior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmModel {
    k: usize,
    d: usize,
    rank: usize,
    net: InferenceNet,
    means: Vec<ParamId>,
    factors: Vec<ParamId>,
    priors: GmmPriors,
}

impl GmmModel {
    pub fn new(
        store: &mut ParamStore,
        k: usize,
        d: usize,
        rank: usize,
        net: &NetConfig,
        priors: GmmPriors,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if k == 0 || d == 0 || rank == 0 {
            return Err(Error::Config("K, dimension and covariance rank must be positive".into()));
        }
        if priors.mean_centers.len() != k || priors.mean_centers.iter().any(|c| c.len() != d) {
            return Err(Error::Config(format!("need {k} prior centers of dimension {d}")));
        }
        if !(priors.mean_sd > 0.0) || !(priors.iw_nu > d as f64 - 1.0) {
            return Err(Error::Config("invalid mixture hyper-priors".into()));
        }
        let net = InferenceNet::new(store, "q_z", d, k, net, rng)?;
        let mut means = Vec::with_capacity(k);
        let mut factors = Vec::with_capacity(k);
        for (z, c) in priors.mean_centers.iter().enumerate() {
            let mu: Vec<f64> = c.iter().map(|v| v + 0.1 * rng.normal()).collect();
            means.push(store.add(format!("theta.{z}.mu"), Tensor::vector(mu)));
            let mut f = rng.normal_tensor(&[d, rank]);
            f.values_mut().iter_mut().for_each(|v| *v *= 0.1);
            factors.push(store.add(format!("theta.{z}.factor"), f));
        }
        Ok(GmmModel { k, d, rank, net, means, factors, priors })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn inputs(&self, ds: &Dataset) -> Result<Tensor> {
        if ds.continuous.len() != self.d {
            return Err(Error::Data(format!("dataset has {} continuous columns, model expects {}", ds.continuous.len(), self.d)));
        }
        Ok(ds.continuous_matrix())
    }

    fn class_log_lik(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let m = tape.shape(x)[0];
        let mut cols = Vec::with_capacity(self.k);
        for z in 0..self.k {
            let lp = tape.mvn_logpdf_factor(x, bound.get(self.means[z]), bound.get(self.factors[z]))?;
            cols.push(tape.reshape(lp, &[m, 1])?);
        }
        tape.concat(&cols, 1)
    }

    pub fn elbo(&self, tape: &mut Tape, bound: &Bound, x: &Tensor, ctx: &ElboCtx, rng: &mut RngStream) -> Result<ElboOutput> {
        let xv = tape.constant(x.clone());
        let (logits, bn) = self.net.forward(tape, bound, xv, ctx.train, rng)?;
        check_finite(tape, logits, "inference network output")?;
        let z = gumbel_softmax(tape, logits, ctx.tau, rng)?;
        let ll = self.class_log_lik(tape, bound, xv)?;
        let weighted = tape.mul(ll, z)?;
        let recon = tape.sum_all(weighted);
        let kl = kl_to_uniform(tape, logits)?;
        let hyper = self.hyper_prior(tape, bound)?;
        let data = tape.sub(recon, kl)?;
        let scaled = tape.scale(hyper, ctx.hyper_scale);
        let total = tape.add(data, scaled)?;
        Ok(ElboOutput { total, recon, kl, hyper, z, logits, bn: bn.map(|s| vec![(0, s)]).unwrap_or_default() })
    }

    fn hyper_prior(&self, tape: &mut Tape, bound: &Bound) -> Result<Var> {
        let mut psi = vec![0.0; self.d * self.d];
        (0..self.d).for_each(|i| psi[i * self.d + i] = 1.0);
        let mut total = tape.scalar(0.0);
        for z in 0..self.k {
            let center = tape.constant(Tensor::vector(self.priors.mean_centers[z].clone()));
            let off = tape.sub(bound.get(self.means[z]), center)?;
            let lp = gaussian_prior_tape(tape, off, 0.0, self.priors.mean_sd)?;
            total = tape.add(total, lp)?;
            let iw = tape.inv_wishart_logpdf_factor(bound.get(self.factors[z]), self.priors.iw_nu, &psi)?;
            total = tape.add(total, iw)?;
        }
        Ok(total)
    }

    pub fn posterior(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.net.logits(store, x)?))
    }

    pub fn assign(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<usize>> {
        Ok(assign_hard(&self.posterior(store, x)?))
    }

    /// `log Σ_z (1/K) N(x; μ_z, C_z C_zᵀ + I)` per row.
    pub fn log_evidence(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let ll = self.class_log_lik(&mut tape, &bound, xv)?;
        let prior = -(self.k as f64).ln();
        Ok(tape
            .value(ll)
            .values()
            .chunks(self.k)
            .map(|row| logsumexp(&row.iter().map(|v| v + prior).collect::<Vec<_>>()))
            .collect())
    }

    pub(crate) fn nets(&self) -> Vec<&InferenceNet> {
        vec![&self.net]
    }
}
