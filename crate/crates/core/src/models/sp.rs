use serde::{Deserialize, Serialize};

use super::common::{
    assign_hard, logsumexp, neg_entropy, softmax_rows, softplus, softplus_inv, CategoricalBlock, LogisticNormalPriors,
};
use super::net::{InferenceNet, NetConfig};
use super::{check_finite, ElboCtx, ElboOutput};
use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{Dataset, Role};
use crate::distributions::{gamma_prior_tape, gaussian_logpdf, gaussian_prior_tape, gumbel_softmax, RngStream};
use crate::error::{Error, Result};

/// Number of risk classes `z`.
pub const SP_Z: usize = 3;
/// Number of states of the binary latent `u`.
pub const SP_U: usize = 2;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const XZ_ROLES: [Role; 4] = [Role::M, Role::F, Role::P, Role::D];

/// Hyper-priors of the regression head and of `p(a, c | u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpPriors {
    pub beta0_mean: f64,
    pub beta0_sd: f64,
    pub beta_z_means: Vec<f64>,
    pub beta_z_sd: f64,
    pub beta_u_means: Vec<f64>,
    pub beta_u_sd: f64,
    pub beta_c_sd: f64,
    /// Gamma shape and rate on the regression noise scale.
    pub sigma_shape: f64,
    pub sigma_rate: f64,
    pub block: LogisticNormalPriors,
}

impl SpPriors {
    /// Priors centred on the train moments of the (transformed) target.
    pub fn informed(t_mean: f64, t_sd: f64) -> Self {
        SpPriors {
            beta0_mean: t_mean,
            beta0_sd: t_sd,
            beta_z_means: vec![-t_sd, 0.0, t_sd],
            beta_z_sd: 0.5 * t_sd,
            beta_u_means: vec![-0.25 * t_sd, 0.25 * t_sd],
            beta_u_sd: 0.5 * t_sd,
            beta_c_sd: t_sd,
            sigma_shape: 2.0,
            sigma_rate: 2.0 / t_sd,
            block: LogisticNormalPriors::standard(SP_U),
        }
    }

    fn validate(&self) -> Result<()> {
        let scales = [self.beta0_sd, self.beta_z_sd, self.beta_u_sd, self.beta_c_sd, self.sigma_shape, self.sigma_rate];
        if scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("regression hyper-prior scales must be positive".into()));
        }
        if self.beta_z_means.len() != SP_Z || self.beta_u_means.len() != SP_U {
            return Err(Error::Config(format!("need {SP_Z} class and {SP_U} u prior means")));
        }
        Ok(())
    }
}

/// Shapes fixed by the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpDims {
    pub a_card: usize,
    pub c_card: usize,
    /// Train moments of the target, used to standardize it as a network input.
    pub t_mean: f64,
    pub t_sd: f64,
}

impl SpDims {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let card = |role, what| {
            ds.categorical_by_role(role)
                .map(|c| c.cardinality())
                .ok_or_else(|| Error::Data(format!("no categorical column with role {what}")))
        };
        let t = ds.target.as_ref().ok_or_else(|| Error::Data("no target column".into()))?;
        Ok(SpDims { a_card: card(Role::A, "a")?, c_card: card(Role::C, "c")?, t_mean: t.mean, t_sd: t.sd })
    }
}

/// Encoded model inputs for a set of individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct SpInputs {
    /// Standardized `(m, f, p, d)`, `n × 4`.
    pub xz: Tensor,
    /// `[xz, t_std]`, input of `q(z | x_z, t)`.
    pub qz_in: Tensor,
    /// `[onehot(a), onehot(c), t_std]`, input of `q(u | x_u, t)`.
    pub qu_in: Tensor,
    /// `[onehot(a), onehot(c)]`.
    pub xu: Tensor,
    pub c_onehot: Tensor,
    /// Transformed target, `n × 1`.
    pub t: Tensor,
    pub a_codes: Vec<usize>,
    pub c_codes: Vec<usize>,
}

impl SpInputs {
    pub fn len(&self) -> usize {
        self.a_codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_codes.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> SpInputs {
        SpInputs {
            xz: self.xz.select_rows(idx),
            qz_in: self.qz_in.select_rows(idx),
            qu_in: self.qu_in.select_rows(idx),
            xu: self.xu.select_rows(idx),
            c_onehot: self.c_onehot.select_rows(idx),
            t: self.t.select_rows(idx),
            a_codes: idx.iter().map(|&i| self.a_codes[i]).collect(),
            c_codes: idx.iter().map(|&i| self.c_codes[i]).collect(),
        }
    }
}

/// Latent risk `z` (3 classes) and binary latent `u` explaining criminal
/// history, age band, charge degree and jail time.
///
/// Generative story: `z ~ p(z | m, f, p, d)` from a prior network,
/// `u ~ Uniform{0, 1}`, `a, c | u` logistic-normal categoricals and
/// `t | z, u, c ~ N(β₀ + β_z[z] + β_u[u] + β_c[c], σ²)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpModel {
    dims: SpDims,
    prior_net: InferenceNet,
    qz_net: InferenceNet,
    qu_net: InferenceNet,
    block: CategoricalBlock,
    beta0: ParamId,
    beta_z: ParamId,
    beta_u: ParamId,
    beta_c: ParamId,
    raw_sigma: ParamId,
    priors: SpPriors,
}

/// Current regression coefficients as plain numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub beta0: f64,
    pub beta_z: Vec<f64>,
    pub beta_u: Vec<f64>,
    pub beta_c: Vec<f64>,
    pub sigma: f64,
}

impl Regression {
    pub fn mean(&self, z: usize, u: usize, c: usize) -> f64 {
        self.beta0 + self.beta_z[z] + self.beta_u[u] + self.beta_c[c]
    }
}

impl SpModel {
    #[cfg(test)]
    pub(crate) fn block(&self) -> &CategoricalBlock {
        &self.block
    }

    pub fn new(store: &mut ParamStore, dims: SpDims, net: &NetConfig, priors: SpPriors, rng: &mut RngStream) -> Result<Self> {
        priors.validate()?;
        if !(dims.t_sd > 0.0) || !dims.t_mean.is_finite() {
            return Err(Error::Config(format!("target moments mean={} sd={} unusable", dims.t_mean, dims.t_sd)));
        }
        let prior_cfg = NetConfig { batch_norm: false, ..net.clone() };
        let prior_net = InferenceNet::new(store, "p_z", XZ_ROLES.len(), SP_Z, &prior_cfg, rng)?;
        let qz_net = InferenceNet::new(store, "q_z", XZ_ROLES.len() + 1, SP_Z, net, rng)?;
        let qu_net = InferenceNet::new(store, "q_u", dims.a_card + dims.c_card + 1, SP_U, net, rng)?;
        let block = CategoricalBlock::new(store, "theta_u", SP_U, &[dims.a_card, dims.c_card], priors.block.clone(), rng)?;
        let small = |rng: &mut RngStream, shape: &[usize]| {
            let mut t = rng.normal_tensor(shape);
            t.values_mut().iter_mut().for_each(|v| *v *= 0.1 * dims.t_sd);
            t
        };
        let beta0 = store.add("beta.0", Tensor::scalar(dims.t_mean));
        let beta_z = store.add("beta.z", small(rng, &[SP_Z, 1]));
        let beta_u = store.add("beta.u", small(rng, &[SP_U, 1]));
        let beta_c = store.add("beta.c", Tensor::zeros(&[dims.c_card, 1]));
        let raw_sigma = store.add("beta.raw_sigma", Tensor::scalar(softplus_inv(dims.t_sd)));
        Ok(SpModel { dims, prior_net, qz_net, qu_net, block, beta0, beta_z, beta_u, beta_c, raw_sigma, priors })
    }

    pub fn dims(&self) -> &SpDims {
        &self.dims
    }

    pub fn inputs(&self, ds: &Dataset) -> Result<SpInputs> {
        let n = ds.len();
        let mut xz_cols = Vec::with_capacity(XZ_ROLES.len());
        for role in XZ_ROLES {
            xz_cols.push(
                ds.continuous_by_role(role)
                    .ok_or_else(|| Error::Data(format!("no continuous column with role {role:?}")))?,
            );
        }
        let a = ds.categorical_by_role(Role::A).ok_or_else(|| Error::Data("no column with role a".into()))?;
        let c = ds.categorical_by_role(Role::C).ok_or_else(|| Error::Data("no column with role c".into()))?;
        if a.cardinality() != self.dims.a_card || c.cardinality() != self.dims.c_card {
            return Err(Error::Data("age/charge vocabularies differ from the model".into()));
        }
        let target = ds.target.as_ref().ok_or_else(|| Error::Data("no target column".into()))?;
        let xz = ds.continuous_matrix_of(&xz_cols);
        let xu = ds.onehot_of(&[a, c]);
        let c_onehot = ds.onehot_of(&[c]);
        let t_std: Vec<f64> = target.values.iter().map(|t| (t - self.dims.t_mean) / self.dims.t_sd).collect();
        let append = |m: &Tensor| {
            let w = m.cols();
            let mut v = Vec::with_capacity(n * (w + 1));
            for (r, ts) in t_std.iter().enumerate() {
                v.extend_from_slice(m.row(r));
                v.push(*ts);
            }
            Tensor::from_parts(vec![n, w + 1], v)
        };
        Ok(SpInputs {
            qz_in: append(&xz),
            qu_in: append(&xu),
            xz,
            xu,
            c_onehot,
            t: Tensor::from_parts(vec![n, 1], target.values.clone()),
            a_codes: a.codes.clone(),
            c_codes: c.codes.clone(),
        })
    }

    pub fn elbo(&self, tape: &mut Tape, bound: &Bound, x: &SpInputs, ctx: &ElboCtx, rng: &mut RngStream) -> Result<ElboOutput> {
        let m = x.len() as f64;
        let xz = tape.constant(x.xz.clone());
        let qz_in = tape.constant(x.qz_in.clone());
        let qu_in = tape.constant(x.qu_in.clone());
        let xu = tape.constant(x.xu.clone());
        let c_onehot = tape.constant(x.c_onehot.clone());
        let t = tape.constant(x.t.clone());

        let (prior_logits, _) = self.prior_net.forward(tape, bound, xz, ctx.train, rng)?;
        check_finite(tape, prior_logits, "prior network output")?;
        let (qz_logits, bn_z) = self.qz_net.forward(tape, bound, qz_in, ctx.train, rng)?;
        check_finite(tape, qz_logits, "q(z) network output")?;
        let (qu_logits, bn_u) = self.qu_net.forward(tape, bound, qu_in, ctx.train, rng)?;
        check_finite(tape, qu_logits, "q(u) network output")?;
        let z = gumbel_softmax(tape, qz_logits, ctx.tau, rng)?;
        let u = gumbel_softmax(tape, qu_logits, ctx.tau, rng)?;

        let mean = self.regression_mean(tape, bound, z, u, c_onehot)?;
        let sigma = tape.softplus(bound.get(self.raw_sigma))?;
        let t_lik = crate::distributions::gaussian_logpdf_tape(tape, t, mean, sigma)?;
        let log_y = self.block.sample_log_probs(tape, bound, rng)?;
        let xu_lik = self.block.weighted_log_lik(tape, log_y, xu, u)?;
        let recon = tape.add(t_lik, xu_lik)?;

        let pz = tape.softmax(qz_logits);
        let log_prior = tape.log_softmax(prior_logits);
        let cross = tape.mul(pz, log_prior)?;
        let cross = tape.sum_all(cross);
        let ent_z = neg_entropy(tape, qz_logits)?;
        let ent_u = neg_entropy(tape, qu_logits)?;
        let kl_z = tape.sub(ent_z, cross)?;
        let kl_u = tape.add_scalar(ent_u, m * (SP_U as f64).ln());
        let kl = tape.add(kl_z, kl_u)?;

        let hyper = self.hyper_prior(tape, bound)?;
        let data = tape.sub(recon, kl)?;
        let scaled = tape.scale(hyper, ctx.hyper_scale);
        let total = tape.add(data, scaled)?;
        let bn = [(1, bn_z), (2, bn_u)].into_iter().filter_map(|(i, s)| s.map(|s| (i, s))).collect();
        Ok(ElboOutput { total, recon, kl, hyper, z, logits: qz_logits, bn })
    }

    fn regression_mean(&self, tape: &mut Tape, bound: &Bound, z: Var, u: Var, c_onehot: Var) -> Result<Var> {
        let from_z = tape.matmul(z, bound.get(self.beta_z))?;
        let from_u = tape.matmul(u, bound.get(self.beta_u))?;
        let from_c = tape.matmul(c_onehot, bound.get(self.beta_c))?;
        let s = tape.add(from_z, from_u)?;
        let s = tape.add(s, from_c)?;
        tape.add(s, bound.get(self.beta0))
    }

    fn hyper_prior(&self, tape: &mut Tape, bound: &Bound) -> Result<Var> {
        let p = &self.priors;
        let mut total = gaussian_prior_tape(tape, bound.get(self.beta0), p.beta0_mean, p.beta0_sd)?;
        for (id, means, sd) in [(self.beta_z, &p.beta_z_means, p.beta_z_sd), (self.beta_u, &p.beta_u_means, p.beta_u_sd)] {
            let centre = tape.constant(Tensor::new(vec![means.len(), 1], means.clone())?);
            let off = tape.sub(bound.get(id), centre)?;
            let lp = gaussian_prior_tape(tape, off, 0.0, sd)?;
            total = tape.add(total, lp)?;
        }
        let lp = gaussian_prior_tape(tape, bound.get(self.beta_c), 0.0, p.beta_c_sd)?;
        total = tape.add(total, lp)?;
        let sigma = tape.softplus(bound.get(self.raw_sigma))?;
        let lp = gamma_prior_tape(tape, sigma, p.sigma_shape, p.sigma_rate)?;
        total = tape.add(total, lp)?;
        let lp = self.block.hyper_prior(tape, bound)?;
        tape.add(total, lp)
    }

    /// Warm-start objective `Σ_j log Σ_z p(z | x_z) N(t_j; β₀ + β_z[z], σ)`.
    pub fn warm_start_objective(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: &SpInputs,
        train: bool,
        rng: &mut RngStream,
    ) -> Result<Var> {
        let xz = tape.constant(x.xz.clone());
        let t = tape.constant(x.t.clone());
        let (prior_logits, _) = self.prior_net.forward(tape, bound, xz, train, rng)?;
        check_finite(tape, prior_logits, "prior network output")?;
        let log_prior = tape.log_softmax(prior_logits);
        let row = tape.transpose(bound.get(self.beta_z))?;
        let means = tape.add(row, bound.get(self.beta0))?;
        let sigma = tape.softplus(bound.get(self.raw_sigma))?;
        let d = tape.sub(t, means)?;
        let zs = tape.div(d, sigma)?;
        let sq = tape.square(zs)?;
        let quad = tape.scale(sq, -0.5);
        let lsig = tape.log(sigma)?;
        let cell = tape.sub(quad, lsig)?;
        let cell = tape.add_scalar(cell, -0.5 * LN_2PI);
        let joint = tape.add(cell, log_prior)?;
        let per_row = tape.logsumexp(joint);
        let total = tape.sum_all(per_row);
        check_finite(tape, total, "warm-start likelihood")?;
        Ok(total)
    }

    /// Parameters trained by the warm start: prior network and the
    /// `z`-part of the regression.
    pub fn warm_start_params(&self) -> Vec<ParamId> {
        let mut ids = self.prior_net.param_ids();
        ids.extend([self.beta0, self.beta_z, self.raw_sigma]);
        ids
    }

    pub fn regression(&self, store: &ParamStore) -> Regression {
        let col = |id| store.get(id).values().to_vec();
        Regression {
            beta0: store.get(self.beta0).item(),
            beta_z: col(self.beta_z),
            beta_u: col(self.beta_u),
            beta_c: col(self.beta_c),
            sigma: softplus(store.get(self.raw_sigma).item()),
        }
    }

    /// `q(z | x_z, t)` rows.
    pub fn posterior(&self, store: &ParamStore, x: &SpInputs) -> Result<Tensor> {
        Ok(softmax_rows(&self.qz_net.logits(store, &x.qz_in)?))
    }

    /// `q(u | x_u, t)` rows.
    pub fn u_posterior(&self, store: &ParamStore, x: &SpInputs) -> Result<Tensor> {
        Ok(softmax_rows(&self.qu_net.logits(store, &x.qu_in)?))
    }

    /// `p(z | x_z)` rows from the prior network.
    pub fn prior_probs(&self, store: &ParamStore, x: &SpInputs) -> Result<Tensor> {
        Ok(softmax_rows(&self.prior_net.logits(store, &x.xz)?))
    }

    pub fn assign(&self, store: &ParamStore, x: &SpInputs) -> Result<Vec<usize>> {
        Ok(assign_hard(&self.posterior(store, x)?))
    }

    /// `log Σ_{z,u} p(z | x_z) p(u) p̄(a | u) p̄(c | u) N(t; μ_{z,u,c}, σ)`
    /// per row, with `p̄` the predictive logistic-normal probabilities.
    pub fn log_evidence(&self, store: &ParamStore, x: &SpInputs) -> Result<Vec<f64>> {
        let prior = self.prior_probs(store, x)?;
        let pred = self.block.predictive(store);
        let reg = self.regression(store);
        let a_card = self.dims.a_card;
        let mut cells = [0.0; SP_Z * SP_U];
        (0..x.len())
            .map(|j| {
                let (a, c, t) = (x.a_codes[j], x.c_codes[j], x.t.values()[j]);
                for z in 0..SP_Z {
                    for u in 0..SP_U {
                        let pu = pred.row(u);
                        cells[z * SP_U + u] = prior.row(j)[z].ln() - (SP_U as f64).ln()
                            + pu[a].ln()
                            + pu[a_card + c].ln()
                            + gaussian_logpdf(t, reg.mean(z, u, c), reg.sigma)?;
                    }
                }
                Ok(logsumexp(&cells))
            })
            .collect()
    }

    /// `E[t] = Σ_{z,u} q(z) q(u) μ_{z,u,c}` on the transformed scale.
    pub fn predict_t(&self, store: &ParamStore, x: &SpInputs) -> Result<Vec<f64>> {
        let qz = self.posterior(store, x)?;
        let qu = self.u_posterior(store, x)?;
        let reg = self.regression(store);
        Ok((0..x.len())
            .map(|j| {
                let mut e = 0.0;
                for z in 0..SP_Z {
                    for u in 0..SP_U {
                        e += qz.row(j)[z] * qu.row(j)[u] * reg.mean(z, u, x.c_codes[j]);
                    }
                }
                e
            })
            .collect())
    }

    /// Prior network, `q(z)` network, `q(u)` network, in that order.
    pub(crate) fn nets(&self) -> Vec<&InferenceNet> {
        vec![&self.prior_net, &self.qz_net, &self.qu_net]
    }
}
