use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::distributions::{gamma_prior_tape, gaussian_prior_tape, RngStream};
use crate::error::{Error, Result};

/// Monte Carlo draws used to tabulate logistic-normal predictive
/// probabilities for held-out likelihood.
pub const PREDICTIVE_DRAWS: usize = 4096;
/// Seed of the predictive table, fixed so evaluation is deterministic.
pub const PREDICTIVE_SEED: u64 = 0x5eed;

/// `Σ_j Σ_k π_jk (log π_jk + log K)` for a batch of logits.
pub fn kl_to_uniform(tape: &mut Tape, logits: Var) -> Result<Var> {
    let k = tape.shape(logits).last().copied().unwrap_or(1) as f64;
    let logp = tape.log_softmax(logits);
    let p = tape.softmax(logits);
    let shifted = tape.add_scalar(logp, k.ln());
    let prod = tape.mul(p, shifted)?;
    Ok(tape.sum_all(prod))
}

/// `Σ_j Σ_k π_jk log π_jk`.
pub fn neg_entropy(tape: &mut Tape, logits: Var) -> Result<Var> {
    let logp = tape.log_softmax(logits);
    let p = tape.softmax(logits);
    let prod = tape.mul(p, logp)?;
    Ok(tape.sum_all(prod))
}

/// Softplus inverse, for initializing positive parameters.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Gaussian hyper-prior `N(mean, sd)` and Gamma hyper-prior `Γ(shape, rate)`
/// (shape–rate) on the logistic-normal location and scale parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticNormalPriors {
    /// Prior mean of the location, one per class.
    pub mu_means: Vec<f64>,
    pub mu_sd: f64,
    pub sigma_shape: f64,
    pub sigma_rate: f64,
}

impl LogisticNormalPriors {
    pub fn standard(classes: usize) -> Self {
        LogisticNormalPriors { mu_means: vec![0.0; classes], mu_sd: 1.0, sigma_shape: 1.0, sigma_rate: 2.0 }
    }

    fn validate(&self, classes: usize) -> Result<()> {
        if self.mu_means.len() != classes {
            return Err(Error::Config(format!("need {classes} prior means, got {}", self.mu_means.len())));
        }
        if !(self.mu_sd > 0.0 && self.sigma_shape > 0.0 && self.sigma_rate > 0.0) {
            return Err(Error::Config("hyper-prior scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct BlockIds {
    mu: ParamId,
    raw_sigma: ParamId,
}

/// Class-conditional logistic-normal distributions over several
/// categorical attributes: for class `k` and attribute `d`,
/// `y = softmax(μ_kd + σ_kd ⊙ ε)` is a distribution over the categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalBlock {
    classes: usize,
    cards: Vec<usize>,
    ids: Vec<BlockIds>,
    priors: LogisticNormalPriors,
}

impl CategoricalBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        classes: usize,
        cards: &[usize],
        priors: LogisticNormalPriors,
        rng: &mut RngStream,
    ) -> Result<Self> {
        priors.validate(classes)?;
        if cards.is_empty() || cards.iter().any(|&c| c < 2) {
            return Err(Error::Config(format!("{prefix}: every attribute needs at least two categories")));
        }
        let sigma0 = priors.sigma_shape / priors.sigma_rate;
        let ids = cards
            .iter()
            .enumerate()
            .map(|(d, &c)| {
                let mut mu = rng.normal_tensor(&[classes, c]);
                mu.values_mut().iter_mut().for_each(|v| *v *= 0.5);
                BlockIds {
                    mu: store.add(format!("{prefix}.{d}.mu"), mu),
                    raw_sigma: store.add(format!("{prefix}.{d}.raw_sigma"), Tensor::full(&[classes, c], softplus_inv(sigma0))),
                }
            })
            .collect();
        Ok(CategoricalBlock { classes, cards: cards.to_vec(), ids, priors })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn width(&self) -> usize {
        self.cards.iter().sum()
    }

    /// One logistic-normal draw per (class, attribute), returned as the
    /// concatenated log-probabilities `classes × Σ cards`.
    pub fn sample_log_probs(&self, tape: &mut Tape, bound: &Bound, rng: &mut RngStream) -> Result<Var> {
        let mut parts = Vec::with_capacity(self.ids.len());
        for ids in &self.ids {
            let mu = bound.get(ids.mu);
            let sigma = tape.softplus(bound.get(ids.raw_sigma))?;
            let noise = tape.constant(rng.normal_tensor(tape.shape(mu)));
            let spread = tape.mul(sigma, noise)?;
            let pre = tape.add(mu, spread)?;
            parts.push(tape.log_softmax(pre));
        }
        tape.concat(&parts, 1)
    }

    /// `Σ_j Σ_k w_jk Σ_d log y_kd[x_jd]` for one-hot observations `x`
    /// (`m × Σ cards`) and class weights `w` (`m × classes`).
    pub fn weighted_log_lik(&self, tape: &mut Tape, log_y: Var, onehot: Var, weights: Var) -> Result<Var> {
        let ly_t = tape.transpose(log_y)?;
        let per_class = tape.matmul(onehot, ly_t)?;
        let w = tape.mul(per_class, weights)?;
        Ok(tape.sum_all(w))
    }

    /// Unscaled hyper-prior log-density of the block's parameters.
    pub fn hyper_prior(&self, tape: &mut Tape, bound: &Bound) -> Result<Var> {
        let mut total = tape.scalar(0.0);
        for ids in &self.ids {
            let mu = bound.get(ids.mu);
            for k in 0..self.classes {
                let row = tape.index_select(mu, &[k])?;
                let lp = gaussian_prior_tape(tape, row, self.priors.mu_means[k], self.priors.mu_sd)?;
                total = tape.add(total, lp)?;
            }
            let sigma = tape.softplus(bound.get(ids.raw_sigma))?;
            let lp = gamma_prior_tape(tape, sigma, self.priors.sigma_shape, self.priors.sigma_rate)?;
            total = tape.add(total, lp)?;
        }
        Ok(total)
    }

    /// Predictive category probabilities `E[softmax(μ + σε)]`, tabulated by
    /// Monte Carlo with a fixed seed: `classes × Σ cards`.
    pub fn predictive(&self, store: &ParamStore) -> Tensor {
        let width = self.width();
        let mut out = vec![0.0; self.classes * width];
        let mut rng = RngStream::new(PREDICTIVE_SEED);
        let mut offset = 0;
        for (ids, &c) in self.ids.iter().zip(&self.cards) {
            let mu = store.get(ids.mu);
            let sigma: Vec<f64> = store.get(ids.raw_sigma).values().iter().map(|&r| softplus(r)).collect();
            let mut buf = vec![0.0; c];
            for k in 0..self.classes {
                let mrow = mu.row(k);
                let srow = &sigma[k * c..(k + 1) * c];
                let acc = &mut out[k * width + offset..k * width + offset + c];
                for _ in 0..PREDICTIVE_DRAWS {
                    for i in 0..c {
                        buf[i] = mrow[i] + srow[i] * rng.normal();
                    }
                    let mx = buf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = buf.iter().map(|v| (v - mx).exp()).sum();
                    for i in 0..c {
                        acc[i] += (buf[i] - mx).exp() / s / PREDICTIVE_DRAWS as f64;
                    }
                }
            }
            offset += c;
        }
        Tensor::from_parts(vec![self.classes, width], out)
    }
}

/// `log Σ_k exp(a_k)` of a slice.
pub fn logsumexp(a: &[f64]) -> f64 {
    let mx = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + a.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Row-wise softmax of a logits matrix.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.cols();
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.values().chunks(k) {
        let lse = logsumexp(row);
        out.extend(row.iter().map(|v| (v - lse).exp()));
    }
    Tensor::from_parts(logits.shape().to_vec(), out)
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn assign_hard(probs: &Tensor) -> Vec<usize> {
    let k = probs.cols();
    probs
        .values()
        .chunks(k)
        .map(|row| {
            row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_is_zero_for_uniform_and_positive_otherwise() {
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::zeros(&[3, 4]));
        let kl = kl_to_uniform(&mut tape, u).unwrap();
        assert!(tape.item(kl).abs() < 1e-12);
        let mut rng = RngStream::new(1);
        for _ in 0..50 {
            let l = tape.constant(rng.normal_tensor(&[2, 3]));
            let kl = kl_to_uniform(&mut tape, l).unwrap();
            assert!(tape.item(kl) > 0.0);
        }
    }

    #[test]
    fn softplus_inverse() {
        for y in [0.01, 0.5, 3.0, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-10);
        }
    }

    #[test]
    fn hard_assignment_ties_and_shift_invariance() {
        let p = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        assert_eq!(assign_hard(&p), vec![0, 1]);
        let logits = Tensor::from_rows(&[vec![10.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let probs = softmax_rows(&logits);
        assert!(probs.row(0)[0] > 0.999);
        assert!((probs.row(1)[2] - 1.0 / 3.0).abs() < 1e-12);
        for r in 0..2 {
            assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let shifted = softmax_rows(&logits.map(|v| v + 7.5));
        assert_eq!(assign_hard(&shifted), assign_hard(&probs));
    }

    #[test]
    fn predictive_collapses_to_softmax_at_small_scale() {
        let mut store = ParamStore::new();
        let mut priors = LogisticNormalPriors::standard(1);
        priors.sigma_shape = 1e-6;
        priors.sigma_rate = 1.0;
        let block = CategoricalBlock::new(&mut store, "b", 1, &[3], priors, &mut RngStream::new(2)).unwrap();
        let mu = store.get(store.find("b.0.mu").unwrap()).clone();
        let p = block.predictive(&store);
        let s = softmax_rows(&mu);
        for i in 0..3 {
            assert!((p.values()[i] - s.values()[i]).abs() < 1e-5);
        }
    }
}
