use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::autodiff::{adam_step, AdamState, ParamId, Tape, Tensor, Var};
use crate::data::Dataset;
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::fairness::{audit_metrics, epsilon_df_tape, fairness_penalty, CountState, DEFAULT_AUDIT_ALPHA};
use crate::models::{check_finite, fair_objective, ElboCtx, Inputs, Model, ModelConfig, ModelKind};

/// Mean probability of the most popular class above which a model counts
/// as collapsed.
pub const COLLAPSE_SHARE: f64 = 0.98;

/// Stream ids derived from the trial seed.
const STREAM_INIT: u64 = 0;
const STREAM_WARM: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// One row of the per-epoch trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch objective over the epoch.
    pub objective: f64,
    /// Dev ε-DF of hard assignments after the epoch.
    pub epsilon: f64,
    /// Dev average log-likelihood after the epoch.
    pub dev_ll: f64,
}

/// Outcome of the SP warm start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartReport {
    pub epochs: usize,
    /// Mean warm-start log-likelihood per row in the last epoch.
    pub final_objective: f64,
    /// Mean prior-network class probabilities over dev rows.
    pub prior_class_shares: Vec<f64>,
}

/// Summary of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub kind: ModelKind,
    pub config: TrainConfig,
    pub dev_ll: f64,
    pub dev_epsilon: f64,
    pub dev_delta_dp: f64,
    /// Mean `q(z = k | ·)` over dev rows.
    pub class_shares: Vec<f64>,
    /// Where the trained parameters were written, if anywhere.
    pub checkpoint: Option<PathBuf>,
    pub trace: Vec<EpochRecord>,
    pub warm_start: Option<WarmStartReport>,
}

impl TrialResult {
    pub fn max_class_share(&self) -> f64 {
        self.class_shares.iter().cloned().fold(0.0, f64::max)
    }

    pub fn collapsed(&self) -> bool {
        self.max_class_share() > COLLAPSE_SHARE
    }
}

/// A finished run together with its trained model.
#[derive(Debug, Clone)]
pub struct Trial {
    pub result: TrialResult,
    pub model: Model,
}

/// Dev-split metrics of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct DevMetrics {
    pub ll: f64,
    pub epsilon: f64,
    pub delta_dp: f64,
    pub class_shares: Vec<f64>,
}

pub fn dev_metrics(model: &Model, x: &Inputs, ds: &Dataset) -> Result<DevMetrics> {
    let ll = model.log_evidence(x)?;
    let ll = ll.iter().sum::<f64>() / ll.len().max(1) as f64;
    let post = model.posterior(x)?;
    let k = model.k();
    let assignments = crate::models::assign_hard(&post);
    let audit = audit_metrics(&assignments, k, &ds.group_ids, &ds.groups, DEFAULT_AUDIT_ALPHA)?;
    Ok(DevMetrics {
        ll,
        epsilon: audit.epsilon_df,
        delta_dp: audit.overall_delta_dp,
        class_shares: class_shares(&post),
    })
}

/// Column means of a probability matrix.
pub fn class_shares(probs: &Tensor) -> Vec<f64> {
    let (n, k) = (probs.rows(), probs.cols());
    let mut s = vec![0.0; k];
    for row in probs.values().chunks(k) {
        s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    s.iter().map(|v| v / n.max(1) as f64).collect()
}

/// Trains a fresh model on `train`, reporting on `dev`.
pub fn train(model_cfg: &ModelConfig, train: &Dataset, dev: &Dataset, cfg: &TrainConfig) -> Result<Trial> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Data("train and dev splits must be nonempty".into()));
    }
    let root = RngStream::new(cfg.seed);
    let mut model = Model::from_data(model_cfg, &cfg.net(), train, &mut root.derive(STREAM_INIT))?;
    let train_x = model.inputs(train)?;
    let dev_x = model.inputs(dev)?;
    let warm = if model.kind() == ModelKind::Sp && cfg.warm_start {
        Some(warm_start_sp(&mut model, &train_x, &dev_x, cfg, &mut root.derive(STREAM_WARM))?)
    } else {
        None
    };
    let trace = run_epochs(&mut model, &train_x, &train.group_ids, train.groups.num_groups(), &dev_x, dev, cfg, &root)?;
    let m = dev_metrics(&model, &dev_x, dev)?;
    log::debug!("trial seed={} lambda={} dev_ll={:.4} dev_eps={:.4}", cfg.seed, cfg.lambda, m.ll, m.epsilon);
    let result = TrialResult {
        kind: model.kind(),
        config: cfg.clone(),
        dev_ll: m.ll,
        dev_epsilon: m.epsilon,
        dev_delta_dp: m.delta_dp,
        class_shares: m.class_shares,
        checkpoint: None,
        trace,
        warm_start: warm,
    };
    Ok(Trial { result, model })
}

fn minibatches(n: usize, m: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(m).map(<[usize]>::to_vec).collect()
}

fn l2_term(tape: &mut Tape, vars: &[Var], weight: f64) -> Result<Option<Var>> {
    if weight == 0.0 || vars.is_empty() {
        return Ok(None);
    }
    let mut total = tape.scalar(0.0);
    for &w in vars {
        let sq = tape.square(w)?;
        let s = tape.sum_all(sq);
        total = tape.add(total, s)?;
    }
    Ok(Some(tape.scale(total, weight)))
}

#[allow(clippy::too_many_arguments)]
/// After an update, a domain error (e.g. a scale underflowing to zero) means
/// the parameters left the usable region.
fn diverged(e: Error, step: u64) -> Error {
    match e {
        Error::Domain { op, detail } if step > 0 => Error::Divergence { term: format!("{op} ({detail})") },
        e => e,
    }
}

fn run_epochs(
    model: &mut Model,
    train_x: &Inputs,
    group_ids: &[usize],
    num_groups: usize,
    dev_x: &Inputs,
    dev: &Dataset,
    cfg: &TrainConfig,
    root: &RngStream,
) -> Result<Vec<EpochRecord>> {
    let n = train_x.len();
    let mut counts = CountState::new(num_groups, model.k(), cfg.count_step, n)?;
    let mut adam = AdamState::new(model.store(), cfg.learning_rate);
    let mut shuffle_rng = root.derive(STREAM_SHUFFLE);
    let mut noise_rng = root.derive(STREAM_NOISE);
    let l2_ids: Vec<ParamId> = model.l2_weight_ids();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        let batches = minibatches(n, cfg.batch_size, &mut shuffle_rng);
        let mut obj_sum = 0.0;
        for batch in &batches {
            let x = train_x.select(batch);
            let groups: Vec<usize> = batch.iter().map(|&i| group_ids[i]).collect();
            let ctx = ElboCtx { tau: cfg.temperature(step), hyper_scale: batch.len() as f64 / n as f64, train: true };

            let mut tape = Tape::new();
            let bound = model.store().bind(&mut tape);
            let out = model.elbo(&mut tape, &bound, &x, &ctx, &mut noise_rng).map_err(|e| diverged(e, step))?;
            for (term, v) in [("reconstruction", out.recon), ("kl", out.kl), ("hyper-prior", out.hyper)] {
                check_finite(&tape, v, term)?;
            }

            let mut pending = None;
            let mut penalty = None;
            if cfg.track_counts {
                let tc = counts.update_on_tape(&mut tape, out.z, &groups)?;
                let populated = tc.n_s.iter().filter(|&&v| v > 0.0).count();
                if cfg.lambda != 0.0 && populated >= 2 {
                    let eps = epsilon_df_tape(&mut tape, tc.pending.n_zs, &tc.n_s, cfg.alpha)?;
                    let f = fairness_penalty(&mut tape, eps, cfg.epsilon0)?;
                    check_finite(&tape, f, "fairness penalty")?;
                    penalty = Some(f);
                }
                pending = Some(tc);
            }
            let mut obj = fair_objective(&mut tape, out.total, penalty, cfg.lambda, batch.len())?;
            let weights: Vec<Var> = l2_ids.iter().map(|&id| bound.get(id)).collect();
            if let Some(reg) = l2_term(&mut tape, &weights, cfg.l2)? {
                obj = tape.add(obj, reg)?;
            }
            check_finite(&tape, obj, "objective")?;
            obj_sum += tape.item(obj);

            let grads = tape.backward(obj)?;
            let g = model.store().collect_grads(&bound, &grads);
            adam_step(model.store_mut(), &g, &mut adam)?;
            if let Some(tc) = pending {
                counts.commit(&tape, tc);
            }
            model.update_bn(&out.bn);
            step += 1;
        }
        let m = dev_metrics(model, dev_x, dev).map_err(|e| diverged(e, step))?;
        trace.push(EpochRecord { epoch, objective: obj_sum / batches.len() as f64, epsilon: m.epsilon, dev_ll: m.ll });
    }
    Ok(trace)
}

/// Stage one of the SP warm start: maximizes
/// `Σ_j log Σ_z p(z | x_z) N(t_j; β₀ + β_z[z], σ)` over the prior network
/// and the `z`-part of the regression only. Full training continues from
/// the result.
pub fn warm_start_sp(
    model: &mut Model,
    train_x: &Inputs,
    dev_x: &Inputs,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<WarmStartReport> {
    let sp = model.as_sp().ok_or_else(|| Error::Contract("warm start applies to the SP model only".into()))?.clone();
    let (Inputs::Sp(train_sp), Inputs::Sp(dev_sp)) = (train_x, dev_x) else {
        return Err(Error::Contract("warm start needs SP inputs".into()));
    };
    let ids = sp.warm_start_params();
    let active: Vec<bool> = model.store().ids().map(|id| ids.contains(&id)).collect();
    let mut adam = AdamState::new(model.store(), cfg.learning_rate);
    let n = train_sp.len();
    let mut final_objective = f64::NAN;
    for _ in 0..cfg.warm_start_epochs {
        let batches = minibatches(n, cfg.batch_size, rng);
        let mut total = 0.0;
        for batch in &batches {
            let x = train_sp.select(batch);
            let mut tape = Tape::new();
            let bound = model.store().bind(&mut tape);
            let ll = sp.warm_start_objective(&mut tape, &bound, &x, true, rng)?;
            total += tape.item(ll);
            let loss = tape.scale(ll, -1.0 / batch.len() as f64);
            let grads = tape.backward(loss)?;
            let mut g = model.store().collect_grads(&bound, &grads);
            for (grad, &on) in g.iter_mut().zip(&active) {
                if !on {
                    *grad = Tensor::zeros(grad.shape());
                }
            }
            adam_step(model.store_mut(), &g, &mut adam)?;
        }
        final_objective = total / n as f64;
    }
    let prior = sp.prior_probs(model.store(), dev_sp)?;
    Ok(WarmStartReport { epochs: cfg.warm_start_epochs, final_objective, prior_class_shares: class_shares(&prior) })
}
