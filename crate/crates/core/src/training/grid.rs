use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::select::{select_fair_model, Selection};
use super::trainer::{train, Trial, TrialResult};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{Activation, Model, ModelConfig};

/// Hyper-parameter values searched by the grid. Vanilla trials take the
/// cartesian product of every list except `lambda`; each combination is
/// run once per seed. The fair grid varies only `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub hidden: Vec<Vec<usize>>,
    pub batch_size: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub dropout: Vec<f64>,
    pub activation: Vec<Activation>,
    pub l2: Vec<f64>,
    pub seeds: Vec<u64>,
    pub lambda: Vec<f64>,
}

/// The standard λ grid for fair models.
pub const LAMBDA_GRID: [f64; 30] = [
    0.1, 0.2, 0.5, 0.8, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5, 8.5, 9.5, 10.0,
    15.0, 20.0, 25.0, 30.0, 50.0, 75.0, 100.0,
];

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            hidden: vec![vec![64, 64], vec![64, 32], vec![32, 16]],
            batch_size: vec![128, 256],
            learning_rate: vec![0.001, 0.002, 0.005],
            dropout: vec![0.1, 0.25],
            activation: vec![Activation::Relu, Activation::Softplus],
            l2: vec![1e-3, 1e-4],
            seeds: vec![0],
            lambda: LAMBDA_GRID.to_vec(),
        }
    }
}

impl GridSpec {
    /// A grid that only varies the seed and λ, everything else from `base`.
    pub fn single(base: &TrainConfig, seeds: Vec<u64>, lambda: Vec<f64>) -> Self {
        GridSpec {
            hidden: vec![base.hidden.clone()],
            batch_size: vec![base.batch_size],
            learning_rate: vec![base.learning_rate],
            dropout: vec![base.dropout],
            activation: vec![base.activation],
            l2: vec![base.l2],
            seeds,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("hidden", self.hidden.is_empty()),
            ("batch_size", self.batch_size.is_empty()),
            ("learning_rate", self.learning_rate.is_empty()),
            ("dropout", self.dropout.is_empty()),
            ("activation", self.activation.is_empty()),
            ("l2", self.l2.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("lambda", self.lambda.is_empty()),
        ];
        match empty.iter().find(|(_, e)| *e) {
            Some((name, _)) => Err(Error::Config(format!("grid list {name} is empty"))),
            None => Ok(()),
        }
    }

    /// Vanilla configurations (`λ = 0`), one per combination and seed.
    pub fn vanilla_configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for hidden in &self.hidden {
            for &batch_size in &self.batch_size {
                for &learning_rate in &self.learning_rate {
                    for &dropout in &self.dropout {
                        for &activation in &self.activation {
                            for &l2 in &self.l2 {
                                for &seed in &self.seeds {
                                    out.push(TrainConfig {
                                        hidden: hidden.clone(),
                                        batch_size,
                                        learning_rate,
                                        dropout,
                                        activation,
                                        l2,
                                        seed,
                                        lambda: 0.0,
                                        ..base.clone()
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Fair configurations: the vanilla winner verbatim, one per λ.
    pub fn fair_configs(&self, vanilla_winner: &TrainConfig) -> Vec<TrainConfig> {
        self.lambda.iter().map(|&lambda| TrainConfig { lambda, ..vanilla_winner.clone() }).collect()
    }
}

/// Runs independent trials on at most `workers` threads (all cores when
/// zero). Results are in input order.
pub fn run_trials(
    model_cfg: &ModelConfig,
    train_ds: &Dataset,
    dev: &Dataset,
    configs: &[TrainConfig],
    workers: usize,
) -> Result<Vec<Result<Trial>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| configs.par_iter().map(|cfg| train(model_cfg, train_ds, dev, cfg)).collect()))
}

/// Index of the trial with the largest finite dev LL; ties go to the
/// earliest.
pub fn best_restart(results: &[TrialResult]) -> Option<usize> {
    best_index(results.iter().map(|r| Some(r.dev_ll)))
}

fn best_index(lls: impl Iterator<Item = Option<f64>>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, ll) in lls.enumerate() {
        if let Some(ll) = ll.filter(|v| v.is_finite()) {
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some((i, ll));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn best_by_ll(trials: &[Result<Trial>]) -> Option<usize> {
    best_index(trials.iter().map(|t| t.as_ref().ok().map(|t| t.result.dev_ll)))
}

fn all_failed(trials: Vec<Result<Trial>>) -> Error {
    let count = trials.len();
    let first = trials.into_iter().find_map(|t| t.err()).map_or_else(|| "no finite dev LL".to_string(), |e| e.to_string());
    Error::AllTrialsFailed { count, first }
}

/// Trains `cfg` once per seed and keeps the run with the best dev LL.
pub fn random_restarts(
    model_cfg: &ModelConfig,
    train_ds: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
    seeds: &[u64],
    workers: usize,
) -> Result<Trial> {
    if seeds.is_empty() {
        return Err(Error::Config("random restarts need at least one seed".into()));
    }
    let configs: Vec<TrainConfig> = seeds.iter().map(|&seed| TrainConfig { seed, ..cfg.clone() }).collect();
    let mut trials = run_trials(model_cfg, train_ds, dev, &configs, workers)?;
    match best_by_ll(&trials) {
        Some(i) => Ok(trials.swap_remove(i).expect("selected trial succeeded")),
        None => Err(all_failed(trials)),
    }
}

/// Vanilla grid, λ-only fair grid and the selection between them.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    /// Every successful vanilla run (all seeds).
    pub vanilla: Vec<TrialResult>,
    pub best_vanilla: usize,
    pub fair: Vec<TrialResult>,
    pub selection: Selection,
    pub best_vanilla_model: Model,
    pub fair_model: Model,
    /// Runs that failed, with their error messages.
    pub failures: Vec<(TrainConfig, String)>,
}

impl GridOutcome {
    pub fn best_vanilla_result(&self) -> &TrialResult {
        &self.vanilla[self.best_vanilla]
    }

    pub fn selected_fair(&self) -> &TrialResult {
        &self.fair[self.selection.winner]
    }
}

fn split_failures(configs: &[TrainConfig], trials: Vec<Result<Trial>>) -> (Vec<Trial>, Vec<(TrainConfig, String)>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (cfg, t) in configs.iter().zip(trials) {
        match t {
            Ok(t) => ok.push(t),
            Err(e) => {
                log::warn!("trial seed={} lambda={} failed: {e}", cfg.seed, cfg.lambda);
                failed.push((cfg.clone(), e.to_string()));
            }
        }
    }
    (ok, failed)
}

/// Full selection pipeline: grid over architecture and optimizer settings
/// (with restarts over seeds) for the vanilla model, then the fair model
/// with the vanilla winner's settings and seed over λ only, then
/// slack-tolerance selection.
pub fn fair_grid_search(
    model_cfg: &ModelConfig,
    train_ds: &Dataset,
    dev: &Dataset,
    base: &TrainConfig,
    grid: &GridSpec,
    workers: usize,
) -> Result<GridOutcome> {
    grid.validate()?;
    base.validate()?;
    let vanilla_cfgs = grid.vanilla_configs(base);
    let trials = run_trials(model_cfg, train_ds, dev, &vanilla_cfgs, workers)?;
    let Some(best) = best_by_ll(&trials) else {
        return Err(all_failed(trials));
    };
    let best_cfg = vanilla_cfgs[best].clone();
    let best_vanilla = trials[..best].iter().filter(|t| t.is_ok()).count();
    let (vanilla, mut failures) = split_failures(&vanilla_cfgs, trials);

    let fair_cfgs = grid.fair_configs(&best_cfg);
    let fair_trials = run_trials(model_cfg, train_ds, dev, &fair_cfgs, workers)?;
    if fair_trials.iter().all(|t| t.is_err()) {
        return Err(all_failed(fair_trials));
    }
    let (fair, fair_failures) = split_failures(&fair_cfgs, fair_trials);
    failures.extend(fair_failures);

    let vanilla_results: Vec<TrialResult> = vanilla.iter().map(|t| t.result.clone()).collect();
    let fair_results: Vec<TrialResult> = fair.iter().map(|t| t.result.clone()).collect();
    let selection = select_fair_model(&vanilla_results[best_vanilla], &fair_results, base.slack)?;
    let best_vanilla_model = vanilla[best_vanilla].model.clone();
    let fair_model = fair[selection.winner].model.clone();
    Ok(GridOutcome {
        vanilla: vanilla_results,
        best_vanilla,
        fair: fair_results,
        selection,
        best_vanilla_model,
        fair_model,
        failures,
    })
}
