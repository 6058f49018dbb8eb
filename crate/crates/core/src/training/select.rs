use serde::{Deserialize, Serialize};

use super::trainer::TrialResult;
use crate::error::{Error, Result};

/// Outcome of fair-model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best_vanilla_ll: f64,
    pub slack: f64,
    /// `best_vanilla_ll − slack · |best_vanilla_ll|`.
    pub threshold: f64,
    /// Indices of fair trials with dev LL at or above the threshold.
    pub eligible: Vec<usize>,
    /// Index of the selected fair trial.
    pub winner: usize,
    /// No fair trial was eligible; the winner is the one with maximal dev LL.
    pub fallback: bool,
}

/// Minimal dev ε-DF among fair trials whose dev log-likelihood is within
/// `slack · |best|` of the best vanilla model. Ties go to the earliest trial.
pub fn select_fair_model(best_vanilla: &TrialResult, fair: &[TrialResult], slack: f64) -> Result<Selection> {
    let best = best_vanilla.dev_ll;
    if !best.is_finite() {
        return Err(Error::Contract(format!("best vanilla dev LL {best} is not finite")));
    }
    if !(0.0..1.0).contains(&slack) {
        return Err(Error::Config(format!("slack {slack} outside [0, 1)")));
    }
    if fair.is_empty() {
        return Err(Error::Contract("no fair trials to select from".into()));
    }
    let threshold = best - slack * best.abs();
    let eligible: Vec<usize> = (0..fair.len()).filter(|&i| fair[i].dev_ll >= threshold).collect();
    let pick = |idx: &mut dyn Iterator<Item = usize>, key: &dyn Fn(usize) -> f64| {
        idx.fold(None, |best: Option<usize>, i| match best {
            Some(b) if key(b) <= key(i) => Some(b),
            _ => Some(i),
        })
    };
    let (winner, fallback) = match pick(&mut eligible.iter().copied(), &|i| fair[i].dev_epsilon) {
        Some(w) => (w, false),
        None => (pick(&mut (0..fair.len()), &|i| -fair[i].dev_ll).expect("nonempty"), true),
    };
    Ok(Selection { best_vanilla_ll: best, slack, threshold, eligible, winner, fallback })
}
