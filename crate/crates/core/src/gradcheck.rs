//! Central finite-difference gradient checking.
//!
//! Used by the test suites to compare [`Tape::backward`] against numerical
//! derivatives. The objective closure must be deterministic: anything random
//! inside it has to be re-seeded on every call (frozen noise).

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Denominator floor, so entries with gradients near zero are compared in
/// absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks every element of every input with step `h`.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.param(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.item(root))
    };

    let mut out = GradCheck { max_rel_err: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let x0 = input.values()[j];
            work[i].values_mut()[j] = x0 + h;
            let fp = eval(&work)?;
            work[i].values_mut()[j] = x0 - h;
            let fm = eval(&work)?;
            work[i].values_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i].values()[j];
            let e = relative_error(a, numeric);
            if e > out.max_rel_err || !e.is_finite() {
                out = GradCheck { max_rel_err: e, worst: (i, j), analytic: a, numeric };
            }
        }
    }
    Ok(out)
}
