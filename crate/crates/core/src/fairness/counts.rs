use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Streaming expected counts per intersectional group.
///
/// `n_zs` is `|A|×K`; `n_s` has one entry per group. Updated once per
/// minibatch with a convex step of size `rho`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountState {
    n_zs: Tensor,
    n_s: Vec<f64>,
    rho: f64,
    population: usize,
}

/// Counts computed on a tape for the current minibatch, not yet committed.
#[derive(Debug, Clone, Copy)]
pub struct PendingCounts {
    pub n_zs: Var,
}

/// Pending `N_s` values travel separately since they carry no gradient.
#[derive(Debug, Clone)]
pub struct TapeCounts {
    pub pending: PendingCounts,
    pub n_s: Vec<f64>,
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain("update_counts", format!("step size {rho} outside (0, 1]")))
    }
}

impl CountState {
    pub fn new(num_groups: usize, k: usize, rho: f64, population: usize) -> Result<Self> {
        check_rho(rho)?;
        if num_groups == 0 || k == 0 || population == 0 {
            return Err(Error::Contract("count state needs groups, classes and a population".into()));
        }
        Ok(CountState {
            n_zs: Tensor::zeros(&[num_groups, k]),
            n_s: vec![0.0; num_groups],
            rho,
            population,
        })
    }

    pub fn n_zs(&self) -> &Tensor {
        &self.n_zs
    }

    pub fn n_s(&self) -> &[f64] {
        &self.n_s
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn num_classes(&self) -> usize {
        self.n_zs.cols()
    }

    fn check_batch(&self, shape: &[usize], groups: &[usize]) -> Result<(usize, usize)> {
        let (m, k) = match shape {
            [m, k] => (*m, *k),
            _ => return Err(Error::dim("update_counts", format!("responsibilities {shape:?}"))),
        };
        if m == 0 || m != groups.len() || k != self.num_classes() {
            return Err(Error::dim("update_counts", format!("{m} rows, {} ids, K={k}", groups.len())));
        }
        if let Some(&g) = groups.iter().find(|&&g| g >= self.n_s.len()) {
            return Err(Error::dim("update_counts", format!("group id {g}")));
        }
        Ok((m, k))
    }

    fn batch_group_sizes(&self, groups: &[usize]) -> Vec<f64> {
        let mut sizes = vec![0.0; self.n_s.len()];
        for &g in groups {
            sizes[g] += 1.0;
        }
        sizes
    }

    fn next_n_s(&self, groups: &[usize], m: usize) -> Vec<f64> {
        let w = self.rho * self.population as f64 / m as f64;
        self.n_s
            .iter()
            .zip(self.batch_group_sizes(groups))
            .map(|(old, hat)| (1.0 - self.rho) * old + w * hat)
            .collect()
    }

    /// Plain (gradient-free) update with the batch's responsibility rows.
    pub fn update(&mut self, responsibilities: &Tensor, groups: &[usize]) -> Result<()> {
        let (m, k) = self.check_batch(responsibilities.shape(), groups)?;
        let w = self.rho * self.population as f64 / m as f64;
        let mut hat = vec![0.0; self.n_s.len() * k];
        for (r, &g) in groups.iter().enumerate() {
            for (h, z) in hat[g * k..(g + 1) * k].iter_mut().zip(responsibilities.row(r)) {
                *h += z;
            }
        }
        self.n_s = self.next_n_s(groups, m);
        for (old, h) in self.n_zs.values_mut().iter_mut().zip(hat) {
            *old = (1.0 - self.rho) * *old + w * h;
        }
        Ok(())
    }

    /// The same update recorded on a tape. The decayed history enters as a
    /// constant; gradient reaches only the current batch's responsibilities.
    pub fn update_on_tape(&self, tape: &mut Tape, responsibilities: Var, groups: &[usize]) -> Result<TapeCounts> {
        let (m, _) = self.check_batch(tape.shape(responsibilities), groups)?;
        let a = self.n_s.len();
        let mut membership = vec![0.0; a * m];
        for (r, &g) in groups.iter().enumerate() {
            membership[g * m + r] = 1.0;
        }
        let membership = tape.constant(Tensor::from_parts(vec![a, m], membership));
        let hat = tape.matmul(membership, responsibilities)?;
        let hat = tape.scale(hat, self.rho * self.population as f64 / m as f64);
        let old = tape.constant(self.n_zs.clone());
        let old = tape.scale(old, 1.0 - self.rho);
        let n_zs = tape.add(old, hat)?;
        Ok(TapeCounts { pending: PendingCounts { n_zs }, n_s: self.next_n_s(groups, m) })
    }

    /// Stores the forward values of a tape update.
    pub fn commit(&mut self, tape: &Tape, counts: TapeCounts) {
        self.n_zs = tape.value(counts.pending.n_zs).clone();
        self.n_s = counts.n_s;
    }

    /// Groups with positive population.
    pub fn populated(&self) -> Vec<usize> {
        populated(&self.n_s)
    }
}

fn populated(n_s: &[f64]) -> Vec<usize> {
    n_s.iter().enumerate().filter(|(_, &n)| n > 0.0).map(|(i, _)| i).collect()
}

/// Differentiable ε-DF from group counts on a tape.
///
/// Enumerates `log p̂(z|s_i) − log p̂(z|s_j)` for every class and every
/// ordered pair of populated groups (class-major, pairs by ascending ids) and
/// takes the max, so gradient flows through the first maximizing entry.
pub fn epsilon_df_tape(tape: &mut Tape, n_zs: Var, n_s: &[f64], alpha: f64) -> Result<Var> {
    let shape = tape.shape(n_zs).to_vec();
    if shape.len() != 2 || shape[0] != n_s.len() {
        return Err(Error::dim("epsilon_df", format!("counts {shape:?} for {} groups", n_s.len())));
    }
    if !(alpha > 0.0) {
        return Err(Error::domain("epsilon_df", format!("alpha {alpha}")));
    }
    let k = shape[1];
    let live = populated(n_s);
    if live.len() < 2 {
        return Err(Error::Audit(format!("{} populated groups; ε-DF needs at least two", live.len())));
    }
    let denom: Vec<f64> = n_s.iter().map(|n| n + k as f64 * alpha).collect();
    let denom = tape.constant(Tensor::from_parts(vec![n_s.len(), 1], denom));
    let num = tape.add_scalar(n_zs, alpha);
    let p = tape.div(num, denom)?;
    let logp = tape.log(p)?;
    let mut left = Vec::with_capacity(live.len() * (live.len() - 1));
    let mut right = Vec::with_capacity(left.capacity());
    for &i in &live {
        for &j in &live {
            if i != j {
                left.push(i);
                right.push(j);
            }
        }
    }
    let li = tape.index_select(logp, &left)?;
    let rj = tape.index_select(logp, &right)?;
    let diff = tape.sub(li, rj)?;
    let by_class = tape.transpose(diff)?;
    Ok(tape.max_all(by_class))
}

/// ε-DF from plain counts: per class, the spread between the largest and
/// smallest smoothed log-probability over populated groups.
pub fn epsilon_df(n_zs: &Tensor, n_s: &[f64], alpha: f64) -> Result<f64> {
    if n_zs.shape().len() != 2 || n_zs.rows() != n_s.len() {
        return Err(Error::dim("epsilon_df", format!("counts {:?} for {} groups", n_zs.shape(), n_s.len())));
    }
    if !(alpha > 0.0) {
        return Err(Error::domain("epsilon_df", format!("alpha {alpha}")));
    }
    let k = n_zs.cols();
    let live = populated(n_s);
    if live.len() < 2 {
        return Err(Error::Audit(format!("{} populated groups; ε-DF needs at least two", live.len())));
    }
    let mut eps = 0.0f64;
    for z in 0..k {
        let logs = live.iter().map(|&g| {
            let p = (n_zs.row(g)[z] + alpha) / (n_s[g] + k as f64 * alpha);
            p.ln()
        });
        let (lo, hi) = logs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        eps = eps.max(hi - lo);
    }
    Ok(eps)
}

/// Hinge penalty `max(0, ε − ε₀)` on the tape.
pub fn fairness_penalty(tape: &mut Tape, eps: Var, eps0: f64) -> Result<Var> {
    let shifted = tape.add_scalar(eps, -eps0);
    tape.relu(shifted)
}

pub fn fairness_penalty_value(eps: f64, eps0: f64) -> f64 {
    (eps - eps0).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_group_counts() -> (Tensor, Vec<f64>) {
        (Tensor::new(vec![2, 2], vec![8.0, 2.0, 5.0, 5.0]).unwrap(), vec![10.0, 10.0])
    }

    #[test]
    fn two_group_example_is_ln2() {
        let (nz, ns) = two_group_counts();
        let e = epsilon_df(&nz, &ns, 1.0).unwrap();
        assert!((e - 2f64.ln()).abs() < 1e-12);
        let mut tape = Tape::new();
        let v = tape.constant(nz);
        let et = epsilon_df_tape(&mut tape, v, &ns, 1.0).unwrap();
        assert!((tape.item(et) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicate_group_leaves_epsilon() {
        let nz = Tensor::new(vec![3, 2], vec![8.0, 2.0, 5.0, 5.0, 5.0, 5.0]).unwrap();
        let e = epsilon_df(&nz, &[10.0, 10.0, 10.0], 1.0).unwrap();
        assert!((e - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identical_groups_are_fair_and_empty_groups_ignored() {
        let nz = Tensor::new(vec![3, 2], vec![3.0, 7.0, 0.0, 0.0, 3.0, 7.0]).unwrap();
        assert_eq!(epsilon_df(&nz, &[10.0, 0.0, 10.0], 1.0).unwrap(), 0.0);
        let one = Tensor::new(vec![2, 2], vec![3.0, 7.0, 0.0, 0.0]).unwrap();
        assert!(matches!(epsilon_df(&one, &[10.0, 0.0], 1.0), Err(Error::Audit(_))));
    }

    #[test]
    fn full_replacement_with_unit_step() {
        let mut st = CountState::new(2, 2, 1.0, 4).unwrap();
        let resp = Tensor::new(vec![4, 2], vec![0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 1.0, 0.0]).unwrap();
        st.update(&resp, &[0, 1, 1, 0]).unwrap();
        assert_eq!(st.n_s(), &[2.0, 2.0]);
        let expect = [1.9, 0.1, 0.7, 1.3];
        for (a, b) in st.n_zs().values().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn half_step_arithmetic() {
        // n/m = 5: 0.5·10 + 0.5·5·2 = 10.
        let mut st = CountState::new(2, 2, 0.5, 20).unwrap();
        st.n_s = vec![10.0, 4.0];
        st.n_zs = Tensor::new(vec![2, 2], vec![6.0, 4.0, 2.0, 2.0]).unwrap();
        let resp = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
        st.update(&resp, &[0, 0, 1, 1]).unwrap();
        assert_eq!(st.n_s()[0], 10.0);
        // Absent groups decay by (1 − ρ).
        let mut st2 = CountState::new(2, 2, 0.5, 20).unwrap();
        st2.n_s = vec![10.0, 4.0];
        st2.n_zs = Tensor::new(vec![2, 2], vec![6.0, 4.0, 2.0, 2.0]).unwrap();
        st2.update(&resp, &[0, 0, 0, 0]).unwrap();
        assert_eq!(st2.n_s()[1], 2.0);
        assert_eq!(st2.n_zs().row(1), &[1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_step_size() {
        assert!(CountState::new(2, 2, 0.0, 10).is_err());
        assert!(CountState::new(2, 2, 1.5, 10).is_err());
    }

    #[test]
    fn tape_update_matches_plain_update() {
        let resp = Tensor::new(vec![3, 2], vec![0.3, 0.7, 0.6, 0.4, 0.1, 0.9]).unwrap();
        let groups = [2, 0, 2];
        let mut plain = CountState::new(3, 2, 0.3, 30).unwrap();
        plain.update(&resp, &[0, 1, 2]).unwrap();
        let mut taped = plain.clone();
        plain.update(&resp, &groups).unwrap();
        let mut tape = Tape::new();
        let r = tape.param(resp);
        let c = taped.update_on_tape(&mut tape, r, &groups).unwrap();
        taped.commit(&tape, c);
        assert_eq!(plain.n_s(), taped.n_s());
        for (a, b) in plain.n_zs().values().iter().zip(taped.n_zs().values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hinge_penalty() {
        assert_eq!(fairness_penalty_value(std::f64::consts::LN_2, 0.0), std::f64::consts::LN_2);
        assert_eq!(fairness_penalty_value(0.3, 0.5), 0.0);
        assert_eq!(fairness_penalty_value(0.0, 0.0), 0.0);
        let mut tape = Tape::new();
        let e = tape.param(Tensor::scalar(0.3));
        let f = fairness_penalty(&mut tape, e, 0.5).unwrap();
        assert_eq!(tape.item(f), 0.0);
        assert_eq!(tape.backward(f).unwrap().wrt(e).item(), 0.0);
    }
}
