use serde::{Deserialize, Serialize};

use super::counts::epsilon_df;
use super::groups::GroupIndex;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Default Dirichlet smoothing for audits (add-one).
pub const DEFAULT_AUDIT_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAudit {
    pub name: String,
    /// Largest gap in class probability between two values of the attribute.
    pub delta_dp: f64,
    /// `100 · min P(z=k|a) / P(z=k|b)` over classes and ordered value pairs.
    pub p_rule: f64,
    /// Smoothed ε-DF over this attribute alone.
    pub epsilon_df: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub id: usize,
    pub label: String,
    pub count: usize,
}

/// Full audit of one set of hard assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub alpha: f64,
    pub num_individuals: usize,
    pub num_classes: usize,
    pub epsilon_df: f64,
    pub gamma_sf: f64,
    pub attributes: Vec<AttributeAudit>,
    /// Mean of the per-attribute δ-DP values.
    pub overall_delta_dp: f64,
    pub groups: Vec<GroupSummary>,
    pub warnings: Vec<String>,
}

/// Hard-assignment contingency table: `table[g][k]` counts.
pub fn contingency(assignments: &[usize], k: usize, group_ids: &[usize], num_groups: usize) -> Result<Vec<Vec<usize>>> {
    if assignments.len() != group_ids.len() {
        return Err(Error::dim("audit", format!("{} assignments, {} group ids", assignments.len(), group_ids.len())));
    }
    let mut table = vec![vec![0usize; k]; num_groups];
    for (&z, &g) in assignments.iter().zip(group_ids) {
        if z >= k {
            return Err(Error::dim("audit", format!("class {z} with K={k}")));
        }
        if g >= num_groups {
            return Err(Error::dim("audit", format!("group id {g} with {num_groups} groups")));
        }
        table[g][z] += 1;
    }
    Ok(table)
}

fn counts_tensor(table: &[Vec<usize>]) -> (Tensor, Vec<f64>) {
    let k = table[0].len();
    let values = table.iter().flat_map(|r| r.iter().map(|&c| c as f64)).collect();
    let n_s = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    (Tensor::from_parts(vec![table.len(), k], values), n_s)
}

/// Unsmoothed δ-DP and p%-Rule over the rows of a table.
fn parity(table: &[Vec<usize>], name: &str, warnings: &mut Vec<String>) -> (f64, f64) {
    let k = table[0].len();
    let live: Vec<&Vec<usize>> = table.iter().filter(|r| r.iter().sum::<usize>() > 0).collect();
    let probs: Vec<Vec<f64>> = live
        .iter()
        .map(|r| {
            let n = r.iter().sum::<usize>() as f64;
            r.iter().map(|&c| c as f64 / n).collect()
        })
        .collect();
    let mut delta = 0.0f64;
    let mut ratio = 1.0f64;
    let mut empty_cells = false;
    for z in 0..k {
        for (i, pi) in probs.iter().enumerate() {
            for (j, pj) in probs.iter().enumerate() {
                if i == j {
                    continue;
                }
                delta = delta.max((pi[z] - pj[z]).abs());
                if pj[z] > 0.0 {
                    ratio = ratio.min(pi[z] / pj[z]);
                } else {
                    empty_cells = true;
                }
            }
        }
    }
    if empty_cells {
        warnings.push(format!("{name}: some classes are empty in some groups; p%-Rule may be degenerate"));
    }
    (delta, 100.0 * ratio)
}

/// Audits hard class assignments against intersectional groups.
///
/// ε-DF is smoothed with `alpha`; δ-DP, p%-Rule and γ-SF use raw
/// frequencies and emit warnings when sparsity makes them degenerate.
pub fn audit_metrics(
    assignments: &[usize],
    k: usize,
    group_ids: &[usize],
    index: &GroupIndex,
    alpha: f64,
) -> Result<AuditReport> {
    if assignments.is_empty() {
        return Err(Error::Audit("no individuals to audit".into()));
    }
    if k == 0 {
        return Err(Error::Audit("no classes".into()));
    }
    let num_groups = index.num_groups();
    let table = contingency(assignments, k, group_ids, num_groups)?;
    let mut warnings = Vec::new();

    let empty: Vec<String> = (0..num_groups)
        .filter(|&g| table[g].iter().sum::<usize>() == 0)
        .map(|g| index.group_label(g))
        .collect();
    if !empty.is_empty() {
        warnings.push(format!("{} empty intersectional groups excluded: {}", empty.len(), empty.join("; ")));
    }

    let (n_zs, n_s) = counts_tensor(&table);
    let eps = epsilon_df(&n_zs, &n_s, alpha)?;

    let n = assignments.len() as f64;
    let mut overall = vec![0.0; k];
    for &z in assignments {
        overall[z] += 1.0 / n;
    }
    let mut gamma = 0.0f64;
    for row in &table {
        let ng = row.iter().sum::<usize>() as f64;
        if ng == 0.0 {
            continue;
        }
        for z in 0..k {
            gamma = gamma.max(ng / n * (overall[z] - row[z] as f64 / ng).abs());
        }
    }

    let mut attributes = Vec::with_capacity(index.attributes().len());
    for (a, name) in index.attributes().iter().enumerate() {
        let mut marg = vec![vec![0usize; k]; index.labels(a).len()];
        for (g, row) in table.iter().enumerate() {
            let v = index.codes_of(g)[a];
            for z in 0..k {
                marg[v][z] += row[z];
            }
        }
        let (delta_dp, p_rule) = parity(&marg, name, &mut warnings);
        let (mz, ms) = counts_tensor(&marg);
        let epsilon_df = match epsilon_df(&mz, &ms, alpha) {
            Ok(e) => e,
            Err(Error::Audit(msg)) => {
                warnings.push(format!("{name}: {msg}"));
                0.0
            }
            Err(e) => return Err(e),
        };
        attributes.push(AttributeAudit { name: name.clone(), delta_dp, p_rule, epsilon_df });
    }
    let overall_delta_dp = attributes.iter().map(|a| a.delta_dp).sum::<f64>() / attributes.len() as f64;

    let groups = table
        .iter()
        .enumerate()
        .map(|(id, row)| GroupSummary { id, label: index.group_label(id), count: row.iter().sum() })
        .collect();

    Ok(AuditReport {
        alpha,
        num_individuals: assignments.len(),
        num_classes: k,
        epsilon_df: eps,
        gamma_sf: gamma,
        attributes,
        overall_delta_dp,
        groups,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_attr(values: &[&str]) -> GroupIndex {
        GroupIndex::from_vocabularies(vec!["s".into()], vec![values.iter().map(|v| v.to_string()).collect()]).unwrap()
    }

    #[test]
    fn two_group_table() {
        // Group 0: [0.75, 0.25]; group 1: [0.5, 0.5].
        let z = [0, 0, 0, 1, 0, 1, 0, 1];
        let g = [0, 0, 0, 0, 1, 1, 1, 1];
        let r = audit_metrics(&z, 2, &g, &one_attr(&["a", "b"]), 1.0).unwrap();
        assert!((r.attributes[0].delta_dp - 0.25).abs() < 1e-12);
        assert!((r.attributes[0].p_rule - 50.0).abs() < 1e-12);
        assert!((r.overall_delta_dp - 0.25).abs() < 1e-12);
        // P(g) = 0.5, P(z=0) = 0.625: 0.5 · 0.125.
        assert!((r.gamma_sf - 0.0625).abs() < 1e-12);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn identical_groups_are_perfectly_fair() {
        let z = [0, 1, 2, 0, 1, 2];
        let g = [0, 0, 0, 1, 1, 1];
        let r = audit_metrics(&z, 3, &g, &one_attr(&["a", "b"]), 1.0).unwrap();
        assert_eq!(r.epsilon_df, 0.0);
        assert_eq!(r.gamma_sf, 0.0);
        assert_eq!(r.attributes[0].delta_dp, 0.0);
        assert_eq!(r.attributes[0].p_rule, 100.0);
    }

    #[test]
    fn sparse_cells_warn() {
        let z = [0, 0, 1, 1];
        let g = [0, 0, 1, 1];
        let r = audit_metrics(&z, 2, &g, &one_attr(&["a", "b", "c"]), 1.0).unwrap();
        assert_eq!(r.attributes[0].p_rule, 0.0);
        assert!(r.warnings.iter().any(|w| w.contains("empty intersectional")));
        assert!(r.warnings.iter().any(|w| w.contains("p%-Rule")));
        assert!(r.epsilon_df.is_finite());
    }

    #[test]
    fn rejects_out_of_range_inputs() {
        let idx = one_attr(&["a", "b"]);
        assert!(audit_metrics(&[2], 2, &[0], &idx, 1.0).is_err());
        assert!(audit_metrics(&[0], 2, &[5], &idx, 1.0).is_err());
        assert!(matches!(audit_metrics(&[0, 1], 2, &[0, 0], &idx, 1.0), Err(Error::Audit(_))));
    }

    #[test]
    fn report_serializes() {
        let z = [0, 1, 0, 1];
        let g = [0, 1, 2, 3];
        let idx = GroupIndex::from_vocabularies(
            vec!["x".into(), "y".into()],
            vec![vec!["0".into(), "1".into()], vec!["0".into(), "1".into()]],
        )
        .unwrap();
        let r = audit_metrics(&z, 2, &g, &idx, 1.0).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        let back: AuditReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.attributes.len(), 2);
        assert_eq!(r.groups[3].label, "x=1,y=1");
    }
}
