use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Value reported for Calinski-Harabasz when every cluster has zero scatter.
pub const CH_SENTINEL: f64 = 1e12;
/// Quantile bins used to discretize continuous variables for MI.
pub const MI_BINS: usize = 10;

/// Plug-in mutual information (nats) between two discrete variables.
pub fn plugin_mi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("mutual_information", format!("{} vs {} values", a.len(), b.len())));
    }
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; ka * kb];
    let mut pa = vec![0usize; ka];
    let mut pb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        pa[x] += 1;
        pb[y] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (c * nf / (pa[x] as f64 * pb[y] as f64)).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Bin index of each value among `bins` equal-frequency bins. Cut points
/// are the empirical quantiles `i / bins`; repeated cut points merge bins,
/// so a constant variable lands in a single bin.
pub fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..bins).map(|i| sorted[(i * n / bins).min(n.saturating_sub(1))]).collect();
    cuts.dedup();
    values.iter().map(|v| cuts.partition_point(|c| c <= v)).collect()
}

/// Centroids and sizes of `k` clusters; errors on an empty cluster.
fn centroids(points: &Tensor, assignments: &[usize], k: usize, metric: &str) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if points.shape().len() != 2 || points.rows() != assignments.len() {
        return Err(Error::dim("clustering", format!("{metric}: points {:?}, {} assignments", points.shape(), assignments.len())));
    }
    let d = points.cols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut sizes = vec![0usize; k];
    for (r, &z) in assignments.iter().enumerate() {
        if z >= k {
            return Err(Error::Metric(format!("{metric}: class {z} with K={k}")));
        }
        sizes[z] += 1;
        sums[z].iter_mut().zip(points.row(r)).for_each(|(s, x)| *s += x);
    }
    if k < 2 {
        return Err(Error::Metric(format!("{metric} needs at least two clusters")));
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Metric(format!("{metric}: cluster {empty} is empty")));
    }
    for (s, &c) in sums.iter_mut().zip(&sizes) {
        s.iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok((sums, sizes))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Calinski-Harabasz score and whether it is the zero-scatter sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChScore {
    pub value: f64,
    pub degenerate: bool,
}

/// `[B / (K − 1)] / [W / (n − K)]` with between- and within-cluster sums of
/// squares `B` and `W`.
pub fn calinski_harabasz(points: &Tensor, assignments: &[usize], k: usize) -> Result<ChScore> {
    let (cents, sizes) = centroids(points, assignments, k, "calinski_harabasz")?;
    let n = assignments.len();
    if n <= k {
        return Err(Error::Metric(format!("calinski_harabasz needs more than {k} points")));
    }
    let d = points.cols();
    let mut grand = vec![0.0; d];
    for r in 0..n {
        grand.iter_mut().zip(points.row(r)).for_each(|(g, x)| *g += x / n as f64);
    }
    let between: f64 = cents.iter().zip(&sizes).map(|(c, &s)| s as f64 * sq_dist(c, &grand)).sum();
    let within: f64 = assignments.iter().enumerate().map(|(r, &z)| sq_dist(points.row(r), &cents[z])).sum();
    if within == 0.0 {
        return Ok(ChScore { value: CH_SENTINEL, degenerate: true });
    }
    Ok(ChScore { value: (between / (k - 1) as f64) / (within / (n - k) as f64), degenerate: false })
}

/// Mean over clusters of `max_{j≠i} (s_i + s_j) / d(c_i, c_j)`, with `s_i`
/// the mean distance of cluster members to their centroid.
pub fn davies_bouldin(points: &Tensor, assignments: &[usize], k: usize) -> Result<f64> {
    let (cents, sizes) = centroids(points, assignments, k, "davies_bouldin")?;
    let mut scatter = vec![0.0; k];
    for (r, &z) in assignments.iter().enumerate() {
        scatter[z] += sq_dist(points.row(r), &cents[z]).sqrt() / sizes[z] as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in (0..k).filter(|&j| j != i) {
            let d = sq_dist(&cents[i], &cents[j]).sqrt();
            if d == 0.0 {
                return Err(Error::Metric(format!("davies_bouldin: clusters {i} and {j} share a centroid")));
            }
            worst = worst.max((scatter[i] + scatter[j]) / d);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub mse: f64,
    /// `1 − SS_res / SS_tot`; `None` when the observations are constant.
    pub r2: Option<f64>,
}

pub fn regression_metrics(predicted: &[f64], observed: &[f64]) -> Result<RegressionMetrics> {
    if predicted.len() != observed.len() || observed.is_empty() {
        return Err(Error::dim("regression_metrics", format!("{} predictions, {} observations", predicted.len(), observed.len())));
    }
    let n = observed.len() as f64;
    let mae = predicted.iter().zip(observed).map(|(p, o)| (p - o).abs()).sum::<f64>() / n;
    let ss_res: f64 = predicted.iter().zip(observed).map(|(p, o)| (p - o) * (p - o)).sum();
    let mean = observed.iter().sum::<f64>() / n;
    let ss_tot: f64 = observed.iter().map(|o| (o - mean) * (o - mean)).sum();
    let r2 = (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(RegressionMetrics { mae, mse: ss_res / n, r2 })
}
