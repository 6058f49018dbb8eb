use crate::autodiff::Tensor;
use crate::distributions::RngStream;
use crate::error::{Error, Result};

/// Default iteration count for prior construction.
pub const KMEANS_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `k × d` cluster centers.
    pub centers: Tensor,
    pub assignments: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(x, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Lloyd's algorithm with k-means++ seeding and a fixed iteration count.
/// A cluster that empties keeps its previous center.
pub fn kmeans(points: &Tensor, k: usize, iters: usize, rng: &mut RngStream) -> Result<KMeans> {
    if points.shape().len() != 2 {
        return Err(Error::dim("kmeans", format!("points {:?}", points.shape())));
    }
    let (n, d) = (points.rows(), points.cols());
    if k == 0 || k > n {
        return Err(Error::Data(format!("cannot form {k} clusters from {n} points")));
    }
    let mut centers: Vec<Vec<f64>> = vec![points.row(rng.below(n)).to_vec()];
    while centers.len() < k {
        let weights: Vec<f64> = (0..n).map(|i| nearest(points.row(i), &centers).1).collect();
        let next = if weights.iter().sum::<f64>() > 0.0 { rng.categorical(&weights) } else { rng.below(n) };
        centers.push(points.row(next).to_vec());
    }
    let mut assignments = vec![0; n];
    for _ in 0..iters {
        for (i, a) in assignments.iter_mut().enumerate() {
            *a = nearest(points.row(i), &centers).0;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    for (i, a) in assignments.iter_mut().enumerate() {
        *a = nearest(points.row(i), &centers).0;
    }
    Ok(KMeans { centers: Tensor::from_parts(vec![k, d], centers.concat()), assignments })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_blobs() {
        let mut rng = RngStream::new(1);
        let mut rows = Vec::new();
        for i in 0..200 {
            let c = if i < 100 { -5.0 } else { 5.0 };
            rows.push(vec![c + rng.normal(), rng.normal()]);
        }
        let pts = Tensor::from_rows(&rows).unwrap();
        let km = kmeans(&pts, 2, KMEANS_ITERS, &mut RngStream::new(2)).unwrap();
        let first = km.assignments[0];
        assert!(km.assignments[..100].iter().all(|&a| a == first));
        assert!(km.assignments[100..].iter().all(|&a| a != first));
        assert!((km.centers.row(first)[0] + 5.0).abs() < 0.5);
    }

    #[test]
    fn deterministic_under_seed() {
        let pts = RngStream::new(4).normal_tensor(&[50, 3]);
        let a = kmeans(&pts, 3, 10, &mut RngStream::new(9)).unwrap();
        let b = kmeans(&pts, 3, 10, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_clusters() {
        let pts = Tensor::zeros(&[2, 1]);
        assert!(kmeans(&pts, 3, 1, &mut RngStream::new(0)).is_err());
    }
}
