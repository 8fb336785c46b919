//! Lloyd's algorithm with k-means++ seeding, Euclidean or cosine geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HieroError, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    /// Spherical k-means: points and centroids live on the unit sphere and
    /// the distortion of a point is `1 - cos`.
    Cosine,
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: DenseMatrix,
    pub inertia: f64,
    /// Inertia after every assignment step, ending with `inertia`.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

pub fn kmeans(points: &DenseMatrix, k: usize, metric: Metric, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let n = points.rows();
    if n == 0 || points.cols() == 0 {
        return Err(HieroError::Empty("kmeans needs at least one point".into()));
    }
    if k == 0 || k > n {
        return Err(HieroError::InvalidArgument(format!("kmeans: K={k} must be in 1..={n}")));
    }
    if max_iter == 0 {
        return Err(HieroError::InvalidArgument("kmeans: max_iter must be >= 1".into()));
    }
    points.check_finite()?;
    let data = match metric {
        Metric::Euclidean => points.clone(),
        Metric::Cosine => points.normalized_rows()?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(&data, k, &mut rng);
    let (mut assignments, first) = assign(&data, &centroids, metric);
    let mut history = vec![first];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        centroids = update(&data, &assignments, &centroids, metric);
        let (next, inertia) = assign(&data, &centroids, metric);
        history.push(inertia);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    centroids = update(&data, &assignments, &centroids, metric);
    let inertia = distortion(&data, &assignments, &centroids, metric);
    history.push(inertia);
    Ok(KMeansResult { assignments, centroids, inertia, inertia_history: history, iterations })
}

/// Runs `n_init` seeded restarts and keeps the lowest-inertia result
/// (earliest restart wins ties).
pub fn kmeans_restarts(
    points: &DenseMatrix,
    k: usize,
    metric: Metric,
    seed: u64,
    max_iter: usize,
    n_init: usize,
) -> Result<KMeansResult> {
    let runs = n_init.max(1);
    let mut best: Option<KMeansResult> = None;
    for r in 0..runs {
        let run_seed = seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let res = kmeans(points, k, metric, run_seed, max_iter)?;
        if best.as_ref().is_none_or(|b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one run"))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn point_cost(p: &[f64], c: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => sq_dist(p, c),
        Metric::Cosine => 1.0 - dot(p, c),
    }
}

fn plus_plus_init(data: &DenseMatrix, k: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let n = data.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, w) in best.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, b) in best.iter_mut().enumerate() {
            let d = sq_dist(data.row(i), data.row(next));
            if d < *b {
                *b = d;
            }
        }
    }
    data.select_rows(&chosen)
}

fn assign(data: &DenseMatrix, centroids: &DenseMatrix, metric: Metric) -> (Vec<usize>, f64) {
    let pairs = par::map_range(data.rows(), |i| {
        let p = data.row(i);
        let mut best = (0usize, f64::INFINITY);
        for c in 0..centroids.rows() {
            let d = point_cost(p, centroids.row(c), metric);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    });
    let inertia = pairs.iter().map(|p| p.1).sum();
    (pairs.into_iter().map(|p| p.0).collect(), inertia)
}

fn update(data: &DenseMatrix, assignments: &[usize], previous: &DenseMatrix, metric: Metric) -> DenseMatrix {
    let k = previous.rows();
    let mut sums = DenseMatrix::zeros(k, data.cols());
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(data.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums.row_mut(c).copy_from_slice(previous.row(c));
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        sums.row_mut(c).iter_mut().for_each(|v| *v *= inv);
        if metric == Metric::Cosine {
            let len = dot(sums.row(c), sums.row(c)).sqrt();
            if len > 0.0 {
                sums.row_mut(c).iter_mut().for_each(|v| *v /= len);
            } else {
                sums.row_mut(c).copy_from_slice(previous.row(c));
            }
        }
    }
    sums
}

fn distortion(data: &DenseMatrix, assignments: &[usize], centroids: &DenseMatrix, metric: Metric) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| point_cost(data.row(i), centroids.row(a), metric))
        .sum()
}
