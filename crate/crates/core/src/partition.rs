//! Cut&Match partitioning: spectral clustering of node embeddings and the
//! subsample-then-propagate approximation used inside the decoder.

use serde::{Deserialize, Serialize};

use crate::eigen::sym_eigen;
use crate::error::{HieroError, Result};
use crate::graph::VideoGraph;
use crate::kmeans::{kmeans_restarts, Metric};
use crate::linalg::{cosine_similarity_matrix, DenseMatrix};

pub const DEFAULT_KAPPA: f64 = 1.0;
pub const DEFAULT_MAX_NODES: usize = 64;

/// Cluster index per node plus the spectral gap at K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub assignments: Vec<usize>,
    pub k: usize,
    /// `λ_{K+1} - λ_K` of the normalized Laplacian; 0 when K = N or when
    /// no spectral step was run.
    pub eigengap: f64,
}

impl PartitionResult {
    /// Every node in cluster 0.
    pub fn single(n: usize) -> Self {
        PartitionResult { assignments: vec![0; n], k: 1, eigengap: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Node indices of each cluster; empty clusters yield empty lists.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    KmeansL2,
    KmeansCosine,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub kappa: f64,
    pub seed: u64,
    /// Row-normalize the spectral embedding before K-Means.
    pub normalize_rows: bool,
    pub n_init: usize,
    pub max_iter: usize,
}

impl SpectralOptions {
    pub fn new(kappa: f64, seed: u64) -> Self {
        SpectralOptions { kappa, seed, normalize_rows: false, n_init: 10, max_iter: 300 }
    }
}

/// `S_ij = exp(cos(x_i, x_j) / κ)`.
pub fn similarity_matrix(x: &DenseMatrix, kappa: f64) -> Result<DenseMatrix> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(HieroError::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    if !(1.0 / kappa).exp().is_finite() {
        return Err(HieroError::InvalidArgument(format!("kappa {kappa} overflows exp(1/kappa)")));
    }
    let mut s = cosine_similarity_matrix(x)?;
    s.data_mut().iter_mut().for_each(|v| *v = (*v / kappa).exp());
    Ok(s)
}

/// `I - D^{-1/2} W D^{-1/2}`.
pub fn normalized_laplacian(w: &DenseMatrix) -> Result<DenseMatrix> {
    let (rows, cols) = w.shape();
    if rows != cols {
        return Err(HieroError::NotSquare { rows, cols });
    }
    w.check_finite()?;
    if let Some(i) = w.data().iter().position(|&v| v < 0.0) {
        return Err(HieroError::InvalidArgument(format!("negative weight at ({}, {})", i / cols, i % cols)));
    }
    let n = rows;
    let mut inv_sqrt = Vec::with_capacity(n);
    for r in 0..n {
        let deg: f64 = w.row(r).iter().sum();
        if deg <= 0.0 {
            return Err(HieroError::ZeroDegree { row: r });
        }
        inv_sqrt.push(1.0 / deg.sqrt());
    }
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let a = 0.5 * (w.get(i, j) + w.get(j, i)) * inv_sqrt[i] * inv_sqrt[j];
            let v = if i == j { 1.0 - a } else { -a };
            l.set(i, j, v);
            l.set(j, i, v);
        }
    }
    Ok(l)
}

/// Spectral clustering of an explicit affinity matrix.
pub fn spectral_partition_affinity(w: &DenseMatrix, k: usize, opts: &SpectralOptions) -> Result<PartitionResult> {
    let n = w.rows();
    if k == 0 || k > n {
        return Err(HieroError::InvalidArgument(format!("K={k} must be in 1..={n}")));
    }
    if k == 1 {
        return Ok(PartitionResult::single(n));
    }
    let lap = normalized_laplacian(w)?;
    let eig = sym_eigen(&lap)?;
    let eigengap = if k < n { (eig.eigenvalues[k] - eig.eigenvalues[k - 1]).max(0.0) } else { 0.0 };
    let mut embedding = eig.eigenvectors.leading_columns(k);
    if opts.normalize_rows {
        for r in 0..n {
            let len = crate::linalg::norm(embedding.row(r));
            if len > 0.0 {
                embedding.row_mut(r).iter_mut().for_each(|v| *v /= len);
            }
        }
    }
    let km = kmeans_restarts(&embedding, k, Metric::Euclidean, opts.seed, opts.max_iter, opts.n_init)?;
    Ok(PartitionResult { assignments: km.assignments, k, eigengap })
}

/// similarity → normalized Laplacian → K smallest eigenvectors → K-Means.
pub fn spectral_partition(x: &DenseMatrix, k: usize, kappa: f64, seed: u64) -> Result<PartitionResult> {
    spectral_partition_with(x, k, &SpectralOptions::new(kappa, seed))
}

pub fn spectral_partition_with(x: &DenseMatrix, k: usize, opts: &SpectralOptions) -> Result<PartitionResult> {
    if k == 0 || k > x.rows() {
        return Err(HieroError::InvalidArgument(format!("K={k} must be in 1..={}", x.rows())));
    }
    let s = similarity_matrix(x, opts.kappa)?;
    spectral_partition_affinity(&s, k, opts)
}

/// `m` indices spread uniformly over `0..n` (both ends included).
pub fn uniform_indices(n: usize, m: usize) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    if m == 1 {
        return vec![0];
    }
    (0..m).map(|i| ((i as f64) * (n - 1) as f64 / (m - 1) as f64).round() as usize).collect()
}

/// Relative slack under which two distances count as a tie, so that the
/// tie rule survives rounding from a common time offset.
const TIE_SLACK: f64 = 1e-9;

/// Each target takes the label of the temporally closest source node;
/// ties go to the earlier source. `source` must be sorted.
pub fn propagate_nearest(source: &[f64], labels: &[usize], targets: &[f64]) -> Vec<usize> {
    targets
        .iter()
        .map(|&t| {
            let k = source.partition_point(|&s| s < t);
            let idx = if k == 0 {
                0
            } else if k == source.len() {
                source.len() - 1
            } else if (t - source[k - 1]) - (source[k] - t) <= TIE_SLACK * t.abs().max(1.0) {
                k - 1
            } else {
                k
            };
            labels[idx]
        })
        .collect()
}

/// Spectral partition on at most `max_nodes` uniformly sub-sampled nodes,
/// propagated back to all nodes by nearest timestamp.
pub fn approx_partition(g: &VideoGraph, k: usize, kappa: f64, max_nodes: usize, seed: u64) -> Result<PartitionResult> {
    approx_partition_with(g, k, max_nodes, &SpectralOptions::new(kappa, seed))
}

pub fn approx_partition_with(g: &VideoGraph, k: usize, max_nodes: usize, opts: &SpectralOptions) -> Result<PartitionResult> {
    if max_nodes < k {
        return Err(HieroError::InvalidArgument(format!("max_nodes {max_nodes} < K {k}")));
    }
    let n = g.len();
    if n <= max_nodes {
        return spectral_partition_with(&g.embeddings, k, opts);
    }
    let keep = uniform_indices(n, max_nodes);
    let sub = g.embeddings.select_rows(&keep);
    let sub_ts: Vec<f64> = keep.iter().map(|&i| g.timestamps[i]).collect();
    let part = spectral_partition_with(&sub, k, opts)?;
    let assignments = propagate_nearest(&sub_ts, &part.assignments, &g.timestamps);
    Ok(PartitionResult { assignments, k, eigengap: part.eigengap })
}

/// Dispatch to one of the clustering strategies.
pub fn alt_partition(x: &DenseMatrix, k: usize, method: ClusterMethod, kappa: f64, seed: u64) -> Result<PartitionResult> {
    let opts = SpectralOptions::new(kappa, seed);
    match method {
        ClusterMethod::Spectral => spectral_partition_with(x, k, &opts),
        ClusterMethod::KmeansL2 | ClusterMethod::KmeansCosine => {
            let metric = if method == ClusterMethod::KmeansL2 { Metric::Euclidean } else { Metric::Cosine };
            let km = kmeans_restarts(x, k, metric, seed, opts.max_iter, opts.n_init)?;
            Ok(PartitionResult { assignments: km.assignments, k, eigengap: 0.0 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::adjusted_rand_index;

    #[test]
    fn similarity_analytic_values() {
        let ortho = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let s = similarity_matrix(&ortho, 0.3).unwrap();
        assert!((s.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((s.get(0, 0) - (1.0f64 / 0.3).exp()).abs() < 1e-12);

        let anti = DenseMatrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert!((similarity_matrix(&anti, 1.0).unwrap().get(0, 1) - 0.367879441171).abs() < 1e-9);

        let dup = DenseMatrix::from_rows(&[[0.2, 0.4], [0.2, 0.4]]).unwrap();
        assert!((similarity_matrix(&dup, 0.5).unwrap().get(1, 0) - 7.38905609893).abs() < 1e-9);

        assert!(similarity_matrix(&dup, 0.0).is_err());
        assert!(similarity_matrix(&dup, 1e-4).is_err());
    }

    #[test]
    fn laplacian_of_all_ones() {
        let w = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let l = normalized_laplacian(&w).unwrap();
        let expect = DenseMatrix::from_rows(&[[0.5, -0.5], [-0.5, 0.5]]).unwrap();
        assert!(l.max_abs_diff(&expect) < 1e-15);
        let eig = sym_eigen(&l).unwrap();
        assert!(eig.eigenvalues[0].abs() < 1e-12 && (eig.eigenvalues[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn laplacian_block_diagonal_null_space() {
        let mut w = DenseMatrix::zeros(5, 5);
        for (i, j) in [(0, 1), (0, 2), (1, 2), (3, 4)] {
            w.set(i, j, 1.0 + i as f64);
            w.set(j, i, 1.0 + i as f64);
        }
        for i in 0..5 {
            w.set(i, i, 0.5);
        }
        let l = normalized_laplacian(&w).unwrap();
        let eig = sym_eigen(&l).unwrap();
        assert!(eig.eigenvalues[0].abs() < 1e-10 && eig.eigenvalues[1].abs() < 1e-10);
        assert!(eig.eigenvalues[2] > 1e-3);
        // null space vectors are constant up to D^{1/2} scaling within each block
        let deg: Vec<f64> = (0..5).map(|r| w.row(r).iter().sum::<f64>()).collect();
        for k in 0..2 {
            let v = eig.eigenvector(k);
            let u: Vec<f64> = (0..5).map(|i| v[i] / deg[i].sqrt()).collect();
            assert!((u[0] - u[1]).abs() < 1e-10 && (u[1] - u[2]).abs() < 1e-10 && (u[3] - u[4]).abs() < 1e-10);
        }
    }

    #[test]
    fn laplacian_null_vector() {
        let w = DenseMatrix::from_rows(&[[0.0, 2.0, 1.0], [2.0, 1.0, 0.5], [1.0, 0.5, 3.0]]).unwrap();
        let l = normalized_laplacian(&w).unwrap();
        let d_half: Vec<f64> = (0..3).map(|r| w.row(r).iter().sum::<f64>().sqrt()).collect();
        let v = DenseMatrix::from_vec(3, 1, d_half).unwrap();
        assert!(l.matmul(&v).unwrap().max_abs() < 1e-10);
        let eig = sym_eigen(&l).unwrap();
        assert!(eig.eigenvalues[0].abs() < 1e-10);
        assert!(eig.eigenvalues.iter().all(|&x| x > -1e-10 && x < 2.0 + 1e-10));
    }

    #[test]
    fn laplacian_rejects_isolated_node() {
        let w = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(normalized_laplacian(&w), Err(HieroError::ZeroDegree { row: 1 })));
    }

    #[test]
    fn two_orthogonal_groups() {
        let x = DenseMatrix::from_fn(10, 4, |r, c| if (r < 5) == (c < 2) { 1.0 } else { 0.0 });
        let p = spectral_partition(&x, 2, 1.0, 0).unwrap();
        let planted: Vec<usize> = (0..10).map(|r| usize::from(r >= 5)).collect();
        assert_eq!(adjusted_rand_index(&p.assignments, &planted), 1.0);
        assert!(p.eigengap >= 0.0);

        let one = spectral_partition(&x, 1, 1.0, 0).unwrap();
        assert!(one.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn nearest_propagation_tie_goes_early() {
        let labels = propagate_nearest(&[0.0, 2.0], &[4, 7], &[-1.0, 0.9, 1.0, 1.1, 5.0]);
        assert_eq!(labels, vec![4, 4, 4, 7, 7]);
        let shifted = propagate_nearest(&[1000.0, 1002.0], &[4, 7], &[1001.0 + 1e-13, 1001.1]);
        assert_eq!(shifted, vec![4, 7]);
    }

    #[test]
    fn uniform_indices_span_range() {
        assert_eq!(uniform_indices(10, 4), vec![0, 3, 6, 9]);
        assert_eq!(uniform_indices(3, 5), vec![0, 1, 2]);
        assert_eq!(uniform_indices(7, 1), vec![0]);
    }

    #[test]
    fn approx_pass_through_when_small() {
        let x = DenseMatrix::from_fn(10, 3, |r, c| ((r * 7 + c * 3) % 5) as f64 + 0.5);
        let g = VideoGraph::new(x.clone(), (0..10).map(|i| i as f64).collect(), 0, 1.0).unwrap();
        let a = approx_partition(&g, 3, 1.0, 10, 9).unwrap();
        let b = spectral_partition(&x, 3, 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert!(approx_partition(&g, 3, 1.0, 2, 9).is_err());
    }
}
