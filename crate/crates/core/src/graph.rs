//! Temporal video graphs and the resolution changes between encoder stages.

use crate::error::{HieroError, Result};
use crate::io::FeatureSequence;
use crate::linalg::DenseMatrix;

/// Nodes are video segments; an undirected edge joins two nodes whose
/// timestamps differ by at most `edge_threshold * 2^level`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoGraph {
    pub embeddings: DenseMatrix,
    pub timestamps: Vec<f64>,
    /// Undirected edges stored once with `i < j`.
    pub edges: Vec<(usize, usize)>,
    pub level: u32,
    /// Threshold at level 0.
    pub edge_threshold: f64,
}

impl VideoGraph {
    /// Builds a graph at `level`, computing edges from the timestamps.
    pub fn new(embeddings: DenseMatrix, timestamps: Vec<f64>, level: u32, edge_threshold: f64) -> Result<Self> {
        if embeddings.rows() != timestamps.len() {
            return Err(HieroError::Shape(format!(
                "{} embeddings for {} timestamps",
                embeddings.rows(),
                timestamps.len()
            )));
        }
        if !(edge_threshold > 0.0 && edge_threshold.is_finite()) {
            return Err(HieroError::InvalidArgument(format!("edge threshold must be positive, got {edge_threshold}")));
        }
        for i in 1..timestamps.len() {
            if timestamps[i - 1] >= timestamps[i] {
                return Err(HieroError::NonIncreasingTimestamps { index: i, prev: timestamps[i - 1], next: timestamps[i] });
            }
        }
        let edges = temporal_edges(&timestamps, level_threshold(edge_threshold, level));
        Ok(VideoGraph { embeddings, timestamps, edges, level, edge_threshold })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Connectivity radius at this graph's level.
    pub fn threshold(&self) -> f64 {
        level_threshold(self.edge_threshold, self.level)
    }

    /// Symmetric neighbor lists in ascending order.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj.iter_mut().for_each(|a| a.sort_unstable());
        adj
    }

    pub fn with_embeddings(&self, embeddings: DenseMatrix) -> VideoGraph {
        debug_assert_eq!(embeddings.rows(), self.len());
        VideoGraph { embeddings, ..self.clone() }
    }
}

pub fn level_threshold(base: f64, level: u32) -> f64 {
    base * 2f64.powi(level as i32)
}

/// Pairs `i < j` with `|t_i - t_j| <= threshold`; timestamps must be sorted.
pub fn temporal_edges(timestamps: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..timestamps.len() {
        for j in (i + 1)..timestamps.len() {
            if timestamps[j] - timestamps[i] > threshold {
                break;
            }
            edges.push((i, j));
        }
    }
    edges
}

/// Level-0 graph over a feature sequence.
pub fn build_graph(seq: &FeatureSequence, edge_threshold: f64) -> Result<VideoGraph> {
    if seq.is_empty() {
        return Err(HieroError::Empty(format!("feature sequence {} has no segments", seq.video_id)));
    }
    VideoGraph::new(seq.features.clone(), seq.timestamps.clone(), 0, edge_threshold)
}

/// Indices kept by [`temporal_subsample`]: the even positions.
pub fn subsample_indices(n: usize) -> Vec<usize> {
    (0..n).step_by(2).collect()
}

/// Halves the temporal resolution, keeping even-position nodes and
/// rebuilding edges at the next level.
pub fn temporal_subsample(g: &VideoGraph) -> Result<VideoGraph> {
    if g.is_empty() {
        return Err(HieroError::Empty("cannot subsample an empty graph".into()));
    }
    let keep = subsample_indices(g.len());
    let ts = keep.iter().map(|&i| g.timestamps[i]).collect();
    VideoGraph::new(g.embeddings.select_rows(&keep), ts, g.level + 1, g.edge_threshold)
}

/// Sparse linear-interpolation weights `(target_row, source_row, weight)`
/// from `source` timestamps onto `target` timestamps, clamped outside the
/// source range. Source timestamps must be sorted and non-empty.
pub fn interpolation_weights(source: &[f64], target: &[f64]) -> Vec<(usize, usize, f64)> {
    assert!(!source.is_empty(), "interpolation needs at least one source node");
    let last = source.len() - 1;
    let mut out = Vec::with_capacity(target.len() * 2);
    for (r, &t) in target.iter().enumerate() {
        if t <= source[0] {
            out.push((r, 0, 1.0));
            continue;
        }
        if t >= source[last] {
            out.push((r, last, 1.0));
            continue;
        }
        // first index with source[k] >= t; 0 < k <= last here
        let k = source.partition_point(|&s| s < t);
        if source[k] == t {
            out.push((r, k, 1.0));
            continue;
        }
        let (t0, t1) = (source[k - 1], source[k]);
        let w = (t - t0) / (t1 - t0);
        out.push((r, k - 1, 1.0 - w));
        out.push((r, k, w));
    }
    out
}

/// Applies sparse row weights: `out[r] = Σ w · x[src]`.
pub fn mix_rows(x: &DenseMatrix, weights: &[(usize, usize, f64)], out_rows: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(out_rows, x.cols());
    for &(r, s, w) in weights {
        let src = x.row(s).to_vec();
        for (o, v) in out.row_mut(r).iter_mut().zip(src) {
            *o += w * v;
        }
    }
    out
}

/// Per-dimension linear interpolation of `coarse` embeddings in time.
pub fn temporal_interpolate(coarse: &VideoGraph, target_timestamps: &[f64]) -> Result<DenseMatrix> {
    if coarse.is_empty() {
        return Err(HieroError::Empty("cannot interpolate from an empty graph".into()));
    }
    let w = interpolation_weights(&coarse.timestamps, target_timestamps);
    Ok(mix_rows(&coarse.embeddings, &w, target_timestamps.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(ts: &[f64], threshold: f64) -> VideoGraph {
        let emb = DenseMatrix::from_fn(ts.len(), 2, |r, c| (r * 2 + c) as f64);
        VideoGraph::new(emb, ts.to_vec(), 0, threshold).unwrap()
    }

    #[test]
    fn threshold_edges() {
        let g = graph(&[0.0, 0.5, 1.0, 5.0], 1.0);
        assert_eq!(g.edges, vec![(0, 1), (0, 2), (1, 2)]);
        assert!(g.neighbors()[3].is_empty());
    }

    #[test]
    fn single_node_has_no_edges() {
        assert!(graph(&[3.0], 1.0).edges.is_empty());
    }

    #[test]
    fn default_spacing_links_adjacent_only() {
        let ts: Vec<f64> = (0..10).map(|i| i as f64 * 16.0 / 30.0).collect();
        let g = graph(&ts, 1.0);
        let adj = g.neighbors();
        for i in 1..9 {
            assert_eq!(adj[i], vec![i - 1, i + 1]);
        }
        // one level down the spacing and the radius both double
        let g1 = temporal_subsample(&g).unwrap();
        for (i, a) in g1.neighbors().iter().enumerate().skip(1).take(g1.len() - 2) {
            assert_eq!(a, &vec![i - 1, i + 1]);
        }
    }

    #[test]
    fn subsample_keeps_even_positions() {
        let g = graph(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 1.0);
        let s = temporal_subsample(&g).unwrap();
        assert_eq!(s.timestamps, vec![0.0, 2.0, 4.0]);
        assert_eq!(s.level, 1);
        assert_eq!(s.embeddings.row(1), g.embeddings.row(2));
        assert_eq!(s.edges, vec![(0, 1), (1, 2)]);

        let one = temporal_subsample(&graph(&[7.0], 1.0)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.level, 1);

        assert_eq!(temporal_subsample(&graph(&[0.0, 1.0, 2.0, 3.0, 4.0], 1.0)).unwrap().timestamps, vec![0.0, 2.0, 4.0]);
    }

    #[test]
    fn interpolation_midpoint_clamp_identity() {
        let coarse = VideoGraph::new(
            DenseMatrix::from_rows(&[[0.0, 0.0], [2.0, 2.0]]).unwrap(),
            vec![0.0, 2.0],
            1,
            1.0,
        )
        .unwrap();
        let mid = temporal_interpolate(&coarse, &[1.0]).unwrap();
        assert_eq!(mid.row(0), &[1.0, 1.0]);
        let before = temporal_interpolate(&coarse, &[-3.0, 9.0]).unwrap();
        assert_eq!(before.row(0), &[0.0, 0.0]);
        assert_eq!(before.row(1), &[2.0, 2.0]);
        let same = temporal_interpolate(&coarse, &[0.0, 2.0]).unwrap();
        assert_eq!(same, coarse.embeddings);
    }

    #[test]
    fn empty_sequence_rejected() {
        let seq = FeatureSequence::new("e", vec![], DenseMatrix::zeros(0, 3), 0.5).unwrap();
        assert!(matches!(build_graph(&seq, 1.0), Err(HieroError::Empty(_))));
    }

    proptest! {
        #[test]
        fn edge_set_matches_definition(gaps in proptest::collection::vec(0.05f64..2.0, 1..30), thr in 0.1f64..3.0, level in 0u32..3) {
            let mut ts = vec![0.0];
            for g in gaps { let last = *ts.last().unwrap(); ts.push(last + g); }
            let emb = DenseMatrix::zeros(ts.len(), 1);
            let g = VideoGraph::new(emb, ts.clone(), level, thr).unwrap();
            let radius = thr * 2f64.powi(level as i32);
            let adj = g.neighbors();
            for i in 0..ts.len() {
                for j in 0..ts.len() {
                    let expect = i != j && (ts[i] - ts[j]).abs() <= radius;
                    prop_assert_eq!(adj[i].contains(&j), expect);
                    prop_assert_eq!(adj[i].contains(&j), adj[j].contains(&i));
                }
            }
        }

        #[test]
        fn repeated_subsampling_is_ceil_halving(n in 1usize..200, levels in 0u32..6) {
            let ts: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
            let mut g = VideoGraph::new(DenseMatrix::zeros(n, 1), ts, 0, 1.0).unwrap();
            for _ in 0..levels { g = temporal_subsample(&g).unwrap(); }
            let expect = n.div_ceil(1 << levels);
            prop_assert_eq!(g.len(), expect);
        }

        #[test]
        fn interpolation_reproduces_coarse_rows(vals in proptest::collection::vec(-5.0f64..5.0, 2..20)) {
            let n = vals.len();
            let ts: Vec<f64> = (0..n).map(|i| i as f64 * 1.3 + 0.2).collect();
            let emb = DenseMatrix::from_vec(n, 1, vals).unwrap();
            let g = VideoGraph::new(emb.clone(), ts.clone(), 2, 1.0).unwrap();
            prop_assert_eq!(temporal_interpolate(&g, &ts).unwrap(), emb);
        }
    }
}
