//! Encoder / decoder forward pass over a temporal video graph.

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{HieroError, Result};
use crate::graph::{interpolation_weights, level_threshold, subsample_indices, temporal_edges, VideoGraph};
use crate::io::FeatureSequence;
use crate::linalg::DenseMatrix;
use crate::model::backend::{AggEntry, AggregatePlan, Backend, Eval, RowMix};
use crate::model::params::{Activation, LayerIds, ModelParams, TdgcLayerParams};
use crate::partition::{approx_partition, PartitionResult, DEFAULT_KAPPA, DEFAULT_MAX_NODES};

/// Per-call decoder settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardOptions {
    /// Base edge threshold in seconds at level 0.
    pub edge_threshold: f64,
    /// Number of functional threads per decoder stage.
    pub k: usize,
    pub kappa: f64,
    pub max_nodes: usize,
    pub cluster_enabled: bool,
    pub seed: u64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            edge_threshold: 1.0,
            k: 4,
            kappa: DEFAULT_KAPPA,
            max_nodes: DEFAULT_MAX_NODES,
            cluster_enabled: true,
            seed: 0,
        }
    }
}

impl ForwardOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.edge_threshold > 0.0 && self.edge_threshold.is_finite()) {
            return Err(HieroError::InvalidArgument(format!("edge_threshold must be positive, got {}", self.edge_threshold)));
        }
        if self.k == 0 {
            return Err(HieroError::InvalidArgument("K must be >= 1".into()));
        }
        if self.cluster_enabled && self.max_nodes < self.k {
            return Err(HieroError::InvalidArgument(format!("max_nodes {} < K {}", self.max_nodes, self.k)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(HieroError::InvalidArgument(format!("kappa must be positive, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Where decoder partitions come from.
#[derive(Debug, Clone, Copy)]
pub enum Partitions<'a> {
    /// Cluster the fused embeddings of each stage.
    Compute,
    /// Reuse given assignments, indexed by decoder stage.
    Fixed(&'a [PartitionResult]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input_timestamps: Vec<f64>,
    pub segment_duration: f64,
    /// `encoder_graphs[s]` sits at level `s + 1`.
    pub encoder_graphs: Vec<VideoGraph>,
    /// `decoder_graphs[s]` sits at level `s + 1`; index 0 is the finest.
    pub decoder_graphs: Vec<VideoGraph>,
    /// Partition used by decoder stage `s`.
    pub partitions: Vec<PartitionResult>,
    /// Embeddings at input resolution.
    pub output: DenseMatrix,
}

impl ForwardTrace {
    /// Embeddings and timestamps at a depth: 0 is the output, `s >= 1` the
    /// decoder stage `s - 1`.
    pub fn depth(&self, depth: usize) -> Result<(&DenseMatrix, &[f64])> {
        if depth == 0 {
            return Ok((&self.output, &self.input_timestamps));
        }
        let g = self.decoder_graphs.get(depth - 1).ok_or_else(|| {
            HieroError::InvalidArgument(format!("depth {depth} exceeds {} decoder stages", self.decoder_graphs.len()))
        })?;
        Ok((&g.embeddings, &g.timestamps))
    }
}

/// Backend handles produced alongside a trace.
#[derive(Debug, Clone)]
pub struct ForwardVars<V> {
    pub encoder: Vec<V>,
    pub decoder: Vec<V>,
    pub output: V,
}

/// Neighbor aggregation plan plus the distinct distances feeding the gate
/// MLP. `groups` restricts edges to nodes sharing a label.
pub fn aggregate_plan(timestamps: &[f64], threshold: f64, groups: Option<&[usize]>) -> (AggregatePlan, Vec<f64>) {
    let n = timestamps.len();
    let mut adj = vec![Vec::new(); n];
    for (i, j) in temporal_edges(timestamps, threshold) {
        if groups.is_some_and(|g| g[i] != g[j]) {
            continue;
        }
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut distances = Vec::new();
    let mut gate_of: HashMap<u64, usize> = HashMap::new();
    let mut entries = Vec::new();
    for (i, nb) in adj.iter_mut().enumerate() {
        nb.sort_unstable();
        let deg = nb.len() as f64;
        for &j in nb.iter() {
            let diff = timestamps[i] - timestamps[j];
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            if sign == 0.0 {
                continue;
            }
            let d = diff.abs();
            let gate = *gate_of.entry(d.to_bits()).or_insert_with(|| {
                distances.push(d);
                distances.len() - 1
            });
            entries.push(AggEntry { target: i, source: j, gate, coef: sign / deg });
        }
    }
    (AggregatePlan { rows: n, entries }, distances)
}

/// One TDGC layer on nodes at `timestamps` with connectivity radius
/// `threshold`, optionally restricted to same-group pairs.
#[allow(clippy::too_many_arguments)]
pub fn tdgc_layer<'p, B: Backend<'p>>(
    b: &mut B,
    layer: &'p TdgcLayerParams,
    ids: LayerIds,
    activation: Activation,
    x: &B::V,
    timestamps: &[f64],
    threshold: f64,
    groups: Option<&[usize]>,
) -> Result<B::V> {
    let d = layer.w_r.rows();
    let (rows, cols) = b.value(x).shape();
    if cols != d || rows != timestamps.len() {
        return Err(HieroError::Shape(format!(
            "TDGC input is {rows}x{cols}, expected {}x{d}",
            timestamps.len()
        )));
    }
    let w_r = b.param(ids.w_r(), &layer.w_r);
    let b_r = b.param(ids.b_r(), &layer.b_r);
    let residual = b.matmul(x, &w_r)?;
    let (plan, distances) = aggregate_plan(timestamps, threshold, groups);
    let pre = if plan.entries.is_empty() {
        residual
    } else {
        let w_n = b.param(ids.w_n(), &layer.w_n);
        let b_n = b.param(ids.b_n(), &layer.b_n);
        let xn = b.linear(x, &w_n, &b_n)?;
        let xn = b.activate(&xn, activation);
        let dist = b.constant(DenseMatrix::from_raw(distances.len(), 1, distances));
        let m1_w = b.param(ids.m1_w(), &layer.mlp_hidden.weight);
        let m1_b = b.param(ids.m1_b(), &layer.mlp_hidden.bias);
        let m2_w = b.param(ids.m2_w(), &layer.mlp_out.weight);
        let m2_b = b.param(ids.m2_b(), &layer.mlp_out.bias);
        let h = b.linear(&dist, &m1_w, &m1_b)?;
        let h = b.activate(&h, Activation::Relu);
        let gates = b.linear(&h, &m2_w, &m2_b)?;
        let agg = b.aggregate(&xn, &gates, Rc::new(plan))?;
        b.add(&residual, &agg)?
    };
    b.add_row(&pre, &b_r)
}

/// Single-layer convenience wrapper over a graph, with value semantics.
pub fn tdgc_forward(g: &VideoGraph, layer: &TdgcLayerParams, activation: Activation) -> Result<DenseMatrix> {
    let mut e = Eval;
    let x = e.constant(g.embeddings.clone());
    let y = tdgc_layer(&mut e, layer, LayerIds { base: 0 }, activation, &x, &g.timestamps, g.threshold(), None)?;
    Ok(e.value(&y).clone())
}

/// Timestamps at every level: `out[0]` is the input, `out[l + 1]` keeps
/// the even positions of `out[l]`.
pub fn level_timestamps(input: &[f64], stages: usize) -> Vec<Vec<f64>> {
    let mut out = vec![input.to_vec()];
    for _ in 0..stages {
        let prev = out.last().unwrap();
        out.push(subsample_indices(prev.len()).into_iter().map(|i| prev[i]).collect());
    }
    out
}

fn subsample_mix(n: usize) -> RowMix {
    let keep = subsample_indices(n);
    RowMix { out_rows: keep.len(), weights: keep.into_iter().enumerate().map(|(t, s)| (t, s, 1.0)).collect() }
}

fn interp_mix(source: &[f64], target: &[f64]) -> RowMix {
    RowMix { out_rows: target.len(), weights: interpolation_weights(source, target) }
}

/// Runs the full model with any backend.
pub fn forward_with<'p, B: Backend<'p>>(
    b: &mut B,
    params: &'p ModelParams,
    seq: &FeatureSequence,
    opts: &ForwardOptions,
    partitions: Partitions<'_>,
) -> Result<(ForwardVars<B::V>, ForwardTrace)> {
    opts.validate()?;
    let dims = params.dims;
    if seq.is_empty() {
        return Err(HieroError::Empty(format!("video {} has no segments", seq.video_id)));
    }
    if seq.dim() != dims.input_dim {
        return Err(HieroError::Shape(format!("features have {} dims, model expects {}", seq.dim(), dims.input_dim)));
    }
    if let Partitions::Fixed(p) = partitions {
        if p.len() != dims.stages {
            return Err(HieroError::InvalidArgument(format!("{} fixed partitions for {} stages", p.len(), dims.stages)));
        }
    }
    let levels = level_timestamps(&seq.timestamps, dims.stages);
    let thr = |level: usize| level_threshold(opts.edge_threshold, level as u32);

    let (pw, pb) = params.input_ids();
    let w = b.param(pw, &params.input_proj.weight);
    let bias = b.param(pb, &params.input_proj.bias);
    let input = b.constant(seq.features.clone());
    let mut x = b.linear(&input, &w, &bias)?;

    let mut encoder = Vec::with_capacity(dims.stages);
    for s in 0..dims.stages {
        for (l, layer) in params.encoder[s].iter().enumerate() {
            x = tdgc_layer(b, layer, params.encoder_layer_ids(s, l), dims.activation, &x, &levels[s], thr(s), None)?;
        }
        x = b.mix_rows(&x, Rc::new(subsample_mix(levels[s].len())));
        encoder.push(x.clone());
    }

    let mut decoder: Vec<Option<B::V>> = vec![None; dims.stages];
    let mut parts: Vec<Option<PartitionResult>> = vec![None; dims.stages];
    for s in (0..dims.stages).rev() {
        let ts = &levels[s + 1];
        let fused = match &decoder.get(s + 1).cloned().flatten() {
            Some(deeper) => {
                let up = b.mix_rows(deeper, Rc::new(interp_mix(&levels[s + 2], ts)));
                b.add(&encoder[s], &up)?
            }
            None => encoder[s].clone(),
        };
        let part = match partitions {
            Partitions::Fixed(p) => {
                if p[s].assignments.len() != ts.len() {
                    return Err(HieroError::Shape(format!(
                        "fixed partition for stage {s} covers {} nodes, stage has {}",
                        p[s].assignments.len(),
                        ts.len()
                    )));
                }
                p[s].clone()
            }
            Partitions::Compute => {
                let k = opts.k.min(ts.len());
                if !opts.cluster_enabled || k == 1 {
                    PartitionResult::single(ts.len())
                } else {
                    let g = VideoGraph::new(b.value(&fused).clone(), ts.clone(), (s + 1) as u32, opts.edge_threshold)?;
                    approx_partition(&g, k, opts.kappa, opts.max_nodes, opts.seed.wrapping_add(s as u64))?
                }
            }
        };
        let mut y = fused;
        for (l, layer) in params.decoder[s].iter().enumerate() {
            y = tdgc_layer(b, layer, params.decoder_layer_ids(s, l), dims.activation, &y, ts, thr(s + 1), Some(&part.assignments))?;
        }
        decoder[s] = Some(y);
        parts[s] = Some(part);
    }
    let decoder: Vec<B::V> = decoder.into_iter().map(|v| v.expect("every stage visited")).collect();
    let output = b.mix_rows(&decoder[0], Rc::new(interp_mix(&levels[1], &levels[0])));

    let graph = |b: &B, v: &B::V, s: usize| VideoGraph::new(b.value(v).clone(), levels[s + 1].clone(), (s + 1) as u32, opts.edge_threshold);
    let trace = ForwardTrace {
        input_timestamps: seq.timestamps.clone(),
        segment_duration: seq.segment_duration,
        encoder_graphs: encoder.iter().enumerate().map(|(s, v)| graph(b, v, s)).collect::<Result<_>>()?,
        decoder_graphs: decoder.iter().enumerate().map(|(s, v)| graph(b, v, s)).collect::<Result<_>>()?,
        partitions: parts.into_iter().map(|p| p.expect("every stage visited")).collect(),
        output: b.value(&output).clone(),
    };
    Ok((ForwardVars { encoder, decoder, output }, trace))
}

/// Value-only forward pass.
pub fn forward(params: &ModelParams, seq: &FeatureSequence, opts: &ForwardOptions) -> Result<ForwardTrace> {
    forward_with(&mut Eval, params, seq, opts, Partitions::Compute).map(|(_, t)| t)
}

/// Encoder outputs only.
pub fn encoder_forward(params: &ModelParams, seq: &FeatureSequence, edge_threshold: f64) -> Result<Vec<VideoGraph>> {
    let opts = ForwardOptions { edge_threshold, cluster_enabled: false, ..ForwardOptions::default() };
    forward(params, seq, &opts).map(|t| t.encoder_graphs)
}
