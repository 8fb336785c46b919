//! Zero-shot procedural tasks on top of forward-pass outputs.

use serde::{Deserialize, Serialize};

use crate::error::{HieroError, Result};
use crate::io::{FeatureSequence, StepPrediction, Taxonomy};
use crate::linalg::{cosine, norm, DenseMatrix};
use crate::model::backend::{Backend, Eval};
use crate::model::forward::{forward, ForwardOptions, ForwardTrace};
use crate::model::params::ModelParams;
use crate::partition::{propagate_nearest, spectral_partition};

pub const DEFAULT_MIN_LEN: usize = 2;
pub const DEFAULT_CONTEXT: f64 = 4.0;
pub const DEFAULT_PROCEDURE_K: usize = 7;
pub const MCQ_CHOICES: usize = 5;

/// Cluster labels at input resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureAssignment {
    pub timestamps: Vec<f64>,
    pub labels: Vec<usize>,
    pub segment_duration: f64,
    pub k: usize,
}

impl ProcedureAssignment {
    /// Label of the nearest segment for each frame time `f / fps`.
    pub fn frame_labels(&self, fps: f64) -> Vec<usize> {
        let end = self.timestamps.last().map_or(0.0, |t| t + self.segment_duration / 2.0);
        let frames = (end * fps).ceil() as usize;
        let times: Vec<f64> = (0..frames).map(|f| f as f64 / fps).collect();
        propagate_nearest(&self.timestamps, &self.labels, &times)
    }

    /// Maximal runs of equal labels as predictions spanning whole segments.
    pub fn to_predictions(&self) -> Vec<StepPrediction> {
        runs(&self.labels)
            .into_iter()
            .map(|(s, e, l)| StepPrediction {
                start: segment_start(&self.timestamps, s, self.segment_duration),
                end: segment_end(&self.timestamps, e - 1, self.segment_duration),
                label: Some(l),
                score: 1.0,
            })
            .collect()
    }
}

fn segment_start(ts: &[f64], i: usize, dur: f64) -> f64 {
    (ts[i] - dur / 2.0).max(0.0)
}

fn segment_end(ts: &[f64], i: usize, dur: f64) -> f64 {
    ts[i] + dur / 2.0
}

/// Spectral clustering of the embeddings at `depth` (0 = output,
/// `s >= 1` = decoder stage `s - 1`), upsampled to every input segment.
pub fn procedure_learning(trace: &ForwardTrace, k: usize, depth: usize, kappa: f64, seed: u64) -> Result<ProcedureAssignment> {
    let (emb, ts) = trace.depth(depth)?;
    if k == 0 {
        return Err(HieroError::InvalidArgument("K must be >= 1".into()));
    }
    let part = spectral_partition(emb, k.min(emb.rows()), kappa, seed)?;
    let labels = propagate_nearest(ts, &part.assignments, &trace.input_timestamps);
    Ok(ProcedureAssignment {
        timestamps: trace.input_timestamps.clone(),
        labels,
        segment_duration: trace.segment_duration,
        k: part.k,
    })
}

/// `(start, end_exclusive, label)` of each maximal constant run.
pub fn runs(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            out.push((start, i, labels[start]));
            start = i;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStep {
    pub start: f64,
    pub end: f64,
    /// First and one-past-last member segment.
    pub first: usize,
    pub last: usize,
    pub cluster: usize,
    /// Mean of the members' normalized aligned embeddings.
    pub embedding: Vec<f64>,
}

/// Rows of `h_v(x)` scaled to unit length.
pub fn project_video(params: &ModelParams, x: &DenseMatrix) -> Result<DenseMatrix> {
    project(params, x, true)
}

/// Rows of `h_t(x)` scaled to unit length.
pub fn project_text(params: &ModelParams, x: &DenseMatrix) -> Result<DenseMatrix> {
    project(params, x, false)
}

fn project(params: &ModelParams, x: &DenseMatrix, video: bool) -> Result<DenseMatrix> {
    let mut e = Eval;
    let (lin, ids) = if video { (&params.h_v, params.h_v_ids()) } else { (&params.h_t, params.h_t_ids()) };
    let w = e.param(ids.0, &lin.weight);
    let b = e.param(ids.1, &lin.bias);
    let xv = e.constant(x.clone());
    let y = e.linear(&xv, &w, &b)?;
    let y = e.normalize_rows(&y);
    Ok(e.value(&y).clone())
}

/// Runs of consecutive same-cluster segments in the given assignments,
/// dropping runs shorter than `min_len`.
pub fn candidates_from_assignments(
    labels: &[usize],
    aligned: &DenseMatrix,
    timestamps: &[f64],
    segment_duration: f64,
    min_len: usize,
) -> Result<Vec<CandidateStep>> {
    if min_len == 0 {
        return Err(HieroError::InvalidArgument("min_len must be >= 1".into()));
    }
    if labels.len() != aligned.rows() || labels.len() != timestamps.len() {
        return Err(HieroError::Shape("labels, embeddings and timestamps disagree".into()));
    }
    let mut out = Vec::new();
    for (s, e, c) in runs(labels) {
        if e - s < min_len {
            continue;
        }
        let mut mean = vec![0.0; aligned.cols()];
        for r in s..e {
            mean.iter_mut().zip(aligned.row(r)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= (e - s) as f64);
        out.push(CandidateStep {
            start: segment_start(timestamps, s, segment_duration),
            end: segment_end(timestamps, e - 1, segment_duration),
            first: s,
            last: e,
            cluster: c,
            embedding: mean,
        });
    }
    Ok(out)
}

/// Clusters the output embeddings into `k` groups and turns runs of at
/// least `min_len` segments into candidate steps. An empty list means no
/// run survived.
pub fn extract_candidates(
    trace: &ForwardTrace,
    params: &ModelParams,
    k: usize,
    min_len: usize,
    kappa: f64,
    seed: u64,
) -> Result<Vec<CandidateStep>> {
    let assign = procedure_learning(trace, k, 0, kappa, seed)?;
    let aligned = project_video(params, &trace.output)?;
    candidates_from_assignments(&assign.labels, &aligned, &trace.input_timestamps, trace.segment_duration, min_len)
}

fn check_query(q: &[f64]) -> Result<()> {
    if norm(q) == 0.0 {
        return Err(HieroError::ZeroNormRow { row: 0 });
    }
    Ok(())
}

/// Candidates ranked by cosine to an aligned query; ties keep start order.
pub fn step_grounding(candidates: &[CandidateStep], query: &[f64]) -> Result<Vec<StepPrediction>> {
    if candidates.is_empty() {
        return Err(HieroError::Empty("grounding needs at least one candidate".into()));
    }
    check_query(query)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        if c.embedding.len() != query.len() {
            return Err(HieroError::Shape(format!("query has {} dims, candidates {}", query.len(), c.embedding.len())));
        }
        let s = if norm(&c.embedding) == 0.0 { 0.0 } else { cosine(&c.embedding, query)? };
        scored.push(StepPrediction { start: c.start, end: c.end, label: None, score: s });
    }
    scored.sort_by(|a, b| a.start.total_cmp(&b.start));
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(scored)
}

/// Labels each candidate with its most similar taxonomy row (already in the
/// aligned space); ties go to the lower index.
pub fn step_localization(candidates: &[CandidateStep], taxonomy: &DenseMatrix) -> Result<Vec<StepPrediction>> {
    if taxonomy.rows() == 0 {
        return Err(HieroError::Empty("taxonomy has no rows".into()));
    }
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        if c.embedding.len() != taxonomy.cols() {
            return Err(HieroError::Shape(format!("taxonomy has {} dims, candidates {}", taxonomy.cols(), c.embedding.len())));
        }
        let mut best = (0, f64::NEG_INFINITY);
        for r in 0..taxonomy.rows() {
            let s = if norm(&c.embedding) == 0.0 { 0.0 } else { cosine(&c.embedding, taxonomy.row(r))? };
            if s > best.1 {
                best = (r, s);
            }
        }
        out.push(StepPrediction { start: c.start, end: c.end, label: Some(best.0), score: best.1 });
    }
    out.sort_by(|a, b| a.start.total_cmp(&b.start));
    Ok(out)
}

/// Projects taxonomy rows through `h_t`.
pub fn aligned_taxonomy(params: &ModelParams, taxonomy: &Taxonomy) -> Result<DenseMatrix> {
    project_text(params, &taxonomy.embeddings)
}

/// A clip `[start, end]` cut from a longer video.
#[derive(Debug, Clone, Copy)]
pub struct McqClip<'a> {
    pub video: &'a FeatureSequence,
    pub start: f64,
    pub end: f64,
}

impl McqClip<'_> {
    /// The clip widened by `context` seconds on both sides.
    pub fn extended(&self, context: f64) -> FeatureSequence {
        self.video.slice_time(self.start - context, self.end + context)
    }
}

/// Unit-length mean of the aligned clip embeddings, clustering disabled.
pub fn clip_embedding(params: &ModelParams, clip: &FeatureSequence, fopts: &ForwardOptions) -> Result<Vec<f64>> {
    if clip.is_empty() {
        return Err(HieroError::Empty(format!("clip of {} holds no segments", clip.video_id)));
    }
    let opts = ForwardOptions { cluster_enabled: false, ..*fopts };
    let trace = forward(params, clip, &opts)?;
    let h = project_video(params, &trace.output)?;
    let mut mean = h.mean_row();
    let n = norm(&mean);
    if n > 0.0 {
        mean.iter_mut().for_each(|v| *v /= n);
    }
    Ok(mean)
}

/// Index of the clip whose embedding is most similar to the aligned query.
pub fn mcq_retrieval(query: &[f64], clips: &[McqClip<'_>], params: &ModelParams, fopts: &ForwardOptions, context: f64) -> Result<usize> {
    if clips.len() != MCQ_CHOICES {
        return Err(HieroError::InvalidArgument(format!("expected {MCQ_CHOICES} candidate clips, got {}", clips.len())));
    }
    check_query(query)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in clips.iter().enumerate() {
        let e = clip_embedding(params, &c.extended(context), fopts)?;
        if e.len() != query.len() {
            return Err(HieroError::Shape(format!("query has {} dims, clips {}", query.len(), e.len())));
        }
        let s = if norm(&e) == 0.0 { 0.0 } else { cosine(&e, query)? };
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}
