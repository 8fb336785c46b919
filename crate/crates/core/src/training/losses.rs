//! Video-narration alignment and functional-thread contrastive losses.

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{HieroError, Result};
use crate::io::{FeatureSequence, NarrationSet};
use crate::linalg::DenseMatrix;
use crate::model::backend::{Backend, Eval, NcePlan, NceTerm, Tape};
use crate::model::forward::{forward_with, ForwardOptions, Partitions};
use crate::model::params::ModelParams;
use crate::partition::PartitionResult;
use crate::training::windows::split_by_distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Positive window radius exponent (`2^alpha` seconds).
    pub alpha: f64,
    /// Negative annulus outer radius exponent.
    pub beta: f64,
    pub temperature: f64,
    /// Decoder stages contributing to the thread loss; `None` means all.
    pub ft_stages: Option<Vec<usize>>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 1.0, beta: 4.0, temperature: 0.05, ft_stages: None }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha < self.beta) {
            return Err(HieroError::InvalidArgument(format!("alpha {} must be < beta {}", self.alpha, self.beta)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(HieroError::InvalidArgument(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }

    fn uses_stage(&self, s: usize) -> bool {
        self.ft_stages.as_ref().is_none_or(|m| m.contains(&s))
    }
}

/// Alignment loss between L2-normalized node and narration embeddings.
///
/// `nodes[v]` / `texts[v]` hold video `v`'s aligned embeddings, with
/// timestamps in `node_times[v]` / `text_times[v]`. Node-to-text terms
/// are averaged over contributing nodes of a video, then over videos;
/// text-to-node terms likewise; the value is their sum.
pub fn vna_loss<'p, B: Backend<'p>>(
    b: &mut B,
    nodes: &[B::V],
    node_times: &[&[f64]],
    texts: &[B::V],
    text_times: &[&[f64]],
    cfg: &LossConfig,
) -> Result<B::V> {
    cfg.validate()?;
    let nv = nodes.len();
    if texts.len() != nv || node_times.len() != nv || text_times.len() != nv {
        return Err(HieroError::Shape("alignment batch lists are not parallel".into()));
    }
    for v in 0..nv {
        if b.value(&nodes[v]).rows() != node_times[v].len() || b.value(&texts[v]).rows() != text_times[v].len() {
            return Err(HieroError::Shape(format!("video {v}: embeddings and timestamps disagree")));
        }
    }
    let mut row_off = vec![0; nv + 1];
    let mut col_off = vec![0; nv + 1];
    for v in 0..nv {
        row_off[v + 1] = row_off[v] + node_times[v].len();
        col_off[v + 1] = col_off[v] + text_times[v].len();
    }
    let cols = col_off[nv];
    let flat = |r: usize, c: usize| r * cols + c;

    let mut v2t: Vec<Vec<NceTerm>> = vec![Vec::new(); nv];
    let mut t2v: Vec<Vec<NceTerm>> = vec![Vec::new(); nv];
    for v in 0..nv {
        let others_cols: Vec<usize> = (0..cols).filter(|&c| c < col_off[v] || c >= col_off[v + 1]).collect();
        for (j, &p) in node_times[v].iter().enumerate() {
            let (pos, neg) = split_by_distance(p, text_times[v].iter().copied(), cfg.alpha, cfg.beta);
            if pos.is_empty() {
                continue;
            }
            let r = row_off[v] + j;
            let positives: Vec<usize> = pos.iter().map(|&k| flat(r, col_off[v] + k)).collect();
            let mut denominator = positives.clone();
            denominator.extend(neg.iter().map(|&k| flat(r, col_off[v] + k)));
            denominator.extend(others_cols.iter().map(|&c| flat(r, c)));
            v2t[v].push(NceTerm { weight: 0.0, positives, denominator });
        }
        let others_rows: Vec<usize> = (0..row_off[nv]).filter(|&r| r < row_off[v] || r >= row_off[v + 1]).collect();
        for (k, &t) in text_times[v].iter().enumerate() {
            let (pos, neg) = split_by_distance(t, node_times[v].iter().copied(), cfg.alpha, cfg.beta);
            if pos.is_empty() {
                continue;
            }
            let c = col_off[v] + k;
            let positives: Vec<usize> = pos.iter().map(|&j| flat(row_off[v] + j, c)).collect();
            let mut denominator = positives.clone();
            denominator.extend(neg.iter().map(|&j| flat(row_off[v] + j, c)));
            denominator.extend(others_rows.iter().map(|&r| flat(r, c)));
            t2v[v].push(NceTerm { weight: 0.0, positives, denominator });
        }
    }
    let mut terms = Vec::new();
    for group in [v2t, t2v] {
        let active = group.iter().filter(|t| !t.is_empty()).count();
        if active == 0 {
            return Err(HieroError::EmptyBatch);
        }
        for video in group {
            let w = 1.0 / (video.len() as f64 * active as f64);
            terms.extend(video.into_iter().map(|t| NceTerm { weight: w, ..t }));
        }
    }
    let all_nodes = b.concat_rows(nodes)?;
    let all_texts = b.concat_rows(texts)?;
    let logits = b.matmul_t(&all_nodes, &all_texts)?;
    b.nce(&logits, Rc::new(NcePlan { tau: cfg.temperature, terms }))
}

/// Thread loss on one graph: each node is pulled towards the other members
/// of its partition. `None` when no node has a partner.
pub fn ft_loss<'p, B: Backend<'p>>(b: &mut B, h: &B::V, assignments: &[usize], temperature: f64) -> Result<Option<B::V>> {
    let n = b.value(h).rows();
    if assignments.len() != n {
        return Err(HieroError::Shape(format!("{} assignments for {n} nodes", assignments.len())));
    }
    let mut terms = Vec::new();
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && assignments[j] == assignments[i]).map(|j| i * n + j).collect();
        if positives.is_empty() {
            continue;
        }
        let denominator = (0..n).filter(|&j| j != i).map(|j| i * n + j).collect();
        terms.push(NceTerm { weight: 1.0, positives, denominator });
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let w = 1.0 / terms.len() as f64;
    terms.iter_mut().for_each(|t| t.weight = w);
    let logits = b.matmul_t(h, h)?;
    b.nce(&logits, Rc::new(NcePlan { tau: temperature, terms })).map(Some)
}

/// Backend handles for the batch loss plus the partitions that were used.
pub struct BatchLoss<V> {
    pub total: V,
    pub vna: V,
    pub ft: Option<V>,
    /// `partitions[video][stage]`
    pub partitions: Vec<Vec<PartitionResult>>,
}

/// Full model loss `L_vna + L_ft` for a batch of videos with narrations.
pub fn batch_loss<'p, B: Backend<'p>>(
    b: &mut B,
    params: &'p ModelParams,
    batch: &[(&FeatureSequence, &NarrationSet)],
    fopts: &ForwardOptions,
    cfg: &LossConfig,
    frozen: Option<&[Vec<PartitionResult>]>,
) -> Result<BatchLoss<B::V>> {
    if batch.is_empty() {
        return Err(HieroError::EmptyBatch);
    }
    if frozen.is_some_and(|f| f.len() != batch.len()) {
        return Err(HieroError::InvalidArgument("frozen partitions do not match the batch".into()));
    }
    let dims = params.dims;
    let (hv_w, hv_b) = params.h_v_ids();
    let (ht_w, ht_b) = params.h_t_ids();
    let hv_w = b.param(hv_w, &params.h_v.weight);
    let hv_b = b.param(hv_b, &params.h_v.bias);
    let ht_w = b.param(ht_w, &params.h_t.weight);
    let ht_b = b.param(ht_b, &params.h_t.bias);

    let mut nodes = Vec::new();
    let mut texts = Vec::new();
    let mut ft_terms = Vec::new();
    let mut partitions = Vec::new();
    let mut text_times: Vec<Vec<f64>> = Vec::new();
    for (v, (seq, narr)) in batch.iter().enumerate() {
        let source = frozen.map_or(Partitions::Compute, |f| Partitions::Fixed(&f[v]));
        let (vars, trace) = forward_with(b, params, seq, fopts, source)?;
        let proj = b.linear(&vars.output, &hv_w, &hv_b)?;
        nodes.push(b.normalize_rows(&proj));

        if narr.dim().is_some_and(|d| d != dims.text_dim) {
            return Err(HieroError::Shape(format!(
                "narrations of {} have {} dims, model expects {}",
                seq.video_id,
                narr.dim().unwrap_or(0),
                dims.text_dim
            )));
        }
        let emb = if narr.is_empty() { DenseMatrix::zeros(0, dims.text_dim) } else { narr.embedding_matrix() };
        let t = b.constant(emb);
        let t = b.linear(&t, &ht_w, &ht_b)?;
        texts.push(b.normalize_rows(&t));
        text_times.push(narr.items.iter().map(|n| n.timestamp).collect());

        for (s, dec) in vars.decoder.iter().enumerate() {
            if !cfg.uses_stage(s) {
                continue;
            }
            let h = b.linear(dec, &hv_w, &hv_b)?;
            let h = b.normalize_rows(&h);
            if let Some(term) = ft_loss(b, &h, &trace.partitions[s].assignments, cfg.temperature)? {
                ft_terms.push(term);
            }
        }
        partitions.push(trace.partitions);
    }
    let node_times: Vec<&[f64]> = batch.iter().map(|(s, _)| s.timestamps.as_slice()).collect();
    let tt: Vec<&[f64]> = text_times.iter().map(Vec::as_slice).collect();
    let vna = vna_loss(b, &nodes, &node_times, &texts, &tt, cfg)?;
    let ft = match ft_terms.split_first() {
        None => {
            log::debug!("no node with a same-partition partner; thread loss is zero");
            None
        }
        Some((first, rest)) => {
            let mut acc = first.clone();
            for t in rest {
                acc = b.add(&acc, t)?;
            }
            Some(b.scale(&acc, 1.0 / batch.len() as f64))
        }
    };
    let total = match &ft {
        Some(f) => b.add(&vna, f)?,
        None => vna.clone(),
    };
    Ok(BatchLoss { total, vna, ft, partitions })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossValue {
    pub value: f64,
    pub vna: f64,
    pub ft: f64,
    /// Aligned with [`ModelParams::to_flat`].
    pub gradient: Vec<f64>,
}

/// Flattens per-tensor gradients into canonical order; missing tensors
/// get zeros.
pub fn flatten_gradient(params: &ModelParams, grads: &HashMap<usize, DenseMatrix>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(params.param_count());
    for (id, t) in params.tensors().into_iter().enumerate() {
        match grads.get(&id) {
            Some(g) => out.extend_from_slice(g.data()),
            None => out.extend(std::iter::repeat_n(0.0, t.data().len())),
        }
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(HieroError::NonFiniteGradient(i));
    }
    Ok(out)
}

/// Loss value and analytic gradient, with the partitions that were used.
pub fn loss_and_gradient(
    params: &ModelParams,
    batch: &[(&FeatureSequence, &NarrationSet)],
    fopts: &ForwardOptions,
    cfg: &LossConfig,
    frozen: Option<&[Vec<PartitionResult>]>,
) -> Result<(LossValue, Vec<Vec<PartitionResult>>)> {
    let mut tape = Tape::new();
    let l = batch_loss(&mut tape, params, batch, fopts, cfg, frozen)?;
    let value = tape.value(&l.total).get(0, 0);
    let vna = tape.value(&l.vna).get(0, 0);
    let ft = l.ft.as_ref().map_or(0.0, |f| tape.value(f).get(0, 0));
    let grads = tape.gradients(l.total)?;
    let gradient = flatten_gradient(params, &grads)?;
    Ok((LossValue { value, vna, ft, gradient }, l.partitions))
}

/// `(total, vna, ft)` without gradients.
pub fn loss_only(
    params: &ModelParams,
    batch: &[(&FeatureSequence, &NarrationSet)],
    fopts: &ForwardOptions,
    cfg: &LossConfig,
    frozen: Option<&[Vec<PartitionResult>]>,
) -> Result<(f64, f64, f64)> {
    let mut e = Eval;
    let l = batch_loss(&mut e, params, batch, fopts, cfg, frozen)?;
    let ft = l.ft.as_ref().map_or(0.0, |f| e.value(f).get(0, 0));
    Ok((e.value(&l.total).get(0, 0), e.value(&l.vna).get(0, 0), ft))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(e: &mut Eval, rows: &[&[f64]]) -> crate::model::backend::EvalValue<'static> {
        let m = DenseMatrix::from_rows(rows).unwrap();
        Backend::<'static>::constant(e, m)
    }

    #[test]
    fn vna_equal_logits_one_negative_is_ln2() {
        // one node, two narrations: one in the positive window, one in the annulus
        let mut e = Eval;
        let nodes = vec![c(&mut e, &[&[1.0, 0.0]])];
        let texts = vec![c(&mut e, &[&[0.0, 1.0], &[0.0, 1.0]])];
        let cfg = LossConfig::default();
        let v = vna_loss(&mut e, &nodes, &[&[10.0]], &texts, &[&[10.5, 14.0]], &cfg).unwrap();
        // v2t: ln 2; t2v: the positive narration sees only its node -> 0
        assert!((e.value(&v).get(0, 0) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn vna_single_positive_no_negative_is_zero() {
        let mut e = Eval;
        let nodes = vec![c(&mut e, &[&[0.6, 0.8]])];
        let texts = vec![c(&mut e, &[&[1.0, 0.0]])];
        let v = vna_loss(&mut e, &nodes, &[&[3.0]], &texts, &[&[3.0]], &LossConfig::default()).unwrap();
        assert_eq!(e.value(&v).get(0, 0), 0.0);
    }

    #[test]
    fn vna_without_positives_is_empty_batch() {
        let mut e = Eval;
        let nodes = vec![c(&mut e, &[&[1.0, 0.0]])];
        let texts = vec![c(&mut e, &[&[1.0, 0.0]])];
        let r = vna_loss(&mut e, &nodes, &[&[0.0]], &texts, &[&[100.0]], &LossConfig::default());
        assert!(matches!(r, Err(HieroError::EmptyBatch)));
    }

    #[test]
    fn ft_uniform_similarity_values() {
        let mut e = Eval;
        let h = c(&mut e, &[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        let two = ft_loss(&mut e, &h, &[0, 0, 1, 1], 0.05).unwrap().unwrap();
        assert!((e.value(&two).get(0, 0) - 3f64.ln()).abs() < 1e-12);
        let one = ft_loss(&mut e, &h, &[0, 0, 0, 0], 0.05).unwrap().unwrap();
        assert!(e.value(&one).get(0, 0).abs() < 1e-12);
        assert!(ft_loss(&mut e, &h, &[0, 1, 2, 3], 0.05).unwrap().is_none());
    }
}
