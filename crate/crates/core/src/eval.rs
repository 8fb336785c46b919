//! Benchmark metrics: Hungarian matching, procedure-learning F1/IoU,
//! Recall@k@IoU, mAP@IoU, MCQ accuracy and the adjusted Rand index.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{HieroError, Result};
use crate::io::{StepAnnotation, StepPrediction, VideoPredictions};
use crate::linalg::DenseMatrix;

/// Result of a minimum-cost assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Column assigned to each original row; `None` when the row was paired
    /// with a padding column.
    pub row_to_col: Vec<Option<usize>>,
    pub total_cost: f64,
}

/// Minimum-cost perfect matching on the zero-padded square version of
/// `cost` (shortest augmenting paths with potentials, O(n³)).
pub fn hungarian(cost: &DenseMatrix) -> Result<Matching> {
    cost.check_finite()?;
    let (rows, cols) = cost.shape();
    let n = rows.max(cols);
    if n == 0 {
        return Ok(Matching { row_to_col: vec![], total_cost: 0.0 });
    }
    let at = |i: usize, j: usize| if i < rows && j < cols { cost.get(i, j) } else { 0.0 };

    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![None; rows];
    let mut total_cost = 0.0;
    for j in 1..=n {
        let (r, c) = (p[j] - 1, j - 1);
        if r < rows && c < cols {
            row_to_col[r] = Some(c);
            total_cost += cost.get(r, c);
        }
    }
    Ok(Matching { row_to_col, total_cost })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut ra: HashMap<usize, u64> = HashMap::new();
    let mut rb: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let c2 = |k: u64| (k * k.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&k| c2(k)).sum();
    let sa: f64 = ra.values().map(|&k| c2(k)).sum();
    let sb: f64 = rb.values().map(|&k| c2(k)).sum();
    let expected = sa * sb / c2(n as u64);
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-12 {
        // both labelings trivial (one cluster or all singletons)
        return if index == max { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

/// Temporal IoU of two `[start, end]` intervals.
pub fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub step: usize,
    pub matched_cluster: Option<usize>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureScores {
    pub f1: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub steps: Vec<StepScore>,
}

/// Hungarian-matched per-step F1 and IoU over frame labels.
///
/// Frames whose ground truth is background are ignored. Predicted clusters
/// are matched one-to-one to ground-truth steps by maximum overlap; scores
/// are averaged over the ground-truth steps that occur.
pub fn procedure_f1_iou(pred: &[Option<usize>], gt: &[Option<usize>], num_steps: usize) -> Result<ProcedureScores> {
    if pred.len() != gt.len() {
        return Err(HieroError::Shape(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    if let Some(bad) = gt.iter().flatten().find(|&&g| g >= num_steps) {
        return Err(HieroError::InvalidArgument(format!("ground-truth label {bad} >= num_steps {num_steps}")));
    }
    let clusters = pred.iter().flatten().map(|&p| p + 1).max().unwrap_or(0);
    let mut overlap = DenseMatrix::zeros(clusters, num_steps);
    let mut pred_count = vec![0usize; clusters];
    let mut gt_count = vec![0usize; num_steps];
    for (p, g) in pred.iter().zip(gt) {
        let Some(g) = *g else { continue };
        gt_count[g] += 1;
        if let Some(p) = *p {
            pred_count[p] += 1;
            overlap.set(p, g, overlap.get(p, g) + 1.0);
        }
    }
    let matching = hungarian(&overlap.scaled(-1.0))?;
    let mut step_to_cluster = vec![None; num_steps];
    for (c, m) in matching.row_to_col.iter().enumerate() {
        if let Some(s) = m {
            step_to_cluster[*s] = Some(c);
        }
    }
    let mut steps = Vec::new();
    for (s, &gc) in gt_count.iter().enumerate() {
        if gc == 0 {
            continue;
        }
        let (precision, recall, f1, iou) = match step_to_cluster[s] {
            Some(c) => {
                let tp = overlap.get(c, s);
                let pc = pred_count[c] as f64;
                let precision = if pc > 0.0 { tp / pc } else { 0.0 };
                let recall = tp / gc as f64;
                let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
                let union = pc + gc as f64 - tp;
                (precision, recall, f1, if union > 0.0 { tp / union } else { 0.0 })
            }
            None => (0.0, 0.0, 0.0, 0.0),
        };
        steps.push(StepScore { step: s, matched_cluster: step_to_cluster[s], precision, recall, f1, iou });
    }
    let mean = |f: fn(&StepScore) -> f64| {
        if steps.is_empty() {
            0.0
        } else {
            steps.iter().map(f).sum::<f64>() / steps.len() as f64
        }
    };
    Ok(ProcedureScores {
        f1: mean(|s| s.f1),
        iou: mean(|s| s.iou),
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        steps,
    })
}

/// Per-video and aggregate scalars keyed by metric name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_video: Vec<VideoMetrics>,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub video_id: String,
    pub metrics: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn new(task: &str) -> Self {
        MetricReport { task: task.to_string(), ..Default::default() }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }
}

pub fn threshold_key(theta: f64) -> String {
    format!("{theta:.1}")
}

/// Procedure-learning report: per-video F1/IoU, aggregated as the plain mean.
pub fn procedure_report(videos: &[(String, Vec<Option<usize>>, Vec<Option<usize>>)], num_steps: usize) -> Result<MetricReport> {
    let mut report = MetricReport::new("procedure_learning");
    let mut sums = [0.0; 4];
    for (id, pred, gt) in videos {
        let s = procedure_f1_iou(pred, gt, num_steps)?;
        let vals = [s.f1, s.iou, s.precision, s.recall];
        for (a, v) in sums.iter_mut().zip(vals) {
            *a += v;
        }
        let metrics = ["f1", "iou", "precision", "recall"].iter().map(|k| k.to_string()).zip(vals).collect();
        report.per_video.push(VideoMetrics { video_id: id.clone(), metrics });
    }
    let n = videos.len().max(1) as f64;
    for (k, v) in ["f1", "iou", "precision", "recall"].iter().zip(sums) {
        report.metrics.insert(k.to_string(), v / n);
    }
    report.counts.insert("videos".into(), videos.len());
    Ok(report)
}

/// One grounding query: ranked predicted intervals and the target interval
/// (`None` when the query has no ground truth).
#[derive(Debug, Clone, PartialEq)]
pub struct RankedQuery {
    pub ranked: Vec<(f64, f64)>,
    pub gt: Option<(f64, f64)>,
}

/// Recall@k@θ in percent, keys `R@{k}@{θ}`. A query hits when any of its
/// top-k intervals has IoU >= θ.
pub fn recall_at_iou(queries: &[RankedQuery], ks: &[usize], thresholds: &[f64]) -> MetricReport {
    let mut report = MetricReport::new("grounding");
    let evaluated: Vec<&RankedQuery> = queries.iter().filter(|q| q.gt.is_some()).collect();
    for &k in ks {
        for &theta in thresholds {
            let hits = evaluated
                .iter()
                .filter(|q| {
                    let gt = q.gt.expect("filtered");
                    q.ranked.iter().take(k).any(|&p| interval_iou(p, gt) >= theta)
                })
                .count();
            let pct = if evaluated.is_empty() { 0.0 } else { 100.0 * hits as f64 / evaluated.len() as f64 };
            report.metrics.insert(format!("R@{k}@{}", threshold_key(theta)), pct);
        }
    }
    report.counts.insert("queries".into(), evaluated.len());
    report.counts.insert("skipped".into(), queries.len() - evaluated.len());
    report
}

/// Average precision with all-point interpolation from a ranked list of
/// true/false positives and the number of positives.
pub fn average_precision(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        if t {
            hits += 1;
        }
        recall.push(hits as f64 / num_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    // precision envelope from the right
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// mAP@θ over classes with at least one ground-truth interval, keys
/// `mAP@{θ}` plus `Avg` over thresholds.
pub fn map_at_iou(predictions: &[VideoPredictions], ground_truth: &[StepAnnotation], thresholds: &[f64]) -> MetricReport {
    let mut report = MetricReport::new("localization");
    let gt_by_video: HashMap<&str, &StepAnnotation> = ground_truth.iter().map(|a| (a.video_id.as_str(), a)).collect();
    let mut classes: Vec<usize> = ground_truth.iter().flat_map(|a| a.intervals.iter().filter_map(|s| s.label)).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut per_threshold = Vec::new();
    for &theta in thresholds {
        let mut aps = Vec::new();
        for &class in &classes {
            let num_gt = ground_truth.iter().flat_map(|a| &a.intervals).filter(|s| s.label == Some(class)).count();
            let mut dets: Vec<(usize, &StepPrediction)> = predictions
                .iter()
                .enumerate()
                .flat_map(|(v, vp)| vp.predictions.iter().filter(|p| p.label == Some(class)).map(move |p| (v, p)))
                .collect();
            // stable: equal scores keep input order
            dets.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
            let mut used: HashMap<(usize, usize), bool> = HashMap::new();
            let tp: Vec<bool> = dets
                .iter()
                .map(|(v, p)| {
                    let Some(ann) = gt_by_video.get(predictions[*v].video_id.as_str()) else { return false };
                    let mut best: Option<(usize, f64)> = None;
                    for (g, s) in ann.intervals.iter().enumerate() {
                        if s.label != Some(class) || used.contains_key(&(*v, g)) {
                            continue;
                        }
                        let iou = interval_iou((p.start, p.end), (s.start, s.end));
                        if iou >= theta && best.is_none_or(|b| iou > b.1) {
                            best = Some((g, iou));
                        }
                    }
                    match best {
                        Some((g, _)) => {
                            used.insert((*v, g), true);
                            true
                        }
                        None => false,
                    }
                })
                .collect();
            aps.push(average_precision(&tp, num_gt));
        }
        let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
        report.metrics.insert(format!("mAP@{}", threshold_key(theta)), map);
        per_threshold.push(map);
    }
    if !per_threshold.is_empty() {
        report.metrics.insert("Avg".into(), per_threshold.iter().sum::<f64>() / per_threshold.len() as f64);
    }
    report.counts.insert("classes".into(), classes.len());
    report.counts.insert("predictions".into(), predictions.iter().map(|v| v.predictions.len()).sum());
    report
}

/// Fraction of labeled predictions whose label equals the label of the
/// ground-truth interval they overlap most (by IoU).
pub fn label_accuracy(predictions: &[VideoPredictions], ground_truth: &[StepAnnotation]) -> (f64, usize) {
    let gt_by_video: HashMap<&str, &StepAnnotation> = ground_truth.iter().map(|a| (a.video_id.as_str(), a)).collect();
    let mut total = 0usize;
    let mut correct = 0usize;
    for vp in predictions {
        for p in vp.predictions.iter().filter(|p| p.label.is_some()) {
            total += 1;
            let Some(ann) = gt_by_video.get(vp.video_id.as_str()) else { continue };
            let best = ann
                .intervals
                .iter()
                .map(|s| (s.label, interval_iou((p.start, p.end), (s.start, s.end))))
                .filter(|x| x.1 > 0.0)
                .fold(None, |b: Option<(Option<usize>, f64)>, x| if b.is_none_or(|b| x.1 > b.1) { Some(x) } else { b });
            if let Some((label, _)) = best {
                if label == p.label {
                    correct += 1;
                }
            }
        }
    }
    (if total == 0 { 0.0 } else { correct as f64 / total as f64 }, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McqGroup {
    Inter,
    Intra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqChoice {
    pub chosen: usize,
    pub correct: usize,
    pub group: McqGroup,
}

/// Accuracy in percent per group; groups with no questions are omitted.
pub fn mcq_accuracy(choices: &[McqChoice]) -> MetricReport {
    let mut report = MetricReport::new("mcq");
    for (group, key) in [(McqGroup::Inter, "inter"), (McqGroup::Intra, "intra")] {
        let items: Vec<&McqChoice> = choices.iter().filter(|c| c.group == group).collect();
        report.counts.insert(key.into(), items.len());
        if items.is_empty() {
            continue;
        }
        let ok = items.iter().filter(|c| c.chosen == c.correct).count();
        report.metrics.insert(key.into(), 100.0 * ok as f64 / items.len() as f64);
    }
    report
}
