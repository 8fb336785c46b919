//! Synthetic corpora with planted step / thread structure.
//!
//! Each step owns a center direction; segment features are the center plus
//! isotropic Gaussian noise of scale `sigma`, and any two centers are
//! `separation * sigma` apart. Narrations, the taxonomy and grounding
//! queries live in the same space as the centers, so every task has an
//! exact planted answer.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HieroError, Result};
use crate::io::{
    write_annotations, write_feature_file, write_narrations, write_queries, write_questions, write_taxonomy, FeatureSequence,
    GroundingQuery, Manifest, ManifestVideo, McqCandidate, McqQuestion, Narration, NarrationSet, StepAnnotation, StepInterval,
    Taxonomy, DEFAULT_SEGMENT_DURATION,
};
use crate::eval::McqGroup;
use crate::linalg::{dot, norm, DenseMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_threads: usize,
    pub steps_per_thread: usize,
    /// Segments per video.
    pub segments: usize,
    pub segment_duration: f64,
    pub dim: usize,
    /// Distance between any two step centers, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    /// Randomly merge the step sequences of different threads.
    pub interleave: bool,
    /// One narration every this many segments.
    pub narration_stride: usize,
    /// Noise on narration and query embeddings, in units of `sigma`.
    pub text_noise: f64,
    /// Relative spread of step lengths around the mean.
    pub length_jitter: f64,
    pub seed: u64,
    /// Seed for the step centers; defaults to `seed`. Corpora sharing it
    /// share a taxonomy.
    pub taxonomy_seed: Option<u64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_threads: 1,
            steps_per_thread: 7,
            segments: 200,
            segment_duration: DEFAULT_SEGMENT_DURATION,
            dim: 64,
            separation: 10.0,
            sigma: 1.0,
            interleave: false,
            narration_stride: 4,
            text_noise: 0.1,
            length_jitter: 0.3,
            seed: 0,
            taxonomy_seed: None,
        }
    }
}

impl SynthSpec {
    pub fn num_steps(&self) -> usize {
        self.num_threads * self.steps_per_thread
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HieroError::InvalidArgument(m));
        if self.num_threads == 0 || self.steps_per_thread == 0 || self.narration_stride == 0 || self.dim == 0 {
            return bad("thread, step, stride and dim counts must be >= 1".into());
        }
        if self.segments < self.num_steps() {
            return bad(format!("{} segments cannot hold {} steps", self.segments, self.num_steps()));
        }
        if self.dim < self.num_steps() {
            return bad(format!("dim {} < {} orthogonal step centers", self.dim, self.num_steps()));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return bad(format!("separation must be positive, got {}", self.separation));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite() && self.text_noise >= 0.0) {
            return bad("noise scales must be finite and >= 0".into());
        }
        if !(self.segment_duration > 0.0) {
            return bad("segment_duration must be positive".into());
        }
        if !(0.0..1.0).contains(&self.length_jitter) {
            return bad("length_jitter must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Center scale: orthogonal vectors of norm `r` are `r·√2` apart. With
    /// `sigma = 0` the separation is taken in absolute units.
    fn center_norm(&self) -> f64 {
        let unit = if self.sigma > 0.0 { self.sigma } else { 1.0 };
        self.separation * unit / std::f64::consts::SQRT_2
    }
}

/// One generated video with its planted truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub features: FeatureSequence,
    pub narrations: NarrationSet,
    pub annotation: StepAnnotation,
    /// Step index per segment.
    pub step_labels: Vec<usize>,
    /// Thread index per segment.
    pub thread_labels: Vec<usize>,
    /// One query per step block, targeting that block's interval.
    pub queries: Vec<GroundingQuery>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub taxonomy: Taxonomy,
    pub videos: Vec<SynthVideo>,
    pub questions: Vec<McqQuestion>,
}

/// Orthonormal directions via Gram-Schmidt on Gaussian draws.
pub fn orthonormal_directions(count: usize, dim: usize, rng: &mut impl Rng) -> Result<DenseMatrix> {
    if count > dim {
        return Err(HieroError::InvalidArgument(format!("cannot draw {count} orthogonal directions in {dim} dims")));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    while rows.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for r in &rows {
                let p = dot(&v, r);
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            rows.push(v);
        }
    }
    DenseMatrix::from_rows(&rows)
}

/// Step centers shared by every video generated from `spec`.
pub fn step_centers(spec: &SynthSpec) -> Result<DenseMatrix> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.taxonomy_seed.unwrap_or(spec.seed));
    Ok(orthonormal_directions(spec.num_steps(), spec.dim, &mut rng)?.scaled(spec.center_norm()))
}

pub fn taxonomy(spec: &SynthSpec) -> Result<Taxonomy> {
    let centers = step_centers(spec)?;
    Taxonomy::new((0..spec.num_steps()).map(step_name).collect(), centers)
}

fn step_name(g: usize) -> String {
    format!("step {g}")
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn noisy(center: &[f64], scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    center.iter().map(|c| c + scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Block lengths summing to `total`, each at least 1.
fn block_lengths(count: usize, total: usize, jitter: f64, rng: &mut impl Rng) -> Vec<usize> {
    let w: Vec<f64> = (0..count).map(|_| 1.0 + jitter * rng.random_range(-1.0..=1.0)).collect();
    let sum: f64 = w.iter().sum();
    let spare = total - count;
    let mut len: Vec<usize> = w.iter().map(|x| 1 + (spare as f64 * x / sum).floor() as usize).collect();
    let mut rem = total - len.iter().sum::<usize>();
    let mut i = 0;
    while rem > 0 {
        len[i % count] += 1;
        rem -= 1;
        i += 1;
    }
    len
}

/// Order in which `(thread, step)` blocks appear.
fn block_order(spec: &SynthSpec, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    if !spec.interleave {
        return (0..spec.num_threads).flat_map(|t| (0..spec.steps_per_thread).map(move |s| (t, s))).collect();
    }
    let mut slots: Vec<usize> = (0..spec.num_threads).flat_map(|t| std::iter::repeat_n(t, spec.steps_per_thread)).collect();
    slots.shuffle(rng);
    let mut next = vec![0; spec.num_threads];
    slots
        .into_iter()
        .map(|t| {
            next[t] += 1;
            (t, next[t] - 1)
        })
        .collect()
}

/// Generates video `index` of a corpus. Videos with distinct indices use
/// independent random streams.
pub fn generate_video(spec: &SynthSpec, centers: &DenseMatrix, index: usize) -> Result<SynthVideo> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let video_id = format!("video_{index:03}");
    let order = block_order(spec, &mut rng);
    let lengths = block_lengths(order.len(), spec.segments, spec.length_jitter, &mut rng);
    let dur = spec.segment_duration;

    let mut step_labels = Vec::with_capacity(spec.segments);
    let mut thread_labels = Vec::with_capacity(spec.segments);
    let mut intervals = Vec::new();
    for (&(t, s), &len) in order.iter().zip(&lengths) {
        let g = t * spec.steps_per_thread + s;
        let first = step_labels.len();
        step_labels.extend(std::iter::repeat_n(g, len));
        thread_labels.extend(std::iter::repeat_n(t, len));
        intervals.push(StepInterval { start: first as f64 * dur, end: (first + len) as f64 * dur, label: Some(g) });
    }
    let timestamps: Vec<f64> = (0..spec.segments).map(|i| (i as f64 + 0.5) * dur).collect();
    let mut data = Vec::with_capacity(spec.segments * spec.dim);
    for &g in &step_labels {
        data.extend(noisy(centers.row(g), spec.sigma, &mut rng).into_iter().map(round_f32));
    }
    let features = FeatureSequence::new(&video_id, timestamps.clone(), DenseMatrix::from_vec(spec.segments, spec.dim, data)?, dur)?;

    let text_scale = spec.text_noise * if spec.sigma > 0.0 { spec.sigma } else { 1.0 };
    let items = (0..spec.segments)
        .step_by(spec.narration_stride)
        .map(|i| {
            let g = step_labels[i];
            Narration { text: step_name(g), timestamp: timestamps[i], embedding: noisy(centers.row(g), text_scale, &mut rng) }
        })
        .collect();
    let queries = intervals
        .iter()
        .enumerate()
        .map(|(b, iv)| GroundingQuery {
            video_id: video_id.clone(),
            query_id: format!("{video_id}_q{b}"),
            embedding: noisy(centers.row(iv.label.expect("planted blocks are labelled")), text_scale, &mut rng),
            start: Some(iv.start),
            end: Some(iv.end),
        })
        .collect();
    Ok(SynthVideo {
        features,
        narrations: NarrationSet { video_id: video_id.clone(), items },
        annotation: StepAnnotation { video_id, intervals },
        step_labels,
        thread_labels,
        queries,
    })
}

pub fn generate(spec: &SynthSpec, videos: usize) -> Result<SynthCorpus> {
    let centers = step_centers(spec)?;
    let taxonomy = Taxonomy::new((0..spec.num_steps()).map(step_name).collect(), centers.clone())?;
    let videos: Vec<SynthVideo> = (0..videos).map(|i| generate_video(spec, &centers, i)).collect::<Result<_>>()?;
    let questions = mcq_questions(spec, &centers, &videos, QUESTIONS_PER_VIDEO * videos.len());
    Ok(SynthCorpus { taxonomy, videos, questions })
}

/// Writes a corpus directory: `manifest.json`, per-video feature,
/// narration and annotation files, `taxonomy.json` and `queries.json`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| HieroError::io(dir, e))?;
    let mut entries = Vec::new();
    let mut queries = Vec::new();
    for v in &corpus.videos {
        let id = &v.features.video_id;
        let feat = format!("{id}.feat");
        let narr = format!("{id}.narrations.json");
        let ann = format!("{id}.annotations.json");
        write_feature_file(dir.join(&feat), &v.features)?;
        write_narrations(dir.join(&narr), &v.narrations)?;
        write_annotations(dir.join(&ann), &v.annotation)?;
        entries.push(ManifestVideo { video_id: id.clone(), features: feat, narrations: Some(narr), annotations: Some(ann) });
        queries.extend(v.queries.iter().cloned());
    }
    write_taxonomy(dir.join("taxonomy.json"), &corpus.taxonomy)?;
    write_queries(dir.join("queries.json"), &queries)?;
    write_questions(dir.join(QUESTIONS_FILE), &corpus.questions)?;
    let manifest = Manifest { videos: entries, taxonomy: Some("taxonomy.json".into()), queries: Some("queries.json".into()) };
    manifest.write(dir.join("manifest.json"))?;
    Ok(manifest)
}

pub const QUESTIONS_FILE: &str = "questions.json";
const QUESTIONS_PER_VIDEO: usize = 4;
/// Clip length for retrieval questions, in seconds.
const CLIP_SECONDS: f64 = 2.0;

fn block_clip(video: &SynthVideo, block: usize) -> (McqCandidate, usize) {
    let iv = &video.annotation.intervals[block];
    let mid = 0.5 * (iv.start + iv.end);
    let half = (CLIP_SECONDS.min(0.5 * (iv.end - iv.start))) / 2.0;
    let c = McqCandidate { video_id: video.features.video_id.clone(), start: mid - half, end: mid + half };
    (c, iv.label.expect("planted blocks are labelled"))
}

/// Five-way retrieval questions. Even questions draw distractors from the
/// same video (`intra`), odd ones from other videos (`inter`); distractors
/// always show a different step than the answer.
pub fn mcq_questions(spec: &SynthSpec, centers: &DenseMatrix, videos: &[SynthVideo], count: usize) -> Vec<McqQuestion> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX - 1);
    let text_scale = spec.text_noise * if spec.sigma > 0.0 { spec.sigma } else { 1.0 };
    let mut out = Vec::with_capacity(count);
    if videos.is_empty() {
        return out;
    }
    for q in 0..count {
        let v = rng.random_range(0..videos.len());
        let blocks = videos[v].annotation.intervals.len();
        let (answer_clip, step) = block_clip(&videos[v], rng.random_range(0..blocks));
        let intra = q % 2 == 0 || videos.len() == 1;
        let pool: Vec<(usize, usize)> = videos
            .iter()
            .enumerate()
            .filter(|&(u, _)| if intra { u == v } else { u != v })
            .flat_map(|(u, vid)| (0..vid.annotation.intervals.len()).map(move |b| (u, b)))
            .filter(|&(u, b)| videos[u].annotation.intervals[b].label != Some(step))
            .collect();
        if pool.len() < 4 {
            continue;
        }
        let mut candidates: Vec<McqCandidate> =
            rand::seq::index::sample(&mut rng, pool.len(), 4).into_iter().map(|i| block_clip(&videos[pool[i].0], pool[i].1).0).collect();
        let answer = rng.random_range(0..=4);
        candidates.insert(answer, answer_clip);
        out.push(McqQuestion {
            question_id: format!("q{q:04}"),
            query: noisy(centers.row(step), text_scale, &mut rng),
            group: if intra { McqGroup::Intra } else { McqGroup::Inter },
            candidates,
            answer: Some(answer),
        });
    }
    out
}

/// Features of `count` segments around each step center, one matrix per
/// step, for clustering benchmarks without the video structure.
pub fn planted_points(spec: &SynthSpec, per_step: usize) -> Result<(DenseMatrix, Vec<usize>)> {
    let centers = step_centers(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for g in 0..spec.num_steps() {
        for _ in 0..per_step {
            rows.push(noisy(centers.row(g), spec.sigma, &mut rng));
            labels.push(g);
        }
    }
    Ok((DenseMatrix::from_rows(&rows)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::adjusted_rand_index;
    use crate::io::read_feature_file;
    use crate::partition::spectral_partition;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec { steps_per_thread: 3, segments: 60, dim: 16, seed, ..Default::default() }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small(4), 2).unwrap(), generate(&small(4), 2).unwrap());
        assert_ne!(generate(&small(4), 1).unwrap().videos[0].features, generate(&small(5), 1).unwrap().videos[0].features);
    }

    #[test]
    fn centers_are_separated() {
        let spec = SynthSpec { sigma: 0.5, ..small(1) };
        let c = step_centers(&spec).unwrap();
        for a in 0..c.rows() {
            for b in 0..a {
                let d: f64 = c.row(a).iter().zip(c.row(b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                assert!((d - 5.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noiseless_steps_are_identical_and_recovered() {
        let spec = SynthSpec { sigma: 0.0, ..small(2) };
        let v = &generate(&spec, 1).unwrap().videos[0];
        for i in 1..v.step_labels.len() {
            if v.step_labels[i] == v.step_labels[i - 1] {
                assert_eq!(v.features.features.row(i), v.features.features.row(i - 1));
            }
        }
        let p = spectral_partition(&v.features.features, 3, 1.0, 0).unwrap();
        assert_eq!(adjusted_rand_index(&p.assignments, &v.step_labels), 1.0);
    }

    #[test]
    fn labels_round_trip_through_annotation() {
        let v = &generate(&SynthSpec { num_threads: 2, interleave: true, ..small(3) }, 1).unwrap().videos[0];
        for (i, &t) in v.features.timestamps.iter().enumerate() {
            assert_eq!(v.annotation.label_at(t), Some(v.step_labels[i]));
        }
        assert!(v.annotation.validate().is_ok());
    }

    #[test]
    fn written_features_match_memory() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate(&small(6), 2).unwrap();
        let m = write_corpus(&corpus, dir.path()).unwrap();
        let back = read_feature_file(dir.path().join(&m.videos[1].features)).unwrap();
        assert_eq!(back, corpus.videos[1].features);
    }

    #[test]
    fn rejects_too_many_centers() {
        let spec = SynthSpec { dim: 2, ..small(0) };
        assert!(generate(&spec, 1).is_err());
    }
}
