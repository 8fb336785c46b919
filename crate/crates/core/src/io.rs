//! File formats for features, narrations, taxonomies, annotations and
//! predictions.
//!
//! Feature files are binary, little-endian:
//!
//! ```text
//! offset  size        field
//! 0       8           magic "HIEROFT1"
//! 8       4           u32 N (segments)
//! 12      4           u32 D (feature dims)
//! 16      8           f64 segment_duration (seconds)
//! 24      8*N         f64 timestamps
//! 24+8N   4*N*D       f32 features, row-major
//! ```
//!
//! Everything else is UTF-8 JSON; see `README.md` for the schemas.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HieroError, Result};
use crate::eval::McqGroup;
use crate::linalg::{norm, DenseMatrix};

pub const FEATURE_MAGIC: &[u8; 8] = b"HIEROFT1";
const FEATURE_HEADER_LEN: usize = 24;

/// Default segment length: 16 frames at 30 fps.
pub const DEFAULT_SEGMENT_DURATION: f64 = 16.0 / 30.0;

/// Timestamped per-segment embeddings of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub timestamps: Vec<f64>,
    pub features: DenseMatrix,
    pub segment_duration: f64,
}

impl FeatureSequence {
    pub fn new(
        video_id: impl Into<String>,
        timestamps: Vec<f64>,
        features: DenseMatrix,
        segment_duration: f64,
    ) -> Result<Self> {
        if timestamps.len() != features.rows() {
            return Err(HieroError::Shape(format!(
                "{} timestamps for {} feature rows",
                timestamps.len(),
                features.rows()
            )));
        }
        validate_timestamps(&timestamps)?;
        if !(segment_duration.is_finite() && segment_duration > 0.0) {
            return Err(HieroError::schema("segment_duration", format!("must be positive, got {segment_duration}")));
        }
        features.check_finite()?;
        Ok(FeatureSequence { video_id: video_id.into(), timestamps, features, segment_duration })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Segments whose timestamps fall in `[start, end]`.
    pub fn slice_time(&self, start: f64, end: f64) -> FeatureSequence {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.timestamps[i] >= start && self.timestamps[i] <= end).collect();
        FeatureSequence {
            video_id: self.video_id.clone(),
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            features: self.features.select_rows(&idx),
            segment_duration: self.segment_duration,
        }
    }
}

fn validate_timestamps(ts: &[f64]) -> Result<()> {
    for (i, &t) in ts.iter().enumerate() {
        if !t.is_finite() || t < 0.0 {
            return Err(HieroError::schema("timestamps", format!("entry {i} is {t}, must be finite and >= 0")));
        }
        if i > 0 && ts[i - 1] >= t {
            return Err(HieroError::NonIncreasingTimestamps { index: i, prev: ts[i - 1], next: t });
        }
    }
    Ok(())
}

pub fn write_feature_file(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    let (n, d) = seq.features.shape();
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + n * 8 + n * d * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&seq.segment_duration.to_le_bytes());
    for t in &seq.timestamps {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    for v in seq.features.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| HieroError::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HieroError::io(path, e))?;
    if bytes.len() < 8 || &bytes[..8] != FEATURE_MAGIC {
        return Err(HieroError::BadMagic { path: path.to_path_buf(), expected: "HIEROFT1" });
    }
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(HieroError::Truncated { path: path.to_path_buf(), expected: FEATURE_HEADER_LEN, found: bytes.len() });
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let segment_duration = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|f| f.checked_add(n * 8 + FEATURE_HEADER_LEN))
        .ok_or_else(|| HieroError::SizeMismatch { path: path.to_path_buf(), detail: format!("N={n} D={d} overflows") })?;
    if bytes.len() < expected {
        return Err(HieroError::Truncated { path: path.to_path_buf(), expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(HieroError::SizeMismatch {
            path: path.to_path_buf(),
            detail: format!("N={n} D={d} implies {expected} bytes, file has {}", bytes.len()),
        });
    }
    let mut off = FEATURE_HEADER_LEN;
    let mut timestamps = Vec::with_capacity(n);
    for _ in 0..n {
        timestamps.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
        off += 8;
    }
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
        off += 4;
    }
    let features = DenseMatrix::from_vec(n, d, data)?;
    let video_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("video").to_string();
    FeatureSequence::new(video_id, timestamps, features, segment_duration)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Narration {
    pub text: String,
    pub timestamp: f64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NarrationSet {
    #[serde(default)]
    pub video_id: String,
    #[serde(rename = "narrations")]
    pub items: Vec<Narration>,
}

impl NarrationSet {
    pub fn validate(&self) -> Result<()> {
        let dim = self.items.first().map(|n| n.embedding.len());
        for (i, n) in self.items.iter().enumerate() {
            if !n.timestamp.is_finite() || n.timestamp < 0.0 {
                return Err(HieroError::schema(format!("narrations[{i}].timestamp"), "must be finite and >= 0"));
            }
            if Some(n.embedding.len()) != dim || n.embedding.is_empty() {
                return Err(HieroError::schema(
                    format!("narrations[{i}].embedding"),
                    format!("expected {} values, got {}", dim.unwrap_or(0), n.embedding.len()),
                ));
            }
            if n.embedding.iter().any(|v| !v.is_finite()) {
                return Err(HieroError::schema(format!("narrations[{i}].embedding"), "non-finite value"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.items.first().map(|n| n.embedding.len())
    }

    pub fn embedding_matrix(&self) -> DenseMatrix {
        let d = self.dim().unwrap_or(0);
        let mut data = Vec::with_capacity(self.len() * d);
        for n in &self.items {
            data.extend_from_slice(&n.embedding);
        }
        DenseMatrix::from_raw(self.len(), d, data)
    }
}

/// Step labels with their text embeddings, one row per label.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    pub labels: Vec<String>,
    pub embeddings: DenseMatrix,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyDoc {
    labels: Vec<String>,
    embeddings: Vec<Vec<f64>>,
}

impl Taxonomy {
    pub fn new(labels: Vec<String>, embeddings: DenseMatrix) -> Result<Self> {
        if labels.len() != embeddings.rows() {
            return Err(HieroError::schema(
                "embeddings",
                format!("{} rows for {} labels", embeddings.rows(), labels.len()),
            ));
        }
        for r in 0..embeddings.rows() {
            if norm(embeddings.row(r)) == 0.0 {
                return Err(HieroError::schema(format!("embeddings[{r}]"), "zero-norm row"));
            }
        }
        Ok(Taxonomy { labels, embeddings })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One annotated interval; `label` is `None` for background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepInterval {
    pub start: f64,
    pub end: f64,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepAnnotation {
    #[serde(default)]
    pub video_id: String,
    #[serde(rename = "segments")]
    pub intervals: Vec<StepInterval>,
}

impl StepAnnotation {
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.intervals.iter().enumerate() {
            if !s.start.is_finite() || !s.end.is_finite() {
                return Err(HieroError::schema(format!("segments[{i}]"), "non-finite bound"));
            }
            if s.start >= s.end {
                return Err(HieroError::schema(
                    format!("segments[{i}].end"),
                    format!("start {} must be < end {}", s.start, s.end),
                ));
            }
        }
        Ok(())
    }

    /// Label covering time `t` (first matching interval), `None` for background.
    pub fn label_at(&self, t: f64) -> Option<usize> {
        self.intervals.iter().find(|s| s.start <= t && t < s.end).and_then(|s| s.label)
    }
}

/// A predicted step: `[start, end)` in seconds with an optional taxonomy label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepPrediction {
    pub start: f64,
    pub end: f64,
    pub label: Option<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoPredictions {
    pub video_id: String,
    pub predictions: Vec<StepPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionDoc {
    pub videos: Vec<VideoPredictions>,
    /// Run information added by the command line; ignored on read.
    #[serde(default, skip_serializing)]
    pub meta: Option<serde_json::Value>,
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HieroError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HieroError::Json { path: path.to_path_buf(), source: e })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HieroError::Json { path: path.to_path_buf(), source: e })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HieroError::io(path, e))
}

pub fn read_narrations(path: impl AsRef<Path>) -> Result<NarrationSet> {
    let set: NarrationSet = read_json(path.as_ref())?;
    set.validate()?;
    Ok(set)
}

pub fn write_narrations(path: impl AsRef<Path>, set: &NarrationSet) -> Result<()> {
    set.validate()?;
    write_json(path.as_ref(), set)
}

pub fn read_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy> {
    let doc: TaxonomyDoc = read_json(path.as_ref())?;
    let dim = doc.embeddings.first().map(|r| r.len()).unwrap_or(0);
    for (i, r) in doc.embeddings.iter().enumerate() {
        if r.len() != dim {
            return Err(HieroError::schema(format!("embeddings[{i}]"), format!("expected {dim} values, got {}", r.len())));
        }
    }
    let m = if doc.embeddings.is_empty() {
        DenseMatrix::zeros(0, 0)
    } else {
        DenseMatrix::from_rows(&doc.embeddings).map_err(|e| HieroError::schema("embeddings", e.to_string()))?
    };
    Taxonomy::new(doc.labels, m)
}

pub fn write_taxonomy(path: impl AsRef<Path>, tax: &Taxonomy) -> Result<()> {
    let doc = TaxonomyDoc {
        labels: tax.labels.clone(),
        embeddings: (0..tax.embeddings.rows()).map(|r| tax.embeddings.row(r).to_vec()).collect(),
    };
    write_json(path.as_ref(), &doc)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<StepAnnotation> {
    let ann: StepAnnotation = read_json(path.as_ref())?;
    ann.validate()?;
    Ok(ann)
}

pub fn write_annotations(path: impl AsRef<Path>, ann: &StepAnnotation) -> Result<()> {
    ann.validate()?;
    write_json(path.as_ref(), ann)
}

fn validate_predictions(videos: &[VideoPredictions]) -> Result<()> {
    for (v, vp) in videos.iter().enumerate() {
        for (i, p) in vp.predictions.iter().enumerate() {
            if !(p.start < p.end) || !p.score.is_finite() {
                return Err(HieroError::schema(
                    format!("videos[{v}].predictions[{i}]"),
                    format!("need start < end and finite score, got [{}, {}] score {}", p.start, p.end, p.score),
                ));
            }
        }
    }
    Ok(())
}

pub fn write_predictions(path: impl AsRef<Path>, videos: &[VideoPredictions]) -> Result<()> {
    validate_predictions(videos)?;
    write_json(path.as_ref(), &PredictionDoc { videos: videos.to_vec(), meta: None })
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<VideoPredictions>> {
    let doc: PredictionDoc = read_json(path.as_ref())?;
    validate_predictions(&doc.videos)?;
    Ok(doc.videos)
}

/// Entry of a corpus manifest; paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestVideo {
    pub video_id: String,
    pub features: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrations: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<String>,
}

/// `manifest.json`: the index of a corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub videos: Vec<ManifestVideo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<String>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn resolve(dir: &Path, rel: &str) -> PathBuf {
        dir.join(rel)
    }
}

/// A grounding query: a text embedding and the interval it should find.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingQuery {
    pub video_id: String,
    pub query_id: String,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryDoc {
    queries: Vec<GroundingQuery>,
}

pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<GroundingQuery>> {
    let doc: QueryDoc = read_json(path.as_ref())?;
    for (i, q) in doc.queries.iter().enumerate() {
        if q.embedding.is_empty() || q.embedding.iter().any(|v| !v.is_finite()) {
            return Err(HieroError::schema(format!("queries[{i}].embedding"), "must be non-empty and finite"));
        }
        if let (Some(s), Some(e)) = (q.start, q.end) {
            if !(s < e) {
                return Err(HieroError::schema(format!("queries[{i}].end"), "start must be < end"));
            }
        }
    }
    Ok(doc.queries)
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[GroundingQuery]) -> Result<()> {
    write_json(path.as_ref(), &QueryDoc { queries: queries.to_vec() })
}

/// Ranked candidate intervals for one grounding query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRanking {
    pub query_id: String,
    pub video_id: String,
    pub ranked: Vec<StepPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingDoc {
    pub queries: Vec<QueryRanking>,
    #[serde(default, skip_serializing)]
    pub meta: Option<serde_json::Value>,
}

pub fn read_rankings(path: impl AsRef<Path>) -> Result<Vec<QueryRanking>> {
    let doc: RankingDoc = read_json(path.as_ref())?;
    Ok(doc.queries)
}

/// A clip `[start, end]` of a corpus video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McqCandidate {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
}

/// A multiple-choice retrieval question: pick the clip matching `query`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McqQuestion {
    pub question_id: String,
    pub query: Vec<f64>,
    pub group: McqGroup,
    pub candidates: Vec<McqCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionDoc {
    questions: Vec<McqQuestion>,
}

pub fn read_questions(path: impl AsRef<Path>) -> Result<Vec<McqQuestion>> {
    let doc: QuestionDoc = read_json(path.as_ref())?;
    for (i, q) in doc.questions.iter().enumerate() {
        if q.query.is_empty() || q.query.iter().any(|v| !v.is_finite()) {
            return Err(HieroError::schema(format!("questions[{i}].query"), "must be non-empty and finite"));
        }
        if let Some(c) = q.candidates.iter().position(|c| !(c.start <= c.end)) {
            return Err(HieroError::schema(format!("questions[{i}].candidates[{c}].end"), "start must be <= end"));
        }
        if q.answer.is_some_and(|a| a >= q.candidates.len()) {
            return Err(HieroError::schema(format!("questions[{i}].answer"), "index out of range"));
        }
    }
    Ok(doc.questions)
}

pub fn write_questions(path: impl AsRef<Path>, questions: &[McqQuestion]) -> Result<()> {
    write_json(path.as_ref(), &QuestionDoc { questions: questions.to_vec() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McqAnswer {
    pub question_id: String,
    pub chosen: usize,
    pub group: McqGroup,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerDoc {
    pub answers: Vec<McqAnswer>,
    #[serde(default, skip_serializing)]
    pub meta: Option<serde_json::Value>,
}

pub fn read_answers(path: impl AsRef<Path>) -> Result<Vec<McqAnswer>> {
    let doc: AnswerDoc = read_json(path.as_ref())?;
    Ok(doc.answers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn fixture() -> FeatureSequence {
        let features = DenseMatrix::from_fn(4, 3, |r, c| (r * 3 + c) as f32 as f64 * 0.25);
        FeatureSequence::new("v", vec![0.0, 0.533, 1.067, 1.6], features, 0.533).unwrap()
    }

    #[test]
    fn feature_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.feat");
        let seq = fixture();
        write_feature_file(&p, &seq).unwrap();
        let back = read_feature_file(&p).unwrap();
        assert_eq!(back, seq);
        assert_eq!(back.timestamps, vec![0.0, 0.533, 1.067, 1.6]);
    }

    #[test]
    fn truncated_payload() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.feat");
        let features = DenseMatrix::zeros(10, 2);
        let seq = FeatureSequence::new("t", (0..10).map(|i| i as f64).collect(), features, 0.5).unwrap();
        write_feature_file(&p, &seq).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_feature_file(&p), Err(HieroError::Truncated { .. })));
    }

    #[test]
    fn bad_magic_trailing_bytes_and_order() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("x.feat");
        write_feature_file(&p, &fixture()).unwrap();
        let mut bytes = fs::read(&p).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&p, &bad).unwrap();
        assert!(matches!(read_feature_file(&p), Err(HieroError::BadMagic { .. })));

        let mut long = bytes.clone();
        long.extend_from_slice(&[0, 0, 0, 0]);
        fs::write(&p, &long).unwrap();
        assert!(matches!(read_feature_file(&p), Err(HieroError::SizeMismatch { .. })));

        // swap the second timestamp with 0.0 so the sequence is no longer increasing
        bytes[32..40].copy_from_slice(&0.0f64.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_feature_file(&p), Err(HieroError::NonIncreasingTimestamps { index: 1, .. })));
    }

    #[test]
    fn narrations_parse_and_validate() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("n.json");
        fs::write(
            &p,
            r#"{"video_id":"v","narrations":[{"text":"cut onion","timestamp":1.0,"embedding":[1,0]},
                {"text":"peel carrot","timestamp":2.5,"embedding":[0,1]}]}"#,
        )
        .unwrap();
        let set = read_narrations(&p).unwrap();
        assert_eq!(set.len(), 2);
        fs::write(&p, r#"{"narrations":[{"text":"a","timestamp":1.0,"embedding":[1,0]},{"text":"b","timestamp":1.0,"embedding":[1]}]}"#).unwrap();
        assert!(matches!(read_narrations(&p), Err(HieroError::Schema { field, .. }) if field == "narrations[1].embedding"));
    }

    #[test]
    fn taxonomy_rejects_zero_row() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.json");
        fs::write(&p, r#"{"labels":["a","b"],"embeddings":[[1,0],[0,0]]}"#).unwrap();
        assert!(matches!(read_taxonomy(&p), Err(HieroError::Schema { field, .. }) if field == "embeddings[1]"));
    }

    #[test]
    fn annotations_reject_inverted_interval() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.json");
        fs::write(&p, r#"{"segments":[{"start":1.0,"end":3.0,"label":0},{"start":4.0,"end":4.0,"label":null}]}"#).unwrap();
        assert!(matches!(read_annotations(&p), Err(HieroError::Schema { field, .. }) if field == "segments[1].end"));
    }

    #[test]
    fn json_round_trips() {
        let dir = tempdir().unwrap();
        let ann = StepAnnotation {
            video_id: "v".into(),
            intervals: vec![
                StepInterval { start: 0.1, end: 2.0 / 3.0, label: Some(2) },
                StepInterval { start: 1.0, end: 5.0, label: None },
            ],
        };
        let p = dir.path().join("a.json");
        write_annotations(&p, &ann).unwrap();
        assert_eq!(read_annotations(&p).unwrap(), ann);

        let tax = Taxonomy::new(vec!["x".into()], DenseMatrix::from_rows(&[[0.1, 1.0 / 3.0]]).unwrap()).unwrap();
        let p = dir.path().join("t.json");
        write_taxonomy(&p, &tax).unwrap();
        assert_eq!(read_taxonomy(&p).unwrap(), tax);

        let preds = vec![VideoPredictions {
            video_id: "v".into(),
            predictions: vec![StepPrediction { start: 0.0, end: 1.0 / 7.0, label: Some(1), score: 0.3 }],
        }];
        let p = dir.path().join("p.json");
        write_predictions(&p, &preds).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), preds);
    }

    #[test]
    fn unknown_fields_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.json");
        fs::write(&p, r#"{"segments":[],"extra":1}"#).unwrap();
        assert!(matches!(read_annotations(&p), Err(HieroError::Json { .. })));
    }
}
