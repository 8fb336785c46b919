//! Run configuration mirroring every module default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HieroError, Result};
use crate::model::forward::ForwardOptions;
use crate::model::params::{Activation, ModelDims};
use crate::partition::DEFAULT_KAPPA;
use crate::synth::SynthSpec;
use crate::tasks::{DEFAULT_CONTEXT, DEFAULT_MIN_LEN, DEFAULT_PROCEDURE_K};
use crate::training::{GradCheckOptions, LossConfig, TrainConfig};

/// Architecture sizes; input and text widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub align_dim: usize,
    pub stages: usize,
    pub layers: usize,
    pub activation: Activation,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: 768, align_dim: 256, stages: 3, layers: 3, activation: Activation::Relu, init_seed: 0 }
    }
}

impl ModelConfig {
    /// Small sizes for gradient checks and toy training.
    pub fn toy() -> Self {
        ModelConfig { hidden: 8, align_dim: 8, stages: 2, layers: 3, ..Self::default() }
    }

    pub fn dims(&self, input_dim: usize, text_dim: usize) -> ModelDims {
        ModelDims {
            input_dim,
            text_dim,
            hidden: self.hidden,
            align_dim: self.align_dim,
            stages: self.stages,
            layers: self.layers,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub procedure_k: usize,
    /// 0 is the output; `s >= 1` the decoder stage `s - 1`.
    pub procedure_depth: usize,
    pub localize_k: usize,
    pub ground_k: usize,
    pub min_len: usize,
    /// Context added on both sides of retrieval clips, in seconds.
    pub context: f64,
    pub kappa: f64,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            procedure_k: DEFAULT_PROCEDURE_K,
            procedure_depth: 1,
            localize_k: DEFAULT_PROCEDURE_K,
            ground_k: DEFAULT_PROCEDURE_K,
            min_len: DEFAULT_MIN_LEN,
            context: DEFAULT_CONTEXT,
            kappa: DEFAULT_KAPPA,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Frame rate used to sample procedure labels.
    pub fps: f64,
    pub recall_ks: Vec<usize>,
    pub recall_thresholds: Vec<f64>,
    pub map_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            fps: 30.0,
            recall_ks: vec![1, 5],
            recall_thresholds: vec![0.3, 0.5],
            map_thresholds: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub videos: usize,
    #[serde(flatten)]
    pub spec: SynthSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { videos: 4, spec: SynthSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub forward: ForwardOptions,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub tasks: TaskConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub grad_check: GradCheckOptions,
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| HieroError::Json { path: origin.to_path_buf(), source: e })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HieroError::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.forward.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.synth.spec.validate()?;
        if self.tasks.min_len == 0 || self.tasks.procedure_k == 0 || self.tasks.localize_k == 0 || self.tasks.ground_k == 0 {
            return Err(HieroError::InvalidArgument("task K and min_len must be >= 1".into()));
        }
        if !(self.tasks.context >= 0.0) {
            return Err(HieroError::InvalidArgument("context must be >= 0".into()));
        }
        if !(self.eval.fps > 0.0) {
            return Err(HieroError::InvalidArgument("fps must be positive".into()));
        }
        self.model.dims(1, 1).validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_expose_constants() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert!(text.contains("\"temperature\": 0.05"));
        assert!(text.contains("\"edge_threshold\": 1.0"));
        assert!(text.contains("\"hidden\": 768"));
        assert_eq!(RunConfig::from_json(&text, Path::new("x")).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"loss": {"temprature": 0.1}}"#, Path::new("x")).is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#, Path::new("x")).is_err());
        assert!(RunConfig::from_json(r#"{"synth": {"sepration": 3}}"#, Path::new("x")).is_err());
        let partial = RunConfig::from_json(r#"{"tasks": {"procedure_k": 5}}"#, Path::new("x")).unwrap();
        assert_eq!(partial.tasks.procedure_k, 5);
        assert_eq!(partial.loss.temperature, 0.05);
        let s = RunConfig::from_json(r#"{"synth": {"separation": 3, "videos": 2}}"#, Path::new("x")).unwrap();
        assert_eq!((s.synth.spec.separation, s.synth.videos), (3.0, 2));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_json(r#"{"loss": {"alpha": 5, "beta": 4}}"#, Path::new("x")).is_err());
        assert!(RunConfig::from_json(r#"{"forward": {"k": 0}}"#, Path::new("x")).is_err());
    }
}
