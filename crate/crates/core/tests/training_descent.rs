use hiero::io::{FeatureSequence, NarrationSet};
use hiero::model::forward::ForwardOptions;
use hiero::model::params::{init_params, Activation, ModelDims};
use hiero::synth::{generate, SynthSpec};
use hiero::training::losses::LossConfig;
use hiero::training::trainer::{train_toy, TrainConfig};

fn corpus(seed: u64, videos: usize) -> Vec<(FeatureSequence, NarrationSet)> {
    let spec = SynthSpec { num_threads: 2, steps_per_thread: 2, segments: 60, dim: 16, interleave: true, narration_stride: 3, seed, ..SynthSpec::default() };
    generate(&spec, videos).unwrap().videos.into_iter().map(|v| (v.features, v.narrations)).collect()
}

fn dims() -> ModelDims {
    ModelDims { input_dim: 16, text_dim: 16, hidden: 8, align_dim: 8, stages: 2, layers: 2, activation: Activation::Relu }
}

#[test]
fn two_thread_training_lowers_the_loss() {
    let data = corpus(3, 6);
    let cfg = TrainConfig { epochs: 8, batch: 3, lr: 0.05, warmup_epochs: 1, seed: 0 };
    let fopts = ForwardOptions { k: 2, ..ForwardOptions::default() };
    let out = train_toy(init_params(dims(), 0).unwrap(), &data, &cfg, &fopts, &LossConfig::default(), None).unwrap();
    assert!(out.final_loss < out.initial_loss, "{} -> {}", out.initial_loss, out.final_loss);
    assert_eq!(out.history.len(), 8);
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let data = corpus(4, 3);
    let p0 = init_params(dims(), 2).unwrap();
    let cfg = TrainConfig { epochs: 2, batch: 2, lr: 0.0, warmup_epochs: 0, seed: 1 };
    let mut log = Vec::new();
    let out = train_toy(p0.clone(), &data, &cfg, &ForwardOptions::default(), &LossConfig::default(), Some(&mut log)).unwrap();
    assert_eq!(out.params, p0);
    assert_eq!(out.initial_loss, out.final_loss);
    assert_eq!(String::from_utf8(log).unwrap().lines().count(), 2);
}
