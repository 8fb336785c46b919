use hiero::io::FeatureSequence;
use hiero::model::forward::{forward, ForwardOptions, ForwardTrace};
use hiero::model::params::{init_params, Activation, ModelDims};
use hiero::synth::{generate, SynthSpec};
use hiero::DenseMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shifted(seq: &FeatureSequence, by: f64) -> FeatureSequence {
    let ts = seq.timestamps.iter().map(|t| t + by).collect();
    FeatureSequence::new(seq.video_id.clone(), ts, seq.features.clone(), seq.segment_duration).unwrap()
}

fn assignments(t: &ForwardTrace) -> Vec<Vec<usize>> {
    t.partitions.iter().map(|p| p.assignments.clone()).collect()
}

fn dims(input: usize) -> ModelDims {
    ModelDims { input_dim: input, text_dim: input, hidden: 32, align_dim: 16, stages: 3, layers: 3, activation: Activation::Relu }
}

#[test]
fn shifting_time_by_1000_s_leaves_outputs_unchanged() {
    let corpus = generate(&SynthSpec { num_threads: 2, steps_per_thread: 3, interleave: true, ..SynthSpec::default() }, 1).unwrap();
    let seq = &corpus.videos[0].features;
    let params = init_params(dims(seq.dim()), 4).unwrap();
    let opts = ForwardOptions::default();
    let a = forward(&params, seq, &opts).unwrap();
    let b = forward(&params, &shifted(seq, 1000.0), &opts).unwrap();
    assert_eq!(assignments(&a), assignments(&b));
    assert!(a.output.max_abs_diff(&b.output) <= 1e-12, "{}", a.output.max_abs_diff(&b.output));
    // shifted inputs carry their own rounding (ulp(1000) ~ 1e-13), so the
    // deeper graphs, whose values are larger, are held to a relative bound
    for s in 0..3 {
        for (x, y) in [(&a.encoder_graphs[s], &b.encoder_graphs[s]), (&a.decoder_graphs[s], &b.decoder_graphs[s])] {
            let scale = x.embeddings.max_abs().max(1.0);
            assert!(x.embeddings.max_abs_diff(&y.embeddings) <= 1e-12 * scale, "stage {s}");
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let corpus = generate(&SynthSpec { segments: 90, ..SynthSpec::default() }, 1).unwrap();
    let seq = &corpus.videos[0].features;
    let params = init_params(dims(seq.dim()), 1).unwrap();
    let opts = ForwardOptions { k: 5, ..ForwardOptions::default() };
    let a = forward(&params, seq, &opts).unwrap();
    let b = forward(&params, seq, &opts).unwrap();
    assert_eq!(a.output.data(), b.output.data());
    assert_eq!(a.partitions, b.partitions);
}

fn random_seq(n: usize, d: usize, seed: u64) -> FeatureSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * 16.0 / 30.0).collect();
    FeatureSequence::new("p", ts, DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0)), 16.0 / 30.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_has_one_row_per_input_segment(n in 1usize..40, seed in 0u64..100) {
        let seq = random_seq(n, 4, seed);
        let params = init_params(ModelDims { hidden: 6, align_dim: 3, stages: 3, layers: 1, ..dims(4) }, seed).unwrap();
        let trace = forward(&params, &seq, &ForwardOptions::default()).unwrap();
        prop_assert_eq!(trace.output.rows(), n);
        let mut expect = n;
        for g in &trace.encoder_graphs {
            expect = expect.div_ceil(2);
            prop_assert_eq!(g.len(), expect);
        }
    }

    #[test]
    fn shift_equivariance_for_random_offsets(seed in 0u64..100, by in 0.0f64..2000.0) {
        let seq = random_seq(30, 4, seed);
        let params = init_params(ModelDims { hidden: 8, align_dim: 4, stages: 2, layers: 2, ..dims(4) }, seed).unwrap();
        let opts = ForwardOptions { k: 3, ..ForwardOptions::default() };
        let a = forward(&params, &seq, &opts).unwrap();
        let b = forward(&params, &shifted(&seq, by), &opts).unwrap();
        prop_assert_eq!(assignments(&a), assignments(&b));
        prop_assert!(a.output.max_abs_diff(&b.output) <= 1e-12);
    }
}
