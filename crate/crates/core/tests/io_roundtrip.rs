use hiero::io::{read_feature_file, read_predictions, write_feature_file, write_predictions, FeatureSequence, StepPrediction, VideoPredictions};
use hiero::{DenseMatrix, HieroError};
use proptest::prelude::*;

fn sequence() -> impl Strategy<Value = FeatureSequence> {
    (0usize..20, 1usize..6).prop_flat_map(|(n, d)| {
        (prop::collection::vec(0.01f64..3.0, n), prop::collection::vec(-1e3f32..1e3, n * d), 0.05f64..2.0).prop_map(
            move |(gaps, vals, dur)| {
                let ts: Vec<f64> = gaps.iter().scan(0.0, |t, g| { *t += g; Some(*t) }).collect();
                let x = DenseMatrix::from_vec(n, d, vals.iter().map(|&v| v as f64).collect()).unwrap();
                FeatureSequence::new("clip", ts, x, dur).unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_files_round_trip(seq in sequence()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.bin");
        write_feature_file(&path, &seq).unwrap();
        let back = read_feature_file(&path).unwrap();
        prop_assert_eq!(back, seq);
    }

    #[test]
    fn malformed_feature_bytes_error_without_panicking(bytes in prop::collection::vec(any::<u8>(), 0..200), keep_magic in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        let mut data = bytes;
        if keep_magic {
            let mut v = b"HIEROFT1".to_vec();
            v.extend_from_slice(&data);
            data = v;
        }
        std::fs::write(&path, &data).unwrap();
        // only a well-formed file may succeed; everything else reports an error
        if let Ok(seq) = read_feature_file(&path) {
            prop_assert_eq!(data.len(), 24 + seq.len() * 8 + seq.len() * seq.dim() * 4);
        }
    }

    #[test]
    fn truncating_a_valid_file_is_detected(seq in sequence(), cut in 1usize..64) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.bin");
        write_feature_file(&path, &seq).unwrap();
        let data = std::fs::read(&path).unwrap();
        let cut = cut.min(data.len());
        std::fs::write(&path, &data[..data.len() - cut]).unwrap();
        let err = read_feature_file(&path).unwrap_err();
        prop_assert!(matches!(err, HieroError::Truncated { .. } | HieroError::BadMagic { .. }), "{err}");
    }

    #[test]
    fn predictions_round_trip(items in prop::collection::vec((0.0f64..100.0, 0.1f64..10.0, prop::option::of(0usize..9), -5.0f64..5.0), 0..10)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.json");
        let videos = vec![VideoPredictions {
            video_id: "v0".into(),
            predictions: items.iter().map(|&(s, l, label, score)| StepPrediction { start: s, end: s + l, label, score }).collect(),
        }];
        write_predictions(&path, &videos).unwrap();
        prop_assert_eq!(read_predictions(&path).unwrap(), videos);
    }
}

#[test]
fn unknown_json_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pred.json");
    std::fs::write(&path, r#"{"videos":[{"video_id":"a","predictions":[],"extra":1}]}"#).unwrap();
    assert!(matches!(read_predictions(&path), Err(HieroError::Json { .. })));
}

#[test]
fn decreasing_timestamps_are_rejected() {
    let x = DenseMatrix::zeros(2, 1);
    let err = FeatureSequence::new("v", vec![1.0, 0.5], x, 0.5).unwrap_err();
    assert!(matches!(err, HieroError::NonIncreasingTimestamps { index: 1, .. }));
}
