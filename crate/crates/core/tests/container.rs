use atdgnn_core::io::container::{decode_container, decode_manifest, encode_container};
use atdgnn_core::io::{read_container, read_manifest, write_container};
use atdgnn_core::signal::{EegRecording, TrialLabels};
use proptest::prelude::*;

fn recording() -> impl Strategy<Value = EegRecording> {
    (
        "[a-z0-9_-]{0,12}",
        1usize..6,
        prop::collection::vec((1usize..40, 0u8..2, 0u8..2), 1..5),
        0.5f64..5000.0,
        any::<u64>(),
    )
        .prop_flat_map(|(subject, channels, trials, fs, tag)| {
            let total: usize = trials.iter().map(|t| t.0).sum();
            // any finite f32, including subnormals and signed zero
            let value = any::<f32>().prop_filter("finite", |v| v.is_finite()).prop_map(f64::from);
            prop::collection::vec(prop::collection::vec(value, total), channels).prop_map(move |samples| {
                let mut start = 0;
                let mut bounds = Vec::new();
                for t in &trials {
                    bounds.push((start, start + t.0));
                    start += t.0;
                }
                EegRecording {
                    subject_id: subject.clone(),
                    channel_names: (0..samples.len()).map(|i| format!("e{i}-{:x}", tag % 97)).collect(),
                    sample_rate_hz: fs,
                    samples,
                    trial_boundaries: bounds,
                    labels: trials.iter().map(|t| TrialLabels { arousal: t.1, valence: t.2 }).collect(),
                }
            })
        })
}

fn bits(rec: &EegRecording) -> Vec<Vec<u64>> {
    rec.samples.iter().map(|ch| ch.iter().map(|v| v.to_bits()).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn container_round_trip_is_lossless(rec in recording()) {
        let bytes = encode_container(&rec, &[]).unwrap();
        let back = decode_container(&bytes).unwrap();
        prop_assert_eq!(bits(&back), bits(&rec));
        prop_assert_eq!(&back, &rec);

        let (manifest, payload) = decode_manifest(&bytes).unwrap();
        prop_assert_eq!(manifest.payload_bytes(), payload.len() as u64);
        let e = rec.channel_count() as u64;
        let lengths: u64 = rec.trial_boundaries.iter().map(|(s, t)| (t - s) as u64).sum();
        prop_assert_eq!(payload.len() as u64, e * lengths * 4);
    }
}

#[test]
fn file_round_trip_and_manifest_only_read() {
    let dir = std::env::temp_dir().join(format!("atdgnn-container-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("rec.bin");
    let rec = EegRecording {
        subject_id: "s01".into(),
        channel_names: vec!["Fz".into(), "Cz".into()],
        sample_rate_hz: 128.0,
        samples: vec![vec![0.5, -1.25, 3.0, 0.001953125], vec![-0.0, 2.0, f32::MIN_POSITIVE as f64, 7.0]],
        trial_boundaries: vec![(0, 1), (1, 4)],
        labels: vec![TrialLabels { arousal: 1, valence: 0 }, TrialLabels { arousal: 0, valence: 1 }],
    };
    write_container(&path, &rec, &["note".into()]).unwrap();
    assert_eq!(bits(&read_container(&path).unwrap()), bits(&rec));
    let m = read_manifest(&path).unwrap();
    assert_eq!(m.warnings, vec!["note".to_string()]);
    assert_eq!(m.trials[1].offset, 2 * 4);
    assert_eq!(m.trials[1].length, 3);
    let leftovers: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 1);
    std::fs::remove_dir_all(&dir).unwrap();
}
