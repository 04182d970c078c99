use masa_core::posedata::{
    add_noise, gen_synthetic, gen_synthetic_split, load_sequences, normalize_sequence, read_sequences,
    save_sequences, write_sequences, PoseSequence, Split, SyntheticSpec, NUM_JOINTS,
};
use proptest::prelude::*;

#[test]
fn dataset_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    let data = gen_synthetic(4, 3, 10, 8).unwrap();
    save_sequences(&data, &path).unwrap();
    let back = load_sequences(&path, true).unwrap();
    assert_eq!(back.sequences, data.sequences);
    assert_eq!(back.num_classes, 4);
}

#[test]
fn missing_labels_rejected_only_when_expected() {
    let seq = gen_synthetic(2, 1, 8, 0).unwrap().sequences.remove(0);
    let bare = PoseSequence::new("x", None, seq.coords().to_vec(), seq.conf().to_vec()).unwrap();
    let mut buf = Vec::new();
    write_sequences(&mut buf, &[bare]).unwrap();
    assert!(read_sequences(buf.as_slice(), false).is_ok());
    assert!(read_sequences(buf.as_slice(), true).is_err());
}

#[test]
fn noise_has_requested_spread_and_is_keyed_by_seed() {
    let seq = gen_synthetic(2, 1, 40, 1).unwrap().sequences.remove(0);
    let sigma = 3.0;
    let noisy = add_noise(&seq, sigma, 7).unwrap();
    let diffs: Vec<f64> = seq
        .coords()
        .iter()
        .zip(noisy.coords())
        .flat_map(|(a, b)| [b[0] - a[0], b[1] - a[1]])
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    // 3920 draws: the standard error of the mean is ~0.05, of the sd ~0.034
    assert!(mean.abs() < 0.25, "mean {mean}");
    assert!((sd - sigma).abs() < 0.2, "sd {sd}");
    assert_eq!(noisy.conf(), seq.conf());
    assert_eq!(add_noise(&seq, sigma, 7).unwrap(), noisy);
    assert_ne!(add_noise(&seq, sigma, 8).unwrap(), noisy);
    assert_eq!(add_noise(&seq, 0.0, 7).unwrap(), seq);
    assert!(add_noise(&seq, -1.0, 7).is_err());
}

/// Nearest class mean on normalized coordinates: a floor on how separable the
/// generated classes are.
#[test]
fn synthetic_classes_are_separable_by_nearest_mean() {
    let spec = SyntheticSpec::new(10, 20, 48, 7);
    let train = gen_synthetic_split(&spec, Split::Train).unwrap();
    let test = gen_synthetic_split(&spec, Split::Test).unwrap();
    let width = 48 * NUM_JOINTS * 2;
    let flat = |s: &PoseSequence| -> Vec<f64> { normalize_sequence(s).iter().flat_map(|p| *p).collect() };
    let mut means = vec![vec![0.0; width]; 10];
    for s in &train.sequences {
        let c = s.label().unwrap();
        for (m, v) in means[c].iter_mut().zip(flat(s)) {
            *m += v / 20.0;
        }
    }
    let hits = test
        .sequences
        .iter()
        .filter(|s| {
            let x = flat(s);
            let best = (0..10)
                .min_by(|&a, &b| {
                    let d = |c: usize| x.iter().zip(&means[c]).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            Some(best) == s.label()
        })
        .count();
    assert!(hits * 100 >= 60 * test.len(), "{hits}/{} correct", test.len());
    assert!(train.sequences.iter().all(|s| s.id().starts_with("train-")));
    assert!(test.sequences.iter().all(|s| s.id().starts_with("test-")));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn arbitrary_sequences_round_trip(
        frames in 8usize..12,
        seed in any::<u64>(),
        label in prop::option::of(0usize..50),
    ) {
        let base = gen_synthetic(2, 1, frames, seed).unwrap().sequences.remove(0);
        let seq = PoseSequence::new(format!("p-{seed}"), label, base.coords().to_vec(), base.conf().to_vec()).unwrap();
        let mut buf = Vec::new();
        write_sequences(&mut buf, std::slice::from_ref(&seq)).unwrap();
        let back = read_sequences(buf.as_slice(), false).unwrap();
        prop_assert_eq!(back, vec![seq]);
    }
}
