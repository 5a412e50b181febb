use emorank::features::{read_features, INPUT_CHANNELS};
use emorank::synthcorpus::{generate, read_truth, write_corpus, SynthSpec, SynthWorld};
use emorank::NEUTRAL;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn channel_means(frames: &[&emorank::features::FeatureMatrix]) -> Vec<f64> {
    let mut sum = vec![0.0; INPUT_CHANNELS];
    let mut n = 0usize;
    for fm in frames {
        for t in 0..fm.n_frames() {
            for (s, v) in sum.iter_mut().zip(fm.frame(t)) {
                *s += *v as f64;
            }
            n += 1;
        }
    }
    sum.iter().map(|s| s / n as f64).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_intensity_is_neutral(seed in any::<u64>(), frame in -50.0f64..50.0, class in 0usize..3, spk in 0usize..2) {
        let w = SynthWorld::new(&SynthSpec { base_pattern_seed: seed, ..SynthSpec::default() });
        prop_assert_eq!(w.expected_frame(spk, Some(class), 0.0, frame), w.expected_frame(spk, None, 0.0, frame));
    }

    #[test]
    fn intensity_scales_the_signature(seed in any::<u64>(), frame in 0.0f64..50.0, class in 0usize..3, t in 0.0f64..=1.0) {
        let w = SynthWorld::new(&SynthSpec { base_pattern_seed: seed, ..SynthSpec::default() });
        let e = w.expected_frame(0, Some(class), t, frame);
        let n = w.expected_frame(0, None, 0.0, frame);
        for ch in 0..INPUT_CHANNELS {
            prop_assert!((e[ch] - n[ch] - t * w.signatures[class][ch]).abs() < 1e-12);
        }
    }
}

#[test]
fn full_intensity_mean_offset_is_the_signature() {
    let spec = SynthSpec {
        n_speakers: 1,
        intensity_range: [1.0, 1.0],
        modulation_depth: 0.0,
        utterances_per_cell: 40,
        ..SynthSpec::default()
    };
    let c = generate(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let neutral: Vec<_> = c.utterances.iter().filter(|f| f.is_neutral()).collect();
    let base = channel_means(&neutral);
    for (class, name) in spec.emotion_names().iter().enumerate() {
        let emo: Vec<_> = c.utterances.iter().filter(|f| &f.emotion == name).collect();
        let m = channel_means(&emo);
        for ch in 0..INPUT_CHANNELS {
            let diff = m[ch] - base[ch];
            assert!((diff - c.world.signatures[class][ch]).abs() < 0.01, "{name} ch{ch}: {diff}");
        }
    }
}

#[test]
fn signatures_are_sparse_and_disjoint() {
    let spec = SynthSpec::default();
    let w = SynthWorld::new(&spec);
    let mut used = [false; INPUT_CHANNELS];
    for s in &w.signatures {
        let support: Vec<usize> = (0..INPUT_CHANNELS).filter(|&ch| s[ch] != 0.0).collect();
        assert_eq!(support.len(), spec.signature_channels);
        for ch in support {
            assert!(!used[ch]);
            used[ch] = true;
        }
    }
}

#[test]
fn generation_is_deterministic_and_labelled() {
    let spec = SynthSpec {
        utterances_per_cell: 3,
        intensity_range: [0.2, 0.9],
        ..SynthSpec::default()
    };
    let a = generate(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = generate(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a.utterances, b.utterances);
    assert_eq!(a.truth, b.truth);
    let other = generate(&spec, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert_ne!(a.truth, other.truth);
    for (fm, t) in a.utterances.iter().zip(&a.truth) {
        assert_eq!(fm.source_id, t.utterance_id);
        assert_eq!(fm.emotion, t.emotion);
        if t.emotion == NEUTRAL {
            assert_eq!(t.true_intensity, 0.0);
        } else {
            assert!((0.2..=0.9).contains(&t.true_intensity));
        }
    }
}

#[test]
fn written_corpus_reads_back() {
    let spec = SynthSpec {
        utterances_per_cell: 2,
        ..SynthSpec::default()
    };
    let c = generate(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&c, dir.path()).unwrap();
    assert_eq!(read_truth(&dir.path().join("metadata.csv")).unwrap(), c.truth);
    for fm in &c.utterances {
        let back = read_features(&dir.path().join(format!("{}.emof", fm.source_id))).unwrap();
        assert_eq!(&back, fm);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = [
        SynthSpec { n_speakers: 0, ..SynthSpec::default() },
        SynthSpec { frame_length_range: [10, 5], ..SynthSpec::default() },
        SynthSpec { intensity_range: [0.5, 1.5], ..SynthSpec::default() },
        SynthSpec { modulation_period: [0.0, 4.0], ..SynthSpec::default() },
        SynthSpec { n_emotions: 40, ..SynthSpec::default() },
    ];
    for spec in bad {
        assert!(spec.validate().is_err(), "{spec:?}");
    }
}
