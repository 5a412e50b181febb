mod common;

use common::{scaled, silence, tone, white_noise, SR};
use emorank::features::{
    extract_energy, extract_features, extract_mel, extract_pitch, features_from_bytes, features_to_bytes,
    read_features, read_wav, write_features, FeatureConfig, FeatureMatrix, INPUT_CHANNELS, LOG_FLOOR,
    PITCH_COLUMN,
};
use emorank::Error;
use proptest::prelude::*;

fn floor() -> f64 {
    LOG_FLOOR.ln()
}

/// HTK centre frequencies, computed from the mel formula directly.
fn centre_frequencies(n_mels: usize, fmax: f64) -> Vec<f64> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    (1..=n_mels)
        .map(|i| hz(mel(fmax) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

#[test]
fn one_second_of_silence() {
    let cfg = FeatureConfig::default();
    let mel = extract_mel(&silence(1.0).samples, &cfg).unwrap();
    assert_eq!(mel.shape(), &[39, 80]);
    assert!(mel.data().iter().all(|v| *v == floor()));
    let energy = extract_energy(&silence(1.0).samples, &cfg).unwrap();
    assert_eq!(energy.len(), 39);
    assert!(energy.iter().all(|v| *v == floor()));
    let pitch = extract_pitch(&silence(1.0).samples, &cfg).unwrap();
    assert!(pitch.iter().all(|v| *v == 0.0));
}

#[test]
fn pure_tone_peaks_in_one_mel_band() {
    let cfg = FeatureConfig::default();
    let mel = extract_mel(&tone(440.0, 0.5, 1.0).samples, &cfg).unwrap();
    let argmax: Vec<usize> = (0..mel.shape()[0])
        .map(|t| {
            let row = mel.row(t);
            (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()
        })
        .collect();
    assert!(argmax.iter().all(|&m| m == argmax[0]), "{argmax:?}");
    let centres = centre_frequencies(80, 8000.0);
    let m = argmax[0];
    let half_span = (centres[m + 1] - centres[m - 1]) / 2.0;
    assert!((centres[m] - 440.0).abs() <= half_span, "band {m} centred at {}", centres[m]);
}

#[test]
fn doubling_amplitude_adds_ln2() {
    let cfg = FeatureConfig::default();
    let quiet = white_noise(4, 0.25, 0.5);
    let loud = scaled(&quiet, 2.0);
    let a = extract_mel(&quiet.samples, &cfg).unwrap();
    let b = extract_mel(&loud.samples, &cfg).unwrap();
    let mut checked = 0;
    for (x, y) in a.data().iter().zip(b.data()) {
        if *x > floor() + 10.0 {
            assert!((y - x - 2f64.ln()).abs() < 1e-9);
            checked += 1;
        }
    }
    assert!(checked * 2 > a.numel());
    let ea = extract_energy(&quiet.samples, &cfg).unwrap();
    let eb = extract_energy(&loud.samples, &cfg).unwrap();
    for (x, y) in ea.iter().zip(&eb) {
        assert!((y - x - 2f64.ln()).abs() < 1e-9);
    }
}

#[test]
fn pitch_of_a_200_hz_tone() {
    let cfg = FeatureConfig::default();
    let pitch = extract_pitch(&tone(200.0, 0.5, 1.0).samples, &cfg).unwrap();
    let voiced: Vec<f64> = pitch.iter().copied().filter(|v| *v > 0.0).collect();
    assert!(voiced.len() >= pitch.len() * 9 / 10);
    for v in voiced {
        assert!((v.exp() - 200.0).abs() < 5.0, "estimated {} Hz", v.exp());
    }
}

#[test]
fn white_noise_is_mostly_unvoiced() {
    let cfg = FeatureConfig::default();
    for seed in 0..3 {
        let pitch = extract_pitch(&white_noise(seed, 0.5, 2.0).samples, &cfg).unwrap();
        let unvoiced = pitch.iter().filter(|v| **v == 0.0).count();
        assert!(unvoiced * 10 >= pitch.len() * 9, "{unvoiced}/{}", pitch.len());
    }
}

#[test]
fn energy_matches_brute_force_norm() {
    let cfg = FeatureConfig::default();
    let audio = white_noise(9, 0.8, 1.3);
    let energy = extract_energy(&audio.samples, &cfg).unwrap();
    let (win, hop) = (800, 400);
    let expected_frames = (audio.samples.len() - win) / hop + 1;
    assert_eq!(energy.len(), expected_frames);
    for (t, e) in energy.iter().enumerate() {
        let frame = &audio.samples[t * hop..t * hop + win];
        let sq: f64 = frame
            .iter()
            .enumerate()
            .map(|(n, x)| {
                let w = 0.5 * (1.0 - (std::f64::consts::TAU * n as f64 / win as f64).cos());
                (*x as f64 * w).powi(2)
            })
            .sum();
        assert!((e - sq.sqrt().ln()).abs() < 1e-6);
    }
}

#[test]
fn streams_are_frame_aligned_and_deterministic() {
    let cfg = FeatureConfig::default();
    for audio in [tone(310.0, 0.3, 0.77), white_noise(1, 0.2, 0.61)] {
        let a = extract_features(&audio, &cfg).unwrap();
        let b = extract_features(&audio, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_channels(), INPUT_CHANNELS);
        let t = extract_mel(&audio.samples, &cfg).unwrap().shape()[0];
        assert_eq!(t, a.n_frames());
        assert_eq!(t, extract_pitch(&audio.samples, &cfg).unwrap().len());
        assert_eq!(t, extract_energy(&audio.samples, &cfg).unwrap().len());
        assert!(a.frames().iter().all(|v| v.is_finite()));
        assert!((0..t).all(|r| a.frame(r)[PITCH_COLUMN] >= 0.0));
    }
}

#[test]
fn wav_files_are_read_as_normalized_mono() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tone.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SR,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for v in [0i16, 16384, -32768, 32767] {
        w.write_sample(v).unwrap();
    }
    w.finalize().unwrap();
    let audio = read_wav(&path).unwrap();
    assert_eq!(audio.sample_rate_hz, SR);
    assert_eq!(audio.samples, vec![0.0, 0.5, -1.0, 32767.0 / 32768.0]);

    let stereo = dir.path().join("stereo.wav");
    let mut w = hound::WavWriter::create(&stereo, hound::WavSpec { channels: 2, ..spec }).unwrap();
    w.write_sample(0i16).unwrap();
    w.write_sample(0i16).unwrap();
    w.finalize().unwrap();
    assert!(matches!(read_wav(&stereo), Err(Error::Audio(_))));
}

#[test]
fn corrupted_file_is_a_checksum_error() {
    let fm = FeatureMatrix::new(vec![0.5; 6], 2, 3, 40.0).unwrap();
    let mut bytes = features_to_bytes(&fm);
    let last_value = bytes.len() - 5;
    bytes[last_value] ^= 0x01;
    assert!(matches!(features_from_bytes(&bytes), Err(Error::Checksum { .. })));
    let mut bytes = features_to_bytes(&fm);
    bytes[0] = b'X';
    assert!(matches!(features_from_bytes(&bytes), Err(Error::BadMagic { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn emof_round_trip_is_bitwise(
        t in 1usize..20,
        c in 1usize..90,
        bits in proptest::collection::vec(any::<u32>(), 20 * 90),
        rate in 1.0f64..200.0,
        label in "[a-z]{0,8}",
    ) {
        // Arbitrary finite f32 bit patterns, including subnormals and -0.0.
        let frames: Vec<f32> = bits[..t * c]
            .iter()
            .map(|b| f32::from_bits(*b))
            .map(|v| if v.is_finite() { v } else { 1.0 })
            .collect();
        let fm = FeatureMatrix::new(frames, t, c, rate)
            .unwrap()
            .with_labels(format!("utt_{label}"), label.clone(), "spk".to_string());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.emof");
        write_features(&fm, &path).unwrap();
        let back = read_features(&path).unwrap();
        let a: Vec<u32> = fm.frames().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.frames().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back.frame_rate_hz.to_bits(), rate.to_bits());
        prop_assert_eq!(&back.emotion, &label);
        prop_assert_eq!(features_to_bytes(&back), std::fs::read(&path).unwrap());
    }
}
