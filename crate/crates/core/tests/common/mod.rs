#![allow(dead_code)]

use emorank::extractor::ExtractorConfig;
use emorank::features::Audio;
use emorank::synthcorpus::{generate, SynthCorpus, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SR: u32 = 16_000;

pub fn silence(seconds: f64) -> Audio {
    Audio {
        samples: vec![0.0; (SR as f64 * seconds) as usize],
        sample_rate_hz: SR,
    }
}

pub fn tone(freq_hz: f64, amplitude: f32, seconds: f64) -> Audio {
    let n = (SR as f64 * seconds) as usize;
    let samples = (0..n)
        .map(|i| amplitude * (std::f64::consts::TAU * freq_hz * i as f64 / SR as f64).sin() as f32)
        .collect();
    Audio {
        samples,
        sample_rate_hz: SR,
    }
}

pub fn white_noise(seed: u64, amplitude: f32, seconds: f64) -> Audio {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (SR as f64 * seconds) as usize;
    Audio {
        samples: (0..n).map(|_| amplitude * rng.random_range(-1.0f32..1.0)).collect(),
        sample_rate_hz: SR,
    }
}

pub fn scaled(audio: &Audio, gain: f32) -> Audio {
    Audio {
        samples: audio.samples.iter().map(|s| s * gain).collect(),
        sample_rate_hz: audio.sample_rate_hz,
    }
}

/// Small extractor used by the training-level tests.
pub fn small_extractor() -> ExtractorConfig {
    ExtractorConfig {
        hidden_dim: 16,
        n_fft_blocks: 1,
        n_heads: 2,
        conv_kernel: 3,
        conv_filter_dim: 32,
        projector_hidden: 8,
        ..ExtractorConfig::default()
    }
}

/// Extractor used for the synthetic ranking runs.
pub fn ranking_extractor() -> ExtractorConfig {
    ExtractorConfig {
        hidden_dim: 32,
        n_fft_blocks: 2,
        n_heads: 2,
        conv_kernel: 3,
        conv_filter_dim: 64,
        projector_hidden: 16,
        ..ExtractorConfig::default()
    }
}

pub fn small_corpus(utterances_per_cell: usize, seed: u64) -> SynthCorpus {
    let spec = SynthSpec {
        utterances_per_cell,
        frame_length_range: [8, 14],
        intensity_range: [0.4, 1.0],
        ..SynthSpec::default()
    };
    generate(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Random ordered, non-overlapping intervals inside `[0, duration]`; short
/// ones often contain no frame centre.
pub fn random_alignment(rng: &mut ChaCha8Rng, duration: f64) -> emorank::codebook::PhonemeAlignment {
    let p = rng.random_range(1..=8);
    let mut cuts: Vec<f64> = (0..2 * p).map(|_| rng.random_range(0.0..=duration)).collect();
    cuts.sort_by(f64::total_cmp);
    let entries = cuts
        .chunks(2)
        .enumerate()
        .map(|(k, w)| emorank::codebook::Phoneme {
            symbol: format!("p{k}"),
            start_s: w[0],
            end_s: w[1],
        })
        .collect();
    emorank::codebook::PhonemeAlignment::new(entries).unwrap()
}

/// Interval means computed frame by frame: frames whose centre lies in
/// `[start, end)`, else the frame centred nearest the interval midpoint.
pub fn brute_force_phoneme_means(
    frames: &[Vec<f64>],
    align: &emorank::codebook::PhonemeAlignment,
    hop_s: f64,
    win_s: f64,
) -> Vec<Vec<f64>> {
    let centre = |k: usize| k as f64 * hop_s + win_s / 2.0;
    let dim = frames[0].len();
    align
        .entries
        .iter()
        .map(|p| {
            let mut members: Vec<usize> = Vec::new();
            for k in 0..frames.len() {
                if centre(k) >= p.start_s && centre(k) < p.end_s {
                    members.push(k);
                }
            }
            if members.is_empty() {
                let mid = (p.start_s + p.end_s) / 2.0;
                let mut best = 0;
                for k in 1..frames.len() {
                    if (centre(k) - mid).abs() < (centre(best) - mid).abs() {
                        best = k;
                    }
                }
                members.push(best);
            }
            (0..dim)
                .map(|d| members.iter().map(|&k| frames[k][d]).sum::<f64>() / members.len() as f64)
                .collect()
        })
        .collect()
}
