//! Mel-cepstral distortion between the log-mel features of a harmonic
//! signal and progressively noisier copies.
//!
//! cargo run --release --example mcd_report

use emorank::evalmetrics::{mcd_report, mel_cepstra, MCD_ORDER};
use emorank::features::{extract_mel, FeatureConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> emorank::Result<()> {
    let cfg = FeatureConfig::default();
    let sr = cfg.sample_rate_hz as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let clean: Vec<f32> = (0..16_000)
        .map(|i| {
            let t = i as f64 / sr;
            let voiced: f64 = (1..=20)
                .map(|h| (std::f64::consts::TAU * 140.0 * h as f64 * t).sin() / h as f64)
                .sum();
            (0.2 * voiced + 0.005 * rng.random_range(-1.0..1.0)) as f32
        })
        .collect();
    let reference = mel_cepstra(&extract_mel(&clean, &cfg)?, MCD_ORDER)?;
    println!("{:>10} {:>10}", "noise amp", "MCD (dB)");
    for amp in [0.0f32, 0.005, 0.02, 0.05, 0.2] {
        let noisy: Vec<f32> = clean.iter().map(|s| s + amp * rng.random_range(-1.0f32..1.0)).collect();
        let report = mcd_report(&reference, &mel_cepstra(&extract_mel(&noisy, &cfg)?, MCD_ORDER)?)?;
        println!("{amp:>10} {:>10.3}", report.value);
    }
    Ok(())
}
