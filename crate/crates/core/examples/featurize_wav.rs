//! Extracts log-mel, energy and pitch features from a WAV file and prints a
//! short summary. Without an argument a two-tone test signal is synthesized.
//!
//! cargo run --release --example featurize_wav [file.wav]

use emorank::features::{extract_features, read_wav, Audio, FeatureConfig, ENERGY_COLUMN, PITCH_COLUMN};

fn test_signal() -> Audio {
    let sr = 16_000;
    let samples = (0..sr)
        .map(|i| {
            let t = i as f64 / sr as f64;
            let f = if t < 0.5 { 150.0 } else { 220.0 };
            (0.4 * (std::f64::consts::TAU * f * t).sin()) as f32
        })
        .collect();
    Audio {
        samples,
        sample_rate_hz: sr as u32,
    }
}

fn main() -> emorank::Result<()> {
    let audio = match std::env::args().nth(1) {
        Some(path) => read_wav(path.as_ref())?,
        None => test_signal(),
    };
    let cfg = FeatureConfig::default();
    let fm = extract_features(&audio, &cfg)?;
    println!(
        "{} samples at {} Hz -> {} frames x {} channels ({:.1} frames/s)",
        audio.samples.len(),
        audio.sample_rate_hz,
        fm.n_frames(),
        fm.n_channels(),
        fm.frame_rate_hz
    );
    println!("{:>5} {:>9} {:>9} {:>9}", "frame", "max mel", "energy", "f0 (Hz)");
    for t in (0..fm.n_frames()).step_by((fm.n_frames() / 8).max(1)) {
        let row = fm.frame(t);
        let mel_max = row[..cfg.n_mels].iter().copied().fold(f32::MIN, f32::max);
        let f0 = if row[PITCH_COLUMN] > 0.0 { row[PITCH_COLUMN].exp() } else { 0.0 };
        println!("{t:>5} {mel_max:>9.3} {:>9.3} {f0:>9.1}", row[ENERGY_COLUMN]);
    }
    Ok(())
}
