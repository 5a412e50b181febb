//! Autocorrelation F0 tracker.
//!
//! Each frame is scored by its normalized autocorrelation over lags that
//! correspond to 60–400 Hz. A frame is voiced when the best peak reaches
//! [`VOICING_THRESHOLD`]; the earliest local peak within 90% of the best
//! one is taken as the period (avoids picking a multiple of it), refined by
//! parabolic interpolation.

use std::path::Path;

use super::spectral::Framer;
use super::FeatureConfig;
use crate::{Error, Result};

pub const F0_MIN_HZ: f64 = 60.0;
pub const F0_MAX_HZ: f64 = 400.0;
pub const VOICING_THRESHOLD: f64 = 0.3;
const PEAK_RATIO: f64 = 0.9;

/// Per-frame log-F0, 0 for unvoiced frames.
pub fn extract_pitch(samples: &[f32], cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let framer = Framer::new(samples, cfg)?;
    let sr = cfg.sample_rate_hz as f64;
    let win = cfg.win_len();
    let lag_min = ((sr / F0_MAX_HZ).floor() as usize).max(2);
    let lag_max = ((sr / F0_MIN_HZ).ceil() as usize).min(win.saturating_sub(2));
    Ok((0..framer.n_frames)
        .map(|t| match frame_f0(framer.frame(t), sr, lag_min, lag_max) {
            Some(f0) => f0.ln(),
            None => 0.0,
        })
        .collect())
}

fn normalized_autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len() - lag;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let a = x[i];
        let b = x[i + lag];
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    let denom = (xx * yy).sqrt();
    if denom <= 1e-12 {
        0.0
    } else {
        xy / denom
    }
}

fn frame_f0(frame: &[f32], sr: f64, lag_min: usize, lag_max: usize) -> Option<f64> {
    if lag_max <= lag_min + 1 {
        return None;
    }
    let mean = frame.iter().map(|v| *v as f64).sum::<f64>() / frame.len() as f64;
    let x: Vec<f64> = frame.iter().map(|v| *v as f64 - mean).collect();
    if x.iter().map(|v| v * v).sum::<f64>() < 1e-12 {
        return None;
    }
    // r[k] is the lag lag_min - 1 + k, so every candidate has both neighbours.
    let r: Vec<f64> = (lag_min - 1..=lag_max + 1)
        .map(|lag| normalized_autocorrelation(&x, lag))
        .collect();
    let peaks: Vec<usize> = (1..r.len() - 1)
        .filter(|&k| r[k] >= r[k - 1] && r[k] >= r[k + 1])
        .collect();
    let best = peaks.iter().map(|&k| r[k]).fold(f64::NEG_INFINITY, f64::max);
    if best < VOICING_THRESHOLD {
        return None;
    }
    let k = *peaks.iter().find(|&&k| r[k] >= PEAK_RATIO * best)?;
    let (a, b, c) = (r[k - 1], r[k], r[k + 1]);
    let curvature = a - 2.0 * b + c;
    let shift = if curvature.abs() > 1e-12 {
        (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let lag = (lag_min - 1 + k) as f64 + shift;
    Some(sr / lag)
}

/// Converts F0 in Hz (≤ 0 meaning unvoiced) to the pitch-column encoding.
pub fn pitch_from_hz(f0_hz: &[f64]) -> Vec<f64> {
    f0_hz
        .iter()
        .map(|&f| if f > 0.0 { f.ln() } else { 0.0 })
        .collect()
}

/// Reads precomputed F0 values: a CSV with header `f0_hz`, one row per
/// frame. Returned in the pitch-column encoding.
pub fn read_pitch_csv(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "f0_hz")
        .ok_or_else(|| Error::Invalid(format!("{}: missing f0_hz column", path.display())))?;
    let mut hz = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let v: f64 = rec
            .get(col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        hz.push(v);
    }
    Ok(pitch_from_hz(&hz))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(hz: f64, secs: f64) -> Vec<f32> {
        let n = (16_000.0 * secs) as usize;
        (0..n)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * hz * i as f64 / 16_000.0).sin()) as f32)
            .collect()
    }

    #[test]
    fn tracks_low_and_high_tones() {
        let cfg = FeatureConfig::default();
        for hz in [80.0, 150.0, 333.0] {
            let p = extract_pitch(&tone(hz, 0.5), &cfg).unwrap();
            for v in p {
                assert!(v > 0.0);
                assert!((v.exp() - hz).abs() < 0.02 * hz, "{hz}: {}", v.exp());
            }
        }
    }

    #[test]
    fn unvoiced_encoding() {
        assert_eq!(pitch_from_hz(&[0.0, -1.0, 100.0]), vec![0.0, 0.0, 100f64.ln()]);
    }
}
