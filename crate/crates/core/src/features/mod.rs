//! Acoustic input features: log-mel spectrogram, log-F0 and log-energy,
//! concatenated per frame into a [`FeatureMatrix`].

mod audio;
mod io;
mod norm;
mod pitch;
mod spectral;

pub use audio::{read_wav, Audio};
pub use io::{features_from_bytes, features_to_bytes, read_features, write_features};
pub use norm::NormStats;
pub use pitch::{extract_pitch, pitch_from_hz, read_pitch_csv};
pub use spectral::{extract_energy, extract_mel, hann_window, mel_filterbank, hz_to_mel, mel_to_hz};

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::{Error, Result};

/// Number of channels in an extractor input frame: 80 mel + pitch + energy.
pub const INPUT_CHANNELS: usize = 82;
/// Column holding log-F0 (0 for unvoiced frames).
pub const PITCH_COLUMN: usize = 80;
/// Column holding log-energy.
pub const ENERGY_COLUMN: usize = 81;
/// Floor applied before every log compression.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate_hz: u32,
    pub window_ms: f64,
    pub overlap_ratio: f64,
    pub n_mels: usize,
    pub fmin_hz: f64,
    /// Upper edge of the filterbank; Nyquist when unset.
    pub fmax_hz: Option<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            window_ms: 50.0,
            overlap_ratio: 0.5,
            n_mels: 80,
            fmin_hz: 0.0,
            fmax_hz: None,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_ms > 0.0) {
            return Err(Error::Config("window_ms must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_ratio) {
            return Err(Error::Config("overlap_ratio must be in [0, 1)".into()));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be >= 1".into()));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample_rate_hz must be > 0".into()));
        }
        if self.hop_len() == 0 {
            return Err(Error::Config("window too short for the overlap ratio".into()));
        }
        if self.fmin_hz < 0.0 || self.fmin_hz >= self.fmax() {
            return Err(Error::Config("need 0 <= fmin_hz < fmax_hz".into()));
        }
        Ok(())
    }

    /// Window length in samples.
    pub fn win_len(&self) -> usize {
        (self.sample_rate_hz as f64 * self.window_ms / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.win_len() as f64 * (1.0 - self.overlap_ratio)).round() as usize
    }

    pub fn fmax(&self) -> f64 {
        self.fmax_hz.unwrap_or(self.sample_rate_hz as f64 / 2.0)
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.hop_len() as f64
    }

    /// `floor((N − win) / hop) + 1`, or an error when `N < win`.
    pub fn n_frames(&self, n_samples: usize) -> Result<usize> {
        let win = self.win_len();
        if n_samples < win || win == 0 {
            return Err(Error::Audio(format!(
                "audio of {n_samples} samples is shorter than one {win}-sample window"
            )));
        }
        Ok((n_samples - win) / self.hop_len() + 1)
    }
}

/// Frame sequence with its labels. Stored as `f32`, row-major `T × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: Vec<f32>,
    n_frames: usize,
    n_channels: usize,
    pub frame_rate_hz: f64,
    pub source_id: String,
    pub emotion: String,
    pub speaker: String,
}

impl FeatureMatrix {
    pub fn new(
        frames: Vec<f32>,
        n_frames: usize,
        n_channels: usize,
        frame_rate_hz: f64,
    ) -> Result<Self> {
        if n_frames == 0 || n_channels == 0 {
            return Err(Error::Invalid("feature matrix needs T >= 1 and C >= 1".into()));
        }
        if frames.len() != n_frames * n_channels {
            return Err(Error::Dimension(format!(
                "{} values for {n_frames} x {n_channels}",
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("feature matrix contains non-finite values".into()));
        }
        Ok(Self {
            frames,
            n_frames,
            n_channels,
            frame_rate_hz,
            source_id: String::new(),
            emotion: String::new(),
            speaker: String::new(),
        })
    }

    pub fn with_labels(
        mut self,
        source_id: impl Into<String>,
        emotion: impl Into<String>,
        speaker: impl Into<String>,
    ) -> Self {
        self.source_id = source_id.into();
        self.emotion = emotion.into();
        self.speaker = speaker.into();
        self
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.n_channels..(t + 1) * self.n_channels]
    }

    pub fn is_neutral(&self) -> bool {
        self.emotion == crate::NEUTRAL
    }

    /// Checks the extractor input layout: 82 channels, non-negative pitch.
    pub fn check_input_layout(&self) -> Result<()> {
        if self.n_channels != INPUT_CHANNELS {
            return Err(Error::Dimension(format!(
                "{}: expected {INPUT_CHANNELS} channels, found {}",
                self.source_id, self.n_channels
            )));
        }
        if (0..self.n_frames).any(|t| self.frame(t)[PITCH_COLUMN] < 0.0) {
            return Err(Error::Invalid(format!(
                "{}: negative value in pitch column",
                self.source_id
            )));
        }
        Ok(())
    }

    /// Converts to an `f64` tensor of shape `T × C`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(
            self.n_frames,
            self.n_channels,
            self.frames.iter().map(|&v| v as f64).collect(),
        )
        .expect("consistent by construction")
    }
}

/// Mel, pitch and energy for one utterance, concatenated per frame.
pub fn extract_features(audio: &Audio, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    extract_features_with_pitch(audio, cfg, None)
}

/// Like [`extract_features`], but takes the pitch column (log-F0, 0 for
/// unvoiced) from `pitch` when given instead of estimating it.
pub fn extract_features_with_pitch(
    audio: &Audio,
    cfg: &FeatureConfig,
    pitch: Option<&[f64]>,
) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if audio.sample_rate_hz != cfg.sample_rate_hz {
        return Err(Error::Audio(format!(
            "sample rate {} does not match configured {}",
            audio.sample_rate_hz, cfg.sample_rate_hz
        )));
    }
    let mel = extract_mel(&audio.samples, cfg)?;
    let energy = extract_energy(&audio.samples, cfg)?;
    let estimated;
    let pitch = match pitch {
        Some(p) => {
            if p.len() != energy.len() {
                return Err(Error::Dimension(format!(
                    "imported pitch has {} frames, audio has {}",
                    p.len(),
                    energy.len()
                )));
            }
            if p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::Invalid("imported pitch must be finite and >= 0".into()));
            }
            p
        }
        None => {
            estimated = extract_pitch(&audio.samples, cfg)?;
            &estimated[..]
        }
    };
    let t_len = energy.len();
    let n_mels = cfg.n_mels;
    let channels = n_mels + 2;
    let mut frames = Vec::with_capacity(t_len * channels);
    for t in 0..t_len {
        frames.extend(mel.row(t).iter().map(|&v| v as f32));
        frames.push(pitch[t] as f32);
        frames.push(energy[t] as f32);
    }
    FeatureMatrix::new(frames, t_len, channels, cfg.frame_rate_hz())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_framing() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.win_len(), 800);
        assert_eq!(cfg.hop_len(), 400);
        assert_eq!(cfg.n_frames(16_000).unwrap(), 39);
        assert!(cfg.n_frames(799).is_err());
        assert_eq!(cfg.frame_rate_hz(), 40.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = FeatureConfig::default();
        cfg.overlap_ratio = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = FeatureConfig::default();
        cfg.n_mels = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = FeatureConfig::default();
        cfg.window_ms = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn frame_aligned_columns() {
        let cfg = FeatureConfig::default();
        let samples: Vec<f32> = (0..20_000)
            .map(|n| (2.0 * std::f32::consts::PI * 150.0 * n as f32 / 16_000.0).sin() * 0.3)
            .collect();
        let audio = Audio {
            samples,
            sample_rate_hz: 16_000,
        };
        let fm = extract_features(&audio, &cfg).unwrap();
        assert_eq!(fm.n_channels(), INPUT_CHANNELS);
        assert_eq!(fm.n_frames(), cfg.n_frames(20_000).unwrap());
        fm.check_input_layout().unwrap();
    }

    #[test]
    fn imported_pitch_must_match_frames() {
        let cfg = FeatureConfig::default();
        let audio = Audio {
            samples: vec![0.0; 16_000],
            sample_rate_hz: 16_000,
        };
        assert!(extract_features_with_pitch(&audio, &cfg, Some(&[0.0; 3])).is_err());
        let fm = extract_features_with_pitch(&audio, &cfg, Some(&[5.0; 39])).unwrap();
        assert_eq!(fm.frame(0)[PITCH_COLUMN], 5.0);
    }
}
