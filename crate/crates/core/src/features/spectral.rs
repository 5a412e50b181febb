use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureConfig, LOG_FLOOR};
use crate::numerics::Tensor;
use crate::Result;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Triangular HTK filterbank, `n_mels × (n_fft/2 + 1)`, unnormalized peaks of 1.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64, fmin: f64, fmax: f64) -> Tensor {
    let n_bins = n_fft / 2 + 1;
    let lo = hz_to_mel(fmin);
    let hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Tensor::zeros(&[n_mels, n_bins]);
    let data = fb.data_mut();
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate / n_fft as f64;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            data[m * n_bins + k] = up.min(down).max(0.0);
        }
    }
    fb
}

pub(crate) struct Framer<'a> {
    samples: &'a [f32],
    win: usize,
    hop: usize,
    pub n_frames: usize,
}

impl<'a> Framer<'a> {
    pub fn new(samples: &'a [f32], cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let n_frames = cfg.n_frames(samples.len())?;
        Ok(Self {
            samples,
            win: cfg.win_len(),
            hop: cfg.hop_len(),
            n_frames,
        })
    }

    pub fn frame(&self, t: usize) -> &'a [f32] {
        &self.samples[t * self.hop..t * self.hop + self.win]
    }
}

struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Stft {
    fn new(win: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(win);
        Self {
            fft,
            window: hann_window(win),
        }
    }

    fn magnitude(&self, frame: &[f32]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex::new(*x as f64 * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf[..frame.len() / 2 + 1].iter().map(|c| c.norm()).collect()
    }
}

/// Log-mel spectrogram, `T × n_mels`.
///
/// Magnitude STFT with a Hann window of `win_len` samples (also the FFT
/// size), projected on an HTK filterbank and compressed as `ln(max(x, 1e-10))`.
pub fn extract_mel(samples: &[f32], cfg: &FeatureConfig) -> Result<Tensor> {
    let framer = Framer::new(samples, cfg)?;
    let win = cfg.win_len();
    let stft = Stft::new(win);
    let fb = mel_filterbank(
        cfg.n_mels,
        win,
        cfg.sample_rate_hz as f64,
        cfg.fmin_hz,
        cfg.fmax(),
    );
    let n_bins = win / 2 + 1;
    let mut out = Vec::with_capacity(framer.n_frames * cfg.n_mels);
    for t in 0..framer.n_frames {
        let mag = stft.magnitude(framer.frame(t));
        for m in 0..cfg.n_mels {
            let weights = &fb.data()[m * n_bins..(m + 1) * n_bins];
            let e: f64 = weights.iter().zip(&mag).map(|(w, x)| w * x).sum();
            out.push(e.max(LOG_FLOOR).ln());
        }
    }
    Ok(Tensor::matrix(framer.n_frames, cfg.n_mels, out)?)
}

/// Per-frame `ln(max(‖hann · frame‖₂, 1e-10))`.
pub fn extract_energy(samples: &[f32], cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let framer = Framer::new(samples, cfg)?;
    let window = hann_window(cfg.win_len());
    Ok((0..framer.n_frames)
        .map(|t| {
            let norm = framer
                .frame(t)
                .iter()
                .zip(&window)
                .map(|(x, w)| (*x as f64 * w).powi(2))
                .sum::<f64>()
                .sqrt();
            norm.max(LOG_FLOOR).ln()
        })
        .collect())
}
