use super::FeatureMatrix;
use crate::numerics::Tensor;
use crate::{Error, Result};

const MIN_STD: f64 = 1e-6;

/// Per-channel z-score statistics over a training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Mean and population standard deviation over every frame of `corpus`.
    /// Channels with (near-)zero spread get a unit divisor.
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for fm in corpus {
            if sum.is_empty() {
                sum = vec![0.0; fm.n_channels()];
                sq = vec![0.0; fm.n_channels()];
            } else if fm.n_channels() != sum.len() {
                return Err(Error::Dimension(format!(
                    "{}: {} channels, corpus has {}",
                    fm.source_id,
                    fm.n_channels(),
                    sum.len()
                )));
            }
            for t in 0..fm.n_frames() {
                for (c, v) in fm.frame(t).iter().enumerate() {
                    let v = *v as f64;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += fm.n_frames();
        }
        if count == 0 {
            return Err(Error::Invalid("cannot fit normalization on an empty corpus".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / n - m * m).max(0.0).sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes a `T × C` tensor in place.
    pub fn apply(&self, x: &mut Tensor) -> Result<()> {
        let c = self.channels();
        if x.dims2().map(|d| d.1) != Some(c) {
            return Err(Error::Dimension(format!(
                "normalizer has {c} channels, input shape {:?}",
                x.shape()
            )));
        }
        for row in x.data_mut().chunks_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}
