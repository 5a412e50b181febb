//! Mel-cepstral distortion and rank correlation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::{Error, Result};

/// Cepstral coefficients retained for MCD (c1..c13).
pub const MCD_ORDER: usize = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub units: String,
    pub n_items: usize,
    pub per_item: Vec<f64>,
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>12} {:>8}", "metric", "value", "items");
        let _ = writeln!(
            s,
            "{:<10} {:>9.4} {:<2} {:>8}",
            self.metric, self.value, self.units, self.n_items
        );
        s
    }
}

/// Mean per-frame `(10 / ln 10) · sqrt(2 · Σ_{d≥1} (a_d − b_d)²)` in dB.
///
/// Column 0 (the energy-like c0) is excluded. Inputs must already be
/// time-aligned and of equal shape.
pub fn mcd(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(mcd_report(a, b)?.value)
}

pub fn mcd_report(a: &Tensor, b: &Tensor) -> Result<MetricReport> {
    let (t, d) = a
        .dims2()
        .ok_or_else(|| Error::Dimension(format!("mcd expects T x D frames, got {:?}", a.shape())))?;
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "mcd shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if t == 0 || d == 0 {
        return Err(Error::Invalid("mcd needs at least one frame".into()));
    }
    let k = 10.0 / std::f64::consts::LN_10;
    let per_item: Vec<f64> = (0..t)
        .map(|r| {
            let sq: f64 = a.row(r)[1..]
                .iter()
                .zip(&b.row(r)[1..])
                .map(|(x, y)| (x - y).powi(2))
                .sum();
            k * (2.0 * sq).sqrt()
        })
        .collect();
    let value = per_item.iter().sum::<f64>() / t as f64;
    Ok(MetricReport {
        metric: "mcd".into(),
        value,
        units: "dB".into(),
        n_items: t,
        per_item,
    })
}

/// Orthonormal DCT-II of each log-mel frame, keeping `c0..=c_order`.
pub fn mel_cepstra(log_mel: &Tensor, order: usize) -> Result<Tensor> {
    let (t, n) = log_mel
        .dims2()
        .ok_or_else(|| Error::Dimension("mel_cepstra expects T x n_mels".into()))?;
    if order + 1 > n {
        return Err(Error::Dimension(format!(
            "cepstral order {order} needs more than {n} mel bands"
        )));
    }
    let width = order + 1;
    let mut out = Vec::with_capacity(t * width);
    let nf = n as f64;
    for r in 0..t {
        let row = log_mel.row(r);
        for k in 0..width {
            let norm = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            let s: f64 = row
                .iter()
                .enumerate()
                .map(|(m, v)| v * (std::f64::consts::PI * k as f64 * (m as f64 + 0.5) / nf).cos())
                .sum();
            out.push(norm * s);
        }
    }
    Ok(Tensor::matrix(t, width, out)?)
}

/// Fractional ranks (1-based), ties share their average rank.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Invalid(format!(
            "correlation needs two equal-length series of at least 2 (got {}, {})",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Invalid("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average-rank ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Invalid("spearman needs equal lengths >= 2".into()));
    }
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_frame_single_dim() {
        let a = Tensor::matrix(1, 2, vec![5.0, 1.0]).unwrap();
        let b = Tensor::matrix(1, 2, vec![-3.0, 0.0]).unwrap();
        let expect = 10.0 / std::f64::consts::LN_10 * 2f64.sqrt();
        assert!((mcd(&a, &b).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 6.141851).abs() < 1e-6);
    }

    #[test]
    fn mcd_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 3]);
        assert!(mcd(&a, &b).is_err());
    }

    #[test]
    fn spearman_hand_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(spearman(&[3.0, 1.0, 2.0], &[30.0, 10.0, 20.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ties_take_average_rank() {
        assert_eq!(fractional_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn dct_of_constant_frame_is_c0_only() {
        let m = Tensor::full(&[1, 20], 2.0);
        let c = mel_cepstra(&m, 13).unwrap();
        assert!((c.data()[0] - 2.0 * 20f64.sqrt()).abs() < 1e-12);
        assert!(c.data()[1..].iter().all(|v| v.abs() < 1e-12));
    }
}
