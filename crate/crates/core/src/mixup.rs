//! Mixup pairs: two convex combinations of the same emotional and neutral
//! utterance with independent weights, plus the soft rank target.

use rand::distr::{Distribution, Open01};
use rand::Rng;

use crate::emotion::EmotionVocab;
use crate::features::FeatureMatrix;
use crate::numerics::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct MixPair {
    pub x_mix_i: Tensor,
    pub x_mix_j: Tensor,
    pub lambda_i: f64,
    pub lambda_j: f64,
    pub y_emo: usize,
    pub y_neu: usize,
    pub lambda_diff: f64,
    /// Crop offsets into the emotional and neutral sources.
    pub offsets: (usize, usize),
}

/// One side of a pair: frames plus emotion class.
#[derive(Debug, Clone, Copy)]
pub struct MixSource<'a> {
    pub frames: &'a Tensor,
    pub class: usize,
}

/// Two independent draws from Beta(1, 1), i.e. uniform on the open interval (0, 1).
pub fn sample_lambdas<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let i: f64 = Open01.sample(rng);
    let j: f64 = Open01.sample(rng);
    (i, j)
}

/// `(λ_i − λ_j + 1) / 2`.
pub fn lambda_diff(lambda_i: f64, lambda_j: f64) -> f64 {
    (lambda_i - lambda_j + 1.0) / 2.0
}

/// Frames `offset..offset + len` of a `T × C` tensor.
pub fn crop(x: &Tensor, offset: usize, len: usize) -> Result<Tensor> {
    let (t, c) = x
        .dims2()
        .ok_or_else(|| Error::Dimension(format!("expected T x C frames, got {:?}", x.shape())))?;
    if offset + len > t {
        return Err(Error::Dimension(format!("crop {offset}+{len} exceeds {t} frames")));
    }
    Ok(Tensor::matrix(len, c, x.data()[offset * c..(offset + len) * c].to_vec())?)
}

/// Both inputs cropped to the shorter length at uniformly random offsets.
#[derive(Debug, Clone)]
pub struct Aligned {
    pub emo: Tensor,
    pub neu: Tensor,
    pub emo_offset: usize,
    pub neu_offset: usize,
}

pub fn align_lengths<R: Rng + ?Sized>(x_emo: &Tensor, x_neu: &Tensor, rng: &mut R) -> Result<Aligned> {
    let (te, ce) = x_emo.dims2().ok_or_else(|| Error::Dimension("x_emo is not T x C".into()))?;
    let (tn, cn) = x_neu.dims2().ok_or_else(|| Error::Dimension("x_neu is not T x C".into()))?;
    if te == 0 || tn == 0 {
        return Err(Error::Invalid("cannot align empty sequences".into()));
    }
    if ce != cn {
        return Err(Error::Dimension(format!("channel counts differ: {ce} vs {cn}")));
    }
    let t = te.min(tn);
    let emo_offset = rng.random_range(0..=te - t);
    let neu_offset = rng.random_range(0..=tn - t);
    Ok(Aligned {
        emo: crop(x_emo, emo_offset, t)?,
        neu: crop(x_neu, neu_offset, t)?,
        emo_offset,
        neu_offset,
    })
}

/// `λ·a + (1 − λ)·b`, exact at the endpoints and kept inside `[min, max]`.
fn convex(a: f64, b: f64, lambda: f64) -> f64 {
    if lambda == 1.0 {
        return a;
    }
    if lambda == 0.0 {
        return b;
    }
    let v = b + lambda * (a - b);
    v.clamp(a.min(b), a.max(b))
}

/// Elementwise convex combination of two equally shaped tensors.
pub fn mix(x_emo: &Tensor, x_neu: &Tensor, lambda: f64) -> Result<Tensor> {
    if x_emo.shape() != x_neu.shape() {
        return Err(Error::Dimension(format!(
            "cannot mix {:?} with {:?}",
            x_emo.shape(),
            x_neu.shape()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Invalid(format!("mix weight {lambda} outside [0, 1]")));
    }
    let data = x_emo
        .data()
        .iter()
        .zip(x_neu.data())
        .map(|(a, b)| convex(*a, *b, lambda))
        .collect();
    Ok(Tensor::new(x_emo.shape().to_vec(), data)?)
}

/// Builds a pair with freshly sampled weights.
pub fn make_mix_pair<R: Rng + ?Sized>(
    emo: MixSource<'_>,
    neu: MixSource<'_>,
    rng: &mut R,
) -> Result<MixPair> {
    let (li, lj) = sample_lambdas(rng);
    make_mix_pair_with(emo, neu, li, lj, rng)
}

/// Builds a pair with the given weights; `rng` only drives the crop offsets.
pub fn make_mix_pair_with<R: Rng + ?Sized>(
    emo: MixSource<'_>,
    neu: MixSource<'_>,
    lambda_i: f64,
    lambda_j: f64,
    rng: &mut R,
) -> Result<MixPair> {
    if emo.class == EmotionVocab::NEUTRAL_CLASS {
        return Err(Error::Invalid("emotional source of a mix pair is neutral".into()));
    }
    if neu.class != EmotionVocab::NEUTRAL_CLASS {
        return Err(Error::Invalid("neutral source of a mix pair is not neutral".into()));
    }
    let aligned = align_lengths(emo.frames, neu.frames, rng)?;
    Ok(MixPair {
        x_mix_i: mix(&aligned.emo, &aligned.neu, lambda_i)?,
        x_mix_j: mix(&aligned.emo, &aligned.neu, lambda_j)?,
        lambda_i,
        lambda_j,
        y_emo: emo.class,
        y_neu: neu.class,
        lambda_diff: lambda_diff(lambda_i, lambda_j),
        offsets: (aligned.emo_offset, aligned.neu_offset),
    })
}

/// [`make_mix_pair`] on labelled feature matrices.
pub fn make_feature_mix_pair<R: Rng + ?Sized>(
    x_emo: &FeatureMatrix,
    x_neu: &FeatureMatrix,
    vocab: &EmotionVocab,
    rng: &mut R,
) -> Result<MixPair> {
    if x_emo.is_neutral() {
        return Err(Error::Invalid(format!("{} is neutral", x_emo.source_id)));
    }
    if !x_neu.is_neutral() {
        return Err(Error::Invalid(format!("{} is not neutral", x_neu.source_id)));
    }
    let e = x_emo.to_tensor();
    let n = x_neu.to_tensor();
    make_mix_pair(
        MixSource {
            frames: &e,
            class: vocab.index(&x_emo.emotion)?,
        },
        MixSource {
            frames: &n,
            class: vocab.index(&x_neu.emotion)?,
        },
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(t: usize, c: usize, base: f64) -> Tensor {
        Tensor::matrix(t, c, (0..t * c).map(|k| base + k as f64).collect()).unwrap()
    }

    #[test]
    fn lambda_diff_cases() {
        assert_eq!(lambda_diff(0.8, 0.3), 0.75);
        assert_eq!(lambda_diff(0.4, 0.4), 0.5);
        assert!(lambda_diff(0.2, 0.7) < 0.5);
    }

    #[test]
    fn equal_lengths_use_offset_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = ramp(5, 3, 0.0);
        let b = ramp(5, 3, 100.0);
        let al = align_lengths(&a, &b, &mut rng).unwrap();
        assert_eq!((al.emo_offset, al.neu_offset), (0, 0));
        assert_eq!(al.emo, a);
        assert_eq!(al.neu, b);
    }

    #[test]
    fn min_length_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let al = align_lengths(&ramp(100, 2, 0.0), &ramp(60, 2, 0.0), &mut rng).unwrap();
        assert_eq!(al.emo.dims2(), Some((60, 2)));
        assert_eq!(al.neu.dims2(), Some((60, 2)));
        assert_eq!(al.neu_offset, 0);
    }

    #[test]
    fn label_violations_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = ramp(4, 2, 0.0);
        let neutral = MixSource { frames: &x, class: 0 };
        let angry = MixSource { frames: &x, class: 2 };
        assert!(make_mix_pair(neutral, neutral, &mut rng).is_err());
        assert!(make_mix_pair(angry, angry, &mut rng).is_err());
        assert!(make_mix_pair(angry, neutral, &mut rng).is_ok());
    }

    #[test]
    fn mix_rejects_out_of_range_weight() {
        let x = ramp(2, 2, 0.0);
        assert!(mix(&x, &x, 1.5).is_err());
    }
}
