//! Emotion intensity ranking for controllable emotional speech synthesis.
//!
//! An Intensity Extractor (feed-forward transformer blocks plus an additive
//! emotion embedding) is trained on Mixup pairs of emotional and neutral
//! utterances with a joint soft-label cross-entropy and pairwise sigmoid
//! rank objective. The trained extractor scores a corpus; scores are
//! bucketed into Min/Median/Max levels per emotion, and the averaged
//! representations form a codebook that turns manual intensity labels into
//! per-phoneme conditioning vectors for a TTS acoustic model.
//!
//! Pipeline, by module:
//!
//! - [`features`]: log-mel, pitch, energy extraction and the `EMOF` file format
//! - [`mixup`]: pair construction and the normalized rank target
//! - [`extractor`]: the Intensity Extractor, classifier head and score projector
//! - [`losses`]: mixup cross-entropy, rank loss, weighted total
//! - [`training`]: pair sampling and the Adam training loop with checkpoints
//! - [`codebook`]: scoring, bucketing, phoneme averaging, conditioning
//! - [`synthcorpus`]: synthetic corpora with known intensity
//! - [`evalmetrics`]: mel-cepstral distortion and Spearman correlation
//! - [`cli`]: the command implementations behind the `emorank` binary

pub mod cli;
pub mod codebook;
pub mod emotion;
pub mod evalmetrics;
pub mod extractor;
pub mod features;
pub mod losses;
pub mod mixup;
pub mod numerics;
pub mod synthcorpus;
pub mod training;

mod binio;
mod error;

pub use error::{Error, Result};

/// Label of the neutral emotion class.
pub const NEUTRAL: &str = "neutral";
