//! Synthetic corpora where emotion intensity is a known scalar.
//!
//! Each speaker has a base pattern: per-channel means plus a sinusoidal
//! modulation over frames. A neutral utterance is that pattern plus white
//! noise. An utterance of class `c` with intensity `t` adds `t · signature(c)`,
//! where signatures are sparse, sign-random offsets on disjoint channel sets
//! (hence mutually orthogonal). `t` is kept only as metadata.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::features::{write_features, FeatureMatrix, INPUT_CHANNELS, PITCH_COLUMN};
use crate::{Error, Result, NEUTRAL};

const EMOTION_NAMES: [&str; 4] = ["amused", "angry", "disgusted", "sleepy"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_speakers: usize,
    /// Non-neutral classes.
    pub n_emotions: usize,
    /// Utterances per (speaker, emotion) cell, neutral included.
    pub utterances_per_cell: usize,
    /// Inclusive frame-count range.
    pub frame_length_range: [usize; 2],
    /// Seeds speaker patterns and signatures; shared by corpora that must
    /// describe the same "world" (e.g. train and held-out splits).
    pub base_pattern_seed: u64,
    pub intensity_range: [f64; 2],
    pub noise_sigma: f64,
    /// Non-zero channels per signature.
    pub signature_channels: usize,
    pub signature_scale: f64,
    /// Standard deviation of each speaker's per-channel offset from the
    /// shared means.
    pub speaker_spread: f64,
    /// Upper bound of the per-channel modulation amplitude.
    pub modulation_depth: f64,
    /// Range of the modulation period, in frames.
    pub modulation_period: [f64; 2],
    pub frame_rate_hz: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 2,
            n_emotions: 3,
            utterances_per_cell: 30,
            frame_length_range: [24, 40],
            base_pattern_seed: 1,
            intensity_range: [0.0, 1.0],
            noise_sigma: 0.05,
            signature_channels: 6,
            signature_scale: 1.0,
            speaker_spread: 0.3,
            modulation_depth: 0.5,
            modulation_period: [4.0, 8.0],
            frame_rate_hz: 40.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_speakers == 0 || self.n_emotions == 0 || self.utterances_per_cell == 0 {
            return fail("synthetic corpus needs speakers, emotions and utterances");
        }
        let [lo, hi] = self.frame_length_range;
        if lo == 0 || lo > hi {
            return fail("frame_length_range must satisfy 1 <= min <= max");
        }
        let [a, b] = self.intensity_range;
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return fail("intensity_range must lie within [0, 1]");
        }
        if !(self.modulation_depth >= 0.0 && self.speaker_spread >= 0.0 && self.signature_scale > 0.0) {
            return fail("modulation_depth and speaker_spread must be >= 0, signature_scale > 0");
        }
        let [p0, p1] = self.modulation_period;
        if !(p0 > 0.0 && p0 <= p1) {
            return fail("modulation_period must satisfy 0 < min <= max");
        }
        if !(self.noise_sigma >= 0.0) {
            return fail("noise_sigma must be >= 0");
        }
        if self.signature_channels == 0 || self.signature_channels * self.n_emotions > INPUT_CHANNELS {
            return fail("signatures must fit on disjoint channels");
        }
        Ok(())
    }

    pub fn emotion_names(&self) -> Vec<String> {
        (0..self.n_emotions)
            .map(|i| match EMOTION_NAMES.get(i) {
                Some(n) => n.to_string(),
                None => format!("emotion{i}"),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub utterance_id: String,
    pub speaker: String,
    pub emotion: String,
    pub true_intensity: f64,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub utterances: Vec<FeatureMatrix>,
    pub truth: Vec<SynthTruth>,
    pub world: SynthWorld,
}

/// Speaker patterns and emotion signatures derived from `base_pattern_seed`.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub speaker_mean: Vec<Vec<f64>>,
    pub speaker_amp: Vec<Vec<f64>>,
    pub speaker_phase: Vec<Vec<f64>>,
    pub speaker_period: Vec<f64>,
    pub signatures: Vec<Vec<f64>>,
}

impl SynthWorld {
    pub fn new(spec: &SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.base_pattern_seed);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let shared: Vec<f64> = (0..INPUT_CHANNELS).map(|_| unit.sample(&mut rng)).collect();
        let mut speaker_mean = Vec::new();
        let mut speaker_amp = Vec::new();
        let mut speaker_phase = Vec::new();
        let mut speaker_period = Vec::new();
        for _ in 0..spec.n_speakers {
            let mut mean: Vec<f64> = shared
                .iter()
                .map(|m| m + spec.speaker_spread * unit.sample(&mut rng))
                .collect();
            // log-F0 around 100–250 Hz
            mean[PITCH_COLUMN] = rng.random_range(100f64.ln()..250f64.ln());
            speaker_mean.push(mean);
            speaker_amp.push((0..INPUT_CHANNELS).map(|_| rng.random_range(0.0..=spec.modulation_depth)).collect());
            speaker_phase.push(
                (0..INPUT_CHANNELS)
                    .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                    .collect(),
            );
            speaker_period.push(rng.random_range(spec.modulation_period[0]..=spec.modulation_period[1]));
        }
        let mut channels: Vec<usize> = (0..INPUT_CHANNELS).collect();
        channels.shuffle(&mut rng);
        let signatures = (0..spec.n_emotions)
            .map(|c| {
                let mut s = vec![0.0; INPUT_CHANNELS];
                for &ch in &channels[c * spec.signature_channels..(c + 1) * spec.signature_channels] {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    s[ch] = sign * spec.signature_scale * rng.random_range(0.75..1.25);
                }
                s
            })
            .collect();
        Self {
            speaker_mean,
            speaker_amp,
            speaker_phase,
            speaker_period,
            signatures,
        }
    }

    /// Noise-free expected value of `frame` (fractional frames allowed) for a
    /// speaker, emotion class (None for neutral) and intensity.
    pub fn expected_frame(&self, speaker: usize, class: Option<usize>, t: f64, frame: f64) -> Vec<f64> {
        let period = self.speaker_period[speaker];
        (0..INPUT_CHANNELS)
            .map(|ch| {
                let base = self.speaker_mean[speaker][ch]
                    + self.speaker_amp[speaker][ch]
                        * (std::f64::consts::TAU * frame / period + self.speaker_phase[speaker][ch]).sin();
                let sig = class.map_or(0.0, |c| t * self.signatures[c][ch]);
                base + sig
            })
            .collect()
    }
}

/// Generates a corpus. Speakers, signatures and the channel layout come from
/// `spec.base_pattern_seed`; utterance lengths, intensities, phases and
/// noise come from `rng`.
pub fn generate<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<SynthCorpus> {
    spec.validate()?;
    let world = SynthWorld::new(spec);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid normal");
    let names = spec.emotion_names();
    let mut utterances = Vec::new();
    let mut truth = Vec::new();
    for spk in 0..spec.n_speakers {
        let speaker = format!("spk{spk}");
        let cells = std::iter::once((None, NEUTRAL.to_string()))
            .chain(names.iter().enumerate().map(|(c, n)| (Some(c), n.clone())));
        for (class, emotion) in cells {
            for k in 0..spec.utterances_per_cell {
                let t_len = rng.random_range(spec.frame_length_range[0]..=spec.frame_length_range[1]);
                let t = match class {
                    Some(_) => rng.random_range(spec.intensity_range[0]..=spec.intensity_range[1]),
                    None => 0.0,
                };
                let shift = rng.random_range(0.0..world.speaker_period[spk]);
                let mut frames = Vec::with_capacity(t_len * INPUT_CHANNELS);
                for f in 0..t_len {
                    let expected = world.expected_frame(spk, class, t, f as f64 + shift);
                    for (ch, v) in expected.into_iter().enumerate() {
                        let mut v = v + if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                        if ch == PITCH_COLUMN {
                            v = v.max(0.0);
                        }
                        frames.push(v as f32);
                    }
                }
                let id = format!("{speaker}_{emotion}_{k:03}");
                let fm = FeatureMatrix::new(frames, t_len, INPUT_CHANNELS, spec.frame_rate_hz)?
                    .with_labels(id.clone(), emotion.clone(), speaker.clone());
                utterances.push(fm);
                truth.push(SynthTruth {
                    utterance_id: id,
                    speaker: speaker.clone(),
                    emotion: emotion.clone(),
                    true_intensity: t,
                });
            }
        }
    }
    Ok(SynthCorpus {
        utterances,
        truth,
        world,
    })
}

/// Writes one `<id>.emof` per utterance plus `metadata.csv`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for fm in &corpus.utterances {
        write_features(fm, &dir.join(format!("{}.emof", fm.source_id)))?;
    }
    let meta = dir.join("metadata.csv");
    let mut w = csv::Writer::from_path(&meta)?;
    for t in &corpus.truth {
        w.serialize(t)?;
    }
    w.flush().map_err(|e| Error::io(&meta, e))?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<SynthTruth>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
