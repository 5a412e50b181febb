//! Scoring, intensity bucketing, and phoneme-level conditioning.
//!
//! A trained model scores every non-neutral utterance. Per emotion, scores
//! are split into `n_bins` levels and the representations in each level are
//! averaged into one vector. At synthesis time, manual (emotion, level)
//! labels per phoneme are looked up in that codebook; neutral phonemes get
//! the zero vector. For reference utterances, frame-level intensity is
//! averaged over forced-alignment intervals instead.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::extractor::{pool, IntensitySequence, RankModel};
use crate::features::{FeatureConfig, FeatureMatrix};
use crate::numerics::Tensor;
use crate::{Error, Result, NEUTRAL};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub utterance_id: String,
    pub speaker: String,
    pub emotion: String,
    pub score: f64,
    pub pooled: Vec<f64>,
    /// Kept only when requested; used by frame-level averaging.
    pub intensity: Option<IntensitySequence>,
}

/// Scores every non-neutral utterance, unmixed and in eval mode. Order of
/// the output follows the input.
pub fn score_corpus(model: &RankModel, utterances: &[FeatureMatrix], keep_frames: bool) -> Result<Vec<ScoreRecord>> {
    utterances
        .par_iter()
        .filter(|fm| !fm.is_neutral())
        .map(|fm| {
            let class = model.vocab.index(&fm.emotion)?;
            let x = model.normalize(fm)?;
            let seq = model.forward_normalized(&x, class)?;
            let pooled = pool(&seq)?;
            let score = model.project_score(&pooled)?.0;
            Ok(ScoreRecord {
                utterance_id: fm.source_id.clone(),
                speaker: fm.speaker.clone(),
                emotion: fm.emotion.clone(),
                score,
                pooled,
                intensity: keep_frames.then_some(seq),
            })
        })
        .collect()
}

/// `utterance_id,speaker,emotion,score` CSV.
pub fn write_scores(records: &[ScoreRecord], path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        utterance_id: &'a str,
        speaker: &'a str,
        emotion: &'a str,
        score: f64,
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(Row {
            utterance_id: &r.utterance_id,
            speaker: &r.speaker,
            emotion: &r.emotion,
            score: r.score,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinPolicy {
    /// Equal-frequency bins over sorted scores.
    Quantile,
    /// Equal-width bins after min-max normalization of the scores.
    FixedWidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelAveraging {
    /// Mean of the utterance-level pooled vectors.
    Pooled,
    /// Mean of every frame of every utterance in the bin.
    Frames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookConfig {
    pub n_bins: usize,
    pub bin_policy: BinPolicy,
    pub averaging: LevelAveraging,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            n_bins: 3,
            bin_policy: BinPolicy::Quantile,
            averaging: LevelAveraging::Pooled,
        }
    }
}

/// Level names from lowest to highest score.
pub fn level_names(n_bins: usize) -> Vec<String> {
    match n_bins {
        3 => vec!["Min".into(), "Median".into(), "Max".into()],
        2 => vec!["Min".into(), "Max".into()],
        1 => vec!["Median".into()],
        n => (1..=n).map(|k| format!("L{k}")).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionLevels {
    pub boundaries: Vec<f64>,
    pub levels: BTreeMap<String, Vec<f64>>,
    pub mean_scores: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityCodebook {
    #[serde(flatten)]
    pub emotions: BTreeMap<String, EmotionLevels>,
    pub neutral: Vec<f64>,
    pub provenance: BTreeMap<String, String>,
}

impl IntensityCodebook {
    pub fn dim(&self) -> usize {
        self.neutral.len()
    }

    pub fn vector(&self, emotion: &str, level: Option<&str>) -> Result<&[f64]> {
        if emotion == NEUTRAL {
            return Ok(&self.neutral);
        }
        let entry = self
            .emotions
            .get(emotion)
            .ok_or_else(|| Error::Invalid(format!("emotion {emotion:?} not in codebook")))?;
        let level = level.ok_or_else(|| Error::Invalid(format!("{emotion} needs an intensity level")))?;
        entry
            .levels
            .get(level)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Invalid(format!("level {level:?} not in codebook for {emotion}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cb: Self = serde_json::from_str(s)?;
        if cb.neutral.iter().any(|v| *v != 0.0) {
            return Err(Error::Invalid("codebook neutral vector must be zero".into()));
        }
        for (e, lv) in &cb.emotions {
            if lv.levels.values().any(|v| v.len() != cb.neutral.len()) {
                return Err(Error::Dimension(format!("{e}: level vector width differs from neutral")));
            }
        }
        Ok(cb)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Bin index of each element of `scores`, plus the bin boundaries.
pub fn assign_bins(scores: &[f64], n_bins: usize, policy: BinPolicy) -> Result<(Vec<usize>, Vec<f64>)> {
    let n = scores.len();
    if n_bins == 0 {
        return Err(Error::Config("n_bins must be >= 1".into()));
    }
    if n < n_bins {
        return Err(Error::Invalid(format!("{n} records cannot fill {n_bins} bins")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Invalid("scores must be finite".into()));
    }
    let mut bins = vec![0; n];
    let mut boundaries = Vec::with_capacity(n_bins - 1);
    match policy {
        BinPolicy::Quantile => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
            for k in 0..n_bins {
                for &i in &order[k * n / n_bins..(k + 1) * n / n_bins] {
                    bins[i] = k;
                }
                if k > 0 {
                    let cut = k * n / n_bins;
                    boundaries.push((scores[order[cut - 1]] + scores[order[cut]]) / 2.0);
                }
            }
        }
        BinPolicy::FixedWidth => {
            let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            for (b, s) in bins.iter_mut().zip(scores) {
                let u = if span > 0.0 { (s - lo) / span } else { 0.0 };
                *b = ((u * n_bins as f64).ceil() as usize).saturating_sub(1).min(n_bins - 1);
            }
            for k in 1..n_bins {
                boundaries.push(lo + span * k as f64 / n_bins as f64);
            }
            for k in 0..n_bins {
                if !bins.contains(&k) {
                    return Err(Error::Invalid(format!("fixed-width bin {k} is empty")));
                }
            }
        }
    }
    Ok((bins, boundaries))
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows {
        acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        n += 1;
    }
    acc.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    acc
}

/// Buckets records per emotion and averages each bucket.
pub fn build_codebook(records: &[ScoreRecord], cfg: &CodebookConfig) -> Result<IntensityCodebook> {
    let dim = records
        .first()
        .map(|r| r.pooled.len())
        .ok_or_else(|| Error::Invalid("no scored records".into()))?;
    let names = level_names(cfg.n_bins);
    let mut by_emotion: BTreeMap<&str, Vec<&ScoreRecord>> = BTreeMap::new();
    for r in records {
        if r.emotion == NEUTRAL {
            return Err(Error::Invalid(format!("{} is neutral", r.utterance_id)));
        }
        if r.pooled.len() != dim {
            return Err(Error::Dimension(format!("{}: pooled width differs", r.utterance_id)));
        }
        by_emotion.entry(&r.emotion).or_default().push(r);
    }
    let mut emotions = BTreeMap::new();
    for (emotion, recs) in by_emotion {
        let scores: Vec<f64> = recs.iter().map(|r| r.score).collect();
        let (bins, boundaries) = assign_bins(&scores, cfg.n_bins, cfg.bin_policy)
            .map_err(|e| Error::Invalid(format!("{emotion}: {e}")))?;
        let mut levels = BTreeMap::new();
        let mut mean_scores = BTreeMap::new();
        let mut counts = BTreeMap::new();
        let mut ordered = Vec::new();
        for (k, name) in names.iter().enumerate() {
            let members: Vec<&ScoreRecord> = recs
                .iter()
                .zip(&bins)
                .filter(|(_, b)| **b == k)
                .map(|(r, _)| *r)
                .collect();
            let vector = match cfg.averaging {
                LevelAveraging::Pooled => mean_rows(members.iter().map(|r| r.pooled.as_slice()), dim),
                LevelAveraging::Frames => {
                    let mut frames = Vec::new();
                    for r in &members {
                        let seq = r.intensity.as_ref().ok_or_else(|| {
                            Error::Invalid(format!("{}: frame averaging needs kept frames", r.utterance_id))
                        })?;
                        frames.extend((0..seq.n_frames()).map(|t| seq.frame(t)));
                    }
                    mean_rows(frames.into_iter(), dim)
                }
            };
            let mean = members.iter().map(|r| r.score).sum::<f64>() / members.len() as f64;
            ordered.push((mean, vector.clone()));
            levels.insert(name.clone(), vector);
            mean_scores.insert(name.clone(), mean);
            counts.insert(name.clone(), members.len());
        }
        if ordered.windows(2).any(|w| w[0].0 >= w[1].0 || w[0].1 == w[1].1) {
            log::warn!("{emotion}: intensity levels are degenerate (tied scores or equal vectors)");
        }
        emotions.insert(
            emotion.to_string(),
            EmotionLevels {
                boundaries,
                levels,
                mean_scores,
                counts,
            },
        );
    }
    let provenance = BTreeMap::from([
        ("bin_policy".to_string(), serde_json::to_value(cfg.bin_policy)?.as_str().unwrap_or("").to_string()),
        ("averaging".to_string(), serde_json::to_value(cfg.averaging)?.as_str().unwrap_or("").to_string()),
        ("n_bins".to_string(), cfg.n_bins.to_string()),
    ]);
    Ok(IntensityCodebook {
        emotions,
        neutral: vec![0.0; dim],
        provenance,
    })
}

/// Mapping between frame indices and time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameClock {
    pub hop_s: f64,
    pub win_s: f64,
}

impl FrameClock {
    /// Frames of width `1/rate` laid end to end.
    pub fn from_rate(frame_rate_hz: f64) -> Self {
        let hop = 1.0 / frame_rate_hz;
        Self { hop_s: hop, win_s: hop }
    }

    pub fn from_features(cfg: &FeatureConfig) -> Self {
        Self {
            hop_s: cfg.hop_len() as f64 / cfg.sample_rate_hz as f64,
            win_s: cfg.win_len() as f64 / cfg.sample_rate_hz as f64,
        }
    }

    pub fn center(&self, k: usize) -> f64 {
        k as f64 * self.hop_s + self.win_s / 2.0
    }

    pub fn duration(&self, n_frames: usize) -> f64 {
        if n_frames == 0 {
            0.0
        } else {
            (n_frames - 1) as f64 * self.hop_s + self.win_s
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phoneme {
    pub symbol: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhonemeAlignment {
    pub entries: Vec<Phoneme>,
}

const ALIGNMENT_HEADER: &str = "#phonemes v1";
const LABELS_HEADER: &str = "#labels v1";

impl PhonemeAlignment {
    pub fn new(entries: Vec<Phoneme>) -> Result<Self> {
        let a = Self { entries };
        a.validate(None)?;
        Ok(a)
    }

    /// Ordered, non-overlapping, non-negative intervals ending no later than
    /// `duration_s` (when given).
    pub fn validate(&self, duration_s: Option<f64>) -> Result<()> {
        let mut prev_end = 0.0;
        for (k, p) in self.entries.iter().enumerate() {
            if !(p.start_s.is_finite() && p.end_s.is_finite()) || p.start_s < 0.0 {
                return Err(Error::Alignment(format!("phoneme {k} ({}) has invalid times", p.symbol)));
            }
            if p.end_s < p.start_s {
                return Err(Error::Alignment(format!("phoneme {k} ({}) ends before it starts", p.symbol)));
            }
            if p.start_s < prev_end {
                return Err(Error::Alignment(format!("phoneme {k} ({}) overlaps its predecessor", p.symbol)));
            }
            prev_end = p.end_s;
        }
        if let Some(d) = duration_s {
            if prev_end > d + 1e-9 {
                return Err(Error::Alignment(format!(
                    "alignment ends at {prev_end} s, utterance lasts {d} s"
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(ALIGNMENT_HEADER) {
            return Err(Error::Alignment(format!("missing {ALIGNMENT_HEADER:?} header")));
        }
        let mut entries = Vec::new();
        for (k, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let [symbol, start, end] = cols[..] else {
                return Err(Error::Alignment(format!("line {}: expected 3 tab-separated fields", k + 2)));
            };
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Alignment(format!("line {}: bad time {s:?}", k + 2)))
            };
            entries.push(Phoneme {
                symbol: symbol.to_string(),
                start_s: num(start)?,
                end_s: num(end)?,
            });
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{ALIGNMENT_HEADER}\n");
        for p in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}", p.symbol, p.start_s, p.end_s);
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Indices of the frames assigned to each phoneme: those whose centers fall
/// in `[start, end)`, or the single frame nearest the interval midpoint when
/// none do.
pub fn phoneme_frames(n_frames: usize, align: &PhonemeAlignment, clock: &FrameClock) -> Result<Vec<Vec<usize>>> {
    if n_frames == 0 {
        return Err(Error::Invalid("no frames to average".into()));
    }
    align.validate(Some(clock.duration(n_frames) + clock.hop_s))?;
    Ok(align
        .entries
        .iter()
        .map(|p| {
            let inside: Vec<usize> = (0..n_frames)
                .filter(|&k| {
                    let c = clock.center(k);
                    c >= p.start_s && c < p.end_s
                })
                .collect();
            if !inside.is_empty() {
                return inside;
            }
            let mid = (p.start_s + p.end_s) / 2.0;
            let nearest = (0..n_frames)
                .min_by(|&a, &b| {
                    (clock.center(a) - mid)
                        .abs()
                        .total_cmp(&(clock.center(b) - mid).abs())
                })
                .expect("n_frames >= 1");
            vec![nearest]
        })
        .collect())
}

/// Per-phoneme mean of an intensity sequence, `P × hidden_dim`.
pub fn phoneme_average(seq: &IntensitySequence, align: &PhonemeAlignment, clock: &FrameClock) -> Result<Tensor> {
    let dim = seq.dim();
    let groups = phoneme_frames(seq.n_frames(), align, clock)?;
    let mut out = Vec::with_capacity(groups.len() * dim);
    for g in &groups {
        out.extend(mean_rows(g.iter().map(|&k| seq.frame(k)), dim));
    }
    Ok(Tensor::matrix(groups.len(), dim, out)?)
}

/// An (emotion, level) label for one phoneme; neutral has no level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeLabel {
    pub symbol: String,
    pub emotion: String,
    pub level: Option<String>,
}

pub fn parse_labels(text: &str) -> Result<Vec<PhonemeLabel>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(LABELS_HEADER) {
        return Err(Error::Invalid(format!("missing {LABELS_HEADER:?} header")));
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [symbol, emotion, level] = cols[..] else {
                return Err(Error::Invalid(format!("label line {}: expected 3 tab-separated fields", k + 2)));
            };
            Ok(PhonemeLabel {
                symbol: symbol.to_string(),
                emotion: emotion.to_string(),
                level: (level != "-" && !level.is_empty()).then(|| level.to_string()),
            })
        })
        .collect()
}

pub fn format_labels(labels: &[PhonemeLabel]) -> String {
    let mut s = format!("{LABELS_HEADER}\n");
    for l in labels {
        let _ = writeln!(s, "{}\t{}\t{}", l.symbol, l.emotion, l.level.as_deref().unwrap_or("-"));
    }
    s
}

/// One conditioning row per label: zero for neutral, otherwise the codebook
/// vector of the requested level.
pub fn condition(codebook: &IntensityCodebook, labels: &[PhonemeLabel]) -> Result<Tensor> {
    let dim = codebook.dim();
    let mut out = Vec::with_capacity(labels.len() * dim);
    for l in labels {
        out.extend_from_slice(codebook.vector(&l.emotion, l.level.as_deref())?);
    }
    if labels.is_empty() {
        return Err(Error::Invalid("no phoneme labels".into()));
    }
    Ok(Tensor::matrix(labels.len(), dim, out)?)
}

/// Phoneme-level conditioning from a reference utterance: its intensity
/// sequence averaged per phoneme, or zeros when the utterance is neutral.
pub fn utterance_conditioning(
    model: &RankModel,
    fm: &FeatureMatrix,
    align: &PhonemeAlignment,
    clock: &FrameClock,
) -> Result<Tensor> {
    if fm.is_neutral() {
        phoneme_frames(fm.n_frames(), align, clock)?;
        return Ok(Tensor::zeros(&[align.entries.len(), model.config.hidden_dim]));
    }
    let class = model.vocab.index(&fm.emotion)?;
    let seq = model.forward_intensity(&fm.to_tensor(), class)?;
    phoneme_average(&seq, align, clock)
}
