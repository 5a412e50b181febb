//! Pair sampling and the Rank-model optimization loop.
//!
//! Every iteration draws `batch_pairs` (emotional, neutral) pairs, builds two
//! mixtures per pair, and minimizes `α·L_mixup + β·L_rank` averaged over the
//! batch with Adam. Iteration `k` draws all of its randomness from a ChaCha8
//! stream keyed by `(seed, k)`, so a run resumed from a checkpoint replays
//! exactly the same batches as an uninterrupted one. Per-pair graphs run in
//! parallel; gradients are reduced in pair order.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::SectionReader;
use crate::emotion::EmotionVocab;
use crate::extractor::{
    read_tensor_table, write_tensor_table, Bound, ExtractorConfig, Mode, Precision, RankModel,
};
use crate::features::{FeatureMatrix, NormStats};
use crate::losses::{mixup_ce_var, rank_loss_var, total_loss_var, LossWeights};
use crate::mixup::{make_mix_pair, MixPair, MixSource};
use crate::numerics::{
    adam_step, finite_difference, relative_error, AdamConfig, AdamState, Graph, NumericsError,
    Tensor,
};
use crate::{Error, Result};

const APPENDIX_MAGIC: &[u8; 4] = b"EMOA";
const APPENDIX_VERSION: u32 = 1;
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    SameSpeaker,
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_pairs: usize,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub loss_weights: LossWeights,
    pub pair_policy: PairPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            learning_rate: 1e-6,
            batch_pairs: 8,
            seed: 0,
            checkpoint_every: 0,
            loss_weights: LossWeights::default(),
            pair_policy: PairPolicy::SameSpeaker,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_pairs == 0 {
            return Err(Error::Config("batch_pairs must be >= 1".into()));
        }
        self.loss_weights.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.learning_rate)
    }
}

/// Labelled utterances indexed for pair sampling.
#[derive(Debug, Clone)]
pub struct Corpus {
    items: Vec<FeatureMatrix>,
    vocab: EmotionVocab,
    neutral: Vec<usize>,
    emotional: Vec<usize>,
    neutral_by_speaker: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    pub fn new(items: Vec<FeatureMatrix>) -> Result<Self> {
        let vocab = EmotionVocab::from_labels(items.iter().map(|f| f.emotion.as_str()));
        Self::with_vocab(items, vocab)
    }

    pub fn with_vocab(items: Vec<FeatureMatrix>, vocab: EmotionVocab) -> Result<Self> {
        let mut neutral = Vec::new();
        let mut emotional = Vec::new();
        let mut neutral_by_speaker: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let width = items.first().map(FeatureMatrix::n_channels);
        for (i, fm) in items.iter().enumerate() {
            if Some(fm.n_channels()) != width {
                return Err(Error::Dimension(format!(
                    "{}: {} channels, corpus has {}",
                    fm.source_id,
                    fm.n_channels(),
                    width.unwrap_or(0)
                )));
            }
            vocab.index(&fm.emotion)?;
            if fm.is_neutral() {
                neutral.push(i);
                neutral_by_speaker.entry(fm.speaker.clone()).or_default().push(i);
            } else {
                emotional.push(i);
            }
        }
        if neutral.is_empty() || emotional.is_empty() {
            return Err(Error::Invalid(
                "corpus needs at least one neutral and one non-neutral utterance".into(),
            ));
        }
        Ok(Self {
            items,
            vocab,
            neutral,
            emotional,
            neutral_by_speaker,
        })
    }

    pub fn items(&self) -> &[FeatureMatrix] {
        &self.items
    }

    pub fn vocab(&self) -> &EmotionVocab {
        &self.vocab
    }

    pub fn emotional(&self) -> &[usize] {
        &self.emotional
    }

    pub fn neutral(&self) -> &[usize] {
        &self.neutral
    }

    pub fn class_of(&self, idx: usize) -> usize {
        self.vocab.index(&self.items[idx].emotion).expect("validated on construction")
    }
}

/// Indices of a uniformly drawn non-neutral utterance and a neutral partner.
pub fn sample_pair<R: Rng + ?Sized>(corpus: &Corpus, policy: PairPolicy, rng: &mut R) -> (usize, usize) {
    let emo = corpus.emotional[rng.random_range(0..corpus.emotional.len())];
    let pool = match policy {
        PairPolicy::SameSpeaker => corpus
            .neutral_by_speaker
            .get(&corpus.items[emo].speaker)
            .map(Vec::as_slice)
            .unwrap_or(&corpus.neutral),
        PairPolicy::Any => &corpus.neutral,
    };
    (emo, pool[rng.random_range(0..pool.len())])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub l_mixup: f64,
    pub l_rank: f64,
    pub l_total: f64,
}

pub fn write_loss_trace(trace: &[LossRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_trace(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Graph nodes of one pair's objective.
pub struct PairLoss<'g> {
    pub total: crate::numerics::Var<'g>,
    pub mixup: crate::numerics::Var<'g>,
    pub rank: crate::numerics::Var<'g>,
}

/// Records the full objective for one mix pair onto `b`'s graph: both
/// mixtures through the extractor, pooled, classified and scored.
pub fn pair_objective<'g>(
    model: &RankModel,
    b: &Bound<'g>,
    pair: &MixPair,
    weights: &LossWeights,
    mode: &mut Mode<'_>,
) -> Result<PairLoss<'g>> {
    let g = b.var("input.bias").graph();
    let mut side = |x: &Tensor| -> Result<_> {
        let i = model.intensity_var(b, g.constant(x.clone()), pair.y_emo, mode)?;
        let h = RankModel::pool_var(i)?;
        Ok((model.classify_var(b, h)?, model.project_var(b, h)?))
    };
    let (logits_i, r_i) = side(&pair.x_mix_i)?;
    let (logits_j, r_j) = side(&pair.x_mix_j)?;
    let mixup = mixup_ce_var(logits_i, logits_j, pair.lambda_i, pair.lambda_j, pair.y_emo, pair.y_neu)?;
    let rank = rank_loss_var(r_i, r_j, pair.lambda_diff)?;
    let total = total_loss_var(mixup, rank, weights)?;
    Ok(PairLoss { total, mixup, rank })
}

struct PairJob {
    emo: usize,
    neu: usize,
    pair: MixPair,
    dropout_seed: u64,
}

struct PairResult {
    grads: BTreeMap<String, Tensor>,
    l_mixup: f64,
    l_rank: f64,
    l_total: f64,
}

/// A training run in progress.
pub struct Trainer<'c> {
    corpus: &'c Corpus,
    prepared: Vec<Tensor>,
    model: RankModel,
    adam: AdamState,
    config: TrainConfig,
    iteration: usize,
    trace: Vec<LossRecord>,
}

impl<'c> Trainer<'c> {
    /// Fresh model: normalization fitted on `corpus`, parameters drawn from
    /// the seed. `extractor.n_emotion_classes` is taken from the corpus.
    pub fn new(corpus: &'c Corpus, extractor: &ExtractorConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let extractor = ExtractorConfig {
            n_emotion_classes: corpus.vocab.len(),
            ..extractor.clone()
        };
        let norm = NormStats::fit(corpus.items.iter())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let model = RankModel::new(extractor, corpus.vocab.clone(), norm, &mut rng)?;
        Self::assemble(corpus, model, AdamState::default(), config, 0, Vec::new())
    }

    fn assemble(
        corpus: &'c Corpus,
        model: RankModel,
        adam: AdamState,
        config: TrainConfig,
        iteration: usize,
        trace: Vec<LossRecord>,
    ) -> Result<Self> {
        if corpus.vocab != model.vocab {
            return Err(Error::Invalid(format!(
                "corpus classes {:?} differ from model classes {:?}",
                corpus.vocab.labels(),
                model.vocab.labels()
            )));
        }
        let prepared = corpus
            .items
            .iter()
            .map(|fm| model.normalize(fm))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            corpus,
            prepared,
            model,
            adam,
            config,
            iteration,
            trace,
        })
    }

    pub fn model(&self) -> &RankModel {
        &self.model
    }

    pub fn into_model(self) -> RankModel {
        self.model
    }

    pub fn trace(&self) -> &[LossRecord] {
        &self.trace
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    fn jobs(&self) -> Result<Vec<PairJob>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.iteration as u64);
        (0..self.config.batch_pairs)
            .map(|_| {
                let (emo, neu) = sample_pair(self.corpus, self.config.pair_policy, &mut rng);
                let pair = make_mix_pair(
                    MixSource {
                        frames: &self.prepared[emo],
                        class: self.corpus.class_of(emo),
                    },
                    MixSource {
                        frames: &self.prepared[neu],
                        class: self.corpus.class_of(neu),
                    },
                    &mut rng,
                )?;
                Ok(PairJob {
                    emo,
                    neu,
                    pair,
                    dropout_seed: rng.next_u64(),
                })
            })
            .collect()
    }

    fn run_pair(&self, job: &PairJob) -> Result<PairResult> {
        let g = Graph::new();
        let b = self.model.bind(&g, true);
        let mut rng = ChaCha8Rng::seed_from_u64(job.dropout_seed);
        let mut mode = Mode::Train(&mut rng);
        let loss = pair_objective(&self.model, &b, &job.pair, &self.config.loss_weights, &mut mode)?;
        let grads = g.backward(loss.total)?;
        Ok(PairResult {
            grads: b.iter().map(|(k, v)| (k.clone(), grads.get(*v))).collect(),
            l_mixup: loss.mixup.item(),
            l_rank: loss.rank.item(),
            l_total: loss.total.item(),
        })
    }

    fn diagnose(&self, job: &PairJob, e: impl std::fmt::Display) -> Error {
        let items = &self.corpus.items;
        Error::NonFiniteLoss {
            iteration: self.iteration,
            detail: format!(
                "pair ({}, {}), lambda_i {}, lambda_j {}: {e}",
                items[job.emo].source_id, items[job.neu].source_id, job.pair.lambda_i, job.pair.lambda_j
            ),
        }
    }

    /// Runs one iteration and returns its (batch-mean, pre-update) losses.
    pub fn step(&mut self) -> Result<LossRecord> {
        let jobs = self.jobs()?;
        let results: Vec<Result<PairResult>> = jobs.par_iter().map(|j| self.run_pair(j)).collect();
        let n = jobs.len() as f64;
        let mut sum: BTreeMap<String, Tensor> = BTreeMap::new();
        let (mut lm, mut lr, mut lt) = (0.0, 0.0, 0.0);
        for (job, res) in jobs.iter().zip(results) {
            let res = match res {
                Ok(r) => r,
                Err(Error::Numerics(e @ (NumericsError::NonFinite { .. } | NumericsError::NonFiniteGradient { .. }))) => {
                    return Err(self.diagnose(job, e))
                }
                Err(e) => return Err(e),
            };
            if !res.l_total.is_finite() {
                return Err(self.diagnose(job, "loss is not finite"));
            }
            lm += res.l_mixup;
            lr += res.l_rank;
            lt += res.l_total;
            for (k, g) in res.grads {
                match sum.get_mut(&k) {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += v),
                    None => {
                        sum.insert(k, g);
                    }
                }
            }
        }
        for g in sum.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        adam_step(&mut self.model.params.tensors, &sum, &mut self.adam, &self.config.adam())?;
        let rec = LossRecord {
            iteration: self.iteration,
            l_mixup: lm / n,
            l_rank: lr / n,
            l_total: lt / n,
        };
        self.trace.push(rec);
        self.iteration += 1;
        Ok(rec)
    }

    /// Runs until `config.iterations`, calling `on_checkpoint` after every
    /// `checkpoint_every`-th iteration.
    pub fn run_with(&mut self, mut on_checkpoint: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        while self.iteration < self.config.iterations {
            let rec = self.step()?;
            if rec.iteration % 100 == 0 {
                log::debug!(
                    "iteration {}: l_mixup {:.5} l_rank {:.5} l_total {:.5}",
                    rec.iteration,
                    rec.l_mixup,
                    rec.l_rank,
                    rec.l_total
                );
            }
            let every = self.config.checkpoint_every;
            if every > 0 && self.iteration.is_multiple_of(every) {
                on_checkpoint(self)?;
            }
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| Ok(()))
    }

    /// Model in `f64` followed by an optimizer appendix: iteration, config
    /// and trace as JSON, then Adam moments as a tensor table.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let state = CheckpointState {
            iteration: self.iteration,
            adam_step: self.adam.step,
            config: self.config.clone(),
            trace: self.trace.clone(),
        };
        let w = crate::extractor::write_model_section(&self.model, Precision::F64)?;
        let mut w = w.append(APPENDIX_MAGIC, APPENDIX_VERSION);
        w.str(&serde_json::to_string(&state)?);
        let mut moments: Vec<(String, &Tensor)> = Vec::new();
        for (k, t) in &self.adam.m {
            moments.push((format!("m.{k}"), t));
        }
        for (k, t) in &self.adam.v {
            moments.push((format!("v.{k}"), t));
        }
        write_tensor_table(&mut w, moments.iter().map(|(k, t)| (k.as_str(), *t)), Precision::F64);
        w.seal();
        Ok(w.into_bytes())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let bytes = self.checkpoint_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    /// Continues a checkpointed run. `iterations` replaces the stored
    /// target; every other setting comes from the checkpoint.
    pub fn resume(corpus: &'c Corpus, bytes: &[u8], iterations: Option<usize>) -> Result<Self> {
        let mut r = SectionReader::new(bytes);
        let model = crate::extractor::read_model_section(&mut r)?;
        r.open(APPENDIX_MAGIC, APPENDIX_VERSION)?;
        let mut state: CheckpointState = serde_json::from_str(&r.str("checkpoint state")?)?;
        let table = read_tensor_table(&mut r)?;
        r.verify()?;
        if !r.at_end() {
            return Err(Error::Invalid("trailing bytes after checkpoint".into()));
        }
        let mut adam = AdamState {
            step: state.adam_step,
            ..AdamState::default()
        };
        for (k, t) in table {
            if let Some(name) = k.strip_prefix("m.") {
                adam.m.insert(name.to_string(), t);
            } else if let Some(name) = k.strip_prefix("v.") {
                adam.v.insert(name.to_string(), t);
            } else {
                return Err(Error::Invalid(format!("unexpected optimizer tensor {k}")));
            }
        }
        if state.trace.len() != state.iteration {
            return Err(Error::Invalid("checkpoint trace length differs from iteration".into()));
        }
        if let Some(n) = iterations {
            state.config.iterations = n;
        }
        state.config.validate()?;
        Self::assemble(corpus, model, adam, state.config, state.iteration, state.trace)
    }

    pub fn load_checkpoint(corpus: &'c Corpus, path: &Path, iterations: Option<usize>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::resume(corpus, &bytes, iterations)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointState {
    iteration: usize,
    adam_step: u64,
    config: TrainConfig,
    trace: Vec<LossRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RankModel,
    pub trace: Vec<LossRecord>,
}

/// Trains a fresh model for `config.iterations` iterations.
pub fn train_rank_model(
    corpus: &Corpus,
    extractor: &ExtractorConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut t = Trainer::new(corpus, extractor, config.clone())?;
    t.run()?;
    Ok(TrainOutcome {
        trace: t.trace.clone(),
        model: t.model,
    })
}

/// Exponential moving average, used to compare noisy loss traces.
pub fn smoothed(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let s = match acc {
            None => v,
            Some(a) => alpha * v + (1.0 - alpha) * a,
        };
        acc = Some(s);
        out.push(s);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub numel: usize,
    pub relative_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Gradient norms below this count as zero in the relative error.
pub const GRAD_NORM_FLOOR: f64 = 1e-8;

fn floored_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let scale = a.l2_norm().max(b.l2_norm());
    relative_error(a, b) * scale / scale.max(GRAD_NORM_FLOOR)
}

/// Tape gradient of the eval-mode pair objective versus central finite
/// differences, per parameter tensor.
pub fn gradient_check(
    model: &RankModel,
    pair: &MixPair,
    weights: &LossWeights,
    step: f64,
) -> Result<Vec<GradCheckEntry>> {
    let g = Graph::new();
    let b = model.bind(&g, true);
    let loss = pair_objective(model, &b, pair, weights, &mut Mode::Eval)?;
    let grads = g.backward(loss.total)?;
    let analytic: BTreeMap<String, Tensor> = b.iter().map(|(k, v)| (k.clone(), grads.get(*v))).collect();

    let eval = |m: &RankModel| -> f64 {
        let g = Graph::new();
        let b = m.bind(&g, false);
        pair_objective(m, &b, pair, weights, &mut Mode::Eval)
            .map(|l| l.total.item())
            .unwrap_or(f64::NAN)
    };
    let names: Vec<String> = model.params.tensors.keys().cloned().collect();
    names
        .par_iter()
        .map(|name| {
            let mut probe = model.clone();
            let original = model.params.tensors[name].clone();
            let numeric = finite_difference(&original, step, |p| {
                probe.params.tensors.insert(name.clone(), p.clone());
                eval(&probe)
            });
            if !numeric.is_finite() {
                return Err(Error::Invalid(format!("finite differences of {name} are not finite")));
            }
            let a = &analytic[name];
            Ok(GradCheckEntry {
                tensor: name.clone(),
                numel: a.numel(),
                relative_error: floored_relative_error(a, &numeric),
                analytic_norm: a.l2_norm(),
                numeric_norm: numeric.l2_norm(),
            })
        })
        .collect()
}

/// Tiny-model setup for [`run_gradient_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub frames: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub n_fft_blocks: usize,
    pub conv_kernel: usize,
    pub conv_filter_dim: usize,
    pub projector_hidden: usize,
    pub n_emotion_classes: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 6,
            hidden_dim: 16,
            n_heads: 2,
            n_fft_blocks: 2,
            conv_kernel: 3,
            conv_filter_dim: 32,
            projector_hidden: 8,
            n_emotion_classes: 3,
            step: 1e-5,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<36} {:>7} {:>12} {:>12}\n", "tensor", "numel", "grad_norm", "rel_err");
        for e in &self.entries {
            s += &format!(
                "{:<36} {:>7} {:>12.3e} {:>12.3e}\n",
                e.tensor, e.numel, e.analytic_norm, e.relative_error
            );
        }
        s += &format!(
            "max relative error {:.3e} (tolerance {:.0e}): {}\n",
            self.max_relative_error,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        );
        s
    }
}

/// Builds a random tiny extractor and mix pair (emotional source longer
/// than the neutral one, so cropping is exercised) and compares gradients
/// of the total loss with finite differences.
pub fn run_gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    use rand_distr::{Distribution, Normal};
    let ext = ExtractorConfig {
        input_dim: crate::features::INPUT_CHANNELS,
        hidden_dim: cfg.hidden_dim,
        n_fft_blocks: cfg.n_fft_blocks,
        n_heads: cfg.n_heads,
        conv_kernel: cfg.conv_kernel,
        conv_filter_dim: cfg.conv_filter_dim,
        dropout: 0.0,
        n_emotion_classes: cfg.n_emotion_classes,
        projector_hidden: cfg.projector_hidden,
    };
    ext.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<String> = std::iter::once(crate::NEUTRAL.to_string())
        .chain((1..cfg.n_emotion_classes).map(|k| format!("emotion{k}")))
        .collect();
    let vocab = EmotionVocab::from_vec(labels)?;
    let model = RankModel::new(ext.clone(), vocab, NormStats::identity(ext.input_dim), &mut rng)?;
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut frames = |t: usize| {
        Tensor::matrix(t, ext.input_dim, (0..t * ext.input_dim).map(|_| unit.sample(&mut rng)).collect())
    };
    let emo = frames(cfg.frames + 2)?;
    let neu = frames(cfg.frames)?;
    let pair = make_mix_pair(
        MixSource { frames: &emo, class: 1 },
        MixSource { frames: &neu, class: 0 },
        &mut rng,
    )?;
    let entries = gradient_check(&model, &pair, &LossWeights::default(), cfg.step)?;
    let max = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max < cfg.tolerance,
        max_relative_error: max,
        tolerance: cfg.tolerance,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::INPUT_CHANNELS;

    fn utt(id: &str, emotion: &str, speaker: &str, t: usize, v: f32) -> FeatureMatrix {
        FeatureMatrix::new(vec![v; t * INPUT_CHANNELS], t, INPUT_CHANNELS, 40.0)
            .unwrap()
            .with_labels(id, emotion, speaker)
    }

    #[test]
    fn single_pair_corpus_always_returns_it() {
        let c = Corpus::new(vec![utt("n", "neutral", "a", 3, 0.0), utt("x", "angry", "a", 4, 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(sample_pair(&c, PairPolicy::SameSpeaker, &mut rng), (1, 0));
        }
    }

    #[test]
    fn same_speaker_policy_and_fallback() {
        let c = Corpus::new(vec![
            utt("n1", "neutral", "a", 3, 0.0),
            utt("n2", "neutral", "b", 3, 0.0),
            utt("x1", "angry", "a", 3, 1.0),
            utt("x2", "angry", "b", 3, 1.0),
            utt("x3", "sleepy", "c", 3, 1.0),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut saw_fallback = false;
        for _ in 0..500 {
            let (e, n) = sample_pair(&c, PairPolicy::SameSpeaker, &mut rng);
            let spk = &c.items()[e].speaker;
            if spk == "c" {
                saw_fallback = true;
            } else {
                assert_eq!(&c.items()[n].speaker, spk);
            }
        }
        assert!(saw_fallback);
    }

    #[test]
    fn corpus_requires_both_kinds() {
        assert!(Corpus::new(vec![utt("n", "neutral", "a", 3, 0.0)]).is_err());
        assert!(Corpus::new(vec![utt("x", "angry", "a", 3, 0.0)]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_pairs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn smoothing_is_an_ema() {
        assert_eq!(smoothed(&[1.0, 3.0], 0.5), vec![1.0, 2.0]);
    }
}
