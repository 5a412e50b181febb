//! Command implementations behind the `emorank` binary.
//!
//! Configuration comes from an optional JSON file (`--config`) whose
//! sections mirror the library config structs; unknown keys are rejected.
//! Command-line flags override file values, which override defaults. The
//! seed resolves as `--seed`, then the file's `seed`, then `EMORANK_SEED`,
//! then 0. Every artifact gets a `*.provenance.json` sidecar naming the
//! config hash, seed and input hashes.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codebook::{
    build_codebook, condition, parse_labels, score_corpus, utterance_conditioning, write_scores,
    BinPolicy, CodebookConfig, FrameClock, PhonemeAlignment,
};
use crate::evalmetrics::{mcd_report, mel_cepstra, MCD_ORDER};
use crate::extractor::{load_model, save_model, ExtractorConfig};
use crate::features::{
    extract_features_with_pitch, read_features, read_pitch_csv, read_wav, write_features, FeatureConfig,
    FeatureMatrix,
};
use crate::numerics::Tensor;
use crate::synthcorpus::{generate, write_corpus, SynthSpec};
use crate::training::{
    run_gradient_check, write_loss_trace, Corpus, GradCheckConfig, PairPolicy, TrainConfig, Trainer,
};
use crate::{Error, Result};

pub const SEED_ENV: &str = "EMORANK_SEED";

/// The unified configuration document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub features: FeatureConfig,
    pub extractor: ExtractorConfig,
    pub train: TrainConfig,
    pub codebook: CodebookConfig,
    pub synth: SynthSpec,
    pub gradcheck: GradCheckConfig,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.extractor.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical (sorted-key) JSON serialization.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        sha256_hex(v.to_string().as_bytes())
    }
}

/// `section.key = default` for every configuration key.
pub fn config_help() -> String {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => out.push(format!("  {prefix} = {other}")),
        }
    }
    let mut lines = Vec::new();
    walk("", &serde_json::to_value(RunConfig::default()).expect("serializes"), &mut lines);
    format!(
        "Configuration keys (JSON file via --config; flags override file values; \
         null means unset; seed falls back to ${SEED_ENV}):\n{}",
        lines.join("\n")
    )
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Hash over the sorted (file name, file hash) list of a feature directory.
pub fn files_hash(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        h.update(file_hash(p)?);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub config: RunConfig,
}

fn sidecar_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        artifact.join("provenance.json")
    } else {
        let mut s = artifact.as_os_str().to_owned();
        s.push(".provenance.json");
        PathBuf::from(s)
    }
}

fn write_provenance(artifact: &Path, p: &Provenance) -> Result<()> {
    let path = sidecar_path(artifact);
    std::fs::write(&path, serde_json::to_string_pretty(p)?).map_err(|e| Error::io(&path, e))
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) => 3,
        Error::Io { .. } | Error::Csv(_) | Error::Audio(_) => 4,
        Error::BadMagic { .. } | Error::Version { .. } | Error::Truncated(_) | Error::Checksum { .. } => 5,
        Error::Dimension(_) => 6,
        Error::Invalid(_) | Error::Alignment(_) => 7,
        Error::NonFiniteLoss { .. } | Error::Numerics(_) => 8,
    }
}

/// Gradient check did not meet its tolerance.
pub const EXIT_GRADCHECK_FAILED: i32 = 9;
/// Some inputs of a batch command failed.
pub const EXIT_PARTIAL_FAILURE: i32 = 10;

#[derive(Debug, Parser)]
#[command(name = "emorank", version, about = "Emotion intensity ranking: features, training, codebooks, conditioning")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed (overrides the config file and $EMORANK_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract EMOF features from a directory of WAV files.
    Featurize {
        wav_dir: PathBuf,
        /// CSV with columns filename, speaker, emotion.
        labels_csv: PathBuf,
        out_dir: PathBuf,
        /// Directory of `<stem>.csv` files with an `f0_hz` column to use instead of pitch estimation.
        #[arg(long)]
        pitch_dir: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with known intensities.
    Synthdata {
        out_dir: PathBuf,
        #[arg(long)]
        utterances_per_cell: Option<usize>,
        #[arg(long)]
        n_speakers: Option<usize>,
        #[arg(long)]
        n_emotions: Option<usize>,
    },
    /// Train a rank model on a directory of EMOF files.
    Train {
        features_dir: PathBuf,
        out_model: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_pairs: Option<usize>,
        #[arg(long, value_parser = parse_policy)]
        pair_policy: Option<PairPolicy>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Where checkpoints go (default: next to the model).
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Loss trace CSV (default: `<out_model>.loss.csv`).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Score non-neutral utterances (a directory or single EMOF file).
    Score {
        model: PathBuf,
        features: PathBuf,
        out_csv: PathBuf,
    },
    /// Build an intensity codebook from a scored corpus.
    Codebook {
        model: PathBuf,
        features_dir: PathBuf,
        out_json: PathBuf,
        #[arg(long)]
        n_bins: Option<usize>,
        #[arg(long, value_parser = parse_bin_policy)]
        bin_policy: Option<BinPolicy>,
    },
    /// Per-phoneme conditioning vectors, written as EMOF (one row per phoneme).
    Condition {
        out: PathBuf,
        /// Codebook JSON, used with --labels.
        #[arg(long, requires = "labels")]
        codebook: Option<PathBuf>,
        /// Phoneme labels file (`#labels v1`, symbol/emotion/level per line).
        #[arg(long, requires = "codebook")]
        labels: Option<PathBuf>,
        /// Alignment (`#phonemes v1`); checks labels against it, or drives reference averaging.
        #[arg(long)]
        alignment: Option<PathBuf>,
        /// Model for reference-utterance averaging.
        #[arg(long, requires_all = ["reference", "alignment"], conflicts_with = "codebook")]
        model: Option<PathBuf>,
        /// Reference EMOF utterance.
        #[arg(long, requires = "model")]
        reference: Option<PathBuf>,
    },
    /// Mel-cepstral distortion between two time-aligned EMOF files.
    Mcd {
        a: PathBuf,
        b: PathBuf,
        /// Treat the inputs as cepstra rather than log-mel features.
        #[arg(long)]
        cepstral: bool,
        /// Also write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Compare tape gradients with finite differences on a tiny model.
    Gradcheck {
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn parse_policy(s: &str) -> std::result::Result<PairPolicy, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| "expected same_speaker or any".into())
}

fn parse_bin_policy(s: &str) -> std::result::Result<BinPolicy, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| "expected quantile or fixed_width".into())
}

/// Outcome of a command: text for stdout and the exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { stdout, code: 0 }
    }
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    command: &'static str,
}

impl Ctx {
    fn provenance(&self, inputs: BTreeMap<String, String>) -> Provenance {
        Provenance {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.cfg.hash(),
            seed: self.seed,
            inputs,
            config: self.cfg.clone(),
        }
    }
}

pub fn build_command() -> clap::Command {
    let help = config_help();
    Cli::command()
        .after_help(help.clone())
        .mut_subcommands(|c| c.after_help(help.clone()))
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> std::result::Result<Outcome, Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match build_command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            return Ok(Outcome {
                stdout: e.render().to_string(),
                code,
            });
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Error::Config(e.to_string()))?;
    run(cli)
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = match (cli.seed, cfg.seed) {
        (Some(s), _) | (None, Some(s)) => s,
        (None, None) => env_seed()?.unwrap_or(0),
    };
    cfg.seed = Some(seed);
    cfg.train.seed = seed;
    cfg.gradcheck.seed = seed;
    let command = match &cli.command {
        Command::Featurize { .. } => "featurize",
        Command::Synthdata { .. } => "synthdata",
        Command::Train { .. } => "train",
        Command::Score { .. } => "score",
        Command::Codebook { .. } => "codebook",
        Command::Condition { .. } => "condition",
        Command::Mcd { .. } => "mcd",
        Command::Gradcheck { .. } => "gradcheck",
    };
    let mut ctx = Ctx { cfg, seed, command };
    match cli.command {
        Command::Featurize {
            wav_dir,
            labels_csv,
            out_dir,
            pitch_dir,
        } => cmd_featurize(&ctx, &wav_dir, &labels_csv, &out_dir, pitch_dir.as_deref()),
        Command::Synthdata {
            out_dir,
            utterances_per_cell,
            n_speakers,
            n_emotions,
        } => {
            let s = &mut ctx.cfg.synth;
            s.utterances_per_cell = utterances_per_cell.unwrap_or(s.utterances_per_cell);
            s.n_speakers = n_speakers.unwrap_or(s.n_speakers);
            s.n_emotions = n_emotions.unwrap_or(s.n_emotions);
            cmd_synthdata(&ctx, &out_dir)
        }
        Command::Train {
            features_dir,
            out_model,
            iterations,
            learning_rate,
            batch_pairs,
            pair_policy,
            checkpoint_every,
            checkpoint_dir,
            resume,
            loss_csv,
        } => {
            let t = &mut ctx.cfg.train;
            t.iterations = iterations.unwrap_or(t.iterations);
            t.learning_rate = learning_rate.unwrap_or(t.learning_rate);
            t.batch_pairs = batch_pairs.unwrap_or(t.batch_pairs);
            t.pair_policy = pair_policy.unwrap_or(t.pair_policy);
            t.checkpoint_every = checkpoint_every.unwrap_or(t.checkpoint_every);
            let loss_csv = loss_csv.unwrap_or_else(|| suffixed(&out_model, ".loss.csv"));
            cmd_train(
                &ctx,
                &features_dir,
                &out_model,
                &loss_csv,
                checkpoint_dir.as_deref(),
                resume.as_deref(),
            )
        }
        Command::Score {
            model,
            features,
            out_csv,
        } => cmd_score(&ctx, &model, &features, &out_csv),
        Command::Codebook {
            model,
            features_dir,
            out_json,
            n_bins,
            bin_policy,
        } => {
            let c = &mut ctx.cfg.codebook;
            c.n_bins = n_bins.unwrap_or(c.n_bins);
            c.bin_policy = bin_policy.unwrap_or(c.bin_policy);
            cmd_codebook(&ctx, &model, &features_dir, &out_json)
        }
        Command::Condition {
            out,
            codebook,
            labels,
            alignment,
            model,
            reference,
        } => match (codebook, labels, model, reference) {
            (Some(cb), Some(lb), None, None) => cmd_condition(&ctx, &cb, &lb, alignment.as_deref(), &out),
            (None, None, Some(m), Some(r)) => {
                let a = alignment.ok_or_else(|| Error::Config("--model needs --alignment".into()))?;
                cmd_condition_reference(&ctx, &m, &r, &a, &out)
            }
            _ => Err(Error::Config(
                "condition needs either --codebook and --labels, or --model, --reference and --alignment".into(),
            )),
        },
        Command::Mcd { a, b, cepstral, json } => cmd_mcd(&ctx, &a, &b, cepstral, json.as_deref()),
        Command::Gradcheck { tolerance, json } => {
            let g = &mut ctx.cfg.gradcheck;
            g.tolerance = tolerance.unwrap_or(g.tolerance);
            cmd_gradcheck(&ctx, json.as_deref())
        }
    }
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn display_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

/// `*.emof` files of a directory in name order; a single file is returned as-is.
pub fn feature_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "emof"))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Invalid(format!("no .emof files in {}", path.display())));
    }
    Ok(out)
}

fn load_features(paths: &[PathBuf]) -> Result<Vec<FeatureMatrix>> {
    paths.iter().map(|p| read_features(p)).collect()
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    filename: String,
    speaker: String,
    emotion: String,
}

fn cmd_featurize(ctx: &Ctx, wav_dir: &Path, labels_csv: &Path, out_dir: &Path, pitch_dir: Option<&Path>) -> Result<Outcome> {
    ctx.cfg.features.validate()?;
    let mut labels: BTreeMap<String, LabelRow> = BTreeMap::new();
    for row in csv::Reader::from_path(labels_csv)?.deserialize() {
        let row: LabelRow = row?;
        labels.insert(row.filename.clone(), row);
    }
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(wav_dir)
        .map_err(|e| Error::io(wav_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    wavs.sort();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut failures: Vec<String> = Vec::new();
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut inputs = BTreeMap::new();
    inputs.insert(display_name(labels_csv), file_hash(labels_csv)?);
    for wav in &wavs {
        let name = display_name(wav);
        let Some(label) = labels.get(&name) else {
            failures.push(format!("{name}: no row in {}", display_name(labels_csv)));
            continue;
        };
        let stem = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let result = (|| -> Result<()> {
            let audio = read_wav(wav)?;
            let pitch = match pitch_dir {
                Some(d) => Some(read_pitch_csv(&d.join(format!("{stem}.csv")))?),
                None => None,
            };
            let fm = extract_features_with_pitch(&audio, &ctx.cfg.features, pitch.as_deref())?
                .with_labels(stem.clone(), label.emotion.clone(), label.speaker.clone());
            write_features(&fm, &out_dir.join(format!("{stem}.emof")))?;
            inputs.insert(name.clone(), file_hash(wav)?);
            Ok(())
        })();
        match result {
            Ok(()) => *counts.entry((label.speaker.clone(), label.emotion.clone())).or_default() += 1,
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    let present: std::collections::BTreeSet<String> = wavs.iter().map(|w| display_name(w)).collect();
    for missing in labels.keys().filter(|k| !present.contains(*k)) {
        failures.push(format!("{missing}: listed in labels but not found"));
    }
    write_provenance(out_dir, &ctx.provenance(inputs))?;
    let ok: usize = counts.values().sum();
    let mut out = String::new();
    for ((spk, emo), n) in &counts {
        out += &format!("{spk}\t{emo}\t{n}\n");
    }
    for f in &failures {
        out += &format!("failed: {f}\n");
    }
    out += &format!("{ok} ok, {} failed\n", failures.len());
    Ok(Outcome {
        stdout: out,
        code: if failures.is_empty() { 0 } else { EXIT_PARTIAL_FAILURE },
    })
}

fn cmd_synthdata(ctx: &Ctx, out_dir: &Path) -> Result<Outcome> {
    let corpus = generate(&ctx.cfg.synth, &mut ChaCha8Rng::seed_from_u64(ctx.seed))?;
    write_corpus(&corpus, out_dir)?;
    write_provenance(out_dir, &ctx.provenance(BTreeMap::new()))?;
    Ok(Outcome::ok(format!(
        "{} utterances written to {}\n",
        corpus.utterances.len(),
        out_dir.display()
    )))
}

fn cmd_train(
    ctx: &Ctx,
    features_dir: &Path,
    out_model: &Path,
    loss_csv: &Path,
    checkpoint_dir: Option<&Path>,
    resume: Option<&Path>,
) -> Result<Outcome> {
    ctx.cfg.validate()?;
    let files = feature_files(features_dir)?;
    let corpus_hash = files_hash(&files)?;
    let corpus = Corpus::new(load_features(&files)?)?;
    let mut trainer = match resume {
        Some(ckpt) => Trainer::load_checkpoint(&corpus, ckpt, Some(ctx.cfg.train.iterations))?,
        None => Trainer::new(&corpus, &ctx.cfg.extractor, ctx.cfg.train.clone())?,
    };
    let ckpt_dir = checkpoint_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_model.parent().map(Path::to_path_buf).unwrap_or_default());
    if trainer.config().checkpoint_every > 0 {
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    }
    let stem = out_model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    trainer.run_with(|t| {
        let p = ckpt_dir.join(format!("{stem}.ckpt{:06}.emom", t.iteration()));
        log::info!("checkpoint {}", p.display());
        t.save_checkpoint(&p)
    })?;
    let trace = trainer.trace().to_vec();
    let mut model = trainer.into_model();
    model.provenance = BTreeMap::from([
        ("config_hash".to_string(), ctx.cfg.hash()),
        ("corpus_hash".to_string(), corpus_hash.clone()),
        ("seed".to_string(), ctx.seed.to_string()),
    ]);
    save_model(&model, out_model)?;
    write_loss_trace(&trace, loss_csv)?;
    let mut inputs = BTreeMap::from([("corpus".to_string(), corpus_hash)]);
    if let Some(r) = resume {
        inputs.insert(display_name(r), file_hash(r)?);
    }
    write_provenance(out_model, &ctx.provenance(inputs.clone()))?;
    write_provenance(loss_csv, &ctx.provenance(inputs))?;
    let last = trace.last().map(|r| r.l_total).unwrap_or(f64::NAN);
    Ok(Outcome::ok(format!(
        "trained {} iterations on {} utterances; final l_total {last:.6}\n",
        trace.len(),
        corpus.items().len()
    )))
}

fn cmd_score(ctx: &Ctx, model_path: &Path, features: &Path, out_csv: &Path) -> Result<Outcome> {
    let model = load_model(model_path)?;
    let files = feature_files(features)?;
    let records = score_corpus(&model, &load_features(&files)?, false)?;
    write_scores(&records, out_csv)?;
    let inputs = BTreeMap::from([
        ("model".to_string(), file_hash(model_path)?),
        ("corpus".to_string(), files_hash(&files)?),
    ]);
    write_provenance(out_csv, &ctx.provenance(inputs))?;
    Ok(Outcome::ok(format!("{} utterances scored\n", records.len())))
}

fn cmd_codebook(ctx: &Ctx, model_path: &Path, features_dir: &Path, out_json: &Path) -> Result<Outcome> {
    let model = load_model(model_path)?;
    let files = feature_files(features_dir)?;
    let keep = ctx.cfg.codebook.averaging == crate::codebook::LevelAveraging::Frames;
    let records = score_corpus(&model, &load_features(&files)?, keep)?;
    let mut cb = build_codebook(&records, &ctx.cfg.codebook)?;
    let model_hash = file_hash(model_path)?;
    let corpus_hash = files_hash(&files)?;
    cb.provenance.insert("model_hash".into(), model_hash.clone());
    cb.provenance.insert("corpus_hash".into(), corpus_hash.clone());
    cb.provenance.insert("config_hash".into(), ctx.cfg.hash());
    cb.save(out_json)?;
    let inputs = BTreeMap::from([("model".to_string(), model_hash), ("corpus".to_string(), corpus_hash)]);
    write_provenance(out_json, &ctx.provenance(inputs))?;
    let mut out = String::new();
    for (emotion, lv) in &cb.emotions {
        let means: Vec<String> = crate::codebook::level_names(ctx.cfg.codebook.n_bins)
            .iter()
            .map(|n| format!("{n} {:.4}", lv.mean_scores[n]))
            .collect();
        out += &format!("{emotion}: {}\n", means.join(", "));
    }
    Ok(Outcome::ok(out))
}

fn conditioning_matrix(m: &Tensor, source: &str, emotion: &str) -> Result<FeatureMatrix> {
    let (p, d) = m.dims2().ok_or_else(|| Error::Dimension("conditioning is not P x D".into()))?;
    Ok(FeatureMatrix::new(m.data().iter().map(|&v| v as f32).collect(), p, d, 0.0)?
        .with_labels(source, emotion, ""))
}

fn cmd_condition(ctx: &Ctx, cb_path: &Path, labels_path: &Path, alignment: Option<&Path>, out: &Path) -> Result<Outcome> {
    let cb = crate::codebook::IntensityCodebook::load(cb_path)?;
    let text = std::fs::read_to_string(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let labels = parse_labels(&text)?;
    let mut inputs = BTreeMap::from([
        ("codebook".to_string(), file_hash(cb_path)?),
        ("labels".to_string(), file_hash(labels_path)?),
    ]);
    if let Some(a) = alignment {
        let align = PhonemeAlignment::read(a)?;
        if align.entries.len() != labels.len()
            || align.entries.iter().zip(&labels).any(|(p, l)| p.symbol != l.symbol)
        {
            return Err(Error::Alignment("labels and alignment list different phonemes".into()));
        }
        inputs.insert("alignment".into(), file_hash(a)?);
    }
    let m = condition(&cb, &labels)?;
    let mut emotions: Vec<&str> = labels.iter().map(|l| l.emotion.as_str()).collect();
    emotions.dedup();
    let emotion = if emotions.len() == 1 { emotions[0] } else { "mixed" };
    let fm = conditioning_matrix(&m, &display_name(labels_path), emotion)?;
    write_features(&fm, out)?;
    write_provenance(out, &ctx.provenance(inputs))?;
    Ok(Outcome::ok(format!("{} phonemes x {} dims\n", labels.len(), cb.dim())))
}

fn cmd_condition_reference(ctx: &Ctx, model_path: &Path, reference: &Path, alignment: &Path, out: &Path) -> Result<Outcome> {
    let model = load_model(model_path)?;
    let fm = read_features(reference)?;
    let align = PhonemeAlignment::read(alignment)?;
    let clock = if fm.frame_rate_hz == ctx.cfg.features.frame_rate_hz() {
        FrameClock::from_features(&ctx.cfg.features)
    } else {
        FrameClock::from_rate(fm.frame_rate_hz)
    };
    let m = utterance_conditioning(&model, &fm, &align, &clock)?;
    write_features(&conditioning_matrix(&m, &fm.source_id, &fm.emotion)?, out)?;
    let inputs = BTreeMap::from([
        ("model".to_string(), file_hash(model_path)?),
        ("reference".to_string(), file_hash(reference)?),
        ("alignment".to_string(), file_hash(alignment)?),
    ]);
    write_provenance(out, &ctx.provenance(inputs))?;
    Ok(Outcome::ok(format!("{} phonemes x {} dims\n", align.entries.len(), model.config.hidden_dim)))
}

fn cmd_mcd(ctx: &Ctx, a: &Path, b: &Path, cepstral: bool, json: Option<&Path>) -> Result<Outcome> {
    let load = |p: &Path| -> Result<Tensor> {
        let t = read_features(p)?.to_tensor();
        if cepstral {
            return Ok(t);
        }
        let (rows, cols) = t.dims2().expect("feature matrix is 2-D");
        let n = ctx.cfg.features.n_mels.min(cols);
        let mel: Vec<f64> = (0..rows).flat_map(|r| t.row(r)[..n].to_vec()).collect();
        mel_cepstra(&Tensor::matrix(rows, n, mel)?, MCD_ORDER)
    };
    let report = mcd_report(&load(a)?, &load(b)?)?;
    if let Some(j) = json {
        std::fs::write(j, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(j, e))?;
        let inputs = BTreeMap::from([("a".to_string(), file_hash(a)?), ("b".to_string(), file_hash(b)?)]);
        write_provenance(j, &ctx.provenance(inputs))?;
    }
    let summary = serde_json::json!({
        "metric": report.metric,
        "value": report.value,
        "units": report.units,
        "n_items": report.n_items,
    });
    Ok(Outcome::ok(format!("{}{summary}\n", report.to_table())))
}

fn cmd_gradcheck(ctx: &Ctx, json: Option<&Path>) -> Result<Outcome> {
    let report = run_gradient_check(&ctx.cfg.gradcheck)?;
    if let Some(j) = json {
        std::fs::write(j, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(j, e))?;
        write_provenance(j, &ctx.provenance(BTreeMap::new()))?;
    }
    Ok(Outcome {
        stdout: report.to_table(),
        code: if report.passed { 0 } else { EXIT_GRADCHECK_FAILED },
    })
}
