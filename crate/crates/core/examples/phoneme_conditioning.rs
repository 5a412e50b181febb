//! Two ways of producing per-phoneme conditioning vectors: codebook lookup
//! from labels, and averaging a reference utterance's intensity sequence
//! over an alignment.
//!
//! cargo run --release --example phoneme_conditioning

use emorank::codebook::{
    build_codebook, condition, parse_labels, score_corpus, utterance_conditioning, CodebookConfig, FrameClock,
    PhonemeAlignment,
};
use emorank::extractor::ExtractorConfig;
use emorank::synthcorpus::{generate, SynthSpec};
use emorank::training::{train_rank_model, Corpus, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LABELS: &str = "#labels v1
HH\tamused\tMax
AH\tamused\tMedian
L\tneutral\t-
OW\tamused\tMin
";

fn main() -> emorank::Result<()> {
    let spec = SynthSpec {
        utterances_per_cell: 6,
        ..SynthSpec::default()
    };
    let synth = generate(&spec, &mut ChaCha8Rng::seed_from_u64(4))?;
    let extractor = ExtractorConfig {
        hidden_dim: 8,
        n_fft_blocks: 1,
        n_heads: 2,
        conv_filter_dim: 16,
        projector_hidden: 4,
        ..ExtractorConfig::default()
    };
    let config = TrainConfig {
        iterations: 50,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let model = train_rank_model(&Corpus::new(synth.utterances.clone())?, &extractor, &config)?.model;
    let codebook = build_codebook(&score_corpus(&model, &synth.utterances, false)?, &CodebookConfig::default())?;

    let labels = parse_labels(LABELS)?;
    let from_codebook = condition(&codebook, &labels)?;
    println!("codebook lookup:");
    for (p, l) in labels.iter().enumerate() {
        println!("  {:<3} {:<8} {:<7} {:?}", l.symbol, l.emotion, l.level.as_deref().unwrap_or("-"), rounded(from_codebook.row(p)));
    }

    let reference = synth.utterances.iter().find(|f| f.emotion == "amused").expect("corpus has amused speech");
    let clock = FrameClock::from_rate(reference.frame_rate_hz);
    let duration = clock.duration(reference.n_frames());
    let bounds = [0.0, 0.2, 0.45, 0.7, 1.0].map(|f| f * duration);
    let text: String = ["HH", "AH", "L", "OW"]
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{s}\t{}\t{}\n", bounds[i], bounds[i + 1]))
        .collect();
    let align = PhonemeAlignment::parse(&format!("#phonemes v1\n{text}"))?;
    let from_reference = utterance_conditioning(&model, reference, &align, &clock)?;
    println!("reference {} ({} frames):", reference.source_id, reference.n_frames());
    for (p, ph) in align.entries.iter().enumerate() {
        println!("  {:<3} {:.3}-{:.3}s {:?}", ph.symbol, ph.start_s, ph.end_s, rounded(from_reference.row(p)));
    }
    Ok(())
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
