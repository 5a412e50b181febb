//! Trains briefly on a synthetic corpus, scores it, and builds a
//! three-level intensity codebook per emotion.
//!
//! cargo run --release --example build_codebook

use emorank::codebook::{build_codebook, level_names, score_corpus, CodebookConfig};
use emorank::extractor::ExtractorConfig;
use emorank::synthcorpus::{generate, SynthSpec};
use emorank::training::{train_rank_model, Corpus, PairPolicy, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> emorank::Result<()> {
    let spec = SynthSpec {
        utterances_per_cell: 12,
        intensity_range: [0.4, 1.0],
        ..SynthSpec::default()
    };
    let synth = generate(&spec, &mut ChaCha8Rng::seed_from_u64(3))?;
    let extractor = ExtractorConfig {
        hidden_dim: 16,
        n_fft_blocks: 1,
        n_heads: 2,
        conv_filter_dim: 32,
        projector_hidden: 8,
        ..ExtractorConfig::default()
    };
    let config = TrainConfig {
        iterations: 400,
        learning_rate: 1e-3,
        pair_policy: PairPolicy::Any,
        ..TrainConfig::default()
    };
    let model = train_rank_model(&Corpus::new(synth.utterances.clone())?, &extractor, &config)?.model;

    let records = score_corpus(&model, &synth.utterances, false)?;
    let codebook = build_codebook(&records, &CodebookConfig::default())?;
    for (emotion, levels) in &codebook.emotions {
        println!("{emotion}");
        for name in level_names(3).iter().rev() {
            let v = &levels.levels[name];
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            println!(
                "  {name:<6} n={:<3} mean score {:>8.4}  |vector| {norm:.4}",
                levels.counts[name], levels.mean_scores[name]
            );
        }
    }
    println!("{}", codebook.to_json()?.lines().take(3).collect::<Vec<_>>().join("\n"));
    Ok(())
}
