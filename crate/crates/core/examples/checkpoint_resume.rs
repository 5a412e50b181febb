//! Trains for a while, checkpoints, resumes from the checkpoint and checks
//! that the result matches an uninterrupted run.
//!
//! cargo run --release --example checkpoint_resume

use emorank::extractor::ExtractorConfig;
use emorank::synthcorpus::{generate, SynthSpec};
use emorank::training::{Corpus, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> emorank::Result<()> {
    let spec = SynthSpec {
        utterances_per_cell: 5,
        frame_length_range: [10, 16],
        ..SynthSpec::default()
    };
    let corpus = Corpus::new(generate(&spec, &mut ChaCha8Rng::seed_from_u64(6))?.utterances)?;
    let extractor = ExtractorConfig {
        hidden_dim: 16,
        n_fft_blocks: 1,
        n_heads: 2,
        conv_filter_dim: 32,
        projector_hidden: 8,
        ..ExtractorConfig::default()
    };
    let config = TrainConfig {
        iterations: 60,
        learning_rate: 1e-3,
        seed: 9,
        ..TrainConfig::default()
    };

    let mut full = Trainer::new(&corpus, &extractor, config.clone())?;
    full.run()?;

    let dir = tempfile::tempdir().expect("temporary directory");
    let ckpt = dir.path().join("half.emom");
    let mut first = Trainer::new(&corpus, &extractor, TrainConfig { iterations: 25, ..config })?;
    first.run()?;
    first.save_checkpoint(&ckpt)?;
    println!("checkpoint at iteration {} -> {}", first.iteration(), ckpt.display());

    let mut resumed = Trainer::load_checkpoint(&corpus, &ckpt, Some(60))?;
    resumed.run()?;
    let gap = full
        .trace()
        .iter()
        .zip(resumed.trace())
        .map(|(a, b)| (a.l_total - b.l_total).abs())
        .fold(0.0, f64::max);
    println!(
        "uninterrupted final l_total {:.6}, resumed {:.6}, max trace gap {gap:.2e}, identical parameters: {}",
        full.trace().last().map_or(f64::NAN, |r| r.l_total),
        resumed.trace().last().map_or(f64::NAN, |r| r.l_total),
        full.model() == resumed.model()
    );
    Ok(())
}
