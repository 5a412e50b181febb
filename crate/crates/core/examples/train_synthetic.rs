//! Trains a small rank model on a synthetic corpus and reports how well its
//! scores recover the hidden intensities of held-out utterances.
//!
//! cargo run --release --example train_synthetic [iterations]

use std::time::Instant;

use emorank::codebook::score_corpus;
use emorank::evalmetrics::spearman;
use emorank::extractor::{pool, ExtractorConfig};
use emorank::synthcorpus::{generate, SynthSpec};
use emorank::training::{smoothed, Corpus, PairPolicy, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> emorank::Result<()> {
    let iterations = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2000);

    let train_spec = SynthSpec {
        intensity_range: [0.4, 1.0],
        ..SynthSpec::default()
    };
    let heldout_spec = SynthSpec {
        utterances_per_cell: 15,
        ..train_spec.clone()
    };
    let train = generate(&train_spec, &mut ChaCha8Rng::seed_from_u64(11))?;
    let heldout = generate(&heldout_spec, &mut ChaCha8Rng::seed_from_u64(12))?;

    let extractor = ExtractorConfig {
        hidden_dim: 32,
        n_fft_blocks: 2,
        n_heads: 2,
        conv_kernel: 3,
        conv_filter_dim: 64,
        projector_hidden: 16,
        ..ExtractorConfig::default()
    };
    let config = TrainConfig {
        iterations,
        learning_rate: 1e-3,
        batch_pairs: 8,
        seed: 7,
        pair_policy: PairPolicy::Any,
        ..TrainConfig::default()
    };

    let corpus = Corpus::new(train.utterances.clone())?;
    let started = Instant::now();
    let mut trainer = Trainer::new(&corpus, &extractor, config)?;
    trainer.run()?;
    let totals: Vec<f64> = trainer.trace().iter().map(|r| r.l_total).collect();
    let smooth = smoothed(&totals, 0.02);
    println!(
        "{} iterations in {:.1?}; smoothed l_total {:.4} -> {:.4}",
        totals.len(),
        started.elapsed(),
        smooth[0],
        smooth[smooth.len() - 1]
    );
    let model = trainer.into_model();

    let records = score_corpus(&model, &heldout.utterances, false)?;
    for (class, emotion) in model.vocab.non_neutral() {
        let (scores, truth): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter(|r| r.emotion == emotion)
            .map(|r| {
                let t = heldout
                    .truth
                    .iter()
                    .find(|t| t.utterance_id == r.utterance_id)
                    .expect("every utterance has ground truth");
                (r.score, t.true_intensity)
            })
            .unzip();
        println!(
            "class {class} {emotion:<10} n={:<3} spearman(score, intensity) = {:.4}",
            scores.len(),
            spearman(&scores, &truth)?
        );
    }

    let mut correct = 0;
    let mut total = 0;
    for fm in heldout.utterances.iter().filter(|f| !f.is_neutral()) {
        let class = model.vocab.index(&fm.emotion)?;
        let h = pool(&model.forward_intensity(&fm.to_tensor(), class)?)?;
        let logits = model.classify(&h)?;
        let argmax = (0..logits.len())
            .max_by(|&a, &b| logits[a].total_cmp(&logits[b]))
            .unwrap_or(0);
        correct += usize::from(argmax == class);
        total += 1;
    }
    println!(
        "classifier accuracy on unmixed held-out utterances: {correct}/{total} = {:.3}",
        correct as f64 / total as f64
    );
    Ok(())
}
