mod common;

use std::collections::BTreeMap;

use emorank::training::{
    read_loss_trace, sample_pair, smoothed, train_rank_model, write_loss_trace, Corpus, PairPolicy, TrainConfig,
    Trainer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        learning_rate: 1e-3,
        batch_pairs: 4,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn draws_are_uniform_over_emotional_utterances() {
    let synth = common::small_corpus(5, 1);
    let corpus = Corpus::new(synth.utterances).unwrap();
    let n = 10_000;
    let k = corpus.emotional().len();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for policy in [PairPolicy::SameSpeaker, PairPolicy::Any] {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for _ in 0..n {
            let (emo, neu) = sample_pair(&corpus, policy, &mut rng);
            assert!(corpus.items()[neu].is_neutral());
            if policy == PairPolicy::SameSpeaker {
                assert_eq!(corpus.items()[emo].speaker, corpus.items()[neu].speaker);
            }
            *counts.entry(emo).or_default() += 1;
        }
        assert_eq!(counts.len(), k);
        let p = 1.0 / k as f64;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (idx, c) in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "utterance {idx}: {c} vs {mean:.1} ± {sigma:.1}");
        }
    }
}

#[test]
fn loss_decreases_over_200_iterations() {
    let synth = common::small_corpus(6, 2);
    let corpus = Corpus::new(synth.utterances).unwrap();
    let out = train_rank_model(&corpus, &common::small_extractor(), &config(200, 3)).unwrap();
    assert_eq!(out.trace.len(), 200);
    assert!(out.trace.iter().all(|r| r.l_total.is_finite() && r.l_mixup.is_finite() && r.l_rank.is_finite()));
    assert!(out.trace.iter().enumerate().all(|(i, r)| r.iteration == i));
    let totals: Vec<f64> = out.trace.iter().map(|r| r.l_total).collect();
    let s = smoothed(&totals, 0.05);
    assert!(s[s.len() - 1] < s[0], "smoothed {} -> {}", s[0], s[s.len() - 1]);
}

#[test]
fn same_seed_same_trace() {
    let synth = common::small_corpus(4, 4);
    let corpus = Corpus::new(synth.utterances).unwrap();
    let a = train_rank_model(&corpus, &common::small_extractor(), &config(25, 9)).unwrap();
    let b = train_rank_model(&corpus, &common::small_extractor(), &config(25, 9)).unwrap();
    for (x, y) in a.trace.iter().zip(&b.trace) {
        assert!((x.l_total - y.l_total).abs() <= 1e-12);
    }
    assert_eq!(a.model, b.model);
    let c = train_rank_model(&corpus, &common::small_extractor(), &config(25, 10)).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let synth = common::small_corpus(4, 5);
    let corpus = Corpus::new(synth.utterances).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..config(15, 1)
    };
    let mut t = Trainer::new(&corpus, &common::small_extractor(), cfg).unwrap();
    let before = t.model().params.clone();
    t.run().unwrap();
    assert_eq!(t.model().params, before);
    assert_eq!(t.trace().len(), 15);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let synth = common::small_corpus(4, 6);
    let corpus = Corpus::new(synth.utterances).unwrap();
    let cfg = config(30, 12);
    let full = train_rank_model(&corpus, &common::small_extractor(), &cfg).unwrap();

    let mut first = Trainer::new(&corpus, &common::small_extractor(), TrainConfig { iterations: 11, ..cfg.clone() }).unwrap();
    first.run().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    first.save_checkpoint(&path).unwrap();
    let mut resumed = Trainer::load_checkpoint(&corpus, &path, Some(30)).unwrap();
    assert_eq!(resumed.iteration(), 11);
    resumed.run().unwrap();

    for (a, b) in full.trace.iter().zip(resumed.trace()) {
        assert!((a.l_total - b.l_total).abs() <= 1e-12);
    }
    assert_eq!(resumed.trace().len(), 30);
    for (name, t) in &full.model.params.tensors {
        let u = &resumed.model().params.tensors[name];
        for (x, y) in t.data().iter().zip(u.data()) {
            assert!((x - y).abs() <= 1e-12, "{name}");
        }
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let synth = common::small_corpus(3, 7);
    let corpus = Corpus::new(synth.utterances).unwrap();
    let mut t = Trainer::new(&corpus, &common::small_extractor(), config(2, 0)).unwrap();
    t.run().unwrap();
    let mut bytes = t.checkpoint_bytes().unwrap();
    let n = bytes.len();
    bytes[n - 9] ^= 0x10;
    assert!(Trainer::resume(&corpus, &bytes, None).is_err());
    assert!(Trainer::resume(&corpus, &bytes[..n / 2], None).is_err());
}

#[test]
fn loss_trace_csv_round_trip() {
    let synth = common::small_corpus(3, 8);
    let corpus = Corpus::new(synth.utterances).unwrap();
    let out = train_rank_model(&corpus, &common::small_extractor(), &config(5, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    write_loss_trace(&out.trace, &path).unwrap();
    assert_eq!(read_loss_trace(&path).unwrap(), out.trace);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("iteration,l_mixup,l_rank,l_total"));
}
