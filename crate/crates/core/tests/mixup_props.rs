use emorank::mixup::{align_lengths, lambda_diff, make_mix_pair, make_mix_pair_with, sample_lambdas, MixSource};
use emorank::numerics::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frames(t: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(t, c, (0..t * c).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap()
}

/// Two-sided KS distance between a sample and the uniform CDF on [0, 1].
fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

#[test]
fn lambdas_are_uniform_on_the_open_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let (is, js): (Vec<f64>, Vec<f64>) = (0..n).map(|_| sample_lambdas(&mut rng)).unzip();
    for xs in [is, js] {
        assert!(xs.iter().all(|v| *v > 0.0 && *v < 1.0));
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        let d = ks_uniform(xs);
        assert!(d < 0.01, "KS statistic {d}");
    }
}

#[test]
fn min_length_rule_and_contiguous_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let emo = frames(100, 4, &mut rng);
    let neu = frames(60, 4, &mut rng);
    for _ in 0..20 {
        let a = align_lengths(&emo, &neu, &mut rng).unwrap();
        assert_eq!(a.emo.shape(), &[60, 4]);
        assert_eq!(a.neu.shape(), &[60, 4]);
        assert_eq!(a.neu_offset, 0);
        // Locate the first cropped row in the source, then require the
        // following rows to follow on consecutively.
        let start = (0..=40).find(|&s| emo.row(s) == a.emo.row(0)).expect("first row comes from x_emo");
        assert_eq!(start, a.emo_offset);
        for r in 0..60 {
            assert_eq!(a.emo.row(r), emo.row(start + r));
            assert_eq!(a.neu.row(r), neu.row(r));
        }
    }
    let a = align_lengths(&neu, &neu, &mut rng).unwrap();
    assert_eq!((a.emo_offset, a.neu_offset), (0, 0));
    assert_eq!(a.emo, neu);
}

#[test]
fn endpoint_weights_reproduce_the_crops_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let emo = frames(13, 6, &mut rng);
    let neu = frames(9, 6, &mut rng);
    let p = make_mix_pair_with(
        MixSource { frames: &emo, class: 2 },
        MixSource { frames: &neu, class: 0 },
        1.0,
        0.0,
        &mut rng,
    )
    .unwrap();
    let (eo, no) = p.offsets;
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let crop = |x: &Tensor, o: usize| Tensor::matrix(9, 6, x.data()[o * 6..(o + 9) * 6].to_vec()).unwrap();
    assert_eq!(bits(&p.x_mix_i), bits(&crop(&emo, eo)));
    assert_eq!(bits(&p.x_mix_j), bits(&crop(&neu, no)));
    assert_eq!(p.lambda_diff, 1.0);
}

#[test]
fn worked_lambda_diff() {
    assert!((lambda_diff(0.8, 0.3) - 0.75).abs() < 1e-15);
}

proptest! {
    #[test]
    fn mixtures_are_convex_and_weights_ordered(seed in any::<u64>(), te in 1usize..30, tn in 1usize..30, c in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emo = frames(te, c, &mut rng);
        let neu = frames(tn, c, &mut rng);
        let p = make_mix_pair(MixSource { frames: &emo, class: 1 }, MixSource { frames: &neu, class: 0 }, &mut rng).unwrap();
        let t = te.min(tn);
        let (eo, no) = p.offsets;
        for (x, lambda) in [(&p.x_mix_i, p.lambda_i), (&p.x_mix_j, p.lambda_j)] {
            prop_assert!(lambda > 0.0 && lambda < 1.0);
            prop_assert_eq!(x.shape(), &[t, c]);
            for r in 0..t {
                for k in 0..c {
                    let a = emo.row(eo + r)[k];
                    let b = neu.row(no + r)[k];
                    let v = x.row(r)[k];
                    prop_assert!(a.min(b) <= v && v <= a.max(b));
                    prop_assert!((v - (lambda * a + (1.0 - lambda) * b)).abs() < 1e-12);
                }
            }
        }
        let d = p.lambda_diff;
        if p.lambda_i > p.lambda_j {
            prop_assert!(d > 0.5 && d <= 1.0);
        } else if p.lambda_i < p.lambda_j {
            prop_assert!((0.0..0.5).contains(&d));
        } else {
            prop_assert_eq!(d, 0.5);
        }
    }

    #[test]
    fn swapping_weights_reflects_the_target(li in 0.0f64..=1.0, lj in 0.0f64..=1.0) {
        prop_assert!((lambda_diff(lj, li) - (1.0 - lambda_diff(li, lj))).abs() < 1e-15);
    }

    #[test]
    fn pair_construction_is_deterministic(seed in any::<u64>()) {
        let mut data_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let emo = frames(17, 3, &mut data_rng);
        let neu = frames(11, 3, &mut data_rng);
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            make_mix_pair(MixSource { frames: &emo, class: 1 }, MixSource { frames: &neu, class: 0 }, &mut rng).unwrap()
        };
        let (a, b) = (build(), build());
        prop_assert_eq!(a.x_mix_i, b.x_mix_i);
        prop_assert_eq!(a.x_mix_j, b.x_mix_j);
        prop_assert_eq!(a.lambda_i.to_bits(), b.lambda_i.to_bits());
        prop_assert_eq!(a.offsets, b.offsets);
    }
}
