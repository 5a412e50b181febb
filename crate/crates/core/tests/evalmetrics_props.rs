use emorank::evalmetrics::{fractional_ranks, mcd, mcd_report, mel_cepstra, pearson, spearman, MCD_ORDER};
use emorank::numerics::Tensor;
use proptest::prelude::*;

fn frames(t: usize, d: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-20.0f64..20.0, t * d).prop_map(move |v| Tensor::matrix(t, d, v).unwrap())
}

fn pair() -> impl Strategy<Value = (Tensor, Tensor)> {
    (1usize..10, 2usize..15).prop_flat_map(|(t, d)| (frames(t, d), frames(t, d)))
}

#[test]
fn single_frame_reference_value() {
    let a = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
    let b = Tensor::matrix(1, 2, vec![7.0, 0.0]).unwrap();
    let want = 10.0 / 10f64.ln() * 2f64.sqrt();
    assert!((mcd(&a, &b).unwrap() - want).abs() < 1e-9);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
    let b = Tensor::matrix(3, 3, vec![0.0; 9]).unwrap();
    assert!(mcd(&a, &b).is_err());
}

#[test]
fn report_lists_each_frame() {
    let a = Tensor::matrix(2, 2, vec![0.0, 0.0, 0.0, 3.0]).unwrap();
    let b = Tensor::matrix(2, 2, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
    let r = mcd_report(&a, &b).unwrap();
    assert_eq!(r.n_items, 2);
    assert_eq!(r.per_item[0], 0.0);
    assert!((r.value - r.per_item[1] / 2.0).abs() < 1e-12);
    assert!(r.to_table().contains("dB"));
}

#[test]
fn cepstra_of_a_flat_spectrum_have_only_c0() {
    let flat = Tensor::matrix(3, 80, vec![2.5; 240]).unwrap();
    let c = mel_cepstra(&flat, MCD_ORDER).unwrap();
    assert_eq!(c.shape(), &[3, MCD_ORDER + 1]);
    for r in 0..3 {
        assert!((c.row(r)[0] - 2.5 * 80f64.sqrt()).abs() < 1e-9);
        assert!(c.row(r)[1..].iter().all(|v| v.abs() < 1e-9));
    }
    assert!(mel_cepstra(&Tensor::matrix(1, 5, vec![0.0; 5]).unwrap(), MCD_ORDER).is_err());
}

#[test]
fn spearman_hand_cases() {
    assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(fractional_ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    assert!(spearman(&[1.0], &[1.0]).is_err());
    assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
}

proptest! {
    #[test]
    fn mcd_identity_symmetry_and_sign((a, b) in pair()) {
        prop_assert_eq!(mcd(&a, &a).unwrap(), 0.0);
        let ab = mcd(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - mcd(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mcd_ignores_c0((a, b) in pair(), shift in -10.0f64..10.0) {
        let (t, d) = a.dims2().unwrap();
        let mut moved = a.data().to_vec();
        for r in 0..t {
            moved[r * d] += shift;
        }
        let moved = Tensor::matrix(t, d, moved).unwrap();
        prop_assert!((mcd(&moved, &b).unwrap() - mcd(&a, &b).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn spearman_is_invariant_to_monotone_maps(
        xs in proptest::collection::vec(-5.0f64..5.0, 3..30),
        seed in proptest::collection::vec(-5.0f64..5.0, 30),
    ) {
        let ys: Vec<f64> = seed[..xs.len()].to_vec();
        prop_assume!(xs.iter().any(|x| *x != xs[0]) && ys.iter().any(|y| *y != ys[0]));
        let base = spearman(&xs, &ys).unwrap();
        let mapped: Vec<f64> = xs.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        let cubed: Vec<f64> = ys.iter().map(|y| y.powi(3)).collect();
        prop_assert!((spearman(&mapped, &cubed).unwrap() - base).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&base));
        prop_assert!((spearman(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
    }
}
