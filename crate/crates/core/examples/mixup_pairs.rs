//! Builds a few mixup pairs from random frame matrices and shows the
//! mixing weights and the soft ranking target they imply.
//!
//! cargo run --example mixup_pairs

use emorank::mixup::{make_mix_pair, MixSource};
use emorank::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> emorank::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut random = |t: usize| Tensor::matrix(t, 4, (0..t * 4).map(|_| rng.random_range(-1.0..1.0)).collect());
    let emotional = random(12)?;
    let neutral = random(9)?;

    println!("{:>8} {:>8} {:>10} {:>7} {:>11}", "lambda_i", "lambda_j", "lambda_diff", "frames", "offsets");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..6 {
        let pair = make_mix_pair(
            MixSource { frames: &emotional, class: 1 },
            MixSource { frames: &neutral, class: 0 },
            &mut rng,
        )?;
        println!(
            "{:>8.4} {:>8.4} {:>10.4} {:>7} {:>11}",
            pair.lambda_i,
            pair.lambda_j,
            pair.lambda_diff,
            pair.x_mix_i.shape()[0],
            format!("{:?}", pair.offsets)
        );
    }
    Ok(())
}
