//! Training objective: soft-label Mixup cross-entropy on both mixtures, a
//! pairwise sigmoid rank loss on the score difference, and their weighted sum.
//!
//! Each loss comes in two forms: a plain `f64` function used for evaluation
//! and tests, and a `*_var` form that records onto a [`Graph`] for training.

use serde::{Deserialize, Serialize};

use crate::numerics::{log_sum_exp, stable_sigmoid, Var};
use crate::{Error, Result};

/// Probabilities are clamped to `[P_CLAMP, 1 − P_CLAMP]` before the log.
pub const P_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || (self.alpha == 0.0 && self.beta == 0.0) {
            return Err(Error::Config(format!(
                "loss weights need alpha, beta >= 0, not both zero (got {}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// `−log softmax(logits)[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    let z = logits.get(target).ok_or_else(|| {
        Error::Invalid(format!("class {target} out of range for {} logits", logits.len()))
    })?;
    Ok(log_sum_exp(logits) - z)
}

fn check_classes(n: usize, y_emo: usize, y_neu: usize) -> Result<()> {
    if y_emo >= n || y_neu >= n || y_emo == y_neu {
        return Err(Error::Invalid(format!(
            "invalid class pair ({y_emo}, {y_neu}) for {n} classes"
        )));
    }
    Ok(())
}

/// `L_i + L_j`, with `L_k = λ_k·CE(k, y_emo) + (1 − λ_k)·CE(k, y_neu)`.
pub fn mixup_ce(
    logits_i: &[f64],
    logits_j: &[f64],
    lambda_i: f64,
    lambda_j: f64,
    y_emo: usize,
    y_neu: usize,
) -> Result<f64> {
    check_classes(logits_i.len(), y_emo, y_neu)?;
    if logits_j.len() != logits_i.len() {
        return Err(Error::Dimension("logit vectors differ in length".into()));
    }
    let term = |logits: &[f64], lambda: f64| -> Result<f64> {
        Ok(lambda * cross_entropy(logits, y_emo)? + (1.0 - lambda) * cross_entropy(logits, y_neu)?)
    };
    Ok(term(logits_i, lambda_i)? + term(logits_j, lambda_j)?)
}

/// Probability that `i` outranks `j`: `σ(r_i − r_j)`.
pub fn pair_probability(r_i: f64, r_j: f64) -> f64 {
    stable_sigmoid(r_i - r_j)
}

/// Binary cross-entropy of `p` against the soft target `lambda_diff`.
pub fn rank_loss(p: f64, lambda_diff: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    -lambda_diff * p.ln() - (1.0 - lambda_diff) * (1.0 - p).ln()
}

pub fn total_loss(l_mixup: f64, l_rank: f64, w: &LossWeights) -> f64 {
    w.alpha * l_mixup + w.beta * l_rank
}

/// Graph form of [`mixup_ce`]; logits are length-`C` vectors.
pub fn mixup_ce_var<'g>(
    logits_i: Var<'g>,
    logits_j: Var<'g>,
    lambda_i: f64,
    lambda_j: f64,
    y_emo: usize,
    y_neu: usize,
) -> Result<Var<'g>> {
    let n = logits_i.shape().iter().product();
    check_classes(n, y_emo, y_neu)?;
    let term = |logits: Var<'g>, lambda: f64| -> Result<Var<'g>> {
        let lsm = logits.log_softmax()?;
        let emo = lsm.index(y_emo)?.scale(-lambda)?;
        let neu = lsm.index(y_neu)?.scale(-(1.0 - lambda))?;
        Ok(emo.add(neu)?)
    };
    Ok(term(logits_i, lambda_i)?.add(term(logits_j, lambda_j)?)?)
}

/// Graph form of [`rank_loss`] applied to [`pair_probability`].
pub fn rank_loss_var<'g>(r_i: Var<'g>, r_j: Var<'g>, lambda_diff: f64) -> Result<Var<'g>> {
    let p = r_i.sub(r_j)?.sigmoid()?.clamp(P_CLAMP, 1.0 - P_CLAMP)?;
    let pos = p.ln()?.scale(-lambda_diff)?;
    let neg = p.scale(-1.0)?.add_scalar(1.0)?.ln()?.scale(-(1.0 - lambda_diff))?;
    Ok(pos.add(neg)?)
}

pub fn total_loss_var<'g>(l_mixup: Var<'g>, l_rank: Var<'g>, w: &LossWeights) -> Result<Var<'g>> {
    Ok(l_mixup.scale(w.alpha)?.add(l_rank.scale(w.beta)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Graph, Tensor};

    #[test]
    fn mixup_ce_hand_evaluation() {
        // CE of class 0 for logits [1, 0, 0] is −ln(e / (e + 2)).
        let ce0 = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((ce0 - 0.5514).abs() < 1e-4);
        let ce1 = cross_entropy(&[1.0, 0.0, 0.0], 1).unwrap();
        assert!((ce1 - 1.5514).abs() < 1e-4);
        let li = 0.6 * ce0 + 0.4 * ce1;
        assert!((li - 0.9514).abs() < 1e-4);
        // isolate L_i by giving L_j uniform logits and λ_j = 1: CE = ln 3
        let l = mixup_ce(&[1.0, 0.0, 0.0], &[0.0; 3], 0.6, 1.0, 0, 1).unwrap();
        assert!((l - (li + 3f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_two_log_c() {
        for &(li, lj) in &[(0.1, 0.9), (0.5, 0.5), (1.0, 0.0)] {
            let l = mixup_ce(&[0.3; 5], &[-2.0; 5], li, lj, 3, 0).unwrap();
            assert!((l - 2.0 * 5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn endpoint_lambda_reduces_to_plain_ce() {
        let a = [0.2, -1.0, 3.0];
        let b = [1.5, 0.0, -0.5];
        let l = mixup_ce(&a, &b, 1.0, 1.0, 2, 0).unwrap();
        let expect = cross_entropy(&a, 2).unwrap() + cross_entropy(&b, 2).unwrap();
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn invalid_classes() {
        assert!(mixup_ce(&[0.0; 3], &[0.0; 3], 0.5, 0.5, 1, 1).is_err());
        assert!(mixup_ce(&[0.0; 3], &[0.0; 3], 0.5, 0.5, 3, 0).is_err());
    }

    #[test]
    fn pair_probability_closed_forms() {
        assert_eq!(pair_probability(1.3, 1.3), 0.5);
        assert!((pair_probability(3f64.ln(), 0.0) - 0.75).abs() < 1e-15);
        assert!(pair_probability(1000.0, -1000.0).is_finite());
    }

    #[test]
    fn rank_loss_values() {
        assert!((rank_loss(0.5, 0.5) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(rank_loss(1.0, 1.0) < 1e-6);
        assert!(rank_loss(0.0, 1.0).is_finite());
        let grid: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
        let best = grid
            .iter()
            .copied()
            .min_by(|a, b| rank_loss(*a, 0.75).total_cmp(&rank_loss(*b, 0.75)))
            .unwrap();
        // 0.75 is not on the grid; the minimizer is its nearest neighbour
        assert!((best - 0.7).abs() < 1e-12 || (best - 0.8).abs() < 1e-12);
        assert!(rank_loss(0.75, 0.75) <= rank_loss(best, 0.75));
    }

    #[test]
    fn total_loss_weights() {
        let w = LossWeights::default();
        assert!((total_loss(2.0, 0.5, &w) - 0.7).abs() < 1e-15);
        let w0 = LossWeights { alpha: 0.0, beta: 2.0 };
        assert_eq!(total_loss(123.0, 0.5, &w0), 1.0);
        assert!(LossWeights { alpha: 0.0, beta: 0.0 }.validate().is_err());
        assert!(LossWeights { alpha: -1.0, beta: 1.0 }.validate().is_err());
    }

    #[test]
    fn graph_losses_match_scalar_forms() {
        let g = Graph::new();
        let a = g.param(Tensor::vector(vec![0.4, -0.2, 1.1]));
        let b = g.param(Tensor::vector(vec![-0.3, 0.8, 0.0]));
        let l = mixup_ce_var(a, b, 0.3, 0.7, 2, 0).unwrap();
        let expect = mixup_ce(&[0.4, -0.2, 1.1], &[-0.3, 0.8, 0.0], 0.3, 0.7, 2, 0).unwrap();
        assert!((l.item() - expect).abs() < 1e-12);

        let ri = g.param(Tensor::scalar(0.9));
        let rj = g.param(Tensor::scalar(-0.4));
        let r = rank_loss_var(ri, rj, 0.8).unwrap();
        let expect = rank_loss(pair_probability(0.9, -0.4), 0.8);
        assert!((r.item() - expect).abs() < 1e-12);
    }

    #[test]
    fn rank_gradient_sign_follows_overranking() {
        // dL/d(r_i − r_j) = p − λ_diff
        for &(ri, target) in &[(2.0, 0.6), (-1.0, 0.6), (0.0, 0.5), (0.3, 0.9)] {
            let g = Graph::new();
            let a = g.param(Tensor::scalar(ri));
            let b = g.param(Tensor::scalar(0.0));
            let loss = rank_loss_var(a, b, target).unwrap();
            let grads = g.backward(loss).unwrap();
            let d = grads.get(a).item().unwrap();
            let p = pair_probability(ri, 0.0);
            assert!((d - (p - target)).abs() < 1e-12);
            assert!((grads.get(b).item().unwrap() + d).abs() < 1e-15);
        }
    }
}
