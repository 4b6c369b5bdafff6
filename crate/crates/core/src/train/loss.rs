//! Masked reconstruction losses over per-timestep predictions.

use crate::dataset::Targets;
use crate::error::{Error, Result};
use crate::mathx;
use crate::model::Predictions;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    /// Cross-entropy over discrete action logits.
    Ce,
    /// Mean squared error over continuous actions (mean over action dims).
    Mse,
}

/// Sum of per-position losses over the valid slots (no averaging).
pub fn position_losses(preds: &Predictions, targets: &Targets, kind: LossKind) -> Result<f64> {
    let dim = preds.dim;
    let mut sum = 0.0;
    for slot in 0..preds.k {
        if !preds.valid[slot] {
            continue;
        }
        let row = &preds.values[slot * dim..(slot + 1) * dim];
        match (kind, targets) {
            (LossKind::Ce, Targets::Discrete(t)) => {
                let target = t[slot];
                if target >= dim {
                    return Err(Error::domain(alloc::format!("target {target} out of {dim} classes")));
                }
                // Stable log-softmax.
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + mathx::ln(row.iter().map(|v| mathx::exp(v - m)).sum::<f64>());
                sum += lse - row[target];
            }
            (LossKind::Mse, Targets::Continuous { dim: ad, values }) => {
                if *ad != dim {
                    return Err(Error::shape("target dim does not match prediction dim"));
                }
                let t = &values[slot * dim..(slot + 1) * dim];
                let mut acc = 0.0;
                for i in 0..dim {
                    let e = row[i] - t[i];
                    acc += e * e;
                }
                sum += acc / dim as f64;
            }
            _ => return Err(Error::config("loss kind does not match target type")),
        }
    }
    Ok(sum)
}

/// Masked mean loss: sum of per-position losses over the count of valid
/// positions. Errors when the mask is empty.
pub fn compute_loss(preds: &Predictions, targets: &Targets, kind: LossKind) -> Result<f64> {
    let n = preds.valid.iter().filter(|v| **v).count();
    if n == 0 {
        return Err(Error::domain("loss over an empty mask"));
    }
    Ok(position_losses(preds, targets, kind)? / n as f64)
}

/// Writes d(loss)/d(predictions) scaled by `scale` into `g` (k x dim;
/// zero rows at invalid slots). `scale` is 1/total_valid of the batch.
pub fn loss_grad_into(
    preds: &Predictions,
    targets: &Targets,
    kind: LossKind,
    scale: f64,
    g: &mut [f64],
) -> Result<()> {
    let dim = preds.dim;
    debug_assert_eq!(g.len(), preds.k * dim);
    for slot in 0..preds.k {
        let gr = &mut g[slot * dim..(slot + 1) * dim];
        if !preds.valid[slot] {
            gr.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let row = &preds.values[slot * dim..(slot + 1) * dim];
        match (kind, targets) {
            (LossKind::Ce, Targets::Discrete(t)) => {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = row.iter().map(|v| mathx::exp(v - m)).sum();
                for i in 0..dim {
                    let p = mathx::exp(row[i] - m) / denom;
                    gr[i] = scale * (p - if i == t[slot] { 1.0 } else { 0.0 });
                }
            }
            (LossKind::Mse, Targets::Continuous { values, .. }) => {
                let t = &values[slot * dim..(slot + 1) * dim];
                for i in 0..dim {
                    gr[i] = scale * 2.0 * (row[i] - t[i]) / dim as f64;
                }
            }
            _ => return Err(Error::config("loss kind does not match target type")),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn preds(values: alloc::vec::Vec<f64>, dim: usize, valid: alloc::vec::Vec<bool>) -> Predictions {
        Predictions { k: valid.len(), dim, values, valid }
    }

    #[test]
    fn mse_of_exact_predictions_is_zero() {
        let p = preds(vec![0.3, -0.2], 1, vec![true, true]);
        let t = Targets::Continuous { dim: 1, values: vec![0.3, -0.2] };
        assert_eq!(compute_loss(&p, &t, LossKind::Mse).unwrap(), 0.0);
    }

    #[test]
    fn uniform_logits_give_ln_n() {
        let p = preds(vec![0.7; 4], 4, vec![true]);
        let t = Targets::Discrete(vec![2]);
        let loss = compute_loss(&p, &t, LossKind::Ce).unwrap();
        assert!((loss - mathx::ln(4.0)).abs() < 1e-12);
    }

    #[test]
    fn masked_mean_equals_loss_on_unmasked_half() {
        let values = vec![0.1, 0.9, 0.4, 0.6, 2.0, -1.0, 0.0, 0.0];
        let t_all = Targets::Discrete(vec![1, 0, 0, 1]);
        let half = preds(values.clone(), 2, vec![true, true, false, false]);
        let full_front = preds(values[..4].to_vec(), 2, vec![true, true]);
        let a = compute_loss(&half, &t_all, LossKind::Ce).unwrap();
        let b = compute_loss(&full_front, &Targets::Discrete(vec![1, 0]), LossKind::Ce).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_is_a_domain_error() {
        let p = preds(vec![0.0, 0.0], 2, vec![false]);
        assert!(matches!(
            compute_loss(&p, &Targets::Discrete(vec![0]), LossKind::Ce),
            Err(Error::Domain(_))
        ));
    }
}
