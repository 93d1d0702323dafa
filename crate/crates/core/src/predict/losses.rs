use serde::{Deserialize, Serialize};

use super::Prediction;
use crate::error::{Error, Result};
use crate::prm::DensityClass;

/// Probabilities are clamped to this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean squared error between predicted and ground-truth counts.
pub fn mse_loss(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "loss over {} predictions and {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("loss over an empty batch".into()));
    }
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

pub fn cross_entropy(scores: &[f64; 4], class: DensityClass) -> f64 {
    -scores[class.index()].max(PROB_FLOOR).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskLoss {
    pub total: f64,
    pub regression: f64,
    pub classification: f64,
}

/// `regression + classification`, both batch means.
pub fn multitask_loss(
    preds: &[Prediction],
    truth: &[(f64, DensityClass)],
) -> Result<MultiTaskLoss> {
    multitask_loss_weighted(preds, truth, 1.0)
}

pub fn multitask_loss_weighted(
    preds: &[Prediction],
    truth: &[(f64, DensityClass)],
    class_weight: f64,
) -> Result<MultiTaskLoss> {
    let counts: Vec<f64> = preds.iter().map(|p| p.count).collect();
    let targets: Vec<f64> = truth.iter().map(|t| t.0).collect();
    let regression = mse_loss(&counts, &targets)?;
    let ce: f64 = preds
        .iter()
        .zip(truth)
        .map(|(p, t)| cross_entropy(&p.scores, t.1))
        .sum();
    let classification = ce / preds.len() as f64;
    let total = if class_weight == 1.0 {
        regression + classification
    } else {
        regression + class_weight * classification
    };
    Ok(MultiTaskLoss {
        total,
        regression,
        classification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        assert_eq!(mse_loss(&[1.0, 3.0], &[0.0, 1.0]).unwrap(), 2.5);
        let s = [0.25, 0.25, 0.25, 0.25];
        assert!((cross_entropy(&s, DensityClass::HighCrowd) - 4f64.ln()).abs() < 1e-15);
        let zero = [1.0, 0.0, 0.0, 0.0];
        assert!((cross_entropy(&zero, DensityClass::LowCrowd) - 27.631021115928547).abs() < 1e-9);
        assert!(mse_loss(&[], &[]).is_err());
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn arb_pred() -> impl Strategy<Value = (Prediction, (f64, DensityClass))> {
        (
            prop::array::uniform4(0.0f64..1.0),
            0.0f64..500.0,
            0.0f64..500.0,
            0usize..4,
        )
            .prop_map(|(raw, count, gt, c)| {
                let sum: f64 = raw.iter().sum::<f64>() + 1e-9;
                let scores = raw.map(|r| (r + 1e-9 / 4.0) / sum);
                (
                    Prediction { scores, count },
                    (gt, DensityClass::from_index(c).unwrap()),
                )
            })
    }

    proptest! {
        #[test]
        fn total_is_exact_sum(batch in prop::collection::vec(arb_pred(), 1..20)) {
            let (p, t): (Vec<_>, Vec<_>) = batch.into_iter().unzip();
            let l = multitask_loss(&p, &t).unwrap();
            prop_assert_eq!(l.total, l.regression + l.classification);
            prop_assert!(l.regression >= 0.0 && l.classification >= 0.0);
        }

        #[test]
        fn mse_symmetric_and_zero_on_equal(v in prop::collection::vec(-1e3f64..1e3, 1..30),
                                           w in prop::collection::vec(-1e3f64..1e3, 1..30)) {
            let n = v.len().min(w.len());
            let (a, b) = (&v[..n], &w[..n]);
            prop_assert_eq!(mse_loss(a, b).unwrap(), mse_loss(b, a).unwrap());
            prop_assert_eq!(mse_loss(a, a).unwrap(), 0.0);
        }
    }
}
