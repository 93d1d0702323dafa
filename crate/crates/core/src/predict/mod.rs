//! Patch-level predictors: anything that maps a 224x224 patch to four class
//! scores and a non-negative count.
//!
//! Three implementations sit behind [`PredictorHandle`]: an oracle that reads
//! ground truth, a small trainable network ([`ToyNet`]), and an adapter that
//! talks to an external process over line-delimited JSON.

mod external;
mod losses;
mod model_file;
mod oracle;
mod toynet;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Patch, PATCH_SIZE};
use crate::prm::DensityClass;

pub use external::{
    decode_request, encode_request, serve, ChildProcess, ExternalPredictor, LineTransport,
    PatchRequest, PredictionResponse, StreamTransport,
};
pub use losses::{
    cross_entropy, mse_loss, multitask_loss, multitask_loss_weighted, MultiTaskLoss, PROB_FLOOR,
};
pub use model_file::{load_model, save_model, ModelFile, TrainingProvenance, MODEL_FORMAT_VERSION};
pub use oracle::OraclePredictor;
pub use toynet::{softplus, ToyNet, ToyNetConfig};
pub use train::{
    batch_gradient, class_accuracy, gradient_check, relative_error, train_toy, EpochLog,
    GradCheckReport, Objective, TrainConfig, TrainedToyNet, LOG_HEADER,
};

/// Class distribution plus count estimate for one patch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Softmax over NC, LC, MC, HC.
    pub scores: [f64; 4],
    pub count: f64,
}

impl Prediction {
    /// Validates and normalizes raw scores; negative or non-finite counts are
    /// clamped to zero.
    pub fn new(scores: [f64; 4], count: f64) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Predictor(format!("invalid class scores {scores:?}")));
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > 1e-3 {
            return Err(Error::Predictor(format!(
                "class scores sum to {sum}, expected 1"
            )));
        }
        if count.is_nan() || count == f64::INFINITY {
            return Err(Error::Predictor(format!("invalid count {count}")));
        }
        Ok(Self {
            scores: scores.map(|s| s / sum),
            count: count.max(0.0),
        })
    }

    pub fn one_hot(class: DensityClass, count: f64) -> Self {
        let mut scores = [0.0; 4];
        scores[class.index()] = 1.0;
        Self {
            scores,
            count: count.max(0.0),
        }
    }

    /// Arg-max class; ties go to the lower class.
    pub fn class(&self) -> DensityClass {
        let mut best = 0;
        for i in 1..4 {
            if self.scores[i] > self.scores[best] {
                best = i;
            }
        }
        DensityClass::from_index(best).unwrap()
    }
}

/// Anything that can score a patch. Implementations must be deterministic and
/// safe to call concurrently.
pub trait CountPredictor: Send + Sync {
    fn predict(&self, patch: &Patch) -> Result<Prediction>;

    fn describe(&self) -> String {
        "predictor".to_owned()
    }
}

/// Contract of the single-pass scheme: the class comes from a head attached
/// mid-network to the original patch, and each PRM-routed patch is counted in
/// the context of that original patch.
pub trait SinglePassPredictor: Send + Sync {
    fn classify(&self, original: &Patch) -> Result<[f64; 4]>;
    fn count_routed(&self, original: &Patch, routed: &Patch) -> Result<f64>;
}

/// Every ordinary predictor realizes the single-pass contract by scoring the
/// original patch and counting each routed patch on its own.
impl<T: CountPredictor + ?Sized> SinglePassPredictor for T {
    fn classify(&self, original: &Patch) -> Result<[f64; 4]> {
        Ok(self.predict(original)?.scores)
    }

    fn count_routed(&self, _original: &Patch, routed: &Patch) -> Result<f64> {
        Ok(self.predict(routed)?.count)
    }
}

pub(crate) fn check_patch(p: &Patch) -> Result<()> {
    let g = p.pixels();
    if g.height() != PATCH_SIZE || g.width() != PATCH_SIZE {
        return Err(Error::PatchSize {
            height: g.height(),
            width: g.width(),
        });
    }
    Ok(())
}

pub enum PredictorHandle {
    Oracle(OraclePredictor),
    ToyNet {
        net: ToyNet,
        provenance: Option<TrainingProvenance>,
    },
    External(ExternalPredictor),
}

impl PredictorHandle {
    pub fn kind(&self) -> &'static str {
        match self {
            PredictorHandle::Oracle(_) => "oracle",
            PredictorHandle::ToyNet { .. } => "toynet",
            PredictorHandle::External(_) => "external",
        }
    }
}

impl CountPredictor for PredictorHandle {
    fn predict(&self, patch: &Patch) -> Result<Prediction> {
        match self {
            PredictorHandle::Oracle(o) => o.predict(patch),
            PredictorHandle::ToyNet { net, .. } => net.predict(patch),
            PredictorHandle::External(e) => e.predict(patch),
        }
    }

    fn describe(&self) -> String {
        match self {
            PredictorHandle::Oracle(o) => o.describe(),
            PredictorHandle::ToyNet { net, .. } => net.describe(),
            PredictorHandle::External(e) => e.describe(),
        }
    }
}

/// Always predicts the same class and count. Useful as an ablation stub.
#[derive(Clone, Copy, Debug)]
pub struct FixedPredictor {
    pub class: DensityClass,
    pub count: f64,
}

impl CountPredictor for FixedPredictor {
    fn predict(&self, patch: &Patch) -> Result<Prediction> {
        check_patch(patch)?;
        Ok(Prediction::one_hot(self.class, self.count))
    }

    fn describe(&self) -> String {
        format!("fixed({}, {})", self.class, self.count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_break_low() {
        let p = Prediction::new([0.25; 4], 1.0).unwrap();
        assert_eq!(p.class(), DensityClass::NoCrowd);
        let p = Prediction::new([0.0, 0.4, 0.4, 0.2], 1.0).unwrap();
        assert_eq!(p.class(), DensityClass::LowCrowd);
        let p = Prediction::new([0.1, 0.1, 0.1, 0.7], 1.0).unwrap();
        assert_eq!(p.class(), DensityClass::HighCrowd);
    }

    #[test]
    fn prediction_validation() {
        assert!(Prediction::new([0.5, 0.5, 0.5, 0.5], 1.0).is_err());
        assert!(Prediction::new([-0.1, 0.5, 0.3, 0.3], 1.0).is_err());
        assert!(Prediction::new([0.25; 4], f64::NAN).is_err());
        let p = Prediction::new([0.25; 4], -3.0).unwrap();
        assert_eq!(p.count, 0.0);
    }
}
