use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{multitask_loss_weighted, MultiTaskLoss};
use super::model_file::TrainingProvenance;
use super::toynet::{sigmoid, ToyNet, ToyNetConfig, Trace};
use super::{Prediction, PredictorHandle};
use crate::error::{Error, Result};
use crate::geometry::Patch;
use crate::labeling::LabeledPatch;
use crate::prm::DensityClass;

/// Which loss terms drive the weight updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Joint,
    ClassOnly,
    CountOnly,
}

impl Objective {
    fn uses_count(self) -> bool {
        self != Objective::ClassOnly
    }

    fn uses_class(self) -> bool {
        self != Objective::CountOnly
    }

    fn total(self, l: &MultiTaskLoss, class_weight: f64) -> f64 {
        match self {
            Objective::Joint => l.total,
            Objective::ClassOnly => class_weight * l.classification,
            Objective::CountOnly => l.regression,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Epochs after which the learning rate is multiplied by `gamma`.
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    /// Rescale each mini-batch gradient to at most this L2 norm.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    /// Set the network's input standardization from the training pixels.
    #[serde(default)]
    pub standardize_inputs: bool,
    pub val_fraction: f64,
    pub objective: Objective,
    pub class_weight: f64,
    pub seed: u64,
    pub net: ToyNetConfig,
    #[serde(skip)]
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 75,
            batch_size: 16,
            base_lr: 1e-3,
            milestones: vec![25, 50],
            gamma: 0.5,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 1e-4,
            max_grad_norm: Some(10.0),
            standardize_inputs: true,
            val_fraction: 0.1,
            objective: Objective::Joint,
            class_weight: 1.0,
            seed: 0,
            net: ToyNetConfig::default(),
            log_path: None,
        }
    }
}

impl TrainConfig {
    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| epoch > m).count();
        self.base_lr * self.gamma.powi(drops as i32)
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.base_lr > 0.0) || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidInput(
                "learning rate must be positive and validation fraction in [0, 1)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || self.weight_decay < 0.0
            || self.class_weight < 0.0
            || self.max_grad_norm.is_some_and(|c| !(c > 0.0))
        {
            return Err(Error::InvalidInput("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_total: f64,
    pub train_reg: f64,
    pub train_class: f64,
    pub val_total: f64,
}

pub const LOG_HEADER: &str = "epoch,lr,train_total,train_reg,train_class,val_total";

impl EpochLog {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.lr, self.train_total, self.train_reg, self.train_class, self.val_total
        )
    }
}

pub struct TrainedToyNet {
    pub net: ToyNet,
    pub provenance: TrainingProvenance,
    pub log: Vec<EpochLog>,
}

impl TrainedToyNet {
    pub fn into_handle(self) -> PredictorHandle {
        PredictorHandle::ToyNet {
            net: self.net,
            provenance: Some(self.provenance),
        }
    }
}

type Sample<'a> = (&'a Patch, f64, DensityClass);

/// Mean loss over `batch` and its gradient w.r.t. every network parameter.
///
/// Per-sample gradients are computed in parallel and summed in batch order,
/// so the result does not depend on the thread count.
pub fn batch_gradient(
    net: &ToyNet,
    batch: &[Sample<'_>],
    objective: Objective,
    class_weight: f64,
) -> Result<(Vec<f64>, MultiTaskLoss)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("gradient of an empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let n = net.param_count();
    let parts = batch
        .par_iter()
        .map(|&(patch, target, class)| {
            let t = net.forward(patch)?;
            let mut g = vec![0.0; n];
            let dz = if objective.uses_count() {
                scale * 2.0 * (t.count - target) * sigmoid(t.z)
            } else {
                0.0
            };
            let mut dlogits = [0.0; 4];
            if objective.uses_class() {
                for (k, d) in dlogits.iter_mut().enumerate() {
                    let y = if k == class.index() { 1.0 } else { 0.0 };
                    *d = scale * class_weight * (t.probs[k] - y);
                }
            }
            net.backward(&t, &dlogits, dz, &mut g);
            Ok((
                g,
                Prediction {
                    scores: t.probs,
                    count: t.count,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; n];
    let mut preds = Vec::with_capacity(batch.len());
    for (g, p) in parts {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        preds.push(p);
    }
    let truth: Vec<_> = batch.iter().map(|s| (s.1, s.2)).collect();
    let loss = multitask_loss_weighted(&preds, &truth, class_weight)?;
    Ok((grad, loss))
}

fn batch_loss(net: &ToyNet, batch: &[Sample<'_>], class_weight: f64) -> Result<MultiTaskLoss> {
    let preds = batch
        .par_iter()
        .map(|s| {
            let t = net.forward(s.0)?;
            Ok(Prediction {
                scores: t.probs,
                count: t.count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<_> = batch.iter().map(|s| (s.1, s.2)).collect();
    multitask_loss_weighted(&preds, &truth, class_weight)
}

/// Mean and standard deviation of the unpadded (grayscale) pixels.
fn pixel_stats(samples: &[Sample<'_>]) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
    for (patch, _, _) in samples {
        let g = patch.pixels();
        let gray = if g.channels() == 1 {
            g.clone()
        } else {
            g.to_grayscale()
        };
        let pad = patch.pad_mask();
        for y in 0..gray.height() {
            for x in 0..gray.width() {
                if !pad.is_padding(x, y) {
                    let v = gray.get(y, x, 0) as f64;
                    n += 1.0;
                    sum += v;
                    sq += v * v;
                }
            }
        }
    }
    if n == 0.0 {
        return (0.0, 1.0);
    }
    let mean = sum / n;
    (mean, (sq / n - mean * mean).max(0.0).sqrt())
}

/// Mini-batch SGD on the multi-task objective with a step learning-rate
/// schedule, keeping the weights with the lowest validation loss.
pub fn train_toy(data: &[LabeledPatch], config: &TrainConfig) -> Result<TrainedToyNet> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("no training patches".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if data.len() < 2 || config.val_fraction == 0.0 {
        0
    } else {
        ((data.len() as f64 * config.val_fraction).floor() as usize).clamp(1, data.len() - 1)
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let as_sample = |i: &usize| -> Sample<'_> {
        let lp = &data[*i];
        (&lp.patch, lp.gt_count as f64, lp.gt_class)
    };
    let train: Vec<Sample<'_>> = train_idx.iter().map(as_sample).collect();
    let val: Vec<Sample<'_>> = if n_val == 0 {
        log::warn!("no validation split; selecting weights on the training set");
        train.clone()
    } else {
        val_idx.iter().map(as_sample).collect()
    };

    let mut net_cfg = config.net.clone();
    if config.standardize_inputs {
        let (mean, std) = pixel_stats(&train);
        net_cfg.input_mean = mean;
        net_cfg.input_std = std.max(1e-3);
    }
    let mut net = ToyNet::new(net_cfg.clone(), rng.gen())?;
    if config.objective.uses_count() {
        let mean = train.iter().map(|s| s.1).sum::<f64>() / train.len() as f64;
        net.set_count_prior(mean);
    }
    let mut velocity = vec![0.0; net.param_count()];
    let mut best = (f64::INFINITY, 0usize, net.params().to_vec());
    let mut log = Vec::with_capacity(config.epochs);
    let mut writer = match &config.log_path {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(p, e))?;
            Some((w, p.clone()))
        }
        None => None,
    };

    let mut shuffled = train.clone();
    for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch);
        shuffled.shuffle(&mut rng);
        let (mut reg_sum, mut cls_sum) = (0.0, 0.0);
        for batch in shuffled.chunks(config.batch_size) {
            let (mut grad, loss) =
                batch_gradient(&net, batch, config.objective, config.class_weight)?;
            let objective_loss = config.objective.total(&loss, config.class_weight);
            if !objective_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite training loss {objective_loss}"),
                });
            }
            reg_sum += loss.regression * batch.len() as f64;
            cls_sum += loss.classification * batch.len() as f64;
            if let Some(cap) = config.max_grad_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cap {
                    grad.iter_mut().for_each(|g| *g *= cap / norm);
                }
            }
            let params = net.params_mut();
            for i in 0..params.len() {
                grad[i] += config.weight_decay * params[i];
                velocity[i] = config.momentum * velocity[i] + grad[i];
                let step = if config.nesterov {
                    grad[i] + config.momentum * velocity[i]
                } else {
                    velocity[i]
                };
                params[i] -= lr * step;
            }
            if net.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    detail: "non-finite weights after update".into(),
                });
            }
        }
        let n = train.len() as f64;
        let train_loss = MultiTaskLoss {
            regression: reg_sum / n,
            classification: cls_sum / n,
            total: reg_sum / n + config.class_weight * cls_sum / n,
        };
        let val_loss = batch_loss(&net, &val, config.class_weight)?;
        let val_total = config.objective.total(&val_loss, config.class_weight);
        if !val_total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("non-finite validation loss {val_total}"),
            });
        }
        let row = EpochLog {
            epoch,
            lr,
            train_total: config.objective.total(&train_loss, config.class_weight),
            train_reg: train_loss.regression,
            train_class: train_loss.classification,
            val_total,
        };
        log::info!(
            "epoch {epoch}/{} lr {lr} train {:.4} val {:.4}",
            config.epochs,
            row.train_total,
            val_total
        );
        if let Some((w, p)) = writer.as_mut() {
            writeln!(w, "{}", row.csv_row())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(p.clone(), e))?;
        }
        log.push(row);
        if val_total < best.0 {
            best = (val_total, epoch, net.params().to_vec());
        }
    }

    let net = ToyNet::from_params(net_cfg, best.2)?;
    Ok(TrainedToyNet {
        net,
        provenance: TrainingProvenance {
            seed: config.seed,
            objective: config.objective,
            epochs: config.epochs,
            best_epoch: best.1,
            best_val_total: best.0,
            n_train: train.len(),
            n_val,
            class_weight: config.class_weight,
            c_max: None,
        },
        log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Sampled parameters replaced because the step flipped a ReLU.
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
    pub worst_group: String,
    /// `(d(4h) - d(2h)) / (d(2h) - d(h))` for central differences `d` on the
    /// count-head bias; close to 4 when the truncation error is second order.
    pub richardson_ratio: f64,
}

/// Relative gap between analytic and numeric derivatives, with `floor`
/// guarding near-zero derivatives.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backpropagated gradients of the joint loss with central
/// differences on at least `samples` parameters, drawn from every tensor.
/// A parameter whose perturbation flips any ReLU is replaced by another draw
/// from the same tensor.
pub fn gradient_check(
    net: &ToyNet,
    batch: &[(Patch, f64, DensityClass)],
    samples: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let refs: Vec<Sample<'_>> = batch.iter().map(|(p, c, k)| (p, *c, *k)).collect();
    let (grad, _) = batch_gradient(net, &refs, Objective::Joint, 1.0)?;
    let groups = net.param_groups();
    let per_group = samples.div_ceil(groups.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loss_at = |i: usize, h: f64| -> Result<(f64, Vec<Trace>)> {
        let mut moved = net.clone();
        moved.params_mut()[i] += h;
        let traces = refs
            .par_iter()
            .map(|s| moved.forward(s.0))
            .collect::<Result<Vec<_>>>()?;
        let preds: Vec<Prediction> = traces
            .iter()
            .map(|t| Prediction {
                scores: t.probs,
                count: t.count,
            })
            .collect();
        let truth: Vec<_> = refs.iter().map(|s| (s.1, s.2)).collect();
        Ok((multitask_loss_weighted(&preds, &truth, 1.0)?.total, traces))
    };
    // Central difference, and whether the step crossed a ReLU kink (which
    // makes the difference quotient meaningless for that parameter).
    let numeric = |i: usize, h: f64| -> Result<(f64, bool)> {
        let (lp, tp) = loss_at(i, h)?;
        let (lm, tm) = loss_at(i, -h)?;
        let kink = tp.iter().zip(&tm).any(|(a, b)| !a.same_relu_pattern(b));
        Ok(((lp - lm) / (2.0 * h), kink))
    };
    let mut worst = (0.0f64, String::new());
    let (mut checked, mut kinks) = (0, 0);
    for (name, range) in &groups {
        let mut idx: Vec<usize> = range.clone().collect();
        idx.shuffle(&mut rng);
        let mut accepted = 0;
        for &i in &idx {
            if accepted == per_group {
                break;
            }
            let (n, kink) = numeric(i, eps)?;
            if kink {
                kinks += 1;
                continue;
            }
            accepted += 1;
            let e = relative_error(grad[i], n, 1e-6);
            if e > worst.0 || worst.1.is_empty() {
                worst = (e, name.clone());
            }
        }
        checked += accepted;
    }
    let bias = groups
        .iter()
        .find(|g| g.0 == "count_fc.bias")
        .map(|g| g.1.start)
        .unwrap();
    let h = 0.05;
    let d1 = numeric(bias, h)?.0;
    let d2 = numeric(bias, 2.0 * h)?.0;
    let d4 = numeric(bias, 4.0 * h)?.0;
    Ok(GradCheckReport {
        checked,
        kinks_skipped: kinks,
        max_rel_error: worst.0,
        worst_group: worst.1,
        richardson_ratio: (d4 - d2) / (d2 - d1),
    })
}

/// Classification accuracy of `net` on `data`.
pub fn class_accuracy(net: &ToyNet, data: &[LabeledPatch]) -> Result<f64> {
    use super::CountPredictor;
    if data.is_empty() {
        return Err(Error::InvalidInput("accuracy over no patches".into()));
    }
    let hits = data
        .par_iter()
        .map(|lp| Ok((net.predict(&lp.patch)?.class() == lp.gt_class) as usize))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / data.len() as f64)
}
