//! Counting metrics, class-usage statistics and the experiment runners:
//! single evaluation, PRM ablation, k-fold cross-validation and
//! cross-dataset transfer. Reports are written as JSON lines plus a summary.

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labeling::{
    build_training_set, compute_cmax, AnnotatedImage, DatasetProfile, TrainingSetConfig,
};
use crate::pipelines::{ImageResult, Pipeline};
use crate::predict::{train_toy, CountPredictor, OraclePredictor, TrainConfig};

/// Mean absolute error and root mean squared error over `(actual, estimated)`.
pub fn metrics(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("metrics over an empty set".into()));
    }
    let n = pairs.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for &(a, e) in pairs {
        let d = a - e;
        abs += d.abs();
        sq += d * d;
    }
    Ok((abs / n, (sq / n).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    pub patches: usize,
    /// Share of patches per class, NC, LC, MC, HC.
    pub fractions: [f64; 4],
    /// Share sent through the down- or up-scaler.
    pub rescaled_fraction: f64,
}

impl UsageStats {
    pub fn from_histogram(h: [usize; 4]) -> Self {
        let patches: usize = h.iter().sum();
        let fractions = if patches == 0 {
            [0.0; 4]
        } else {
            h.map(|c| c as f64 / patches as f64)
        };
        Self {
            patches,
            fractions,
            rescaled_fraction: fractions[1] + fractions[3],
        }
    }

    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a ImageResult>) -> Self {
        let mut h = [0usize; 4];
        for r in results {
            for k in 0..4 {
                h[k] += r.class_histogram[k];
            }
        }
        Self::from_histogram(h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEstimate {
    pub image_id: String,
    pub actual: f64,
    pub estimated: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sorted by image id.
    pub per_image: Vec<ImageEstimate>,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
    /// Images that failed and were left out of `n`.
    pub failures: Vec<String>,
}

impl EvalReport {
    pub fn warnings(&self) -> usize {
        self.failures.len()
    }
}

/// Identifies an experiment; its hash names the report files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    pub seed: u64,
    pub dataset: String,
    pub c_max: u32,
    pub counter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<String>,
    /// Free-form provenance, e.g. the training dataset.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl ExperimentConfig {
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&canonical)[..6])
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub report: EvalReport,
    pub usage: UsageStats,
    /// Successful images, sorted by id.
    pub images: Vec<ImageResult>,
    /// Fully resolved invocation settings, echoed into the summary.
    pub run_config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UsageSummary {
    pub nc: f64,
    pub lc: f64,
    pub mc: f64,
    pub hc: f64,
    pub rescaled: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportSummary {
    pub config_hash: String,
    pub seed: u64,
    pub pipeline: Pipeline,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
    pub usage: UsageSummary,
    pub warnings: usize,
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

impl ExperimentOutcome {
    pub fn summary(&self) -> ReportSummary {
        let f = self.usage.fractions;
        ReportSummary {
            config_hash: self.config.hash(),
            seed: self.config.seed,
            pipeline: self.config.pipeline,
            mae: self.report.mae,
            rmse: self.report.rmse,
            n: self.report.n,
            usage: UsageSummary {
                nc: f[0],
                lc: f[1],
                mc: f[2],
                hc: f[3],
                rescaled: self.usage.rescaled_fraction,
            },
            warnings: self.report.warnings(),
            config: self.config.clone(),
            run_config: self.run_config.clone(),
        }
    }

    /// Appends one line per image (in id order) to
    /// `<pipeline>-<hash>-seed<seed>.jsonl` in `dir` and writes the matching
    /// `.summary.json`. Existing lines are never rewritten; the summary
    /// describes the latest run. The same experiment persisted into an empty
    /// directory produces the same bytes every time.
    pub fn persist(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = format!(
            "{}-{}-seed{}",
            self.config.pipeline,
            self.config.hash(),
            self.config.seed
        );
        let lines_path = dir.join(format!("{stem}.jsonl"));
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&lines_path)
            .map_err(|e| Error::io(&lines_path, e))?;
        let mut w = BufWriter::new(f);
        for (est, img) in self.report.per_image.iter().zip(&self.images) {
            let line = serde_json::json!({
                "imageId": est.image_id,
                "actual": est.actual,
                "estimated": est.estimated,
                "classHistogram": img.class_histogram,
            });
            writeln!(w, "{line}").map_err(|e| Error::io(&lines_path, e))?;
        }
        for failed in &self.report.failures {
            let line = serde_json::json!({ "failed": failed });
            writeln!(w, "{line}").map_err(|e| Error::io(&lines_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&lines_path, e))?;

        let summary_path = dir.join(format!("{stem}.summary.json"));
        let mut text = serde_json::to_string_pretty(&self.summary())?;
        text.push('\n');
        fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;
        Ok((lines_path, summary_path))
    }
}

/// Runs `config.pipeline` on every image. Images that fail are logged,
/// listed in the report and excluded from the metrics.
pub fn run_experiment(
    config: &ExperimentConfig,
    images: &[AnnotatedImage],
    counter: &dyn CountPredictor,
    classifier: Option<&dyn CountPredictor>,
) -> Result<ExperimentOutcome> {
    let runs: Vec<(String, f64, Result<ImageResult>)> = images
        .par_iter()
        .map(|img| {
            let r = config
                .pipeline
                .run(&img.id, &img.image, counter, classifier);
            (img.id.clone(), img.heads.len() as f64, r)
        })
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (id, actual, r) in runs {
        match r {
            Ok(res) => ok.push((actual, res)),
            Err(e) => {
                log::warn!("image `{id}` excluded: {e}");
                failures.push(format!("{id}: {e}"));
            }
        }
    }
    ok.sort_by(|a, b| a.1.image_id.cmp(&b.1.image_id));
    failures.sort();
    let per_image: Vec<ImageEstimate> = ok
        .iter()
        .map(|(actual, r)| ImageEstimate {
            image_id: r.image_id.clone(),
            actual: *actual,
            estimated: r.total_count,
        })
        .collect();
    let pairs: Vec<(f64, f64)> = per_image.iter().map(|p| (p.actual, p.estimated)).collect();
    let (mae, rmse) = metrics(&pairs).map_err(|_| {
        Error::InvalidInput(format!(
            "no image could be evaluated ({} failed)",
            failures.len()
        ))
    })?;
    let images: Vec<ImageResult> = ok.into_iter().map(|(_, r)| r).collect();
    Ok(ExperimentOutcome {
        config: config.clone(),
        usage: UsageStats::from_results(&images),
        report: EvalReport {
            n: per_image.len(),
            per_image,
            mae,
            rmse,
            failures,
        },
        images,
        run_config: None,
    })
}

impl ExperimentOutcome {
    /// Records images that never reached the pipeline (e.g. unreadable files)
    /// as failures.
    pub fn add_failures(&mut self, failures: impl IntoIterator<Item = String>) {
        self.report.failures.extend(failures);
        self.report.failures.sort();
    }
}

#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub with_prm: ExperimentOutcome,
    pub without_prm: ExperimentOutcome,
}

impl AblationOutcome {
    /// `with - without`; negative means the PRM helped.
    pub fn delta_mae(&self) -> f64 {
        self.with_prm.report.mae - self.without_prm.report.mae
    }

    pub fn delta_rmse(&self) -> f64 {
        self.with_prm.report.rmse - self.without_prm.report.rmse
    }
}

/// Runs `config.pipeline` and the no-PRM baseline with the same predictors
/// on the same images.
pub fn run_ablation(
    config: &ExperimentConfig,
    images: &[AnnotatedImage],
    counter: &dyn CountPredictor,
    classifier: Option<&dyn CountPredictor>,
) -> Result<AblationOutcome> {
    if config.pipeline == Pipeline::NoPrm {
        return Err(Error::InvalidInput("ablation needs a PRM pipeline".into()));
    }
    let with_prm = run_experiment(config, images, counter, classifier)?;
    let base_cfg = ExperimentConfig {
        pipeline: Pipeline::NoPrm,
        ..config.clone()
    };
    let without_prm = run_experiment(&base_cfg, images, counter, None)?;
    Ok(AblationOutcome {
        with_prm,
        without_prm,
    })
}

/// Seeded shuffle of `0..n` cut into `k` folds; the first `n % k` folds are
/// one larger. Returns `(train, test)` index lists per fold.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::InvalidInput("k-fold needs k >= 2".into()));
    }
    if k > n {
        return Err(Error::InvalidInput(format!(
            "cannot split {n} items into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let test = order[start..start + len].to_vec();
        let train = order[..start]
            .iter()
            .chain(&order[start + len..])
            .copied()
            .collect();
        folds.push((train, test));
        start += len;
    }
    Ok(folds)
}

pub fn kfold_split<T: Clone>(items: &[T], k: usize, seed: u64) -> Result<Vec<(Vec<T>, Vec<T>)>> {
    Ok(kfold_indices(items.len(), k, seed)?
        .into_iter()
        .map(|(tr, te)| {
            (
                tr.iter().map(|&i| items[i].clone()).collect(),
                te.iter().map(|&i| items[i].clone()).collect(),
            )
        })
        .collect())
}

pub struct TrainedModels {
    pub counter: Box<dyn CountPredictor>,
    pub classifier: Option<Box<dyn CountPredictor>>,
    pub label: String,
}

/// Produces predictors from a training split and its profile.
pub trait ModelFactory: Sync {
    fn build(&self, train: &[AnnotatedImage], profile: &DatasetProfile) -> Result<TrainedModels>;
}

/// Ground-truth predictors. Knows the annotations of every image it may be
/// asked about, which is the point: it isolates pipeline behaviour.
pub struct OracleFactory<'a> {
    pub annotated: &'a [AnnotatedImage],
}

impl ModelFactory for OracleFactory<'_> {
    fn build(&self, _train: &[AnnotatedImage], profile: &DatasetProfile) -> Result<TrainedModels> {
        let o = OraclePredictor::with_images(profile.clone(), self.annotated);
        Ok(TrainedModels {
            counter: Box::new(o),
            classifier: None,
            label: format!("oracle(c_max={})", profile.c_max),
        })
    }
}

/// Trains one dual-head [`crate::predict::ToyNet`] on a balanced crop set.
pub struct ToyNetFactory {
    pub crops: TrainingSetConfig,
    pub training: TrainConfig,
}

impl ModelFactory for ToyNetFactory {
    fn build(&self, train: &[AnnotatedImage], profile: &DatasetProfile) -> Result<TrainedModels> {
        let set = build_training_set(train, profile, &self.crops)?;
        let mut trained = train_toy(&set, &self.training)?;
        trained.provenance.c_max = Some(profile.c_max);
        Ok(TrainedModels {
            label: format!(
                "toynet(seed={}, epochs={}, per_class={})",
                self.training.seed, self.training.epochs, self.crops.per_class
            ),
            counter: Box::new(trained.into_handle()),
            classifier: None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub c_max: u32,
    pub outcome: ExperimentOutcome,
}

#[derive(Clone, Debug)]
pub struct KFoldOutcome {
    pub folds: Vec<FoldOutcome>,
    pub mean_mae: f64,
    pub mean_rmse: f64,
}

/// k-fold cross-validation; `c_max` is recomputed from each training fold.
pub fn run_kfold(
    images: &[AnnotatedImage],
    k: usize,
    seed: u64,
    pipeline: Pipeline,
    dataset: &str,
    factory: &dyn ModelFactory,
) -> Result<KFoldOutcome> {
    let mut folds = Vec::with_capacity(k);
    for (f, (train, test)) in kfold_split(images, k, seed)?.into_iter().enumerate() {
        let profile = compute_cmax(&train, &format!("fold{f}-train"))?;
        let models = factory.build(&train, &profile)?;
        let config = ExperimentConfig {
            pipeline,
            seed,
            dataset: format!("{dataset}/fold{f}"),
            c_max: profile.c_max,
            counter: models.label.clone(),
            classifier: None,
            tags: vec![format!("kfold:{k}")],
        };
        let outcome = run_experiment(
            &config,
            &test,
            models.counter.as_ref(),
            models.classifier.as_deref(),
        )?;
        folds.push(FoldOutcome {
            fold: f,
            c_max: profile.c_max,
            outcome,
        });
    }
    let kf = folds.len() as f64;
    Ok(KFoldOutcome {
        mean_mae: folds.iter().map(|f| f.outcome.report.mae).sum::<f64>() / kf,
        mean_rmse: folds.iter().map(|f| f.outcome.report.rmse).sum::<f64>() / kf,
        folds,
    })
}

/// Trains on one dataset and evaluates on another. `c_max` comes from the
/// training set and is reused unchanged on the test set.
pub fn cross_dataset(
    train_name: &str,
    train: &[AnnotatedImage],
    test_name: &str,
    test: &[AnnotatedImage],
    pipeline: Pipeline,
    seed: u64,
    factory: &dyn ModelFactory,
) -> Result<ExperimentOutcome> {
    if train_name == test_name {
        return Err(Error::InvalidInput(
            "cross-dataset evaluation needs two distinct datasets".into(),
        ));
    }
    let profile = compute_cmax(train, train_name)?;
    let models = factory.build(train, &profile)?;
    let config = ExperimentConfig {
        pipeline,
        seed,
        dataset: test_name.to_owned(),
        c_max: profile.c_max,
        counter: models.label.clone(),
        classifier: None,
        tags: vec![format!("train:{train_name}"), format!("test:{test_name}")],
    };
    run_experiment(
        &config,
        test,
        models.counter.as_ref(),
        models.classifier.as_deref(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{render_synthetic, CountLaw, Placement, SyntheticSpec};
    use crate::predict::FixedPredictor;
    use crate::prm::DensityClass;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        assert_eq!(metrics(&[(5.0, 5.0), (7.0, 7.0)]).unwrap(), (0.0, 0.0));
        assert_eq!(metrics(&[(100.0, 90.0)]).unwrap(), (10.0, 10.0));
        let (mae, rmse) = metrics(&[(10.0, 13.0), (10.0, 6.0)]).unwrap();
        assert_eq!(mae, 3.5);
        assert!((rmse - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(metrics(&[]).is_err());
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae_and_is_order_free(
            mut pairs in prop::collection::vec((0.0f64..1e4, 0.0f64..1e4), 1..50),
            seed in any::<u64>(),
        ) {
            let (mae, rmse) = metrics(&pairs).unwrap();
            prop_assert!(mae >= 0.0);
            prop_assert!(rmse + 1e-9 * rmse.max(1.0) >= mae);
            pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (m2, r2) = metrics(&pairs).unwrap();
            prop_assert!((mae - m2).abs() <= 1e-9 * mae.max(1.0));
            prop_assert!((rmse - r2).abs() <= 1e-9 * rmse.max(1.0));
        }

        #[test]
        fn kfold_partitions(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let folds = kfold_indices(n, k, seed).unwrap();
            let mut seen = vec![0; n];
            for (train, test) in &folds {
                prop_assert_eq!(train.len() + test.len(), n);
                for &i in test { seen[i] += 1; }
                let sizes = test.len();
                prop_assert!(sizes == n / k || sizes == n / k + 1);
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            prop_assert_eq!(folds, kfold_indices(n, k, seed).unwrap());
        }

        #[test]
        fn usage_is_a_distribution(h in prop::array::uniform4(0usize..1000)) {
            prop_assume!(h.iter().sum::<usize>() > 0);
            let u = UsageStats::from_histogram(h);
            prop_assert!((u.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(u.rescaled_fraction, u.fractions[1] + u.fractions[3]);
        }
    }

    #[test]
    fn kfold_sizes() {
        let folds = kfold_indices(107, 5, 1).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.1.len()).collect();
        assert_eq!(sizes, vec![22, 22, 21, 21, 21]);
        let sizes: Vec<usize> = kfold_indices(4, 2, 0)
            .unwrap()
            .iter()
            .map(|f| f.1.len())
            .collect();
        assert_eq!(sizes, vec![2, 2]);
        assert!(kfold_indices(3, 4, 0).is_err());
        assert!(kfold_indices(3, 1, 0).is_err());
    }

    fn tiled(counts: Vec<u32>, n: usize, seed: u64) -> Vec<AnnotatedImage> {
        let spec = SyntheticSpec {
            width: 1120,
            height: 224,
            count: CountLaw::Cycle { counts },
            placement: Placement::PerTile,
            seed,
            ..SyntheticSpec::default()
        };
        render_synthetic(&spec, n, &format!("s{seed}-")).unwrap()
    }

    fn config(pipeline: Pipeline, c_max: u32) -> ExperimentConfig {
        ExperimentConfig {
            pipeline,
            seed: 0,
            dataset: "synthetic".into(),
            c_max,
            counter: "oracle".into(),
            classifier: None,
            tags: vec![],
        }
    }

    #[test]
    fn oracle_experiment_usage_and_persistence() {
        // 5 tiles per image: 0, 0, 2, 10, 100 with c_max 100 -> NC NC LC MC HC
        let imgs = tiled(vec![0, 0, 2, 10, 100], 4, 3);
        let profile = compute_cmax(&imgs, "train").unwrap();
        assert_eq!(profile.c_max, 100);
        let oracle = OraclePredictor::with_images(profile.clone(), &imgs);
        let cfg = config(Pipeline::CcMod, profile.c_max);
        let out = run_experiment(&cfg, &imgs, &oracle, None).unwrap();
        assert_eq!((out.report.mae, out.report.rmse), (0.0, 0.0));
        assert_eq!(out.report.n, 4);
        assert_eq!(out.usage.fractions, [0.4, 0.2, 0.2, 0.2]);
        assert!((out.usage.rescaled_fraction - 0.4).abs() < 1e-15);

        let d1 = tempfile::tempdir().unwrap();
        let (l1, s1) = out.persist(d1.path()).unwrap();
        let again = run_experiment(&cfg, &imgs, &oracle, None).unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let (l2, s2) = again.persist(d2.path()).unwrap();
        assert_eq!(fs::read(&l1).unwrap(), fs::read(&l2).unwrap());
        assert_eq!(fs::read(&s1).unwrap(), fs::read(&s2).unwrap());
        let first = fs::read(&l1).unwrap();
        again.persist(d1.path()).unwrap();
        assert_eq!(fs::read(&l1).unwrap(), [first.clone(), first].concat());
        assert!(l1
            .file_name()
            .unwrap()
            .to_string_lossy()
            .contains(&cfg.hash()));
        let summary: serde_json::Value = serde_json::from_slice(&fs::read(&s1).unwrap()).unwrap();
        for key in [
            "config_hash",
            "seed",
            "pipeline",
            "mae",
            "rmse",
            "n",
            "usage",
            "warnings",
        ] {
            assert!(summary.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn failures_are_counted_not_dropped() {
        let imgs = tiled(vec![1, 2], 3, 1);
        let profile = compute_cmax(&imgs, "train").unwrap();
        let oracle = OraclePredictor::with_images(profile.clone(), &imgs[..2]);
        let out =
            run_experiment(&config(Pipeline::Cc2p, profile.c_max), &imgs, &oracle, None).unwrap();
        assert_eq!(out.report.n, 2);
        assert_eq!(out.report.warnings(), 1);
        assert!(out.report.failures[0].starts_with(&imgs[2].id));
    }

    #[test]
    fn ablation_with_fixed_stub() {
        let imgs = tiled(vec![0, 0, 0, 3, 0], 3, 5);
        let profile = compute_cmax(&imgs, "train").unwrap();
        let oracle = OraclePredictor::with_images(profile.clone(), &imgs);
        let cfg = config(Pipeline::CcMod, profile.c_max);
        let same = run_ablation(&cfg, &imgs, &oracle, Some(&oracle)).unwrap();
        assert_eq!(same.delta_mae(), 0.0);
        assert_eq!(same.with_prm.report.mae, 0.0);

        let five = FixedPredictor {
            class: DensityClass::MediumCrowd,
            count: 5.0,
        };
        let ab = run_ablation(&cfg, &imgs, &five, Some(&oracle)).unwrap();
        assert!(ab.with_prm.report.mae < ab.without_prm.report.mae);
        assert_eq!(ab.without_prm.usage.fractions, [0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn cross_dataset_keeps_training_cmax() {
        let a = tiled(vec![0, 5, 20], 3, 10);
        let b = tiled(vec![0, 60, 90], 3, 11);
        let all: Vec<AnnotatedImage> = a.iter().chain(&b).cloned().collect();
        let factory = OracleFactory { annotated: &all };
        let out = cross_dataset("A", &a, "B", &b, Pipeline::Cc2p, 0, &factory).unwrap();
        assert_eq!(out.report.mae, 0.0);
        assert_eq!(out.config.c_max, compute_cmax(&a, "A").unwrap().c_max);
        let c = tiled(vec![0, 1, 2], 3, 12);
        let all2: Vec<AnnotatedImage> = c.iter().chain(&b).cloned().collect();
        let out2 = cross_dataset(
            "C",
            &c,
            "B",
            &b,
            Pipeline::Cc2p,
            0,
            &OracleFactory { annotated: &all2 },
        )
        .unwrap();
        assert_ne!(out.config.hash(), out2.config.hash());
        assert!(cross_dataset("A", &a, "A", &a, Pipeline::Cc2p, 0, &factory).is_err());
    }

    #[test]
    fn kfold_oracle_is_exact() {
        let imgs = tiled(vec![0, 3, 7, 15, 40], 10, 2);
        let out = run_kfold(
            &imgs,
            5,
            9,
            Pipeline::Cc1p,
            "syn",
            &OracleFactory { annotated: &imgs },
        )
        .unwrap();
        assert_eq!(out.folds.len(), 5);
        assert_eq!(out.mean_mae, 0.0);
        for f in &out.folds {
            assert_eq!(f.outcome.report.n, 2);
        }
    }
}
