use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use crowdprm::dataio::*;
use crowdprm::evalharness::*;
use crowdprm::geometry::PixelGrid;
use crowdprm::labeling::*;
use crowdprm::netspec::{builtin, builtin_descriptors, propagate};
use crowdprm::pipelines::{ImageResult, Pipeline};
use crowdprm::predict::{save_model, serve as serve_lines, train_toy, TrainConfig};
use serde_json::{json, Value};

use crate::config::{pick, require, usage, FileConfig};
use crate::models::{self, Model};
use crate::{
    ArchcheckArgs, BackgroundArg, CmaxArgs, ConvertCommand, CrossArgs, EvalArgs, GenSyntheticArgs,
    KfoldArgs, LabelGenArgs, ModelArgs, PlacementArg, PredictArgs, ServeArgs, StatsArgs, TrainArgs,
    TrainingOpts,
};

/// Desk-scale default; the library default is the full-size training set.
const DEFAULT_PER_CLASS: usize = 250;
const DEFAULT_REPORT_DIR: &str = "reports";

fn seed(flag: Option<u64>, file: &FileConfig) -> u64 {
    pick(flag, &file.seed).unwrap_or_else(|| {
        eprintln!("note: no --seed given, using 0");
        0
    })
}

fn print_json(v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    writeln!(io::stdout().lock(), "{text}")?;
    Ok(())
}

fn parse_split(flag: Option<String>, file: &FileConfig, default: Split) -> Result<Split> {
    match flag {
        Some(s) => s.parse().or_else(|e: String| usage(e)),
        None => Ok(file.split.unwrap_or(default)),
    }
}

fn parse_pipeline(flag: Option<String>, file: &FileConfig) -> Result<Pipeline> {
    let s = require(flag, &file.pipeline, "pipeline")?;
    s.parse().or_else(|e: String| usage(e))
}

/// Invalid user-supplied values surface as usage errors.
fn as_usage(e: crowdprm::Error) -> anyhow::Error {
    match e {
        crowdprm::Error::InvalidInput(m) | crowdprm::Error::InvalidProfile(m) => {
            crate::config::UsageError(m).into()
        }
        other => other.into(),
    }
}

fn profile_from(c: &CmaxArgs, file: &FileConfig) -> Result<Option<DatasetProfile>> {
    if let Some(n) = pick(c.cmax, &file.cmax) {
        return Ok(Some(DatasetProfile::new(n, "--cmax").map_err(as_usage)?));
    }
    if let Some(p) = pick(c.cmax_from.clone(), &file.cmax_from) {
        let ds = load_dataset(&p).with_context(|| format!("loading {}", p.display()))?;
        return Ok(Some(compute_cmax(&ds.images, &ds.name)?));
    }
    Ok(None)
}

fn cmax_json(c: &CmaxArgs, file: &FileConfig) -> Value {
    json!({
        "cmax": pick(c.cmax, &file.cmax),
        "cmax_from": pick(c.cmax_from.clone(), &file.cmax_from),
    })
}

// ---------------------------------------------------------------------------

pub fn gen_synthetic(a: GenSyntheticArgs, f: &FileConfig) -> Result<()> {
    let mut spec = f.synthetic.clone().unwrap_or_default();
    spec.seed = seed(a.seed, f);
    if let Some(w) = a.width {
        spec.width = w;
    }
    if let Some(h) = a.height {
        spec.height = h;
    }
    match (a.counts, a.count_weights) {
        (Some(counts), Some(weights)) => spec.count = CountLaw::Choice { counts, weights },
        (Some(counts), None) => spec.count = CountLaw::Cycle { counts },
        (None, Some(_)) => return usage("--count-weights needs --counts"),
        (None, None) => {
            if a.count_min.is_some() || a.count_max.is_some() {
                let (lo, hi) = match spec.count {
                    CountLaw::Uniform { min, max } => (min, max),
                    _ => (0, 200),
                };
                spec.count = CountLaw::Uniform {
                    min: a.count_min.unwrap_or(lo),
                    max: a.count_max.unwrap_or(hi),
                };
            }
        }
    }
    match a.placement {
        Some(PlacementArg::PerTile) => spec.placement = Placement::PerTile,
        Some(PlacementArg::Clustered) => {
            let clusters = match spec.placement {
                Placement::Clustered { clusters } => clusters,
                Placement::PerTile => 3,
            };
            spec.placement = Placement::Clustered { clusters };
        }
        None => {}
    }
    if let Some(c) = a.clusters {
        match &mut spec.placement {
            Placement::Clustered { clusters } => *clusters = c,
            Placement::PerTile => return usage("--clusters only applies to clustered placement"),
        }
    }
    if let Some(s) = a.cluster_spread {
        spec.cluster_spread = s;
    }
    if let Some(b) = a.background {
        spec.background = match b {
            BackgroundArg::Flat => Background::Flat,
            BackgroundArg::Noise => Background::Noise,
            BackgroundArg::Clutter => Background::Clutter,
        };
    }
    if let Some(r) = a.dot_radius {
        spec.dot_radius = r;
    }
    if a.no_boundary_safe {
        spec.boundary_safe = false;
    }
    spec.validate().map_err(as_usage)?;

    let out = require(a.out, &f.out, "out")?;
    let name = pick(a.name, &f.name).unwrap_or_else(|| "synthetic".into());
    let split = parse_split(a.split, f, Split::Train)?;
    let n = pick(a.n, &f.n).unwrap_or(10);
    let manifest = generate_synthetic(&spec, n, &out, &name, split)?;
    print_json(&json!({
        "manifest": manifest,
        "name": name,
        "split": split,
        "images": n,
        "spec": spec,
    }))
}

// ---------------------------------------------------------------------------

fn crop_config(t: &TrainingOpts, f: &FileConfig, seed: u64) -> TrainingSetConfig {
    TrainingSetConfig {
        per_class: pick(t.per_class, &f.per_class).unwrap_or(DEFAULT_PER_CLASS),
        sizes: pick(t.sizes.clone(), &f.sizes).unwrap_or_else(|| TRAINING_CROP_SIZES.to_vec()),
        seed,
        ..TrainingSetConfig::default()
    }
}

fn train_config(t: &TrainingOpts, f: &FileConfig, seed: u64) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        epochs: pick(t.epochs, &f.epochs).unwrap_or(d.epochs),
        batch_size: pick(t.batch_size, &f.batch_size).unwrap_or(d.batch_size),
        base_lr: pick(t.lr, &f.lr).unwrap_or(d.base_lr),
        milestones: pick(t.milestones.clone(), &f.milestones).unwrap_or(d.milestones.clone()),
        class_weight: pick(t.class_weight, &f.class_weight).unwrap_or(d.class_weight),
        objective: t
            .objective
            .map(Into::into)
            .or(f.objective)
            .unwrap_or(d.objective),
        seed,
        ..d
    }
}

pub fn label_gen(a: LabelGenArgs, f: &FileConfig) -> Result<()> {
    let manifest = require(a.manifest, &f.manifest, "manifest")?;
    let out = require(a.out, &f.out, "out")?;
    let seed = seed(a.seed, f);
    let ds = load_dataset(&manifest)?;
    let profile = match profile_from(&a.cmax, f)? {
        Some(p) => p,
        None => compute_cmax(&ds.images, &ds.name)?,
    };
    let patches = if a.tiles {
        label_tiles(&ds.images, &profile)?
    } else {
        let mut cfg = crop_config(
            &TrainingOpts {
                per_class: a.per_class,
                sizes: a.sizes,
                epochs: None,
                batch_size: None,
                lr: None,
                milestones: None,
                class_weight: None,
                objective: None,
            },
            f,
            seed,
        );
        cfg.flip = !a.no_flip;
        build_training_set(&ds.images, &profile, &cfg).map_err(as_usage)?
    };
    export_patch_archive(&patches, &out)?;
    let mut hist = [0usize; 4];
    patches.iter().for_each(|p| hist[p.gt_class.index()] += 1);
    print_json(&json!({
        "archive": out,
        "c_max": profile.c_max,
        "patches": patches.len(),
        "classHistogram": histogram_json(hist),
        "mode": if a.tiles { "tiles" } else { "crops" },
        "seed": seed,
    }))
}

fn histogram_json(h: [usize; 4]) -> Value {
    json!({ "nc": h[0], "lc": h[1], "mc": h[2], "hc": h[3] })
}

// ---------------------------------------------------------------------------

pub fn archcheck(a: ArchcheckArgs) -> Result<()> {
    let mut out = io::stdout().lock();
    if a.list {
        for d in builtin_descriptors() {
            writeln!(out, "{}", d.name)?;
        }
        return Ok(());
    }
    let Some(name) = a.arch else {
        return usage("archcheck needs --arch <name> or --list");
    };
    let descriptors = if name == "all" {
        builtin_descriptors()
    } else {
        match builtin(&name) {
            Some(d) => vec![d],
            None => return usage(format!("unknown architecture `{name}` (see --list)")),
        }
    };
    for d in descriptors {
        let report = propagate(&d)?;
        if a.json {
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        } else {
            writeln!(out, "{report}\n")?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn train(a: TrainArgs, f: &FileConfig) -> Result<()> {
    let out = require(a.out, &f.out, "out")?;
    let seed = seed(a.seed, f);
    let crops = crop_config(&a.training, f, seed);
    let mut tc = train_config(&a.training, f, seed);
    tc.log_path = a.log.clone();
    let from_archive = a.archive.is_some();
    let (data, c_max) = match a.archive {
        Some(path) => (import_patch_archive(&path)?, pick(a.cmax.cmax, &f.cmax)),
        None => {
            let manifest = require(a.manifest, &f.manifest, "manifest")?;
            let ds = load_dataset(&manifest)?;
            let profile = match profile_from(&a.cmax, f)? {
                Some(p) => p,
                None => compute_cmax(&ds.images, &ds.name)?,
            };
            let set = build_training_set(&ds.images, &profile, &crops).map_err(as_usage)?;
            (set, Some(profile.c_max))
        }
    };
    let mut trained = train_toy(&data, &tc).map_err(as_usage)?;
    trained.provenance.c_max = c_max;
    save_model(&out, &trained.net, Some(&trained.provenance))?;
    print_json(&json!({
        "model": out,
        "parameters": trained.net.param_count(),
        "provenance": trained.provenance,
        "training": tc,
        "crops": if from_archive { Value::Null } else { serde_json::to_value(&crops)? },
        "log": a.log,
    }))
}

// ---------------------------------------------------------------------------

/// Images to run on: a manifest (annotated) or a single PNG (unannotated).
struct Inputs {
    name: String,
    images: Vec<crowdprm::labeling::AnnotatedImage>,
    annotated: bool,
    failures: Vec<String>,
}

fn load_inputs(path: &Path) -> Result<Inputs> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let grid: PixelGrid = decode_png(&bytes)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        let (img, _) = AnnotatedImage::new(id.clone(), grid, Vec::new())?;
        return Ok(Inputs {
            name: id,
            images: vec![img],
            annotated: false,
            failures: Vec::new(),
        });
    }
    let ds = load_dataset_tolerant(path)?;
    for w in &ds.warnings {
        log::warn!("{w}");
    }
    Ok(Inputs {
        name: ds.name,
        images: ds.images,
        annotated: true,
        failures: ds.failures,
    })
}

struct Predictors {
    counter: Model,
    classifier: Option<Model>,
    c_max: Option<u32>,
}

fn predictors(m: &ModelArgs, c: &CmaxArgs, f: &FileConfig, inputs: &Inputs) -> Result<Predictors> {
    let spec = require(m.model.clone(), &f.model, "model")?;
    let profile = profile_from(c, f)?;
    let annotated: &[AnnotatedImage] = if inputs.annotated {
        &inputs.images
    } else {
        &[]
    };
    let counter = models::resolve(&spec, profile.as_ref(), annotated)?;
    let classifier = pick(m.classifier.clone(), &f.classifier)
        .map(|s| models::resolve(&s, profile.as_ref(), annotated))
        .transpose()?;
    let c_max = profile
        .map(|p| p.c_max)
        .or_else(|| counter.trained_cmax())
        .or_else(|| classifier.as_ref().and_then(Model::trained_cmax));
    Ok(Predictors {
        counter,
        classifier,
        c_max,
    })
}

fn image_json(r: &ImageResult) -> Value {
    let patches: Vec<Value> = r
        .patch_results
        .iter()
        .map(|p| {
            let mut v = json!({
                "index": p.patch_index,
                "class": p.assigned_class.short_name(),
                "op": p.op,
                "routedCounts": p.routed_counts,
                "finalCount": p.final_count,
            });
            if let Some(fp) = p.first_pass_count {
                v["firstPassCount"] = json!(fp);
            }
            v
        })
        .collect();
    json!({
        "imageId": r.image_id,
        "totalCount": r.total_count,
        "classHistogram": histogram_json(r.class_histogram),
        "patches": patches,
    })
}

pub fn predict(a: PredictArgs, f: &FileConfig) -> Result<()> {
    let pipeline = parse_pipeline(a.model.pipeline.clone(), f)?;
    if pick(a.model.model.clone(), &f.model).is_none() {
        return usage("missing required option --model");
    }
    let input = require(a.image, &f.manifest, "image")?;
    let inputs = load_inputs(&input)?;
    let p = predictors(&a.model, &a.cmax, f, &inputs)?;
    let classifier = p.classifier.as_ref().map(Model::predictor);

    let mut sink: Box<dyn Write> = match &a.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    let mut failed = inputs.failures.len();
    for img in &inputs.images {
        match pipeline.run(&img.id, &img.image, p.counter.predictor(), classifier) {
            Ok(r) => writeln!(sink, "{}", image_json(&r))?,
            Err(e) => {
                failed += 1;
                log::warn!("{}: {e}", img.id);
                writeln!(
                    sink,
                    "{}",
                    json!({ "imageId": img.id, "error": e.to_string() })
                )?;
            }
        }
    }
    sink.flush()?;
    if let Some(path) = &a.out {
        let run = json!({
            "command": "predict",
            "pipeline": pipeline,
            "model": pick(a.model.model, &f.model),
            "classifier": pick(a.model.classifier, &f.classifier),
            "image": input,
            "c_max": p.c_max,
            "images": inputs.images.len(),
            "failed": failed,
        });
        let mut run_path = path.clone().into_os_string();
        run_path.push(".run.json");
        fs::write(&run_path, serde_json::to_string_pretty(&run)? + "\n")?;
    }
    if failed > 0 && failed >= inputs.images.len() + inputs.failures.len() {
        anyhow::bail!("no image could be processed");
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn eval(a: EvalArgs, f: &FileConfig, ablate: bool) -> Result<()> {
    let pipeline = parse_pipeline(a.model.pipeline.clone(), f)?;
    if ablate && pipeline == Pipeline::NoPrm {
        return usage("ablate compares a PRM pipeline against noprm; pick ccmod, cc2p or cc1p");
    }
    let manifest = require(a.manifest, &f.manifest, "manifest")?;
    if pick(a.model.model.clone(), &f.model).is_none() {
        return usage("missing required option --model");
    }
    let out_dir = pick(a.out, &f.out).unwrap_or_else(|| PathBuf::from(DEFAULT_REPORT_DIR));
    let seed = seed(a.seed, f);
    let inputs = load_inputs(&manifest)?;
    let p = predictors(&a.model, &a.cmax, f, &inputs)?;
    let Some(c_max) = p.c_max else {
        return usage("cannot determine c_max; pass --cmax or --cmax-from");
    };
    let config = ExperimentConfig {
        pipeline,
        seed,
        dataset: inputs.name.clone(),
        c_max,
        counter: p.counter.predictor().describe(),
        classifier: p.classifier.as_ref().map(|m| m.predictor().describe()),
        tags: vec![],
    };
    let run_config = json!({
        "command": if ablate { "ablate" } else { "eval" },
        "pipeline": pipeline,
        "model": pick(a.model.model, &f.model),
        "classifier": pick(a.model.classifier, &f.classifier),
        "manifest": manifest,
        "cmax": cmax_json(&a.cmax, f),
        "out": out_dir,
        "seed": seed,
    });
    let classifier = p.classifier.as_ref().map(Model::predictor);
    if !ablate {
        let mut outcome =
            run_experiment(&config, &inputs.images, p.counter.predictor(), classifier)?;
        outcome.add_failures(inputs.failures.clone());
        outcome.run_config = Some(run_config);
        let (_, summary_path) = outcome.persist(&out_dir)?;
        log::info!("summary written to {}", summary_path.display());
        return print_json(&serde_json::to_value(outcome.summary())?);
    }
    let mut ab = run_ablation(&config, &inputs.images, p.counter.predictor(), classifier)?;
    for o in [&mut ab.with_prm, &mut ab.without_prm] {
        o.add_failures(inputs.failures.clone());
        o.run_config = Some(run_config.clone());
        o.persist(&out_dir)?;
    }
    let doc = json!({
        "with_prm": ab.with_prm.summary(),
        "without_prm": ab.without_prm.summary(),
        "delta_mae": ab.delta_mae(),
        "delta_rmse": ab.delta_rmse(),
    });
    let path = out_dir.join(format!("ablation-{}-seed{seed}.json", config.hash()));
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    print_json(&doc)
}

// ---------------------------------------------------------------------------

fn factory<'a>(
    model: &str,
    images: &'a [AnnotatedImage],
    t: &TrainingOpts,
    f: &FileConfig,
    seed: u64,
) -> Result<Box<dyn ModelFactory + 'a>> {
    match model {
        "oracle" => Ok(Box::new(OracleFactory { annotated: images })),
        "toynet" => Ok(Box::new(ToyNetFactory {
            crops: crop_config(t, f, seed),
            training: train_config(t, f, seed),
        })),
        other => usage(format!(
            "--model must be oracle or toynet here, got `{other}`"
        )),
    }
}

fn fold_summary(o: &ExperimentOutcome) -> Value {
    json!({
        "dataset": o.config.dataset,
        "c_max": o.config.c_max,
        "mae": o.report.mae,
        "rmse": o.report.rmse,
        "n": o.report.n,
        "config_hash": o.config.hash(),
    })
}

pub fn kfold(a: KfoldArgs, f: &FileConfig) -> Result<()> {
    let pipeline = parse_pipeline(a.pipeline, f)?;
    let model = require(a.model, &f.model, "model")?;
    let manifest = require(a.manifest, &f.manifest, "manifest")?;
    let k = pick(a.k, &f.k).unwrap_or(5);
    let seed = seed(a.seed, f);
    let out_dir = pick(a.out, &f.out).unwrap_or_else(|| PathBuf::from(DEFAULT_REPORT_DIR));
    let ds = load_dataset(&manifest)?;
    let fac = factory(&model, &ds.images, &a.training, f, seed)?;
    let mut result =
        run_kfold(&ds.images, k, seed, pipeline, &ds.name, fac.as_ref()).map_err(as_usage)?;
    let run_config = json!({
        "command": "kfold",
        "pipeline": pipeline,
        "model": model,
        "manifest": manifest,
        "k": k,
        "seed": seed,
        "out": out_dir,
    });
    for fold in &mut result.folds {
        fold.outcome.run_config = Some(run_config.clone());
        fold.outcome.persist(&out_dir)?;
    }
    let doc = json!({
        "run_config": run_config,
        "folds": result.folds.iter().map(|f| fold_summary(&f.outcome)).collect::<Vec<_>>(),
        "mean_mae": result.mean_mae,
        "mean_rmse": result.mean_rmse,
    });
    let path = out_dir.join(format!("kfold-{pipeline}-k{k}-seed{seed}.json"));
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
    print_json(&doc)
}

pub fn crossdataset(a: CrossArgs, f: &FileConfig) -> Result<()> {
    let pipeline = parse_pipeline(a.pipeline, f)?;
    let model = require(a.model, &f.model, "model")?;
    let train_path = require(a.train_manifest, &f.train_manifest, "train-manifest")?;
    let test_path = require(a.test_manifest, &f.test_manifest, "test-manifest")?;
    let seed = seed(a.seed, f);
    let out_dir = pick(a.out, &f.out).unwrap_or_else(|| PathBuf::from(DEFAULT_REPORT_DIR));
    let train = load_dataset(&train_path)?;
    let test = load_dataset(&test_path)?;
    let all: Vec<AnnotatedImage> = train.images.iter().chain(&test.images).cloned().collect();
    let fac = factory(&model, &all, &a.training, f, seed)?;
    let mut outcome = cross_dataset(
        &train.name,
        &train.images,
        &test.name,
        &test.images,
        pipeline,
        seed,
        fac.as_ref(),
    )
    .map_err(as_usage)?;
    outcome.run_config = Some(json!({
        "command": "crossdataset",
        "pipeline": pipeline,
        "model": model,
        "train_manifest": train_path,
        "test_manifest": test_path,
        "seed": seed,
        "out": out_dir,
    }));
    outcome.persist(&out_dir)?;
    print_json(&serde_json::to_value(outcome.summary())?)
}

// ---------------------------------------------------------------------------

pub fn stats(a: StatsArgs, f: &FileConfig) -> Result<()> {
    let manifest = require(a.manifest, &f.manifest, "manifest")?;
    let inputs = load_inputs(&manifest)?;
    if inputs.images.is_empty() {
        anyhow::bail!("no loadable images in {}", manifest.display());
    }
    let (profile, source) = match profile_from(&a.cmax, f)? {
        Some(p) => (p, "option"),
        None => (compute_cmax(&inputs.images, &inputs.name)?, "this dataset"),
    };
    let counts: Vec<usize> = inputs.images.iter().map(|i| i.heads.len()).collect();
    let total: usize = counts.iter().sum();
    let tiles = label_tiles(&inputs.images, &profile)?;
    let mut hist = [0usize; 4];
    tiles.iter().for_each(|t| hist[t.gt_class.index()] += 1);
    let mut doc = json!({
        "dataset": inputs.name,
        "images": inputs.images.len(),
        "failures": inputs.failures,
        "heads": {
            "total": total,
            "mean": total as f64 / counts.len() as f64,
            "min": counts.iter().min(),
            "max": counts.iter().max(),
        },
        "c_max": profile.c_max,
        "c_max_source": source,
        "tiles": tiles.len(),
        "groundTruthUsage": UsageStats::from_histogram(hist),
    });
    if pick(a.model.model.clone(), &f.model).is_some() {
        let pipeline = parse_pipeline(a.model.pipeline.clone(), f)?;
        let cm = CmaxArgs {
            cmax: Some(profile.c_max),
            cmax_from: None,
        };
        let p = predictors(&a.model, &cm, f, &inputs)?;
        let config = ExperimentConfig {
            pipeline,
            seed: 0,
            dataset: inputs.name.clone(),
            c_max: profile.c_max,
            counter: p.counter.predictor().describe(),
            classifier: p.classifier.as_ref().map(|m| m.predictor().describe()),
            tags: vec!["stats".into()],
        };
        let classifier = p.classifier.as_ref().map(Model::predictor);
        let out = run_experiment(&config, &inputs.images, p.counter.predictor(), classifier)?;
        doc["routing"] = json!({
            "pipeline": pipeline,
            "usage": out.usage,
            "mae": out.report.mae,
            "rmse": out.report.rmse,
        });
    }
    print_json(&doc)
}

// ---------------------------------------------------------------------------

fn parse_points(text: &str) -> Result<Vec<HeadAnnotation>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') || trimmed.starts_with('{') {
        let v: Value = serde_json::from_str(text)?;
        let list = match &v {
            Value::Object(o) => o
                .get("points")
                .context("JSON object without a `points` array")?,
            other => other,
        };
        let arr = list.as_array().context("points must be an array")?;
        return arr
            .iter()
            .map(|p| {
                let (x, y) = match p {
                    Value::Array(xy) if xy.len() >= 2 => (xy[0].as_f64(), xy[1].as_f64()),
                    Value::Object(o) => (
                        o.get("x").and_then(Value::as_f64),
                        o.get("y").and_then(Value::as_f64),
                    ),
                    _ => (None, None),
                };
                match (x, y) {
                    (Some(x), Some(y)) => Ok(HeadAnnotation::new(x, y)),
                    _ => anyhow::bail!("unrecognised point {p}"),
                }
            })
            .collect();
    }
    let mut heads = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parsed = (
            fields.first().map(|s| s.parse::<f64>()),
            fields.get(1).map(|s| s.parse::<f64>()),
        );
        match parsed {
            (Some(Ok(x)), Some(Ok(y))) => heads.push(HeadAnnotation::new(x, y)),
            // tolerate a header row
            _ if i == 0 => continue,
            _ => anyhow::bail!("line {}: expected `x y` or `x,y`, got `{line}`", i + 1),
        }
    }
    Ok(heads)
}

pub fn convert(c: ConvertCommand) -> Result<()> {
    match c {
        ConvertCommand::Points { input, out } => {
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let heads =
                parse_points(&text).with_context(|| format!("parsing {}", input.display()))?;
            fs::write(&out, sidecar_bytes(&heads)?)
                .with_context(|| format!("writing {}", out.display()))?;
            print_json(&json!({ "sidecar": out, "points": heads.len() }))
        }
        ConvertCommand::Manifest { dir, name, split } => {
            let split: Split = split.parse().or_else(|e: String| usage(e))?;
            let mut pngs: Vec<PathBuf> = fs::read_dir(dir.join("images"))
                .with_context(|| format!("listing {}", dir.join("images").display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
                .collect();
            pngs.sort();
            let mut entries = Vec::with_capacity(pngs.len());
            for png in pngs {
                let stem = png.file_stem().unwrap().to_string_lossy().into_owned();
                let file_name = png.file_name().unwrap().to_string_lossy().into_owned();
                let ann = dir.join("annotations").join(format!("{stem}.json"));
                let img_bytes = fs::read(&png)?;
                let ann_bytes = fs::read(&ann).with_context(|| format!("no sidecar for {stem}"))?;
                parse_sidecar(&ann_bytes).with_context(|| format!("checking {}", ann.display()))?;
                entries.push(ManifestEntry {
                    image: format!("images/{file_name}"),
                    annotation: format!("annotations/{stem}.json"),
                    sha256: entry_checksum(&img_bytes, &ann_bytes),
                });
            }
            let manifest = DatasetManifest {
                name,
                split,
                entries,
            };
            let path = dir.join("manifest.json");
            manifest.write(&path)?;
            print_json(&json!({ "manifest": path, "entries": manifest.entries.len() }))
        }
    }
}

// ---------------------------------------------------------------------------

pub fn serve(a: ServeArgs, f: &FileConfig) -> Result<()> {
    let spec = require(a.model, &f.model, "model")?;
    if models::is_oracle(&spec) {
        return usage(
            "the oracle cannot be served: it needs annotations the protocol does not carry",
        );
    }
    let model = models::resolve(&spec, None, &[])?;
    let n = serve_lines(model.predictor(), io::stdin().lock(), io::stdout().lock())?;
    log::info!("served {n} request(s)");
    Ok(())
}
