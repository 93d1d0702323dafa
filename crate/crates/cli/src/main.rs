mod commands;
mod config;
mod models;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use crowdprm::dataio::ARCHIVE_VERSION;
use crowdprm::predict::{Objective, MODEL_FORMAT_VERSION};

use config::{FileConfig, UsageError};

/// Patch-based crowd counting with a patch rescaling router.
#[derive(Parser)]
#[command(name = "crowdprm")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// JSON file supplying defaults for any option; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dot-crowd dataset (PNG images, sidecars, manifest).
    GenSynthetic(GenSyntheticArgs),
    /// Sample a class-balanced training set or label tiles into a patch archive.
    LabelGen(LabelGenArgs),
    /// Print layer shapes and parameter counts of a built-in architecture.
    Archcheck(ArchcheckArgs),
    /// Train the small dual-head network and save it as a model file.
    Train(TrainArgs),
    /// Count heads in images and emit per-image JSON.
    Predict(PredictArgs),
    /// Evaluate a pipeline on a dataset and write reports.
    Eval(EvalArgs),
    /// Evaluate a pipeline with and without the rescaling router.
    Ablate(EvalArgs),
    /// k-fold cross-validation on one dataset.
    Kfold(KfoldArgs),
    /// Train on one dataset, evaluate on another.
    Crossdataset(CrossArgs),
    /// Dataset statistics: counts, c_max, class mix, optional routing usage.
    Stats(StatsArgs),
    /// Convert external annotations or index a directory into a manifest.
    #[command(subcommand)]
    Convert(ConvertCommand),
    /// Answer line-delimited JSON patch requests on stdin with a model.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PlacementArg {
    Clustered,
    PerTile,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackgroundArg {
    Flat,
    Noise,
    Clutter,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    Joint,
    ClassOnly,
    CountOnly,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Joint => Objective::Joint,
            ObjectiveArg::ClassOnly => Objective::ClassOnly,
            ObjectiveArg::CountOnly => Objective::CountOnly,
        }
    }
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset name; also the image id prefix.
    #[arg(long)]
    name: Option<String>,
    /// train or test.
    #[arg(long)]
    split: Option<String>,
    /// Number of images.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Heads per image (or per tile) drawn uniformly from [min, max].
    #[arg(long)]
    count_min: Option<u32>,
    #[arg(long)]
    count_max: Option<u32>,
    /// Comma-separated counts used in turn (overrides min/max).
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<u32>>,
    /// Comma-separated weights; with --counts, draw counts at random.
    #[arg(long, value_delimiter = ',')]
    count_weights: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    placement: Option<PlacementArg>,
    /// Cluster centres per image (clustered placement).
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    cluster_spread: Option<f64>,
    #[arg(long, value_enum)]
    background: Option<BackgroundArg>,
    #[arg(long)]
    dot_radius: Option<f64>,
    /// Allow heads next to tile boundaries.
    #[arg(long)]
    no_boundary_safe: bool,
}

#[derive(Args)]
struct CmaxArgs {
    /// Fixed c_max.
    #[arg(long)]
    cmax: Option<u32>,
    /// Compute c_max from this (training) manifest.
    #[arg(long, value_name = "MANIFEST")]
    cmax_from: Option<PathBuf>,
}

#[derive(Args)]
struct LabelGenArgs {
    /// Training manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Archive to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Crops per class.
    #[arg(long)]
    per_class: Option<usize>,
    /// Comma-separated crop sizes (112, 224, 448).
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Label the 224x224 tiles instead of sampling crops.
    #[arg(long)]
    tiles: bool,
    /// Do not mirror crops.
    #[arg(long)]
    no_flip: bool,
    #[command(flatten)]
    cmax: CmaxArgs,
}

#[derive(Args)]
struct ArchcheckArgs {
    /// Architecture name (see --list); `all` checks every one.
    #[arg(long)]
    arch: Option<String>,
    /// Print the JSON document instead of the table.
    #[arg(long)]
    json: bool,
    /// List built-in architectures.
    #[arg(long)]
    list: bool,
}

#[derive(Args, Clone)]
struct TrainingOpts {
    /// Training crops per class.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Base learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated epochs after which the learning rate halves.
    #[arg(long, value_delimiter = ',')]
    milestones: Option<Vec<usize>>,
    /// Weight of the classification loss.
    #[arg(long)]
    class_weight: Option<f64>,
    /// joint (one network for both heads) or a single head for separate training.
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifest (crops are sampled from it).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Train on an existing patch archive instead.
    #[arg(long, conflicts_with = "manifest")]
    archive: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingOpts,
    #[command(flatten)]
    cmax: CmaxArgs,
}

#[derive(Args)]
struct ModelArgs {
    /// ccmod, cc2p, cc1p or noprm.
    #[arg(long)]
    pipeline: Option<String>,
    /// oracle, fixed:<count>[:<class>], external:<command>, or a model file.
    #[arg(long)]
    model: Option<String>,
    /// Separate classifier for ccmod (defaults to --model).
    #[arg(long)]
    classifier: Option<String>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// A PNG image or a dataset manifest.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Output file (JSON lines, one per image); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cmax: CmaxArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Test manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    cmax: CmaxArgs,
}

#[derive(Args)]
struct KfoldArgs {
    /// ccmod, cc2p, cc1p or noprm.
    #[arg(long)]
    pipeline: Option<String>,
    /// oracle or toynet (trained per fold).
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingOpts,
}

#[derive(Args)]
struct CrossArgs {
    #[arg(long)]
    pipeline: Option<String>,
    /// oracle or toynet (trained on the training manifest).
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    #[arg(long)]
    test_manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingOpts,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    cmax: CmaxArgs,
    /// Also run a pipeline and report its routing usage.
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Subcommand)]
enum ConvertCommand {
    /// Point list (CSV/whitespace `x y` lines, or JSON) to a sidecar.
    Points {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Index `images/*.png` with `annotations/*.json` into a manifest.
    Manifest {
        /// Dataset root.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        split: String,
    },
}

#[derive(Args)]
struct ServeArgs {
    /// fixed:<count>[:<class>], external:<command>, or a model file.
    #[arg(long)]
    model: Option<String>,
}

fn version_string() -> String {
    format!(
        "{} (patch archive format v{ARCHIVE_VERSION}, model file format v{MODEL_FORMAT_VERSION})",
        env!("CARGO_PKG_VERSION")
    )
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(version_string().into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            eprintln!("see `crowdprm --help`");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// A closed downstream pipe (`| head`) is not a failure.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(jobs) = config::pick(cli.jobs, &file.jobs) {
        if jobs == 0 {
            return config::usage("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()?;
    }
    match cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(a, &file),
        Command::LabelGen(a) => commands::label_gen(a, &file),
        Command::Archcheck(a) => commands::archcheck(a),
        Command::Train(a) => commands::train(a, &file),
        Command::Predict(a) => commands::predict(a, &file),
        Command::Eval(a) => commands::eval(a, &file, false),
        Command::Ablate(a) => commands::eval(a, &file, true),
        Command::Kfold(a) => commands::kfold(a, &file),
        Command::Crossdataset(a) => commands::crossdataset(a, &file),
        Command::Stats(a) => commands::stats(a, &file),
        Command::Convert(c) => commands::convert(c),
        Command::Serve(a) => commands::serve(a, &file),
    }
}
