//! Command-line front door for the band-attention toolkit.
//!
//! One subcommand per workflow: `train` runs the full ingestion → training →
//! evaluation pipeline and leaves a reproducible artifact directory behind,
//! `eval` scores a saved checkpoint or runs the repeated variant comparison,
//! `gradcheck` exercises the finite-difference suite, `export-mask` dumps a
//! trained attention head's band weights, and `synth` generates a labeled
//! scene to run the rest against.
//!
//! Every run is driven by a single `--seed`; data splitting, shuffling,
//! weight init, and dropout draw from independent named streams of it, so
//! rerunning a command with the same flags reproduces its outputs byte for
//! byte. Exit codes: 0 success, 2 input/format, 3 configuration, 4 numerical.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use bacnn_core::data::{
    extract_patches, load_cube, load_labels, normalize_bands, normalize_bands_over, save_cube,
    save_labels, synthesize, Dataset, LabelMap, PatchSet, SynthSpec, INDIAN_PINES_CLASS_COUNTS,
};
use bacnn_core::gradcheck::run_suite;
use bacnn_core::layers::{Activation, Mode};
use bacnn_core::metrics::ResultTable;
use bacnn_core::model::{Network, NetworkSpec, Variant};
use bacnn_core::rng::Seeds;
use bacnn_core::training::{
    checkpoint_tensors, evaluate, history_csv, load_checkpoint, restore_network, run_ablation,
    save_checkpoint, train, TrainConfig,
};
use bacnn_core::{Error, Result, Tape};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(
    name = "bacnn",
    version,
    about = "Band-attention networks for hyperspectral patch classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant and write checkpoint, history, and metrics.
    Train(TrainArgs),
    /// Score a checkpoint, or compare variants over repeated runs.
    Eval(EvalArgs),
    /// Check every differentiable operation against finite differences.
    Gradcheck(GradcheckArgs),
    /// Export a trained band-attention mask as band,weight CSV.
    ExportMask(ExportMaskArgs),
    /// Generate a synthetic labeled scene in the toolkit's container format.
    Synth(SynthArgs),
}

/// Flags shared by every command that reads a scene from disk.
#[derive(Args)]
struct SceneArgs {
    /// Sampling protocol: indian (30% per class capped at 80, minorities
    /// replicated) or ksc (stratified 10%).
    #[arg(long)]
    dataset: String,

    /// Hyperspectral cube (HSC1 container).
    #[arg(long)]
    cube: PathBuf,

    /// Ground-truth label map (LBL1 container, 0 = unlabeled).
    #[arg(long)]
    labels: PathBuf,

    /// Spatial extent of the square patch around each labeled pixel.
    #[arg(long, default_value_t = 15)]
    patch: usize,

    /// Pixels feeding the per-band normalization statistics: all, or train
    /// (training pixels only, applied to the whole cube).
    #[arg(long, default_value = "all")]
    stats: String,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scene: SceneArgs,

    /// Network variant: cm, se_cm, or bam_cm.
    #[arg(long, default_value = "bam_cm")]
    variant: String,

    /// Band-reduction ratio of the attention bottleneck.
    #[arg(long, default_value_t = 2.0)]
    r: f64,

    /// Activation producing the band mask: relu, sigmoid, or softmax.
    #[arg(long, default_value = "sigmoid")]
    mask_activation: String,

    /// Dropout rate before the classifier head.
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,

    #[arg(long, default_value_t = 1000)]
    epochs: usize,

    #[arg(long, default_value_t = 64)]
    batch: usize,

    /// Root seed for split/shuffle/init/dropout streams.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Keep only this fraction of each class's training pixels (scaled-down
    /// runs); the replication target shrinks proportionally.
    #[arg(long)]
    train_fraction: Option<f64>,

    /// Overwrite the checkpoint every N epochs while training (0 = only at
    /// the end).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,

    /// Output directory: netspec.txt, checkpoint.ckpt, history.csv,
    /// metrics.csv, manifest.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    scene: SceneArgs,

    /// Score this checkpoint on the protocol's test split (needs --netspec).
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Network description written next to the checkpoint by train.
    #[arg(long)]
    netspec: Option<PathBuf>,

    /// Without --checkpoint: train and score this variant from scratch;
    /// repeat the flag to compare several in one table.
    #[arg(long = "variant")]
    variants: Vec<String>,

    /// Independent repetitions of the variant comparison, each with a fresh
    /// split.
    #[arg(long, default_value_t = 10)]
    repeats: usize,

    #[arg(long, default_value_t = 2.0)]
    r: f64,

    #[arg(long, default_value = "sigmoid")]
    mask_activation: String,

    #[arg(long, default_value_t = 0.2)]
    dropout: f64,

    /// Epochs per comparison run (ignored when scoring a checkpoint).
    #[arg(long, default_value_t = 1000)]
    epochs: usize,

    #[arg(long, default_value_t = 64)]
    batch: usize,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Keep only this fraction of each class's training pixels per repeat.
    #[arg(long)]
    train_fraction: Option<f64>,

    /// Output directory: metrics.csv or ablation.csv, plus manifest.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random instances per operation.
    #[arg(long, default_value_t = 100)]
    trials: usize,

    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct ExportMaskArgs {
    #[command(flatten)]
    scene: SceneArgs,

    /// Trained bam_cm checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,

    /// Network description written next to the checkpoint by train.
    #[arg(long)]
    netspec: PathBuf,

    /// Samples averaged into the exported mask (the first test batch).
    #[arg(long, default_value_t = 64)]
    batch: usize,

    /// Seed reproducing the training run's split.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Output directory: mask.csv and manifest.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene template: indian (145x145x200, 16 classes), ksc (256x256x176,
    /// 13 classes), or demo (24x24x12, 3 classes; train with --dataset ksc).
    #[arg(long, default_value = "demo")]
    dataset: String,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Output directory: cube.hsc, labels.lbl, manifest.txt.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::ExportMask(args) => cmd_export_mask(args),
        Command::Synth(args) => cmd_synth(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

/// A scene loaded, normalized, and cut into labeled patches.
struct Scene {
    dataset: Dataset,
    labels: LabelMap,
    bands: usize,
    set: PatchSet,
}

/// Loads cube and labels, normalizes per band, and extracts patches. With
/// `stats = train` the normalization statistics come from the protocol's
/// training pixels under `seed` (the split itself only consumes labels and
/// the seed, so recomputing it afterwards lands on the same pixels).
fn load_scene(args: &SceneArgs, seed: u64) -> Result<Scene> {
    let dataset: Dataset = args.dataset.parse()?;
    let cube = load_cube(&args.cube)?;
    let labels = load_labels(&args.labels)?;
    // Ground-truth files for the Indian Pines scene circulate in slightly
    // different revisions; trust the file, but flag a histogram that differs
    // from the published one so a wrong-file mixup is visible.
    if dataset == Dataset::IndianPines && labels.class_counts() != INDIAN_PINES_CLASS_COUNTS {
        eprintln!(
            "warning: label map histogram differs from the published indian pines \
             ground truth ({} labeled pixels, published {})",
            labels.labeled_count(),
            INDIAN_PINES_CLASS_COUNTS.iter().sum::<usize>()
        );
    }
    let bands = cube.c;
    let normalized = match args.stats.as_str() {
        "all" => normalize_bands(&cube),
        "train" => {
            let raw = Arc::new(cube);
            let full = extract_patches(&raw, &labels, args.patch)?;
            let (train, _) = dataset.prepare_splits(&full, &Seeds::new(seed))?;
            normalize_bands_over(&raw, train.coords())?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown stats mode {other:?} (expected all or train)"
            )))
        }
    };
    let set = extract_patches(&Arc::new(normalized), &labels, args.patch)?;
    Ok(Scene {
        dataset,
        labels,
        bands,
        set,
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let variant: Variant = args.variant.parse()?;
    let mask_activation: Activation = args.mask_activation.parse()?;
    let scene = load_scene(&args.scene, args.seed)?;
    let seeds = Seeds::new(args.seed);
    let (train_set, test_set) =
        scene
            .dataset
            .prepare_splits_with(&scene.set, &seeds, args.train_fraction)?;

    let mut spec = NetworkSpec::new(variant, scene.labels.k, args.scene.patch, scene.bands);
    spec.r = args.r;
    spec.mask_activation = mask_activation;
    spec.dropout_rate = args.dropout;
    spec.validate()?;
    let mut init_rng = seeds.init();
    let net = Network::build(spec.clone(), &mut init_rng)?;

    fs::create_dir_all(&args.out)?;
    let netspec_path = args.out.join("netspec.txt");
    let checkpoint_path = args.out.join("checkpoint.ckpt");
    let history_path = args.out.join("history.csv");
    let metrics_path = args.out.join("metrics.csv");
    write_text(&netspec_path, &spec.to_config())?;

    println!(
        "training {} on {} ({} train / {} test patches, {} parameters)",
        variant,
        scene.dataset,
        train_set.len(),
        test_set.len(),
        net.param_count()
    );
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        shuffle: true,
        checkpoint_every: args.checkpoint_every,
        hyper: Default::default(),
    };
    let history = train(&net, &train_set, &cfg, |epoch, net| {
        write_checkpoint_file(&checkpoint_path, net)?;
        println!("epoch {epoch}: checkpoint written");
        Ok(())
    })?;
    write_checkpoint_file(&checkpoint_path, &net)?;
    write_text(&history_path, &history_csv(&history))?;

    let (_, report) = evaluate(&net, &test_set, args.batch)?;
    let table = ResultTable::from_runs(&[(variant.to_string(), vec![report.clone()])])?;
    write_text(&metrics_path, &table.csv())?;

    let mut manifest = vec![
        ("command", "train".to_string()),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("dataset", scene.dataset.to_string()),
        ("cube", args.scene.cube.display().to_string()),
        ("cube_sha256", sha256_file(&args.scene.cube)?),
        ("labels", args.scene.labels.display().to_string()),
        ("labels_sha256", sha256_file(&args.scene.labels)?),
        ("variant", variant.to_string()),
        ("r", args.r.to_string()),
        ("mask_activation", mask_activation.to_string()),
        ("dropout", args.dropout.to_string()),
        ("patch", args.scene.patch.to_string()),
        ("stats", args.scene.stats.clone()),
        ("epochs", args.epochs.to_string()),
        ("batch", args.batch.to_string()),
        ("seed", args.seed.to_string()),
        ("checkpoint_every", args.checkpoint_every.to_string()),
        ("train_size", train_set.len().to_string()),
        ("test_size", test_set.len().to_string()),
        ("param_count", net.param_count().to_string()),
    ];
    if let Some(f) = args.train_fraction {
        manifest.push(("train_fraction", f.to_string()));
    }
    manifest.extend([
        ("netspec_sha256", sha256_file(&netspec_path)?),
        ("checkpoint_sha256", sha256_file(&checkpoint_path)?),
        ("history_sha256", sha256_file(&history_path)?),
        ("metrics_sha256", sha256_file(&metrics_path)?),
        ("timestamp", unix_timestamp()),
    ]);
    write_manifest(&args.out, &manifest)?;

    let last = history.last().expect("training ran at least one epoch");
    println!(
        "done: train loss {:.4}, train acc {:.4} after {} epochs",
        last.loss, last.train_acc, last.epoch
    );
    println!(
        "test OA {:.4}, AA {:.4}, kappa {:.4}",
        report.oa, report.aa, report.kappa
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    match (&args.checkpoint, args.variants.is_empty()) {
        (Some(_), false) => Err(Error::Config(
            "pass either --checkpoint or --variant, not both".into(),
        )),
        (Some(ckpt), true) => eval_checkpoint(&args, &ckpt.clone()),
        (None, false) => eval_ablation(&args),
        (None, true) => Err(Error::Config(
            "pass --checkpoint to score a saved run, or --variant to compare variants".into(),
        )),
    }
}

fn eval_checkpoint(args: &EvalArgs, checkpoint: &Path) -> Result<()> {
    let netspec_path = args.netspec.as_ref().ok_or_else(|| {
        Error::Config("scoring a checkpoint needs --netspec from its training run".into())
    })?;
    let text = fs::read_to_string(netspec_path)?;
    let spec = NetworkSpec::parse_config(&text)?;

    let mut scene_args = clone_scene_args(&args.scene);
    // The checkpointed geometry wins over the patch default; a genuinely
    // different --patch would make restore fail later anyway.
    scene_args.patch = spec.input.h;
    let scene = load_scene(&scene_args, args.seed)?;
    if spec.num_classes != scene.labels.k {
        return Err(Error::Config(format!(
            "checkpoint expects {} classes, label map has {}",
            spec.num_classes, scene.labels.k
        )));
    }
    if spec.input.c != scene.bands {
        return Err(Error::Config(format!(
            "checkpoint expects {} bands, cube has {}",
            spec.input.c, scene.bands
        )));
    }

    let variant = spec.variant;
    let mut build_rng = Seeds::new(args.seed).init();
    let net = Network::build(spec, &mut build_rng)?;
    let tensors = load_checkpoint(&mut fs::File::open(checkpoint)?)?;
    restore_network(&net, &tensors)?;

    let seeds = Seeds::new(args.seed);
    let (_, test_set) =
        scene
            .dataset
            .prepare_splits_with(&scene.set, &seeds, args.train_fraction)?;
    let (_, report) = evaluate(&net, &test_set, args.batch)?;
    let table = ResultTable::from_runs(&[(variant.to_string(), vec![report.clone()])])?;

    fs::create_dir_all(&args.out)?;
    let metrics_path = args.out.join("metrics.csv");
    write_text(&metrics_path, &table.csv())?;
    let manifest = vec![
        ("command", "eval".to_string()),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("mode", "checkpoint".to_string()),
        ("dataset", scene.dataset.to_string()),
        ("cube", args.scene.cube.display().to_string()),
        ("cube_sha256", sha256_file(&args.scene.cube)?),
        ("labels", args.scene.labels.display().to_string()),
        ("labels_sha256", sha256_file(&args.scene.labels)?),
        ("checkpoint", checkpoint.display().to_string()),
        ("checkpoint_sha256", sha256_file(checkpoint)?),
        ("netspec", netspec_path.display().to_string()),
        ("netspec_sha256", sha256_file(netspec_path)?),
        ("stats", args.scene.stats.clone()),
        ("batch", args.batch.to_string()),
        ("seed", args.seed.to_string()),
        ("test_size", test_set.len().to_string()),
        ("metrics_sha256", sha256_file(&metrics_path)?),
        ("timestamp", unix_timestamp()),
    ];
    write_manifest(&args.out, &manifest)?;

    print!("{}", table.csv());
    println!(
        "test OA {:.4}, AA {:.4}, kappa {:.4}",
        report.oa, report.aa, report.kappa
    );
    Ok(())
}

fn eval_ablation(args: &EvalArgs) -> Result<()> {
    let variants = args
        .variants
        .iter()
        .map(|v| v.parse::<Variant>())
        .collect::<Result<Vec<_>>>()?;
    let mask_activation: Activation = args.mask_activation.parse()?;
    let scene = load_scene(&args.scene, args.seed)?;

    let mut spec = NetworkSpec::new(variants[0], scene.labels.k, args.scene.patch, scene.bands);
    spec.r = args.r;
    spec.mask_activation = mask_activation;
    spec.dropout_rate = args.dropout;
    spec.validate()?;

    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        shuffle: true,
        checkpoint_every: 0,
        hyper: Default::default(),
    };
    println!(
        "comparing {} over {} repeats ({} epochs each)",
        args.variants.join(", "),
        args.repeats,
        args.epochs
    );
    let runs = run_ablation(
        &scene.set,
        scene.dataset,
        &spec,
        &variants,
        args.repeats,
        args.train_fraction,
        &cfg,
    )?;
    let table = ResultTable::from_runs(&runs)?;

    fs::create_dir_all(&args.out)?;
    let table_path = args.out.join("ablation.csv");
    write_text(&table_path, &table.csv())?;
    let mut manifest = vec![
        ("command", "eval".to_string()),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("mode", "ablation".to_string()),
        ("dataset", scene.dataset.to_string()),
        ("cube", args.scene.cube.display().to_string()),
        ("cube_sha256", sha256_file(&args.scene.cube)?),
        ("labels", args.scene.labels.display().to_string()),
        ("labels_sha256", sha256_file(&args.scene.labels)?),
        ("variants", args.variants.join(",")),
        ("repeats", args.repeats.to_string()),
        ("r", args.r.to_string()),
        ("mask_activation", mask_activation.to_string()),
        ("dropout", args.dropout.to_string()),
        ("patch", args.scene.patch.to_string()),
        ("stats", args.scene.stats.clone()),
        ("epochs", args.epochs.to_string()),
        ("batch", args.batch.to_string()),
        ("seed", args.seed.to_string()),
    ];
    if let Some(f) = args.train_fraction {
        manifest.push(("train_fraction", f.to_string()));
    }
    manifest.extend([
        ("table_sha256", sha256_file(&table_path)?),
        ("timestamp", unix_timestamp()),
    ]);
    write_manifest(&args.out, &manifest)?;

    print!("{}", table.csv());
    println!("table in {}", table_path.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    if args.trials == 0 {
        return Err(Error::Config("gradcheck needs at least one trial".into()));
    }
    let reports = run_suite(args.trials, args.seed)?;
    for report in &reports {
        println!("{report}");
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Error::Numerical(format!(
            "{failed} of {} operations failed the finite-difference check",
            reports.len()
        )));
    }
    println!("all {} operations pass", reports.len());
    Ok(())
}

fn cmd_export_mask(args: ExportMaskArgs) -> Result<()> {
    let text = fs::read_to_string(&args.netspec)?;
    let spec = NetworkSpec::parse_config(&text)?;
    if spec.variant != Variant::BamCm {
        return Err(Error::Config(format!(
            "variant {} has no band-attention head to export",
            spec.variant
        )));
    }

    let mut scene_args = clone_scene_args(&args.scene);
    scene_args.patch = spec.input.h;
    let scene = load_scene(&scene_args, args.seed)?;
    if spec.num_classes != scene.labels.k {
        return Err(Error::Config(format!(
            "checkpoint expects {} classes, label map has {}",
            spec.num_classes, scene.labels.k
        )));
    }
    if spec.input.c != scene.bands {
        return Err(Error::Config(format!(
            "checkpoint expects {} bands, cube has {}",
            spec.input.c, scene.bands
        )));
    }

    let activation = spec.mask_activation;
    let mut build_rng = Seeds::new(args.seed).init();
    let net = Network::build(spec, &mut build_rng)?;
    let tensors = load_checkpoint(&mut fs::File::open(&args.checkpoint)?)?;
    restore_network(&net, &tensors)?;

    let seeds = Seeds::new(args.seed);
    let (_, test_set) = scene.dataset.prepare_splits(&scene.set, &seeds)?;
    let take = args.batch.clamp(1, test_set.len());
    let idx: Vec<usize> = (0..take).collect();
    let (x, _) = test_set.batch(&idx)?;

    let (cfg, params) = net
        .bam
        .as_ref()
        .expect("bam_cm networks carry an attention head");
    let tape = Tape::inference();
    let mask = bacnn_core::attention::bam_forward(&tape, &x, cfg, params, Mode::Eval)?;
    let weights = mask.weights.values().to_vec();
    let c = cfg.c;
    let mut csv = String::from("band,weight\n");
    for z in 0..c {
        let mean = (0..take).map(|n| weights[n * c + z]).sum::<f64>() / take as f64;
        csv.push_str(&format!("{z},{mean}\n"));
    }

    fs::create_dir_all(&args.out)?;
    let mask_path = args.out.join("mask.csv");
    write_text(&mask_path, &csv)?;
    let manifest = vec![
        ("command", "export-mask".to_string()),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("dataset", scene.dataset.to_string()),
        ("cube", args.scene.cube.display().to_string()),
        ("cube_sha256", sha256_file(&args.scene.cube)?),
        ("labels", args.scene.labels.display().to_string()),
        ("labels_sha256", sha256_file(&args.scene.labels)?),
        ("checkpoint", args.checkpoint.display().to_string()),
        ("checkpoint_sha256", sha256_file(&args.checkpoint)?),
        ("netspec", args.netspec.display().to_string()),
        ("netspec_sha256", sha256_file(&args.netspec)?),
        ("mask_activation", activation.to_string()),
        ("stats", args.scene.stats.clone()),
        ("batch", take.to_string()),
        ("seed", args.seed.to_string()),
        ("mask_sha256", sha256_file(&mask_path)?),
        ("timestamp", unix_timestamp()),
    ];
    write_manifest(&args.out, &manifest)?;

    println!(
        "wrote {} ({} bands, {} activation, mean over {} test patches)",
        mask_path.display(),
        c,
        activation,
        take
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = match args.dataset.as_str() {
        "indian" | "indian_pines" => SynthSpec::indian_pines(),
        "ksc" => SynthSpec::ksc(),
        "demo" => SynthSpec::demo(),
        other => {
            return Err(Error::Config(format!(
                "unknown scene template {other:?} (expected indian, ksc, or demo)"
            )))
        }
    };
    let (cube, labels) = synthesize(&spec, args.seed)?;

    fs::create_dir_all(&args.out)?;
    let cube_path = args.out.join("cube.hsc");
    let labels_path = args.out.join("labels.lbl");
    save_cube(&cube_path, &cube)?;
    save_labels(&labels_path, &labels)?;
    let manifest = vec![
        ("command", "synth".to_string()),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("template", args.dataset.clone()),
        ("seed", args.seed.to_string()),
        ("height", cube.h.to_string()),
        ("width", cube.w.to_string()),
        ("bands", cube.c.to_string()),
        ("classes", labels.k.to_string()),
        ("labeled", labels.labeled_count().to_string()),
        ("cube_sha256", sha256_file(&cube_path)?),
        ("labels_sha256", sha256_file(&labels_path)?),
        ("timestamp", unix_timestamp()),
    ];
    write_manifest(&args.out, &manifest)?;

    println!(
        "wrote {}x{}x{} cube, {} classes, {} labeled pixels to {}",
        cube.h,
        cube.w,
        cube.c,
        labels.k,
        labels.labeled_count(),
        args.out.display()
    );
    Ok(())
}

fn clone_scene_args(scene: &SceneArgs) -> SceneArgs {
    SceneArgs {
        dataset: scene.dataset.clone(),
        cube: scene.cube.clone(),
        labels: scene.labels.clone(),
        patch: scene.patch,
        stats: scene.stats.clone(),
    }
}

fn write_checkpoint_file(path: &Path, net: &Network) -> Result<()> {
    let tensors = checkpoint_tensors(net, None)?;
    let mut file = fs::File::create(path)?;
    save_checkpoint(&mut file, &tensors)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn write_manifest(out: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    for (key, value) in pairs {
        text.push_str(&format!("{key}={value}\n"));
    }
    write_text(&out.join("manifest.txt"), &text)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn unix_timestamp() -> String {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_else(|_| "0".to_string())
}
