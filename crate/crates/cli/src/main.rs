//! Single-binary pipeline: data generation, superpixel and pseudo-class
//! inspection, training, evaluation, embedding dumps, and ablations.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 runtime
//! failure. Diagnostics go to stderr; machine-readable results go to files
//! under `--out` and to stdout.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use protoseg::ablation::{
    comparison_csv, compare_by_num_classes, run_ablation, write_tables, AblationAxis,
    AblationSpec, AxisValue,
};
use protoseg::data::{
    generate_synthetic_dataset, load_dataset, DatasetIndex, FoldConfig,
};
use protoseg::eval::{dump_embeddings, evaluate_with_records, read_report, write_report};
use protoseg::grid::LabelMap;
use protoseg::io::{read_image, read_labelmap, write_image, write_labelmap, write_mask};
use protoseg::model::{extract_features, Checkpoint, ModelParams};
use protoseg::pseudoclass::{
    activation_score, build_exclusion_mask, refine_pseudo_mask, sample_pseudo_class,
    ExclusionPolicy, SamplingStrategy, ScoredCandidate,
};
use protoseg::superpixel::{
    regions_to_masks, FelzenszwalbParams, SlicParams, SuperpixelAlgo,
};
use protoseg::train::{train, TrainConfig};

#[derive(Parser)]
#[command(name = "protoseg", version, about = "Few-shot segmentation with superpixel pseudo-class self-supervision")]
struct Cli {
    /// Cap on worker threads for parallel sections (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Increase diagnostic verbosity on stderr.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AlgoArg {
    Felzenszwalb,
    Slic,
    Grid,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PolicyArg {
    /// Remove only the target class (the refinement's minimal form).
    TargetOnly,
    /// Remove all training (base) class pixels.
    Base,
    /// Remove base and novel class pixels.
    BaseNovel,
}

impl From<PolicyArg> for ExclusionPolicy {
    fn from(value: PolicyArg) -> Self {
        match value {
            PolicyArg::TargetOnly => ExclusionPolicy::TargetOnly,
            PolicyArg::Base => ExclusionPolicy::AllBaseClasses,
            PolicyArg::BaseNovel => ExclusionPolicy::AllBaseAndNovel,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StrategyArg {
    /// Uniform choice among the --top-k highest-scoring candidates.
    TopK,
    /// Uniform choice among all candidates.
    Uniform,
}

/// Superpixel flags shared by every subcommand that segments.
#[derive(Args, Clone)]
struct SuperpixelOpts {
    /// Segmentation algorithm.
    #[arg(long, value_enum, default_value = "felzenszwalb")]
    algo: AlgoArg,

    /// Felzenszwalb threshold constant k.
    #[arg(long, default_value_t = 100.0)]
    scale: f64,

    /// Felzenszwalb pre-smoothing sigma (0 disables smoothing).
    #[arg(long, default_value_t = 0.8)]
    sigma: f64,

    /// Felzenszwalb minimum region size in pixels.
    #[arg(long, default_value_t = 200)]
    min_size: usize,

    /// SLIC segment count.
    #[arg(long, default_value_t = 100)]
    n_segments: usize,

    /// SLIC compactness.
    #[arg(long, default_value_t = 10.0)]
    compactness: f64,

    /// SLIC iteration cap.
    #[arg(long, default_value_t = 10)]
    max_iterations: usize,

    /// Grid rows.
    #[arg(long, default_value_t = 10)]
    rows: usize,

    /// Grid columns.
    #[arg(long, default_value_t = 10)]
    cols: usize,
}

impl SuperpixelOpts {
    fn to_algo(&self) -> SuperpixelAlgo {
        match self.algo {
            AlgoArg::Felzenszwalb => SuperpixelAlgo::Felzenszwalb(FelzenszwalbParams {
                scale: self.scale,
                sigma: self.sigma,
                min_size: self.min_size,
            }),
            AlgoArg::Slic => SuperpixelAlgo::Slic(SlicParams {
                n_segments: self.n_segments,
                compactness: self.compactness,
                max_iterations: self.max_iterations,
            }),
            AlgoArg::Grid => SuperpixelAlgo::Grid { rows: self.rows, cols: self.cols },
        }
    }
}

/// Fold addressing: a built-in fold index or an explicit fold file.
#[derive(Args, Clone)]
struct FoldOpts {
    /// Built-in fold index (0..=3): fold i holds out catalog classes at
    /// sorted positions congruent to i mod 4.
    #[arg(long, conflicts_with = "fold_file")]
    fold: Option<usize>,

    /// JSON fold file {"base_classes": [...], "novel_classes": [...]}.
    #[arg(long)]
    fold_file: Option<PathBuf>,
}

impl FoldOpts {
    fn resolve(&self, index: &DatasetIndex) -> Result<FoldConfig, CliError> {
        match (self.fold, &self.fold_file) {
            (Some(f), None) => Ok(FoldConfig::builtin(&index.classes, f)?),
            (None, Some(path)) => Ok(FoldConfig::from_file(path, Some(&index.classes))?),
            _ => Err(CliError::Usage("exactly one of --fold or --fold-file is required".into())),
        }
    }
}

/// Training flags shared by `train` and `ablate`.
#[derive(Args, Clone)]
struct TrainOpts {
    /// Self-supervised loss weight.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,

    /// Support shots per episode.
    #[arg(long, default_value_t = 1)]
    shots: usize,

    /// Training episodes.
    #[arg(long, default_value_t = 2000)]
    episodes: usize,

    /// SGD learning rate.
    #[arg(long, default_value_t = 0.05)]
    lr: f64,

    /// SGD momentum.
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,

    /// Probability clamp for the cross-entropy logs.
    #[arg(long, default_value_t = 1e-7)]
    clamp_eps: f64,

    /// Exclusion policy for pseudo-mask refinement.
    #[arg(long, value_enum, default_value = "base")]
    policy: PolicyArg,

    /// Pseudo-class sampling strategy.
    #[arg(long, value_enum, default_value = "top-k")]
    strategy: StrategyArg,

    /// k of the top-k sampling strategy.
    #[arg(long, default_value_t = 5)]
    top_k: usize,

    /// Minimum surviving pseudo-mask area in pixels.
    #[arg(long, default_value_t = 16)]
    min_area: usize,

    /// Disable the self-supervised pathway entirely.
    #[arg(long)]
    no_selfsup: bool,

    /// Feature extractor patch radius.
    #[arg(long, default_value_t = 2)]
    patch_radius: usize,

    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,

    /// Cosine logit temperature.
    #[arg(long, default_value_t = 20.0)]
    temperature: f64,

    #[command(flatten)]
    superpixel: SuperpixelOpts,
}

impl TrainOpts {
    fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            shots_k: self.shots,
            episodes: self.episodes,
            learning_rate: self.lr,
            momentum: self.momentum,
            clamp_eps: self.clamp_eps,
            seed,
            exclusion_policy: self.policy.into(),
            sampling_strategy: match self.strategy {
                StrategyArg::TopK => SamplingStrategy::TopK(self.top_k),
                StrategyArg::Uniform => SamplingStrategy::UniformAll,
            },
            superpixel: self.superpixel.to_algo(),
            min_area: self.min_area,
            selfsup_enabled: !self.no_selfsup,
            patch_radius: self.patch_radius,
            embed_dim: self.embed_dim,
            temperature: self.temperature,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the deterministic synthetic shape/texture dataset.
    GenerateData {
        /// Output dataset directory.
        #[arg(long, env = "PROTOSEG_OUT")]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_images: usize,
        #[arg(long, default_value_t = 12)]
        n_classes: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 4)]
        max_objects: usize,
        /// Generation seed.
        #[arg(long)]
        seed: u64,
    },

    /// Segment one PNG and write the region map (16-bit single-channel PNG).
    Superpixel {
        /// Input RGB PNG.
        input: PathBuf,
        #[command(flatten)]
        superpixel: SuperpixelOpts,
        /// Seed (reserved for seeded segmenters; output is deterministic).
        #[arg(long)]
        seed: u64,
        /// Also write a boundary overlay PNG.
        #[arg(long)]
        overlay: bool,
        #[arg(long, env = "PROTOSEG_OUT")]
        out: PathBuf,
    },

    /// Run pseudo-class generation on one image/label pair and write the
    /// selected pseudo-mask plus a JSON record.
    Pseudoclass {
        /// Query image PNG.
        #[arg(long)]
        image: PathBuf,
        /// Label map PNG.
        #[arg(long)]
        labels: PathBuf,
        /// Target class id to exclude.
        #[arg(long)]
        target_class: u32,
        /// Checkpoint for activation scoring; a seeded random model is used
        /// when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Fold file providing base/novel sets; without it every annotated
        /// class counts as base.
        #[arg(long)]
        fold_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "base")]
        policy: PolicyArg,
        #[arg(long, value_enum, default_value = "top-k")]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long, default_value_t = 16)]
        min_area: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        superpixel: SuperpixelOpts,
        #[arg(long, env = "PROTOSEG_OUT")]
        out: PathBuf,
    },

    /// Train the model episodically on a fold's base classes.
    Train {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        fold: FoldOpts,
        #[command(flatten)]
        opts: TrainOpts,
        /// Training seed (initialization, episodes, pseudo-classes).
        #[arg(long)]
        seed: u64,
        #[arg(long, env = "PROTOSEG_OUT")]
        out: PathBuf,
    },

    /// Evaluate a checkpoint on a fold's novel classes.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        fold: FoldOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 1)]
        shots: usize,
        /// Evaluation episode seed.
        #[arg(long)]
        seed: u64,
        #[arg(long, env = "PROTOSEG_OUT")]
        out: PathBuf,
    },

    /// Dump per-episode query foreground embeddings as CSV.
    DumpEmbeddings {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        fold: FoldOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, env = "PROTOSEG_OUT")]
        out: PathBuf,
    },

    /// Train/evaluate an ablation grid over one axis with paired seeds.
    Ablate {
        /// Ablated axis.
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated axis values (e.g. "felzenszwalb,slic,grid" or
        /// "0.1,0.5,1.0" or "top1,top5,uniform"). The baseline axis ignores
        /// this and always runs its two rows.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated built-in fold indices.
        #[arg(long, default_value = "0,1,2,3")]
        folds: String,
        /// Comma-separated training seeds (paired across values).
        #[arg(long, default_value = "11,12,13")]
        seeds: String,
        /// Evaluation episodes per cell.
        #[arg(long, default_value_t = 1000)]
        eval_episodes: usize,
        /// Shared evaluation seed.
        #[arg(long, default_value_t = 9000)]
        eval_seed: u64,
        #[command(flatten)]
        opts: TrainOpts,
        #[arg(long, env = "PROTOSEG_OUT")]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AxisArg {
    Superpixel,
    Sampling,
    Exclusion,
    Alpha,
    Baseline,
}

enum CliError {
    Usage(String),
    Core(protoseg::Error),
}

impl From<protoseg::Error> for CliError {
    fn from(e: protoseg::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(protoseg::Error::Io(e))
    }
}

fn exit_code(err: &CliError) -> i32 {
    match err {
        CliError::Usage(_) => 1,
        CliError::Core(e) => match e {
            protoseg::Error::DimensionMismatch { .. }
            | protoseg::Error::InvalidParameter(_)
            | protoseg::Error::EmptyMask(_)
            | protoseg::Error::DegenerateSupport(_)
            | protoseg::Error::Data { .. }
            | protoseg::Error::Sampling(_)
            | protoseg::Error::Image(_)
            | protoseg::Error::Json(_) => 2,
            protoseg::Error::NonFiniteGradient(_) | protoseg::Error::Io(_) => 3,
        },
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: failed to configure thread pool: {e}");
            std::process::exit(1);
        }
    }
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Core(err) => eprintln!("error: {err}"),
            }
            std::process::exit(exit_code(&e));
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let verbose = cli.verbose;
    match cli.command {
        Command::GenerateData { out, n_images, n_classes, image_size, max_objects, seed } => {
            generate_synthetic_dataset(&out, n_images, n_classes, image_size, max_objects, seed)?;
            if verbose > 0 {
                eprintln!("generated {n_images} images under {}", out.display());
            }
            println!("{}", serde_json::json!({ "images": n_images, "classes": n_classes }));
            Ok(())
        }
        Command::Superpixel { input, superpixel, seed, overlay, out } => {
            let img = read_image(&input)?;
            let algo = superpixel.to_algo();
            let sp = algo.segment(&img, seed)?;
            std::fs::create_dir_all(&out)?;
            let region_labels = LabelMap::new(
                sp.width(),
                sp.height(),
                sp.region_ids().to_vec(),
            )?;
            write_labelmap(&region_labels, &out.join("region_map.png"))?;
            if overlay {
                write_image(&boundary_overlay(&img, &sp), &out.join("overlay.png"))?;
            }
            println!("{}", serde_json::json!({ "num_regions": sp.num_regions() }));
            Ok(())
        }
        Command::Pseudoclass {
            image,
            labels,
            target_class,
            checkpoint,
            fold_file,
            policy,
            strategy,
            top_k,
            min_area,
            seed,
            superpixel,
            out,
        } => {
            run_pseudoclass(
                &image, &labels, target_class, checkpoint.as_deref(), fold_file.as_deref(),
                policy, strategy, top_k, min_area, seed, &superpixel, &out,
            )
        }
        Command::Train { data, fold, opts, seed, out } => {
            let index = load_dataset(&data)?;
            let fold_config = fold.resolve(&index)?;
            let cfg = opts.to_config(seed);
            let output = train(&index, &fold_config, &cfg)?;
            for (episode, reason) in &output.skipped {
                eprintln!("episode {episode} skipped: {reason}");
            }
            std::fs::create_dir_all(&out)?;
            Checkpoint { params: output.params, seed }.save(&out.join("model.ckpt"))?;
            let mut log = std::fs::File::create(out.join("train_log.jsonl"))?;
            for record in &output.records {
                serde_json::to_writer(&mut log, record).map_err(protoseg::Error::from)?;
                log.write_all(b"\n")?;
            }
            let mut cfg_json =
                serde_json::to_string_pretty(&cfg).map_err(protoseg::Error::from)?;
            cfg_json.push('\n');
            std::fs::write(out.join("train_config.json"), cfg_json)?;
            if verbose > 0 {
                if let (Some(first), Some(last)) = (output.records.first(), output.records.last())
                {
                    eprintln!(
                        "trained {} episodes: total loss {:.4} -> {:.4}",
                        output.records.len(),
                        first.total_loss,
                        last.total_loss
                    );
                }
            }
            println!(
                "{}",
                serde_json::json!({
                    "episodes": output.records.len(),
                    "skipped": output.skipped.len(),
                    "checkpoint": out.join("model.ckpt"),
                })
            );
            Ok(())
        }
        Command::Eval { data, fold, checkpoint, episodes, shots, seed, out } => {
            let index = load_dataset(&data)?;
            let fold_config = fold.resolve(&index)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (report, _records) =
                evaluate_with_records(&ckpt.params, &index, &fold_config, shots, episodes, seed)?;
            write_report(&report, &out)?;
            println!(
                "{}",
                serde_json::json!({ "mean_iou": report.mean_iou, "episodes": report.episode_count })
            );
            Ok(())
        }
        Command::DumpEmbeddings { data, fold, checkpoint, episodes, seed, out } => {
            let index = load_dataset(&data)?;
            let fold_config = fold.resolve(&index)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            std::fs::create_dir_all(&out)?;
            let mut file = std::fs::File::create(out.join("embeddings.csv"))?;
            let rows =
                dump_embeddings(&ckpt.params, &index, &fold_config, episodes, seed, &mut file)?;
            println!("{}", serde_json::json!({ "rows": rows }));
            Ok(())
        }
        Command::Ablate {
            axis,
            values,
            data,
            folds,
            seeds,
            eval_episodes,
            eval_seed,
            opts,
            out,
        } => run_ablate(
            axis,
            values.as_deref(),
            &data,
            &folds,
            &seeds,
            eval_episodes,
            eval_seed,
            &opts,
            &out,
            verbose,
        ),
    }
}

fn boundary_overlay(
    img: &protoseg::grid::Image,
    sp: &protoseg::superpixel::SuperpixelMap,
) -> protoseg::grid::Image {
    let (w, h) = (img.width(), img.height());
    let mut data = img.data().to_vec();
    for y in 0..h {
        for x in 0..w {
            let id = sp.get(x, y);
            let boundary = (x + 1 < w && sp.get(x + 1, y) != id)
                || (y + 1 < h && sp.get(x, y + 1) != id);
            if boundary {
                let i = (y * w + x) * 3;
                data[i] = 1.0;
                data[i + 1] = 1.0;
                data[i + 2] = 0.0;
            }
        }
    }
    protoseg::grid::Image::new(w, h, data).expect("overlay stays in range")
}

#[allow(clippy::too_many_arguments)]
fn run_pseudoclass(
    image: &std::path::Path,
    labels: &std::path::Path,
    target_class: u32,
    checkpoint: Option<&std::path::Path>,
    fold_file: Option<&std::path::Path>,
    policy: PolicyArg,
    strategy: StrategyArg,
    top_k: usize,
    min_area: usize,
    seed: u64,
    superpixel: &SuperpixelOpts,
    out: &std::path::Path,
) -> Result<(), CliError> {
    let img = read_image(image)?;
    let label_map = read_labelmap(labels)?;
    let params = match checkpoint {
        Some(path) => Checkpoint::load(path)?.params,
        None => ModelParams::init(2, 16, 20.0, seed)?,
    };
    let (base_classes, novel_classes): (BTreeSet<u32>, BTreeSet<u32>) = match fold_file {
        Some(path) => {
            let fold = FoldConfig::from_file(path, None)?;
            (fold.base_classes, fold.novel_classes)
        }
        None => {
            // Standalone default: every annotated class counts as base.
            let base = label_map.labels().iter().copied().filter(|&l| l != 0).collect();
            (base, BTreeSet::new())
        }
    };
    let strategy = match strategy {
        StrategyArg::TopK => SamplingStrategy::TopK(top_k),
        StrategyArg::Uniform => SamplingStrategy::UniformAll,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sp = superpixel.to_algo().segment(&img, rng.next_u64())?;
    let features = extract_features(&img, &params)?;
    let exclusion =
        build_exclusion_mask(&label_map, target_class, &base_classes, &novel_classes, policy.into())?;
    let mut candidates = Vec::new();
    for mask in regions_to_masks(&sp) {
        let refined = refine_pseudo_mask(&mask, &exclusion)?;
        if refined.count_ones() < min_area.max(1) {
            continue;
        }
        let score = activation_score(&features, &refined)?;
        candidates.push(ScoredCandidate { refined_mask: refined, score });
    }

    std::fs::create_dir_all(out)?;
    let record = if candidates.is_empty() {
        serde_json::json!({
            "region_count": sp.num_regions(),
            "candidate_count": 0,
            "selected_score": null,
        })
    } else {
        let chosen = sample_pseudo_class(&candidates, strategy, &mut rng)?;
        write_mask(&candidates[chosen].refined_mask, &out.join("pseudo_mask.png"))?;
        serde_json::json!({
            "region_count": sp.num_regions(),
            "candidate_count": candidates.len(),
            "selected_score": candidates[chosen].score,
        })
    };
    let mut json = serde_json::to_string_pretty(&record).map_err(protoseg::Error::from)?;
    json.push('\n');
    std::fs::write(out.join("record.json"), &json)?;
    println!("{record}");
    Ok(())
}

fn parse_list<T: std::str::FromStr>(input: &str, what: &str) -> Result<Vec<T>, CliError> {
    input
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::Usage(format!("invalid {what} value: {s}")))
        })
        .collect()
}

fn parse_axis_values(
    axis: AxisArg,
    values: Option<&str>,
    opts: &TrainOpts,
) -> Result<(AblationAxis, Vec<AxisValue>), CliError> {
    let listed: Vec<String> = values
        .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        .unwrap_or_default();
    match axis {
        AxisArg::Alpha => {
            if listed.is_empty() {
                return Err(CliError::Usage("--values is required for the alpha axis".into()));
            }
            let mut out = Vec::new();
            for v in &listed {
                let a: f64 = v
                    .parse()
                    .map_err(|_| CliError::Usage(format!("invalid alpha value: {v}")))?;
                out.push(AxisValue::Alpha(a));
            }
            Ok((AblationAxis::Alpha, out))
        }
        AxisArg::Superpixel => {
            let names = if listed.is_empty() {
                vec!["felzenszwalb".to_string(), "slic".to_string(), "grid".to_string()]
            } else {
                listed
            };
            let mut out = Vec::new();
            for name in &names {
                let algo = match name.as_str() {
                    "felzenszwalb" => SuperpixelAlgo::Felzenszwalb(FelzenszwalbParams {
                        scale: opts.superpixel.scale,
                        sigma: opts.superpixel.sigma,
                        min_size: opts.superpixel.min_size,
                    }),
                    "slic" => SuperpixelAlgo::Slic(SlicParams {
                        n_segments: opts.superpixel.n_segments,
                        compactness: opts.superpixel.compactness,
                        max_iterations: opts.superpixel.max_iterations,
                    }),
                    "grid" => SuperpixelAlgo::Grid {
                        rows: opts.superpixel.rows,
                        cols: opts.superpixel.cols,
                    },
                    other => {
                        return Err(CliError::Usage(format!("unknown superpixel value: {other}")))
                    }
                };
                out.push(AxisValue::Algo(algo));
            }
            Ok((AblationAxis::Superpixel, out))
        }
        AxisArg::Sampling => {
            let names = if listed.is_empty() {
                vec!["top1".to_string(), "top5".to_string(), "uniform".to_string()]
            } else {
                listed
            };
            let mut out = Vec::new();
            for name in &names {
                let strategy = if name == "uniform" {
                    SamplingStrategy::UniformAll
                } else if let Some(k) = name.strip_prefix("top") {
                    let k: usize = k
                        .parse()
                        .map_err(|_| CliError::Usage(format!("invalid sampling value: {name}")))?;
                    SamplingStrategy::TopK(k)
                } else {
                    return Err(CliError::Usage(format!("unknown sampling value: {name}")));
                };
                out.push(AxisValue::Strategy(strategy));
            }
            Ok((AblationAxis::Sampling, out))
        }
        AxisArg::Exclusion => {
            let names = if listed.is_empty() {
                vec!["target-only".to_string(), "base".to_string(), "base-novel".to_string()]
            } else {
                listed
            };
            let mut out = Vec::new();
            for name in &names {
                let policy = match name.as_str() {
                    "target-only" => ExclusionPolicy::TargetOnly,
                    "base" => ExclusionPolicy::AllBaseClasses,
                    "base-novel" => ExclusionPolicy::AllBaseAndNovel,
                    other => {
                        return Err(CliError::Usage(format!("unknown exclusion value: {other}")))
                    }
                };
                out.push(AxisValue::Policy(policy));
            }
            Ok((AblationAxis::Exclusion, out))
        }
        AxisArg::Baseline => {
            if !listed.is_empty() {
                return Err(CliError::Usage(
                    "the baseline axis always runs its two rows; drop --values".into(),
                ));
            }
            Ok((AblationAxis::Baseline, AblationSpec::baseline_values()))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_ablate(
    axis: AxisArg,
    values: Option<&str>,
    data: &std::path::Path,
    folds: &str,
    seeds: &str,
    eval_episodes: usize,
    eval_seed: u64,
    opts: &TrainOpts,
    out: &std::path::Path,
    verbose: u8,
) -> Result<(), CliError> {
    let index = load_dataset(data)?;
    let folds: Vec<usize> = parse_list(folds, "fold")?;
    let seeds: Vec<u64> = parse_list(seeds, "seed")?;
    let (axis, axis_values) = parse_axis_values(axis, values, opts)?;
    let spec = AblationSpec {
        axis,
        values: axis_values,
        base: opts.to_config(0),
        seeds,
        eval_episodes,
        eval_seed,
        eval_shots: opts.shots,
    };
    let table = run_ablation(&spec, &index, &folds, out)?;
    write_tables(&table, out)?;

    // The baseline axis also emits the paired per-class-count comparison.
    if axis == AblationAxis::Baseline {
        for cell in table.cells.iter().filter(|c| c.value_label == "with-ss") {
            let partner = table.cells.iter().find(|c| {
                c.value_label == "baseline" && c.fold == cell.fold && c.seed == cell.seed
            });
            if let (Some(a_path), Some(partner)) = (&cell.report, partner) {
                if let Some(b_path) = &partner.report {
                    let a = read_report(a_path)?;
                    let b = read_report(b_path)?;
                    let rows = compare_by_num_classes(&a, &b);
                    let name = format!("by_num_classes_f{}_s{}.csv", cell.fold, cell.seed);
                    std::fs::write(out.join(name), comparison_csv(&rows))?;
                }
            }
        }
    }
    if verbose > 0 {
        eprintln!("{}", protoseg::ablation::render_markdown(&table));
    }
    let failed = table.cells.iter().filter(|c| c.error.is_some()).count();
    println!(
        "{}",
        serde_json::json!({ "cells": table.cells.len(), "failed": failed, "out": out })
    );
    Ok(())
}
