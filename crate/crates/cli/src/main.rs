//! `bga`: dataset synthesis, training, evaluation, inference, benchmarking and
//! self-checks for the decoupled-aggregation stereo network.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bga_core::bench::compare_paradigms;
use bga_core::config::RunConfig;
use bga_core::data::{
    generate_random_dot_pair, images_to_tensor, load_dataset, load_rgb_png, read_kitti_png, read_pfm, sample_seed,
    save_rgb_png, tensor_to_map, write_kitti_png, write_pfm, write_synthetic_dataset, DisparityMap, StereoSample,
    SyntheticConfig, ValidMask,
};
use bga_core::metrics::{EvalReport, ImageMetrics};
use bga_core::model::StereoModel;
use bga_core::training::{load_model, supervision_mask, train};
use bga_core::{viz, Error};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "bga", version, about = "Stereo matching with decoupled 2D cost aggregation")]
struct Cli {
    /// TOML run configuration with data.*, model.*, agg.*, train.* and bench.* keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Deterministic mode (same as DBS_DETERMINISTIC=1).
    #[arg(long, global = true)]
    deterministic: bool,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic random-dot dataset.
    SynthGen(SynthArgs),
    /// Train a model and write checkpoints plus a metric log.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or an oracle predictor) on a dataset.
    Eval(EvalArgs),
    /// Predict disparity for one stereo pair.
    Infer(InferArgs),
    /// Compare BGA against the parameter-matched 3D baseline.
    Bench(BenchArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset written by `synth-gen`; without it `data.count` pairs are generated in memory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Predictor {
    /// The checkpointed network.
    Model,
    /// Ground truth as the prediction; checks the evaluation pipeline.
    Gt,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file or directory, or `none` with `--predictor gt`.
    #[arg(long)]
    ckpt: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Predictor::Model)]
    predictor: Predictor,
    /// Also report the KITTI compound rule (>3 px and >5%).
    #[arg(long)]
    kitti_compound: bool,
    /// Output directory for the record file; defaults to the dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// Ground truth as PFM (non-finite = invalid) or KITTI 16-bit PNG.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated HxW list, e.g. 64x96,96x128.
    #[arg(long)]
    shapes: Option<String>,
    /// Comma-separated variants among tiny,S,M,L.
    #[arg(long)]
    variants: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message: format!("{}: {e}", path.display()),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Subcommand flags become overrides so the resolved record reproduces the run.
fn flag_overrides(command: &Command) -> Vec<String> {
    let mut out = Vec::new();
    let mut push = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push(format!("{key}={v}"));
        }
    };
    match command {
        Command::SynthGen(a) => {
            push("data.count", a.count.map(|v| v.to_string()));
            push("data.seed", a.seed.map(|v| v.to_string()));
        }
        Command::Train(a) => push("train.steps", a.steps.map(|v| v.to_string())),
        Command::Bench(a) => {
            push("bench.shapes", a.shapes.as_ref().map(|s| format!("{s:?}")));
            push(
                "bench.variants",
                a.variants.as_ref().map(|s| {
                    let items: Vec<String> = s.split(',').map(|v| format!("{:?}", v.trim())).collect();
                    format!("[{}]", items.join(","))
                }),
            );
            push("bench.iters", a.iters.map(|v| v.to_string()));
            push("bench.warmup", a.warmup.map(|v| v.to_string()));
        }
        _ => {}
    }
    out
}

fn run(cli: Cli) -> CliResult {
    let mut overrides = cli.overrides.clone();
    overrides.extend(flag_overrides(&cli.command));
    if cli.deterministic {
        overrides.push("train.deterministic=true".into());
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    // Architecture keys given explicitly are checked against checkpoints.
    let explicit_arch = cli.config.is_some()
        || cli
            .overrides
            .iter()
            .any(|o| o.starts_with("model.") || o.starts_with("agg.") || o.starts_with("data.d_max"));
    match &cli.command {
        Command::SynthGen(a) => synth_gen(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Eval(a) => eval_cmd(&cfg, a, explicit_arch),
        Command::Infer(a) => infer_cmd(&cfg, a, explicit_arch),
        Command::Bench(a) => bench_cmd(&cfg, a),
        Command::Selftest(a) => selftest_cmd(&cfg, a),
    }
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

/// Writes `<dir>/<command>_config.toml` holding the fully resolved configuration.
fn record_config(cfg: &RunConfig, dir: Option<&Path>, command: &str) -> CliResult {
    let text = cfg.to_toml()?;
    log::info!("resolved configuration:\n{text}");
    if let Some(dir) = dir {
        create_dir(dir)?;
        write_file(&dir.join(format!("{command}_config.toml")), text)?;
    }
    Ok(())
}

fn synth_gen(cfg: &RunConfig, a: &SynthArgs) -> CliResult {
    record_config(cfg, Some(&a.out), "synth-gen")?;
    let manifest = write_synthetic_dataset(&a.out, &cfg.data.synthetic(), cfg.data.count)?;
    println!("wrote {} samples to {}", manifest.indices.len(), a.out.display());
    Ok(())
}

fn synthetic_samples(base: &SyntheticConfig, count: usize) -> CliResult<Vec<StereoSample>> {
    (0..count)
        .map(|i| {
            let cfg = SyntheticConfig {
                seed: sample_seed(base.seed, i),
                ..base.clone()
            };
            Ok(generate_random_dot_pair(&cfg)?)
        })
        .collect()
}

fn train_cmd(cfg: &RunConfig, a: &TrainArgs) -> CliResult {
    record_config(cfg, Some(&a.out), "train")?;
    let samples = match &a.data {
        Some(dir) => load_dataset(dir)?.1,
        None => synthetic_samples(&cfg.data.synthetic(), cfg.data.count)?,
    };
    let val_count = cfg.train.val_count.min(samples.len().saturating_sub(1));
    let (train_set, val_set) = samples.split_at(samples.len() - val_count);
    let mut train_cfg = cfg.train.clone();
    train_cfg.deterministic = cfg.deterministic();
    let mut model = StereoModel::<f32>::new(&cfg.model_config()?, cfg.model.seed)?;
    log::info!(
        "training {} parameters on {} pairs, validating on {}",
        model.num_params(),
        train_set.len(),
        val_set.len()
    );
    let report = train(&mut model, train_set, val_set, &train_cfg, Some(&a.out))?;
    if let Some(eval) = &report.final_eval {
        print!("{}", eval.to_table());
    }
    if let Some(last) = report.checkpoints.last() {
        println!("checkpoint: {}", last.display());
    }
    Ok(())
}

fn evaluate_samples(
    samples: &[StereoSample],
    d_max: usize,
    kitti_compound: bool,
    mut predict: impl FnMut(&StereoSample) -> CliResult<DisparityMap>,
) -> CliResult<EvalReport> {
    let mut per_image = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let pred = predict(s)?;
        let mask = supervision_mask(s, d_max);
        per_image.push(ImageMetrics::compute(i, &pred, &s.disparity_gt, &mask, kitti_compound)?);
    }
    Ok(EvalReport::from_images(per_image))
}

fn load_checkpoint(cfg: &RunConfig, path: &Path, explicit_arch: bool) -> CliResult<StereoModel<f32>> {
    let expected = if explicit_arch { Some(cfg.model_config()?) } else { None };
    let (model, step) = load_model::<f32>(path, expected.as_ref())?;
    log::info!("loaded {} (step {step})", path.display());
    Ok(model)
}

fn predict_map(model: &StereoModel<f32>, left: &bga_core::data::Image, right: &bga_core::data::Image) -> CliResult<DisparityMap> {
    let l = images_to_tensor::<f32>(&[left])?;
    let r = images_to_tensor::<f32>(&[right])?;
    Ok(tensor_to_map(&model.predict(&l, &r)?.d_final, 0))
}

fn eval_cmd(cfg: &RunConfig, a: &EvalArgs, explicit_arch: bool) -> CliResult {
    let out = a.out.clone().unwrap_or_else(|| a.data.clone());
    record_config(cfg, Some(&out), "eval")?;
    let (_, samples) = load_dataset(&a.data)?;
    let report = match a.predictor {
        Predictor::Gt => {
            if a.ckpt != "none" {
                log::warn!("--predictor gt ignores the checkpoint {}", a.ckpt);
            }
            evaluate_samples(&samples, cfg.data.d_max, a.kitti_compound, |s| Ok(s.disparity_gt.clone()))?
        }
        Predictor::Model => {
            if a.ckpt == "none" {
                return Err(config_error("--predictor model needs a checkpoint, not `none`"));
            }
            let model = load_checkpoint(cfg, Path::new(&a.ckpt), explicit_arch)?;
            let d_max = model.config().d_max;
            evaluate_samples(&samples, d_max, a.kitti_compound, |s| predict_map(&model, &s.left, &s.right))?
        }
    };
    write_file(&out.join("eval.jsonl"), report.to_jsonl()?)?;
    print!("{}", report.to_table());
    Ok(())
}

fn read_ground_truth(path: &Path) -> CliResult<(DisparityMap, ValidMask)> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        return Ok(read_kitti_png(path)?);
    }
    let map = read_pfm(path)?.map;
    let mask = ValidMask {
        height: map.height,
        width: map.width,
        data: map.data.iter().map(|d| d.is_finite()).collect(),
    };
    let map = DisparityMap {
        data: map.data.iter().map(|&d| if d.is_finite() { d } else { 0.0 }).collect(),
        ..map
    };
    Ok((map, mask))
}

fn infer_cmd(cfg: &RunConfig, a: &InferArgs, explicit_arch: bool) -> CliResult {
    record_config(cfg, Some(&a.out), "infer")?;
    let model = load_checkpoint(cfg, &a.ckpt, explicit_arch)?;
    let left = load_rgb_png(&a.left)?;
    let right = load_rgb_png(&a.right)?;
    if (left.height, left.width) != (right.height, right.width) {
        return Err(config_error(format!(
            "left image is {}x{} but right is {}x{}",
            left.height, left.width, right.height, right.width
        )));
    }
    let pred = predict_map(&model, &left, &right)?;
    let d_max = model.config().d_max as f32;
    write_pfm(a.out.join("disparity.pfm"), &pred)?;
    write_kitti_png(a.out.join("disparity.png"), &pred, &ValidMask::all(pred.height, pred.width, true))?;
    save_rgb_png(a.out.join("disparity_color.png"), &viz::colorize_disparity(&pred, d_max))?;
    if let Some(gt_path) = &a.gt {
        let (gt, mask) = read_ground_truth(gt_path)?;
        save_rgb_png(a.out.join("error.png"), &viz::error_map(&pred, &gt, &mask)?)?;
        let report = EvalReport::from_images(vec![ImageMetrics::compute(0, &pred, &gt, &mask, false)?]);
        write_file(&a.out.join("metrics.jsonl"), report.to_jsonl()?)?;
        print!("{}", report.to_table());
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn bench_cmd(cfg: &RunConfig, a: &BenchArgs) -> CliResult {
    record_config(cfg, a.out.as_deref(), "bench")?;
    let (shapes, opts) = cfg.bench_options()?;
    let report = compare_paradigms(&cfg.bench.variants, &shapes, &opts)?;
    let table = report.to_table();
    if let Some(dir) = &a.out {
        write_file(&dir.join("bench.jsonl"), report.to_jsonl()?)?;
        write_file(&dir.join("bench.txt"), &table)?;
    }
    print!("{table}");
    println!("verdict: {}", if report.all_pass() { "pass" } else { "FAIL" });
    Ok(())
}

fn selftest_cmd(cfg: &RunConfig, a: &SelftestArgs) -> CliResult {
    record_config(cfg, a.out.as_deref(), "selftest")?;
    let outcomes = bga_core::selftest::run_selftest();
    for c in &outcomes {
        println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(dir) = &a.out {
        let lines: Vec<String> = outcomes
            .iter()
            .map(|c| serde_json::to_string(c).expect("plain record"))
            .collect();
        write_file(&dir.join("selftest.jsonl"), lines.join("\n") + "\n")?;
    }
    let failed = outcomes.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: format!("{failed} self-check(s) failed"),
        });
    }
    Ok(())
}
