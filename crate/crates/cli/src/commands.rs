use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use fcnpose::compress::{apply_prune, plan_prune, quantize_model};
use fcnpose::dataset::{build_dataset, io as dsio, ArmConfig, AugmentParams, DatasetParams, Sample};
use fcnpose::metrics::{
    benchmark_inference, evaluate_pck, sweep, ExtractConfig, PckConfig, SweepConfig, SweepEvent,
};
use fcnpose::network::{build_fcn_pose, count_flops, load_model, save_model, Dtype};
use fcnpose::trainer::{train_with_observer, TrainConfig};
use fcnpose::{Error, Model32};

use crate::args::{
    BenchArgs, Command, DatasetCommand, EvalArgs, ExtractOpts, GenArgs, InspectArgs, PckOpts, PruneArgs,
    QuantizeArgs, RunArgs, SweepArgs, TrainArgs, TrainOpts,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numeric,
    Io,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Data => "data",
            Category::Numeric => "numeric",
            Category::Io => "io",
        }
    }

    pub fn exit_code(self) -> u8 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Numeric => 4,
            Category::Io => 5,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            category: Category::Config,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        CliError {
            category: Category::Io,
            message: message.into(),
        }
    }
}

fn category_of(e: &Error) -> Category {
    match e {
        Error::Contract(_) => Category::Config,
        Error::Parse(_) | Error::Json(_) | Error::Data { .. } => Category::Data,
        Error::Io { .. } => Category::Io,
        Error::Generation { .. }
        | Error::NonFiniteLoss { .. }
        | Error::Quantization { .. }
        | Error::UndefinedMetric(_) => Category::Numeric,
        Error::AtRate { source, .. } => category_of(source),
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            category: category_of(&e),
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Everything needed to repeat a run, written as `run_config.json` into
/// each output directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: String,
    #[serde(flatten)]
    pub command: Command,
}

const RUN_CONFIG: &str = "run_config.json";

fn fresh_dir(path: &Path) -> CliResult {
    if path.exists() {
        return Err(CliError::io(format!("output path {} already exists", path.display())));
    }
    std::fs::create_dir_all(path).map_err(|e| CliError::io(format!("creating {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(e.to_string()))?;
    write_file(path, format!("{text}\n").as_bytes())
}

fn record_run(dir: &Path, command: &Command) -> CliResult {
    write_json(
        &dir.join(RUN_CONFIG),
        &RunConfig {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.clone(),
        },
    )
}

fn train_config(opts: &TrainOpts) -> TrainConfig {
    TrainConfig {
        max_epochs: opts.epochs,
        batch_size: opts.batch_size,
        learning_rate: opts.lr,
        patience: opts.patience,
        seed: opts.seed,
        ..TrainConfig::default()
    }
}

fn pck_config(opts: &PckOpts) -> PckConfig {
    PckConfig {
        alpha: opts.alpha,
        normalization: opts.normalization,
    }
}

fn extract_config(opts: &ExtractOpts) -> CliResult<ExtractConfig> {
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(CliError::config(format!("--threshold must lie in (0, 1), got {}", opts.threshold)));
    }
    if !(opts.distance_m > 0.0 && opts.distance_m.is_finite()) {
        return Err(CliError::config(format!("--distance-m must be positive, got {}", opts.distance_m)));
    }
    Ok(ExtractConfig {
        threshold: opts.threshold,
        distance_m: opts.distance_m,
    })
}

fn read_split(dir: &Path, split: &str) -> CliResult<Vec<Sample>> {
    if split != "train" && split != "val" {
        return Err(CliError::config(format!("unknown split {split:?}; use train or val")));
    }
    Ok(dsio::read_split(dir, split)?)
}

pub fn execute(command: Command) -> CliResult {
    match &command {
        Command::Dataset(DatasetCommand::Gen(a)) => dataset_gen(a, &command),
        Command::Dataset(DatasetCommand::Inspect(a)) => dataset_inspect(a),
        Command::Train(a) => train(a, &command),
        Command::Prune(a) => prune(a, &command),
        Command::Quantize(a) => quantize(a, &command),
        Command::Eval(a) => eval(a, &command),
        Command::Bench(a) => bench(a, &command),
        Command::Sweep(a) => run_sweep(a, &command),
        Command::Run(a) => rerun(a),
    }
}

fn dataset_gen(a: &GenArgs, command: &Command) -> CliResult {
    let (h, w) = a.resolution;
    let config = ArmConfig::for_resolution(h, w);
    let params = DatasetParams {
        n_base: a.n_base,
        val_fraction: a.val_fraction,
        augment_per_image: a.augment,
        augment: AugmentParams::default(),
        seed: a.seed,
    };
    let ds = build_dataset(&config, &params)?;
    fresh_dir(&a.out)?;
    dsio::write_dataset(&a.out, &ds)?;
    record_run(&a.out, command)?;
    info!(
        "wrote {} train / {} val samples at {h}x{w} to {}",
        ds.train.len(),
        ds.val.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SplitSummary {
    samples: usize,
    visible_keypoints: usize,
    hidden_keypoints: usize,
}

fn dataset_inspect(a: &InspectArgs) -> CliResult {
    let mut report = serde_json::Map::new();
    for split in ["train", "val"] {
        let ann = dsio::read_annotations(&a.dir, split)?;
        let visible = ann
            .samples
            .iter()
            .flat_map(|s| s.keypoints.points.iter())
            .filter(|p| p.visible)
            .count();
        let total = ann.samples.len() * fcnpose::dataset::NUM_KEYPOINTS;
        report.insert("height".into(), ann.height.into());
        report.insert("width".into(), ann.width.into());
        report.insert(
            "style".into(),
            serde_json::to_value(ann.style).map_err(|e| CliError::io(e.to_string()))?,
        );
        report.insert(
            split.into(),
            serde_json::to_value(SplitSummary {
                samples: ann.samples.len(),
                visible_keypoints: visible,
                hidden_keypoints: total - visible,
            })
            .map_err(|e| CliError::io(e.to_string()))?,
        );
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| CliError::io(e.to_string()))?
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    best_epoch: usize,
    best_val_loss: f64,
    stop_reason: fcnpose::trainer::StopReason,
    params: usize,
}

fn train_model(
    init: Model32,
    train_set: &[Sample],
    val_set: &[Sample],
    opts: &TrainOpts,
) -> CliResult<(Model32, fcnpose::trainer::TrainHistory)> {
    let cfg = train_config(opts);
    let (model, history) = train_with_observer(&init, train_set, val_set, &cfg, |r| {
        info!(
            "epoch {:>3}  train {:.6}  val {:.6}  best {}",
            r.epoch + 1,
            r.train_loss,
            r.val_loss,
            r.best_epoch + 1
        )
    })?;
    Ok((model, history))
}

fn train(a: &TrainArgs, command: &Command) -> CliResult {
    let train_set = read_split(&a.data, "train")?;
    let val_set = read_split(&a.data, "val")?;
    let init = match &a.init {
        Some(p) => load_model(p)?,
        None => build_fcn_pose(a.train.seed),
    };
    fresh_dir(&a.out)?;
    record_run(&a.out, command)?;
    let (model, history) = train_model(init, &train_set, &val_set, &a.train)?;
    save_model(&model, a.out.join("model.fcnp"))?;
    write_file(&a.out.join("history.csv"), history.to_csv().as_bytes())?;
    write_json(
        &a.out.join("summary.json"),
        &TrainSummary {
            epochs: history.epochs(),
            best_epoch: history.best_epoch + 1,
            best_val_loss: history.val_loss[history.best_epoch],
            stop_reason: history.stop_reason,
            params: model.param_count(),
        },
    )?;
    info!(
        "stopped after {} epochs ({:?}); best epoch {}",
        history.epochs(),
        history.stop_reason,
        history.best_epoch + 1
    );
    Ok(())
}

fn prune(a: &PruneArgs, command: &Command) -> CliResult {
    let model = load_model(&a.model)?;
    let plan = plan_prune(&model, a.rate)?;
    let pruned = apply_prune(&model, &plan)?;
    fresh_dir(&a.out)?;
    save_model(&pruned, a.out.join("model.fcnp"))?;
    plan.save(a.out.join("plan.json"))?;
    record_run(&a.out, command)?;
    info!("params {} -> {}", model.param_count(), pruned.param_count());
    Ok(())
}

fn quantize(a: &QuantizeArgs, command: &Command) -> CliResult {
    let model = load_model(&a.model)?;
    if model.dtype() == Dtype::Fp16 {
        warn!("{} is already FP16; writing it unchanged", a.model.display());
    }
    let q = quantize_model(&model)?;
    fresh_dir(&a.out)?;
    save_model(&q, a.out.join("model.fcnp"))?;
    record_run(&a.out, command)
}

#[derive(Serialize)]
struct EvalSummary {
    split: String,
    images: usize,
    pck_mean: f64,
    pck_std: f64,
    pck: PckConfig,
    extract: ExtractConfig,
    per_image: Vec<f64>,
}

fn eval(a: &EvalArgs, command: &Command) -> CliResult {
    let model = load_model(&a.model)?;
    let samples = read_split(&a.data, &a.split)?;
    let pck = pck_config(&a.pck);
    let extract = extract_config(&a.extract)?;
    let summary = evaluate_pck(&model, &samples, &extract, &pck)?;
    fresh_dir(&a.out)?;
    record_run(&a.out, command)?;
    info!("PCK@{} = {:.4} (std {:.4})", pck.alpha, summary.mean, summary.std);
    write_json(
        &a.out.join("eval.json"),
        &EvalSummary {
            split: a.split.clone(),
            images: summary.per_image.len(),
            pck_mean: summary.mean,
            pck_std: summary.std,
            pck,
            extract,
            per_image: summary.per_image,
        },
    )
}

fn bench(a: &BenchArgs, command: &Command) -> CliResult {
    let model = load_model(&a.model)?;
    let samples = read_split(&a.data, "val")?;
    let images: Vec<_> = samples.into_iter().take(a.images.max(1)).map(|s| s.image).collect();
    let extract = extract_config(&a.extract)?;
    let b = benchmark_inference(&model, &images, a.warmup, a.reps, &extract)?;
    fresh_dir(&a.out)?;
    record_run(&a.out, command)?;
    let (h, w) = (images[0].height(), images[0].width());
    info!(
        "inference {:.3} ms (std {:.3}), {:.2} FPS; with post-processing {:.2} FPS; {} params, {} FLOPs",
        b.inference.mean_s * 1e3,
        b.inference.std_s * 1e3,
        b.inference.fps,
        b.total.fps,
        model.param_count(),
        count_flops(model.spec(), h, w)?
    );
    write_json(&a.out.join("bench.json"), &b)
}

fn run_sweep(a: &SweepArgs, command: &Command) -> CliResult {
    let ds = dsio::read_dataset(&a.data)?;
    let config = SweepConfig {
        rates: a.rates.clone(),
        retrain: TrainConfig {
            max_epochs: a.retrain_epochs,
            ..train_config(&a.train)
        },
        quantize: !a.skip_quantize,
        pck: pck_config(&a.pck),
        extract: extract_config(&a.extract)?,
        warmup: a.warmup,
        reps: a.reps,
        ..SweepConfig::default()
    };
    config.resolved_rates()?;
    fresh_dir(&a.out)?;
    record_run(&a.out, command)?;
    let baseline = match &a.baseline {
        Some(p) => load_model(p)?,
        None => {
            info!("training baseline");
            let (m, h) = train_model(build_fcn_pose(a.train.seed), &ds.train, &ds.val, &a.train)?;
            save_model(&m, a.out.join("baseline.fcnp"))?;
            write_file(&a.out.join("baseline_history.csv"), h.to_csv().as_bytes())?;
            m
        }
    };
    let report = sweep(&baseline, &ds, &config, |ev| match ev {
        SweepEvent::RateStarted { rate, params } => info!("rate {:.0}%: {params} params, retraining", rate * 100.0),
        SweepEvent::Epoch { rate, report } => info!(
            "rate {:.0}% epoch {:>3}  train {:.6}  val {:.6}",
            rate * 100.0,
            report.epoch + 1,
            report.train_loss,
            report.val_loss
        ),
        SweepEvent::RateFinished { row } => info!(
            "rate {:.0}%: PCK {:.4}  {:.3} ms  {:.2} FPS  {} params",
            row.rate * 100.0,
            row.pck_mean,
            row.infer_ms_mean,
            row.fps_infer,
            row.params
        ),
    })?;
    report.write_to(&a.out)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn out_mut(command: &mut Command) -> Option<&mut PathBuf> {
    match command {
        Command::Dataset(DatasetCommand::Gen(a)) => Some(&mut a.out),
        Command::Dataset(DatasetCommand::Inspect(_)) | Command::Run(_) => None,
        Command::Train(a) => Some(&mut a.out),
        Command::Prune(a) => Some(&mut a.out),
        Command::Quantize(a) => Some(&mut a.out),
        Command::Eval(a) => Some(&mut a.out),
        Command::Bench(a) => Some(&mut a.out),
        Command::Sweep(a) => Some(&mut a.out),
    }
}

fn rerun(a: &RunArgs) -> CliResult {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| CliError::io(format!("reading {}: {e}", a.config.display())))?;
    let mut rc: RunConfig =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", a.config.display())))?;
    if matches!(rc.command, Command::Run(_)) {
        return Err(CliError::config("a run config cannot itself be a `run` command"));
    }
    if let Some(out) = &a.out {
        match out_mut(&mut rc.command) {
            Some(slot) => *slot = out.clone(),
            None => return Err(CliError::config("this command has no output path to replace")),
        }
    }
    execute(rc.command)
}
