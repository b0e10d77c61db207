use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fcnpose::metrics::Normalization;

#[derive(Debug, Parser)]
#[command(name = "fcnpose", version, about = "Keypoint segmentation: train, prune, quantize, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "command")]
pub enum Command {
    /// Generate or inspect a synthetic dataset.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the full network from scratch (or from --init).
    Train(TrainArgs),
    /// L1 filter pruning of a trained model (no retraining).
    Prune(PruneArgs),
    /// Post-training FP16 quantization.
    Quantize(QuantizeArgs),
    /// PCK of a model on a dataset split.
    Eval(EvalArgs),
    /// Single-threaded inference latency.
    Bench(BenchArgs),
    /// Prune -> retrain -> quantize -> evaluate over a list of rates.
    Sweep(SweepArgs),
    /// Re-execute the run recorded in a run_config.json.
    Run(RunArgs),
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum DatasetCommand {
    Gen(GenArgs),
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenArgs {
    /// Output directory; must not exist.
    #[arg(long)]
    pub out: PathBuf,
    /// `N` for N x N, or `HxW`; both multiples of 32.
    #[arg(long, default_value = "64", value_parser = parse_resolution)]
    pub resolution: (usize, usize),
    /// Number of rendered scenes before splitting.
    #[arg(long, default_value_t = 200)]
    pub n_base: usize,
    #[arg(long, default_value_t = 0.5)]
    pub val_fraction: f64,
    /// Augmented copies per training scene.
    #[arg(long, default_value_t = 3)]
    pub augment: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InspectArgs {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from these weights instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Fraction (0.7) or percentage (70).
    #[arg(long, value_parser = parse_rate)]
    pub rate: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExtractOpts {
    /// Activation threshold for binarization.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Expansion clustering distance M, pixels.
    #[arg(long, default_value_t = 1.0)]
    pub distance_m: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PckOpts {
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// `bbox`, `link:I,J` or `px:LENGTH`.
    #[arg(long, default_value = "bbox", value_parser = parse_normalization)]
    pub normalization: Normalization,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `val` or `train`.
    #[arg(long, default_value = "val")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub pck: PckOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub extract: ExtractOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset whose validation images are timed.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 10)]
    pub images: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub extract: ExtractOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Trained baseline; when absent the baseline is trained first.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Comma-separated fractions or percentages; rate 0 is always added.
    #[arg(long, default_value = "30,50,70,90", value_delimiter = ',', value_parser = parse_rate)]
    pub rates: Vec<f64>,
    /// Baseline training options (ignored with --baseline).
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainOpts,
    #[arg(long, default_value_t = 100)]
    pub retrain_epochs: usize,
    /// Evaluate pruned FP32 models without the FP16 step.
    #[arg(long)]
    pub skip_quantize: bool,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub pck: PckOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub extract: ExtractOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RunArgs {
    /// A run_config.json written by an earlier command.
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the recorded output path (outputs must be fresh).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_resolution(s: &str) -> Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad resolution {s:?}"));
    let (h, w) = match s.split_once(['x', 'X']) {
        Some((h, w)) => (parse(h)?, parse(w)?),
        None => {
            let n = parse(s)?;
            (n, n)
        }
    };
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(format!("resolution {h}x{w} must be a positive multiple of 32"));
    }
    Ok((h, w))
}

/// Values `>= 1` are read as percentages.
pub fn parse_rate(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("bad rate {s:?}"))?;
    let r = if v >= 1.0 { v / 100.0 } else { v };
    if !(0.0..1.0).contains(&r) {
        return Err(format!("rate {s} is outside [0, 100)"));
    }
    Ok(r)
}

pub fn parse_normalization(s: &str) -> Result<Normalization, String> {
    let bad = || format!("bad normalization {s:?}; use bbox, link:I,J or px:LENGTH");
    if s == "bbox" {
        return Ok(Normalization::BboxDiagonal);
    }
    if let Some(rest) = s.strip_prefix("link:") {
        let (i, j) = rest.split_once(',').ok_or_else(bad)?;
        return Ok(Normalization::ReferenceLink(
            i.trim().parse().map_err(|_| bad())?,
            j.trim().parse().map_err(|_| bad())?,
        ));
    }
    if let Some(v) = s.strip_prefix("px:") {
        return Ok(Normalization::AbsolutePixels(v.trim().parse().map_err(|_| bad())?));
    }
    Err(bad())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_accept_both_forms() {
        let cli = Cli::try_parse_from(["fcnpose", "sweep", "--data", "d", "--out", "o", "--rates", "30,0.5, 70"]).unwrap();
        let Command::Sweep(a) = cli.command else { panic!("not a sweep") };
        assert_eq!(a.rates, vec![0.3, 0.5, 0.7]);
        assert!(parse_rate("100").is_err());
        assert!(parse_rate("-1").is_err());
    }

    #[test]
    fn resolution_forms() {
        assert_eq!(parse_resolution("64").unwrap(), (64, 64));
        assert_eq!(parse_resolution("32x96").unwrap(), (32, 96));
        assert!(parse_resolution("50").is_err());
    }

    #[test]
    fn normalization_forms() {
        assert_eq!(parse_normalization("bbox").unwrap(), Normalization::BboxDiagonal);
        assert_eq!(parse_normalization("link:0,1").unwrap(), Normalization::ReferenceLink(0, 1));
        assert_eq!(parse_normalization("px:12.5").unwrap(), Normalization::AbsolutePixels(12.5));
        assert!(parse_normalization("link:1").is_err());
    }
}
