use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compress::{apply_prune, plan_prune, quantize_model};
use crate::dataset::Dataset;
use crate::error::{ensure, Error, Result};
use crate::network::{count_flops, model_file::encoded_len, save_model, Model};
use crate::trainer::{retrain_after_prune, EpochReport, TrainConfig, TrainHistory};

use super::{benchmark_inference, evaluate_pck, report, ExtractConfig, PckConfig, DEFAULT_REPS, DEFAULT_WARMUP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Pruning rates in `[0, 1)`. Rate 0 is always evaluated.
    pub rates: Vec<f64>,
    pub retrain: TrainConfig,
    /// Quantize each model to FP16 after retraining.
    pub quantize: bool,
    pub pck: PckConfig,
    pub extract: ExtractConfig,
    pub warmup: usize,
    pub reps: usize,
    /// Validation images cycled through by the benchmark.
    pub bench_images: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            rates: vec![0.0, 0.3, 0.5, 0.7, 0.9],
            retrain: TrainConfig::retrain(0),
            quantize: false,
            pck: PckConfig::default(),
            extract: ExtractConfig::default(),
            warmup: DEFAULT_WARMUP,
            reps: DEFAULT_REPS,
            bench_images: 10,
        }
    }
}

impl SweepConfig {
    /// Sorted, deduplicated rates with 0 prepended when absent.
    pub fn resolved_rates(&self) -> Result<Vec<f64>> {
        for &r in &self.rates {
            ensure!((0.0..1.0).contains(&r), "pruning rate {r} is outside [0, 1)");
        }
        let mut rates = self.rates.clone();
        rates.push(0.0);
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        Ok(rates)
    }
}

/// One line of the report. `rate` is a fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub pck_mean: f64,
    pub pck_std: f64,
    pub infer_ms_mean: f64,
    pub infer_ms_std: f64,
    pub fps_infer: f64,
    pub fps_total: f64,
    pub params: usize,
    pub flops: u64,
    pub size_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    /// Ordered by rate, starting with the rate-0 baseline.
    pub rows: Vec<SweepRow>,
    /// Evaluated model per row.
    pub models: Vec<Model<f32>>,
    /// Retraining history per row; `None` for the baseline.
    pub histories: Vec<Option<TrainHistory>>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        report::to_csv(&self.rows)
    }

    pub fn to_svg(&self) -> String {
        report::plot_svg(&self.rows)
    }

    /// Writes `sweep.csv`, `sweep.svg`, one model file per rate and the
    /// retraining curves into an existing directory.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let write = |name: String, data: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, data).map_err(|e| Error::io(format!("writing {}", p.display()), e))
        };
        write("sweep.csv".into(), self.to_csv().as_bytes())?;
        write("sweep.svg".into(), self.to_svg().as_bytes())?;
        for ((row, model), hist) in self.rows.iter().zip(&self.models).zip(&self.histories) {
            let tag = (row.rate * 100.0).round() as u32;
            save_model(model, dir.join(format!("model_r{tag:02}.fcnp")))?;
            if let Some(h) = hist {
                write(format!("retrain_r{tag:02}.csv"), h.to_csv().as_bytes())?;
            }
        }
        Ok(())
    }
}

/// Progress notifications from [`sweep`].
#[derive(Debug, Clone)]
pub enum SweepEvent<'a> {
    RateStarted { rate: f64, params: usize },
    Epoch { rate: f64, report: &'a EpochReport },
    RateFinished { row: &'a SweepRow },
}

/// For each rate: prune the trained baseline, retrain, optionally quantize,
/// then score PCK on the validation split, benchmark and account.
pub fn sweep(
    baseline: &Model<f32>,
    dataset: &Dataset,
    config: &SweepConfig,
    mut progress: impl FnMut(SweepEvent<'_>),
) -> Result<SweepReport> {
    let rates = config.resolved_rates()?;
    ensure!(!dataset.val.is_empty(), "sweep needs a validation split");
    let (h, w) = (dataset.val[0].height(), dataset.val[0].width());
    let bench: Vec<_> = dataset
        .val
        .iter()
        .take(config.bench_images.max(1))
        .map(|s| s.image.clone())
        .collect();

    let mut report = SweepReport {
        rows: Vec::new(),
        models: Vec::new(),
        histories: Vec::new(),
    };
    for rate in rates {
        let at_rate = |e: Error| Error::AtRate {
            rate,
            source: Box::new(e),
        };
        let (model, hist) = (|| {
            if rate == 0.0 {
                return Ok((baseline.clone(), None));
            }
            let pruned = apply_prune(baseline, &plan_prune(baseline, rate)?)?;
            progress(SweepEvent::RateStarted {
                rate,
                params: pruned.param_count(),
            });
            let (m, h) = retrain_after_prune(&pruned, &dataset.train, &dataset.val, &config.retrain, |r| {
                progress(SweepEvent::Epoch { rate, report: r })
            })?;
            Ok((m, Some(h)))
        })()
        .map_err(at_rate)?;
        let model = if config.quantize {
            quantize_model(&model).map_err(at_rate)?
        } else {
            model
        };
        let pck = evaluate_pck(&model, &dataset.val, &config.extract, &config.pck).map_err(at_rate)?;
        let b = benchmark_inference(&model, &bench, config.warmup, config.reps, &config.extract).map_err(at_rate)?;
        let row = SweepRow {
            rate,
            pck_mean: pck.mean,
            pck_std: pck.std,
            infer_ms_mean: b.inference.mean_s * 1e3,
            infer_ms_std: b.inference.std_s * 1e3,
            fps_infer: b.inference.fps,
            fps_total: b.total.fps,
            params: model.param_count(),
            flops: count_flops(model.spec(), h, w).map_err(at_rate)?,
            size_bytes: encoded_len(model.spec(), model.dtype()) as u64,
        };
        progress(SweepEvent::RateFinished { row: &row });
        report.rows.push(row);
        report.models.push(model);
        report.histories.push(hist);
    }
    Ok(report)
}
