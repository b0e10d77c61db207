//! PCK scoring, latency benchmarking, size accounting and the pruning sweep.

mod bench;
mod report;
mod sweep;

pub use bench::{benchmark_inference, Benchmark, LatencyStats, DEFAULT_REPS, DEFAULT_WARMUP};
pub use report::{plot_svg, CSV_HEADER};
pub use sweep::{sweep, SweepConfig, SweepEvent, SweepReport, SweepRow};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{KeypointSet, Sample, NUM_KEYPOINTS};
use crate::error::{ensure, Error, Result};
use crate::network::{count_flops, load_model, Model};
use crate::postprocess::{extract_keypoints, Detection};

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Reference length that `alpha` is a fraction of.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Diagonal of the axis-aligned box around all ground-truth keypoints.
    BboxDiagonal,
    /// Ground-truth distance between two keypoints.
    ReferenceLink(usize, usize),
    /// A fixed length in pixels.
    AbsolutePixels(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PckConfig {
    pub alpha: f64,
    pub normalization: Normalization,
}

impl Default for PckConfig {
    fn default() -> Self {
        PckConfig {
            alpha: DEFAULT_ALPHA,
            normalization: Normalization::BboxDiagonal,
        }
    }
}

impl PckConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.alpha > 0.0 && self.alpha.is_finite(),
            "alpha must be positive, got {}",
            self.alpha
        );
        match self.normalization {
            Normalization::ReferenceLink(i, j) => ensure!(
                i < NUM_KEYPOINTS && j < NUM_KEYPOINTS && i != j,
                "reference link ({i}, {j}) must name two distinct keypoints"
            ),
            Normalization::AbsolutePixels(v) => {
                ensure!(v > 0.0 && v.is_finite(), "absolute length must be positive, got {v}")
            }
            Normalization::BboxDiagonal => {}
        }
        Ok(())
    }

    /// Distance threshold in pixels for one ground-truth set.
    pub fn threshold(&self, truth: &KeypointSet) -> Result<f64> {
        self.validate()?;
        let len = match self.normalization {
            Normalization::BboxDiagonal => {
                let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
                let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for p in &truth.points {
                    x0 = x0.min(p.x);
                    y0 = y0.min(p.y);
                    x1 = x1.max(p.x);
                    y1 = y1.max(p.y);
                }
                (x1 - x0).hypot(y1 - y0)
            }
            Normalization::ReferenceLink(i, j) => {
                let (a, b) = (truth.points[i], truth.points[j]);
                (a.x - b.x).hypot(a.y - b.y)
            }
            Normalization::AbsolutePixels(v) => v,
        };
        Ok(self.alpha * len)
    }
}

/// Correct and evaluated keypoint counts of one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PckCounts {
    pub correct: usize,
    pub evaluated: usize,
}

impl PckCounts {
    pub fn fraction(&self) -> Result<f64> {
        if self.evaluated == 0 {
            return Err(Error::UndefinedMetric("no visible ground-truth keypoints".into()));
        }
        Ok(self.correct as f64 / self.evaluated as f64)
    }
}

/// Invisible ground-truth keypoints are skipped; undetected predictions
/// count as wrong. A prediction is correct at distance `<= threshold`.
pub fn pck_counts(predicted: &[Detection], truth: &KeypointSet, config: &PckConfig) -> Result<PckCounts> {
    ensure!(
        predicted.len() == NUM_KEYPOINTS,
        "expected {NUM_KEYPOINTS} predictions, got {}",
        predicted.len()
    );
    let thr = config.threshold(truth)?;
    let mut counts = PckCounts::default();
    for (p, t) in predicted.iter().zip(&truth.points) {
        if !t.visible {
            continue;
        }
        counts.evaluated += 1;
        if p.detected && (p.x - t.x).hypot(p.y - t.y) <= thr {
            counts.correct += 1;
        }
    }
    Ok(counts)
}

/// Fraction of evaluable keypoints predicted within the PCK threshold.
pub fn pck(predicted: &[Detection], truth: &KeypointSet, config: &PckConfig) -> Result<f64> {
    pck_counts(predicted, truth, config)?.fraction()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Keypoint extraction settings shared by evaluation and benchmarking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub threshold: f64,
    pub distance_m: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            threshold: crate::postprocess::DEFAULT_THRESHOLD,
            distance_m: crate::postprocess::DEFAULT_DISTANCE_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckSummary {
    /// PCK of each image that had at least one visible keypoint.
    pub per_image: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Runs the model and keypoint extraction on every sample and scores the
/// predictions. Images are processed in parallel; the reduction is ordered.
pub fn evaluate_pck(
    model: &Model<f32>,
    samples: &[Sample],
    extract: &ExtractConfig,
    config: &PckConfig,
) -> Result<PckSummary> {
    config.validate()?;
    let counts: Vec<PckCounts> = samples
        .par_iter()
        .map(|s| {
            let out = model.forward(&s.image)?;
            let e = extract_keypoints(&out, extract.threshold, extract.distance_m)?;
            pck_counts(&e.detections(), &s.keypoints, config)
        })
        .collect::<Result<_>>()?;
    let per_image: Vec<f64> = counts.iter().filter_map(|c| c.fraction().ok()).collect();
    if per_image.is_empty() {
        return Err(Error::UndefinedMetric("no image has a visible keypoint".into()));
    }
    let (mean, std) = mean_std(&per_image);
    Ok(PckSummary { per_image, mean, std })
}

/// Parameter count, forward FLOPs at `h x w`, and on-disk size of a model file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounting {
    pub params: usize,
    pub flops: u64,
    pub size_bytes: u64,
}

pub fn account(path: impl AsRef<Path>, h: usize, w: usize) -> Result<Accounting> {
    let path = path.as_ref();
    let model = load_model(path)?;
    let size_bytes = std::fs::metadata(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?
        .len();
    Ok(Accounting {
        params: model.param_count(),
        flops: count_flops(model.spec(), h, w)?,
        size_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Keypoint;

    fn truth() -> KeypointSet {
        let mut points = [Keypoint {
            x: 0.0,
            y: 0.0,
            visible: true,
        }; NUM_KEYPOINTS];
        for (i, p) in points.iter_mut().enumerate() {
            p.x = 3.0 * i as f64;
            p.y = 4.0 * i as f64;
        }
        KeypointSet { points }
    }

    fn exact(t: &KeypointSet) -> Vec<Detection> {
        t.points.iter().map(|p| Some((p.x, p.y)).into()).collect()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let t = truth();
        assert_eq!(pck(&exact(&t), &t, &PckConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut t = truth();
        for p in t.points.iter_mut().skip(2) {
            p.visible = false;
        }
        let cfg = PckConfig {
            alpha: 0.5,
            normalization: Normalization::AbsolutePixels(10.0),
        };
        let mut pred = exact(&t);
        pred[1].x += 5.0;
        assert_eq!(pck(&pred, &t, &cfg).unwrap(), 1.0);
        pred[1].x += 1e-9;
        assert_eq!(pck(&pred, &t, &cfg).unwrap(), 0.5);
    }

    #[test]
    fn undetected_counts_as_wrong_and_invisible_is_skipped() {
        let mut t = truth();
        t.points[0].visible = false;
        let mut pred = exact(&t);
        pred[1] = None.into();
        pred[0] = None.into();
        let c = pck_counts(&pred, &t, &PckConfig::default()).unwrap();
        assert_eq!((c.correct, c.evaluated), (6, 7));
        for p in t.points.iter_mut() {
            p.visible = false;
        }
        assert!(matches!(pck(&pred, &t, &PckConfig::default()), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn normalization_lengths() {
        let t = truth();
        let bbox = PckConfig::default().threshold(&t).unwrap();
        assert!((bbox - 0.5 * 35.0).abs() < 1e-12);
        let link = PckConfig {
            alpha: 1.0,
            normalization: Normalization::ReferenceLink(0, 1),
        };
        assert!((link.threshold(&t).unwrap() - 5.0).abs() < 1e-12);
        let bad = PckConfig {
            alpha: 0.0,
            ..PckConfig::default()
        };
        assert!(bad.threshold(&t).is_err());
        let same = PckConfig {
            alpha: 1.0,
            normalization: Normalization::ReferenceLink(2, 2),
        };
        assert!(same.validate().is_err());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert!(mean_std(&[]).0.is_nan());
    }
}
