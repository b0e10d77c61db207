use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::network::Model;
use crate::postprocess::extract_keypoints;
use crate::tensor::Tensor;

use super::{mean_std, ExtractConfig};

pub const DEFAULT_WARMUP: usize = 5;
pub const DEFAULT_REPS: usize = 50;

/// Serializes benchmarks within the process so they never share the core.
static BENCH_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Wall-clock seconds of each measured run.
    pub samples_s: Vec<f64>,
    pub mean_s: f64,
    /// Population standard deviation.
    pub std_s: f64,
    pub fps: f64,
}

impl LatencyStats {
    pub fn from_samples(samples_s: Vec<f64>) -> Result<Self> {
        ensure!(!samples_s.is_empty(), "latency statistics need at least one run");
        ensure!(
            samples_s.iter().all(|t| t.is_finite() && *t >= 0.0),
            "latencies must be finite and non-negative"
        );
        let (mean_s, std_s) = mean_std(&samples_s);
        Ok(LatencyStats {
            samples_s,
            mean_s,
            std_s,
            fps: 1.0 / mean_s,
        })
    }
}

/// Inference-only timings and inference plus keypoint extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub inference: LatencyStats,
    pub total: LatencyStats,
}

/// Times `reps` forward passes (cycling through `images`) after `warmup`
/// untimed ones. Inference runs on the calling thread only; post-processing
/// is timed separately and added per run for the `total` figures.
pub fn benchmark_inference(
    model: &Model<f32>,
    images: &[Tensor<f32>],
    warmup: usize,
    reps: usize,
    extract: &ExtractConfig,
) -> Result<Benchmark> {
    ensure!(reps >= 1, "reps must be at least 1");
    ensure!(!images.is_empty(), "benchmark needs at least one image");
    let _guard = BENCH_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    for i in 0..warmup {
        let out = model.forward(&images[i % images.len()])?;
        std::hint::black_box(extract_keypoints(&out, extract.threshold, extract.distance_m)?);
    }
    let mut infer = Vec::with_capacity(reps);
    let mut total = Vec::with_capacity(reps);
    for i in 0..reps {
        let img = &images[i % images.len()];
        let t0 = Instant::now();
        let out = std::hint::black_box(model.forward(img)?);
        let t1 = Instant::now();
        std::hint::black_box(extract_keypoints(&out, extract.threshold, extract.distance_m)?);
        let t2 = Instant::now();
        infer.push((t1 - t0).as_secs_f64());
        total.push((t2 - t0).as_secs_f64());
    }
    Ok(Benchmark {
        inference: LatencyStats::from_samples(infer)?,
        total: LatencyStats::from_samples(total)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_fcn_pose;
    use crate::tensor::Shape;

    #[test]
    fn fps_is_reciprocal_mean() {
        let s = LatencyStats::from_samples(vec![0.1, 0.1, 0.1]).unwrap();
        assert!((s.fps - 10.0).abs() < 1e-9);
        assert!(s.std_s < 1e-12);
        assert!(LatencyStats::from_samples(vec![]).is_err());
    }

    #[test]
    fn measured_runs_exclude_warmup() {
        let m = build_fcn_pose::<f32>(0);
        let imgs = vec![Tensor::zeros(Shape::new(3, 32, 32))];
        let b = benchmark_inference(&m, &imgs, 2, 3, &ExtractConfig::default()).unwrap();
        assert_eq!(b.inference.samples_s.len(), 3);
        assert!(b.total.mean_s >= b.inference.mean_s);
        assert!((b.inference.fps * b.inference.mean_s - 1.0).abs() < 1e-9);
        assert!(benchmark_inference(&m, &imgs, 0, 0, &ExtractConfig::default()).is_err());
    }
}
