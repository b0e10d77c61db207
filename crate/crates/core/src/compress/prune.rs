//! L1-norm filter pruning with channel propagation.
//!
//! Each filter of a hidden convolution is scored by the mean absolute value
//! of its weights; the lowest-scoring filters are removed together with the
//! matching input-channel slices of the next convolution. Pooling and
//! upsampling layers pass channel identity through unchanged. The output
//! convolution is never pruned.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::network::{Dtype, LayerKind, Model, ModelSpec, ModelWeights};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterScore {
    /// Index among the model's convolutions.
    pub layer: usize,
    pub filter: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub conv_index: usize,
    pub original_filters: usize,
    /// Ascending, unique.
    pub kept: Vec<usize>,
}

/// Kept filters for every hidden convolution at one pruning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub rate: f64,
    pub layers: Vec<LayerPlan>,
}

impl PruningPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&s)
    }

    pub fn kept_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.kept.len()).collect()
    }
}

/// Filters kept out of `n` at `rate`: `ceil((1 - rate) * n)`.
pub fn keep_count(n: usize, rate: f64) -> usize {
    // the tolerance absorbs representation error in e.g. (1 - 0.5) * 8
    let exact = (1.0 - rate) * n as f64;
    ((exact - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Closed-form parameter count after pruning a plain conv chain with the
/// given filter counts (last entry is the unpruned output layer), without
/// building a model.
pub fn pruned_param_count(input_channels: usize, conv_widths: &[usize], rate: f64) -> usize {
    let last = conv_widths.len().saturating_sub(1);
    let mut prev = input_channels;
    let mut total = 0;
    for (i, &w) in conv_widths.iter().enumerate() {
        let kept = if i == last { w } else { keep_count(w, rate) };
        total += kept * prev * 9 + kept;
        prev = kept;
    }
    total
}

fn check_rate(rate: f64) -> Result<()> {
    ensure!((0.0..1.0).contains(&rate), "pruning rate {rate} outside [0, 1)");
    Ok(())
}

/// Normalised L1 score of every filter of every conv (biases excluded).
pub fn score_filters<T: Scalar>(weights: &ModelWeights<T>) -> Result<Vec<FilterScore>> {
    ensure!(weights.dtype == Dtype::Fp32, "filter scoring expects FP32 weights");
    let mut out = Vec::new();
    for (layer, k) in weights.kernels.iter().enumerate() {
        let len = k.filter_len() as f64;
        for filter in 0..k.out_channels() {
            let l1: f64 = k.filter(filter).iter().map(|w| w.to_f64_lossy().abs()).sum();
            out.push(FilterScore {
                layer,
                filter,
                score: l1 / len,
            });
        }
    }
    Ok(out)
}

/// Ranks filters per hidden conv and keeps the `keep_count` best; ties go
/// to the lower index.
pub fn plan_prune<T: Scalar>(model: &Model<T>, rate: f64) -> Result<PruningPlan> {
    check_rate(rate)?;
    let scores = score_filters(model.weights())?;
    let kernels = &model.weights().kernels;
    let hidden = kernels.len().saturating_sub(1);
    let mut layers = Vec::with_capacity(hidden);
    for (conv_index, k) in kernels.iter().enumerate().take(hidden) {
        let n = k.out_channels();
        let mut ranked: Vec<&FilterScore> = scores.iter().filter(|s| s.layer == conv_index).collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.filter.cmp(&b.filter)));
        let mut kept: Vec<usize> = ranked.iter().take(keep_count(n, rate)).map(|s| s.filter).collect();
        kept.sort_unstable();
        layers.push(LayerPlan {
            conv_index,
            original_filters: n,
            kept,
        });
    }
    Ok(PruningPlan { rate, layers })
}

fn check_plan(spec: &ModelSpec, plan: &PruningPlan) -> Result<()> {
    let widths = spec.conv_widths();
    ensure!(
        plan.layers.len() + 1 == widths.len(),
        "plan covers {} convs, model has {} hidden convs",
        plan.layers.len(),
        widths.len().saturating_sub(1)
    );
    for (i, lp) in plan.layers.iter().enumerate() {
        ensure!(lp.conv_index == i, "plan entry {i} names conv {}", lp.conv_index);
        ensure!(
            lp.original_filters == widths[i],
            "plan expects conv {i} to have {} filters, model has {}",
            lp.original_filters,
            widths[i]
        );
        ensure!(!lp.kept.is_empty(), "plan removes every filter of conv {i}");
        ensure!(
            lp.kept.windows(2).all(|w| w[0] < w[1]),
            "kept indices of conv {i} are not strictly ascending"
        );
        ensure!(
            lp.kept.iter().all(|&f| f < widths[i]),
            "kept index out of range in conv {i}"
        );
    }
    Ok(())
}

/// Layer graph after pruning, without touching any weights.
pub fn prune_spec(spec: &ModelSpec, plan: &PruningPlan) -> Result<ModelSpec> {
    check_plan(spec, plan)?;
    let mut layers = Vec::with_capacity(spec.layers().len());
    let mut channels = spec.input_channels();
    let mut conv = 0;
    for l in spec.layers() {
        let mut l = *l;
        l.in_channels = channels;
        match l.kind {
            LayerKind::Conv => {
                if let Some(lp) = plan.layers.get(conv) {
                    l.out_channels = lp.kept.len();
                }
                conv += 1;
            }
            LayerKind::MaxPool | LayerKind::Upsample => l.out_channels = channels,
        }
        channels = l.out_channels;
        layers.push(l);
    }
    ModelSpec::new(layers)
}

/// Physically removes pruned filters, their biases and the downstream
/// input-channel slices.
pub fn apply_prune<T: Scalar>(model: &Model<T>, plan: &PruningPlan) -> Result<Model<T>> {
    let spec = prune_spec(model.spec(), plan)?;
    let kernels = &model.weights().kernels;
    let all = |n: usize| (0..n).collect::<Vec<_>>();
    let mut pruned = Vec::with_capacity(kernels.len());
    for (i, k) in kernels.iter().enumerate() {
        let outputs = plan.layers.get(i).map_or_else(|| all(k.out_channels()), |lp| lp.kept.clone());
        let inputs = if i == 0 {
            all(k.in_channels())
        } else {
            plan.layers[i - 1].kept.clone()
        };
        pruned.push(k.select(&outputs, &inputs)?);
    }
    Model::new(
        spec,
        ModelWeights {
            dtype: model.dtype(),
            kernels: pruned,
        },
    )
}
