//! Synthetic articulated-arm dataset.
//!
//! Scenes show a 7-link planar kinematic chain over a cluttered background.
//! The 8 joint positions are the keypoints; masks are always rasterized
//! from keypoints, never warped as images.

mod augment;
pub mod io;
mod raster;
mod scene;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

pub use augment::{apply_transform, augment, AugmentKind, AugmentParams, Augmented, Transform};
pub use raster::{point_segment_distance, rasterize_masks, NUM_MASKS, SKELETON_CHANNEL};
pub use scene::{forward_kinematics, gen_scene, render_pose, ArmConfig, ArmPose, NUM_LINKS};

pub const NUM_KEYPOINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub points: [Keypoint; NUM_KEYPOINTS],
}

impl KeypointSet {
    pub fn all_inside(&self, h: usize, w: usize) -> bool {
        self.points.iter().all(|p| {
            p.x >= 0.0 && p.y >= 0.0 && p.x <= (w as f64 - 1.0) && p.y <= (h as f64 - 1.0)
        })
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut out = *self;
        for p in &mut out.points {
            (p.x, p.y) = f(p.x, p.y);
        }
        out
    }
}

/// Annotation geometry used to rasterize masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskStyle {
    pub keypoint_radius: f64,
    pub skeleton_stroke: f64,
}

impl MaskStyle {
    /// Radius 6 px and stroke 30 px at a 1080-pixel short side, scaled
    /// linearly to `min(h, w)` and floored at 2 px.
    pub fn scaled(h: usize, w: usize) -> Self {
        let s = h.min(w) as f64 / 1080.0;
        MaskStyle {
            keypoint_radius: (6.0 * s).max(2.0),
            skeleton_stroke: (30.0 * s).max(2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(3, H, W)`, values in `[0, 1]` on the 8-bit grid.
    pub image: Tensor<f32>,
    pub keypoints: KeypointSet,
    /// `(9, H, W)`, values in `{0, 1}`.
    pub masks: Tensor<f32>,
    pub style: MaskStyle,
}

impl Sample {
    pub fn from_parts(image: Tensor<f32>, keypoints: KeypointSet, style: MaskStyle) -> Self {
        let masks = rasterize_masks(
            &keypoints,
            image.height(),
            image.width(),
            style.keypoint_radius,
            style.skeleton_stroke,
        );
        Sample {
            image,
            keypoints,
            masks,
            style,
        }
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// Derives an independent seed for a sub-stream. SplitMix64 finaliser.
pub fn child_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SCENE: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_AUGMENT: u64 = 3;
const AUGMENT_ATTEMPTS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub n_base: usize,
    pub val_fraction: f64,
    pub augment_per_image: usize,
    pub augment: AugmentParams,
    pub seed: u64,
}

/// Generates `n_base` scenes, splits them, then augments the training split
/// only. Each training image contributes itself plus `augment_per_image`
/// accepted augmentations; rejected draws are resampled.
pub fn build_dataset(config: &ArmConfig, params: &DatasetParams) -> Result<Dataset> {
    ensure!(
        params.val_fraction > 0.0 && params.val_fraction < 1.0,
        "val_fraction must lie in (0, 1), got {}",
        params.val_fraction
    );
    ensure!(params.n_base >= 2, "need at least two base scenes");
    config.validate()?;
    let n_val = ((params.n_base as f64 * params.val_fraction).round() as usize).clamp(1, params.n_base - 1);

    let base: Vec<Sample> = (0..params.n_base)
        .into_par_iter()
        .map(|i| gen_scene(config, child_seed(params.seed, STREAM_SCENE, i as u64)))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..params.n_base).collect();
    {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(child_seed(params.seed, STREAM_SPLIT, 0));
        order.shuffle(&mut rng);
    }
    let mut is_val = vec![false; params.n_base];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }

    let val = base
        .iter()
        .zip(&is_val)
        .filter(|(_, &v)| v)
        .map(|(s, _)| s.clone())
        .collect();
    let train_base: Vec<(usize, &Sample)> = base.iter().enumerate().filter(|(i, _)| !is_val[*i]).collect();
    let train = train_base
        .par_iter()
        .map(|&(i, s)| {
            let mut group = Vec::with_capacity(1 + params.augment_per_image);
            group.push(s.clone());
            for k in 0..params.augment_per_image {
                group.push(augment_until_accepted(s, i, k, params));
            }
            group
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(Dataset { train, val })
}

fn augment_until_accepted(sample: &Sample, base: usize, k: usize, params: &DatasetParams) -> Sample {
    let stream = child_seed(params.seed, STREAM_AUGMENT, base as u64);
    for attempt in 0..AUGMENT_ATTEMPTS {
        let seed = child_seed(stream, k as u64, attempt);
        if let Augmented::Accepted(s) = augment(sample, seed, &params.augment) {
            return s;
        }
    }
    // every draw pushed the arm out of frame; the identity map never does
    sample.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn style_scaling() {
        let s = MaskStyle::scaled(1080, 1920);
        assert_eq!(s.keypoint_radius, 6.0);
        assert_eq!(s.skeleton_stroke, 30.0);
        let s = MaskStyle::scaled(64, 64);
        assert_eq!(s.keypoint_radius, 2.0);
        assert_eq!(s.skeleton_stroke, 2.0);
        let s = MaskStyle::scaled(224, 224);
        assert!((s.skeleton_stroke - 30.0 * 224.0 / 1080.0).abs() < 1e-12);
    }

    #[test]
    fn child_seeds_differ() {
        let a = child_seed(1, 1, 0);
        assert_ne!(a, child_seed(1, 1, 1));
        assert_ne!(a, child_seed(1, 2, 0));
        assert_ne!(a, child_seed(2, 1, 0));
        assert_eq!(a, child_seed(1, 1, 0));
    }
}
