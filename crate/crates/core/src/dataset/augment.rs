use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Rotation drawn uniformly from `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    /// Translation drawn uniformly from `±max_shift_px` per axis.
    pub max_shift_px: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            max_rotation_deg: 20.0,
            max_shift_px: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentKind {
    Rotation,
    Padding,
    Both,
}

/// Rotation about the image centre `((W-1)/2, (H-1)/2)` followed by a
/// translation: `p' = R(angle) (p - c) + c + shift`.
///
/// With the y axis pointing down, a positive angle turns `+x` towards `+y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub angle_rad: f64,
    pub shift: (f64, f64),
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        angle_rad: 0.0,
        shift: (0.0, 0.0),
    };

    pub fn apply(&self, x: f64, y: f64, h: usize, w: usize) -> (f64, f64) {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (s, c) = self.angle_rad.sin_cos();
        let (dx, dy) = (x - cx, y - cy);
        (cx + c * dx - s * dy + self.shift.0, cy + s * dx + c * dy + self.shift.1)
    }

    pub fn invert(&self, x: f64, y: f64, h: usize, w: usize) -> (f64, f64) {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (s, c) = self.angle_rad.sin_cos();
        let (dx, dy) = (x - self.shift.0 - cx, y - self.shift.1 - cy);
        (cx + c * dx + s * dy, cy - s * dx + c * dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Augmented {
    Accepted(Sample),
    /// A keypoint left the frame.
    Rejected,
}

/// Warps the image (nearest neighbour, zero fill), moves the keypoints with
/// the same map and re-rasterizes the masks. No frame check.
pub fn apply_transform(sample: &Sample, t: &Transform) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    let mut img = Tensor::zeros(sample.image.shape());
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = t.invert(x as f64, y as f64, h, w);
            let (sx, sy) = (sx.round(), sy.round());
            if sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64 {
                for c in 0..sample.image.channels() {
                    img.set(c, y, x, sample.image.get(c, sy as usize, sx as usize));
                }
            }
        }
    }
    let keypoints = sample.keypoints.map(|x, y| t.apply(x, y, h, w));
    Sample::from_parts(img, keypoints, sample.style)
}

/// Picks one of rotation / padding / both uniformly, draws its parameters
/// and applies it. Samples whose keypoints would leave the frame are
/// rejected.
pub fn augment(sample: &Sample, seed: u64, params: &AugmentParams) -> Augmented {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = match rng.random_range(0..3) {
        0 => AugmentKind::Rotation,
        1 => AugmentKind::Padding,
        _ => AugmentKind::Both,
    };
    let sym = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let mut t = Transform::IDENTITY;
    if matches!(kind, AugmentKind::Rotation | AugmentKind::Both) {
        t.angle_rad = sym(&mut rng, params.max_rotation_deg).to_radians();
    }
    if matches!(kind, AugmentKind::Padding | AugmentKind::Both) {
        t.shift = (sym(&mut rng, params.max_shift_px), sym(&mut rng, params.max_shift_px));
    }
    let moved = sample.keypoints.map(|x, y| t.apply(x, y, sample.height(), sample.width()));
    if !moved.all_inside(sample.height(), sample.width()) {
        return Augmented::Rejected;
    }
    Augmented::Accepted(apply_transform(sample, &t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_scene, rasterize_masks, ArmConfig};

    #[test]
    fn identity_changes_nothing() {
        let s = gen_scene(&ArmConfig::for_resolution(64, 64), 5).unwrap();
        let out = apply_transform(&s, &Transform::IDENTITY);
        for (a, b) in out.keypoints.points.iter().zip(&s.keypoints.points) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
        assert_eq!(out.image, s.image);
        assert_eq!(out.masks, s.masks);
    }

    #[test]
    fn quarter_turn_convention() {
        let t = Transform {
            angle_rad: std::f64::consts::FRAC_PI_2,
            shift: (0.0, 0.0),
        };
        let (h, w) = (64, 64);
        let (cx, cy) = (31.5, 31.5);
        let (x, y) = t.apply(cx + 10.0, cy, h, w);
        assert!((x - cx).abs() < 1e-9 && (y - (cy + 10.0)).abs() < 1e-9);
        let (bx, by) = t.invert(x, y, h, w);
        assert!((bx - cx - 10.0).abs() < 1e-9 && (by - cy).abs() < 1e-9);
    }

    #[test]
    fn shift_out_of_frame_is_rejected() {
        let s = gen_scene(&ArmConfig::for_resolution(64, 64), 2).unwrap();
        let params = AugmentParams {
            max_rotation_deg: 0.0,
            max_shift_px: 500.0,
        };
        let rejected = (0..20).filter(|&k| augment(&s, k, &params) == Augmented::Rejected).count();
        // only pure rotations (here: zero rotation) survive
        assert!(rejected > 0);
        for k in 0..20 {
            if let Augmented::Accepted(a) = augment(&s, k, &params) {
                assert!(a.keypoints.all_inside(64, 64));
            }
        }
    }

    #[test]
    fn masks_follow_points() {
        let s = gen_scene(&ArmConfig::for_resolution(64, 64), 8).unwrap();
        let params = AugmentParams::default();
        for k in 0..10 {
            if let Augmented::Accepted(a) = augment(&s, k, &params) {
                let direct = rasterize_masks(
                    &a.keypoints,
                    64,
                    64,
                    a.style.keypoint_radius,
                    a.style.skeleton_stroke,
                );
                assert_eq!(a.masks, direct);
            }
        }
    }
}
