use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::{Shape, Tensor};

use super::raster::{fill_disk, fill_segment};
use super::{Keypoint, KeypointSet, MaskStyle, Sample, NUM_KEYPOINTS};

pub const NUM_LINKS: usize = NUM_KEYPOINTS - 1;

/// Scene geometry and rendering parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    pub height: usize,
    pub width: usize,
    /// Pixel length of each of the 7 links, base first.
    pub link_lengths: Vec<f64>,
    /// Base position as a fraction of `(width, height)`.
    pub base: (f64, f64),
    /// Uniform jitter of the base position, pixels.
    pub base_jitter: f64,
    /// Heading of the first link in radians (image y axis points down, so
    /// `-pi/2` points straight up).
    pub base_angle: (f64, f64),
    /// Relative bend at each of the 6 inner joints, radians.
    pub joint_angle: (f64, f64),
    pub link_width: f64,
    pub joint_radius: f64,
    pub style: MaskStyle,
    /// Background rectangles drawn under the arm.
    pub clutter: usize,
    /// Rectangles drawn over the arm; covered keypoints become invisible.
    pub occluders: usize,
    /// Keypoints must stay this far inside the frame.
    pub margin: f64,
    pub max_attempts: usize,
}

impl ArmConfig {
    /// Arm spanning ~70% of the short side, rising from the bottom centre.
    pub fn for_resolution(height: usize, width: usize) -> Self {
        let s = height.min(width) as f64;
        let fractions = [0.11, 0.11, 0.10, 0.10, 0.10, 0.09, 0.09];
        ArmConfig {
            height,
            width,
            link_lengths: fractions.iter().map(|f| f * s).collect(),
            base: (0.5, 0.88),
            base_jitter: 0.04 * s,
            base_angle: (-FRAC_PI_2 - 0.5, -FRAC_PI_2 + 0.5),
            joint_angle: (-0.6, 0.6),
            link_width: (0.04 * s).max(1.5),
            joint_radius: (0.04 * s).max(1.5),
            style: MaskStyle::scaled(height, width),
            clutter: 4,
            occluders: 0,
            margin: 1.0,
            max_attempts: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.height > 0 && self.width > 0 && self.height % 32 == 0 && self.width % 32 == 0,
            "resolution {}x{} must be a positive multiple of 32",
            self.height,
            self.width
        );
        ensure!(
            self.link_lengths.len() == NUM_LINKS,
            "expected {NUM_LINKS} link lengths, got {}",
            self.link_lengths.len()
        );
        ensure!(
            self.link_lengths.iter().all(|l| l.is_finite() && *l >= 0.0),
            "link lengths must be finite and non-negative"
        );
        ensure!(
            self.base_angle.0 <= self.base_angle.1 && self.joint_angle.0 <= self.joint_angle.1,
            "angle ranges must be ordered"
        );
        ensure!(
            self.style.keypoint_radius > 0.0 && self.style.skeleton_stroke > 0.0,
            "mask radius and stroke must be positive"
        );
        ensure!(self.max_attempts > 0, "max_attempts must be positive");
        Ok(())
    }
}

/// Joint configuration of one scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmPose {
    /// Base keypoint, pixels.
    pub base: (f64, f64),
    pub base_angle: f64,
    pub joint_angles: [f64; NUM_LINKS - 1],
}

/// Joint positions of the chain, base first.
pub fn forward_kinematics(link_lengths: &[f64], pose: &ArmPose) -> [(f64, f64); NUM_KEYPOINTS] {
    let mut pts = [(0.0, 0.0); NUM_KEYPOINTS];
    pts[0] = pose.base;
    let mut heading = pose.base_angle;
    for i in 0..NUM_LINKS {
        if i > 0 {
            heading += pose.joint_angles[i - 1];
        }
        let (px, py) = pts[i];
        pts[i + 1] = (px + link_lengths[i] * heading.cos(), py + link_lengths[i] * heading.sin());
    }
    pts
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn sample_pose<R: Rng>(config: &ArmConfig, rng: &mut R) -> ArmPose {
    let j = config.base_jitter;
    let base = (
        config.base.0 * config.width as f64 + uniform(rng, (-j, j)),
        config.base.1 * config.height as f64 + uniform(rng, (-j, j)),
    );
    let base_angle = uniform(rng, config.base_angle);
    let mut joint_angles = [0.0; NUM_LINKS - 1];
    for a in &mut joint_angles {
        *a = uniform(rng, config.joint_angle);
    }
    ArmPose {
        base,
        base_angle,
        joint_angles,
    }
}

fn fits(config: &ArmConfig, pts: &[(f64, f64)]) -> bool {
    let m = config.margin;
    pts.iter().all(|&(x, y)| {
        x >= m && y >= m && x <= config.width as f64 - 1.0 - m && y <= config.height as f64 - 1.0 - m
    })
}

fn fill_rect(img: &mut Tensor<f32>, x0: usize, y0: usize, x1: usize, y1: usize, color: [f32; 3]) {
    for (c, &v) in color.iter().enumerate() {
        let w = img.width();
        let plane = img.channel_mut(c);
        for y in y0..y1 {
            plane[y * w + x0..y * w + x1].fill(v);
        }
    }
}

fn random_rect<R: Rng>(rng: &mut R, h: usize, w: usize, min_frac: f64, max_frac: f64) -> (usize, usize, usize, usize) {
    let s = h.min(w) as f64;
    let rw = (uniform(rng, (min_frac * s, max_frac * s)).round() as usize).clamp(1, w);
    let rh = (uniform(rng, (min_frac * s, max_frac * s)).round() as usize).clamp(1, h);
    let x0 = rng.random_range(0..=w - rw);
    let y0 = rng.random_range(0..=h - rh);
    (x0, y0, x0 + rw, y0 + rh)
}

/// Joint colour ramp so that each keypoint has a distinct appearance.
fn joint_color(i: usize) -> [f32; 3] {
    let t = i as f32 / (NUM_KEYPOINTS - 1) as f32;
    [0.15 + 0.8 * t, 0.9 - 0.6 * t, 0.95 - 0.3 * t]
}

/// Renders a fixed pose. `seed` drives background, clutter and occluders.
pub fn render_pose(config: &ArmConfig, pose: &ArmPose, seed: u64) -> Result<Sample> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = forward_kinematics(&config.link_lengths, pose);

    let bg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.45));
    let mut img = Tensor::from_fn(Shape::new(3, h, w), |c, _, _| bg[c]);
    for v in img.data_mut() {
        *v += rng.random_range(-0.04f32..0.04);
    }
    for _ in 0..config.clutter {
        let (x0, y0, x1, y1) = random_rect(&mut rng, h, w, 0.05, 0.25);
        let color: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.6));
        fill_rect(&mut img, x0, y0, x1, y1, color);
    }

    let link: [f32; 3] = std::array::from_fn(|c| [0.9f32, 0.55, 0.15][c] + rng.random_range(-0.05f32..0.05));
    for pair in pts.windows(2) {
        for (c, &v) in link.iter().enumerate() {
            fill_segment(img.channel_mut(c), h, w, pair[0], pair[1], config.link_width / 2.0, v);
        }
    }
    for (i, &(x, y)) in pts.iter().enumerate() {
        // chain ends touch a single link; a larger disc keeps them distinct
        let r = if i == 0 || i == NUM_LINKS { 1.3 * config.joint_radius } else { config.joint_radius };
        for (c, &v) in joint_color(i).iter().enumerate() {
            fill_disk(img.channel_mut(c), h, w, x, y, r, v);
        }
    }

    let mut covered = vec![false; h * w];
    for _ in 0..config.occluders {
        let (x0, y0, x1, y1) = random_rect(&mut rng, h, w, 0.1, 0.25);
        let g = rng.random_range(0.3f32..0.7);
        fill_rect(&mut img, x0, y0, x1, y1, [g, g, g]);
        for y in y0..y1 {
            covered[y * w + x0..y * w + x1].fill(true);
        }
    }

    // 8-bit grid so that a stored dataset reloads bit-identically
    for v in img.data_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }

    let mut points = [Keypoint {
        x: 0.0,
        y: 0.0,
        visible: true,
    }; NUM_KEYPOINTS];
    for (p, &(x, y)) in points.iter_mut().zip(&pts) {
        let inside = x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64;
        let hidden = inside && covered[(y.round() as usize).min(h - 1) * w + (x.round() as usize).min(w - 1)];
        *p = Keypoint {
            x,
            y,
            visible: inside && !hidden,
        };
    }
    Ok(Sample::from_parts(img, KeypointSet { points }, config.style))
}

/// Random pose rendered with random clutter. Poses that leave the frame
/// are redrawn up to `config.max_attempts` times.
pub fn gen_scene(config: &ArmConfig, seed: u64) -> Result<Sample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..config.max_attempts {
        let pose = sample_pose(config, &mut rng);
        if fits(config, &forward_kinematics(&config.link_lengths, &pose)) {
            return render_pose(config, &pose, rng.random());
        }
    }
    Err(Error::Generation {
        attempts: config.max_attempts,
    })
}
