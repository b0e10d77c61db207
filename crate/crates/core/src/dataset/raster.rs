use crate::tensor::{Shape, Tensor};

use super::{KeypointSet, NUM_KEYPOINTS};

/// Number of mask channels: one per keypoint plus the skeleton.
pub const NUM_MASKS: usize = NUM_KEYPOINTS + 1;
pub const SKELETON_CHANNEL: usize = NUM_KEYPOINTS;

/// Distance from `(px, py)` to the segment `a`-`b`.
pub fn point_segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Pixel `(x, y)` has its centre at integer coordinates `(x, y)`.
fn for_each_pixel_near(
    h: usize,
    w: usize,
    lo: (f64, f64),
    hi: (f64, f64),
    mut f: impl FnMut(usize, usize, f64, f64),
) {
    let clampi = |v: f64, n: usize| v.max(0.0).min(n as f64 - 1.0);
    if hi.0 < 0.0 || hi.1 < 0.0 || lo.0 > (w - 1) as f64 || lo.1 > (h - 1) as f64 {
        return;
    }
    let (x0, x1) = (clampi(lo.0.floor(), w) as usize, clampi(hi.0.ceil(), w) as usize);
    let (y0, y1) = (clampi(lo.1.floor(), h) as usize, clampi(hi.1.ceil(), h) as usize);
    for y in y0..=y1 {
        for x in x0..=x1 {
            f(x, y, x as f64, y as f64);
        }
    }
}

pub(crate) fn fill_disk(plane: &mut [f32], h: usize, w: usize, cx: f64, cy: f64, radius: f64, value: f32) {
    let r2 = radius * radius;
    for_each_pixel_near(h, w, (cx - radius, cy - radius), (cx + radius, cy + radius), |x, y, px, py| {
        if (px - cx).powi(2) + (py - cy).powi(2) <= r2 {
            plane[y * w + x] = value;
        }
    });
}

pub(crate) fn fill_segment(
    plane: &mut [f32],
    h: usize,
    w: usize,
    a: (f64, f64),
    b: (f64, f64),
    half_width: f64,
    value: f32,
) {
    let lo = (a.0.min(b.0) - half_width, a.1.min(b.1) - half_width);
    let hi = (a.0.max(b.0) + half_width, a.1.max(b.1) + half_width);
    for_each_pixel_near(h, w, lo, hi, |x, y, px, py| {
        if point_segment_distance(px, py, a, b) <= half_width {
            plane[y * w + x] = value;
        }
    });
}

/// Nine binary masks: a disk of `radius_px` around each visible keypoint and
/// the union of segments of width `stroke_px` joining consecutive keypoints.
pub fn rasterize_masks(keypoints: &KeypointSet, h: usize, w: usize, radius_px: f64, stroke_px: f64) -> Tensor<f32> {
    let mut masks = Tensor::zeros(Shape::new(NUM_MASKS, h, w));
    if h == 0 || w == 0 {
        return masks;
    }
    for (c, kp) in keypoints.points.iter().enumerate() {
        if kp.visible {
            fill_disk(masks.channel_mut(c), h, w, kp.x, kp.y, radius_px, 1.0);
        }
    }
    let skel = masks.channel_mut(SKELETON_CHANNEL);
    for pair in keypoints.points.windows(2) {
        fill_segment(skel, h, w, (pair[0].x, pair[0].y), (pair[1].x, pair[1].y), stroke_px / 2.0, 1.0);
    }
    masks
}
