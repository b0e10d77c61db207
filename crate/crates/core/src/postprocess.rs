//! Keypoint extraction from activation maps.
//!
//! Each keypoint channel is thresholded into a set of active pixels, the
//! pixels are grouped by expansion clustering (a point joins a cluster when
//! it lies within distance `M` of any member, repeated until no point is
//! added), and the centroid of the most populous cluster is the keypoint.
//!
//! Expansion clustering yields exactly the connected components of the
//! graph with an edge between every pair at distance `<= M`. We compute
//! those components with a union-find over a uniform grid of cell size
//! `ceil(M)`, which only compares points in neighbouring cells. With the
//! default `M = 1` diagonal neighbours (distance `sqrt 2`) are *not*
//! joined, so clusters are 4-connected pixel regions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{NUM_KEYPOINTS, SKELETON_CHANNEL};
use crate::error::{ensure, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_DISTANCE_M: f64 = 1.0;

pub type Point = (i32, i32);

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: Vec<Point>,
    pub centroid: (f64, f64),
}

impl Cluster {
    fn from_members(members: Vec<Point>) -> Self {
        let n = members.len() as f64;
        let (sx, sy) = members
            .iter()
            .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x as f64, sy + y as f64));
        Cluster {
            members,
            centroid: (sx / n, sy / n),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Pixels whose activation is `>= threshold`, in row-major order.
pub fn binarize<T: Scalar>(plane: &[T], width: usize, threshold: f64) -> Result<Vec<Point>> {
    ensure!(
        threshold > 0.0 && threshold < 1.0,
        "threshold must lie in (0, 1), got {threshold}"
    );
    ensure!(width > 0 && plane.len() % width == 0, "plane is not a whole number of rows");
    Ok(plane
        .iter()
        .enumerate()
        .filter(|(_, v)| v.to_f64_lossy() >= threshold)
        .map(|(i, _)| ((i % width) as i32, (i / width) as i32))
        .collect())
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Partitions distinct points into clusters whose members are chained by
/// steps of Euclidean length `<= m`.
///
/// Clusters are ordered by their first point in input order, and members
/// keep input order.
pub fn expansion_cluster(points: &[Point], m: f64) -> Result<Vec<Cluster>> {
    ensure!(m > 0.0 && m.is_finite(), "distance M must be positive, got {m}");
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let cell = m.ceil().max(1.0) as i64;
    let key = |(x, y): Point| ((x as i64).div_euclid(cell), (y as i64).div_euclid(cell));
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let m2 = m * m;
    let mut sets = DisjointSet::new(points.len());
    for (i, &(x, y)) in points.iter().enumerate() {
        let (cx, cy) = key((x, y));
        for dy in -1..=1 {
            for dx in -1..=1 {
                let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if j <= i {
                        continue;
                    }
                    let (qx, qy) = points[j];
                    let d2 = (qx as f64 - x as f64).powi(2) + (qy as f64 - y as f64).powi(2);
                    if d2 <= m2 {
                        sets.union(i, j);
                    }
                }
            }
        }
    }
    let mut slot_of_root: HashMap<usize, usize> = HashMap::new();
    let mut groups: Vec<Vec<Point>> = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        let root = sets.find(i);
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(p);
    }
    Ok(groups.into_iter().map(Cluster::from_members).collect())
}

/// Centroid of the largest cluster. Equal sizes resolve to the smaller
/// centroid `y`, then the smaller `x`.
pub fn select_keypoint(clusters: &[Cluster]) -> Option<(f64, f64)> {
    clusters
        .iter()
        .min_by(|a, b| {
            b.len()
                .cmp(&a.len())
                .then(a.centroid.1.total_cmp(&b.centroid.1))
                .then(a.centroid.0.total_cmp(&b.centroid.0))
        })
        .map(|c| c.centroid)
}

/// One exported keypoint; `x`/`y` are meaningless when not detected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub detected: bool,
}

impl From<Option<(f64, f64)>> for Detection {
    fn from(p: Option<(f64, f64)>) -> Self {
        match p {
            Some((x, y)) => Detection { x, y, detected: true },
            None => Detection {
                x: 0.0,
                y: 0.0,
                detected: false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// `None` means the channel produced no cluster.
    pub keypoints: [Option<(f64, f64)>; NUM_KEYPOINTS],
    /// Binarized skeleton channel, row-major.
    pub skeleton: Vec<bool>,
}

impl Extraction {
    pub fn detections(&self) -> [Detection; NUM_KEYPOINTS] {
        self.keypoints.map(Detection::from)
    }
}

/// Runs binarize, clustering and selection on the 8 keypoint channels of
/// a `(9, H, W)` network output.
pub fn extract_keypoints<T: Scalar>(output: &Tensor<T>, threshold: f64, m: f64) -> Result<Extraction> {
    ensure!(
        output.channels() == NUM_KEYPOINTS + 1,
        "expected {} output channels, got {}",
        NUM_KEYPOINTS + 1,
        output.channels()
    );
    let w = output.width();
    let mut keypoints = [None; NUM_KEYPOINTS];
    for (c, slot) in keypoints.iter_mut().enumerate() {
        let pts = binarize(output.channel(c), w, threshold)?;
        *slot = select_keypoint(&expansion_cluster(&pts, m)?);
    }
    let skeleton = output
        .channel(SKELETON_CHANNEL)
        .iter()
        .map(|v| v.to_f64_lossy() >= threshold)
        .collect();
    Ok(Extraction { keypoints, skeleton })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn binarize_boundaries() {
        let plane = vec![0.01f32; 16];
        assert!(binarize(&plane, 4, 0.5).unwrap().is_empty());
        let mut plane = vec![0.0f64; 12];
        plane[5] = 0.9;
        plane[7] = 0.5;
        assert_eq!(binarize(&plane, 4, 0.5).unwrap(), vec![(1, 1), (3, 1)]);
        assert!(binarize(&plane, 4, 1.0).is_err());
        assert!(binarize(&plane, 4, 0.0).is_err());
    }

    #[test]
    fn transitive_chain_forms_one_cluster() {
        let c = expansion_cluster(&[(0, 0), (0, 1), (1, 1)], 1.0).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c[0].centroid.0 - 1.0 / 3.0).abs() < 1e-12);
        assert!((c[0].centroid.1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn far_points_stay_apart() {
        assert!(expansion_cluster(&[], 1.0).unwrap().is_empty());
        let c = expansion_cluster(&[(0, 0), (10, 10)], 1.0).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].centroid, (0.0, 0.0));
        assert_eq!(c[1].centroid, (10.0, 10.0));
        assert!(expansion_cluster(&[(0, 0)], 0.0).is_err());
    }

    #[test]
    fn diagonal_split_at_unit_distance() {
        let c = expansion_cluster(&[(0, 0), (1, 1)], 1.0).unwrap();
        assert_eq!(c.len(), 2);
        let c = expansion_cluster(&[(0, 0), (1, 1)], 1.5).unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn negative_coordinates_bucket_correctly() {
        let c = expansion_cluster(&[(-1, 0), (0, 0), (-3, -3), (-2, -3)], 1.0).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn largest_cluster_wins_with_tie_rule() {
        let big = Cluster::from_members(vec![(5, 5), (5, 6), (6, 5), (6, 6), (7, 6)]);
        let small = Cluster::from_members(vec![(0, 0), (0, 1)]);
        assert_eq!(select_keypoint(&[small.clone(), big.clone()]), Some(big.centroid));
        assert_eq!(select_keypoint(&[]), None);
        let a = Cluster::from_members(vec![(9, 2), (10, 2)]);
        let b = Cluster::from_members(vec![(1, 4), (2, 4)]);
        let c = Cluster::from_members(vec![(3, 2), (4, 2)]);
        assert_eq!(select_keypoint(&[a, b, c.clone()]), Some(c.centroid));
    }

    #[test]
    fn extraction_ignores_far_noise() {
        let mut out = Tensor::<f32>::zeros(Shape::new(9, 32, 32));
        let masks = crate::dataset::rasterize_masks(
            &crate::dataset::KeypointSet {
                points: [crate::dataset::Keypoint {
                    x: 12.0,
                    y: 20.0,
                    visible: true,
                }; NUM_KEYPOINTS],
            },
            32,
            32,
            6.0,
            2.0,
        );
        out.data_mut().copy_from_slice(masks.data());
        out.set(0, 0, 31, 0.99);
        let e = extract_keypoints(&out, 0.5, 1.0).unwrap();
        for kp in e.keypoints {
            let (x, y) = kp.unwrap();
            assert!((x - 12.0).abs() < 1e-9 && (y - 20.0).abs() < 1e-9);
        }
        let all_zero = extract_keypoints(&Tensor::<f32>::zeros(Shape::new(9, 8, 8)), 0.5, 1.0).unwrap();
        assert!(all_zero.keypoints.iter().all(Option::is_none));
        assert!(all_zero.skeleton.iter().all(|&b| !b));
        assert!(extract_keypoints(&Tensor::<f32>::zeros(Shape::new(3, 8, 8)), 0.5, 1.0).is_err());
    }
}
