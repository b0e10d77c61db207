use std::collections::{BTreeSet, HashMap, VecDeque};

use fcnpose::compress::{apply_prune, f16_bits_to_f32, f32_to_f16_bits, keep_count, plan_prune, pruned_param_count};
use fcnpose::dataset::{Keypoint, KeypointSet, NUM_KEYPOINTS};
use fcnpose::layers::{conv2d_forward, maxpool2, upsample_nearest, ConvKernel};
use fcnpose::metrics::{pck, Normalization, PckConfig};
use fcnpose::network::{count_params, init_model, model_file, ModelSpec};
use fcnpose::postprocess::{expansion_cluster, Detection, Point};
use fcnpose::trainer::kfold_split;
use fcnpose::{Shape, Tensor64};
use half::f16;
use proptest::prelude::*;

/// Partition as a set of sorted member lists, independent of order.
fn partition(clusters: Vec<Vec<Point>>) -> BTreeSet<Vec<Point>> {
    clusters
        .into_iter()
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect()
}

fn brute_force_components(points: &[Point], m: f64) -> BTreeSet<Vec<Point>> {
    let n = points.len();
    let mut label = vec![usize::MAX; n];
    let mut groups = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let id = groups.len();
        let mut members = vec![points[s]];
        label[s] = id;
        let mut queue = VecDeque::from([s]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let d = ((points[i].0 - points[j].0) as f64).hypot((points[i].1 - points[j].1) as f64);
                if label[j] == usize::MAX && d <= m {
                    label[j] = id;
                    members.push(points[j]);
                    queue.push_back(j);
                }
            }
        }
        groups.push(members);
    }
    partition(groups)
}

fn distinct_points(max_n: usize, span: i32) -> impl Strategy<Value = Vec<Point>> {
    proptest::collection::btree_set((0..span, 0..span), 0..max_n).prop_map(|s| s.into_iter().collect())
}

fn keypoints(offset: (f64, f64)) -> impl Strategy<Value = KeypointSet> {
    proptest::collection::vec((0..480u32, 0..480u32, proptest::bool::weighted(0.9)), NUM_KEYPOINTS).prop_map(
        move |v| {
            let mut points = [Keypoint {
                x: 0.0,
                y: 0.0,
                visible: true,
            }; NUM_KEYPOINTS];
            for (p, (x, y, vis)) in points.iter_mut().zip(v) {
                *p = Keypoint {
                    x: x as f64 / 8.0 + offset.0,
                    y: y as f64 / 8.0 + offset.1,
                    visible: vis,
                };
            }
            points[0].visible = true;
            KeypointSet { points }
        },
    )
}

fn predictions() -> impl Strategy<Value = Vec<Detection>> {
    proptest::collection::vec(
        proptest::option::weighted(0.8, (0..480u32, 0..480u32)),
        NUM_KEYPOINTS,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|p| Detection::from(p.map(|(x, y)| (x as f64 / 8.0, y as f64 / 8.0))))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clustering_matches_brute_force(points in distinct_points(120, 30), m in prop_oneof![Just(1.0), Just(1.5), Just(2.0), Just(5.0)]) {
        let got = expansion_cluster(&points, m).unwrap();
        let total: usize = got.iter().map(|c| c.len()).sum();
        prop_assert_eq!(total, points.len());
        prop_assert_eq!(partition(got.into_iter().map(|c| c.members).collect()), brute_force_components(&points, m));
    }

    #[test]
    fn clustering_ignores_input_order(points in distinct_points(80, 20), seed in any::<u64>()) {
        let mut shuffled = points.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = partition(expansion_cluster(&points, 2.0).unwrap().into_iter().map(|c| c.members).collect());
        let b = partition(expansion_cluster(&shuffled, 2.0).unwrap().into_iter().map(|c| c.members).collect());
        prop_assert_eq!(a, b);
    }

    /// With M = 1 clusters are exactly the 4-connected regions of the mask.
    #[test]
    fn unit_distance_is_four_connected_flood_fill(points in distinct_points(150, 16)) {
        let set: HashMap<Point, usize> = points.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let mut seen = vec![false; points.len()];
        let mut regions = Vec::new();
        for s in 0..points.len() {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut region = vec![points[s]];
            let mut stack = vec![points[s]];
            while let Some((x, y)) = stack.pop() {
                for q in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
                    if let Some(&j) = set.get(&q) {
                        if !seen[j] {
                            seen[j] = true;
                            region.push(q);
                            stack.push(q);
                        }
                    }
                }
            }
            regions.push(region);
        }
        let got = expansion_cluster(&points, 1.0).unwrap();
        prop_assert_eq!(partition(got.into_iter().map(|c| c.members).collect()), partition(regions));
    }

    #[test]
    fn fp16_encode_matches_reference(bits in any::<u32>()) {
        let v = f32::from_bits(bits);
        let ours = f32_to_f16_bits(v);
        let reference = f16::from_f32(v);
        if v.is_nan() {
            prop_assert!(f16::from_bits(ours).is_nan());
            prop_assert_eq!(ours & 0x8000, reference.to_bits() & 0x8000);
        } else {
            prop_assert_eq!(ours, reference.to_bits());
        }
    }

    #[test]
    fn fp16_decode_matches_reference(bits in any::<u16>()) {
        let ours = f16_bits_to_f32(bits);
        let reference = f16::from_bits(bits).to_f32();
        if reference.is_nan() {
            prop_assert!(ours.is_nan());
        } else {
            prop_assert_eq!(ours.to_bits(), reference.to_bits());
        }
    }

    #[test]
    fn conv_is_linear_without_bias(a in -2.0..2.0f64, b in -2.0..2.0f64, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(2, 5, 6);
        let x = Tensor64::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0));
        let y = Tensor64::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0));
        let k = ConvKernel::<f64>::glorot_uniform(3, 2, &mut rng);
        let mix = Tensor64::from_fn(shape, |c, i, j| a * x.get(c, i, j) + b * y.get(c, i, j));
        let lhs = conv2d_forward(&mix, &k).unwrap();
        let (cx, cy) = (conv2d_forward(&x, &k).unwrap(), conv2d_forward(&y, &k).unwrap());
        let rhs = Tensor64::from_fn(lhs.shape(), |c, i, j| a * cx.get(c, i, j) + b * cy.get(c, i, j));
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn pool_inverts_upsample(vals in proptest::collection::vec(-5.0..5.0f64, 2 * 3 * 4)) {
        let x = Tensor64::new(Shape::new(2, 3, 4), vals).unwrap();
        for f in [2, 4] {
            let mut y = upsample_nearest(&x, f).unwrap();
            while y.height() > x.height() {
                y = maxpool2(&y).unwrap().output;
            }
            prop_assert_eq!(&y, &x);
        }
    }

    /// Coordinates are multiples of 1/8 and shifts are integers, so every
    /// difference is exact and the scores must agree bit for bit.
    #[test]
    fn pck_is_translation_invariant(
        truth in keypoints((0.0, 0.0)),
        pred in predictions(),
        dx in -500i32..500,
        dy in -500i32..500,
        alpha in 0.05..1.0f64,
    ) {
        let (dx, dy) = (dx as f64, dy as f64);
        let moved: Vec<Detection> = pred
            .iter()
            .map(|d| Detection { x: d.x + dx, y: d.y + dy, detected: d.detected })
            .collect();
        let shifted = truth.map(|x, y| (x + dx, y + dy));
        for normalization in [Normalization::BboxDiagonal, Normalization::ReferenceLink(0, 7), Normalization::AbsolutePixels(9.0)] {
            let cfg = PckConfig { alpha, normalization };
            prop_assert_eq!(pck(&pred, &truth, &cfg).unwrap(), pck(&moved, &shifted, &cfg).unwrap());
        }
    }

    #[test]
    fn pck_is_monotone_in_alpha(truth in keypoints((10.0, 10.0)), pred in predictions(), a1 in 0.01..1.0f64, a2 in 0.01..1.0f64) {
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let at = |alpha| pck(&pred, &truth, &PckConfig { alpha, normalization: Normalization::BboxDiagonal }).unwrap();
        let (p_lo, p_hi) = (at(lo), at(hi));
        prop_assert!(p_lo <= p_hi);
        prop_assert!((0.0..=1.0).contains(&p_lo) && (0.0..=1.0).contains(&p_hi));
    }

    #[test]
    fn keep_count_bounds(n in 1usize..512, r1 in 0.0..0.999f64, r2 in 0.0..0.999f64) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let (k_lo, k_hi) = (keep_count(n, lo), keep_count(n, hi));
        prop_assert!(k_hi <= k_lo);
        prop_assert!(k_hi >= 1 && k_lo <= n);
        prop_assert!(k_lo as f64 >= (1.0 - lo) * n as f64 - 1e-6);
    }

    #[test]
    fn kfold_partitions(n in 2usize..300, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let folds = kfold_split(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0u8; n];
        for f in &folds {
            prop_assert_eq!(f.train.len() + f.test.len(), n);
            for &i in &f.test {
                seen[i] += 1;
            }
            let sizes = (n / k, n.div_ceil(k));
            prop_assert!(f.test.len() == sizes.0 || f.test.len() == sizes.1);
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Pruning a random narrow model agrees with the closed-form count and
    /// keeps the output width; the model file round-trips the result.
    #[test]
    fn pruned_models_are_consistent(
        widths in proptest::collection::vec(1usize..24, 9),
        rate in 0.0..0.95f64,
        seed in any::<u64>(),
    ) {
        let mut w = widths.clone();
        w.push(9);
        let spec = ModelSpec::from_conv_widths(&w).unwrap();
        let model = init_model::<f32>(spec.clone(), seed).unwrap();
        prop_assert_eq!(model.param_count(), count_params(&spec));
        let pruned = apply_prune(&model, &plan_prune(&model, rate).unwrap()).unwrap();
        prop_assert_eq!(pruned.param_count(), pruned_param_count(3, &w, rate));
        prop_assert_eq!(pruned.spec().conv_widths().last().copied(), Some(9));
        let bytes = model_file::encode_model(&pruned).unwrap();
        prop_assert_eq!(bytes.len(), model_file::encoded_len(pruned.spec(), pruned.dtype()));
        prop_assert_eq!(model_file::decode_model(&bytes).unwrap(), pruned);
    }
}
