//! Backward passes against central finite differences, in f64.

use fcnpose::layers::*;
use fcnpose::network::{init_model, Gradients, ModelSpec};
use fcnpose::{Shape, Tensor64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 20;
const STEP: f64 = 1e-6;
const REL_TOL: f64 = 1e-3;

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs()) + 1e-8
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor64 {
    Tensor64::from_fn(shape, |_, _, _| rng.random_range(lo..hi))
}

fn dot(a: &Tensor64, b: &Tensor64) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks `grad` against the central difference of `f` at every entry of `x`.
fn check_all(x: &mut [f64], grad: &[f64], mut f: impl FnMut(&[f64]) -> f64, what: &str) {
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let up = f(x);
        x[i] = orig - STEP;
        let down = f(x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        assert!(
            close(grad[i], numeric),
            "{what}[{i}]: analytic {} vs numeric {numeric}",
            grad[i]
        );
    }
}

fn random_shape(rng: &mut ChaCha8Rng, even: bool) -> Shape {
    let c = rng.random_range(1..=3);
    let mut h = rng.random_range(1..=4) * 2;
    let mut w = rng.random_range(1..=4) * 2;
    if !even {
        h -= rng.random_range(0..=1);
        w -= rng.random_range(0..=1);
    }
    Shape::new(c, h, w)
}

#[test]
fn conv_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_shape = random_shape(&mut rng, false);
        let out_c = rng.random_range(1..=3);
        let mut x = random_tensor(&mut rng, in_shape, -1.0, 1.0);
        let mut k = ConvKernel::<f64>::glorot_uniform(out_c, in_shape.channels, &mut rng);
        for b in k.biases_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        let r = random_tensor(&mut rng, Shape::new(out_c, in_shape.height, in_shape.width), -1.0, 1.0);
        let g = conv2d_backward(&x, &k, &r).unwrap();

        let kk = k.clone();
        let xs = x.shape();
        check_all(
            x.data_mut(),
            g.input.data(),
            |d| dot(&conv2d_forward(&Tensor64::new(xs, d.to_vec()).unwrap(), &kk).unwrap(), &r),
            "conv input",
        );
        let (w, b) = (k.weights().to_vec(), k.biases().to_vec());
        let mut wv = w.clone();
        check_all(
            &mut wv,
            &g.weights,
            |d| {
                let kk = ConvKernel::new(out_c, xs.channels, d.to_vec(), b.clone()).unwrap();
                dot(&conv2d_forward(&x, &kk).unwrap(), &r)
            },
            "conv weights",
        );
        let mut bv = b.clone();
        check_all(
            &mut bv,
            &g.biases,
            |d| {
                let kk = ConvKernel::new(out_c, xs.channels, w.clone(), d.to_vec()).unwrap();
                dot(&conv2d_forward(&x, &kk).unwrap(), &r)
            },
            "conv biases",
        );
    }
}

#[test]
fn maxpool_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let shape = random_shape(&mut rng, true);
        // distinct values spaced well above the FD step avoid argmax flips
        let n = shape.len();
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        for i in (1..n).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let mut x = Tensor64::new(shape, vals).unwrap();
        let pooled = maxpool2(&x).unwrap();
        let r = random_tensor(&mut rng, pooled.output.shape(), -1.0, 1.0);
        let g = maxpool2_backward(&pooled, &r).unwrap();
        check_all(
            x.data_mut(),
            g.data(),
            |d| dot(&maxpool2(&Tensor64::new(shape, d.to_vec()).unwrap()).unwrap().output, &r),
            "maxpool",
        );
    }
}

#[test]
fn upsample_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let shape = random_shape(&mut rng, false);
        let factor = if seed % 2 == 0 { 2 } else { 4 };
        let mut x = random_tensor(&mut rng, shape, -1.0, 1.0);
        let y = upsample_nearest(&x, factor).unwrap();
        let r = random_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let g = upsample_nearest_backward(&r, factor).unwrap();
        check_all(
            x.data_mut(),
            g.data(),
            |d| dot(&upsample_nearest(&Tensor64::new(shape, d.to_vec()).unwrap(), factor).unwrap(), &r),
            "upsample",
        );
    }
}

#[test]
fn activations_match_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let shape = random_shape(&mut rng, false);
        // keep ReLU inputs away from the kink
        let mut x = Tensor64::from_fn(shape, |_, _, _| {
            let v: f64 = rng.random_range(0.01..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let r = random_tensor(&mut rng, shape, -1.0, 1.0);
        let g = relu_backward(&relu(&x), &r).unwrap();
        check_all(
            x.data_mut(),
            g.data(),
            |d| dot(&relu(&Tensor64::new(shape, d.to_vec()).unwrap()), &r),
            "relu",
        );
        let g = sigmoid_backward(&sigmoid(&x), &r).unwrap();
        check_all(
            x.data_mut(),
            g.data(),
            |d| dot(&sigmoid(&Tensor64::new(shape, d.to_vec()).unwrap()), &r),
            "sigmoid",
        );
    }
}

#[test]
fn bce_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let shape = random_shape(&mut rng, false);
        let mut p = random_tensor(&mut rng, shape, 0.05, 0.95);
        let t = Tensor64::from_fn(shape, |_, _, _| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
        let (_, g) = bce_loss(&p, &t).unwrap();
        check_all(
            p.data_mut(),
            g.data(),
            |d| bce_value(&Tensor64::new(shape, d.to_vec()).unwrap(), &t).unwrap(),
            "bce",
        );
    }
}

/// Whole-network gradient (fused sigmoid + BCE path) on a narrow model.
#[test]
fn network_matches_finite_differences() {
    let spec = ModelSpec::from_conv_widths(&[4, 3, 3, 2, 2, 2, 3, 3, 4, 9]).unwrap();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let model = init_model::<f64>(spec.clone(), seed).unwrap();
        let x = random_tensor(&mut rng, Shape::new(3, 32, 32), 0.0, 1.0);
        let t = Tensor64::from_fn(Shape::new(9, 32, 32), |_, _, _| if rng.random_bool(0.2) { 1.0 } else { 0.0 });
        let mut grads = Gradients::zeros_like(&model);
        model.loss_and_accumulate(&x, &t, &mut grads).unwrap();
        // a handful of random parameters per conv layer
        for layer in 0..model.weights().kernels.len() {
            for _ in 0..3 {
                let n = model.weights().kernels[layer].weights().len();
                let i = rng.random_range(0..n);
                let loss_at = |delta: f64| {
                    let mut m = model.clone();
                    m.weights_mut().kernels[layer].weights_mut()[i] += delta;
                    bce_value(&m.forward(&x).unwrap(), &t).unwrap()
                };
                let numeric = (loss_at(STEP) - loss_at(-STEP)) / (2.0 * STEP);
                let analytic = grads.weights[layer][i];
                assert!(
                    close(analytic, numeric),
                    "seed {seed} layer {layer} weight {i}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }
}
