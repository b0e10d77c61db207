//! 3x3 convolution, stride 1, zero "same" padding.
//!
//! Both passes lower to matrix products over im2col blocks whose rows are
//! indexed by `(in_channel, ky, kx)` and columns by output pixel; blocks span
//! a few image rows so the buffer stays cache resident. The
//! input gradient is itself a convolution, of the upstream gradient with the
//! flipped kernel, so no col2im scatter is needed.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const KERNEL_SIZE: usize = 3;
pub const KERNEL_AREA: usize = KERNEL_SIZE * KERNEL_SIZE;

/// Filters `[out][in][3][3]` row-major plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T> {
    out_channels: usize,
    in_channels: usize,
    weights: Vec<T>,
    biases: Vec<T>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(out_channels: usize, in_channels: usize, weights: Vec<T>, biases: Vec<T>) -> Result<Self> {
        ensure!(
            weights.len() == out_channels * in_channels * KERNEL_AREA,
            "kernel {out_channels}x{in_channels}x3x3 needs {} weights, got {}",
            out_channels * in_channels * KERNEL_AREA,
            weights.len()
        );
        ensure!(
            biases.len() == out_channels,
            "kernel with {out_channels} filters needs {out_channels} biases, got {}",
            biases.len()
        );
        Ok(ConvKernel {
            out_channels,
            in_channels,
            weights,
            biases,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        ConvKernel {
            out_channels,
            in_channels,
            weights: vec![T::zero(); out_channels * in_channels * KERNEL_AREA],
            biases: vec![T::zero(); out_channels],
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot_uniform<R: Rng + ?Sized>(out_channels: usize, in_channels: usize, rng: &mut R) -> Self {
        let fan_in = (in_channels * KERNEL_AREA) as f64;
        let fan_out = (out_channels * KERNEL_AREA) as f64;
        let limit = (6.0 / (fan_in + fan_out)).sqrt();
        let weights = (0..out_channels * in_channels * KERNEL_AREA)
            .map(|_| T::from_f64_lossy(rng.random_range(-limit..limit)))
            .collect();
        ConvKernel {
            out_channels,
            in_channels,
            weights,
            biases: vec![T::zero(); out_channels],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Elements in one filter (`in_channels * 9`).
    pub fn filter_len(&self) -> usize {
        self.in_channels * KERNEL_AREA
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[T] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [T] {
        &mut self.biases
    }

    /// Weights and biases borrowed mutably at once.
    pub fn params_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.weights, &mut self.biases)
    }

    pub fn filter(&self, o: usize) -> &[T] {
        let n = self.filter_len();
        &self.weights[o * n..(o + 1) * n]
    }

    #[inline]
    pub fn weight(&self, o: usize, c: usize, ky: usize, kx: usize) -> T {
        self.weights[((o * self.in_channels + c) * KERNEL_SIZE + ky) * KERNEL_SIZE + kx]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn cast<U: Scalar>(&self) -> ConvKernel<U> {
        let conv = |v: &T| U::from_f64_lossy(v.to_f64_lossy());
        ConvKernel {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            weights: self.weights.iter().map(conv).collect(),
            biases: self.biases.iter().map(conv).collect(),
        }
    }

    /// Kernel with roles of input and output swapped and taps rotated by
    /// 180 degrees; biases are zero.
    fn flipped_transpose(&self) -> Self {
        let mut weights = vec![T::zero(); self.weights.len()];
        for o in 0..self.out_channels {
            for c in 0..self.in_channels {
                let src = (o * self.in_channels + c) * KERNEL_AREA;
                let dst = (c * self.out_channels + o) * KERNEL_AREA;
                for t in 0..KERNEL_AREA {
                    weights[dst + t] = self.weights[src + KERNEL_AREA - 1 - t];
                }
            }
        }
        ConvKernel {
            out_channels: self.in_channels,
            in_channels: self.out_channels,
            weights,
            biases: vec![T::zero(); self.in_channels],
        }
    }

    /// Keep the listed output filters and input-channel slices, in the given order.
    pub fn select(&self, outputs: &[usize], inputs: &[usize]) -> Result<Self> {
        ensure!(
            outputs.iter().all(|&o| o < self.out_channels),
            "output filter index out of range (have {})",
            self.out_channels
        );
        ensure!(
            inputs.iter().all(|&c| c < self.in_channels),
            "input channel index out of range (have {})",
            self.in_channels
        );
        let mut weights = Vec::with_capacity(outputs.len() * inputs.len() * KERNEL_AREA);
        for &o in outputs {
            for &c in inputs {
                let start = (o * self.in_channels + c) * KERNEL_AREA;
                weights.extend_from_slice(&self.weights[start..start + KERNEL_AREA]);
            }
        }
        let biases = outputs.iter().map(|&o| self.biases[o]).collect();
        Ok(ConvKernel {
            out_channels: outputs.len(),
            in_channels: inputs.len(),
            weights,
            biases,
        })
    }
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

/// Upper bound on the elements of one im2col block, sized to stay in L2.
const BLOCK_ELEMS: usize = 1 << 17;

/// Rows of output handled per im2col block.
fn block_rows(filter_len: usize, h: usize, w: usize) -> usize {
    (BLOCK_ELEMS / (filter_len * w).max(1)).clamp(1, h)
}

/// im2col of output rows `y0..y1` into `col` (`(c_in * 9) x ((y1 - y0) * w)`).
fn im2col_rows<T: Scalar>(input: &Tensor<T>, y0: usize, y1: usize, col: &mut Vec<T>) {
    let (c_in, h, w) = (input.channels(), input.height(), input.width());
    let n = (y1 - y0) * w;
    // every cell is written below, padding included, so stale values from a
    // previous block never leak through
    col.resize(c_in * KERNEL_AREA * n, T::zero());
    for c in 0..c_in {
        let src = input.channel(c);
        for ky in 0..KERNEL_SIZE {
            for kx in 0..KERNEL_SIZE {
                let row = (c * KERNEL_AREA + ky * KERNEL_SIZE + kx) * n;
                let dst = &mut col[row..row + n];
                // output x reads input x + kx - 1
                let x_lo = 1usize.saturating_sub(kx);
                let x_hi = (w + 1 - kx).min(w);
                for y in y0..y1 {
                    let yy = y as isize + ky as isize - 1;
                    let d = (y - y0) * w;
                    let line = &mut dst[d..d + w];
                    if yy < 0 || yy >= h as isize || x_lo >= x_hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let s = yy as usize * w;
                    line[..x_lo].fill(T::zero());
                    line[x_hi..].fill(T::zero());
                    line[x_lo..x_hi].copy_from_slice(&src[s + x_lo + kx - 1..s + x_hi + kx - 1]);
                }
            }
        }
    }
}

fn check_input<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<()> {
    ensure!(
        input.channels() == kernel.in_channels,
        "conv expects {} input channels, got {}",
        kernel.in_channels,
        input.channels()
    );
    Ok(())
}

/// Forward pass without the channel check.
pub(crate) fn forward_unchecked<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Tensor<T> {
    let (h, w) = (input.height(), input.width());
    let plane = h * w;
    let k = kernel.filter_len();
    let mut out = Tensor::zeros(Shape::new(kernel.out_channels, h, w));
    for (o, &b) in kernel.biases.iter().enumerate() {
        out.channel_mut(o).fill(b);
    }
    let rows = block_rows(k, h, w);
    let mut col = Vec::new();
    for y0 in (0..h).step_by(rows) {
        let y1 = (y0 + rows).min(h);
        let n = (y1 - y0) * w;
        im2col_rows(input, y0, y1, &mut col);
        T::gemm(
            kernel.out_channels,
            k,
            n,
            T::one(),
            &kernel.weights,
            (k as isize, 1),
            &col,
            (n as isize, 1),
            T::one(),
            &mut out.data_mut()[y0 * w..],
            (plane as isize, 1),
        );
    }
    out
}

/// Accumulates parameter gradients into `grad_w` / `grad_b` and, when
/// `want_input` is set, returns the input gradient.
pub(crate) fn backward_unchecked<T: Scalar>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    upstream: &Tensor<T>,
    grad_w: &mut [T],
    grad_b: &mut [T],
    want_input: bool,
) -> Option<Tensor<T>> {
    let (h, w) = (input.height(), input.width());
    let plane = h * w;
    let k = kernel.filter_len();
    for (ch, gb) in grad_b.iter_mut().enumerate() {
        *gb += upstream.channel(ch).iter().copied().sum::<T>();
    }
    // dW (o x k) += G (o x n) * col^T (n x k), block by block
    let rows = block_rows(k, h, w);
    let mut col = Vec::new();
    for y0 in (0..h).step_by(rows) {
        let y1 = (y0 + rows).min(h);
        let n = (y1 - y0) * w;
        im2col_rows(input, y0, y1, &mut col);
        T::gemm(
            kernel.out_channels,
            n,
            k,
            T::one(),
            &upstream.data()[y0 * w..],
            (plane as isize, 1),
            &col,
            (1, n as isize),
            T::one(),
            grad_w,
            (k as isize, 1),
        );
    }
    // dX is the same-padded correlation of G with the flipped, transposed kernel
    want_input.then(|| forward_unchecked(upstream, &kernel.flipped_transpose()))
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    check_input(input, kernel)?;
    Ok(forward_unchecked(input, kernel))
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    check_input(input, kernel)?;
    let expected = Shape::new(kernel.out_channels, input.height(), input.width());
    ensure!(
        upstream.shape() == expected,
        "upstream gradient shape {} does not match conv output {expected}",
        upstream.shape()
    );
    let mut weights = vec![T::zero(); kernel.weights.len()];
    let mut biases = vec![T::zero(); kernel.out_channels];
    let input_grad =
        backward_unchecked(input, kernel, upstream, &mut weights, &mut biases, true).expect("input gradient requested");
    Ok(ConvGrads {
        input: input_grad,
        weights,
        biases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct<T: Scalar>(input: &Tensor<T>, k: &ConvKernel<T>) -> Tensor<T> {
        let (h, w) = (input.height() as isize, input.width() as isize);
        Tensor::from_fn(Shape::new(k.out_channels(), h as usize, w as usize), |o, y, x| {
            let mut acc = k.biases()[o];
            for c in 0..k.in_channels() {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (yy, xx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                        if yy >= 0 && yy < h && xx >= 0 && xx < w {
                            acc += input.get(c, yy as usize, xx as usize) * k.weight(o, c, ky, kx);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut w = vec![0.0f32; 9];
        w[4] = 1.0;
        let k = ConvKernel::new(1, 1, w, vec![0.0]).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 5, 7), |_, y, x| (y * 7 + x) as f32 * 0.5 - 3.0);
        assert_eq!(conv2d_forward(&x, &k).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_window() {
        let k = ConvKernel::new(1, 1, vec![1.0f64; 9], vec![0.0]).unwrap();
        let x = Tensor::filled(Shape::new(1, 4, 4), 1.0);
        let y = conv2d_forward(&x, &k).unwrap();
        assert_eq!(y.get(0, 0, 0), 4.0);
        assert_eq!(y.get(0, 3, 3), 4.0);
        assert_eq!(y.get(0, 0, 1), 6.0);
        assert_eq!(y.get(0, 1, 1), 9.0);
        assert_eq!(y.get(0, 2, 2), 9.0);
    }

    #[test]
    fn matches_direct_summation() {
        let mut seed = 12345u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        let x = Tensor::from_fn(Shape::new(3, 6, 5), |_, _, _| next());
        let w: Vec<f64> = (0..4 * 3 * 9).map(|_| next()).collect();
        let b: Vec<f64> = (0..4).map(|_| next()).collect();
        let k = ConvKernel::new(4, 3, w, b).unwrap();
        let fast = conv2d_forward(&x, &k).unwrap();
        assert!(fast.max_abs_diff(&direct(&x, &k)).unwrap() < 1e-12);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let k = ConvKernel::<f32>::zeros(2, 3);
        let x = Tensor::zeros(Shape::new(2, 4, 4));
        assert!(conv2d_forward(&x, &k).is_err());
        let g = Tensor::zeros(Shape::new(2, 4, 4));
        assert!(conv2d_backward(&x, &k, &g).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let k = ConvKernel::new(2, 1, (0..18).map(|i| i as f32).collect(), vec![1.0, 2.0]).unwrap();
        let x = Tensor::filled(Shape::new(1, 3, 3), 0.7);
        let g = conv2d_backward(&x, &k, &Tensor::zeros(Shape::new(2, 3, 3))).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.iter().all(|&v| v == 0.0));
        assert!(g.biases.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_weight_grad_is_product() {
        let k = ConvKernel::new(1, 1, vec![0.3f64; 9], vec![0.0]).unwrap();
        let x = Tensor::filled(Shape::new(1, 1, 1), 2.5);
        let up = Tensor::filled(Shape::new(1, 1, 1), -4.0);
        let g = conv2d_backward(&x, &k, &up).unwrap();
        assert_eq!(g.weights[4], 2.5 * -4.0);
        assert_eq!(g.biases[0], -4.0);
        // every off-center tap reads padding
        assert!(g.weights.iter().enumerate().all(|(i, &v)| i == 4 || v == 0.0));
    }

    #[test]
    fn select_keeps_requested_slices() {
        let k = ConvKernel::new(3, 2, (0..54).map(|i| i as f32).collect(), vec![10.0, 11.0, 12.0]).unwrap();
        let s = k.select(&[2, 0], &[1]).unwrap();
        assert_eq!(s.out_channels(), 2);
        assert_eq!(s.in_channels(), 1);
        assert_eq!(s.filter(0), &k.filter(2)[9..18]);
        assert_eq!(s.filter(1), &k.filter(0)[9..18]);
        assert_eq!(s.biases(), &[12.0, 10.0]);
        assert!(k.select(&[3], &[0]).is_err());
    }
}
