use crate::error::{ensure, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Output of a 2x2/stride-2 max pool together with the flat input index
/// that won each window.
#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<u32>,
    pub input_shape: Shape,
}

/// 2x2 max pool, stride 2. Ties go to the first element in scan order.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<Pooled<T>> {
    let s = input.shape();
    ensure!(
        s.height % 2 == 0 && s.width % 2 == 0,
        "maxpool2 needs even height and width, got {s}"
    );
    let (oh, ow) = (s.height / 2, s.width / 2);
    let out_shape = Shape::new(s.channels, oh, ow);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let data = input.data();
    for c in 0..s.channels {
        let base = c * s.plane();
        for y in 0..oh {
            for x in 0..ow {
                let top = base + 2 * y * s.width + 2 * x;
                let candidates = [top, top + 1, top + s.width, top + s.width + 1];
                let mut best = candidates[0];
                for &i in &candidates[1..] {
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                out.push(data[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(out_shape, out)?,
        argmax,
        input_shape: s,
    })
}

pub fn maxpool2_backward<T: Scalar>(pooled: &Pooled<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    ensure!(
        upstream.shape() == pooled.output.shape(),
        "pool upstream shape {} != output shape {}",
        upstream.shape(),
        pooled.output.shape()
    );
    let mut grad = Tensor::zeros(pooled.input_shape);
    let g = grad.data_mut();
    for (&i, &u) in pooled.argmax.iter().zip(upstream.data()) {
        g[i as usize] += u;
    }
    Ok(grad)
}
