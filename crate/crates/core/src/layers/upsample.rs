use crate::error::{ensure, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const SUPPORTED_FACTORS: [usize; 2] = [2, 4];

fn check_factor(factor: usize) -> Result<()> {
    ensure!(
        SUPPORTED_FACTORS.contains(&factor),
        "unsupported upsample factor {factor}"
    );
    Ok(())
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    check_factor(factor)?;
    let s = input.shape();
    let (oh, ow) = (s.height * factor, s.width * factor);
    let mut out = Tensor::zeros(Shape::new(s.channels, oh, ow));
    for c in 0..s.channels {
        let src = input.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..oh {
            let srow = &src[(y / factor) * s.width..(y / factor + 1) * s.width];
            let drow = &mut dst[y * ow..(y + 1) * ow];
            for (x, d) in drow.iter_mut().enumerate() {
                *d = srow[x / factor];
            }
        }
    }
    Ok(out)
}

/// Sums the upstream gradient over each replicated block.
pub fn upsample_nearest_backward<T: Scalar>(upstream: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    check_factor(factor)?;
    let s = upstream.shape();
    ensure!(
        s.height % factor == 0 && s.width % factor == 0,
        "upstream {s} not divisible by factor {factor}"
    );
    let (ih, iw) = (s.height / factor, s.width / factor);
    let mut grad = Tensor::zeros(Shape::new(s.channels, ih, iw));
    for c in 0..s.channels {
        let src = upstream.channel(c);
        let dst = grad.channel_mut(c);
        for y in 0..s.height {
            let drow = &mut dst[(y / factor) * iw..(y / factor + 1) * iw];
            for (x, &g) in src[y * s.width..(y + 1) * s.width].iter().enumerate() {
                drow[x / factor] += g;
            }
        }
    }
    Ok(grad)
}
