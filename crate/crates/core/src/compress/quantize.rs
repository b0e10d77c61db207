//! Post-training FP32 -> FP16 quantization. No retraining is involved.

use crate::error::{Error, Result};
use crate::network::{Dtype, Model};

use super::fp16::round_to_f16;

/// Rounds every weight and bias to the nearest binary16 value and tags the
/// model FP16. An FP16 model is returned unchanged.
pub fn quantize_model(model: &Model<f32>) -> Result<Model<f32>> {
    if model.dtype() == Dtype::Fp16 {
        return Ok(model.clone());
    }
    let mut out = model.clone();
    out.weights_mut().dtype = Dtype::Fp16;
    for (layer, k) in out.weights_mut().kernels.iter_mut().enumerate() {
        let mut bad = 0;
        let (w, b) = k.params_mut();
        for v in w.iter_mut().chain(b.iter_mut()) {
            *v = round_to_f16(*v);
            bad += usize::from(!v.is_finite());
        }
        if bad > 0 {
            return Err(Error::Quantization { layer, count: bad });
        }
    }
    Ok(out)
}

/// Largest `|w - q(w)|` over all parameters of two same-shape models.
pub fn max_abs_error(a: &Model<f32>, b: &Model<f32>) -> f32 {
    a.weights()
        .values()
        .zip(b.weights().values())
        .fold(0.0f32, |m, (x, y)| m.max((x - y).abs()))
}
