use crate::error::{ensure, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probability clamp applied before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient with respect to `pred`.
///
/// Predictions are clamped to `[eps, 1 - eps]`; the gradient is zero where
/// the clamp is active.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    ensure!(
        pred.shape() == target.shape(),
        "bce shape mismatch: pred {} vs target {}",
        pred.shape(),
        target.shape()
    );
    let n = pred.len() as f64;
    let eps = BCE_EPSILON;
    let mut total = 0.0f64;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &y) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let (p, y) = (p.to_f64_lossy(), y.to_f64_lossy());
        let pc = p.clamp(eps, 1.0 - eps);
        total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        if p > eps && p < 1.0 - eps {
            *g = T::from_f64_lossy((-(y / pc) + (1.0 - y) / (1.0 - pc)) / n);
        }
    }
    Ok((total / n, grad))
}

/// Loss value only, same definition as [`bce_loss`].
pub fn bce_value<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    ensure!(pred.shape() == target.shape(), "bce shape mismatch");
    let eps = BCE_EPSILON;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            let (p, y) = (p.to_f64_lossy().clamp(eps, 1.0 - eps), y.to_f64_lossy());
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Gradient of mean BCE with respect to the pre-sigmoid logits, `(p - y) / n`.
///
/// This is the chain rule through `sigmoid` folded into one step, which
/// avoids dividing by `p (1 - p)` when the output saturates.
pub(crate) fn sigmoid_bce_logit_grad<T: Scalar>(prob: &Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    let inv_n = T::one() / T::from_f64_lossy(prob.len() as f64);
    let mut g = prob.clone();
    for (gv, &y) in g.data_mut().iter_mut().zip(target.data()) {
        *gv = (*gv - y) * inv_n;
    }
    g
}
