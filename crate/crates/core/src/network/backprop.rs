use crate::error::{ensure, Result};
use crate::fpenv::FlushDenormals;
use crate::layers::conv::{backward_unchecked, forward_unchecked};
use crate::layers::loss::sigmoid_bce_logit_grad;
use crate::layers::{
    bce_value, maxpool2, maxpool2_backward, relu_backward, sigmoid_backward, upsample_nearest,
    upsample_nearest_backward, Pooled,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{apply_activation, Activation, LayerKind, Model};

enum CacheEntry<T> {
    Conv {
        input: Tensor<T>,
        output: Tensor<T>,
    },
    Pool(Pooled<T>),
    Upsample,
}

/// Intermediate values retained by a training forward pass.
pub struct ForwardCache<T> {
    entries: Vec<CacheEntry<T>>,
    output: Tensor<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

/// Parameter gradients, laid out like the model's kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        let ks = &model.weights().kernels;
        Gradients {
            weights: ks.iter().map(|k| vec![T::zero(); k.weights().len()]).collect(),
            biases: ks.iter().map(|k| vec![T::zero(); k.biases().len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.fill(T::zero());
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

impl<T: Scalar> Model<T> {
    pub fn forward_cached(&self, image: &Tensor<T>) -> Result<ForwardCache<T>> {
        self.check_image(image)?;
        let _ftz = FlushDenormals::new();
        let mut x = image.clone();
        let mut entries = Vec::with_capacity(self.spec().layers().len());
        let mut convs = self.weights().kernels.iter();
        for layer in self.spec().layers() {
            match layer.kind {
                LayerKind::Conv => {
                    let kernel = convs.next().expect("kernel count validated");
                    let mut y = forward_unchecked(&x, kernel);
                    apply_activation(&mut y, layer.activation);
                    entries.push(CacheEntry::Conv {
                        input: x,
                        output: y.clone(),
                    });
                    x = y;
                }
                LayerKind::MaxPool => {
                    let pooled = maxpool2(&x)?;
                    x = pooled.output.clone();
                    entries.push(CacheEntry::Pool(pooled));
                }
                LayerKind::Upsample => {
                    x = upsample_nearest(&x, layer.factor)?;
                    entries.push(CacheEntry::Upsample);
                }
            }
        }
        Ok(ForwardCache { entries, output: x })
    }

    /// Accumulates into `grads` the parameter gradient of a scalar whose
    /// derivative with respect to the network output is `upstream`.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: &Tensor<T>, grads: &mut Gradients<T>) -> Result<()> {
        self.backprop(cache, upstream.clone(), false, grads)
    }

    /// Like [`Model::backward`] but `upstream` is taken with respect to the
    /// final layer's pre-activation values.
    pub fn backward_from_logits(
        &self,
        cache: &ForwardCache<T>,
        upstream: Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        self.backprop(cache, upstream, true, grads)
    }

    /// Mean BCE against `target`; its parameter gradient is added to `grads`.
    pub fn loss_and_accumulate(&self, image: &Tensor<T>, target: &Tensor<T>, grads: &mut Gradients<T>) -> Result<f64> {
        let _ftz = FlushDenormals::new();
        let cache = self.forward_cached(image)?;
        ensure!(
            cache.output.shape() == target.shape(),
            "target shape {} != output shape {}",
            target.shape(),
            cache.output.shape()
        );
        let loss = bce_value(&cache.output, target)?;
        let last = self.spec().layers().last().expect("non-empty");
        if last.kind == LayerKind::Conv && last.activation == Activation::Sigmoid {
            let g = sigmoid_bce_logit_grad(&cache.output, target);
            self.backward_from_logits(&cache, g, grads)?;
        } else {
            let (_, g) = crate::layers::bce_loss(&cache.output, target)?;
            self.backward(&cache, &g, grads)?;
        }
        Ok(loss)
    }

    fn backprop(
        &self,
        cache: &ForwardCache<T>,
        mut g: Tensor<T>,
        from_logits: bool,
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        let _ftz = FlushDenormals::new();
        ensure!(
            g.shape() == cache.output.shape(),
            "upstream gradient shape {} != output {}",
            g.shape(),
            cache.output.shape()
        );
        let layers = self.spec().layers();
        let kernels = &self.weights().kernels;
        let mut conv_idx = kernels.len();
        for (i, (layer, entry)) in layers.iter().zip(&cache.entries).enumerate().rev() {
            let is_last = i + 1 == layers.len();
            g = match entry {
                CacheEntry::Conv { input, output } => {
                    conv_idx -= 1;
                    let g_pre = match layer.activation {
                        _ if is_last && from_logits => g,
                        Activation::None => g,
                        Activation::Relu => relu_backward(output, &g)?,
                        Activation::Sigmoid => sigmoid_backward(output, &g)?,
                    };
                    match backward_unchecked(
                        input,
                        &kernels[conv_idx],
                        &g_pre,
                        &mut grads.weights[conv_idx],
                        &mut grads.biases[conv_idx],
                        i > 0,
                    ) {
                        Some(next) => next,
                        None => break,
                    }
                }
                CacheEntry::Pool(pooled) => maxpool2_backward(pooled, &g)?,
                CacheEntry::Upsample => upsample_nearest_backward(&g, layer.factor)?,
            };
        }
        Ok(())
    }
}
