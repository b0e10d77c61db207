//! FCN-Pose architecture, inference and accounting.

mod backprop;
pub mod model_file;
mod spec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::fpenv::FlushDenormals;
use crate::layers::activation::{relu_in_place, sigmoid_in_place};
use crate::layers::conv::forward_unchecked;
use crate::layers::{maxpool2, upsample_nearest, ConvKernel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use backprop::{ForwardCache, Gradients};
pub use model_file::{load_model, save_model, HEADER_LEN, LAYER_RECORD_LEN};
pub use spec::{
    count_flops, count_params, Activation, LayerKind, LayerSpec, ModelSpec, FCN_POSE_CONV_WIDTHS,
    INPUT_CHANNELS, OUTPUT_CHANNELS,
};

/// Storage precision of the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Fp32,
    Fp16,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::Fp32 => 0,
            Dtype::Fp16 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::Fp32),
            1 => Some(Dtype::Fp16),
            _ => None,
        }
    }

    pub fn bytes_per_value(self) -> usize {
        match self {
            Dtype::Fp32 => 4,
            Dtype::Fp16 => 2,
        }
    }
}

/// Per-conv kernels in layer order. FP16 weights are held decoded, so every
/// value is exactly representable in binary16.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub dtype: Dtype,
    pub kernels: Vec<ConvKernel<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    pub fn param_count(&self) -> usize {
        self.kernels.iter().map(ConvKernel::param_count).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            dtype: self.dtype,
            kernels: self.kernels.iter().map(ConvKernel::cast).collect(),
        }
    }

    /// Every parameter, kernel by kernel, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.kernels
            .iter()
            .flat_map(|k| k.weights().iter().chain(k.biases()).copied())
    }
}

/// A layer graph with matching parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    weights: ModelWeights<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(spec: ModelSpec, weights: ModelWeights<T>) -> Result<Self> {
        spec.validate()?;
        let convs: Vec<_> = spec.conv_layers().map(|(_, l)| *l).collect();
        ensure!(
            convs.len() == weights.kernels.len(),
            "spec has {} convs but {} kernels were given",
            convs.len(),
            weights.kernels.len()
        );
        for (i, (l, k)) in convs.iter().zip(&weights.kernels).enumerate() {
            ensure!(
                l.in_channels == k.in_channels() && l.out_channels == k.out_channels(),
                "conv {i}: spec {}->{} but kernel {}->{}",
                l.in_channels,
                l.out_channels,
                k.in_channels(),
                k.out_channels()
            );
        }
        Ok(Model { spec, weights })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &ModelWeights<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut ModelWeights<T> {
        &mut self.weights
    }

    pub fn dtype(&self) -> Dtype {
        self.weights.dtype
    }

    pub fn into_parts(self) -> (ModelSpec, ModelWeights<T>) {
        (self.spec, self.weights)
    }

    pub fn param_count(&self) -> usize {
        count_params(&self.spec)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            weights: self.weights.cast(),
        }
    }

    /// Inference: `(3, H, W)` image to `(9, H, W)` sigmoid maps.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_image(image)?;
        let _ftz = FlushDenormals::new();
        let mut x = image.clone();
        let mut convs = self.weights.kernels.iter();
        for layer in self.spec.layers() {
            x = match layer.kind {
                LayerKind::Conv => {
                    let kernel = convs.next().expect("kernel count validated");
                    let mut y = forward_unchecked(&x, kernel);
                    apply_activation(&mut y, layer.activation);
                    y
                }
                LayerKind::MaxPool => maxpool2(&x)?.output,
                LayerKind::Upsample => upsample_nearest(&x, layer.factor)?,
            };
        }
        Ok(x)
    }

    pub(crate) fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        ensure!(
            image.channels() == self.spec.input_channels(),
            "model expects {} input channels, got {}",
            self.spec.input_channels(),
            image.channels()
        );
        self.spec.check_input_size(image.height(), image.width())
    }
}

pub(crate) fn apply_activation<T: Scalar>(t: &mut Tensor<T>, act: Activation) {
    match act {
        Activation::None => {}
        Activation::Relu => relu_in_place(t),
        Activation::Sigmoid => sigmoid_in_place(t),
    }
}

/// The FCN-Pose network with seeded Glorot-uniform weights and zero biases.
pub fn build_fcn_pose<T: Scalar>(seed: u64) -> Model<T> {
    init_model(ModelSpec::fcn_pose(), seed).expect("default spec is valid")
}

/// Seeded initialisation of any valid spec.
pub fn init_model<T: Scalar>(spec: ModelSpec, seed: u64) -> Result<Model<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = spec
        .conv_layers()
        .map(|(_, l)| ConvKernel::glorot_uniform(l.out_channels, l.in_channels, &mut rng))
        .collect();
    Model::new(
        spec,
        ModelWeights {
            dtype: Dtype::Fp32,
            kernels,
        },
    )
}
