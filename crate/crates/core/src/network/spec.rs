use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::layers::KERNEL_AREA;
use crate::tensor::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    MaxPool,
    Upsample,
}

impl LayerKind {
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::MaxPool => 1,
            LayerKind::Upsample => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(LayerKind::Conv),
            1 => Some(LayerKind::MaxPool),
            2 => Some(LayerKind::Upsample),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Upsample factor; 0 for the other kinds.
    pub factor: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            factor: 0,
            activation,
        }
    }

    pub fn maxpool(channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool,
            in_channels: channels,
            out_channels: channels,
            factor: 0,
            activation: Activation::None,
        }
    }

    pub fn upsample(channels: usize, factor: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Upsample,
            in_channels: channels,
            out_channels: channels,
            factor,
            activation: Activation::None,
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv => KERNEL_AREA * self.in_channels * self.out_channels + self.out_channels,
            _ => 0,
        }
    }
}

/// Ordered layer graph of a conv/pool/upsample network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    layers: Vec<LayerSpec>,
}

/// Conv widths of the unpruned network, in layer order.
pub const FCN_POSE_CONV_WIDTHS: [usize; 10] = [128, 64, 32, 16, 8, 8, 16, 32, 64, 9];
pub const INPUT_CHANNELS: usize = 3;
pub const OUTPUT_CHANNELS: usize = 9;

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = ModelSpec { layers };
        spec.validate()?;
        Ok(spec)
    }

    /// The 10-conv encoder/decoder: conv+pool five times, then
    /// conv+upsample (x2, x2, x2, x4) four times, then a sigmoid conv.
    pub fn fcn_pose() -> Self {
        Self::from_conv_widths(&FCN_POSE_CONV_WIDTHS).expect("default widths are valid")
    }

    /// Same topology as [`ModelSpec::fcn_pose`] with arbitrary conv widths.
    pub fn from_conv_widths(widths: &[usize]) -> Result<Self> {
        ensure!(
            widths.len() == FCN_POSE_CONV_WIDTHS.len(),
            "expected {} conv widths, got {}",
            FCN_POSE_CONV_WIDTHS.len(),
            widths.len()
        );
        let up_factors = [2, 2, 2, 4];
        let mut layers = Vec::with_capacity(19);
        let mut prev = INPUT_CHANNELS;
        for (i, &w) in widths.iter().enumerate() {
            let last = i + 1 == widths.len();
            let act = if last { Activation::Sigmoid } else { Activation::Relu };
            layers.push(LayerSpec::conv(prev, w, act));
            if i < 5 {
                layers.push(LayerSpec::maxpool(w));
            } else if !last {
                layers.push(LayerSpec::upsample(w, up_factors[i - 5]));
            }
            prev = w;
        }
        ModelSpec::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_channels)
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    /// Layer indices of the convolutions, in order.
    pub fn conv_layers(&self) -> impl Iterator<Item = (usize, &LayerSpec)> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LayerKind::Conv)
    }

    pub fn conv_widths(&self) -> Vec<usize> {
        self.conv_layers().map(|(_, l)| l.out_channels).collect()
    }

    pub fn conv_count(&self) -> usize {
        self.conv_layers().count()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.layers.is_empty(), "model has no layers");
        let mut sigmoid_at = None;
        for (i, l) in self.layers.iter().enumerate() {
            ensure!(
                l.in_channels > 0 && l.out_channels > 0,
                "layer {i} has zero channels"
            );
            if i > 0 {
                let prev = self.layers[i - 1].out_channels;
                ensure!(
                    l.in_channels == prev,
                    "layer {i} expects {} channels but layer {} produces {prev}",
                    l.in_channels,
                    i - 1
                );
            }
            match l.kind {
                LayerKind::Conv => {
                    if l.activation == Activation::Sigmoid {
                        ensure!(sigmoid_at.is_none(), "more than one sigmoid layer");
                        sigmoid_at = Some(i);
                    }
                }
                LayerKind::MaxPool | LayerKind::Upsample => {
                    ensure!(
                        l.in_channels == l.out_channels,
                        "spatial layer {i} changes channel count"
                    );
                    ensure!(
                        l.activation == Activation::None,
                        "spatial layer {i} carries an activation"
                    );
                    if l.kind == LayerKind::Upsample {
                        ensure!(
                            crate::layers::upsample::SUPPORTED_FACTORS.contains(&l.factor),
                            "layer {i}: unsupported upsample factor {}",
                            l.factor
                        );
                    } else {
                        ensure!(l.factor == 0, "layer {i}: pool carries a factor");
                    }
                }
            }
        }
        let last_conv = self.conv_layers().last().map(|(i, _)| i);
        ensure!(
            sigmoid_at.is_some() && sigmoid_at == last_conv,
            "exactly one sigmoid is required and it must be the last conv"
        );
        Ok(())
    }

    /// Output shape of every layer for a `(input_channels, h, w)` input.
    pub fn layer_shapes(&self, h: usize, w: usize) -> Result<Vec<Shape>> {
        let (mut h, mut w) = (h, w);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            match l.kind {
                LayerKind::Conv => {}
                LayerKind::MaxPool => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(Error::contract(format!(
                            "input size not divisible by {}: layer {i} pools a {h}x{w} map",
                            self.size_divisor()
                        )));
                    }
                    h /= 2;
                    w /= 2;
                }
                LayerKind::Upsample => {
                    h *= l.factor;
                    w *= l.factor;
                }
            }
            out.push(Shape::new(l.out_channels, h, w));
        }
        Ok(out)
    }

    /// Input height/width must be a multiple of this.
    pub fn size_divisor(&self) -> usize {
        1 << self.layers.iter().filter(|l| l.kind == LayerKind::MaxPool).count()
    }

    pub fn check_input_size(&self, h: usize, w: usize) -> Result<()> {
        let d = self.size_divisor();
        ensure!(
            h > 0 && w > 0 && h % d == 0 && w % d == 0,
            "input {h}x{w} is not divisible by {d}"
        );
        let shapes = self.layer_shapes(h, w)?;
        let last = shapes.last().expect("non-empty");
        ensure!(
            last.height == h && last.width == w,
            "network maps {h}x{w} to {}x{}",
            last.height,
            last.width
        );
        Ok(())
    }
}

/// Total learnable parameters: sum over convs of `9 * in * out + out`.
pub fn count_params(spec: &ModelSpec) -> usize {
    spec.layers.iter().map(LayerSpec::param_count).sum()
}

/// Dense FLOP count for one forward pass at `h x w`.
///
/// Per conv: `2 * out_h * out_w * out_c * 9 * in_c` multiply-add flops plus
/// `out_h * out_w * out_c` bias adds. Pooling, upsampling and activations
/// are not counted.
pub fn count_flops(spec: &ModelSpec, h: usize, w: usize) -> Result<u64> {
    spec.check_input_size(h, w)?;
    let shapes = spec.layer_shapes(h, w)?;
    Ok(spec
        .layers
        .iter()
        .zip(&shapes)
        .filter(|(l, _)| l.kind == LayerKind::Conv)
        .map(|(l, s)| {
            let px = (s.height * s.width) as u64;
            let out_c = l.out_channels as u64;
            2 * px * out_c * (KERNEL_AREA * l.in_channels) as u64 + px * out_c
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_topology_counts() {
        let spec = ModelSpec::fcn_pose();
        let kinds = |k| spec.layers().iter().filter(|l| l.kind == k).count();
        assert_eq!(kinds(LayerKind::Conv), 10);
        assert_eq!(kinds(LayerKind::MaxPool), 5);
        assert_eq!(kinds(LayerKind::Upsample), 4);
        assert_eq!(spec.input_channels(), 3);
        assert_eq!(spec.output_channels(), 9);
        assert_eq!(count_params(&spec), 131_705);
        assert_eq!(spec.size_divisor(), 32);
    }

    #[test]
    fn rejects_broken_chain() {
        let layers = vec![
            LayerSpec::conv(3, 4, Activation::Relu),
            LayerSpec::conv(5, 9, Activation::Sigmoid),
        ];
        assert!(ModelSpec::new(layers).is_err());
    }

    #[test]
    fn rejects_misplaced_sigmoid() {
        let layers = vec![
            LayerSpec::conv(3, 4, Activation::Sigmoid),
            LayerSpec::conv(4, 9, Activation::Relu),
        ];
        assert!(ModelSpec::new(layers).is_err());
        let none = vec![LayerSpec::conv(3, 9, Activation::Relu)];
        assert!(ModelSpec::new(none).is_err());
    }

    #[test]
    fn single_pixel_conv_flops() {
        let spec = ModelSpec::new(vec![LayerSpec::conv(1, 1, Activation::Sigmoid)]).unwrap();
        assert_eq!(count_flops(&spec, 1, 1).unwrap(), 19);
    }

    #[test]
    fn flops_scale_quadratically() {
        let spec = ModelSpec::fcn_pose();
        let small = count_flops(&spec, 32, 32).unwrap();
        let big = count_flops(&spec, 224, 224).unwrap();
        assert_eq!(big, 49 * small);
    }

    #[test]
    fn indivisible_size_rejected() {
        let spec = ModelSpec::fcn_pose();
        assert!(spec.check_input_size(100, 100).is_err());
        assert!(count_flops(&spec, 96, 100).is_err());
        assert!(spec.check_input_size(96, 64).is_ok());
    }
}
