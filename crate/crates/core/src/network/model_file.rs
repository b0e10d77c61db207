//! Binary model format (little-endian).
//!
//! ```text
//! magic    4 bytes  "FCNP"
//! version  u16      1
//! dtype    u8       0 = FP32, 1 = FP16
//! layers   u16
//! per layer: kind u8, in u16, out u16, factor u8, activation u8
//! per conv, in layer order: weights [out][in][3][3], then biases [out]
//! ```
//! Each payload value is 4 bytes (FP32) or 2 bytes (FP16).

use std::path::Path;

use crate::compress::fp16::{f16_bits_to_f32, f32_to_f16_bits};
use crate::error::{Error, ParseError, Result};
use crate::layers::ConvKernel;

use super::{Activation, Dtype, LayerKind, LayerSpec, Model, ModelSpec, ModelWeights};

pub const MAGIC: [u8; 4] = *b"FCNP";
pub const FORMAT_VERSION: u16 = 1;
/// Fixed part of the header preceding the layer table.
pub const HEADER_LEN: usize = 4 + 2 + 1 + 2;
pub const LAYER_RECORD_LEN: usize = 1 + 2 + 2 + 1 + 1;

fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::contract(format!("{what} {v} does not fit the model format")))
}

fn to_u8(v: usize, what: &str) -> Result<u8> {
    u8::try_from(v).map_err(|_| Error::contract(format!("{what} {v} does not fit the model format")))
}

/// Serialises a model. Output is a pure function of the model.
pub fn encode_model(model: &Model<f32>) -> Result<Vec<u8>> {
    let spec = model.spec();
    let dtype = model.dtype();
    let payload = model.param_count() * dtype.bytes_per_value();
    let mut out = Vec::with_capacity(HEADER_LEN + spec.layers().len() * LAYER_RECORD_LEN + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(dtype.tag());
    out.extend_from_slice(&to_u16(spec.layers().len(), "layer count")?.to_le_bytes());
    for l in spec.layers() {
        out.push(l.kind.tag());
        out.extend_from_slice(&to_u16(l.in_channels, "channel count")?.to_le_bytes());
        out.extend_from_slice(&to_u16(l.out_channels, "channel count")?.to_le_bytes());
        out.push(to_u8(l.factor, "upsample factor")?);
        out.push(l.activation.tag());
    }
    for v in model.weights().values() {
        match dtype {
            Dtype::Fp32 => out.extend_from_slice(&v.to_le_bytes()),
            Dtype::Fp16 => out.extend_from_slice(&f32_to_f16_bits(v).to_le_bytes()),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ParseError> {
        if self.buf.len() - self.pos < n {
            return Err(ParseError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ParseError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ParseError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(ParseError::BadMagic(magic).into());
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(ParseError::UnsupportedVersion(version).into());
    }
    let dtype_tag = r.u8()?;
    let dtype = Dtype::from_tag(dtype_tag).ok_or(ParseError::UnknownDtype(dtype_tag))?;
    let n_layers = r.u16()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind_tag = r.u8()?;
        let kind = LayerKind::from_tag(kind_tag).ok_or(ParseError::UnknownLayerKind(kind_tag))?;
        let in_channels = r.u16()? as usize;
        let out_channels = r.u16()? as usize;
        let factor = r.u8()? as usize;
        let act_tag = r.u8()?;
        let activation = Activation::from_tag(act_tag).ok_or(ParseError::UnknownActivation(act_tag))?;
        layers.push(LayerSpec {
            kind,
            in_channels,
            out_channels,
            factor,
            activation,
        });
    }
    let spec = ModelSpec::new(layers).map_err(|e| ParseError::InvalidLayers(e.to_string()))?;
    let width = dtype.bytes_per_value();
    let mut read_values = |n: usize| -> Result<Vec<f32>, ParseError> {
        let raw = r.take(n * width)?;
        Ok(match dtype {
            Dtype::Fp32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::Fp16 => raw
                .chunks_exact(2)
                .map(|c| f16_bits_to_f32(u16::from_le_bytes([c[0], c[1]])))
                .collect(),
        })
    };
    let mut kernels = Vec::new();
    for (_, l) in spec.conv_layers() {
        let w = read_values(l.out_channels * l.in_channels * crate::layers::KERNEL_AREA)?;
        let b = read_values(l.out_channels)?;
        kernels.push(ConvKernel::new(l.out_channels, l.in_channels, w, b)?);
    }
    if r.pos != bytes.len() {
        return Err(ParseError::TrailingBytes(bytes.len() - r.pos).into());
    }
    Model::new(spec, ModelWeights { dtype, kernels })
}

pub fn save_model(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_model(&bytes)
}

/// Byte length of an encoded model without encoding it.
pub fn encoded_len(spec: &ModelSpec, dtype: Dtype) -> usize {
    HEADER_LEN + spec.layers().len() * LAYER_RECORD_LEN + super::count_params(spec) * dtype.bytes_per_value()
}
