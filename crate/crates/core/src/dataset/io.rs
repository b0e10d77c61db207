//! On-disk dataset layout.
//!
//! ```text
//! <dir>/train.json   annotations for the training split
//! <dir>/val.json     annotations for the validation split
//! <dir>/train/00000.ppm ...
//! <dir>/val/00000.ppm ...
//! ```
//! Images are binary 8-bit PPM (P6). Masks are not stored; they are
//! re-rasterized from the keypoints on load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::{Dataset, KeypointSet, MaskStyle, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image: String,
    pub keypoints: KeypointSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAnnotations {
    pub height: usize,
    pub width: usize,
    pub style: MaskStyle,
    pub samples: Vec<SampleRecord>,
}

fn data_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(Error::Contract(format!("PPM needs 3 channels, got {}", image.channels())));
    }
    let (h, w) = (image.height(), image.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((image.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    // header: magic, width, height, maxval separated by whitespace; comments skipped
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(data_err(path, "truncated PPM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| data_err(path, "non-ASCII PPM header"))?);
    }
    if fields[0] != "P6" {
        return Err(data_err(path, format!("expected P6 PPM, found {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| data_err(path, format!("bad PPM number {s:?}")));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(data_err(path, format!("unsupported PPM maxval {maxval}")));
    }
    let pixels = &bytes[(i + 1).min(bytes.len())..];
    if pixels.len() != 3 * w * h {
        return Err(data_err(path, format!("expected {} pixel bytes, found {}", 3 * w * h, pixels.len())));
    }
    let mut img = Tensor::zeros(Shape::new(3, h, w));
    for (p, rgb) in pixels.chunks_exact(3).enumerate() {
        let (y, x) = (p / w, p % w);
        for (c, &v) in rgb.iter().enumerate() {
            img.set(c, y, x, v as f32 / 255.0);
        }
    }
    Ok(img)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_split(dir: &Path, name: &str, samples: &[Sample]) -> Result<()> {
    let img_dir = dir.join(name);
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(format!("creating {}", img_dir.display()), e))?;
    let (height, width, style) = samples
        .first()
        .map(|s| (s.height(), s.width(), s.style))
        .unwrap_or((0, 0, MaskStyle::scaled(0, 0)));
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if (s.height(), s.width()) != (height, width) || s.style != style {
            return Err(Error::Contract(format!("{name} sample {i} differs in size or mask style")));
        }
        let rel = format!("{name}/{i:05}.ppm");
        write(&dir.join(&rel), &encode_ppm(&s.image)?)?;
        records.push(SampleRecord {
            image: rel,
            keypoints: s.keypoints,
        });
    }
    let ann = SplitAnnotations {
        height,
        width,
        style,
        samples: records,
    };
    write(&dir.join(format!("{name}.json")), serde_json::to_string_pretty(&ann)?.as_bytes())
}

pub fn write_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    write_split(dir, "train", &dataset.train)?;
    write_split(dir, "val", &dataset.val)
}

pub fn read_annotations(dir: impl AsRef<Path>, split: &str) -> Result<SplitAnnotations> {
    let path: PathBuf = dir.as_ref().join(format!("{split}.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| data_err(&path, e.to_string()))
}

pub fn read_split(dir: impl AsRef<Path>, split: &str) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let ann = read_annotations(dir, split)?;
    ann.samples
        .iter()
        .map(|r| {
            let path = dir.join(&r.image);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            let image = decode_ppm(&bytes, &path)?;
            if (image.height(), image.width()) != (ann.height, ann.width) {
                return Err(data_err(&path, "image size differs from annotation header"));
            }
            Ok(Sample::from_parts(image, r.keypoints, ann.style))
        })
        .collect()
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    Ok(Dataset {
        train: read_split(dir, "train")?,
        val: read_split(dir, "val")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_scene, ArmConfig};

    #[test]
    fn ppm_round_trip() {
        let s = gen_scene(&ArmConfig::for_resolution(32, 64), 4).unwrap();
        let bytes = encode_ppm(&s.image).unwrap();
        assert!(bytes.starts_with(b"P6\n64 32\n255\n"));
        assert_eq!(decode_ppm(&bytes, Path::new("x")).unwrap(), s.image);
    }

    #[test]
    fn ppm_errors() {
        let p = Path::new("x.ppm");
        assert!(decode_ppm(b"P5\n1 1\n255\n\0", p).is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0\0", p).is_err());
        assert!(decode_ppm(b"P6\n2", p).is_err());
        assert!(decode_ppm(b"P6 # c\n1 1 255\n\x01\x02\x03", p).is_ok());
    }
}
