//! IDX (MNIST container) reading and writing, plus a synthetic image set
//! generator that emits the same format.
//!
//! Layout: 4-byte big-endian magic (`0x00000803` for u8 images of rank 3,
//! `0x00000801` for u8 labels of rank 1), one big-endian u32 per dimension,
//! then the raw bytes in row-major order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Split;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw decoded image file.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, format!("truncated header at byte offset {offset}")))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_file(path)?;
    let magic = read_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            path,
            format!("bad image magic 0x{magic:08x} at byte offset 0 (expected 0x{IMAGES_MAGIC:08x})"),
        ));
    }
    let count = read_u32(&bytes, 4, path)? as usize;
    let rows = read_u32(&bytes, 8, path)? as usize;
    let cols = read_u32(&bytes, 12, path)? as usize;
    if count == 0 || rows == 0 || cols == 0 {
        return Err(Error::format(path, "zero image dimension in header at byte offset 4"));
    }
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() != need {
        return Err(Error::format(
            path,
            format!(
                "expected {need} pixel bytes after the header, file ends at byte offset {} (payload {} bytes)",
                bytes.len(),
                body.len()
            ),
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let magic = read_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            path,
            format!("bad label magic 0x{magic:08x} at byte offset 0 (expected 0x{LABELS_MAGIC:08x})"),
        ));
    }
    let count = read_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::format(
            path,
            format!(
                "expected {count} label bytes after the header, file ends at byte offset {}",
                bytes.len()
            ),
        ));
    }
    Ok(body.to_vec())
}

/// Images as `[N, 1, H, W]` scaled to `[0, 1]`, with their labels.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Split> {
    let img = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != img.count {
        return Err(Error::format(
            labels_path,
            format!("{} labels for {} images", labels.len(), img.count),
        ));
    }
    let x = Tensor::new(
        vec![img.count, 1, img.rows, img.cols],
        img.pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )?;
    Split::new(x, labels.into_iter().map(usize::from).collect())
}

pub fn write_idx_images(path: &Path, img: &IdxImages) -> Result<()> {
    let mut out = Vec::with_capacity(16 + img.pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [img.count, img.rows, img.cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&img.pixels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Class-prototype images with per-sample brightness drawn from
/// `[min_brightness, 1]`, so pixel-vector norms vary within each class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthImageSpec {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub per_class: usize,
    pub noise: f64,
    pub min_brightness: f64,
    pub seed: u64,
}

impl Default for SynthImageSpec {
    fn default() -> Self {
        SynthImageSpec {
            num_classes: 10,
            height: 8,
            width: 8,
            per_class: 200,
            noise: 0.35,
            min_brightness: 0.1,
            seed: 0,
        }
    }
}

/// Generates images and labels. Prototypes depend only on `seed`, so two
/// specs differing only in `per_class` (or a stream offset) share classes.
pub fn synth_idx_images(spec: &SynthImageSpec, stream: u64) -> Result<(IdxImages, Vec<u8>)> {
    if spec.num_classes == 0 || spec.num_classes > 256 || spec.height == 0 || spec.width == 0 || spec.per_class == 0 {
        return Err(Error::InvalidConfig("invalid synthetic image spec".into()));
    }
    if !(spec.min_brightness > 0.0 && spec.min_brightness <= 1.0) {
        return Err(Error::InvalidConfig("min_brightness must be in (0, 1]".into()));
    }
    let px = spec.height * spec.width;
    let base = Rng::new(spec.seed);
    let mut proto_rng = base.fork(0);
    let protos: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..px).map(|_| proto_rng.uniform(0.0, 1.0)).collect())
        .collect();
    let mut rng = base.fork(1 + stream);
    let mut pixels = Vec::with_capacity(spec.num_classes * spec.per_class * px);
    let mut labels = Vec::with_capacity(spec.num_classes * spec.per_class);
    for (class, proto) in protos.iter().enumerate() {
        for _ in 0..spec.per_class {
            let brightness = rng.uniform(spec.min_brightness, 1.0);
            for &p in proto {
                let v = (p + spec.noise * rng.normal()).clamp(0.0, 1.0) * brightness;
                pixels.push((v * 255.0).round() as u8);
            }
            labels.push(class as u8);
        }
    }
    Ok((
        IdxImages {
            count: labels.len(),
            rows: spec.height,
            cols: spec.width,
            pixels,
        },
        labels,
    ))
}
