//! IDX image/label files (the MNIST distribution format), optionally gzipped.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::Array2;

use super::LabeledDataset;
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Maps a byte in `[0, 255]` linearly onto `[-1, 1]`.
pub fn pixel_to_unit(p: u8) -> f32 {
    (p as f32 * 2.0) / 255.0 - 1.0
}

/// Inverse of [`pixel_to_unit`], rounding to the nearest byte.
pub fn unit_to_pixel(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn truncated(path: &Path, what: &str) -> Error {
    Error::io(
        path,
        io::Error::new(io::ErrorKind::UnexpectedEof, format!("file ends inside the {what}")),
    )
}

/// Parses an IDX file with unsigned-byte payload. Returns the dimensions and
/// the payload.
fn parse(path: &Path, expected_magic: u32, expected_dims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = read_all(path)?;
    let word = |i: usize| -> Option<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    };
    let magic = word(0).ok_or_else(|| truncated(path, "header"))?;
    if magic != expected_magic {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("magic number {magic:#010x}, expected {expected_magic:#010x}"),
        });
    }
    let dims = (0..expected_dims)
        .map(|i| word(1 + i).map(|d| d as usize).ok_or_else(|| truncated(path, "header")))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 * (1 + expected_dims);
    let len: usize = dims.iter().product();
    let payload = bytes
        .get(start..start + len)
        .ok_or_else(|| truncated(path, "payload"))?
        .to_vec();
    Ok((dims, payload))
}

/// Loads paired image and label files. Pixels are mapped onto `[-1, 1]`; the
/// declared label range is `0..=max label`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let (idims, pixels) = parse(images, IMAGE_MAGIC, 3)?;
    let (ldims, label_bytes) = parse(labels, LABEL_MAGIC, 1)?;
    if idims[0] != ldims[0] {
        return Err(Error::Consistency(format!(
            "{} holds {} images but {} holds {} labels",
            images.display(),
            idims[0],
            labels.display(),
            ldims[0]
        )));
    }
    let d = idims[1] * idims[2];
    let samples = Array2::from_shape_vec((idims[0], d), pixels.into_iter().map(pixel_to_unit).collect())
        .expect("payload length equals the product of the dimensions");
    let labels: Vec<usize> = label_bytes.into_iter().map(usize::from).collect();
    let hi = labels.iter().copied().max().map_or(0, |m| m + 1);
    LabeledDataset::new(samples, labels, 0..hi)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let gz = path.extension().is_some_and(|e| e == "gz");
    let out = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes.to_vec()
    };
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a dataset of square images as IDX files (gzipped when the path ends
/// in `.gz`). Labels must fit in a byte.
pub fn write_idx(dataset: &LabeledDataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let side = super::square_side(dataset.dim())?;
    let mut img = Vec::with_capacity(16 + dataset.len() * dataset.dim());
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [dataset.len(), side, side] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    img.extend(dataset.samples().iter().map(|&v| unit_to_pixel(v)));

    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    for &l in dataset.labels() {
        let b = u8::try_from(l).map_err(|_| Error::Label { label: l, lo: 0, hi: 256 })?;
        lab.push(b);
    }
    write_file(images.as_ref(), &img)?;
    write_file(labels.as_ref(), &lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_map_endpoints_and_midpoint() {
        assert_eq!(pixel_to_unit(0), -1.0);
        assert_eq!(pixel_to_unit(255), 1.0);
        assert!((pixel_to_unit(127) - (127.0 * 2.0 / 255.0 - 1.0)).abs() < 1e-7);
        assert!((pixel_to_unit(127) + 0.00392).abs() < 1e-5);
        for p in 0..=255u8 {
            assert_eq!(unit_to_pixel(pixel_to_unit(p)), p);
        }
    }
}
