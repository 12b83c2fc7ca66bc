//! Datasets, the base/increment label partition, synthetic generators and
//! the rotation transform used for cross-domain increments.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, SeedRng};

mod dataset;
mod idx;

pub use dataset::{LabeledDataset, RANGE_TOLERANCE};
pub use idx::{load_idx, pixel_to_unit, unit_to_pixel, write_idx, IMAGE_MAGIC, LABEL_MAGIC};

/// How increment labels are numbered after a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reindex {
    /// Labels keep their original values.
    Keep,
    /// Sorted increment labels become `start, start + 1, ...`.
    Contiguous { start: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelSplit {
    pub base: LabeledDataset,
    pub increment: LabeledDataset,
    /// Original increment label -> label in `increment`.
    pub increment_map: BTreeMap<usize, usize>,
    /// Rows whose label belonged to neither set.
    pub dropped: usize,
}

/// Routes every row by label into the base or the increment partition.
pub fn split_by_labels(
    dataset: &LabeledDataset,
    base_labels: &[usize],
    increment_labels: &[usize],
    reindex: Reindex,
) -> Result<LabelSplit> {
    let base: BTreeSet<usize> = base_labels.iter().copied().collect();
    let inc: BTreeSet<usize> = increment_labels.iter().copied().collect();
    if let Some(l) = base.intersection(&inc).next() {
        return Err(Error::Config(format!(
            "label {l} is assigned to both the base and the increment partition"
        )));
    }
    let increment_map: BTreeMap<usize, usize> = match reindex {
        Reindex::Keep => inc.iter().map(|&l| (l, l)).collect(),
        Reindex::Contiguous { start } => inc.iter().enumerate().map(|(i, &l)| (l, start + i)).collect(),
    };

    let mut base_idx = Vec::new();
    let mut inc_idx = Vec::new();
    let mut dropped = 0;
    for (i, l) in dataset.labels().iter().enumerate() {
        if base.contains(l) {
            base_idx.push(i);
        } else if inc.contains(l) {
            inc_idx.push(i);
        } else {
            dropped += 1;
        }
    }

    let base_hi = base.iter().next_back().map_or(0, |m| m + 1);
    let base_part = dataset.subset(&base_idx).with_label_range(0..base_hi)?;

    let inc_part = dataset.subset(&inc_idx);
    let (samples, labels, _) = inc_part.into_parts();
    let labels: Vec<usize> = labels.iter().map(|l| increment_map[l]).collect();
    let inc_range = match (increment_map.values().min(), increment_map.values().max()) {
        (Some(&lo), Some(&hi)) => lo..hi + 1,
        _ => base_hi..base_hi,
    };
    let increment = LabeledDataset::new(samples, labels, inc_range)?;

    Ok(LabelSplit {
        base: base_part,
        increment,
        increment_map,
        dropped,
    })
}

/// Standard deviation of every synthetic blob, per coordinate.
pub const BLOB_SIGMA: f32 = 0.08;

/// Centre of class `k`: `separation * BLOB_SIGMA` along axis `k mod d`,
/// positive for the first `d` classes and negative for the next `d`.
pub fn blob_center(k: usize, d: usize, separation: f32) -> Vec<f32> {
    let mut c = vec![0.0; d];
    let sign = if k < d { 1.0 } else { -1.0 };
    c[k % d] = sign * separation * BLOB_SIGMA;
    c
}

/// Isotropic Gaussian blobs around deterministic class centres, clipped to
/// `[-1, 1]`. `separation` is the centre offset in units of the blob standard
/// deviation; nearest centres are `separation * sqrt(2)` deviations apart.
pub fn synth_blobs(num_classes: usize, d: usize, per_class: usize, separation: f32, seed: u64) -> Result<LabeledDataset> {
    if d == 0 || num_classes == 0 {
        return Err(Error::Parameter("blobs need at least one class and one dimension".into()));
    }
    if num_classes > 2 * d {
        return Err(Error::Parameter(format!(
            "at most {} blob classes fit in {d} dimensions",
            2 * d
        )));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::Parameter(format!("separation {separation} must be non-negative")));
    }
    let centers: Vec<Vec<f32>> = (0..num_classes).map(|k| blob_center(k, d, separation)).collect();
    let mut rng = SeedRng::seed_from_u64(seed);
    let n = num_classes * per_class;
    let mut samples = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..per_class {
        for (k, c) in centers.iter().enumerate() {
            let row = i * num_classes + k;
            for j in 0..d {
                let z: f32 = rng.sample(StandardNormal);
                samples[[row, j]] = (c[j] + BLOB_SIGMA * z).clamp(-1.0, 1.0);
            }
            labels.push(k);
        }
    }
    LabeledDataset::new(samples, labels, 0..num_classes)
}

pub(crate) fn square_side(d: usize) -> Result<usize> {
    let side = (d as f64).sqrt().round() as usize;
    if side * side != d || d == 0 {
        return Err(Error::Shape(format!("{d} features do not form a square image")));
    }
    Ok(side)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RotationPolicy {
    /// Every image rotated by the same angle (radians).
    Fixed { radians: f64 },
    /// Independent angle per image, uniform in `[0, 2pi)`.
    Uniform,
}

/// Rotates a square image about its centre with bilinear resampling.
/// Pixels that map outside the source take the background value -1.
pub fn rotate_image(image: &[f32], side: usize, radians: f64) -> Vec<f32> {
    let c = (side as f64 - 1.0) / 2.0;
    let (sin, cos) = radians.sin_cos();
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= side as isize || y >= side as isize {
            -1.0
        } else {
            image[y as usize * side + x as usize] as f64
        }
    };
    let mut out = vec![0.0f32; side * side];
    for y in 0..side {
        for x in 0..side {
            // inverse rotation of the destination pixel centre
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            let sx = c + cos * dx + sin * dy;
            let sy = c - sin * dx + cos * dy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + at(x0 + 1, y0) * fx * (1.0 - fy)
                + at(x0, y0 + 1) * (1.0 - fx) * fy
                + at(x0 + 1, y0 + 1) * fx * fy;
            out[y * side + x] = v.clamp(-1.0, 1.0) as f32;
        }
    }
    out
}

/// Rotated copy of a dataset of square images; labels are untouched.
pub fn rotate_digits(dataset: &LabeledDataset, policy: RotationPolicy, seed: u64) -> Result<LabeledDataset> {
    let side = square_side(dataset.dim())?;
    let mut rng = SeedRng::seed_from_u64(seed);
    let mut samples = dataset.samples().clone();
    for mut row in samples.outer_iter_mut() {
        let angle = match policy {
            RotationPolicy::Fixed { radians } => radians,
            RotationPolicy::Uniform => rng.random_range(0.0..std::f64::consts::TAU),
        };
        let src: Vec<f32> = row.iter().copied().collect();
        for (dst, v) in row.iter_mut().zip(rotate_image(&src, side, angle)) {
            *dst = v;
        }
    }
    LabeledDataset::new(samples, dataset.labels().to_vec(), dataset.label_range())
}

/// Where a training set came from: a source identifier, the labels kept from
/// it and an optional row window. Carries no sample content.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataProvenance {
    pub source: String,
    pub labels: Vec<usize>,
    /// Half-open row window `[start, end)` into the source, if restricted.
    #[serde(default)]
    pub rows: Option<(usize, usize)>,
}

impl DataProvenance {
    /// True when the two descriptions can select a common sample.
    pub fn overlaps(&self, other: &DataProvenance) -> bool {
        if self.source != other.source {
            return false;
        }
        if !self.labels.iter().any(|l| other.labels.contains(l)) {
            return false;
        }
        match (self.rows, other.rows) {
            (Some((a0, a1)), Some((b0, b1))) => a0 < b1 && b0 < a1,
            _ => true,
        }
    }
}
