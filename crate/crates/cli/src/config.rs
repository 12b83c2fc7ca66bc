//! Run configuration files and dataset resolution.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use phantomnet::data::{load_idx, rotate_digits, synth_blobs, DataProvenance, LabeledDataset, RotationPolicy};
use phantomnet::sites::{HeadInit, IncrementPlan, TrainConfig};
use phantomnet::{Error, Result};

/// Environment variable naming the directory relative dataset paths resolve
/// against.
pub const DATA_ENV: &str = "PHANTOMNET_DATA";

pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

pub fn read_config<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Where a dataset comes from and which part of it is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only these labels.
        #[serde(default)]
        keep: Option<Vec<usize>>,
        /// Half-open row window applied before label filtering.
        #[serde(default)]
        rows: Option<(usize, usize)>,
        #[serde(default)]
        rotate: Option<RotationPolicy>,
        #[serde(default)]
        rotate_seed: u64,
    },
    Blobs {
        num_classes: usize,
        dim: usize,
        per_class: usize,
        separation: f32,
        seed: u64,
        #[serde(default)]
        keep: Option<Vec<usize>>,
    },
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

impl DatasetSpec {
    /// Loads the dataset and describes its origin.
    pub fn load(&self, root: &Path) -> Result<(LabeledDataset, DataProvenance)> {
        let (mut ds, source, rows, keep) = match self {
            DatasetSpec::Idx {
                images,
                labels,
                keep,
                rows,
                rotate,
                rotate_seed,
            } => {
                let images = resolve(root, images);
                let mut ds = load_idx(&images, resolve(root, labels))?;
                if let Some((lo, hi)) = *rows {
                    if lo > hi || hi > ds.len() {
                        return Err(Error::Config(format!(
                            "row window {lo}..{hi} outside {} rows of {}",
                            ds.len(),
                            images.display()
                        )));
                    }
                    ds = ds.subset(&(lo..hi).collect::<Vec<_>>());
                }
                if let Some(policy) = rotate {
                    ds = rotate_digits(&ds, *policy, *rotate_seed)?;
                }
                let canonical = fs::canonicalize(&images).map_err(|e| Error::Io {
                    path: images.clone(),
                    source: e,
                })?;
                (ds, canonical.display().to_string(), *rows, keep.clone())
            }
            DatasetSpec::Blobs {
                num_classes,
                dim,
                per_class,
                separation,
                seed,
                keep,
            } => {
                let ds = synth_blobs(*num_classes, *dim, *per_class, *separation, *seed)?;
                let source = format!("blobs:{num_classes}x{dim}x{per_class}@{separation}#{seed}");
                (ds, source, None, keep.clone())
            }
        };
        if let Some(keep) = &keep {
            let set: BTreeSet<usize> = keep.iter().copied().collect();
            let hi = set.iter().next_back().map_or(0, |m| m + 1);
            ds = ds.filter(|l| set.contains(&l)).with_label_range(0..hi)?;
        }
        let labels = keep.unwrap_or_else(|| ds.present_labels());
        Ok((ds, DataProvenance { source, labels, rows }))
    }
}

/// Increment-site training settings; the class counts come from the bundle
/// and the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncrementSettings {
    pub training: TrainConfig,
    /// Defaults to the class-count rule.
    #[serde(default)]
    pub interleave: Option<usize>,
    #[serde(default = "default_temperature")]
    pub temperature: f32,
    #[serde(default = "one")]
    pub phantom_weight: f32,
    #[serde(default)]
    pub head_init: HeadInit,
}

fn default_temperature() -> f32 {
    2.0
}

fn one() -> f32 {
    1.0
}

impl IncrementSettings {
    pub fn plan(&self, old_classes: usize, total_classes: usize, seed: u64) -> IncrementPlan {
        let mut plan = IncrementPlan::new(old_classes, total_classes, self.training.clone(), seed);
        if let Some(k) = self.interleave {
            plan.interleave = k;
        }
        plan.temperature = self.temperature;
        plan.phantom_weight = self.phantom_weight;
        plan.head_init = self.head_init;
        plan
    }
}
