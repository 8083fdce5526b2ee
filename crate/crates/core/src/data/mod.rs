//! Datasets, experiment logs and checkpoints.

mod checkpoint;
mod csv_table;
mod idx;
mod log;

pub use checkpoint::{load_checkpoint, load_checkpoint_into, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use csv_table::load_csv;
pub use idx::{load_idx, read_idx_images, read_idx_labels, synth_idx_images, write_idx_images, write_idx_labels, IdxImages, SynthImageSpec};
pub use log::{read_log, write_log, LogFormat, LOG_COLUMNS};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SyntheticBlobs,
    IdxFiles,
    Csv,
}

/// One set of samples with labels; the leading dimension indexes samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl Split {
    pub fn new(x: Tensor, y: Vec<usize>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::ShapeMismatch {
                op: "split",
                lhs: x.shape().to_vec(),
                rhs: vec![y.len()],
            });
        }
        Ok(Split { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.y.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Option<Split>,
    pub num_classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(train: Split, test: Option<Split>, num_classes: usize, provenance: Provenance) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidConfig("training split is empty".into()));
        }
        for (name, s) in std::iter::once(("train", &train)).chain(test.iter().map(|t| ("test", t))) {
            if let Some(&bad) = s.y.iter().find(|&&l| l >= num_classes) {
                return Err(Error::InvalidConfig(format!(
                    "{name} label {bad} out of range for {num_classes} classes"
                )));
            }
        }
        if let Some(t) = &test {
            if t.x.shape()[1..] != train.x.shape()[1..] {
                return Err(Error::ShapeMismatch {
                    op: "dataset splits",
                    lhs: train.x.shape().to_vec(),
                    rhs: t.x.shape().to_vec(),
                });
            }
        }
        Ok(Dataset {
            train,
            test,
            num_classes,
            provenance,
        })
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.train.x.shape()[1..]
    }
}

/// Gaussian direction clusters with a controllable spread of sample norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    /// Length of each class mean vector; the per-sample noise is unit Gaussian.
    pub center_scale: f64,
    /// Smallest sample norm.
    pub min_norm: f64,
    /// Ratio of largest to smallest sample norm within a class (>= 1).
    pub norm_spread: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            num_classes: 10,
            dim: 32,
            samples_per_class: 200,
            test_per_class: 50,
            center_scale: 6.0,
            min_norm: 1.0,
            norm_spread: 10.0,
            seed: 0,
        }
    }
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.dim < 1 || self.samples_per_class < 1 {
            return Err(Error::InvalidConfig(
                "blobs need >= 2 classes, dim >= 1 and >= 1 sample per class".into(),
            ));
        }
        if !(self.norm_spread >= 1.0) || !self.norm_spread.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "norm_spread must be >= 1, got {}",
                self.norm_spread
            )));
        }
        if !(self.min_norm > 0.0) || !(self.center_scale >= 0.0) {
            return Err(Error::InvalidConfig("min_norm must be > 0 and center_scale >= 0".into()));
        }
        Ok(())
    }
}

/// Class mean directions drawn by [`make_blobs`] for a given spec, `[C, d]`.
pub fn blob_centers(spec: &BlobSpec) -> Result<Tensor> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed).fork(0);
    let mut centers = Tensor::randn(&mut rng, &[spec.num_classes, spec.dim], 0.0, 1.0)?;
    for i in 0..spec.num_classes {
        let row = centers.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        row.iter_mut().for_each(|v| *v *= spec.center_scale / n);
    }
    Ok(centers)
}

fn blob_split(spec: &BlobSpec, centers: &Tensor, per_class: usize, rng: &mut Rng) -> Result<Split> {
    let (c, d) = (spec.num_classes, spec.dim);
    let mut data = Vec::with_capacity(c * per_class * d);
    let mut labels = Vec::with_capacity(c * per_class);
    for class in 0..c {
        for _ in 0..per_class {
            let mut v: Vec<f64> = centers.row(class).iter().map(|&m| m + rng.normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let target = rng.uniform(spec.min_norm, spec.min_norm * spec.norm_spread);
            let k = if n > 0.0 { target / n } else { 0.0 };
            v.iter_mut().for_each(|x| *x *= k);
            data.extend(v);
            labels.push(class);
        }
    }
    Split::new(Tensor::new(vec![c * per_class, d], data)?, labels)
}

/// Samples `center + N(0, I)` and rescales each to a norm drawn uniformly
/// from `[min_norm, min_norm * norm_spread]`. Rows are grouped by class.
pub fn make_blobs(spec: &BlobSpec) -> Result<Dataset> {
    let centers = blob_centers(spec)?;
    let base = Rng::new(spec.seed);
    let train = blob_split(spec, &centers, spec.samples_per_class, &mut base.fork(1))?;
    let test = if spec.test_per_class > 0 {
        Some(blob_split(spec, &centers, spec.test_per_class, &mut base.fork(2))?)
    } else {
        None
    };
    Dataset::new(train, test, spec.num_classes, Provenance::SyntheticBlobs)
}

/// Where a training run gets its data. Relative paths resolve against the
/// directory passed to [`DataSource::load`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Blobs(BlobSpec),
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
    },
    Csv {
        train: PathBuf,
        test: Option<PathBuf>,
        label_column: String,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Blobs(BlobSpec::default())
    }
}

impl DataSource {
    pub fn load(&self, base_dir: &Path) -> Result<Dataset> {
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base_dir.join(p) };
        match self {
            DataSource::Blobs(spec) => make_blobs(spec),
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let train = load_idx(&resolve(train_images), &resolve(train_labels))?;
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(load_idx(&resolve(i), &resolve(l))?),
                    (None, None) => None,
                    _ => {
                        return Err(Error::InvalidConfig(
                            "test_images and test_labels must be given together".into(),
                        ))
                    }
                };
                let classes = train.num_classes().max(test.as_ref().map_or(0, Split::num_classes));
                Dataset::new(train, test, classes, Provenance::IdxFiles)
            }
            DataSource::Csv {
                train,
                test,
                label_column,
            } => {
                let train = load_csv(&resolve(train), label_column)?;
                let test = test.as_ref().map(|t| load_csv(&resolve(t), label_column)).transpose()?;
                let classes = train.num_classes().max(test.as_ref().map_or(0, Split::num_classes));
                Dataset::new(train, test, classes, Provenance::Csv)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomsim::min_pairwise_angle;

    fn small(seed: u64, spread: f64) -> BlobSpec {
        BlobSpec {
            num_classes: 3,
            dim: 4,
            samples_per_class: 20,
            test_per_class: 5,
            norm_spread: spread,
            seed,
            ..BlobSpec::default()
        }
    }

    #[test]
    fn unit_spread_gives_equal_norms() {
        let ds = make_blobs(&small(1, 1.0)).unwrap();
        for r in ds.train.x.iter_rows() {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn norms_cover_the_requested_range() {
        let ds = make_blobs(&small(4, 10.0)).unwrap();
        let norms: Vec<f64> = ds
            .train
            .x
            .iter_rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        assert!(norms.iter().all(|&n| (1.0 - 1e-12..=10.0 + 1e-12).contains(&n)));
        let max = norms.iter().cloned().fold(0.0, f64::max);
        assert!(max > 5.0);
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(make_blobs(&small(7, 10.0)).unwrap(), make_blobs(&small(7, 10.0)).unwrap());
        assert_ne!(make_blobs(&small(7, 10.0)).unwrap(), make_blobs(&small(8, 10.0)).unwrap());
    }

    #[test]
    fn split_sizes_and_labels() {
        let ds = make_blobs(&small(2, 3.0)).unwrap();
        assert_eq!(ds.train.x.shape(), &[60, 4]);
        assert_eq!(ds.test.as_ref().unwrap().len(), 15);
        assert_eq!(ds.train.num_classes(), 3);
    }

    #[test]
    fn invalid_spread_rejected() {
        assert!(make_blobs(&small(1, 0.5)).is_err());
    }

    #[test]
    fn class_directions_are_distinct() {
        for seed in 0..100 {
            let spec = BlobSpec {
                num_classes: 5,
                dim: 4,
                seed,
                ..BlobSpec::default()
            };
            assert!(min_pairwise_angle(&blob_centers(&spec).unwrap()) > 1.0, "seed {seed}");
        }
    }
}
