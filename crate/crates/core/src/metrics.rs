//! Angle-based discriminability metrics over labeled feature vectors.
//!
//! All quantities are computed on unit-normalized vectors, so they are
//! invariant to a positive rescaling of any sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Norms at or below this are treated as zero vectors.
pub const ZERO_NORM: f64 = 1e-12;

/// Feature rows `[N, d]` with integer class labels in `0..num_classes`.
#[derive(Clone, Debug)]
pub struct LabeledFeatures {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledFeatures {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: features.shape().to_vec(),
                reason: "features must be [N, d]".into(),
            });
        }
        if labels.len() != features.rows() {
            return Err(Error::ShapeMismatch {
                op: "labeled features",
                lhs: features.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(i) = features.iter_rows().position(|r| norm(r) <= ZERO_NORM) {
            return Err(Error::Degenerate(format!("feature row {i} has zero norm")));
        }
        Ok(LabeledFeatures {
            features,
            labels,
            num_classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.row_len()
    }
}

/// Per-class mean of unit-normalized member features.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassCenters {
    pub centers: Tensor,
}

impl ClassCenters {
    pub fn num_classes(&self) -> usize {
        self.centers.rows()
    }

    /// Classes whose center collapsed to (numerically) the zero vector.
    pub fn degenerate_classes(&self) -> Vec<usize> {
        self.centers
            .iter_rows()
            .enumerate()
            .filter(|(_, r)| norm(r) <= ZERO_NORM)
            .map(|(i, _)| i)
            .collect()
    }

    fn require_nondegenerate(&self) -> Result<()> {
        match self.degenerate_classes().first() {
            None => Ok(()),
            Some(c) => Err(Error::Degenerate(format!("class {c} has a zero-norm center"))),
        }
    }
}

/// Discriminability summary for one feature set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub intra_train: f64,
    pub intra_test: Option<f64>,
    pub inter: f64,
    pub iir_train: f64,
    pub iir_test: Option<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Angle between two vectors in degrees.
///
/// Uses `2 atan2(|u - v|, |u + v|)` on the unit vectors, which stays accurate
/// near 0 and 180 degrees where `acos` of the cosine does not.
pub fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    (2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees()
}

pub fn compute_centers(train: &LabeledFeatures) -> Result<ClassCenters> {
    let d = train.dim();
    let mut sums = vec![0.0; train.num_classes * d];
    let mut counts = vec![0usize; train.num_classes];
    for (row, &label) in train.features.iter_rows().zip(&train.labels) {
        let n = norm(row);
        for (s, &v) in sums[label * d..(label + 1) * d].iter_mut().zip(row) {
            *s += v / n;
        }
        counts[label] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    for (chunk, &n) in sums.chunks_mut(d).zip(&counts) {
        chunk.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(ClassCenters {
        centers: Tensor::new(vec![train.num_classes, d], sums)?,
    })
}

/// Mean angle, in degrees, between each sample and its class center.
pub fn intra_angle(data: &LabeledFeatures, centers: &ClassCenters) -> Result<f64> {
    centers.require_nondegenerate()?;
    if centers.num_classes() < data.num_classes || centers.centers.row_len() != data.dim() {
        return Err(Error::ShapeMismatch {
            op: "intra_angle",
            lhs: data.features.shape().to_vec(),
            rhs: centers.centers.shape().to_vec(),
        });
    }
    let total: f64 = data
        .features
        .iter_rows()
        .zip(&data.labels)
        .map(|(row, &l)| angle_deg(row, centers.centers.row(l)))
        .sum();
    Ok(total / data.labels.len() as f64)
}

/// Mean over classes of the smallest angle to any other class center.
pub fn inter_angle(centers: &ClassCenters) -> Result<f64> {
    let c = centers.num_classes();
    if c < 2 {
        return Err(Error::InvalidConfig(format!(
            "inter-angle needs at least 2 classes, got {c}"
        )));
    }
    centers.require_nondegenerate()?;
    let classes: Vec<usize> = (0..c).collect();
    let mins = par::map_collect(&classes, |&i| {
        (0..c)
            .filter(|&j| j != i)
            .map(|j| angle_deg(centers.centers.row(i), centers.centers.row(j)))
            .fold(f64::INFINITY, f64::min)
    });
    Ok(mins.iter().sum::<f64>() / c as f64)
}

/// Intra-angle over inter-angle; smaller means more discriminative.
pub fn iir(intra: f64, inter: f64) -> Result<f64> {
    if !(inter > 0.0) {
        return Err(Error::Degenerate(format!("inter-angle must be positive, got {inter}")));
    }
    Ok(intra / inter)
}

/// Centers come from `train`; `test` only contributes an intra-angle
/// measured against those centers.
pub fn angle_report(train: &LabeledFeatures, test: Option<&LabeledFeatures>) -> Result<AngleReport> {
    let centers = compute_centers(train)?;
    let intra_train = intra_angle(train, &centers)?;
    let inter = inter_angle(&centers)?;
    let intra_test = test.map(|t| intra_angle(t, &centers)).transpose()?;
    Ok(AngleReport {
        intra_train,
        intra_test,
        inter,
        iir_train: iir(intra_train, inter)?,
        iir_test: intra_test.map(|t| iir(t, inter)).transpose()?,
    })
}
