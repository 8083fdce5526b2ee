use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{descriptor_for, Arch, Placement, Stack, StackDescriptor};
use crate::data::{DataSource, Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{angle_report, AngleReport, LabeledFeatures, ZERO_NORM};
use crate::norm::{Mode, NormKind, NormSpec};
use crate::param::Param;
use crate::tensor::{Rng, Tensor};

/// Rows evaluated per forward pass when measuring accuracy and features.
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Mlp { hidden: Vec<usize> },
    Cnn { channels: [usize; 2] },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Mlp { hidden: vec![128, 128] }
    }
}

impl ModelConfig {
    pub fn arch_for(&self, data: &Dataset) -> Result<Arch> {
        let shape = data.sample_shape();
        match self {
            ModelConfig::Mlp { hidden } => Ok(Arch::Mlp {
                input_dim: shape.iter().product(),
                hidden: hidden.clone(),
                num_classes: data.num_classes,
            }),
            ModelConfig::Cnn { channels } => match *shape {
                [c, _, _] => Ok(Arch::Cnn {
                    in_channels: c,
                    channels: *channels,
                    num_classes: data.num_classes,
                }),
                _ => Err(Error::InvalidConfig(format!(
                    "cnn needs image samples [C, H, W], dataset has {shape:?}"
                ))),
            },
        }
    }
}

/// A complete training run definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub model: ModelConfig,
    /// Spec for every norm position; its kind is used where the placement
    /// policy does not apply `l2_kind`.
    pub norm: NormSpec,
    pub placement: Placement,
    pub l2_kind: NormKind,
    /// Explicit per-position kinds; overrides `norm.kind` and `placement`.
    pub norm_kinds: Option<Vec<NormKind>>,
    pub data: DataSource,
    /// Kernels are order-preserving, so runs are reproducible either way;
    /// recorded in the manifest.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            model: ModelConfig::default(),
            norm: NormSpec::new(NormKind::Bn),
            placement: Placement::None,
            l2_kind: NormKind::L2Bn,
            norm_kinds: None,
            data: DataSource::default(),
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be >= 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(
                "need learning_rate > 0, 0 <= momentum < 1, weight_decay >= 0".into(),
            ));
        }
        self.norm.validate()
    }

    pub fn descriptor(&self, data: &Dataset) -> Result<StackDescriptor> {
        let arch = self.model.arch_for(data)?;
        let desc = match &self.norm_kinds {
            Some(kinds) => StackDescriptor {
                norms: kinds.iter().map(|&k| self.norm.with_kind(k)).collect(),
                arch,
            },
            None => descriptor_for(arch, self.norm, self.placement, self.l2_kind),
        };
        desc.validate()?;
        Ok(desc)
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub angles: AngleReport,
    pub wall_ms: u64,
}

impl EpochRecord {
    /// Equality ignoring the wall-clock column.
    pub fn same_metrics(&self, other: &EpochRecord) -> bool {
        EpochRecord {
            wall_ms: other.wall_ms,
            ..self.clone()
        } == *other
    }
}

pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub stack: Stack,
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let (b, c) = (logits.rows(), logits.row_len());
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidConfig(format!("label {bad} out of range for {c} classes")));
    }
    let mut grad = vec![0.0; b * c];
    let mut loss = 0.0;
    for ((row, g), &label) in logits.iter_rows().zip(grad.chunks_mut(c)).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[label];
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - lse).exp() / b as f64;
        }
        g[label] -= 1.0 / b as f64;
    }
    Ok((loss / b as f64, Tensor::new(vec![b, c], grad)?))
}

/// SGD with momentum and L2 weight decay:
/// `v = momentum * v + grad + wd * param; param -= lr * v`.
pub fn sgd_step(params: &mut [&mut Param], lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    for p in params.iter_mut() {
        let Param { value, grad, velocity } = &mut **p;
        for ((v, &g), w) in velocity.data_mut().iter_mut().zip(grad.data()).zip(value.data_mut()) {
            *v = momentum * *v + g + weight_decay * *w;
            *w -= lr * *v;
        }
    }
    Ok(())
}

fn predicted(logits: &Tensor) -> impl Iterator<Item = usize> + '_ {
    logits.iter_rows().map(|r| {
        r.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    })
}

/// Eval-mode accuracy and classifier-input features for a split.
pub fn evaluate(stack: &mut Stack, split: &Split) -> Result<(f64, Tensor)> {
    let n = split.len();
    let mut correct = 0usize;
    let mut feats: Vec<f64> = Vec::new();
    let mut width = 0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let x = split.x.slice_rows(start, end)?;
        let (logits, f) = stack.forward(&x, Mode::Eval)?;
        correct += predicted(&logits)
            .zip(&split.y[start..end])
            .filter(|(p, y)| p == *y)
            .count();
        width = f.row_len();
        feats.extend_from_slice(f.data());
    }
    Ok((correct as f64 / n as f64, Tensor::new(vec![n, width], feats)?))
}

/// Features with zero-norm rows removed; angles are undefined for them.
fn labeled(features: &Tensor, labels: &[usize], num_classes: usize) -> Result<LabeledFeatures> {
    let keep: Vec<usize> = features
        .iter_rows()
        .enumerate()
        .filter(|(_, r)| r.iter().map(|v| v * v).sum::<f64>().sqrt() > ZERO_NORM)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::Degenerate("every feature row is zero".into()));
    }
    LabeledFeatures::new(
        features.select_rows(&keep)?,
        keep.iter().map(|&i| labels[i]).collect(),
        num_classes,
    )
}

/// Trains with SGD, recording accuracy and angle metrics after every epoch.
pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    let base = Rng::new(config.seed);
    let mut stack = Stack::build(config.descriptor(data)?, &mut base.fork(0))?;
    let mut shuffle_rng = base.fork(1);
    let n = data.train.len();
    if n < 2 {
        return Err(Error::InvalidConfig("need at least 2 training samples".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            // A trailing batch of one cannot be batch-normalized.
            if batch.len() < 2 {
                continue;
            }
            let x = data.train.x.select_rows(batch)?;
            let y: Vec<usize> = batch.iter().map(|&i| data.train.y[i]).collect();
            stack.zero_grad();
            let (logits, _) = stack.forward(&x, Mode::Train)?;
            let (loss, grad) = cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: steps + 1,
                    loss,
                });
            }
            stack.backward(&grad)?;
            sgd_step(
                &mut stack.params_mut(),
                config.learning_rate,
                config.momentum,
                config.weight_decay,
            )?;
            loss_sum += loss;
            steps += 1;
        }

        let (train_acc, train_feats) = evaluate(&mut stack, &data.train)?;
        let train_lf = labeled(&train_feats, &data.train.y, data.num_classes)?;
        let (test_acc, test_lf) = match &data.test {
            Some(t) => {
                let (acc, f) = evaluate(&mut stack, t)?;
                (Some(acc), Some(labeled(&f, &t.y, data.num_classes)?))
            }
            None => (None, None),
        };
        let angles = angle_report(&train_lf, test_lf.as_ref())?;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / steps.max(1) as f64,
            train_acc,
            test_acc,
            angles,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok(TrainOutcome { records, stack })
}
