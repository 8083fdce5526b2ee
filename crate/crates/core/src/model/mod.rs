//! Small classifiers with pluggable normalization after every linear or
//! convolution layer, ahead of the activation.

mod layers;
mod train;

pub use layers::{global_avg_pool, global_avg_pool_backward, Conv3x3, Linear, Relu};
pub use train::{cross_entropy, evaluate, sgd_step, train, EpochRecord, ModelConfig, TrainConfig, TrainOutcome};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norm::{Mode, NormKind, NormLayer, NormSpec};
use crate::param::Param;
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Arch {
    /// flatten → [linear → norm → relu] per hidden width → classifier.
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        num_classes: usize,
    },
    /// conv3x3(in→c0) → norm → relu → conv3x3(c0→c1, stride 2) → norm → relu
    /// → global average pool → classifier.
    Cnn {
        in_channels: usize,
        channels: [usize; 2],
        num_classes: usize,
    },
}

impl Arch {
    pub fn norm_positions(&self) -> usize {
        match self {
            Arch::Mlp { hidden, .. } => hidden.len(),
            Arch::Cnn { .. } => 2,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Arch::Mlp { num_classes, .. } | Arch::Cnn { num_classes, .. } => *num_classes,
        }
    }

    fn norm_widths(&self) -> Vec<usize> {
        match self {
            Arch::Mlp { hidden, .. } => hidden.clone(),
            Arch::Cnn { channels, .. } => channels.to_vec(),
        }
    }
}

/// Which normalization positions receive the l2 composite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    None,
    /// Only the position whose output feeds the classifier.
    ClassifierOnly,
    /// The first half of the positions (rounded down, at least one).
    EarlyStages,
    /// The remaining positions, including the last.
    LateStages,
    All,
}

impl Placement {
    pub const ALL: [Placement; 5] = [
        Placement::None,
        Placement::ClassifierOnly,
        Placement::EarlyStages,
        Placement::LateStages,
        Placement::All,
    ];

    /// Whether position `pos` of `total` is rewritten.
    pub fn selects(self, pos: usize, total: usize) -> bool {
        let early = (total / 2).max(1);
        match self {
            Placement::None => false,
            Placement::ClassifierOnly => pos + 1 == total,
            Placement::EarlyStages => pos < early,
            Placement::LateStages => pos >= early || total == 1,
            Placement::All => true,
        }
    }

    /// Per-position kinds: `l2_kind` where selected, `base` elsewhere.
    pub fn kinds(self, total: usize, base: NormKind, l2_kind: NormKind) -> Vec<NormKind> {
        (0..total)
            .map(|p| if self.selects(p, total) { l2_kind } else { base })
            .collect()
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::None => "none",
            Placement::ClassifierOnly => "classifier_only",
            Placement::EarlyStages => "early_stages",
            Placement::LateStages => "late_stages",
            Placement::All => "all",
        })
    }
}

impl FromStr for Placement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Placement::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown placement {s:?}")))
    }
}

/// Everything needed to rebuild a stack's structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackDescriptor {
    pub arch: Arch,
    /// One spec per normalization position, in forward order.
    pub norms: Vec<NormSpec>,
}

impl StackDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.norms.len() != self.arch.norm_positions() {
            return Err(Error::InvalidConfig(format!(
                "architecture has {} norm positions but {} specs were given",
                self.arch.norm_positions(),
                self.norms.len()
            )));
        }
        for s in &self.norms {
            s.validate()?;
        }
        Ok(())
    }
}

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum Layer {
    Flatten { in_shape: Option<Vec<usize>> },
    Linear(Linear),
    Conv(Conv3x3),
    Norm(NormLayer),
    Relu(Relu),
    GlobalAvgPool { in_shape: Option<Vec<usize>> },
    Classifier(Linear),
}

impl Layer {
    pub fn name(&self) -> String {
        match self {
            Layer::Flatten { .. } => "flatten".into(),
            Layer::Linear(l) => format!("linear({}->{})", l.inputs(), l.outputs()),
            Layer::Conv(c) => format!("conv3x3({}->{}, stride {})", c.in_channels, c.out_channels, c.stride),
            Layer::Norm(n) => format!("norm({})", n.spec.kind),
            Layer::Relu(_) => "relu".into(),
            Layer::GlobalAvgPool { .. } => "global_avg_pool".into(),
            Layer::Classifier(l) => format!("classifier({}->{})", l.inputs(), l.outputs()),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let keep = mode == Mode::Train;
        match self {
            Layer::Flatten { in_shape } => {
                *in_shape = Some(x.shape().to_vec());
                x.reshape(&[x.rows(), x.row_len()])
            }
            Layer::Linear(l) | Layer::Classifier(l) => {
                if x.rank() != 2 || x.row_len() != l.inputs() {
                    return Err(Error::ShapeMismatch {
                        op: "linear input",
                        lhs: x.shape().to_vec(),
                        rhs: vec![l.inputs(), l.outputs()],
                    });
                }
                l.forward(x, keep)
            }
            Layer::Conv(c) => c.forward(x, keep),
            Layer::Norm(n) => {
                n.set_mode(mode);
                n.forward(x)
            }
            Layer::Relu(r) => Ok(r.forward(x, keep)),
            Layer::GlobalAvgPool { in_shape } => {
                *in_shape = Some(x.shape().to_vec());
                global_avg_pool(x)
            }
        }
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Flatten { in_shape } => {
                let s = in_shape
                    .as_ref()
                    .ok_or_else(|| Error::InvalidState("flatten backward before forward".into()))?;
                grad.reshape(s)
            }
            Layer::Linear(l) | Layer::Classifier(l) => l.backward(grad),
            Layer::Conv(c) => c.backward(grad),
            Layer::Norm(n) => n.backward(grad),
            Layer::Relu(r) => r.backward(grad),
            Layer::GlobalAvgPool { in_shape } => {
                let s = in_shape
                    .as_ref()
                    .ok_or_else(|| Error::InvalidState("pool backward before forward".into()))?;
                global_avg_pool_backward(grad, s)
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Linear(l) | Layer::Classifier(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Norm(n) => n.params_mut().collect(),
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Linear(l) | Layer::Classifier(l) => vec![&l.weight, &l.bias],
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::Norm(n) => n.state.params().collect(),
            _ => Vec::new(),
        }
    }
}

/// An ordered layer stack ending in exactly one classifier.
#[derive(Clone, Debug)]
pub struct Stack {
    descriptor: StackDescriptor,
    layers: Vec<Layer>,
}

impl Stack {
    pub fn build(descriptor: StackDescriptor, rng: &mut Rng) -> Result<Stack> {
        descriptor.validate()?;
        let mut layers = Vec::new();
        let widths = descriptor.arch.norm_widths();
        let norm = |i: usize| NormLayer::new(descriptor.norms[i], widths[i]).map(Layer::Norm);
        match &descriptor.arch {
            Arch::Mlp {
                input_dim,
                hidden,
                num_classes,
            } => {
                layers.push(Layer::Flatten { in_shape: None });
                let mut prev = *input_dim;
                for (i, &h) in hidden.iter().enumerate() {
                    layers.push(Layer::Linear(Linear::new(rng, prev, h, 2.0)?));
                    layers.push(norm(i)?);
                    layers.push(Layer::Relu(Relu::default()));
                    prev = h;
                }
                layers.push(Layer::Classifier(Linear::new(rng, prev, *num_classes, 1.0)?));
            }
            Arch::Cnn {
                in_channels,
                channels,
                num_classes,
            } => {
                layers.push(Layer::Conv(Conv3x3::new(rng, *in_channels, channels[0], 1)?));
                layers.push(norm(0)?);
                layers.push(Layer::Relu(Relu::default()));
                layers.push(Layer::Conv(Conv3x3::new(rng, channels[0], channels[1], 2)?));
                layers.push(norm(1)?);
                layers.push(Layer::Relu(Relu::default()));
                layers.push(Layer::GlobalAvgPool { in_shape: None });
                layers.push(Layer::Classifier(Linear::new(rng, channels[1], *num_classes, 1.0)?));
            }
        }
        Ok(Stack { descriptor, layers })
    }

    pub fn descriptor(&self) -> &StackDescriptor {
        &self.descriptor
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn norm_layers(&self) -> impl Iterator<Item = &NormLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Norm(n) => Some(n),
            _ => None,
        })
    }

    pub fn norm_layers_mut(&mut self) -> impl Iterator<Item = &mut NormLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Norm(n) => Some(n),
            _ => None,
        })
    }

    /// Returns the logits and the classifier input features.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        let mut h = x.clone();
        let mut features = None;
        for (index, layer) in self.layers.iter_mut().enumerate() {
            if matches!(layer, Layer::Classifier(_)) {
                features = Some(h.clone());
            }
            h = layer.forward(&h, mode).map_err(|e| Error::Layer {
                index,
                name: layer.name(),
                source: Box::new(e),
            })?;
        }
        let features = features.ok_or_else(|| Error::InvalidState("stack has no classifier".into()))?;
        Ok((h, features))
    }

    /// Backpropagates from the logits, accumulating every parameter gradient.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let mut g = grad_logits.clone();
        for (index, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&g).map_err(|e| Error::Layer {
                index,
                name: layer.name(),
                source: Box::new(e),
            })?;
        }
        Ok(g)
    }

    /// Parameters in declaration order.
    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Rewrites each norm position's kind according to `policy`.
    pub fn apply_placement(&mut self, policy: Placement, base: NormKind, l2_kind: NormKind) -> Result<()> {
        let total = self.descriptor.norms.len();
        let kinds = policy.kinds(total, base, l2_kind);
        for (layer, kind) in self.norm_layers_mut().zip(&kinds) {
            let spec = layer.spec.with_kind(*kind);
            spec.validate()?;
            if spec.has_affine() != layer.spec.has_affine()
                || spec.kind.uses_batch_stats() != layer.spec.kind.uses_batch_stats()
            {
                *layer = NormLayer::new(spec, layer.state.num_features())?;
            } else {
                layer.spec = spec;
            }
        }
        for (s, k) in self.descriptor.norms.iter_mut().zip(kinds) {
            s.kind = k;
        }
        Ok(())
    }
}

/// Descriptor for `arch` with `base` spec at every position, rewritten by
/// `placement`.
pub fn descriptor_for(arch: Arch, base: NormSpec, placement: Placement, l2_kind: NormKind) -> StackDescriptor {
    let kinds = placement.kinds(arch.norm_positions(), base.kind, l2_kind);
    StackDescriptor {
        norms: kinds.into_iter().map(|k| base.with_kind(k)).collect(),
        arch,
    }
}

#[cfg(test)]
mod tests;
