//! The normalization-layer zoo: l2, BN, LN, IN, PN, GN and the composites
//! L2BN, LNBN, INBN, PNBN.

mod kernels;
mod layer;
mod ops;
mod spec;

pub use kernels::Layout;
pub use layer::NormLayer;
pub use ops::{
    backward, bn_backward, bn_forward, composite_forward, forward, gn_forward, in_forward, l2_backward, l2_forward,
    ln_forward, pn_forward, sample_norm_backward, BackwardCache, L2Cache, NormGrads, StdCache,
};
pub use spec::{NormKind, NormSpec, DEFAULT_EPS_L2, DEFAULT_EPS_VAR, DEFAULT_MOMENTUM};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::param::Param;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Learnable and running state of one normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NormState {
    pub gamma: Option<Param>,
    pub beta: Option<Param>,
    pub running_mean: Option<Tensor>,
    pub running_var: Option<Tensor>,
    pub batches_tracked: u64,
    pub mode: Mode,
    num_features: usize,
}

impl NormState {
    /// gamma = 1 and beta = 0 when the spec is affine; running mean 0 and
    /// running variance 1 for kinds that use batch statistics.
    pub fn new(spec: &NormSpec, num_features: usize) -> Result<Self> {
        spec.validate()?;
        let (gamma, beta) = if spec.has_affine() {
            (
                Some(Param::new(Tensor::ones(&[num_features])?)?),
                Some(Param::new(Tensor::zeros(&[num_features])?)?),
            )
        } else {
            (None, None)
        };
        let (running_mean, running_var) = if spec.kind.uses_batch_stats() {
            (Some(Tensor::zeros(&[num_features])?), Some(Tensor::ones(&[num_features])?))
        } else {
            (None, None)
        };
        Ok(NormState {
            gamma,
            beta,
            running_mean,
            running_var,
            batches_tracked: 0,
            mode: Mode::Train,
            num_features,
        })
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.gamma.iter_mut().chain(self.beta.iter_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.gamma.iter().chain(self.beta.iter())
    }
}
