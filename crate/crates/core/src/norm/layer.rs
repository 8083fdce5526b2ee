use super::ops::{self, BackwardCache};
use super::{Mode, NormSpec, NormState};
use crate::error::{Error, Result};
use crate::param::Param;
use crate::tensor::Tensor;

/// A normalization layer holding its spec, state and the cache of the most
/// recent train-mode forward pass.
#[derive(Clone, Debug)]
pub struct NormLayer {
    pub spec: NormSpec,
    pub state: NormState,
    cache: Option<BackwardCache>,
}

impl NormLayer {
    pub fn new(spec: NormSpec, num_features: usize) -> Result<Self> {
        Ok(NormLayer {
            state: NormState::new(&spec, num_features)?,
            spec,
            cache: None,
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.state.mode = mode;
        if mode == Mode::Eval {
            self.cache = None;
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, cache) = ops::forward(x, &self.spec, &mut self.state)?;
        self.cache = cache;
        Ok(y)
    }

    /// Consumes the cached forward pass, accumulates gamma/beta gradients and
    /// returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::InvalidState(format!(
                "{} backward without a pending train-mode forward (cache already consumed or never set)",
                self.spec.kind
            ))
        })?;
        let g = ops::backward(grad, cache, &self.state)?;
        if let (Some(p), Some(gg)) = (self.state.gamma.as_mut(), g.gamma.as_ref()) {
            p.grad.axpy(1.0, gg)?;
        }
        if let (Some(p), Some(gb)) = (self.state.beta.as_mut(), g.beta.as_ref()) {
            p.grad.axpy(1.0, gb)?;
        }
        Ok(g.input)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.state.params_mut()
    }
}
