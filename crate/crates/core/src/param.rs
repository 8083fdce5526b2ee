use crate::error::Result;
use crate::tensor::Tensor;

/// A learnable tensor with its accumulated gradient and SGD momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Result<Self> {
        let grad = Tensor::zeros(value.shape())?;
        let velocity = grad.clone();
        Ok(Param {
            value,
            grad,
            velocity,
        })
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}
