//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls forward passes, so it stays independent
//! of the analytic backward code it is checking.

use serde::Serialize;

use crate::error::Result;
use crate::model::{cross_entropy, Stack};
use crate::norm::{Mode, NormKind, NormLayer, NormSpec};
use crate::tensor::{Rng, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradient norms below this are compared in absolute terms; finite
/// differences cannot resolve a zero gradient more finely than roundoff.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a - b|_2 / max(|a|_2, |b|_2, GRAD_FLOOR)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(GRAD_FLOOR)
}

/// Central differences of a scalar function of `x`.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe)?;
        probe[i] = orig - step;
        let minus = f(&probe)?;
        probe[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct GradEntry {
    pub name: String,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub kind: String,
    pub shape: Vec<usize>,
    pub entries: Vec<GradEntry>,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.entries.iter().all(|e| e.rel_error <= tol)
    }
}

/// Rank-4-only kinds are checked on rank-2 shapes as `[N, C, 1, 1]`.
pub fn shape_for_kind(kind: NormKind, shape: &[usize]) -> Vec<usize> {
    if kind.needs_rank4() && shape.len() == 2 {
        vec![shape[0], shape[1], 1, 1]
    } else {
        shape.to_vec()
    }
}

/// Checks `grad_in`, `grad_gamma` and `grad_beta` of one train-mode layer
/// against finite differences of `loss = sum(w * y)` for a random `w`.
pub fn check_norm_layer(spec: NormSpec, shape: &[usize], seed: u64, step: f64) -> Result<GradReport> {
    let shape = shape_for_kind(spec.kind, shape);
    let mut rng = Rng::new(seed);
    let x = Tensor::randn(&mut rng, &shape, 0.3, 1.0)?;
    let w = Tensor::randn(&mut rng, &shape, 0.0, 1.0)?;

    let mut layer = NormLayer::new(spec, shape[1])?;
    for p in layer.params_mut() {
        let n = p.value.len();
        let jitter = Tensor::randn(&mut rng, &[n], 0.0, 0.5)?;
        p.value.axpy(1.0, &jitter)?;
    }
    let template = layer.clone();

    let loss_of = |layer: &NormLayer, x: &Tensor| -> Result<f64> {
        let mut l = layer.clone();
        let y = l.forward(x)?;
        Ok(y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
    };

    layer.forward(&x)?;
    let grad_in = layer.backward(&w)?;

    let mut entries = Vec::new();
    let num_in = numeric_grad(
        |xs| loss_of(&template, &Tensor::new(shape.clone(), xs.to_vec())?),
        x.data(),
        step,
    )?;
    entries.push(GradEntry {
        name: "grad_in".into(),
        rel_error: rel_error(grad_in.data(), &num_in),
    });

    for (name, which) in [("grad_gamma", 0usize), ("grad_beta", 1)] {
        let analytic = match which {
            0 => layer.state.gamma.as_ref(),
            _ => layer.state.beta.as_ref(),
        };
        let Some(analytic) = analytic else { continue };
        let numeric = numeric_grad(
            |vals| {
                let mut l = template.clone();
                let p = if which == 0 {
                    l.state.gamma.as_mut()
                } else {
                    l.state.beta.as_mut()
                };
                p.expect("affine param present").value.data_mut().copy_from_slice(vals);
                loss_of(&l, &x)
            },
            match which {
                0 => template.state.gamma.as_ref(),
                _ => template.state.beta.as_ref(),
            }
            .expect("affine param present")
            .value
            .data(),
            step,
        )?;
        entries.push(GradEntry {
            name: name.into(),
            rel_error: rel_error(analytic.grad.data(), &numeric),
        });
    }

    Ok(GradReport {
        kind: spec.kind.to_string(),
        shape,
        entries,
    })
}

/// Adds Gaussian noise to every parameter. Freshly built stacks have zero
/// biases, and a ReLU row that is entirely zero then reaches an l2 stage
/// exactly at its non-differentiable floor; jittering moves the check point
/// off such kinks.
pub fn jitter_params(stack: &mut Stack, rng: &mut Rng, std: f64) -> Result<()> {
    for p in stack.params_mut() {
        let noise = Tensor::randn(rng, p.value.shape(), 0.0, std)?;
        p.value.axpy(1.0, &noise)?;
    }
    Ok(())
}

/// Checks a whole stack: gradients of the mean cross-entropy w.r.t. the input
/// and every parameter, one entry per parameter tensor.
pub fn check_stack(stack: &Stack, x: &Tensor, labels: &[usize], step: f64) -> Result<GradReport> {
    let loss_of = |s: &Stack, x: &Tensor| -> Result<f64> {
        let mut s = s.clone();
        let (logits, _) = s.forward(x, Mode::Train)?;
        Ok(cross_entropy(&logits, labels)?.0)
    };

    let mut analytic = stack.clone();
    analytic.zero_grad();
    let (logits, _) = analytic.forward(x, Mode::Train)?;
    let (_, g) = cross_entropy(&logits, labels)?;
    let grad_in = analytic.backward(&g)?;

    let num_in = numeric_grad(|xs| loss_of(stack, &Tensor::new(x.shape().to_vec(), xs.to_vec())?), x.data(), step)?;
    let mut entries = vec![GradEntry {
        name: "input".into(),
        rel_error: rel_error(grad_in.data(), &num_in),
    }];

    for (li, layer) in analytic.layers().iter().enumerate() {
        for (pi, p) in layer.params().into_iter().enumerate() {
            let numeric = numeric_grad(
                |vals| {
                    let mut s = stack.clone();
                    s.layers_mut()[li].params_mut()[pi].value.data_mut().copy_from_slice(vals);
                    loss_of(&s, x)
                },
                stack.layers()[li].params()[pi].value.data(),
                step,
            )?;
            entries.push(GradEntry {
                name: format!("layer {li} ({}) param {pi}", layer.name()),
                rel_error: rel_error(p.grad.data(), &numeric),
            });
        }
    }

    Ok(GradReport {
        kind: "stack".into(),
        shape: x.shape().to_vec(),
        entries,
    })
}
