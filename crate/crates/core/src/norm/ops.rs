//! Forward and backward passes for every normalization kind.
//!
//! Forward functions return a cache only in train mode; backward functions
//! take the cache by value so each one is consumed exactly once.

use super::kernels::{self, Grouping, L2Pass, Layout};
use super::{Mode, NormKind, NormSpec, NormState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct L2Cache {
    pass: L2Pass,
    per_sample: usize,
    eps: f64,
    shape: Vec<usize>,
}

/// Saved standardization intermediates (BN, LN, IN, PN, GN).
#[derive(Clone, Debug)]
pub struct StdCache {
    groups: Vec<Vec<usize>>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    layout: Layout,
    shape: Vec<usize>,
    /// Whether the layer's gamma/beta took part in the forward pass.
    affine: bool,
}

#[derive(Clone, Debug)]
pub enum BackwardCache {
    L2(L2Cache),
    Standardize(StdCache),
    Composite { inner: Box<BackwardCache>, bn: StdCache },
}

/// Gradients produced by a normalization backward pass.
#[derive(Clone, Debug)]
pub struct NormGrads {
    pub input: Tensor,
    pub gamma: Option<Tensor>,
    pub beta: Option<Tensor>,
}

fn grouping_for(kind: NormKind, layout: Layout, shape: &[usize]) -> Result<Grouping> {
    if kind.needs_rank4() && shape.len() != 4 {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("{kind} needs a rank-4 [N, C, H, W] input"),
        });
    }
    Ok(match kind {
        NormKind::Bn => Grouping::ChannelAcrossBatch,
        NormKind::L2 | NormKind::Ln => Grouping::Sample,
        NormKind::In => Grouping::SampleChannel,
        NormKind::Pn => Grouping::Position,
        NormKind::Gn { channels_per_group } => {
            if !layout.c.is_multiple_of(channels_per_group) {
                return Err(Error::InvalidShape {
                    shape: shape.to_vec(),
                    reason: format!(
                        "{} channels not divisible by channels_per_group {channels_per_group}",
                        layout.c
                    ),
                });
            }
            Grouping::ChannelGroups(channels_per_group)
        }
        composite => {
            return Err(Error::InvalidConfig(format!(
                "{composite} is a composite, not a single standardization"
            )))
        }
    })
}

fn check_input(x: &Tensor, kind: NormKind) -> Result<Layout> {
    let layout = Layout::of(x)?;
    x.check_finite(&format!("{kind} forward input"))?;
    Ok(layout)
}

fn check_features(state: &NormState, layout: Layout, shape: &[usize]) -> Result<()> {
    let nf = state.num_features();
    if nf != 0 && nf != layout.c {
        return Err(Error::ShapeMismatch {
            op: "normalization features",
            lhs: shape.to_vec(),
            rhs: vec![nf],
        });
    }
    Ok(())
}

fn apply_affine(xhat: &[f64], layout: Layout, state: &NormState) -> Vec<f64> {
    match (&state.gamma, &state.beta) {
        (Some(g), Some(b)) => {
            let (g, b) = (g.value.data(), b.value.data());
            xhat.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = layout.channel_of(i);
                    g[c] * v + b[c]
                })
                .collect()
        }
        _ => xhat.to_vec(),
    }
}

/// Splits the output gradient into the gradient w.r.t. `xhat` and the
/// affine parameter gradients.
fn affine_backward(
    grad: &[f64],
    cache: &StdCache,
    state: &NormState,
) -> Result<(Vec<f64>, Option<Tensor>, Option<Tensor>)> {
    if !cache.affine {
        return Ok((grad.to_vec(), None, None));
    }
    let gamma = state
        .gamma
        .as_ref()
        .ok_or_else(|| Error::InvalidState("affine cache but state has no gamma".into()))?;
    let c = cache.layout.c;
    let (mut gg, mut gb) = (vec![0.0; c], vec![0.0; c]);
    let gv = gamma.value.data();
    let gx = grad
        .iter()
        .zip(&cache.xhat)
        .enumerate()
        .map(|(i, (&g, &xh))| {
            let ch = cache.layout.channel_of(i);
            gg[ch] += g * xh;
            gb[ch] += g;
            g * gv[ch]
        })
        .collect();
    Ok((gx, Some(Tensor::new(vec![c], gg)?), Some(Tensor::new(vec![c], gb)?)))
}

fn check_grad(grad: &Tensor, shape: &[usize]) -> Result<()> {
    if grad.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "normalization backward",
            lhs: grad.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    grad.check_finite("normalization backward gradient")
}

/// Per-sample l2 normalization over the whole flattened sample, optionally
/// rescaled by the square root of the per-sample element count.
pub fn l2_forward(x: &Tensor, spec: &NormSpec) -> Result<(Tensor, L2Cache)> {
    let layout = check_input(x, NormKind::L2)?;
    let per_sample = layout.per_sample();
    let factor = if spec.sqrt_numel_for_rank(x.rank()) {
        (per_sample as f64).sqrt()
    } else {
        1.0
    };
    let pass = kernels::l2_normalize(x.data(), per_sample, spec.eps_l2, factor);
    let y = Tensor::new(x.shape().to_vec(), pass.y.clone())?;
    Ok((
        y,
        L2Cache {
            pass,
            per_sample,
            eps: spec.eps_l2,
            shape: x.shape().to_vec(),
        },
    ))
}

pub fn l2_backward(grad: &Tensor, cache: L2Cache) -> Result<Tensor> {
    check_grad(grad, &cache.shape)?;
    let g = kernels::l2_normalize_backward(grad.data(), &cache.pass, cache.per_sample, cache.eps);
    Tensor::new(cache.shape, g)
}

/// Batch normalization. Train mode standardizes with the batch mean and
/// uncorrected variance and updates the running estimates; eval mode uses the
/// running estimates and returns no cache.
pub fn bn_forward(x: &Tensor, spec: &NormSpec, state: &mut NormState) -> Result<(Tensor, Option<StdCache>)> {
    let layout = check_input(x, NormKind::Bn)?;
    check_features(state, layout, x.shape())?;
    let (rm, rv) = match (&mut state.running_mean, &mut state.running_var) {
        (Some(m), Some(v)) => (m, v),
        _ => return Err(Error::InvalidState("batch norm state has no running statistics".into())),
    };
    match state.mode {
        Mode::Train => {
            if layout.n < 2 {
                return Err(Error::InvalidShape {
                    shape: x.shape().to_vec(),
                    reason: "batch norm in train mode needs a batch of at least 2".into(),
                });
            }
            let groups = Grouping::ChannelAcrossBatch.indices(layout);
            let st = kernels::standardize(x.data(), &groups, spec.eps_var);
            let mom = spec.momentum;
            for (r, &m) in rm.data_mut().iter_mut().zip(&st.mean) {
                *r = (1.0 - mom) * *r + mom * m;
            }
            for (r, &v) in rv.data_mut().iter_mut().zip(&st.var) {
                *r = (1.0 - mom) * *r + mom * v;
            }
            state.batches_tracked += 1;
            let y = Tensor::new(x.shape().to_vec(), apply_affine(&st.xhat, layout, state))?;
            y.check_finite("bn forward output")?;
            let cache = StdCache {
                groups,
                xhat: st.xhat,
                inv_std: st.inv_std,
                layout,
                shape: x.shape().to_vec(),
                affine: state.gamma.is_some(),
            };
            Ok((y, Some(cache)))
        }
        Mode::Eval => {
            if state.batches_tracked == 0 {
                return Err(Error::InvalidState(
                    "batch norm evaluated before any train-mode batch".into(),
                ));
            }
            let (m, v) = (rm.data(), rv.data());
            let inv: Vec<f64> = v.iter().map(|&v| 1.0 / (v + spec.eps_var).sqrt()).collect();
            let xhat: Vec<f64> = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, &xv)| {
                    let c = layout.channel_of(i);
                    (xv - m[c]) * inv[c]
                })
                .collect();
            let y = Tensor::new(x.shape().to_vec(), apply_affine(&xhat, layout, state))?;
            y.check_finite("bn forward output")?;
            Ok((y, None))
        }
    }
}

pub fn bn_backward(grad: &Tensor, cache: StdCache, state: &NormState) -> Result<NormGrads> {
    standardize_backward(grad, cache, state)
}

fn standardize_backward(grad: &Tensor, cache: StdCache, state: &NormState) -> Result<NormGrads> {
    check_grad(grad, &cache.shape)?;
    let (g_xhat, gamma, beta) = affine_backward(grad.data(), &cache, state)?;
    let gx = kernels::standardize_backward(&g_xhat, &cache.xhat, &cache.groups, &cache.inv_std);
    Ok(NormGrads {
        input: Tensor::new(cache.shape, gx)?,
        gamma,
        beta,
    })
}

/// Per-sample standardization (LN, IN, PN, GN). With `use_affine` false the
/// layer's gamma/beta are ignored, as inside a composite.
fn sample_norm_forward(
    x: &Tensor,
    kind: NormKind,
    spec: &NormSpec,
    state: &NormState,
    use_affine: bool,
) -> Result<(Tensor, Option<StdCache>)> {
    let layout = check_input(x, kind)?;
    let groups = grouping_for(kind, layout, x.shape())?.indices(layout);
    let st = kernels::standardize(x.data(), &groups, spec.eps_var);
    let affine = use_affine && state.gamma.is_some();
    let data = if affine {
        check_features(state, layout, x.shape())?;
        apply_affine(&st.xhat, layout, state)
    } else {
        st.xhat.clone()
    };
    let y = Tensor::new(x.shape().to_vec(), data)?;
    y.check_finite(&format!("{kind} forward output"))?;
    let cache = (state.mode == Mode::Train).then(|| StdCache {
        groups,
        xhat: st.xhat,
        inv_std: st.inv_std,
        layout,
        shape: x.shape().to_vec(),
        affine,
    });
    Ok((y, cache))
}

/// Layer normalization over each whole sample (all features, or all of
/// C·H·W for feature maps).
pub fn ln_forward(x: &Tensor, spec: &NormSpec, state: &NormState) -> Result<(Tensor, Option<StdCache>)> {
    sample_norm_forward(x, NormKind::Ln, spec, state, true)
}

/// Instance normalization: each channel of each sample over its spatial map.
pub fn in_forward(x: &Tensor, spec: &NormSpec, state: &NormState) -> Result<(Tensor, Option<StdCache>)> {
    sample_norm_forward(x, NormKind::In, spec, state, true)
}

/// Positional normalization: across channels at every spatial position.
pub fn pn_forward(x: &Tensor, spec: &NormSpec, state: &NormState) -> Result<(Tensor, Option<StdCache>)> {
    sample_norm_forward(x, NormKind::Pn, spec, state, true)
}

pub fn gn_forward(x: &Tensor, spec: &NormSpec, state: &NormState) -> Result<(Tensor, Option<StdCache>)> {
    if !matches!(spec.kind, NormKind::Gn { .. }) {
        return Err(Error::InvalidConfig(format!("gn_forward called with kind {}", spec.kind)));
    }
    sample_norm_forward(x, spec.kind, spec, state, true)
}

pub fn sample_norm_backward(grad: &Tensor, cache: StdCache, state: &NormState) -> Result<NormGrads> {
    standardize_backward(grad, cache, state)
}

fn inner_forward(
    x: &Tensor,
    inner: NormKind,
    spec: &NormSpec,
    state: &NormState,
) -> Result<(Tensor, Option<BackwardCache>)> {
    if inner == NormKind::L2 {
        let (y, c) = l2_forward(x, spec)?;
        let cache = (state.mode == Mode::Train).then_some(BackwardCache::L2(c));
        Ok((y, cache))
    } else {
        let (y, c) = sample_norm_forward(x, inner, spec, state, false)?;
        Ok((y, c.map(BackwardCache::Standardize)))
    }
}

/// A per-sample normalizer (no affine of its own) followed by BN. The running
/// statistics track the inner-normalized activations.
pub fn composite_forward(
    x: &Tensor,
    spec: &NormSpec,
    state: &mut NormState,
) -> Result<(Tensor, Option<BackwardCache>)> {
    let inner = spec
        .kind
        .inner()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a composite kind", spec.kind)))?;
    let (h, inner_cache) = inner_forward(x, inner, spec, state)?;
    let (y, bn_cache) = bn_forward(&h, spec, state)?;
    let cache = match (inner_cache, bn_cache) {
        (Some(i), Some(b)) => Some(BackwardCache::Composite {
            inner: Box::new(i),
            bn: b,
        }),
        _ => None,
    };
    Ok((y, cache))
}

/// Dispatches to the forward pass for `spec.kind`.
pub fn forward(x: &Tensor, spec: &NormSpec, state: &mut NormState) -> Result<(Tensor, Option<BackwardCache>)> {
    match spec.kind {
        NormKind::L2 => {
            let (y, c) = l2_forward(x, spec)?;
            Ok((y, (state.mode == Mode::Train).then_some(BackwardCache::L2(c))))
        }
        NormKind::Bn => {
            let (y, c) = bn_forward(x, spec, state)?;
            Ok((y, c.map(BackwardCache::Standardize)))
        }
        k if k.is_composite() => composite_forward(x, spec, state),
        k => {
            let (y, c) = sample_norm_forward(x, k, spec, state, true)?;
            Ok((y, c.map(BackwardCache::Standardize)))
        }
    }
}

/// Backward counterpart of [`forward`].
pub fn backward(grad: &Tensor, cache: BackwardCache, state: &NormState) -> Result<NormGrads> {
    match cache {
        BackwardCache::L2(c) => Ok(NormGrads {
            input: l2_backward(grad, c)?,
            gamma: None,
            beta: None,
        }),
        BackwardCache::Standardize(c) => standardize_backward(grad, c, state),
        BackwardCache::Composite { inner, bn } => {
            let g = bn_backward(grad, bn, state)?;
            let inner_grads = backward(&g.input, *inner, state)?;
            Ok(NormGrads {
                input: inner_grads.input,
                gamma: g.gamma,
                beta: g.beta,
            })
        }
    }
}
