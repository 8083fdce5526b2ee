//! Shape-agnostic kernels shared by every normalizer.
//!
//! Inputs are viewed as `[N, C, S]`: rank-2 `[b, d]` maps to `(b, d, 1)` and
//! rank-4 `[N, C, H, W]` to `(N, C, H*W)`. Each normalizer is then a choice of
//! index groups over that view.

use crate::error::{Error, Result};
use crate::tensor::{mean_var, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub c: usize,
    pub s: usize,
}

impl Layout {
    pub fn of(x: &Tensor) -> Result<Layout> {
        match *x.shape() {
            [n, c] => Ok(Layout { n, c, s: 1 }),
            [n, c, h, w] => Ok(Layout { n, c, s: h * w }),
            _ => Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: "normalization expects rank 2 [b, d] or rank 4 [N, C, H, W]".into(),
            }),
        }
    }

    pub fn per_sample(&self) -> usize {
        self.c * self.s
    }

    #[inline]
    pub fn channel_of(&self, idx: usize) -> usize {
        (idx / self.s) % self.c
    }
}

/// Which elements are standardized together.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grouping {
    /// One group per channel spanning batch and space (BN).
    ChannelAcrossBatch,
    /// One group per sample (LN, l2).
    Sample,
    /// One group per (sample, channel) spanning space (IN).
    SampleChannel,
    /// One group per (sample, position) spanning channels (PN).
    Position,
    /// Contiguous channel groups within each sample (GN).
    ChannelGroups(usize),
}

impl Grouping {
    pub fn indices(self, l: Layout) -> Vec<Vec<usize>> {
        let Layout { n, c, s } = l;
        match self {
            Grouping::ChannelAcrossBatch => (0..c)
                .map(|ch| {
                    (0..n)
                        .flat_map(|b| {
                            let base = (b * c + ch) * s;
                            base..base + s
                        })
                        .collect()
                })
                .collect(),
            Grouping::Sample => (0..n).map(|b| (b * c * s..(b + 1) * c * s).collect()).collect(),
            Grouping::SampleChannel => (0..n * c).map(|g| (g * s..(g + 1) * s).collect()).collect(),
            Grouping::Position => (0..n)
                .flat_map(|b| (0..s).map(move |p| (0..c).map(|ch| (b * c + ch) * s + p).collect()))
                .collect(),
            Grouping::ChannelGroups(cpg) => {
                let groups = c / cpg;
                (0..n * groups)
                    .map(|g| {
                        let start = g * cpg * s;
                        (start..start + cpg * s).collect()
                    })
                    .collect()
            }
        }
    }
}

/// Result of a standardization pass.
#[derive(Clone, Debug)]
pub struct Standardized {
    pub xhat: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// `(x - mean_g) / sqrt(var_g + eps)` for every group `g`.
pub fn standardize(x: &[f64], groups: &[Vec<usize>], eps: f64) -> Standardized {
    let mut xhat = vec![0.0; x.len()];
    let mut mean = Vec::with_capacity(groups.len());
    let mut var = Vec::with_capacity(groups.len());
    let mut inv_std = Vec::with_capacity(groups.len());
    let mut buf = Vec::new();
    for g in groups {
        buf.clear();
        buf.extend(g.iter().map(|&i| x[i]));
        let (m, v) = mean_var(&buf);
        let r = 1.0 / (v + eps).sqrt();
        for &i in g {
            xhat[i] = (x[i] - m) * r;
        }
        mean.push(m);
        var.push(v);
        inv_std.push(r);
    }
    Standardized {
        xhat,
        mean,
        var,
        inv_std,
    }
}

/// Gradient through standardization given the gradient w.r.t. `xhat`:
/// `r * (g - mean(g) - xhat * mean(g * xhat))` within each group.
pub fn standardize_backward(g: &[f64], xhat: &[f64], groups: &[Vec<usize>], inv_std: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for (grp, &r) in groups.iter().zip(inv_std) {
        let m = grp.len() as f64;
        let (mut sg, mut sgx) = (0.0, 0.0);
        for &i in grp {
            sg += g[i];
            sgx += g[i] * xhat[i];
        }
        let (mg, mgx) = (sg / m, sgx / m);
        for &i in grp {
            out[i] = r * (g[i] - mg - xhat[i] * mgx);
        }
    }
    out
}

/// Per-sample l2 normalization state needed for the backward pass.
#[derive(Clone, Debug)]
pub struct L2Pass {
    pub y: Vec<f64>,
    /// Euclidean norm of each sample.
    pub norms: Vec<f64>,
    pub factor: f64,
}

/// `factor * x_i / max(|x_i|, eps)` for each sample `i`.
pub fn l2_normalize(x: &[f64], per_sample: usize, eps: f64, factor: f64) -> L2Pass {
    let mut y = vec![0.0; x.len()];
    let mut norms = Vec::with_capacity(x.len() / per_sample);
    for (src, dst) in x.chunks(per_sample).zip(y.chunks_mut(per_sample)) {
        let norm = src.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm.max(eps);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = factor * s / denom;
        }
        norms.push(norm);
    }
    L2Pass { y, norms, factor }
}

/// Exact gradient of [`l2_normalize`]. Above the floor the Jacobian-vector
/// product is `factor * (g - (g.u) u) / |x|` with `u = x / |x|`; on the floor
/// the map is linear and the gradient is `factor * g / eps`.
pub fn l2_normalize_backward(g: &[f64], pass: &L2Pass, per_sample: usize, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for (i, &norm) in pass.norms.iter().enumerate() {
        let range = i * per_sample..(i + 1) * per_sample;
        let (gs, ys) = (&g[range.clone()], &pass.y[range.clone()]);
        let dst = &mut out[range];
        if norm > eps {
            // y = factor * u, so g.u = (g.y) / factor.
            let gu = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / pass.factor;
            for ((d, &gv), &yv) in dst.iter_mut().zip(gs).zip(ys) {
                let u = yv / pass.factor;
                *d = pass.factor * (gv - gu * u) / norm;
            }
        } else {
            for (d, &gv) in dst.iter_mut().zip(gs) {
                *d = pass.factor * gv / eps;
            }
        }
    }
    out
}
