//! Iterated normalization dynamics over a set of class centers.
//!
//! Every layer is taken to be the identity with gamma = 1 and beta = 0, and
//! the class centers themselves form the batch. Under that reduction repeated
//! BN leaves the center geometry unchanged after the first step, while
//! repeated L2BN keeps pushing the centers apart until the minimum pairwise
//! angle saturates.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::angle_deg;
use crate::tensor::{mean_var, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimNorm {
    Bn,
    L2Bn,
}

impl std::str::FromStr for SimNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bn" => Ok(SimNorm::Bn),
            "l2bn" => Ok(SimNorm::L2Bn),
            other => Err(Error::InvalidConfig(format!("unknown simulator norm {other:?}"))),
        }
    }
}

pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-4;
/// Consecutive small steps required to declare convergence.
pub const CONVERGENCE_RUN: usize = 3;

#[derive(Clone, Debug)]
pub struct CenterConfig {
    /// Initial centers `[C, d]`.
    pub centers: Tensor,
    pub norm: SimNorm,
    pub max_iters: usize,
    /// Degrees; a step whose min-angle change is below this counts as small.
    pub convergence_tol: f64,
    /// Stop once converged rather than running all `max_iters`.
    pub stop_on_convergence: bool,
    /// Added to the variance in the BN step. Zero gives the exact
    /// `(x - mean) / std` map.
    pub eps_var: f64,
    pub record_centers: bool,
}

impl CenterConfig {
    pub fn new(centers: Tensor, norm: SimNorm) -> Self {
        CenterConfig {
            centers,
            norm,
            max_iters: 200,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
            stop_on_convergence: true,
            eps_var: 0.0,
            record_centers: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let s = self.centers.shape();
        if s.len() != 2 || s[0] < 2 || s[1] < 2 {
            return Err(Error::InvalidConfig(format!(
                "simulator needs centers [C >= 2, d >= 2], got {s:?}"
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if self.eps_var < 0.0 {
            return Err(Error::InvalidConfig("eps_var must be >= 0".into()));
        }
        self.centers.check_finite("initial centers")?;
        if let Some(i) = self.centers.iter_rows().position(|r| r.iter().all(|&v| v == 0.0)) {
            return Err(Error::Degenerate(format!("initial center {i} is the zero vector")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub initial_min_angle: f64,
    /// Entry `k` is the minimum pairwise angle after step `k + 1`.
    pub min_angle_per_iter: Vec<f64>,
    /// `centers_per_iter[k]` pairs with `min_angle_per_iter[k]` when recorded.
    pub centers_per_iter: Option<Vec<Tensor>>,
    /// 1-based step at which convergence was detected.
    pub converged_at: Option<usize>,
}

impl Trajectory {
    pub fn final_min_angle(&self) -> f64 {
        *self.min_angle_per_iter.last().unwrap_or(&self.initial_min_angle)
    }
}

/// Output of one normalization step, keeping the l2 stage for inspection.
#[derive(Clone, Debug)]
pub struct Step {
    pub l2_stage: Option<Tensor>,
    pub output: Tensor,
}

/// Smallest pairwise angle between rows, in degrees.
pub fn min_pairwise_angle(centers: &Tensor) -> f64 {
    let c = centers.rows();
    let mut m = 180.0f64;
    for i in 0..c {
        for j in i + 1..c {
            m = m.min(angle_deg(centers.row(i), centers.row(j)));
        }
    }
    m
}

fn bn_step(x: &Tensor, eps: f64, iter: usize) -> Result<Tensor> {
    let (c, d) = (x.rows(), x.row_len());
    let mut out = x.clone();
    let mut col = vec![0.0; c];
    for j in 0..d {
        for (i, v) in col.iter_mut().enumerate() {
            *v = x.data()[i * d + j];
        }
        let (m, var) = mean_var(&col);
        let denom = (var + eps).sqrt();
        if denom == 0.0 {
            return Err(Error::Degenerate(format!(
                "coordinate {j} has zero variance across centers at iteration {iter}"
            )));
        }
        for (i, v) in col.iter().enumerate() {
            out.data_mut()[i * d + j] = (v - m) / denom;
        }
    }
    Ok(out)
}

fn l2_step(x: &Tensor, iter: usize) -> Result<Tensor> {
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::Degenerate(format!(
                "center {i} collapsed to the zero vector at iteration {iter}"
            )));
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Applies one normalization step; `iter` only labels errors.
pub fn step(x: &Tensor, norm: SimNorm, eps_var: f64, iter: usize) -> Result<Step> {
    let (l2_stage, pre) = match norm {
        SimNorm::Bn => (None, x.clone()),
        SimNorm::L2Bn => {
            let l2 = l2_step(x, iter)?;
            (Some(l2.clone()), l2)
        }
    };
    let output = bn_step(&pre, eps_var, iter)?;
    output.check_finite(&format!("simulator step {iter}"))?;
    if let Some(i) = output.iter_rows().position(|r| r.iter().all(|&v| v == 0.0)) {
        return Err(Error::Degenerate(format!(
            "center {i} collapsed to the zero vector at iteration {iter}"
        )));
    }
    Ok(Step { l2_stage, output })
}

pub fn iterate(config: &CenterConfig) -> Result<Trajectory> {
    config.validate()?;
    let mut x = config.centers.clone();
    let initial = min_pairwise_angle(&x);
    let mut angles = Vec::with_capacity(config.max_iters);
    let mut recorded = config.record_centers.then(Vec::new);
    let mut converged_at = None;
    let mut small_run = 0;
    let mut prev = initial;
    for k in 1..=config.max_iters {
        x = step(&x, config.norm, config.eps_var, k)?.output;
        let a = min_pairwise_angle(&x);
        angles.push(a);
        if let Some(r) = recorded.as_mut() {
            r.push(x.clone());
        }
        if (a - prev).abs() < config.convergence_tol {
            small_run += 1;
        } else {
            small_run = 0;
        }
        prev = a;
        if converged_at.is_none() && small_run >= CONVERGENCE_RUN {
            converged_at = Some(k);
            if config.stop_on_convergence {
                break;
            }
        }
    }
    Ok(Trajectory {
        initial_min_angle: initial,
        min_angle_per_iter: angles,
        centers_per_iter: recorded,
        converged_at,
    })
}

/// Triangle-area collinearity score of three 2-D points, normalized by the
/// squared longest edge. Zero for collinear points.
pub fn collinearity_2d(centers: &Tensor) -> Option<f64> {
    if centers.shape() != [3, 2] {
        return None;
    }
    let p = |i: usize| (centers.row(i)[0], centers.row(i)[1]);
    let (a, b, c) = (p(0), p(1), p(2));
    let area = ((b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1)).abs() / 2.0;
    let e = |u: (f64, f64), v: (f64, f64)| (u.0 - v.0).powi(2) + (u.1 - v.1).powi(2);
    let longest = e(a, b).max(e(b, c)).max(e(a, c));
    Some(if longest == 0.0 { 0.0 } else { area / longest })
}

/// Whether a start should be excluded: any two centers within 1 degree, or
/// (for three 2-D centers) a nearly collinear point set.
pub fn is_degenerate_start(centers: &Tensor) -> bool {
    if min_pairwise_angle(centers) < 1.0 {
        return true;
    }
    collinearity_2d(centers).is_some_and(|s| s < 1e-3)
}

/// Gaussian centers `[C, d]`, redrawn until the start is not degenerate.
pub fn random_start(rng: &mut Rng, classes: usize, dim: usize) -> Result<Tensor> {
    loop {
        let t = Tensor::randn(rng, &[classes, dim], 0.0, 1.0)?;
        if !is_degenerate_start(&t) {
            return Ok(t);
        }
    }
}

/// How the angle between a centered sample and a reference direction depends
/// on the sample's norm, with and without prior l2 normalization.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaProbe {
    pub mu: Vec<f64>,
    pub phi_deg: f64,
    pub norms: Vec<f64>,
    /// Angle of `x - mu` for each norm.
    pub thetas: Vec<f64>,
    /// Angle of `x / |x| - mu` for each norm.
    pub thetas_l2: Vec<f64>,
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

impl ThetaProbe {
    pub fn spread(&self) -> f64 {
        spread(&self.thetas)
    }

    pub fn spread_l2(&self) -> f64 {
        spread(&self.thetas_l2)
    }
}

/// Builds, for every norm `r`, a 2-D sample of length `r` at angle `phi` from
/// `mu`, subtracts `mu`, and measures the angle of the result from the `mu`
/// direction. A zero `mu` measures both `phi` and `theta` from the x-axis.
pub fn theta_probe(mu: &[f64], phi_deg: f64, norms: &[f64]) -> Result<ThetaProbe> {
    if mu.len() != 2 {
        return Err(Error::InvalidConfig(format!("theta probe is 2-D, got mu of length {}", mu.len())));
    }
    if norms.is_empty() || norms.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidConfig("theta probe norms must be positive".into()));
    }
    if !phi_deg.is_finite() || mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("theta probe input".into()));
    }
    let base = if mu == [0.0, 0.0] { 0.0 } else { mu[1].atan2(mu[0]) };
    let dir_angle = base + phi_deg.to_radians();
    let dir = [dir_angle.cos(), dir_angle.sin()];
    let reference = [base.cos(), base.sin()];
    let centered_angle = |x: [f64; 2]| {
        let v = [x[0] - mu[0], x[1] - mu[1]];
        angle_deg(&v, &reference)
    };
    let mut thetas = Vec::with_capacity(norms.len());
    let mut thetas_l2 = Vec::with_capacity(norms.len());
    for &r in norms {
        let x = [r * dir[0], r * dir[1]];
        thetas.push(centered_angle(x));
        let n = x[0].hypot(x[1]);
        thetas_l2.push(centered_angle([x[0] / n, x[1] / n]));
    }
    Ok(ThetaProbe {
        mu: mu.to_vec(),
        phi_deg,
        norms: norms.to_vec(),
        thetas,
        thetas_l2,
    })
}

/// Trajectory as CSV: `iter,min_angle_deg` plus `c{i}_{j}` columns when
/// centers were recorded. Row 0 is the initial configuration.
pub fn trajectory_csv(t: &Trajectory, initial: Option<&Tensor>) -> String {
    let mut out = String::from("iter,min_angle_deg");
    let dims = t
        .centers_per_iter
        .as_ref()
        .and_then(|c| c.first())
        .map(|c| (c.rows(), c.row_len()));
    if let Some((c, d)) = dims {
        for i in 0..c {
            for j in 0..d {
                let _ = write!(out, ",c{i}_{j}");
            }
        }
    }
    out.push('\n');
    let push_row = |out: &mut String, k: usize, a: f64, centers: Option<&Tensor>| {
        let _ = write!(out, "{k},{a}");
        if dims.is_some() {
            if let Some(c) = centers {
                for v in c.data() {
                    let _ = write!(out, ",{v}");
                }
            }
        }
        out.push('\n');
    };
    push_row(&mut out, 0, t.initial_min_angle, initial);
    for (k, &a) in t.min_angle_per_iter.iter().enumerate() {
        let c = t.centers_per_iter.as_ref().map(|c| &c[k]);
        push_row(&mut out, k + 1, a, c);
    }
    out
}

pub fn export_trajectory(t: &Trajectory, initial: Option<&Tensor>, path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_csv(t, initial)).map_err(|e| Error::io(path, e))
}
