//! Dense row-major `f64` tensors and a seeded random source.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::par;

/// Dense row-major tensor of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "shape must have at least one dimension".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every dimension must be at least 1".into(),
        });
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let n = validate_shape(&shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expected {n} elements, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a rank-2 tensor from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidShape {
                    shape: vec![rows.len(), cols],
                    reason: format!("row {i} has {} elements", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = validate_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    /// I.i.d. Gaussian samples with the given mean and standard deviation.
    pub fn randn(rng: &mut Rng, shape: &[usize], mean: f64, std: f64) -> Result<Self> {
        if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "randn needs finite mean and std >= 0, got mean={mean} std={std}"
            )));
        }
        let n = validate_shape(shape)?;
        let data = (0..n).map(|_| mean + std * rng.normal()).collect();
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Size of the leading (batch) dimension.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements per leading-dimension slice.
    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.row_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.row_len())
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        let out = self.zip_with(other, "div", |a, b| a / b)?;
        out.check_finite("div")?;
        Ok(out)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        let out = self.map(f64::sqrt);
        out.check_finite("sqrt")?;
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    fn axis_split(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("axis {axis} out of range"),
            });
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    fn reduced_shape(&self, axis: usize) -> Vec<usize> {
        let mut s = self.shape.clone();
        s.remove(axis);
        if s.is_empty() {
            s.push(1);
        }
        s
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = self.axis_split(axis)?;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &self.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Tensor::new(self.reduced_shape(axis), out)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = self.axis_split(axis)?.1 as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / n))
    }

    /// Population variance (divides by the axis length, not length − 1).
    pub fn var_uncorrected(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = self.axis_split(axis)?;
        let mut out = vec![0.0; outer * inner];
        let mut lane = vec![0.0; n];
        for o in 0..outer {
            for i in 0..inner {
                for (k, l) in lane.iter_mut().enumerate() {
                    *l = self.data[(o * n + k) * inner + i];
                }
                out[o * inner + i] = variance(&lane);
            }
        }
        Tensor::new(self.reduced_shape(axis), out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn require_rank2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("{op} needs a rank-2 tensor"),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_rank2("matmul")?;
        let (k2, n) = other.require_rank2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        let a = &self.data;
        let b = &other.data;
        par::for_each_row_mut(&mut out, n, |i, row| {
            for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                for (r, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *r += av * bv;
                }
            }
        });
        Tensor::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.require_rank2("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n = validate_shape(shape)?;
        if n != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Rows `start..end` of the leading dimension.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        if start >= end || end > self.rows() {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("row range {start}..{end} invalid"),
            });
        }
        let n = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::new(shape, self.data[start * n..end * n].to_vec())
    }

    /// Gathers the given leading-dimension rows in order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let n = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= self.rows() {
                return Err(Error::InvalidShape {
                    shape: self.shape.clone(),
                    reason: format!("row {i} out of range"),
                });
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor::new(shape, data)
    }

    pub fn check_finite(&self, ctx: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!("{ctx} (element {i} = {})", self.data[i]))),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Mean and population variance of a slice, computed two-pass on data shifted
/// by its first element so a constant slice yields exactly zero variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let shift = xs[0];
    let m = xs.iter().map(|&x| x - shift).sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x - shift - m).powi(2)).sum::<f64>() / n;
    (shift + m, var)
}

fn variance(xs: &[f64]) -> f64 {
    mean_var(xs).1
}

/// Seeded random source; the same seed and call sequence give the same values.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent stream derived from this generator's seed.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the range is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.inner.random_range(lo..hi)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
