use crate::error::{Error, Result};
use crate::par;
use crate::param::Param;
use crate::tensor::{Rng, Tensor};

/// Fully connected layer, `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    /// Gaussian weights with standard deviation `sqrt(gain / in)`, zero bias.
    pub fn new(rng: &mut Rng, inputs: usize, outputs: usize, gain: f64) -> Result<Self> {
        let std = (gain / inputs as f64).sqrt();
        Ok(Linear {
            weight: Param::new(Tensor::randn(rng, &[inputs, outputs], 0.0, std)?)?,
            bias: Param::new(Tensor::zeros(&[outputs])?)?,
            input: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor, keep: bool) -> Result<Tensor> {
        let mut y = x.matmul(&self.weight.value)?;
        let out = self.outputs();
        let b = self.bias.value.data();
        for row in y.data_mut().chunks_mut(out) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        self.input = keep.then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::InvalidState("linear backward without cached input".into()))?;
        let gw = x.transpose()?.matmul(grad)?;
        self.weight.grad.axpy(1.0, &gw)?;
        self.bias.grad.axpy(1.0, &grad.sum_axis(0)?)?;
        grad.matmul(&self.weight.value.transpose()?)
    }
}

/// 3x3 convolution with zero padding 1. Weights are `[out, in * 9]`, ordered
/// `(in_channel, ky, kx)`.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub weight: Param,
    pub bias: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    cache: Option<ConvCache>,
}

#[derive(Clone, Debug)]
struct ConvCache {
    cols: Vec<Tensor>,
    in_shape: [usize; 4],
}

fn out_dim(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

impl Conv3x3 {
    pub fn new(rng: &mut Rng, in_channels: usize, out_channels: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidConfig("conv stride must be positive".into()));
        }
        let fan_in = in_channels * 9;
        let std = (2.0 / fan_in as f64).sqrt();
        Ok(Conv3x3 {
            weight: Param::new(Tensor::randn(rng, &[out_channels, fan_in], 0.0, std)?)?,
            bias: Param::new(Tensor::zeros(&[out_channels])?)?,
            in_channels,
            out_channels,
            stride,
            cache: None,
        })
    }

    /// `[C*9, Ho*Wo]` patch matrix for one sample.
    fn im2col(&self, x: &[f64], h: usize, w: usize) -> Result<Tensor> {
        let (ho, wo) = (out_dim(h, self.stride), out_dim(w, self.stride));
        let mut cols = vec![0.0; self.in_channels * 9 * ho * wo];
        for c in 0..self.in_channels {
            for ky in 0..3 {
                for kx in 0..3 {
                    let r = (c * 9 + ky * 3 + kx) * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cols[r + oy * wo + ox] = x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
            }
        }
        Tensor::new(vec![self.in_channels * 9, ho * wo], cols)
    }

    fn col2im(&self, cols: &Tensor, h: usize, w: usize) -> Vec<f64> {
        let (ho, wo) = (out_dim(h, self.stride), out_dim(w, self.stride));
        let mut out = vec![0.0; self.in_channels * h * w];
        let d = cols.data();
        for c in 0..self.in_channels {
            for ky in 0..3 {
                for kx in 0..3 {
                    let r = (c * 9 + ky * 3 + kx) * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            out[(c * h + iy as usize) * w + ix as usize] += d[r + oy * wo + ox];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&mut self, x: &Tensor, keep: bool) -> Result<Tensor> {
        let [n, c, h, w] = *x.shape() else {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: "conv3x3 expects [N, C, H, W]".into(),
            });
        };
        if c != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv3x3 channels",
                lhs: x.shape().to_vec(),
                rhs: vec![self.in_channels],
            });
        }
        let (ho, wo) = (out_dim(h, self.stride), out_dim(w, self.stride));
        let samples: Vec<usize> = (0..n).collect();
        let per: Vec<Result<(Tensor, Tensor)>> = par::map_collect(&samples, |&i| {
            let cols = self.im2col(x.row(i), h, w)?;
            let y = self.weight.value.matmul(&cols)?;
            Ok((cols, y))
        });
        let mut data = Vec::with_capacity(n * self.out_channels * ho * wo);
        let mut cols_all = Vec::with_capacity(if keep { n } else { 0 });
        let b = self.bias.value.data();
        for r in per {
            let (cols, y) = r?;
            for (oc, chunk) in y.data().chunks(ho * wo).enumerate() {
                data.extend(chunk.iter().map(|v| v + b[oc]));
            }
            if keep {
                cols_all.push(cols);
            }
        }
        self.cache = keep.then_some(ConvCache {
            cols: cols_all,
            in_shape: [n, c, h, w],
        });
        Tensor::new(vec![n, self.out_channels, ho, wo], data)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidState("conv3x3 backward without cached input".into()))?;
        let [n, c, h, w] = cache.in_shape;
        let (ho, wo) = (out_dim(h, self.stride), out_dim(w, self.stride));
        if grad.shape() != [n, self.out_channels, ho, wo] {
            return Err(Error::ShapeMismatch {
                op: "conv3x3 backward",
                lhs: grad.shape().to_vec(),
                rhs: vec![n, self.out_channels, ho, wo],
            });
        }
        let wt = self.weight.value.transpose()?;
        let idx: Vec<usize> = (0..n).collect();
        let per: Vec<Result<(Tensor, Vec<f64>)>> = par::map_collect(&idx, |&i| {
            let g = Tensor::new(vec![self.out_channels, ho * wo], grad.row(i).to_vec())?;
            let gw = g.matmul(&cache.cols[i].transpose()?)?;
            let gcols = wt.matmul(&g)?;
            Ok((gw, self.col2im(&gcols, h, w)))
        });
        let mut gx = Vec::with_capacity(n * c * h * w);
        // Summed in sample order so the result does not depend on threading.
        for (i, r) in per.into_iter().enumerate() {
            let (gw, gxi) = r?;
            self.weight.grad.axpy(1.0, &gw)?;
            let gb: Vec<f64> = grad.row(i).chunks(ho * wo).map(|ch| ch.iter().sum()).collect();
            for (acc, v) in self.bias.grad.data_mut().iter_mut().zip(gb) {
                *acc += v;
            }
            gx.extend(gxi);
        }
        Tensor::new(vec![n, c, h, w], gx)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor, keep: bool) -> Tensor {
        self.mask = keep.then(|| x.data().iter().map(|&v| v > 0.0).collect());
        x.map(|v| v.max(0.0))
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::InvalidState("relu backward without cached mask".into()))?;
        let data = grad
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::new(grad.shape().to_vec(), data)
    }
}

/// `[N, C, H, W] -> [N, C]` by spatial averaging.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = *x.shape() else {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "global average pool expects [N, C, H, W]".into(),
        });
    };
    let s = (h * w) as f64;
    let data = x.data().chunks(h * w).map(|ch| ch.iter().sum::<f64>() / s).collect();
    Tensor::new(vec![n, c], data)
}

pub fn global_avg_pool_backward(grad: &Tensor, in_shape: &[usize]) -> Result<Tensor> {
    let hw: usize = in_shape[2..].iter().product();
    let data = grad
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / hw as f64, hw))
        .collect();
    Tensor::new(in_shape.to_vec(), data)
}
