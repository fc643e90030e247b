use crate::error::{Error, Result};
use crate::ops::DifferentiableOp;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Layer,
}

/// Cache of normalized values needed by the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub xhat: Tensor,
    inv_std: Vec<f64>,
    axis: usize,
}

/// Normalizes along `axis` to zero mean / unit variance (population
/// statistics), then applies the learned per-position scale and shift.
pub fn layer_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    axis: usize,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    if axis >= x.ndim() {
        return Err(Error::dimension(
            "layer_norm",
            format!("axis {} out of range for shape {:?}", axis, x.shape()),
        ));
    }
    let m = x.shape()[axis];
    if gamma.shape() != [m] || beta.shape() != [m] {
        return Err(Error::dimension(
            "layer_norm",
            format!(
                "scale/shift must have shape [{}], got {:?} and {:?}",
                m,
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![0.0; xd.len()];
    let mut xhat = vec![0.0; xd.len()];
    let mut inv_stds = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| o * m * inner + j * inner + i;
            let mut mean = 0.0;
            for j in 0..m {
                mean += xd[idx(j)];
            }
            mean /= m as f64;
            let mut var = 0.0;
            for j in 0..m {
                let d = xd[idx(j)] - mean;
                var += d * d;
            }
            var /= m as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            inv_stds[o * inner + i] = inv_std;
            for j in 0..m {
                let xn = (xd[idx(j)] - mean) * inv_std;
                xhat[idx(j)] = xn;
                out[idx(j)] = gd[j] * xn + bd[j];
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), out)?,
        LayerNormCache {
            xhat: Tensor::from_vec(x.shape(), xhat)?,
            inv_std: inv_stds,
            axis,
        },
    ))
}

pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let x_shape = cache.xhat.shape().to_vec();
    if dy.shape() != x_shape {
        return Err(Error::shape_mismatch("layer_norm_backward", &x_shape, dy.shape()));
    }
    let axis = cache.axis;
    let m = x_shape[axis];
    let outer: usize = x_shape[..axis].iter().product();
    let inner: usize = x_shape[axis + 1..].iter().product();
    let xh = cache.xhat.data();
    let gd = gamma.data();
    let dyd = dy.data();
    let mut dx = vec![0.0; dyd.len()];
    let mut dgamma = vec![0.0; m];
    let mut dbeta = vec![0.0; m];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| o * m * inner + j * inner + i;
            let inv_std = cache.inv_std[o * inner + i];
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for j in 0..m {
                let dxh = dyd[idx(j)] * gd[j];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xh[idx(j)];
                dgamma[j] += dyd[idx(j)] * xh[idx(j)];
                dbeta[j] += dyd[idx(j)];
            }
            let mf = m as f64;
            for j in 0..m {
                let dxh = dyd[idx(j)] * gd[j];
                dx[idx(j)] =
                    inv_std * (dxh - sum_dxhat / mf - xh[idx(j)] * sum_dxhat_xhat / mf);
            }
        }
    }
    Ok((
        Tensor::from_vec(&x_shape, dx)?,
        Tensor::from_vec(&[m], dgamma)?,
        Tensor::from_vec(&[m], dbeta)?,
    ))
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub xhat: Tensor,
    inv_std: Vec<f64>,
    /// Per-channel batch statistics, for the running-average update.
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Batch normalization over the (B,H,W) axes of a channels-first map,
/// using the batch statistics.
pub fn batch_norm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, BatchNormCache)> {
    if x.ndim() != 4 {
        return Err(Error::dimension(
            "batch_norm",
            format!("expected 4-D (B,C,H,W) input, got {:?}", x.shape()),
        ));
    }
    let (bs, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dimension(
            "batch_norm",
            format!("scale/shift must have shape [{}]", c),
        ));
    }
    let hw = h * w;
    let n = (bs * hw) as f64;
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    let mut xhat = vec![0.0; xd.len()];
    let mut inv_stds = vec![0.0; c];
    let mut means = vec![0.0; c];
    let mut vars = vec![0.0; c];
    for ch in 0..c {
        let mut mean = 0.0;
        for b in 0..bs {
            let plane = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            mean += plane.iter().sum::<f64>();
        }
        mean /= n;
        let mut var = 0.0;
        for b in 0..bs {
            let plane = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            var += plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>();
        }
        var /= n;
        let inv_std = 1.0 / (var + eps).sqrt();
        means[ch] = mean;
        vars[ch] = var;
        inv_stds[ch] = inv_std;
        let (g, be) = (gamma.data()[ch], beta.data()[ch]);
        for b in 0..bs {
            let base = (b * c + ch) * hw;
            for p in 0..hw {
                let xn = (xd[base + p] - mean) * inv_std;
                xhat[base + p] = xn;
                out[base + p] = g * xn + be;
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), out)?,
        BatchNormCache {
            xhat: Tensor::from_vec(x.shape(), xhat)?,
            inv_std: inv_stds,
            batch_mean: means,
            batch_var: vars,
        },
    ))
}

/// Batch normalization with frozen running statistics.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let (bs, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let hw = h * w;
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for ch in 0..c {
        let inv_std = 1.0 / (running_var.data()[ch] + eps).sqrt();
        let mean = running_mean.data()[ch];
        let (g, be) = (gamma.data()[ch], beta.data()[ch]);
        for b in 0..bs {
            let base = (b * c + ch) * hw;
            for p in 0..hw {
                out[base + p] = g * (xd[base + p] - mean) * inv_std + be;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

pub fn batch_norm_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let shape = cache.xhat.shape().to_vec();
    if dy.shape() != shape {
        return Err(Error::shape_mismatch("batch_norm_backward", &shape, dy.shape()));
    }
    let (bs, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let n = (bs * hw) as f64;
    let xh = cache.xhat.data();
    let dyd = dy.data();
    let mut dx = vec![0.0; dyd.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let g = gamma.data()[ch];
        let inv_std = cache.inv_std[ch];
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..bs {
            let base = (b * c + ch) * hw;
            for p in 0..hw {
                sum_dy += dyd[base + p];
                sum_dy_xhat += dyd[base + p] * xh[base + p];
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        for b in 0..bs {
            let base = (b * c + ch) * hw;
            for p in 0..hw {
                dx[base + p] = g * inv_std
                    * (dyd[base + p] - sum_dy / n - xh[base + p] * sum_dy_xhat / n);
            }
        }
    }
    Ok((
        Tensor::from_vec(&shape, dx)?,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

/// Inputs: `[x, gamma, beta]`. Layer kind normalizes the last axis; batch
/// kind expects a 4-D map and uses batch statistics.
pub struct NormalizeOp {
    pub kind: NormKind,
    pub eps: f64,
}

impl DifferentiableOp for NormalizeOp {
    fn name(&self) -> &str {
        match self.kind {
            NormKind::Batch => "batch_norm",
            NormKind::Layer => "layer_norm",
        }
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        match self.kind {
            NormKind::Layer => {
                let axis = inputs[0].ndim() - 1;
                Ok(layer_norm_forward(&inputs[0], &inputs[1], &inputs[2], axis, self.eps)?.0)
            }
            NormKind::Batch => {
                Ok(batch_norm_train(&inputs[0], &inputs[1], &inputs[2], self.eps)?.0)
            }
        }
    }

    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        match self.kind {
            NormKind::Layer => {
                let axis = inputs[0].ndim() - 1;
                let (_, cache) =
                    layer_norm_forward(&inputs[0], &inputs[1], &inputs[2], axis, self.eps)?;
                let (dx, dg, db) = layer_norm_backward(&cache, &inputs[1], upstream)?;
                Ok(vec![dx, dg, db])
            }
            NormKind::Batch => {
                let (_, cache) = batch_norm_train(&inputs[0], &inputs[1], &inputs[2], self.eps)?;
                let (dx, dg, db) = batch_norm_backward(&cache, &inputs[1], upstream)?;
                Ok(vec![dx, dg, db])
            }
        }
    }
}
