use crate::error::{Error, Result};
use crate::ops::DifferentiableOp;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvMode {
    Depthwise,
    Pointwise,
}

fn check_4d(context: &str, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if x.ndim() != 4 {
        return Err(Error::dimension(
            context,
            format!("feature map must be 4-D (B,C,H,W), got {:?}", x.shape()),
        ));
    }
    let s = x.shape();
    Ok((s[0], s[1], s[2], s[3]))
}

/// Depthwise cross-correlation with zero "same" padding: one `kh x kw`
/// filter per input channel, spatial size preserved.
pub fn depthwise_conv2d(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (bs, c, h, w) = check_4d("depthwise_conv2d", x)?;
    if kernel.ndim() != 3 {
        return Err(Error::dimension(
            "depthwise_conv2d",
            format!("kernel must be 3-D (C,kh,kw), got {:?}", kernel.shape()),
        ));
    }
    let (kc, kh, kw) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if kc != c {
        return Err(Error::dimension(
            "depthwise_conv2d",
            format!("kernel channel axis {} does not match input channels {}", kc, c),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Config(format!(
            "same padding requires odd kernel sides, got {}x{}",
            kh, kw
        )));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let xd = x.data();
    let kd = kernel.data();
    let mut out = vec![0.0; bs * c * h * w];
    for b in 0..bs {
        for ch in 0..c {
            let xplane = &xd[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            let kplane = &kd[ch * kh * kw..(ch + 1) * kh * kw];
            let oplane = &mut out[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for u in 0..kh {
                        let ii = i as isize + u as isize - ph as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for v in 0..kw {
                            let jj = j as isize + v as isize - pw as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            acc += xplane[ii as usize * w + jj as usize] * kplane[u * kw + v];
                        }
                    }
                    oplane[i * w + j] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[bs, c, h, w], out)
}

pub fn depthwise_conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (bs, c, h, w) = check_4d("depthwise_conv2d_backward", x)?;
    if dy.shape() != x.shape() {
        return Err(Error::shape_mismatch(
            "depthwise_conv2d_backward",
            x.shape(),
            dy.shape(),
        ));
    }
    let (kh, kw) = (kernel.shape()[1], kernel.shape()[2]);
    let (ph, pw) = (kh / 2, kw / 2);
    let xd = x.data();
    let kd = kernel.data();
    let gd = dy.data();
    let mut dx = vec![0.0; xd.len()];
    let mut dk = vec![0.0; kd.len()];
    for b in 0..bs {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            let kplane = &kd[ch * kh * kw..(ch + 1) * kh * kw];
            for i in 0..h {
                for j in 0..w {
                    let g = gd[base + i * w + j];
                    if g == 0.0 {
                        continue;
                    }
                    for u in 0..kh {
                        let ii = i as isize + u as isize - ph as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for v in 0..kw {
                            let jj = j as isize + v as isize - pw as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            let xi = base + ii as usize * w + jj as usize;
                            dx[xi] += g * kplane[u * kw + v];
                            dk[ch * kh * kw + u * kw + v] += g * xd[xi];
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), dx)?,
        Tensor::from_vec(kernel.shape(), dk)?,
    ))
}

/// 1x1 cross-channel mix: `y[b,o,h,w] = sum_c x[b,c,h,w] * kernel[c,o]`.
pub fn pointwise_conv2d(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (bs, c, h, w) = check_4d("pointwise_conv2d", x)?;
    if kernel.ndim() != 2 {
        return Err(Error::dimension(
            "pointwise_conv2d",
            format!("kernel must be 2-D (C_in,C_out), got {:?}", kernel.shape()),
        ));
    }
    let (ci, co) = (kernel.shape()[0], kernel.shape()[1]);
    if ci != c {
        return Err(Error::dimension(
            "pointwise_conv2d",
            format!("kernel input axis {} does not match input channels {}", ci, c),
        ));
    }
    let hw = h * w;
    let xd = x.data();
    let kd = kernel.data();
    let mut out = vec![0.0; bs * co * hw];
    for b in 0..bs {
        for cin in 0..c {
            let xplane = &xd[(b * c + cin) * hw..(b * c + cin + 1) * hw];
            for o in 0..co {
                let kv = kd[cin * co + o];
                if kv == 0.0 {
                    continue;
                }
                let oplane = &mut out[(b * co + o) * hw..(b * co + o + 1) * hw];
                for (ov, &xv) in oplane.iter_mut().zip(xplane.iter()) {
                    *ov += kv * xv;
                }
            }
        }
    }
    Tensor::from_vec(&[bs, co, h, w], out)
}

pub fn pointwise_conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (bs, c, h, w) = check_4d("pointwise_conv2d_backward", x)?;
    let co = kernel.shape()[1];
    if dy.shape() != [bs, co, h, w] {
        return Err(Error::shape_mismatch(
            "pointwise_conv2d_backward",
            &[bs, co, h, w],
            dy.shape(),
        ));
    }
    let hw = h * w;
    let xd = x.data();
    let kd = kernel.data();
    let gd = dy.data();
    let mut dx = vec![0.0; xd.len()];
    let mut dk = vec![0.0; kd.len()];
    for b in 0..bs {
        for cin in 0..c {
            let xplane = &xd[(b * c + cin) * hw..(b * c + cin + 1) * hw];
            let dxplane_base = (b * c + cin) * hw;
            for o in 0..co {
                let kv = kd[cin * co + o];
                let gplane = &gd[(b * co + o) * hw..(b * co + o + 1) * hw];
                let mut acc = 0.0;
                for (p, &g) in gplane.iter().enumerate() {
                    dx[dxplane_base + p] += kv * g;
                    acc += xplane[p] * g;
                }
                dk[cin * co + o] += acc;
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), dx)?,
        Tensor::from_vec(kernel.shape(), dk)?,
    ))
}

/// Inputs: `[x, kernel]`.
pub struct Conv2dOp {
    pub mode: ConvMode,
}

impl DifferentiableOp for Conv2dOp {
    fn name(&self) -> &str {
        match self.mode {
            ConvMode::Depthwise => "conv2d_depthwise",
            ConvMode::Pointwise => "conv2d_pointwise",
        }
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        match self.mode {
            ConvMode::Depthwise => depthwise_conv2d(&inputs[0], &inputs[1]),
            ConvMode::Pointwise => pointwise_conv2d(&inputs[0], &inputs[1]),
        }
    }

    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        let (dx, dk) = match self.mode {
            ConvMode::Depthwise => depthwise_conv2d_backward(&inputs[0], &inputs[1], upstream)?,
            ConvMode::Pointwise => pointwise_conv2d_backward(&inputs[0], &inputs[1], upstream)?,
        };
        Ok(vec![dx, dk])
    }
}
