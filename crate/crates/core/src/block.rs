//! The hybrid convolution/SSM building block: the channel-split halves take
//! a convolutional path (pointwise, batch norm, relu, depthwise, batch norm,
//! relu, pointwise) and a state-space path (channel layer norm, linear,
//! silu, 2D selective scan, layer norm, linear); the halves are concatenated,
//! channel-shuffled, and added to the block input.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{
    activation_backward, activation_forward, batch_norm_backward, batch_norm_eval,
    batch_norm_train, depthwise_conv2d, depthwise_conv2d_backward, layer_norm_backward,
    layer_norm_forward, pointwise_conv2d, pointwise_conv2d_backward, Activation, BatchNormCache,
    DifferentiableOp, LayerNormCache,
};
use crate::ss2d::{ss2d_backward, ss2d_forward, Ss2dCache, Ss2dParams};
use crate::store::GradStore;
use crate::tensor::Tensor;

/// Splits channels into first/second halves, order preserved.
pub fn channel_split(x: &Tensor) -> Result<(Tensor, Tensor)> {
    if x.ndim() != 4 {
        return Err(Error::dimension(
            "channel_split",
            format!("expected 4-D map, got {:?}", x.shape()),
        ));
    }
    let (bs, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if c % 2 != 0 {
        return Err(Error::Config(format!(
            "channel_split needs an even channel count, got {}",
            c
        )));
    }
    let half = c / 2;
    let hw = h * w;
    let xd = x.data();
    let mut first = vec![0.0; bs * half * hw];
    let mut second = vec![0.0; bs * half * hw];
    for b in 0..bs {
        let src = &xd[b * c * hw..(b + 1) * c * hw];
        first[b * half * hw..(b + 1) * half * hw].copy_from_slice(&src[..half * hw]);
        second[b * half * hw..(b + 1) * half * hw].copy_from_slice(&src[half * hw..]);
    }
    Ok((
        Tensor::from_vec(&[bs, half, h, w], first)?,
        Tensor::from_vec(&[bs, half, h, w], second)?,
    ))
}

/// Concatenates two maps along the channel axis.
pub fn channel_concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (bs, ca, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    if b.shape()[0] != bs || b.shape()[2] != h || b.shape()[3] != w {
        return Err(Error::shape_mismatch("channel_concat", a.shape(), b.shape()));
    }
    let cb = b.shape()[1];
    let hw = h * w;
    let mut out = vec![0.0; bs * (ca + cb) * hw];
    for bi in 0..bs {
        let dst = &mut out[bi * (ca + cb) * hw..(bi + 1) * (ca + cb) * hw];
        dst[..ca * hw].copy_from_slice(&a.data()[bi * ca * hw..(bi + 1) * ca * hw]);
        dst[ca * hw..].copy_from_slice(&b.data()[bi * cb * hw..(bi + 1) * cb * hw]);
    }
    Tensor::from_vec(&[bs, ca + cb, h, w], out)
}

/// The group-transpose channel permutation: reshape channels to
/// `(groups, c/groups)`, transpose, flatten.
pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let (bs, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if groups == 0 || c % groups != 0 {
        return Err(Error::Config(format!(
            "channel_shuffle needs channels divisible by groups, got {} / {}",
            c, groups
        )));
    }
    let per_group = c / groups;
    let hw = h * w;
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for b in 0..bs {
        for g in 0..groups {
            for i in 0..per_group {
                let src = (b * c + g * per_group + i) * hw;
                let dst = (b * c + i * groups + g) * hw;
                out[dst..dst + hw].copy_from_slice(&xd[src..src + hw]);
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Batch normalization layer with running statistics for inference.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Normalizes with batch statistics and folds them into the running
    /// averages.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        let (y, cache) = batch_norm_train(x, &self.gamma, &self.beta, self.eps)?;
        let m = self.momentum;
        for (r, &b) in self
            .running_mean
            .data_mut()
            .iter_mut()
            .zip(cache.batch_mean.iter())
        {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self
            .running_var
            .data_mut()
            .iter_mut()
            .zip(cache.batch_var.iter())
        {
            *r = (1.0 - m) * *r + m * b;
        }
        Ok((y, cache))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        batch_norm_eval(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            self.eps,
        )
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        batch_norm_backward(cache, &self.gamma, dy)
    }
}

/// Layer norm across the channel axis of a channels-first map.
#[derive(Clone, Debug)]
pub struct ChannelLayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl ChannelLayerNorm {
    pub fn new(channels: usize) -> Self {
        ChannelLayerNorm {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        layer_norm_forward(x, &self.gamma, &self.beta, 1, self.eps)
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        layer_norm_backward(cache, &self.gamma, dy)
    }
}

/// Per-position linear map over channels (a 1x1 projection with bias).
#[derive(Clone, Debug)]
pub struct ChannelLinear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ChannelLinear {
    pub fn init(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        ChannelLinear {
            weight: Tensor::randn(&[c_in, c_out], rng).scale((2.0 / c_in as f64).sqrt()),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = pointwise_conv2d(x, &self.weight)?;
        let (bs, co, h, w) = (y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]);
        let hw = h * w;
        let yd = y.data_mut();
        for b in 0..bs {
            for o in 0..co {
                let add = self.bias.data()[o];
                for v in &mut yd[(b * co + o) * hw..(b * co + o + 1) * hw] {
                    *v += add;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (dx, dw) = pointwise_conv2d_backward(x, &self.weight, dy)?;
        let (bs, co, h, w) = (dy.shape()[0], dy.shape()[1], dy.shape()[2], dy.shape()[3]);
        let hw = h * w;
        let mut db = vec![0.0; co];
        for b in 0..bs {
            for o in 0..co {
                db[o] += dy.data()[(b * co + o) * hw..(b * co + o + 1) * hw]
                    .iter()
                    .sum::<f64>();
            }
        }
        Ok((dx, dw, Tensor::from_vec(&[co], db)?))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SsConvSsmConfig {
    pub channels: usize,
    pub state_size: usize,
    pub conv_kernel: usize,
    pub shuffle_groups: usize,
}

impl SsConvSsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels % 2 != 0 {
            return Err(Error::Config(format!(
                "block channels must be even and positive, got {}",
                self.channels
            )));
        }
        if self.channels % self.shuffle_groups != 0 {
            return Err(Error::Config(format!(
                "channels {} not divisible by shuffle groups {}",
                self.channels, self.shuffle_groups
            )));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "conv kernel must be odd for same padding, got {}",
                self.conv_kernel
            )));
        }
        if self.state_size == 0 {
            return Err(Error::Config("state size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SsConvSsmBlock {
    pub cfg: SsConvSsmConfig,
    // Convolutional half.
    pub pw1: Tensor,
    pub bn1: BatchNorm,
    pub dw: Tensor,
    pub bn2: BatchNorm,
    pub pw2: Tensor,
    // State-space half.
    pub ln1: ChannelLayerNorm,
    pub lin1: ChannelLinear,
    pub ss2d: Ss2dParams,
    pub ln2: ChannelLayerNorm,
    pub lin2: ChannelLinear,
}

pub struct BlockCache {
    x1: Tensor,
    bn1: BatchNormCache,
    pre_relu1: Tensor,
    post_relu1: Tensor,
    bn2: BatchNormCache,
    pre_relu2: Tensor,
    post_relu2: Tensor,
    ln1: LayerNormCache,
    ln1_out: Tensor,
    pre_silu: Tensor,
    ss2d: Ss2dCache,
    ln2: LayerNormCache,
    ln2_out: Tensor,
}

impl SsConvSsmBlock {
    pub fn init(cfg: SsConvSsmConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let half = cfg.channels / 2;
        let k = cfg.conv_kernel;
        let conv_scale = (2.0 / (half * k * k) as f64).sqrt();
        Ok(SsConvSsmBlock {
            cfg,
            pw1: Tensor::randn(&[half, half], rng).scale((2.0 / half as f64).sqrt()),
            bn1: BatchNorm::new(half),
            dw: Tensor::randn(&[half, k, k], rng).scale(conv_scale),
            bn2: BatchNorm::new(half),
            pw2: Tensor::randn(&[half, half], rng).scale((2.0 / half as f64).sqrt()),
            ln1: ChannelLayerNorm::new(half),
            lin1: ChannelLinear::init(half, half, rng),
            ss2d: Ss2dParams::init(half, cfg.state_size, rng),
            ln2: ChannelLayerNorm::new(half),
            lin2: ChannelLinear::init(half, half, rng),
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 4 || x.shape()[1] != self.cfg.channels {
            return Err(Error::dimension(
                "ss_conv_ssm",
                format!(
                    "expected (B,{},H,W) input, got {:?}",
                    self.cfg.channels,
                    x.shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BlockCache)> {
        self.check_input(x)?;
        let (x1, x2) = channel_split(x)?;

        // Convolutional half.
        let c1 = pointwise_conv2d(&x1, &self.pw1)?;
        let (pre_relu1, bn1) = self.bn1.forward_train(&c1)?;
        let post_relu1 = activation_forward(&pre_relu1, Activation::Relu);
        let c4 = depthwise_conv2d(&post_relu1, &self.dw)?;
        let (pre_relu2, bn2) = self.bn2.forward_train(&c4)?;
        let post_relu2 = activation_forward(&pre_relu2, Activation::Relu);
        let conv_out = pointwise_conv2d(&post_relu2, &self.pw2)?;

        // State-space half.
        let (ln1_out, ln1) = self.ln1.forward(&x2)?;
        let pre_silu = self.lin1.forward(&ln1_out)?;
        let silu_out = activation_forward(&pre_silu, Activation::Silu);
        let (scan_out, ss2d) = ss2d_forward(&silu_out, &self.ss2d)?;
        let (ln2_out, ln2) = self.ln2.forward(&scan_out)?;
        let ssm_out = self.lin2.forward(&ln2_out)?;

        let merged = channel_shuffle(&channel_concat(&conv_out, &ssm_out)?, self.cfg.shuffle_groups)?;
        let y = merged.add(x)?;
        Ok((
            y,
            BlockCache {
                x1,
                bn1,
                pre_relu1,
                post_relu1,
                bn2,
                pre_relu2,
                post_relu2,
                ln1,
                ln1_out,
                pre_silu,
                ss2d,
                ln2,
                ln2_out,
            },
        ))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (x1, x2) = channel_split(x)?;

        let c1 = pointwise_conv2d(&x1, &self.pw1)?;
        let c2 = self.bn1.forward_eval(&c1)?;
        let c3 = activation_forward(&c2, Activation::Relu);
        let c4 = depthwise_conv2d(&c3, &self.dw)?;
        let c5 = self.bn2.forward_eval(&c4)?;
        let c6 = activation_forward(&c5, Activation::Relu);
        let conv_out = pointwise_conv2d(&c6, &self.pw2)?;

        let (s1, _) = self.ln1.forward(&x2)?;
        let s2 = self.lin1.forward(&s1)?;
        let s3 = activation_forward(&s2, Activation::Silu);
        let (s4, _) = ss2d_forward(&s3, &self.ss2d)?;
        let (s5, _) = self.ln2.forward(&s4)?;
        let ssm_out = self.lin2.forward(&s5)?;

        let merged = channel_shuffle(&channel_concat(&conv_out, &ssm_out)?, self.cfg.shuffle_groups)?;
        merged.add(x)
    }

    /// Backpropagates through the block; gradients land in `grads` under
    /// `prefix`, and the input cotangent is returned.
    pub fn backward(
        &self,
        cache: &BlockCache,
        dy: &Tensor,
        grads: &mut GradStore,
        prefix: &str,
    ) -> Result<Tensor> {
        // Residual add: dy flows to the merged path and straight to the input.
        // The shuffle permutation inverts with the complementary group count.
        let inverse_groups = self.cfg.channels / self.cfg.shuffle_groups;
        let dmerged = channel_shuffle(dy, inverse_groups)?;
        let (dconv_out, dssm_out) = channel_split(&dmerged)?;

        // Convolutional half, reversed.
        let (dpost_relu2, dpw2) =
            pointwise_conv2d_backward(&cache.post_relu2, &self.pw2, &dconv_out)?;
        let dpre_relu2 = activation_backward(&cache.pre_relu2, Activation::Relu, &dpost_relu2)?;
        let (dc4, dg2, db2) = self.bn2.backward(&cache.bn2, &dpre_relu2)?;
        let (dpost_relu1, ddw) = depthwise_conv2d_backward(&cache.post_relu1, &self.dw, &dc4)?;
        let dpre_relu1 = activation_backward(&cache.pre_relu1, Activation::Relu, &dpost_relu1)?;
        let (dc1, dg1, db1) = self.bn1.backward(&cache.bn1, &dpre_relu1)?;
        let (dx1, dpw1) = pointwise_conv2d_backward(&cache.x1, &self.pw1, &dc1)?;

        // State-space half, reversed.
        let (dln2_out, dlin2_w, dlin2_b) = self.lin2.backward(&cache.ln2_out, &dssm_out)?;
        let (dscan_out, dln2_g, dln2_b) = self.ln2.backward(&cache.ln2, &dln2_out)?;
        let (dsilu_out, ss2d_grads) = ss2d_backward(&self.ss2d, &cache.ss2d, &dscan_out)?;
        let dpre_silu = activation_backward(&cache.pre_silu, Activation::Silu, &dsilu_out)?;
        let (dln1_out, dlin1_w, dlin1_b) = self.lin1.backward(&cache.ln1_out, &dpre_silu)?;
        let (dx2, dln1_g, dln1_b) = self.ln1.backward(&cache.ln1, &dln1_out)?;

        grads.accumulate(&format!("{prefix}.conv.pw1.kernel"), dpw1)?;
        grads.accumulate(&format!("{prefix}.conv.bn1.gamma"), dg1)?;
        grads.accumulate(&format!("{prefix}.conv.bn1.beta"), db1)?;
        grads.accumulate(&format!("{prefix}.conv.dw.kernel"), ddw)?;
        grads.accumulate(&format!("{prefix}.conv.bn2.gamma"), dg2)?;
        grads.accumulate(&format!("{prefix}.conv.bn2.beta"), db2)?;
        grads.accumulate(&format!("{prefix}.conv.pw2.kernel"), dpw2)?;
        grads.accumulate(&format!("{prefix}.ssm.ln1.gamma"), dln1_g)?;
        grads.accumulate(&format!("{prefix}.ssm.ln1.beta"), dln1_b)?;
        grads.accumulate(&format!("{prefix}.ssm.lin1.weight"), dlin1_w)?;
        grads.accumulate(&format!("{prefix}.ssm.lin1.bias"), dlin1_b)?;
        for (di, g) in ss2d_grads.into_iter().enumerate() {
            grads.accumulate(&format!("{prefix}.ssm.ss2d.dir{di}.a"), g.da)?;
            grads.accumulate(&format!("{prefix}.ssm.ss2d.dir{di}.skip"), g.dskip)?;
            grads.accumulate(&format!("{prefix}.ssm.ss2d.dir{di}.w_delta"), g.dw_delta)?;
            grads.accumulate(&format!("{prefix}.ssm.ss2d.dir{di}.b_delta"), g.db_delta)?;
            grads.accumulate(&format!("{prefix}.ssm.ss2d.dir{di}.w_b"), g.dw_b)?;
            grads.accumulate(&format!("{prefix}.ssm.ss2d.dir{di}.b_b"), g.db_b)?;
            grads.accumulate(&format!("{prefix}.ssm.ss2d.dir{di}.w_c"), g.dw_c)?;
            grads.accumulate(&format!("{prefix}.ssm.ss2d.dir{di}.b_c"), g.db_c)?;
        }
        grads.accumulate(&format!("{prefix}.ssm.ln2.gamma"), dln2_g)?;
        grads.accumulate(&format!("{prefix}.ssm.ln2.beta"), dln2_b)?;
        grads.accumulate(&format!("{prefix}.ssm.lin2.weight"), dlin2_w)?;
        grads.accumulate(&format!("{prefix}.ssm.lin2.bias"), dlin2_b)?;

        let mut dx = channel_concat(&dx1, &dx2)?;
        dx.add_scaled(dy, 1.0)?;
        Ok(dx)
    }

    /// Visits parameters as `(suffix, tensor, trainable)`; running statistics
    /// are visited but not trainable.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor, bool)) {
        f("conv.pw1.kernel", &self.pw1, true);
        f("conv.bn1.gamma", &self.bn1.gamma, true);
        f("conv.bn1.beta", &self.bn1.beta, true);
        f("conv.bn1.running_mean", &self.bn1.running_mean, false);
        f("conv.bn1.running_var", &self.bn1.running_var, false);
        f("conv.dw.kernel", &self.dw, true);
        f("conv.bn2.gamma", &self.bn2.gamma, true);
        f("conv.bn2.beta", &self.bn2.beta, true);
        f("conv.bn2.running_mean", &self.bn2.running_mean, false);
        f("conv.bn2.running_var", &self.bn2.running_var, false);
        f("conv.pw2.kernel", &self.pw2, true);
        f("ssm.ln1.gamma", &self.ln1.gamma, true);
        f("ssm.ln1.beta", &self.ln1.beta, true);
        f("ssm.lin1.weight", &self.lin1.weight, true);
        f("ssm.lin1.bias", &self.lin1.bias, true);
        for (di, dir) in self.ss2d.dirs.iter().enumerate() {
            let base = format!("ssm.ss2d.dir{di}");
            f(&format!("{base}.a"), &dir.a, true);
            f(&format!("{base}.skip"), &dir.skip, true);
            f(&format!("{base}.w_delta"), &dir.w_delta, true);
            f(&format!("{base}.b_delta"), &dir.b_delta, true);
            f(&format!("{base}.w_b"), &dir.w_b, true);
            f(&format!("{base}.b_b"), &dir.b_b, true);
            f(&format!("{base}.w_c"), &dir.w_c, true);
            f(&format!("{base}.b_c"), &dir.b_c, true);
        }
        f("ssm.ln2.gamma", &self.ln2.gamma, true);
        f("ssm.ln2.beta", &self.ln2.beta, true);
        f("ssm.lin2.weight", &self.lin2.weight, true);
        f("ssm.lin2.bias", &self.lin2.bias, true);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, bool)) {
        f("conv.pw1.kernel", &mut self.pw1, true);
        f("conv.bn1.gamma", &mut self.bn1.gamma, true);
        f("conv.bn1.beta", &mut self.bn1.beta, true);
        f("conv.bn1.running_mean", &mut self.bn1.running_mean, false);
        f("conv.bn1.running_var", &mut self.bn1.running_var, false);
        f("conv.dw.kernel", &mut self.dw, true);
        f("conv.bn2.gamma", &mut self.bn2.gamma, true);
        f("conv.bn2.beta", &mut self.bn2.beta, true);
        f("conv.bn2.running_mean", &mut self.bn2.running_mean, false);
        f("conv.bn2.running_var", &mut self.bn2.running_var, false);
        f("conv.pw2.kernel", &mut self.pw2, true);
        f("ssm.ln1.gamma", &mut self.ln1.gamma, true);
        f("ssm.ln1.beta", &mut self.ln1.beta, true);
        f("ssm.lin1.weight", &mut self.lin1.weight, true);
        f("ssm.lin1.bias", &mut self.lin1.bias, true);
        for (di, dir) in self.ss2d.dirs.iter_mut().enumerate() {
            let base = format!("ssm.ss2d.dir{di}");
            f(&format!("{base}.a"), &mut dir.a, true);
            f(&format!("{base}.skip"), &mut dir.skip, true);
            f(&format!("{base}.w_delta"), &mut dir.w_delta, true);
            f(&format!("{base}.b_delta"), &mut dir.b_delta, true);
            f(&format!("{base}.w_b"), &mut dir.w_b, true);
            f(&format!("{base}.b_b"), &mut dir.b_b, true);
            f(&format!("{base}.w_c"), &mut dir.w_c, true);
            f(&format!("{base}.b_c"), &mut dir.b_c, true);
        }
        f("ssm.ln2.gamma", &mut self.ln2.gamma, true);
        f("ssm.ln2.beta", &mut self.ln2.beta, true);
        f("ssm.lin2.weight", &mut self.lin2.weight, true);
        f("ssm.lin2.bias", &mut self.lin2.bias, true);
    }
}

/// One full block as a checkable op. Inputs: the feature map followed by the
/// trainable parameters in visit order. Batch statistics are recomputed per
/// call, so the op stays a pure function of its inputs.
pub struct BlockOp {
    pub template: SsConvSsmBlock,
}

impl BlockOp {
    pub fn pack_inputs(x: &Tensor, block: &SsConvSsmBlock) -> Vec<Tensor> {
        let mut inputs = vec![x.clone()];
        block.visit_params(&mut |_, t, trainable| {
            if trainable {
                inputs.push(t.clone());
            }
        });
        inputs
    }

    fn load(&self, inputs: &[Tensor]) -> SsConvSsmBlock {
        let mut block = self.template.clone();
        let mut iter = inputs[1..].iter();
        block.visit_params_mut(&mut |_, t, trainable| {
            if trainable {
                *t = iter.next().expect("input count matches visit order").clone();
            }
        });
        block
    }

    fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.template.visit_params(&mut |name, _, trainable| {
            if trainable {
                names.push(name.to_string());
            }
        });
        names
    }
}

impl DifferentiableOp for BlockOp {
    fn name(&self) -> &str {
        "ss_conv_ssm"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let mut block = self.load(inputs);
        Ok(block.forward_train(&inputs[0])?.0)
    }

    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        let mut block = self.load(inputs);
        let (_, cache) = block.forward_train(&inputs[0])?;
        let mut grads = GradStore::new();
        let dx = block.backward(&cache, upstream, &mut grads, "block")?;
        let mut out = vec![dx];
        for name in self.trainable_names() {
            let g = grads
                .get(&format!("block.{name}"))
                .ok_or_else(|| Error::GradCheck(format!("missing gradient for {name}")))?;
            out.push(g.clone());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn channel_value_map(c: usize) -> Tensor {
        // One pixel per channel, value = channel index.
        Tensor::from_fn(&[1, c, 1, 1], |i| i as f64)
    }

    #[test]
    fn split_halves_in_order() {
        let x = channel_value_map(4);
        let (a, b) = channel_split(&x).unwrap();
        assert_eq!(a.data(), &[0.0, 1.0]);
        assert_eq!(b.data(), &[2.0, 3.0]);
    }

    #[test]
    fn split_concat_roundtrip() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[2, 6, 3, 3], &mut rng);
        let (a, b) = channel_split(&x).unwrap();
        assert_eq!(channel_concat(&a, &b).unwrap(), x);
    }

    #[test]
    fn split_rejects_odd_channels() {
        let x = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(channel_split(&x).is_err());
    }

    #[test]
    fn minimal_split_case() {
        let x = channel_value_map(2);
        let (a, b) = channel_split(&x).unwrap();
        assert_eq!(a.shape(), &[1, 1, 1, 1]);
        assert_eq!(b.shape(), &[1, 1, 1, 1]);
    }

    #[test]
    fn shuffle_interleaves_groups() {
        let x = channel_value_map(6);
        let y = channel_shuffle(&x, 2).unwrap();
        assert_eq!(y.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn single_group_shuffle_is_identity() {
        let x = channel_value_map(5);
        assert_eq!(channel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn complementary_group_counts_invert() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(&[2, 6, 2, 2], &mut rng);
        let y = channel_shuffle(&channel_shuffle(&x, 2).unwrap(), 3).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn shuffle_is_a_bijection() {
        let c = 12;
        let x = channel_value_map(c);
        for groups in [1, 2, 3, 4, 6] {
            let y = channel_shuffle(&x, groups).unwrap();
            let mut values: Vec<usize> = y.data().iter().map(|&v| v as usize).collect();
            values.sort_unstable();
            assert_eq!(values, (0..c).collect::<Vec<_>>());
        }
    }

    #[test]
    fn indivisible_groups_rejected() {
        let x = channel_value_map(6);
        assert!(channel_shuffle(&x, 4).is_err());
    }

    fn small_block(rng: &mut ChaCha8Rng) -> SsConvSsmBlock {
        SsConvSsmBlock::init(
            SsConvSsmConfig {
                channels: 4,
                state_size: 2,
                conv_kernel: 3,
                shuffle_groups: 2,
            },
            rng,
        )
        .unwrap()
    }

    #[test]
    fn block_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut block = small_block(&mut rng);
        let x = Tensor::randn(&[2, 4, 4, 4], &mut rng);
        let (y, _) = block.forward_train(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        let y_eval = block.forward_eval(&x).unwrap();
        assert_eq!(y_eval.shape(), x.shape());
    }

    #[test]
    fn zeroed_branches_leave_only_the_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut block = small_block(&mut rng);
        block.visit_params_mut(&mut |_, t, _| *t = Tensor::zeros(t.shape()));
        let x = Tensor::randn(&[2, 4, 3, 3], &mut rng);
        let (y, _) = block.forward_train(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn visit_orders_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut block = small_block(&mut rng);
        let mut names_a = Vec::new();
        block.visit_params(&mut |n, _, _| names_a.push(n.to_string()));
        let mut names_b = Vec::new();
        block.visit_params_mut(&mut |n, _, _| names_b.push(n.to_string()));
        assert_eq!(names_a, names_b);
        // conv: 7 tensors + 4 running stats; ssm: 2 norms + 2 linears + 4x8 scan params
        assert_eq!(names_a.len(), 11 + 8 + 32);
    }
}
