//! The full classifier: patch embedding, stacked hybrid blocks with
//! patch-merging downsampling between stages, and a pooled linear head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{BlockCache, SsConvSsmBlock, SsConvSsmConfig};
use crate::error::{Error, Result};
use crate::ops::{linear_backward, linear_forward, DifferentiableOp};
use crate::store::GradStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Input height and width in pixels.
    pub input: (usize, usize),
    /// Patch side for the embedding grid.
    pub patch: usize,
    /// Channel width per stage; each stage doubles the previous width.
    pub widths: Vec<usize>,
    /// Blocks per stage.
    pub blocks: Vec<usize>,
    pub state_size: usize,
    pub shuffle_groups: usize,
    pub conv_kernel: usize,
    pub classes: usize,
}

impl ModelConfig {
    /// Desk-scale configuration: 32x32 inputs, two stages of one block each.
    pub fn tiny() -> Self {
        ModelConfig {
            input: (32, 32),
            patch: 4,
            widths: vec![16, 32],
            blocks: vec![1, 1],
            state_size: 8,
            shuffle_groups: 2,
            conv_kernel: 3,
            classes: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input;
        if self.patch == 0 || h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::Config(format!(
                "input {}x{} not divisible by patch {}",
                h, w, self.patch
            )));
        }
        if self.widths.is_empty() || self.widths.len() != self.blocks.len() {
            return Err(Error::Config(
                "stage widths and block counts must be non-empty and equal length".into(),
            ));
        }
        for pair in self.widths.windows(2) {
            if pair[1] != 2 * pair[0] {
                return Err(Error::Config(format!(
                    "stage widths must double across merges, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        let stages = self.widths.len();
        let (gh, gw) = (h / self.patch, w / self.patch);
        let factor = 1 << (stages - 1);
        if gh % factor != 0 || gw % factor != 0 {
            return Err(Error::Config(format!(
                "token grid {}x{} not divisible by the {}x downsampling of {} stages",
                gh, gw, factor, stages
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        for &width in &self.widths {
            SsConvSsmConfig {
                channels: width,
                state_size: self.state_size,
                conv_kernel: self.conv_kernel,
                shuffle_groups: self.shuffle_groups,
            }
            .validate()?;
        }
        Ok(())
    }

    /// Shape of every intermediate feature map for a single sample, computed
    /// arithmetically (no tensors are allocated).
    pub fn shape_trace(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let (h, w) = self.input;
        let mut trace = vec![("input".to_string(), vec![3, h, w])];
        let (mut gh, mut gw) = (h / self.patch, w / self.patch);
        trace.push(("patch_embed".to_string(), vec![self.widths[0], gh, gw]));
        for (s, (&width, &blocks)) in self.widths.iter().zip(self.blocks.iter()).enumerate() {
            for b in 0..blocks {
                trace.push((format!("stage{s}.block{b}"), vec![width, gh, gw]));
            }
            if s + 1 < self.widths.len() {
                gh /= 2;
                gw /= 2;
                trace.push((format!("merge{s}"), vec![self.widths[s + 1], gh, gw]));
            }
        }
        let last = *self.widths.last().unwrap();
        trace.push(("pool".to_string(), vec![last]));
        trace.push(("logits".to_string(), vec![self.classes]));
        Ok(trace)
    }
}

/// Gathers non-overlapping `p x p` patches into rows of a matrix, one row
/// per token, channel-major within the row.
fn im2col_patches(images: &Tensor, p: usize) -> Result<(Tensor, usize, usize)> {
    let (bs, c, h, w) = (
        images.shape()[0],
        images.shape()[1],
        images.shape()[2],
        images.shape()[3],
    );
    let (gh, gw) = (h / p, w / p);
    let row_len = c * p * p;
    let xd = images.data();
    let mut cols = vec![0.0; bs * gh * gw * row_len];
    for b in 0..bs {
        for gy in 0..gh {
            for gx in 0..gw {
                let row = ((b * gh + gy) * gw + gx) * row_len;
                let mut k = 0;
                for ch in 0..c {
                    for py in 0..p {
                        let src = ((b * c + ch) * h + gy * p + py) * w + gx * p;
                        cols[row + k..row + k + p].copy_from_slice(&xd[src..src + p]);
                        k += p;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[bs * gh * gw, row_len], cols)?,
        gh,
        gw,
    ))
}

/// Scatters token rows `[B*gh*gw, c_out]` back to a `[B, c_out, gh, gw]` map.
fn rows_to_map(rows: &Tensor, bs: usize, c_out: usize, gh: usize, gw: usize) -> Result<Tensor> {
    let rd = rows.data();
    let mut out = vec![0.0; bs * c_out * gh * gw];
    for b in 0..bs {
        for gy in 0..gh {
            for gx in 0..gw {
                let row = ((b * gh + gy) * gw + gx) * c_out;
                for ch in 0..c_out {
                    out[((b * c_out + ch) * gh + gy) * gw + gx] = rd[row + ch];
                }
            }
        }
    }
    Tensor::from_vec(&[bs, c_out, gh, gw], out)
}

/// Inverse of [`rows_to_map`].
fn map_to_rows(map: &Tensor) -> Result<Tensor> {
    let (bs, c, gh, gw) = (
        map.shape()[0],
        map.shape()[1],
        map.shape()[2],
        map.shape()[3],
    );
    let md = map.data();
    let mut rows = vec![0.0; bs * gh * gw * c];
    for b in 0..bs {
        for gy in 0..gh {
            for gx in 0..gw {
                let row = ((b * gh + gy) * gw + gx) * c;
                for ch in 0..c {
                    rows[row + ch] = md[((b * c + ch) * gh + gy) * gw + gx];
                }
            }
        }
    }
    Tensor::from_vec(&[bs * gh * gw, c], rows)
}

/// Gathers each 2x2 neighbourhood into a row of 4C values, neighbour-major.
fn gather_2x2(x: &Tensor) -> Result<Tensor> {
    let (bs, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "patch merge needs even spatial dims, got {}x{}",
            h, w
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut rows = vec![0.0; bs * oh * ow * 4 * c];
    for b in 0..bs {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * 4 * c;
                for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                    for ch in 0..c {
                        rows[row + k * c + ch] =
                            xd[((b * c + ch) * h + 2 * oy + dy) * w + 2 * ox + dx];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[bs * oh * ow, 4 * c], rows)
}

fn scatter_2x2(drows: &Tensor, bs: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
    let (oh, ow) = (h / 2, w / 2);
    let rd = drows.data();
    let mut out = vec![0.0; bs * c * h * w];
    for b in 0..bs {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * 4 * c;
                for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                    for ch in 0..c {
                        out[((b * c + ch) * h + 2 * oy + dy) * w + 2 * ox + dx] =
                            rd[row + k * c + ch];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[bs, c, h, w], out)
}

/// Non-overlapping patch embedding: each `p x p` patch is linearly projected
/// to `c0` channels.
pub fn patch_embed(images: &Tensor, p: usize, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (bs, _, h, w) = (
        images.shape()[0],
        images.shape()[1],
        images.shape()[2],
        images.shape()[3],
    );
    if h % p != 0 || w % p != 0 {
        return Err(Error::Config(format!(
            "image {}x{} not divisible by patch {}",
            h, w, p
        )));
    }
    let (cols, gh, gw) = im2col_patches(images, p)?;
    let rows = linear_forward(&cols, weight, bias)?;
    rows_to_map(&rows, bs, weight.shape()[1], gh, gw)
}

/// Concatenate each 2x2 neighbourhood (4C channels) and project to 2C.
pub fn patch_merge(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (bs, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if weight.shape()[0] != 4 * c {
        return Err(Error::dimension(
            "patch_merge",
            format!(
                "projection rows {} do not match gathered channels {}",
                weight.shape()[0],
                4 * c
            ),
        ));
    }
    let rows = gather_2x2(x)?;
    let projected = linear_forward(&rows, weight, bias)?;
    rows_to_map(&projected, bs, weight.shape()[1], h / 2, w / 2)
}

/// Global average pool over the spatial axes.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (bs, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let hw = (h * w) as f64;
    let xd = x.data();
    let mut pooled = vec![0.0; bs * c];
    for b in 0..bs {
        for ch in 0..c {
            let plane = &xd[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            pooled[b * c + ch] = plane.iter().sum::<f64>() / hw;
        }
    }
    Tensor::from_vec(&[bs, c], pooled)
}

/// Pooled features through the linear head.
pub fn classify(features: &Tensor, head_w: &Tensor, head_b: &Tensor) -> Result<Tensor> {
    let pooled = global_avg_pool(features)?;
    linear_forward(&pooled, head_w, head_b)
}

#[derive(Clone, Debug)]
pub struct MedMamba {
    pub config: ModelConfig,
    patch_w: Tensor,
    patch_b: Tensor,
    stages: Vec<Vec<SsConvSsmBlock>>,
    merges: Vec<(Tensor, Tensor)>,
    head_w: Tensor,
    head_b: Tensor,
}

pub struct ModelCache {
    cols: Tensor,
    block_caches: Vec<Vec<BlockCache>>,
    /// Input map and gathered rows per merge.
    merge_caches: Vec<(Tensor, Tensor)>,
    features: Tensor,
    pooled: Tensor,
}

impl MedMamba {
    /// Seeded initialization; the classifier head starts at zero so the
    /// initial loss is exactly `ln(classes)`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c0 = config.widths[0];
        let row_len = 3 * config.patch * config.patch;
        let patch_w = Tensor::randn(&[row_len, c0], &mut rng).scale((2.0 / row_len as f64).sqrt());
        let patch_b = Tensor::zeros(&[c0]);
        let mut stages = Vec::new();
        let mut merges = Vec::new();
        for (s, (&width, &blocks)) in config.widths.iter().zip(config.blocks.iter()).enumerate() {
            let mut stage = Vec::new();
            for _ in 0..blocks {
                stage.push(SsConvSsmBlock::init(
                    SsConvSsmConfig {
                        channels: width,
                        state_size: config.state_size,
                        conv_kernel: config.conv_kernel,
                        shuffle_groups: config.shuffle_groups,
                    },
                    &mut rng,
                )?);
            }
            stages.push(stage);
            if s + 1 < config.widths.len() {
                let w_in = 4 * width;
                let w_out = config.widths[s + 1];
                merges.push((
                    Tensor::randn(&[w_in, w_out], &mut rng).scale((2.0 / w_in as f64).sqrt()),
                    Tensor::zeros(&[w_out]),
                ));
            }
        }
        let last = *config.widths.last().unwrap();
        Ok(MedMamba {
            patch_w,
            patch_b,
            stages,
            merges,
            head_w: Tensor::zeros(&[last, config.classes]),
            head_b: Tensor::zeros(&[config.classes]),
            config,
        })
    }

    fn check_images(&self, images: &Tensor) -> Result<()> {
        let (h, w) = self.config.input;
        if images.ndim() != 4 || images.shape()[1] != 3 || images.shape()[2] != h
            || images.shape()[3] != w
        {
            return Err(Error::dimension(
                "model",
                format!(
                    "expected (B,3,{},{}) images, got {:?}",
                    h,
                    w,
                    images.shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn forward_train(&mut self, images: &Tensor) -> Result<(Tensor, ModelCache)> {
        self.check_images(images)?;
        let bs = images.shape()[0];
        let p = self.config.patch;
        let (cols, gh, gw) = im2col_patches(images, p)?;
        let rows = linear_forward(&cols, &self.patch_w, &self.patch_b)?;
        let mut x = rows_to_map(&rows, bs, self.config.widths[0], gh, gw)?;

        let mut block_caches = Vec::new();
        let mut merge_caches = Vec::new();
        let n_stages = self.stages.len();
        for s in 0..n_stages {
            let mut stage_caches = Vec::new();
            for block in &mut self.stages[s] {
                let (y, cache) = block.forward_train(&x)?;
                stage_caches.push(cache);
                x = y;
            }
            block_caches.push(stage_caches);
            if s + 1 < n_stages {
                let gathered = gather_2x2(&x)?;
                let (mw, mb) = &self.merges[s];
                let projected = linear_forward(&gathered, mw, mb)?;
                let out = rows_to_map(
                    &projected,
                    bs,
                    mw.shape()[1],
                    x.shape()[2] / 2,
                    x.shape()[3] / 2,
                )?;
                merge_caches.push((x, gathered));
                x = out;
            }
        }

        let pooled = global_avg_pool(&x)?;
        let logits = linear_forward(&pooled, &self.head_w, &self.head_b)?;
        Ok((
            logits,
            ModelCache {
                cols,
                block_caches,
                merge_caches,
                features: x,
                pooled,
            },
        ))
    }

    pub fn forward_eval(&self, images: &Tensor) -> Result<Tensor> {
        self.check_images(images)?;
        let mut x = patch_embed(images, self.config.patch, &self.patch_w, &self.patch_b)?;
        let n_stages = self.stages.len();
        for s in 0..n_stages {
            for block in &self.stages[s] {
                x = block.forward_eval(&x)?;
            }
            if s + 1 < n_stages {
                let (mw, mb) = &self.merges[s];
                x = patch_merge(&x, mw, mb)?;
            }
        }
        classify(&x, &self.head_w, &self.head_b)
    }

    /// Backpropagates from the logits cotangent down to every parameter.
    pub fn backward(&self, cache: &ModelCache, dlogits: &Tensor) -> Result<GradStore> {
        let mut grads = GradStore::new();

        let (dpooled, dhead_w, dhead_b) = linear_backward(&cache.pooled, &self.head_w, dlogits)?;
        grads.accumulate("head.weight", dhead_w)?;
        grads.accumulate("head.bias", dhead_b)?;

        // Undo the average pool: spread each pooled cotangent uniformly.
        let f = &cache.features;
        let (bs, c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2], f.shape()[3]);
        let hw = (h * w) as f64;
        let mut dx = Tensor::zeros(f.shape());
        {
            let dd = dx.data_mut();
            for b in 0..bs {
                for ch in 0..c {
                    let g = dpooled.data()[b * c + ch] / hw;
                    for v in &mut dd[(b * c + ch) * h * w..(b * c + ch + 1) * h * w] {
                        *v = g;
                    }
                }
            }
        }

        for s in (0..self.stages.len()).rev() {
            if s + 1 < self.stages.len() {
                let (map_in, gathered) = &cache.merge_caches[s];
                let (mw, _) = &self.merges[s];
                let drows = map_to_rows(&dx)?;
                let (dgathered, dmw, dmb) = linear_backward(gathered, mw, &drows)?;
                grads.accumulate(&format!("merges.{s}.weight"), dmw)?;
                grads.accumulate(&format!("merges.{s}.bias"), dmb)?;
                dx = scatter_2x2(
                    &dgathered,
                    map_in.shape()[0],
                    map_in.shape()[1],
                    map_in.shape()[2],
                    map_in.shape()[3],
                )?;
            }
            for (b, block) in self.stages[s].iter().enumerate().rev() {
                dx = block.backward(
                    &cache.block_caches[s][b],
                    &dx,
                    &mut grads,
                    &format!("stages.{s}.blocks.{b}"),
                )?;
            }
        }

        let drows = map_to_rows(&dx)?;
        let (_, dpw, dpb) = linear_backward(&cache.cols, &self.patch_w, &drows)?;
        grads.accumulate("patch_embed.weight", dpw)?;
        grads.accumulate("patch_embed.bias", dpb)?;
        Ok(grads)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor, bool)) {
        f("patch_embed.weight", &self.patch_w, true);
        f("patch_embed.bias", &self.patch_b, true);
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                let prefix = format!("stages.{s}.blocks.{b}");
                block.visit_params(&mut |name, t, trainable| {
                    f(&format!("{prefix}.{name}"), t, trainable)
                });
            }
        }
        for (m, (w, b)) in self.merges.iter().enumerate() {
            f(&format!("merges.{m}.weight"), w, true);
            f(&format!("merges.{m}.bias"), b, true);
        }
        f("head.weight", &self.head_w, true);
        f("head.bias", &self.head_b, true);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, bool)) {
        f("patch_embed.weight", &mut self.patch_w, true);
        f("patch_embed.bias", &mut self.patch_b, true);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                let prefix = format!("stages.{s}.blocks.{b}");
                block.visit_params_mut(&mut |name, t, trainable| {
                    f(&format!("{prefix}.{name}"), t, trainable)
                });
            }
        }
        for (m, (w, b)) in self.merges.iter_mut().enumerate() {
            f(&format!("merges.{m}.weight"), w, true);
            f(&format!("merges.{m}.bias"), b, true);
        }
        f("head.weight", &mut self.head_w, true);
        f("head.bias", &mut self.head_b, true);
    }

    /// All parameters as owned `(name, tensor)` pairs.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, t, _| out.push((name.to_string(), t.clone())));
        out
    }
}

/// Mean cross-entropy of a fixed batch as a checkable op over the model's
/// trainable parameters. Inputs follow the model's visit order.
pub struct ModelLossOp {
    pub template: MedMamba,
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl ModelLossOp {
    pub fn pack_inputs(model: &MedMamba) -> Vec<Tensor> {
        let mut inputs = Vec::new();
        model.visit_params(&mut |_, t, trainable| {
            if trainable {
                inputs.push(t.clone());
            }
        });
        inputs
    }

    fn load(&self, inputs: &[Tensor]) -> MedMamba {
        let mut model = self.template.clone();
        let mut iter = inputs.iter();
        model.visit_params_mut(&mut |_, t, trainable| {
            if trainable {
                *t = iter.next().expect("input count matches visit order").clone();
            }
        });
        model
    }
}

impl DifferentiableOp for ModelLossOp {
    fn name(&self) -> &str {
        "model_loss"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let mut model = self.load(inputs);
        let (logits, _) = model.forward_train(&self.images)?;
        let (loss, _) = crate::train::cross_entropy(&logits, &self.labels)?;
        Ok(Tensor::scalar(loss))
    }

    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        let mut model = self.load(inputs);
        let (logits, cache) = model.forward_train(&self.images)?;
        let (_, dlogits) = crate::train::cross_entropy(&logits, &self.labels)?;
        let grads = model.backward(&cache, &dlogits.scale(upstream.data()[0]))?;
        let mut out = Vec::new();
        model.visit_params(&mut |name, t, trainable| {
            if trainable {
                match grads.get(name) {
                    Some(g) => out.push(g.clone()),
                    None => out.push(Tensor::zeros(t.shape())),
                }
            }
        });
        Ok(out)
    }
}
