//! Selective state-space core: input-dependent projections of the step size
//! and the state/readout couplings, exact zero-order-hold discretization of
//! the diagonal transition, and linear-time scans with an analytic backward
//! pass.
//!
//! Per channel `i` and state lane `j` the recurrence is scalar:
//!
//! ```text
//! h[t,i,j] = a_bar[t,i,j] * h[t-1,i,j] + b_bar[t,i,j] * x[t,i]
//! y[t,i]   = sum_j c[t,j] * h[t,i,j] + skip[i] * x[t,i]
//! ```
//!
//! with `a_bar = exp(delta * a)` and
//! `b_bar = ((exp(delta*a) - 1) / (delta*a)) * delta * b`, falling back to
//! the first-order series `delta * b * (1 + delta*a/2)` when `|delta*a|`
//! drops below [`SERIES_THRESHOLD`] to dodge the 0/0 singularity.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{linear_backward, linear_forward, Activation, DifferentiableOp};
use crate::tensor::Tensor;

/// Below this magnitude of `delta * a`, the zero-order-hold input coupling
/// switches to its first-order series.
pub const SERIES_THRESHOLD: f64 = 1e-6;

/// Parameters of one selective-SSM channel bank: `d` channels, each with an
/// `n`-lane diagonal transition, plus the projections that derive the step
/// size and couplings from the input token.
#[derive(Clone, Debug)]
pub struct S6Params {
    /// Diagonal transition entries, `[d, n]`; initialized strictly negative.
    pub a: Tensor,
    /// Per-channel skip coefficients, `[d]`.
    pub skip: Tensor,
    /// Step-size projection, `[d, d]` weight and `[d]` bias.
    pub w_delta: Tensor,
    pub b_delta: Tensor,
    /// Input-coupling projection, `[d, n]` weight and `[n]` bias.
    pub w_b: Tensor,
    pub b_b: Tensor,
    /// Readout projection, `[d, n]` weight and `[n]` bias.
    pub w_c: Tensor,
    pub b_c: Tensor,
}

impl S6Params {
    /// Fresh parameters: `a` gets the negative integer ladder `-1..-n` in
    /// every channel, the skip starts at one, and the projections get small
    /// random weights with zero bias.
    pub fn init(d: usize, n: usize, rng: &mut impl Rng) -> Self {
        let a = Tensor::from_fn(&[d, n], |i| -((i % n + 1) as f64));
        let scale_d = 1.0 / (d as f64).sqrt();
        S6Params {
            a,
            skip: Tensor::full(&[d], 1.0),
            w_delta: Tensor::randn(&[d, d], rng).scale(scale_d),
            b_delta: Tensor::zeros(&[d]),
            w_b: Tensor::randn(&[d, n], rng).scale(scale_d),
            b_b: Tensor::zeros(&[n]),
            w_c: Tensor::randn(&[d, n], rng).scale(scale_d),
            b_c: Tensor::zeros(&[n]),
        }
    }

    pub fn channels(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn state_size(&self) -> usize {
        self.a.shape()[1]
    }
}

/// Discretized transition and input coupling, both `[l, d, n]`.
#[derive(Clone, Debug)]
pub struct DiscretizedStep {
    pub a_bar: Tensor,
    pub b_bar: Tensor,
}

/// Derives the per-token step size and couplings from the tokens.
/// The step size passes through softplus so it stays strictly positive.
pub fn project_inputs(x: &Tensor, params: &S6Params) -> Result<(Tensor, Tensor, Tensor)> {
    let z_delta = linear_forward(x, &params.w_delta, &params.b_delta)?;
    let delta = z_delta.map(|v| Activation::Softplus.apply(v));
    let b = linear_forward(x, &params.w_b, &params.b_b)?;
    let c = linear_forward(x, &params.w_c, &params.b_c)?;
    Ok((delta, b, c))
}

fn zoh_factor(u: f64) -> f64 {
    if u.abs() >= SERIES_THRESHOLD {
        u.exp_m1() / u
    } else {
        1.0 + 0.5 * u
    }
}

fn zoh_factor_derivative(u: f64) -> f64 {
    if u.abs() >= SERIES_THRESHOLD {
        ((u - 1.0) * u.exp_m1() + u) / (u * u)
    } else {
        0.5
    }
}

/// Zero-order-hold discretization of the diagonal transition `a` with step
/// sizes `delta` and input couplings `b`.
pub fn discretize(a: &Tensor, b: &Tensor, delta: &Tensor) -> Result<DiscretizedStep> {
    let (d, n) = (a.shape()[0], a.shape()[1]);
    let l = delta.shape()[0];
    if delta.shape() != [l, d] {
        return Err(Error::shape_mismatch("discretize", &[l, d], delta.shape()));
    }
    if b.shape() != [l, n] {
        return Err(Error::shape_mismatch("discretize", &[l, n], b.shape()));
    }
    let ad = a.data();
    let bd = b.data();
    let dd = delta.data();
    let mut a_bar = vec![0.0; l * d * n];
    let mut b_bar = vec![0.0; l * d * n];
    for t in 0..l {
        for i in 0..d {
            let dt = dd[t * d + i];
            let out_base = (t * d + i) * n;
            for j in 0..n {
                let u = dt * ad[i * n + j];
                a_bar[out_base + j] = u.exp();
                b_bar[out_base + j] = zoh_factor(u) * dt * bd[t * n + j];
            }
        }
    }
    Ok(DiscretizedStep {
        a_bar: Tensor::from_vec(&[l, d, n], a_bar)?,
        b_bar: Tensor::from_vec(&[l, d, n], b_bar)?,
    })
}

fn check_scan_shapes(
    step: &DiscretizedStep,
    c: &Tensor,
    skip: &Tensor,
    x: &Tensor,
) -> Result<(usize, usize, usize)> {
    let s = step.a_bar.shape();
    let (l, d, n) = (s[0], s[1], s[2]);
    if step.b_bar.shape() != s {
        return Err(Error::shape_mismatch("scan", s, step.b_bar.shape()));
    }
    if c.shape() != [l, n] {
        return Err(Error::shape_mismatch("scan", &[l, n], c.shape()));
    }
    if skip.shape() != [d] {
        return Err(Error::shape_mismatch("scan", &[d], skip.shape()));
    }
    if x.shape() != [l, d] {
        return Err(Error::shape_mismatch("scan", &[l, d], x.shape()));
    }
    Ok((l, d, n))
}

fn readout(
    h: &[f64],
    c: &Tensor,
    skip: &Tensor,
    x: &Tensor,
    l: usize,
    d: usize,
    n: usize,
) -> Result<Tensor> {
    let cd = c.data();
    let sd = skip.data();
    let xd = x.data();
    let mut y = vec![0.0; l * d];
    for t in 0..l {
        let crow = &cd[t * n..(t + 1) * n];
        for i in 0..d {
            let hrow = &h[(t * d + i) * n..(t * d + i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += crow[j] * hrow[j];
            }
            y[t * d + i] = acc + sd[i] * xd[t * d + i];
        }
    }
    Tensor::from_vec(&[l, d], y)
}

fn run_sequential(step: &DiscretizedStep, x: &Tensor, h0: Option<&Tensor>) -> Result<Vec<f64>> {
    let s = step.a_bar.shape();
    let (l, d, n) = (s[0], s[1], s[2]);
    let ab = step.a_bar.data();
    let bb = step.b_bar.data();
    let xd = x.data();
    let mut h = vec![0.0; l * d * n];
    let mut prev = match h0 {
        Some(t) => {
            if t.shape() != [d, n] {
                return Err(Error::shape_mismatch("scan h0", &[d, n], t.shape()));
            }
            t.data().to_vec()
        }
        None => vec![0.0; d * n],
    };
    for t in 0..l {
        for i in 0..d {
            let base = (t * d + i) * n;
            let xv = xd[t * d + i];
            for j in 0..n {
                let lane = i * n + j;
                let next = ab[base + j] * prev[lane] + bb[base + j] * xv;
                h[base + j] = next;
                prev[lane] = next;
            }
        }
    }
    Ok(h)
}

/// State trajectory `[l, d, n]` of the sequential recurrence, for callers
/// that need to inspect the states themselves.
pub fn scan_states(step: &DiscretizedStep, x: &Tensor, h0: Option<&Tensor>) -> Result<Tensor> {
    let s = step.a_bar.shape().to_vec();
    let h = run_sequential(step, x, h0)?;
    Tensor::from_vec(&s, h)
}

/// Runs the recurrence token by token and applies the readout.
pub fn scan_sequential(
    step: &DiscretizedStep,
    c: &Tensor,
    skip: &Tensor,
    x: &Tensor,
    h0: Option<&Tensor>,
) -> Result<Tensor> {
    let (l, d, n) = check_scan_shapes(step, c, skip, x)?;
    let h = run_sequential(step, x, h0)?;
    readout(&h, c, skip, x, l, d, n)
}

/// Sequence lengths below this skip the prefix-scan tree; the tree overhead
/// dominates for short inputs.
const PARALLEL_MIN_LEN: usize = 32;

/// Composition of two linear steps `h -> a*h + b`, `first` applied first.
#[inline]
fn compose(first: (f64, f64), second: (f64, f64)) -> (f64, f64) {
    (second.0 * first.0, second.0 * first.1 + second.1)
}

/// Work-efficient exclusive prefix scan (up-sweep / down-sweep) over the
/// per-step pairs `(a_bar, b_bar * x)`, vectorized across the `d*n` lanes.
/// Produces exactly the same states as the sequential recurrence up to
/// floating-point reassociation.
fn run_parallel(step: &DiscretizedStep, x: &Tensor, h0: Option<&Tensor>) -> Result<Vec<f64>> {
    let s = step.a_bar.shape();
    let (l, d, n) = (s[0], s[1], s[2]);
    let lanes = d * n;
    let ab = step.a_bar.data();
    let bb = step.b_bar.data();
    let xd = x.data();

    // Padded to a power of two with identity pairs (1, 0).
    let padded = l.next_power_of_two();
    let mut pa = vec![1.0; padded * lanes];
    let mut pb = vec![0.0; padded * lanes];
    for t in 0..l {
        for i in 0..d {
            let xv = xd[t * d + i];
            let base = (t * d + i) * n;
            let lane_base = t * lanes + i * n;
            for j in 0..n {
                pa[lane_base + j] = ab[base + j];
                pb[lane_base + j] = bb[base + j] * xv;
            }
        }
    }

    // Up-sweep: each internal node accumulates its subtree composition.
    let mut dist = 1;
    while dist < padded {
        let mut k = 2 * dist - 1;
        while k < padded {
            let (left, right) = (k - dist, k);
            for lane in 0..lanes {
                let f = (pa[left * lanes + lane], pb[left * lanes + lane]);
                let sc = (pa[right * lanes + lane], pb[right * lanes + lane]);
                let (na, nb) = compose(f, sc);
                pa[right * lanes + lane] = na;
                pb[right * lanes + lane] = nb;
            }
            k += 2 * dist;
        }
        dist *= 2;
    }

    // Down-sweep: root becomes the identity, then every node passes its
    // incoming prefix left and composes it with the left subtree on the right.
    for lane in 0..lanes {
        pa[(padded - 1) * lanes + lane] = 1.0;
        pb[(padded - 1) * lanes + lane] = 0.0;
    }
    dist = padded / 2;
    while dist >= 1 {
        let mut k = 2 * dist - 1;
        while k < padded {
            let (left, right) = (k - dist, k);
            for lane in 0..lanes {
                let left_sum = (pa[left * lanes + lane], pb[left * lanes + lane]);
                let prefix = (pa[right * lanes + lane], pb[right * lanes + lane]);
                pa[left * lanes + lane] = prefix.0;
                pb[left * lanes + lane] = prefix.1;
                let (na, nb) = compose(prefix, left_sum);
                pa[right * lanes + lane] = na;
                pb[right * lanes + lane] = nb;
            }
            k += 2 * dist;
        }
        dist /= 2;
    }

    // Inclusive state at t: (exclusive prefix at t) then step t, applied to h0.
    let h0_data = match h0 {
        Some(t) => {
            if t.shape() != [d, n] {
                return Err(Error::shape_mismatch("scan h0", &[d, n], t.shape()));
            }
            t.data().to_vec()
        }
        None => vec![0.0; lanes],
    };
    let mut h = vec![0.0; l * lanes];
    for t in 0..l {
        for i in 0..d {
            let xv = xd[t * d + i];
            let base = (t * d + i) * n;
            for j in 0..n {
                let lane = i * n + j;
                let exclusive = (pa[t * lanes + lane], pb[t * lanes + lane]);
                let elem = (ab[base + j], bb[base + j] * xv);
                let (ia, ib) = compose(exclusive, elem);
                h[t * lanes + lane] = ia * h0_data[lane] + ib;
            }
        }
    }
    Ok(h)
}

/// Same contract as [`scan_sequential`], evaluated with an associative
/// prefix scan; short sequences fall back to the sequential path.
pub fn scan_parallel(
    step: &DiscretizedStep,
    c: &Tensor,
    skip: &Tensor,
    x: &Tensor,
    h0: Option<&Tensor>,
) -> Result<Tensor> {
    let (l, d, n) = check_scan_shapes(step, c, skip, x)?;
    let h = if l < PARALLEL_MIN_LEN {
        run_sequential(step, x, h0)?
    } else {
        run_parallel(step, x, h0)?
    };
    readout(&h, c, skip, x, l, d, n)
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Clone, Debug)]
pub struct ScanCache {
    step: DiscretizedStep,
    /// State trajectory, `[l, d, n]`.
    h: Tensor,
    h0: Tensor,
}

/// Discretize-and-scan with cached intermediates; `h0` defaults to zeros.
pub fn discretize_scan_forward(
    a: &Tensor,
    delta: &Tensor,
    b: &Tensor,
    c: &Tensor,
    skip: &Tensor,
    x: &Tensor,
    h0: Option<&Tensor>,
) -> Result<(Tensor, ScanCache)> {
    let step = discretize(a, b, delta)?;
    let (l, d, n) = check_scan_shapes(&step, c, skip, x)?;
    let h = run_sequential(&step, x, h0)?;
    let y = readout(&h, c, skip, x, l, d, n)?;
    let h0_t = match h0 {
        Some(t) => t.clone(),
        None => Tensor::zeros(&[d, n]),
    };
    Ok((
        y,
        ScanCache {
            step,
            h: Tensor::from_vec(&[l, d, n], h)?,
            h0: h0_t,
        },
    ))
}

/// Cotangents of [`discretize_scan_forward`] with respect to
/// `(a, delta, b, c, skip, x)`; `h0` is treated as a constant.
pub struct ScanGrads {
    pub da: Tensor,
    pub ddelta: Tensor,
    pub db: Tensor,
    pub dc: Tensor,
    pub dskip: Tensor,
    pub dx: Tensor,
}

pub fn discretize_scan_backward(
    a: &Tensor,
    delta: &Tensor,
    b: &Tensor,
    c: &Tensor,
    skip: &Tensor,
    x: &Tensor,
    cache: &ScanCache,
    dy: &Tensor,
) -> Result<ScanGrads> {
    let (l, d, n) = check_scan_shapes(&cache.step, c, skip, x)?;
    if dy.shape() != [l, d] {
        return Err(Error::shape_mismatch("scan_backward", &[l, d], dy.shape()));
    }
    let ab = cache.step.a_bar.data();
    let hd = cache.h.data();
    let h0d = cache.h0.data();
    let ad = a.data();
    let dd = delta.data();
    let bd = b.data();
    let cd = c.data();
    let sd = skip.data();
    let xd = x.data();
    let dyd = dy.data();

    let mut da = vec![0.0; d * n];
    let mut ddelta = vec![0.0; l * d];
    let mut db = vec![0.0; l * n];
    let mut dc = vec![0.0; l * n];
    let mut dskip = vec![0.0; d];
    let mut dx = vec![0.0; l * d];

    // Reverse pass over the recurrence: g holds dL/dh at the current step.
    let mut g = vec![0.0; d * n];
    for t in (0..l).rev() {
        let crow = &cd[t * n..(t + 1) * n];
        for i in 0..d {
            let base = (t * d + i) * n;
            let grad_y = dyd[t * d + i];
            let xv = xd[t * d + i];
            let dt = dd[t * d + i];

            dskip[i] += grad_y * xv;
            let mut dx_acc = grad_y * sd[i];
            let mut ddelta_acc = 0.0;

            for j in 0..n {
                let lane = i * n + j;
                // Readout contribution plus what flowed back from step t+1.
                let gh = g[lane] + grad_y * crow[j];
                dc[t * n + j] += grad_y * hd[base + j];

                let h_prev = if t == 0 {
                    h0d[lane]
                } else {
                    hd[((t - 1) * d + i) * n + j]
                };
                let a_bar = ab[base + j];
                let da_bar = gh * h_prev;
                let db_bar = gh * xv;

                let av = ad[lane];
                let u = dt * av;
                let f = zoh_factor(u);
                let fp = zoh_factor_derivative(u);
                let bv = bd[t * n + j];

                // a_bar = exp(u); b_bar = f(u) * dt * bv with u = dt * av.
                let du = da_bar * a_bar + db_bar * fp * dt * bv;
                ddelta_acc += du * av + db_bar * f * bv;
                da[lane] += du * dt;
                db[t * n + j] += db_bar * f * dt;

                dx_acc += gh * (f * dt * bv);
                g[lane] = gh * a_bar;
            }
            dx[t * d + i] = dx_acc;
            ddelta[t * d + i] = ddelta_acc;
        }
    }

    Ok(ScanGrads {
        da: Tensor::from_vec(&[d, n], da)?,
        ddelta: Tensor::from_vec(&[l, d], ddelta)?,
        db: Tensor::from_vec(&[l, n], db)?,
        dc: Tensor::from_vec(&[l, n], dc)?,
        dskip: Tensor::from_vec(&[d], dskip)?,
        dx: Tensor::from_vec(&[l, d], dx)?,
    })
}

/// Forward cache for the full projected pipeline.
#[derive(Clone, Debug)]
pub struct S6Cache {
    pub delta: Tensor,
    pub b: Tensor,
    pub c: Tensor,
    z_delta: Tensor,
    scan: ScanCache,
}

/// Full selective-SSM forward: project, discretize, scan, read out.
pub fn s6_forward(x: &Tensor, params: &S6Params) -> Result<(Tensor, S6Cache)> {
    let z_delta = linear_forward(x, &params.w_delta, &params.b_delta)?;
    let delta = z_delta.map(|v| Activation::Softplus.apply(v));
    let b = linear_forward(x, &params.w_b, &params.b_b)?;
    let c = linear_forward(x, &params.w_c, &params.b_c)?;
    let (y, scan) =
        discretize_scan_forward(&params.a, &delta, &b, &c, &params.skip, x, None)?;
    Ok((
        y,
        S6Cache {
            delta,
            b,
            c,
            z_delta,
            scan,
        },
    ))
}

/// Cotangents for the token sequence and every parameter tensor.
pub struct S6Grads {
    pub dx: Tensor,
    pub da: Tensor,
    pub dskip: Tensor,
    pub dw_delta: Tensor,
    pub db_delta: Tensor,
    pub dw_b: Tensor,
    pub db_b: Tensor,
    pub dw_c: Tensor,
    pub db_c: Tensor,
}

pub fn s6_backward(
    x: &Tensor,
    params: &S6Params,
    cache: &S6Cache,
    dy: &Tensor,
) -> Result<S6Grads> {
    let grads = discretize_scan_backward(
        &params.a,
        &cache.delta,
        &cache.b,
        &cache.c,
        &params.skip,
        x,
        &cache.scan,
        dy,
    )?;

    // delta = softplus(z_delta): scale the step-size cotangent by sigmoid.
    let dz_delta = cache
        .z_delta
        .zip_map(&grads.ddelta, |z, g| Activation::Softplus.derivative(z) * g)?;

    let (dx_delta, dw_delta, db_delta) = linear_backward(x, &params.w_delta, &dz_delta)?;
    let (dx_b, dw_b, db_b) = linear_backward(x, &params.w_b, &grads.db)?;
    let (dx_c, dw_c, db_c) = linear_backward(x, &params.w_c, &grads.dc)?;

    let mut dx = grads.dx;
    dx.add_scaled(&dx_delta, 1.0)?;
    dx.add_scaled(&dx_b, 1.0)?;
    dx.add_scaled(&dx_c, 1.0)?;

    Ok(S6Grads {
        dx,
        da: grads.da,
        dskip: grads.dskip,
        dw_delta,
        db_delta,
        dw_b,
        db_b,
        dw_c,
        db_c,
    })
}

/// Discretize-plus-scan as a checkable op.
/// Inputs: `[a, delta, b, c, skip, x]`.
pub struct DiscretizeScanOp;

impl DifferentiableOp for DiscretizeScanOp {
    fn name(&self) -> &str {
        "discretize_scan"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let (y, _) = discretize_scan_forward(
            &inputs[0], &inputs[1], &inputs[2], &inputs[3], &inputs[4], &inputs[5], None,
        )?;
        Ok(y)
    }

    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        let (_, cache) = discretize_scan_forward(
            &inputs[0], &inputs[1], &inputs[2], &inputs[3], &inputs[4], &inputs[5], None,
        )?;
        let g = discretize_scan_backward(
            &inputs[0], &inputs[1], &inputs[2], &inputs[3], &inputs[4], &inputs[5], &cache,
            upstream,
        )?;
        Ok(vec![g.da, g.ddelta, g.db, g.dc, g.dskip, g.dx])
    }
}

/// The full projected pipeline as a checkable op.
/// Inputs: `[x, a, skip, w_delta, b_delta, w_b, b_b, w_c, b_c]`.
pub struct S6Op;

impl S6Op {
    pub fn pack_inputs(x: &Tensor, p: &S6Params) -> Vec<Tensor> {
        vec![
            x.clone(),
            p.a.clone(),
            p.skip.clone(),
            p.w_delta.clone(),
            p.b_delta.clone(),
            p.w_b.clone(),
            p.b_b.clone(),
            p.w_c.clone(),
            p.b_c.clone(),
        ]
    }

    fn unpack(inputs: &[Tensor]) -> (Tensor, S6Params) {
        (
            inputs[0].clone(),
            S6Params {
                a: inputs[1].clone(),
                skip: inputs[2].clone(),
                w_delta: inputs[3].clone(),
                b_delta: inputs[4].clone(),
                w_b: inputs[5].clone(),
                b_b: inputs[6].clone(),
                w_c: inputs[7].clone(),
                b_c: inputs[8].clone(),
            },
        )
    }
}

impl DifferentiableOp for S6Op {
    fn name(&self) -> &str {
        "s6"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let (x, params) = Self::unpack(inputs);
        Ok(s6_forward(&x, &params)?.0)
    }

    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        let (x, params) = Self::unpack(inputs);
        let (_, cache) = s6_forward(&x, &params)?;
        let g = s6_backward(&x, &params, &cache, upstream)?;
        Ok(vec![
            g.dx, g.da, g.dskip, g.dw_delta, g.db_delta, g.dw_b, g.db_b, g.dw_c, g.db_c,
        ])
    }
}
