//! 2D selective scan: unfold a feature map into four directional token
//! sequences, run an independent selective SSM over each, fold the results
//! back onto the grid and sum them.
//!
//! The four traversals are row-major forward/reverse and column-major
//! forward/reverse; each reverse order is the exact index reversal of its
//! forward partner, so every traversal is a bijection between grid cells
//! and sequence positions.

use crate::error::{Error, Result};
use crate::ops::DifferentiableOp;
use crate::s6::{s6_backward, s6_forward, S6Cache, S6Grads, S6Op, S6Params};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanDirection {
    RowForward,
    RowReverse,
    ColForward,
    ColReverse,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::RowForward,
        ScanDirection::RowReverse,
        ScanDirection::ColForward,
        ScanDirection::ColReverse,
    ];

    /// Grid position visited at sequence index `k`.
    pub fn grid_position(self, k: usize, h: usize, w: usize) -> (usize, usize) {
        let hw = h * w;
        debug_assert!(k < hw);
        match self {
            ScanDirection::RowForward => (k / w, k % w),
            ScanDirection::RowReverse => {
                let r = hw - 1 - k;
                (r / w, r % w)
            }
            ScanDirection::ColForward => (k % h, k / h),
            ScanDirection::ColReverse => {
                let r = hw - 1 - k;
                (r % h, r / h)
            }
        }
    }

    /// Sequence index at which grid cell `(row, col)` is visited.
    pub fn sequence_index(self, row: usize, col: usize, h: usize, w: usize) -> usize {
        let hw = h * w;
        match self {
            ScanDirection::RowForward => row * w + col,
            ScanDirection::RowReverse => hw - 1 - (row * w + col),
            ScanDirection::ColForward => col * h + row,
            ScanDirection::ColReverse => hw - 1 - (col * h + row),
        }
    }
}

fn check_fmap(context: &str, fmap: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if fmap.ndim() != 4 {
        return Err(Error::dimension(
            context,
            format!("feature map must be 4-D (B,C,H,W), got {:?}", fmap.shape()),
        ));
    }
    let s = fmap.shape();
    if s[2] == 0 || s[3] == 0 {
        return Err(Error::dimension(context, "spatial axes must be non-empty"));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

/// Unfolds the map into the four directional sequences, each `[B, H*W, C]`.
pub fn scan_expand(fmap: &Tensor) -> Result<[Tensor; 4]> {
    let (bs, c, h, w) = check_fmap("scan_expand", fmap)?;
    let hw = h * w;
    let xd = fmap.data();
    let mut out: [Vec<f64>; 4] = [
        vec![0.0; bs * hw * c],
        vec![0.0; bs * hw * c],
        vec![0.0; bs * hw * c],
        vec![0.0; bs * hw * c],
    ];
    for (di, dir) in ScanDirection::ALL.iter().enumerate() {
        let seq = &mut out[di];
        for b in 0..bs {
            for k in 0..hw {
                let (row, col) = dir.grid_position(k, h, w);
                for ch in 0..c {
                    seq[(b * hw + k) * c + ch] = xd[((b * c + ch) * h + row) * w + col];
                }
            }
        }
    }
    let shape = [bs, hw, c];
    Ok([
        Tensor::from_vec(&shape, std::mem::take(&mut out[0]))?,
        Tensor::from_vec(&shape, std::mem::take(&mut out[1]))?,
        Tensor::from_vec(&shape, std::mem::take(&mut out[2]))?,
        Tensor::from_vec(&shape, std::mem::take(&mut out[3]))?,
    ])
}

/// Folds each sequence back onto the grid by inverting its traversal, then
/// sums the four grids elementwise.
pub fn scan_merge(seqs: &[Tensor; 4], h: usize, w: usize) -> Result<Tensor> {
    let hw = h * w;
    let (bs, c) = {
        let s = seqs[0].shape();
        if s.len() != 3 || s[1] != hw {
            return Err(Error::dimension(
                "scan_merge",
                format!(
                    "sequence shape {:?} does not match length {} = {}x{}",
                    s, hw, h, w
                ),
            ));
        }
        (s[0], s[2])
    };
    for (i, seq) in seqs.iter().enumerate() {
        if seq.shape() != [bs, hw, c] {
            return Err(Error::dimension(
                "scan_merge",
                format!(
                    "sequence {} shape {:?} disagrees with {:?}",
                    i,
                    seq.shape(),
                    [bs, hw, c]
                ),
            ));
        }
    }
    // Gather per cell and sum as (row pair) + (column pair); the pairwise
    // grouping keeps the result bit-identical when forward/reverse partners
    // are exchanged.
    let mut out = vec![0.0; bs * c * hw];
    for b in 0..bs {
        for row in 0..h {
            for col in 0..w {
                let ks = [
                    ScanDirection::RowForward.sequence_index(row, col, h, w),
                    ScanDirection::RowReverse.sequence_index(row, col, h, w),
                    ScanDirection::ColForward.sequence_index(row, col, h, w),
                    ScanDirection::ColReverse.sequence_index(row, col, h, w),
                ];
                for ch in 0..c {
                    let v = |di: usize| seqs[di].data()[(b * hw + ks[di]) * c + ch];
                    out[((b * c + ch) * h + row) * w + col] =
                        (v(0) + v(1)) + (v(2) + v(3));
                }
            }
        }
    }
    Tensor::from_vec(&[bs, c, h, w], out)
}

/// Independent selective-SSM parameter sets, one per scan direction.
#[derive(Clone, Debug)]
pub struct Ss2dParams {
    pub dirs: [S6Params; 4],
}

impl Ss2dParams {
    pub fn init(channels: usize, state_size: usize, rng: &mut impl rand::Rng) -> Self {
        Ss2dParams {
            dirs: [
                S6Params::init(channels, state_size, rng),
                S6Params::init(channels, state_size, rng),
                S6Params::init(channels, state_size, rng),
                S6Params::init(channels, state_size, rng),
            ],
        }
    }

    pub fn channels(&self) -> usize {
        self.dirs[0].channels()
    }
}

pub struct Ss2dCache {
    /// One cache per (batch element, direction).
    per_sample: Vec<[S6Cache; 4]>,
    sequences: Vec<[Tensor; 4]>,
    h: usize,
    w: usize,
}

/// Expand, scan each direction with its own parameters, merge.
pub fn ss2d_forward(fmap: &Tensor, params: &Ss2dParams) -> Result<(Tensor, Ss2dCache)> {
    let (bs, c, h, w) = check_fmap("ss2d_forward", fmap)?;
    if params.channels() != c {
        return Err(Error::dimension(
            "ss2d_forward",
            format!(
                "parameter channel count {} does not match feature channels {}",
                params.channels(),
                c
            ),
        ));
    }
    let hw = h * w;
    let seqs = scan_expand(fmap)?;
    let mut out_seqs: Vec<[Tensor; 4]> = Vec::with_capacity(bs);
    let mut caches: Vec<[S6Cache; 4]> = Vec::with_capacity(bs);
    let mut in_seqs: Vec<[Tensor; 4]> = Vec::with_capacity(bs);
    for b in 0..bs {
        let mut ys: Vec<Tensor> = Vec::with_capacity(4);
        let mut cs: Vec<S6Cache> = Vec::with_capacity(4);
        let mut xs: Vec<Tensor> = Vec::with_capacity(4);
        for di in 0..4 {
            let start = b * hw * c;
            let x = Tensor::from_vec(
                &[hw, c],
                seqs[di].data()[start..start + hw * c].to_vec(),
            )?;
            let (y, cache) = s6_forward(&x, &params.dirs[di])?;
            ys.push(y);
            cs.push(cache);
            xs.push(x);
        }
        let ys: [Tensor; 4] = ys.try_into().expect("four directions");
        let cs: [S6Cache; 4] = match cs.try_into() {
            Ok(v) => v,
            Err(_) => unreachable!(),
        };
        let xs: [Tensor; 4] = xs.try_into().expect("four directions");
        out_seqs.push(ys);
        caches.push(cs);
        in_seqs.push(xs);
    }

    // Stitch per-sample outputs back into batched sequences for the merge.
    let mut merged_inputs: Vec<Tensor> = Vec::with_capacity(4);
    for di in 0..4 {
        let mut data = vec![0.0; bs * hw * c];
        for (b, ys) in out_seqs.iter().enumerate() {
            data[b * hw * c..(b + 1) * hw * c].copy_from_slice(ys[di].data());
        }
        merged_inputs.push(Tensor::from_vec(&[bs, hw, c], data)?);
    }
    let merged: [Tensor; 4] = merged_inputs.try_into().expect("four directions");
    let out = scan_merge(&merged, h, w)?;
    Ok((
        out,
        Ss2dCache {
            per_sample: caches,
            sequences: in_seqs,
            h,
            w,
        },
    ))
}

/// Gradients for the feature map and all four parameter sets.
pub fn ss2d_backward(
    params: &Ss2dParams,
    cache: &Ss2dCache,
    dout: &Tensor,
) -> Result<(Tensor, [S6Grads; 4])> {
    let (bs, c, h, w) = check_fmap("ss2d_backward", dout)?;
    if h != cache.h || w != cache.w {
        return Err(Error::shape_mismatch(
            "ss2d_backward",
            &[cache.h, cache.w],
            &[h, w],
        ));
    }
    let hw = h * w;
    let dd = dout.data();
    let mut dfmap = vec![0.0; bs * c * hw];
    let mut dir_grads: Vec<Option<S6Grads>> = vec![None, None, None, None];
    for b in 0..bs {
        for (di, dir) in ScanDirection::ALL.iter().enumerate() {
            // Merge scatter-adds each sequence onto the grid, so the
            // upstream cotangent of sequence element k is the grid value at
            // the cell it was folded into.
            let mut dy = vec![0.0; hw * c];
            for k in 0..hw {
                let (row, col) = dir.grid_position(k, h, w);
                for ch in 0..c {
                    dy[k * c + ch] = dd[((b * c + ch) * h + row) * w + col];
                }
            }
            let dy = Tensor::from_vec(&[hw, c], dy)?;
            let grads = s6_backward(
                &cache.sequences[b][di],
                &params.dirs[di],
                &cache.per_sample[b][di],
                &dy,
            )?;
            // Expand gathered grid cells into the sequence, so its transpose
            // scatters sequence cotangents back to the cells.
            for k in 0..hw {
                let (row, col) = dir.grid_position(k, h, w);
                for ch in 0..c {
                    dfmap[((b * c + ch) * h + row) * w + col] += grads.dx.data()[k * c + ch];
                }
            }
            match &mut dir_grads[di] {
                None => dir_grads[di] = Some(grads),
                Some(acc) => {
                    acc.da.add_scaled(&grads.da, 1.0)?;
                    acc.dskip.add_scaled(&grads.dskip, 1.0)?;
                    acc.dw_delta.add_scaled(&grads.dw_delta, 1.0)?;
                    acc.db_delta.add_scaled(&grads.db_delta, 1.0)?;
                    acc.dw_b.add_scaled(&grads.dw_b, 1.0)?;
                    acc.db_b.add_scaled(&grads.db_b, 1.0)?;
                    acc.dw_c.add_scaled(&grads.dw_c, 1.0)?;
                    acc.db_c.add_scaled(&grads.db_c, 1.0)?;
                }
            }
        }
    }
    let grads: [S6Grads; 4] = match dir_grads
        .into_iter()
        .map(|g| g.expect("batch is non-empty"))
        .collect::<Vec<_>>()
        .try_into()
    {
        Ok(v) => v,
        Err(_) => unreachable!(),
    };
    Ok((Tensor::from_vec(&[bs, c, h, w], dfmap)?, grads))
}

/// The whole 2D scan as a checkable op over a `[1,C,H,W]` map.
/// Inputs: the map followed by the nine tensors of each direction's
/// parameter set, in [`S6Op::pack_inputs`] order minus the token input.
pub struct Ss2dOp {
    pub channels: usize,
    pub state_size: usize,
}

impl Ss2dOp {
    pub fn pack_inputs(fmap: &Tensor, params: &Ss2dParams) -> Vec<Tensor> {
        let mut inputs = vec![fmap.clone()];
        for dir in &params.dirs {
            inputs.extend_from_slice(&S6Op::pack_inputs(&Tensor::zeros(&[1, 1]), dir)[1..]);
        }
        inputs
    }

    fn unpack(&self, inputs: &[Tensor]) -> (Tensor, Ss2dParams) {
        let fmap = inputs[0].clone();
        let mut dirs = Vec::with_capacity(4);
        for di in 0..4 {
            let base = 1 + di * 8;
            dirs.push(S6Params {
                a: inputs[base].clone(),
                skip: inputs[base + 1].clone(),
                w_delta: inputs[base + 2].clone(),
                b_delta: inputs[base + 3].clone(),
                w_b: inputs[base + 4].clone(),
                b_b: inputs[base + 5].clone(),
                w_c: inputs[base + 6].clone(),
                b_c: inputs[base + 7].clone(),
            });
        }
        let dirs: [S6Params; 4] = match dirs.try_into() {
            Ok(v) => v,
            Err(_) => unreachable!(),
        };
        (fmap, Ss2dParams { dirs })
    }
}

impl DifferentiableOp for Ss2dOp {
    fn name(&self) -> &str {
        "ss2d"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let (fmap, params) = self.unpack(inputs);
        Ok(ss2d_forward(&fmap, &params)?.0)
    }

    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        let (fmap, params) = self.unpack(inputs);
        let (_, cache) = ss2d_forward(&fmap, &params)?;
        let (dfmap, grads) = ss2d_backward(&params, &cache, upstream)?;
        let mut out = vec![dfmap];
        for g in grads {
            out.extend([
                g.da, g.dskip, g.dw_delta, g.db_delta, g.dw_b, g.db_b, g.dw_c, g.db_c,
            ]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map_2x2() -> Tensor {
        // [[a, b], [c, d]] with a=1, b=2, c=3, d=4 in one channel.
        Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn traversal_orders_on_2x2() {
        let seqs = scan_expand(&map_2x2()).unwrap();
        let order = |i: usize| -> Vec<f64> { seqs[i].data().to_vec() };
        assert_eq!(order(0), vec![1.0, 2.0, 3.0, 4.0]); // row forward
        assert_eq!(order(1), vec![4.0, 3.0, 2.0, 1.0]); // row reverse
        assert_eq!(order(2), vec![1.0, 3.0, 2.0, 4.0]); // col forward
        assert_eq!(order(3), vec![4.0, 2.0, 3.0, 1.0]); // col reverse
    }

    #[test]
    fn degenerate_grid_gives_equal_sequences() {
        let fmap = Tensor::from_vec(&[1, 3, 1, 1], vec![5.0, 6.0, 7.0]).unwrap();
        let seqs = scan_expand(&fmap).unwrap();
        for seq in &seqs {
            assert_eq!(seq.data(), &[5.0, 6.0, 7.0]);
        }
    }

    #[test]
    fn traversals_are_permutations() {
        let (h, w) = (5, 7);
        for dir in ScanDirection::ALL {
            let mut seen = vec![false; h * w];
            for k in 0..h * w {
                let (row, col) = dir.grid_position(k, h, w);
                assert!(!seen[row * w + col]);
                seen[row * w + col] = true;
                assert_eq!(dir.sequence_index(row, col, h, w), k);
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn reverse_orders_are_exact_reversals() {
        let (h, w) = (3, 4);
        for k in 0..h * w {
            assert_eq!(
                ScanDirection::RowReverse.grid_position(k, h, w),
                ScanDirection::RowForward.grid_position(h * w - 1 - k, h, w)
            );
            assert_eq!(
                ScanDirection::ColReverse.grid_position(k, h, w),
                ScanDirection::ColForward.grid_position(h * w - 1 - k, h, w)
            );
        }
    }

    #[test]
    fn merge_of_four_identical_passthroughs_is_four_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fmap = Tensor::randn(&[2, 3, 4, 5], &mut rng);
        let seqs = scan_expand(&fmap).unwrap();
        let merged = scan_merge(&seqs, 4, 5).unwrap();
        let four_x = fmap.scale(4.0);
        assert_eq!(merged, four_x);
    }

    #[test]
    fn single_path_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fmap = Tensor::randn(&[1, 2, 3, 3], &mut rng);
        let seqs = scan_expand(&fmap).unwrap();
        let zero = Tensor::zeros(seqs[0].shape());
        let only_row = [seqs[0].clone(), zero.clone(), zero.clone(), zero];
        let merged = scan_merge(&only_row, 3, 3).unwrap();
        assert_eq!(merged, fmap);
    }

    #[test]
    fn merge_rejects_length_mismatch() {
        let seqs = scan_expand(&map_2x2()).unwrap();
        assert!(scan_merge(&seqs, 3, 2).is_err());
    }

    #[test]
    fn skip_only_parameters_quadruple_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = 3;
        let mut params = Ss2dParams::init(c, 4, &mut rng);
        for dir in &mut params.dirs {
            dir.w_c = Tensor::zeros(dir.w_c.shape());
            dir.b_c = Tensor::zeros(dir.b_c.shape());
            dir.skip = Tensor::full(&[c], 1.0);
        }
        let fmap = Tensor::randn(&[2, c, 3, 4], &mut rng);
        let (out, _) = ss2d_forward(&fmap, &params).unwrap();
        let four_x = fmap.scale(4.0);
        for (a, b) in out.data().iter().zip(four_x.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = Ss2dParams::init(2, 3, &mut rng);
        let fmap = Tensor::zeros(&[1, 2, 4, 4]);
        let (out, _) = ss2d_forward(&fmap, &params).unwrap();
        assert_eq!(out, Tensor::zeros(&[1, 2, 4, 4]));
    }

    #[test]
    fn rotation_equivariance_with_swapped_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (c, h, w) = (2, 3, 4);
        let params = Ss2dParams::init(c, 3, &mut rng);
        let swapped = Ss2dParams {
            dirs: [
                params.dirs[1].clone(),
                params.dirs[0].clone(),
                params.dirs[3].clone(),
                params.dirs[2].clone(),
            ],
        };
        let fmap = Tensor::randn(&[1, c, h, w], &mut rng);
        let rot = |t: &Tensor| -> Tensor {
            let mut data = vec![0.0; t.len()];
            for ch in 0..c {
                for row in 0..h {
                    for col in 0..w {
                        data[(ch * h + h - 1 - row) * w + (w - 1 - col)] =
                            t.data()[(ch * h + row) * w + col];
                    }
                }
            }
            Tensor::from_vec(&[1, c, h, w], data).unwrap()
        };
        let (out, _) = ss2d_forward(&fmap, &params).unwrap();
        let (out_rot, _) = ss2d_forward(&rot(&fmap), &swapped).unwrap();
        assert_eq!(out_rot, rot(&out));
    }
}
