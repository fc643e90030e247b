use crate::error::{Error, Result};
use crate::ops::DifferentiableOp;
use crate::tensor::Tensor;

/// `y[..., j] = sum_i x[..., i] * w[i, j] + b[j]`, applied over the last axis.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.ndim() != 2 {
        return Err(Error::dimension(
            "linear",
            format!("weight must be 2-D, got shape {:?}", w.shape()),
        ));
    }
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    let x_last = *x.shape().last().ok_or_else(|| {
        Error::dimension("linear", "input must have at least one axis".to_string())
    })?;
    if x_last != d_in {
        return Err(Error::dimension(
            "linear",
            format!(
                "input last axis {} does not match weight rows {}",
                x_last, d_in
            ),
        ));
    }
    if b.shape() != [d_out] {
        return Err(Error::dimension(
            "linear",
            format!(
                "bias shape {:?} does not match weight columns {}",
                b.shape(),
                d_out
            ),
        ));
    }

    let rows = x.len() / d_in;
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let mut out = vec![0.0; rows * d_out];
    for r in 0..rows {
        let xr = &xd[r * d_in..(r + 1) * d_in];
        let or = &mut out[r * d_out..(r + 1) * d_out];
        or.copy_from_slice(bd);
        for (i, &xv) in xr.iter().enumerate() {
            let wrow = &wd[i * d_out..(i + 1) * d_out];
            for (o, &wv) in or.iter_mut().zip(wrow.iter()) {
                *o += xv * wv;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::from_vec(&shape, out)
}

/// Cotangents for (x, w, b) given the upstream cotangent of the output.
pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    let rows = x.len() / d_in;
    if dy.len() != rows * d_out {
        return Err(Error::shape_mismatch(
            "linear_backward",
            &[rows, d_out],
            dy.shape(),
        ));
    }
    let xd = x.data();
    let wd = w.data();
    let gd = dy.data();

    let mut dx = vec![0.0; rows * d_in];
    let mut dw = vec![0.0; d_in * d_out];
    let mut db = vec![0.0; d_out];
    for r in 0..rows {
        let xr = &xd[r * d_in..(r + 1) * d_in];
        let gr = &gd[r * d_out..(r + 1) * d_out];
        for (j, &g) in gr.iter().enumerate() {
            db[j] += g;
        }
        for i in 0..d_in {
            let wrow = &wd[i * d_out..(i + 1) * d_out];
            let mut acc = 0.0;
            for (j, &g) in gr.iter().enumerate() {
                acc += g * wrow[j];
                dw[i * d_out + j] += xr[i] * g;
            }
            dx[r * d_in + i] = acc;
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), dx)?,
        Tensor::from_vec(w.shape(), dw)?,
        Tensor::from_vec(&[d_out], db)?,
    ))
}

/// Inputs: `[x, w, b]`.
pub struct LinearOp;

impl DifferentiableOp for LinearOp {
    fn name(&self) -> &str {
        "linear"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        linear_forward(&inputs[0], &inputs[1], &inputs[2])
    }

    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        let (dx, dw, db) = linear_backward(&inputs[0], &inputs[1], upstream)?;
        Ok(vec![dx, dw, db])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_weight_passes_through() {
        let x = t(&[2], &[1.0, 2.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::zeros(&[2]);
        let y = linear_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weight_returns_bias() {
        let x = t(&[1], &[3.0]);
        let w = t(&[1, 1], &[0.0]);
        let b = t(&[1], &[5.0]);
        let y = linear_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn hand_dot_product() {
        let x = t(&[2], &[1.0, 2.0]);
        let w = t(&[2, 1], &[1.0, 1.0]);
        let b = t(&[1], &[0.5]);
        let y = linear_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[3.5]);
    }

    #[test]
    fn mismatched_axis_is_named() {
        let x = t(&[3], &[1.0, 2.0, 3.0]);
        let w = t(&[2, 1], &[1.0, 1.0]);
        let b = Tensor::zeros(&[1]);
        let err = linear_forward(&x, &w, &b).unwrap_err();
        assert!(err.to_string().contains("last axis 3"));
        assert!(err.to_string().contains("weight rows 2"));
    }

    #[test]
    fn additive_in_x_up_to_bias() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x1 = Tensor::randn(&[4, 3], &mut rng);
        let x2 = Tensor::randn(&[4, 3], &mut rng);
        let w = Tensor::randn(&[3, 2], &mut rng);
        let b = Tensor::randn(&[2], &mut rng);
        let lhs = linear_forward(&x1.add(&x2).unwrap(), &w, &b).unwrap();
        let rhs = linear_forward(&x1, &w, &b)
            .unwrap()
            .add(&linear_forward(&x2, &w, &Tensor::zeros(&[2])).unwrap())
            .unwrap();
        for (a, b) in lhs.data().iter().zip(rhs.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
