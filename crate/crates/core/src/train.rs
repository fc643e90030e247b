//! Cross-entropy training loop with Adam. Single-threaded and fully seeded:
//! the same configuration, data, and seed reproduce the final weights bit
//! for bit.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MedMamba;
use crate::tensor::Tensor;

/// Row-wise softmax of a `[B, K]` logit matrix.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (bs, k) = (logits.shape()[0], logits.shape()[1]);
    let ld = logits.data();
    let mut out = vec![0.0; bs * k];
    for b in 0..bs {
        let row = &ld[b * k..(b + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            out[b * k + j] = e;
            denom += e;
        }
        for v in &mut out[b * k..(b + 1) * k] {
            *v /= denom;
        }
    }
    Tensor::from_vec(logits.shape(), out).expect("same shape")
}

/// Mean cross-entropy over the batch plus the logit cotangent
/// `(softmax - onehot) / B`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::dimension(
            "cross_entropy",
            format!(
                "logits {:?} do not match {} labels",
                logits.shape(),
                labels.len()
            ),
        ));
    }
    let (bs, k) = (logits.shape()[0], logits.shape()[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::dimension(
            "cross_entropy",
            format!("label {} out of range for {} classes", bad, k),
        ));
    }
    let ld = logits.data();
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; bs * k];
    for (b, &label) in labels.iter().enumerate() {
        let row = &ld[b * k..(b + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        for j in 0..k {
            let p = (row[j] - lse).exp();
            dlogits[b * k + j] = (p - if j == label { 1.0 } else { 0.0 }) / bs as f64;
        }
    }
    Ok((loss / bs as f64, Tensor::from_vec(&[bs, k], dlogits)?))
}

/// Adam with bias correction; first/second moments are keyed by parameter
/// name and updated in lexicographic order.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update to every trainable parameter with a gradient.
    pub fn step(&mut self, model: &mut MedMamba, grads: &crate::store::GradStore) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m_store, v_store) = (&mut self.m, &mut self.v);
        model.visit_params_mut(&mut |name, t, trainable| {
            if !trainable {
                return;
            }
            let Some(g) = grads.get(name) else { return };
            let m = m_store
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(t.shape()));
            let v = v_store
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(t.shape()));
            let td = t.data_mut();
            for i in 0..td.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                td[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
        });
    }
}

/// Labeled image set; every image is a `[3, H, W]` tensor.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn push(&mut self, image: Tensor, label: usize) {
        self.images.push(image);
        self.labels.push(label);
    }

    /// Stacks the indexed samples into a `[B, 3, H, W]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let shape = self.images[indices[0]].shape().to_vec();
        let sample_len: usize = shape.iter().product();
        let mut data = vec![0.0; indices.len() * sample_len];
        let mut labels = Vec::with_capacity(indices.len());
        for (slot, &idx) in indices.iter().enumerate() {
            let img = &self.images[idx];
            if img.shape() != shape {
                return Err(Error::shape_mismatch("batch", &shape, img.shape()));
            }
            data[slot * sample_len..(slot + 1) * sample_len].copy_from_slice(img.data());
            labels.push(self.labels[idx]);
        }
        let mut batch_shape = vec![indices.len()];
        batch_shape.extend_from_slice(&shape);
        Ok((Tensor::from_vec(&batch_shape, data)?, labels))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once validation accuracy reaches this value, if set.
    pub stop_at_val_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
            stop_at_val_acc: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let (bs, k) = (logits.shape()[0], logits.shape()[1]);
    (0..bs)
        .map(|b| {
            let row = &logits.data()[b * k..(b + 1) * k];
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect()
}

/// Mean loss and accuracy of the model (inference mode) over a dataset.
pub fn evaluate(model: &MedMamba, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (xb, yb) = data.batch(chunk)?;
        let logits = model.forward_eval(&xb)?;
        let (loss, _) = cross_entropy(&logits, &yb)?;
        loss_sum += loss * chunk.len() as f64;
        for (pred, truth) in argmax_rows(&logits).into_iter().zip(yb.iter()) {
            if pred == *truth {
                correct += 1;
            }
        }
    }
    Ok((
        loss_sum / data.len() as f64,
        correct as f64 / data.len() as f64,
    ))
}

/// Class predictions (argmax) in dataset order, inference mode.
pub fn predict(model: &MedMamba, data: &Dataset, batch_size: usize) -> Result<Vec<usize>> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut preds = Vec::with_capacity(data.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (xb, _) = data.batch(chunk)?;
        let logits = model.forward_eval(&xb)?;
        preds.extend(argmax_rows(&logits));
    }
    Ok(preds)
}

/// Minimizes mean cross-entropy with Adam. `on_epoch` fires after each
/// epoch so callers can persist partial logs; a non-finite loss aborts with
/// a diagnostic.
pub fn fit(
    model: &mut MedMamba,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut logs = Vec::new();
    let mut indices: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let (xb, yb) = train.batch(chunk)?;
            let (logits, cache) = model.forward_train(&xb)?;
            let (loss, dlogits) = cross_entropy(&logits, &yb)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: "fit".into(),
                    detail: format!(
                        "training loss diverged at epoch {} (learning rate too high?)",
                        epoch
                    ),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            for (pred, truth) in argmax_rows(&logits).into_iter().zip(yb.iter()) {
                if pred == *truth {
                    correct += 1;
                }
            }
            let grads = model.backward(&cache, &dlogits)?;
            adam.step(model, &grads);
        }
        let (val_loss, val_acc) = evaluate(model, val, cfg.batch_size)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss,
            val_acc,
        };
        on_epoch(&log);
        logs.push(log);
        if let Some(target) = cfg.stop_at_val_acc {
            if val_acc >= target {
                break;
            }
        }
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = Tensor::randn(&[8, 4], &mut rng).scale(5.0);
        let probs = softmax_rows(&logits);
        for b in 0..8 {
            let s: f64 = probs.data()[b * 4..(b + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row sum {}", s);
        }
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::zeros(&[3, 4]);
        let (loss, _) = cross_entropy(&logits, &[0, 1, 2]).unwrap();
        assert!((loss - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = Tensor::randn(&[5, 3], &mut rng);
        let (_, dlogits) = cross_entropy(&logits, &[0, 2, 1, 1, 0]).unwrap();
        for b in 0..5 {
            let s: f64 = dlogits.data()[b * 3..(b + 1) * 3].iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(cross_entropy(&logits, &[3]).is_err());
    }

    #[test]
    fn batch_stacks_in_index_order() {
        let mut data = Dataset::default();
        data.push(Tensor::full(&[1, 2, 2], 1.0), 0);
        data.push(Tensor::full(&[1, 2, 2], 2.0), 1);
        let (xb, yb) = data.batch(&[1, 0]).unwrap();
        assert_eq!(xb.shape(), &[2, 1, 2, 2]);
        assert_eq!(xb.data()[0], 2.0);
        assert_eq!(xb.data()[4], 1.0);
        assert_eq!(yb, vec![1, 0]);
    }
}
