//! K x K confusion counts: entry `(i, j)` is the number of samples of true
//! class `i` predicted as class `j`.

use std::io::Write;
use std::path::Path;

use medmamba_core::ClassLabel;

use crate::error::{MetricsError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: &[&str]) -> Result<Self> {
        if classes.len() < 2 {
            return Err(MetricsError::Input(
                "a confusion matrix needs at least two classes".into(),
            ));
        }
        Ok(ConfusionMatrix {
            classes: classes.iter().map(|s| s.to_string()).collect(),
            counts: vec![0; classes.len() * classes.len()],
        })
    }

    /// The standard four-class matrix in reporting order.
    pub fn for_gleason() -> Self {
        let names: Vec<&str> = ClassLabel::ALL.iter().map(|l| l.as_str()).collect();
        ConfusionMatrix::new(&names).expect("four classes")
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        let k = self.k();
        if truth >= k || pred >= k {
            return Err(MetricsError::Input(format!(
                "class index out of range: truth {}, pred {}, k {}",
                truth, pred, k
            )));
        }
        self.counts[truth * k + pred] += 1;
        Ok(())
    }

    /// Builds counts from paired class indices.
    pub fn from_pairs(classes: &[&str], pairs: &[(usize, usize)]) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(classes)?;
        for &(truth, pred) in pairs {
            cm.record(truth, pred)?;
        }
        Ok(cm)
    }

    /// Builds the four-class matrix from label pairs of equal length.
    pub fn from_labels(truths: &[ClassLabel], preds: &[ClassLabel]) -> Result<Self> {
        if truths.len() != preds.len() {
            return Err(MetricsError::Input(format!(
                "{} truths vs {} predictions",
                truths.len(),
                preds.len()
            )));
        }
        let mut cm = ConfusionMatrix::for_gleason();
        for (t, p) in truths.iter().zip(preds.iter()) {
            cm.record(t.index(), p.index())?;
        }
        Ok(cm)
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k() + pred]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        let k = self.k();
        self.counts[truth * k..(truth + 1) * k].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k()).map(|i| self.count(i, pred)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.count(i, i)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-class supports (row sums).
    pub fn supports(&self) -> Vec<u64> {
        (0..self.k()).map(|i| self.row_sum(i)).collect()
    }

    /// Merges counts from another shard of the same shape.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(MetricsError::Input(
                "cannot merge confusion matrices over different classes".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
        Ok(())
    }

    /// Row-normalized fractions plus a flag per zero-support row (those
    /// rows are emitted as zeros).
    pub fn normalize_rows(&self) -> (Vec<f64>, Vec<bool>) {
        let k = self.k();
        let mut out = vec![0.0; k * k];
        let mut flagged = vec![false; k];
        for i in 0..k {
            let support = self.row_sum(i);
            if support == 0 {
                flagged[i] = true;
                continue;
            }
            for j in 0..k {
                out[i * k + j] = self.count(i, j) as f64 / support as f64;
            }
        }
        (out, flagged)
    }

    /// Raw counts CSV: one row per true class, prefixed by the class name.
    pub fn write_counts_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_header(&mut w, &self.classes)?;
        for i in 0..self.k() {
            write!(w, "{}", self.classes[i])?;
            for j in 0..self.k() {
                write!(w, ",{}", self.count(i, j))?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Row-normalized CSV at four decimal places.
    pub fn write_normalized_csv(&self, path: &Path) -> Result<()> {
        let (fractions, _) = self.normalize_rows();
        let k = self.k();
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_header(&mut w, &self.classes)?;
        for i in 0..k {
            write!(w, "{}", self.classes[i])?;
            for j in 0..k {
                write!(w, ",{:.4}", fractions[i * k + j])?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn write_header(w: &mut impl Write, classes: &[String]) -> Result<()> {
    write!(w, "class")?;
    for c in classes {
        write!(w, ",{}", c)?;
    }
    writeln!(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let truths = vec![ClassLabel::Benign, ClassLabel::G3, ClassLabel::G4, ClassLabel::G5];
        let cm = ConfusionMatrix::from_labels(&truths, &truths).unwrap();
        assert_eq!(cm.trace(), 4);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn two_class_hand_count() {
        // Positive class second: TP=8, FP=2, FN=1, TN=9.
        let mut pairs = Vec::new();
        pairs.extend(std::iter::repeat((1, 1)).take(8)); // TP
        pairs.extend(std::iter::repeat((0, 1)).take(2)); // FP
        pairs.extend(std::iter::repeat((1, 0)).take(1)); // FN
        pairs.extend(std::iter::repeat((0, 0)).take(9)); // TN
        let cm = ConfusionMatrix::from_pairs(&["neg", "pos"], &pairs).unwrap();
        assert_eq!(cm.count(0, 0), 9);
        assert_eq!(cm.count(0, 1), 2);
        assert_eq!(cm.count(1, 0), 1);
        assert_eq!(cm.count(1, 1), 8);
    }

    #[test]
    fn empty_matrix_has_zero_total() {
        let cm = ConfusionMatrix::for_gleason();
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let err =
            ConfusionMatrix::from_labels(&[ClassLabel::G3], &[]).unwrap_err();
        assert!(err.to_string().contains("1 truths vs 0"));
    }

    #[test]
    fn normalized_rows_sum_to_one() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<(usize, usize)> = (0..200)
            .map(|_| (rng.gen_range(0..4), rng.gen_range(0..4)))
            .collect();
        let names: Vec<&str> = ClassLabel::ALL.iter().map(|l| l.as_str()).collect();
        let cm = ConfusionMatrix::from_pairs(&names, &pairs).unwrap();
        let (fractions, flagged) = cm.normalize_rows();
        for i in 0..4 {
            if flagged[i] {
                continue;
            }
            let s: f64 = fractions[i * 4..(i + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_row_normalizes_to_quarters() {
        let pairs = vec![(0, 0), (0, 1), (0, 2), (0, 3)];
        let names: Vec<&str> = ClassLabel::ALL.iter().map(|l| l.as_str()).collect();
        let cm = ConfusionMatrix::from_pairs(&names, &pairs).unwrap();
        let (fractions, flagged) = cm.normalize_rows();
        assert_eq!(&fractions[..4], &[0.25, 0.25, 0.25, 0.25]);
        assert!(!flagged[0] && flagged[1] && flagged[2] && flagged[3]);
    }

    #[test]
    fn shard_merge_is_count_addition() {
        let names = ["a", "b"];
        let cm1 = ConfusionMatrix::from_pairs(&names, &[(0, 0), (1, 1)]).unwrap();
        let mut cm2 = ConfusionMatrix::from_pairs(&names, &[(0, 1)]).unwrap();
        cm2.merge(&cm1).unwrap();
        assert_eq!(cm2.total(), 3);
        assert_eq!(cm2.count(0, 1), 1);
        assert_eq!(cm2.count(0, 0), 1);
    }
}
