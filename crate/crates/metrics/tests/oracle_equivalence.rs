//! Brute-force oracle: recompute every per-class metric by direct
//! enumeration of the sample list and compare against the matrix-derived
//! values.

use medmamba_core::ClassLabel;
use medmamba_metrics::{per_class_metrics, score, ConfusionMatrix};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct OracleCounts {
    tp: u64,
    fp: u64,
    fn_: u64,
    tn: u64,
}

fn enumerate_counts(samples: &[(usize, usize)], class: usize) -> OracleCounts {
    let mut counts = OracleCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for &(truth, pred) in samples {
        match (truth == class, pred == class) {
            (true, true) => counts.tp += 1,
            (false, true) => counts.fp += 1,
            (true, false) => counts.fn_ += 1,
            (false, false) => counts.tn += 1,
        }
    }
    counts
}

#[test]
fn matrix_metrics_equal_direct_enumeration() {
    let names: Vec<&str> = ClassLabel::ALL.iter().map(|l| l.as_str()).collect();
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=50);
        let samples: Vec<(usize, usize)> = (0..n)
            .map(|_| (rng.gen_range(0..4), rng.gen_range(0..4)))
            .collect();
        let cm = ConfusionMatrix::from_pairs(&names, &samples).unwrap();
        let metrics = per_class_metrics(&cm).unwrap();
        for (c, m) in metrics.iter().enumerate() {
            let oracle = enumerate_counts(&samples, c);
            assert_eq!(m.tp, oracle.tp, "seed {} class {}", seed, c);
            assert_eq!(m.fp, oracle.fp, "seed {} class {}", seed, c);
            assert_eq!(m.fn_, oracle.fn_, "seed {} class {}", seed, c);
            assert_eq!(m.tn, oracle.tn, "seed {} class {}", seed, c);

            let expect_precision = if oracle.tp + oracle.fp == 0 {
                0.0
            } else {
                oracle.tp as f64 / (oracle.tp + oracle.fp) as f64
            };
            let expect_recall = if oracle.tp + oracle.fn_ == 0 {
                0.0
            } else {
                oracle.tp as f64 / (oracle.tp + oracle.fn_) as f64
            };
            assert!((m.precision - expect_precision).abs() < 1e-15);
            assert!((m.recall - expect_recall).abs() < 1e-15);
            let expect_acc =
                (oracle.tp + oracle.tn) as f64 / samples.len() as f64;
            assert!((m.accuracy - expect_acc).abs() < 1e-15);
        }

        // Cross-identities on the same fixture.
        let report = score(&cm).unwrap();
        let trace: u64 = metrics.iter().map(|m| m.tp).sum();
        assert_eq!(trace, cm.trace());
        let support_sum: u64 = report.supports.iter().sum();
        assert_eq!(support_sum, cm.total());
        assert!((report.weighted.recall - report.overall_accuracy).abs() < 1e-12);
    }
}

#[test]
fn sharded_scoring_equals_whole_set_scoring() {
    let names: Vec<&str> = ClassLabel::ALL.iter().map(|l| l.as_str()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let samples: Vec<(usize, usize)> = (0..40)
        .map(|_| (rng.gen_range(0..4), rng.gen_range(0..4)))
        .collect();
    let whole = ConfusionMatrix::from_pairs(&names, &samples).unwrap();
    let mut merged = ConfusionMatrix::from_pairs(&names, &samples[..13]).unwrap();
    let shard2 = ConfusionMatrix::from_pairs(&names, &samples[13..]).unwrap();
    merged.merge(&shard2).unwrap();
    assert_eq!(whole, merged);
}
