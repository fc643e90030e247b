//! Patient-grouped split and fold assignment. Every patch of a patient
//! lands in exactly one subset, so no patient leaks across train, val,
//! test, or folds.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PipelineError, Result};
use crate::manifest::{PatchRecord, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatientAssignment {
    pub split: Split,
    pub fold: Option<u8>,
}

/// Mapping from patient to subset, plus the seed that produced it.
#[derive(Clone, Debug)]
pub struct SplitPlan {
    pub by_patient: BTreeMap<String, PatientAssignment>,
    pub seed: u64,
}

impl SplitPlan {
    /// Fills the split/fold columns of the records in place.
    pub fn apply(&self, records: &mut [PatchRecord]) -> Result<()> {
        for r in records.iter_mut() {
            let a = self.by_patient.get(&r.patient_id).ok_or_else(|| {
                PipelineError::Input(format!(
                    "patient '{}' has no split assignment",
                    r.patient_id
                ))
            })?;
            r.split = Some(a.split);
            r.fold = a.fold;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct PatientStats {
    id: String,
    patches: usize,
    per_class: [usize; 4],
}

fn aggregate_patients(records: &[PatchRecord]) -> Vec<PatientStats> {
    let mut map: BTreeMap<&str, PatientStats> = BTreeMap::new();
    for r in records {
        let entry = map.entry(&r.patient_id).or_insert_with(|| PatientStats {
            id: r.patient_id.clone(),
            patches: 0,
            per_class: [0; 4],
        });
        entry.patches += 1;
        entry.per_class[r.label.index()] += 1;
    }
    map.into_values().collect()
}

fn check_fraction(name: &str, value: f64) -> Result<()> {
    if !(0.0..1.0).contains(&value) {
        return Err(PipelineError::Input(format!(
            "{} must lie in [0, 1), got {}",
            name, value
        )));
    }
    Ok(())
}

/// Greedily moves whole patients into a subset until `frac` of the patch
/// count is covered; returns how many patients were taken.
fn take_until_covered(patients: &[PatientStats], frac: f64) -> usize {
    let total: usize = patients.iter().map(|p| p.patches).sum();
    let target = frac * total as f64;
    let mut covered = 0.0;
    let mut taken = 0;
    while covered < target && taken < patients.len() {
        covered += patients[taken].patches as f64;
        taken += 1;
    }
    taken
}

/// Shuffles patients by seed, reserves test patients until `test_frac` of
/// the patches is covered, then reserves validation patients from the
/// remainder until `val_frac` of the remaining patches is covered; the rest
/// train.
pub fn split_by_patient(
    records: &[PatchRecord],
    test_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<SplitPlan> {
    check_fraction("test_frac", test_frac)?;
    check_fraction("val_frac", val_frac)?;
    let mut patients = aggregate_patients(records);
    if patients.len() < 2 {
        return Err(PipelineError::Input(format!(
            "cannot build disjoint splits from {} patient(s)",
            patients.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);

    let n_test = take_until_covered(&patients, test_frac);
    let rest = &patients[n_test..];
    let n_val = take_until_covered(rest, val_frac);
    if n_test + n_val >= patients.len() {
        return Err(PipelineError::Input(
            "test/val fractions leave no patients for training".into(),
        ));
    }

    let mut by_patient = BTreeMap::new();
    for (i, p) in patients.iter().enumerate() {
        let split = if i < n_test {
            Split::Test
        } else if i < n_test + n_val {
            Split::Val
        } else {
            Split::Train
        };
        by_patient.insert(
            p.id.clone(),
            PatientAssignment { split, fold: None },
        );
    }
    Ok(SplitPlan { by_patient, seed })
}

/// Patient-grouped fold assignment: reserves a held-out test subset first
/// (by patch coverage), then hands the remaining patients to folds
/// greedily, largest patient first, each to the fold whose per-class
/// counts deviate least from the balanced target after the assignment.
pub fn assign_folds(
    records: &[PatchRecord],
    k: usize,
    test_frac: f64,
    seed: u64,
) -> Result<SplitPlan> {
    check_fraction("test_frac", test_frac)?;
    if k < 2 {
        return Err(PipelineError::Input(format!(
            "fold count must be at least 2, got {}",
            k
        )));
    }
    let mut patients = aggregate_patients(records);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);

    let n_test = take_until_covered(&patients, test_frac);
    let mut pool: Vec<PatientStats> = patients[n_test..].to_vec();
    if pool.len() < k {
        return Err(PipelineError::Input(format!(
            "{} patients left for folding into {} folds",
            pool.len(),
            k
        )));
    }
    // Stable sort keeps the seeded order among equal-sized patients.
    pool.sort_by(|a, b| b.patches.cmp(&a.patches));

    let mut fold_counts = vec![[0.0f64; 4]; k];
    let mut by_patient = BTreeMap::new();
    for p in patients.iter().take(n_test) {
        by_patient.insert(
            p.id.clone(),
            PatientAssignment {
                split: Split::Test,
                fold: None,
            },
        );
    }
    for p in &pool {
        // Minimize the sum of squared per-class counts after the
        // assignment; the potential is lowest when every class is spread
        // evenly across folds, which also balances fold sizes.
        let mut best = 0usize;
        let mut best_cost = f64::INFINITY;
        for (f, counts) in fold_counts.iter().enumerate() {
            let mut cost = 0.0;
            for c in 0..4 {
                let d = counts[c] + p.per_class[c] as f64;
                cost += d * d;
            }
            if cost < best_cost {
                best_cost = cost;
                best = f;
            }
        }
        for c in 0..4 {
            fold_counts[best][c] += p.per_class[c] as f64;
        }
        by_patient.insert(
            p.id.clone(),
            PatientAssignment {
                split: Split::Train,
                fold: Some((best + 1) as u8),
            },
        );
    }
    Ok(SplitPlan { by_patient, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use medmamba_core::ClassLabel;

    fn records_for(patients: &[(&str, usize)]) -> Vec<PatchRecord> {
        let mut out = Vec::new();
        for (pid, count) in patients {
            for i in 0..*count {
                out.push(PatchRecord {
                    patch_id: format!("{}_{}", pid, i),
                    patient_id: pid.to_string(),
                    image_id: format!("img_{}", pid),
                    x: i as u32,
                    y: 0,
                    label: ClassLabel::ALL[i % 4],
                    split: None,
                    fold: None,
                });
            }
        }
        out
    }

    fn split_sizes(plan: &SplitPlan) -> (usize, usize, usize) {
        let mut sizes = (0, 0, 0);
        for a in plan.by_patient.values() {
            match a.split {
                Split::Test => sizes.0 += 1,
                Split::Val => sizes.1 += 1,
                Split::Train => sizes.2 += 1,
            }
        }
        sizes
    }

    #[test]
    fn ten_equal_patients_split_two_one_seven() {
        let patients: Vec<(String, usize)> =
            (0..10).map(|i| (format!("p{}", i), 5)).collect();
        let refs: Vec<(&str, usize)> = patients.iter().map(|(s, c)| (s.as_str(), *c)).collect();
        let records = records_for(&refs);
        for seed in 0..20 {
            let plan = split_by_patient(&records, 0.2, 0.1, seed).unwrap();
            let (test, val, train) = split_sizes(&plan);
            assert_eq!((test, val, train), (2, 1, 7), "seed {}", seed);
        }
    }

    #[test]
    fn same_seed_means_same_plan() {
        let records = records_for(&[("a", 3), ("b", 5), ("c", 2), ("d", 8), ("e", 1)]);
        let p1 = split_by_patient(&records, 0.2, 0.1, 42).unwrap();
        let p2 = split_by_patient(&records, 0.2, 0.1, 42).unwrap();
        assert_eq!(p1.by_patient, p2.by_patient);
    }

    #[test]
    fn single_patient_is_rejected() {
        let records = records_for(&[("only", 10)]);
        assert!(split_by_patient(&records, 0.2, 0.1, 0).is_err());
    }

    #[test]
    fn apply_fills_every_record() {
        let mut records = records_for(&[("a", 2), ("b", 2), ("c", 2)]);
        let plan = split_by_patient(&records, 0.34, 0.0, 1).unwrap();
        plan.apply(&mut records).unwrap();
        assert!(records.iter().all(|r| r.split.is_some()));
    }

    #[test]
    fn eight_uniform_patients_give_two_per_fold() {
        let patients: Vec<(String, usize)> =
            (0..8).map(|i| (format!("p{}", i), 8)).collect();
        let refs: Vec<(&str, usize)> = patients.iter().map(|(s, c)| (s.as_str(), *c)).collect();
        let records = records_for(&refs);
        for seed in 0..10 {
            let plan = assign_folds(&records, 4, 0.0, seed).unwrap();
            let mut per_fold = [0usize; 4];
            for a in plan.by_patient.values() {
                per_fold[(a.fold.unwrap() - 1) as usize] += 1;
            }
            assert_eq!(per_fold, [2, 2, 2, 2], "seed {}", seed);
        }
    }

    #[test]
    fn folds_never_split_a_patient() {
        let records = records_for(&[("a", 7), ("b", 3), ("c", 9), ("d", 4), ("e", 6), ("f", 2)]);
        for seed in 0..10 {
            let plan = assign_folds(&records, 2, 0.2, seed).unwrap();
            let mut with_fold = records.clone();
            plan.apply(&mut with_fold).unwrap();
            let mut per_patient: BTreeMap<&str, Vec<Option<u8>>> = BTreeMap::new();
            for r in &with_fold {
                per_patient
                    .entry(r.patient_id.as_str())
                    .or_default()
                    .push(r.fold);
            }
            for (_, folds) in per_patient {
                assert!(folds.windows(2).all(|w| w[0] == w[1]));
            }
        }
    }

    #[test]
    fn too_few_patients_for_folds() {
        let records = records_for(&[("a", 5), ("b", 5), ("c", 5)]);
        assert!(assign_folds(&records, 4, 0.0, 0).is_err());
    }
}
