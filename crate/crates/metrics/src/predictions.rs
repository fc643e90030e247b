//! External prediction files: `patch_id,predicted_label` CSV, scored by
//! joining against a manifest's ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use medmamba_core::ClassLabel;

use crate::error::{MetricsError, Result};

/// Reads `patch_id,predicted_label` pairs; unknown label tokens fail with
/// the offending row number.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, ClassLabel)>> {
    let mut reader = csv::Reader::from_path(path)?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != ["patch_id", "predicted_label"] {
            return Err(MetricsError::Input(format!(
                "prediction header {:?} must be [patch_id, predicted_label]",
                got
            )));
        }
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let row_number = i + 2;
        let patch_id = row.get(0).unwrap_or("").to_string();
        let token = row.get(1).unwrap_or("");
        let label = token.parse::<ClassLabel>().map_err(|_| {
            MetricsError::UnknownLabel {
                row: row_number,
                token: token.to_string(),
            }
        })?;
        out.push((patch_id, label));
    }
    Ok(out)
}

/// Joins predictions against ground truth by patch id. Every truth patch
/// must be predicted; missing ids are reported together.
pub fn join_predictions(
    truths: &[(String, ClassLabel)],
    predictions: &[(String, ClassLabel)],
) -> Result<Vec<(ClassLabel, ClassLabel)>> {
    let by_id: BTreeMap<&str, ClassLabel> = predictions
        .iter()
        .map(|(id, label)| (id.as_str(), *label))
        .collect();
    let mut missing = Vec::new();
    let mut pairs = Vec::with_capacity(truths.len());
    for (id, truth) in truths {
        match by_id.get(id.as_str()) {
            Some(pred) => pairs.push((*truth, *pred)),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<String> = missing.iter().take(10).cloned().collect();
        return Err(MetricsError::Input(format!(
            "{} patches have no prediction: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > shown.len() { ", ..." } else { "" }
        )));
    }
    Ok(pairs)
}
