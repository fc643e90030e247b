//! Loads manifest splits into in-memory datasets of `[3,H,W]` tensors.

use std::path::Path;

use medmamba_core::tensor::Tensor;
use medmamba_core::train::Dataset;
use medmamba_pipeline::manifest::{PatchRecord, Split};

use crate::errors::{CliError, Result};

/// Reads `<patches_dir>/<patch_id>.png` for every record of the requested
/// split, in manifest order. Pixel values map to `[0, 1]`.
pub fn load_split(
    records: &[PatchRecord],
    split: Split,
    patches_dir: &Path,
    expected: (usize, usize),
) -> Result<Dataset> {
    let mut data = Dataset::default();
    for r in records.iter().filter(|r| r.split == Some(split)) {
        let path = patches_dir.join(format!("{}.png", r.patch_id));
        let img = image::open(&path)
            .map_err(|e| {
                CliError::input(format!("cannot read patch {}: {}", path.display(), e))
            })?
            .into_rgb8();
        let (w, h) = img.dimensions();
        if (h as usize, w as usize) != expected {
            return Err(CliError::input(format!(
                "patch {} is {}x{}, expected {}x{}",
                r.patch_id, h, w, expected.0, expected.1
            )));
        }
        let raw = img.into_raw();
        let (hh, ww) = (h as usize, w as usize);
        let tensor = Tensor::from_fn(&[3, hh, ww], |i| {
            let ch = i / (hh * ww);
            let pix = i % (hh * ww);
            raw[pix * 3 + ch] as f64 / 255.0
        });
        data.push(tensor, r.label.index());
    }
    Ok(data)
}

/// Ground-truth `(patch_id, label)` pairs for one split, manifest order.
pub fn split_truths(
    records: &[PatchRecord],
    split: Split,
) -> Vec<(String, medmamba_core::ClassLabel)> {
    records
        .iter()
        .filter(|r| r.split == Some(split))
        .map(|r| (r.patch_id.clone(), r.label))
        .collect()
}
