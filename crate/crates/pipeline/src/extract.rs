//! Per-image patch extraction: consensus from the expert maps, grid
//! enumeration, core labeling, and PNG crops.
//!
//! Expected layout: RGB source images as `<images>/<image_id>.png` and
//! annotation maps as `<annotations>/<image_id>/expert_<k>.png` (8-bit
//! grayscale label codes).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use log::warn;
use medmamba_core::ClassLabel;

use crate::annotation::{majority_vote, AnnotationMap, ConsensusMap};
use crate::error::{PipelineError, Result};
use crate::grid::{assign_label, enumerate_grid};
use crate::manifest::PatchRecord;

#[derive(Clone, Copy, Debug)]
pub struct ExtractParams {
    pub patch: u32,
    pub stride: u32,
    pub core: u32,
}

impl Default for ExtractParams {
    fn default() -> Self {
        ExtractParams {
            patch: 512,
            stride: 256,
            core: 250,
        }
    }
}

impl ExtractParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.stride == 0 {
            return Err(PipelineError::Input(
                "patch and stride must be positive".into(),
            ));
        }
        if self.core == 0 || self.core > self.patch {
            return Err(PipelineError::Input(format!(
                "core {} must lie in 1..={}",
                self.core, self.patch
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExtractSummary {
    pub images: usize,
    pub grid_positions: usize,
    pub kept: usize,
    pub discarded: usize,
    pub per_class: [usize; 4],
}

impl ExtractSummary {
    fn absorb(&mut self, other: &ExtractSummary) {
        self.images += other.images;
        self.grid_positions += other.grid_positions;
        self.kept += other.kept;
        self.discarded += other.discarded;
        for c in 0..4 {
            self.per_class[c] += other.per_class[c];
        }
    }
}

/// Extracts every keepable patch of one image. Crops are written as
/// `<patches_dir>/<patch_id>.png` when a directory is given.
pub fn extract_image(
    image: &RgbImage,
    consensus: &ConsensusMap,
    image_id: &str,
    patient_id: &str,
    params: &ExtractParams,
    patches_dir: Option<&Path>,
) -> Result<(Vec<PatchRecord>, ExtractSummary)> {
    params.validate()?;
    let (w, h) = image.dimensions();
    if consensus.width() != w || consensus.height() != h {
        return Err(PipelineError::Dimension(format!(
            "image '{}' is {}x{} but its consensus map is {}x{}",
            image_id,
            w,
            h,
            consensus.width(),
            consensus.height()
        )));
    }
    let grid = enumerate_grid(w, h, params.patch, params.stride);
    if grid.is_empty() {
        warn!(
            "image '{}' ({}x{}) is smaller than the patch size {}",
            image_id, w, h, params.patch
        );
    }
    let mut summary = ExtractSummary {
        images: 1,
        grid_positions: grid.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for (x, y) in grid {
        match assign_label(consensus, x, y, params.patch, params.core) {
            Some(label) => {
                summary.kept += 1;
                summary.per_class[label.index()] += 1;
                let patch_id = PatchRecord::patch_id_for(image_id, x, y);
                if let Some(dir) = patches_dir {
                    let crop = image::imageops::crop_imm(image, x, y, params.patch, params.patch)
                        .to_image();
                    let path = dir.join(format!("{}.png", patch_id));
                    crop.save(&path)
                        .map_err(|e| PipelineError::Image(format!("{}: {}", path.display(), e)))?;
                }
                records.push(PatchRecord {
                    patch_id,
                    patient_id: patient_id.to_string(),
                    image_id: image_id.to_string(),
                    x,
                    y,
                    label,
                    split: None,
                    fold: None,
                });
            }
            None => summary.discarded += 1,
        }
    }
    Ok((records, summary))
}

/// Lists `<image_id>` stems of the PNG files in a directory, sorted.
fn list_image_ids(images_dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(images_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Loads the expert maps `<annotations>/<image_id>/expert_*.png`, sorted by
/// file name.
pub fn load_expert_maps(annotations_dir: &Path, image_id: &str) -> Result<Vec<AnnotationMap>> {
    let dir = annotations_dir.join(image_id);
    if !dir.is_dir() {
        return Err(PipelineError::Input(format!(
            "no annotation directory for image '{}' at {}",
            image_id,
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()) == Some("png")
                && p.file_stem()
                    .and_then(|s| s.to_str())
                    .map(|s| s.starts_with("expert_"))
                    .unwrap_or(false)
        })
        .collect();
    files.sort();
    let mut maps = Vec::new();
    for f in files {
        let expert = f
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("expert")
            .to_string();
        maps.push(AnnotationMap::from_gray_png(&f, &expert)?);
    }
    if maps.is_empty() {
        return Err(PipelineError::Input(format!(
            "no expert_*.png maps for image '{}' in {}",
            image_id,
            dir.display()
        )));
    }
    Ok(maps)
}

/// Walks the dataset layout and extracts everything. Unreadable images are
/// skipped with a warning; patients default to their image id when absent
/// from the patient map.
pub fn extract_dataset(
    images_dir: &Path,
    annotations_dir: &Path,
    patient_map: &BTreeMap<String, String>,
    params: &ExtractParams,
    patches_dir: Option<&Path>,
) -> Result<(Vec<PatchRecord>, ExtractSummary)> {
    let ids = list_image_ids(images_dir)?;
    if ids.is_empty() {
        return Err(PipelineError::Input(format!(
            "no .png images found in {}",
            images_dir.display()
        )));
    }
    if let Some(dir) = patches_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut all_records = Vec::new();
    let mut total = ExtractSummary::default();
    for image_id in &ids {
        let image_path = images_dir.join(format!("{}.png", image_id));
        let image = match image::open(&image_path) {
            Ok(img) => img.into_rgb8(),
            Err(e) => {
                warn!("skipping unreadable image {}: {}", image_path.display(), e);
                continue;
            }
        };
        let maps = match load_expert_maps(annotations_dir, image_id) {
            Ok(maps) => maps,
            Err(e) => {
                warn!("skipping image '{}': {}", image_id, e);
                continue;
            }
        };
        let consensus = majority_vote(&maps)?;
        let patient_id = patient_map
            .get(image_id)
            .cloned()
            .unwrap_or_else(|| image_id.clone());
        let (records, summary) = extract_image(
            &image,
            &consensus,
            image_id,
            &patient_id,
            params,
            patches_dir,
        )?;
        all_records.extend(records);
        total.absorb(&summary);
    }
    Ok((all_records, total))
}

/// Renders the class supports of a record set in label order.
pub fn class_supports(records: &[PatchRecord]) -> [usize; 4] {
    let mut out = [0; 4];
    for r in records {
        out[r.label.index()] += 1;
    }
    out
}

/// Human-readable summary block for logs and the CLI.
pub fn format_summary(summary: &ExtractSummary) -> String {
    let mut s = format!(
        "images {}  grid positions {}  kept {}  discarded {}\n",
        summary.images, summary.grid_positions, summary.kept, summary.discarded
    );
    for (label, count) in ClassLabel::ALL.iter().zip(summary.per_class.iter()) {
        s.push_str(&format!("  {:>6}: {}\n", label.as_str(), count));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::ConsensusMap;

    fn uniform_image(side: u32, rgb: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(side, side, image::Rgb(rgb))
    }

    #[test]
    fn kept_plus_discarded_equals_grid() {
        // Left half grade 3, right half background: with a 4-wide stride
        // grid some cores stay uniform and some touch background.
        let side = 16u32;
        let mut codes = vec![0u8; (side * side) as usize];
        for y in 0..side {
            for x in 0..side / 2 {
                codes[(y * side + x) as usize] = 3;
            }
        }
        let consensus = ConsensusMap::from_codes(side, side, codes).unwrap();
        let image = uniform_image(side, [200, 80, 120]);
        let params = ExtractParams {
            patch: 8,
            stride: 4,
            core: 4,
        };
        let (records, summary) =
            extract_image(&image, &consensus, "img", "p1", &params, None).unwrap();
        assert_eq!(summary.grid_positions, 9);
        assert_eq!(summary.kept + summary.discarded, summary.grid_positions);
        assert_eq!(records.len(), summary.kept);
    }

    #[test]
    fn records_revalidate_against_the_consensus() {
        let side = 16u32;
        let mut codes = vec![4u8; (side * side) as usize];
        for i in 0..40 {
            codes[i] = 0;
        }
        let consensus = ConsensusMap::from_codes(side, side, codes).unwrap();
        let image = uniform_image(side, [1, 2, 3]);
        let params = ExtractParams {
            patch: 8,
            stride: 4,
            core: 4,
        };
        let (records, _) =
            extract_image(&image, &consensus, "img", "p", &params, None).unwrap();
        assert!(!records.is_empty());
        for r in &records {
            assert_eq!(
                assign_label(&consensus, r.x, r.y, params.patch, params.core),
                Some(r.label)
            );
        }
    }

    #[test]
    fn crops_are_written_and_sized() {
        let dir = tempfile::tempdir().unwrap();
        let consensus = ConsensusMap::from_codes(8, 8, vec![5u8; 64]).unwrap();
        let image = uniform_image(8, [9, 9, 9]);
        let params = ExtractParams {
            patch: 8,
            stride: 8,
            core: 4,
        };
        let (records, _) = extract_image(
            &image,
            &consensus,
            "tiny",
            "p",
            &params,
            Some(dir.path()),
        )
        .unwrap();
        assert_eq!(records.len(), 1);
        let crop = image::open(dir.path().join("tiny_x0_y0.png"))
            .unwrap()
            .into_rgb8();
        assert_eq!(crop.dimensions(), (8, 8));
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let consensus = ConsensusMap::from_codes(4, 4, vec![0u8; 16]).unwrap();
        let image = uniform_image(8, [0, 0, 0]);
        let err = extract_image(
            &image,
            &consensus,
            "img",
            "p",
            &ExtractParams::default(),
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("consensus map"));
    }
}
