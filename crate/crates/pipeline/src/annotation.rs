//! Expert annotation maps and pixel-level consensus.
//!
//! Pixel codes: 0 background, 1 benign, 3/4/5 the tumour grades (codes equal
//! the grade numbers). The consensus keeps the code a strict plurality of
//! experts agrees on and marks ties as ambiguous.

use std::path::Path;

use medmamba_core::ClassLabel;

use crate::error::{PipelineError, Result};

pub const CODE_BACKGROUND: u8 = 0;
pub const CODE_BENIGN: u8 = 1;
pub const CODE_G3: u8 = 3;
pub const CODE_G4: u8 = 4;
pub const CODE_G5: u8 = 5;
pub const ALLOWED_CODES: [u8; 5] = [CODE_BACKGROUND, CODE_BENIGN, CODE_G3, CODE_G4, CODE_G5];

/// Sentinel for pixels with no strict majority.
pub const AMBIGUOUS: u8 = 255;

pub fn code_to_label(code: u8) -> Option<ClassLabel> {
    match code {
        CODE_BENIGN => Some(ClassLabel::Benign),
        CODE_G3 => Some(ClassLabel::G3),
        CODE_G4 => Some(ClassLabel::G4),
        CODE_G5 => Some(ClassLabel::G5),
        _ => None,
    }
}

pub fn label_to_code(label: ClassLabel) -> u8 {
    match label {
        ClassLabel::Benign => CODE_BENIGN,
        ClassLabel::G3 => CODE_G3,
        ClassLabel::G4 => CODE_G4,
        ClassLabel::G5 => CODE_G5,
    }
}

/// One expert's per-pixel label image.
#[derive(Clone, Debug)]
pub struct AnnotationMap {
    width: u32,
    height: u32,
    labels: Vec<u8>,
    pub expert_id: String,
}

impl AnnotationMap {
    pub fn new(width: u32, height: u32, labels: Vec<u8>, expert_id: &str) -> Result<Self> {
        if labels.len() != (width as usize) * (height as usize) {
            return Err(PipelineError::Dimension(format!(
                "label buffer {} does not match {}x{}",
                labels.len(),
                width,
                height
            )));
        }
        if let Some((i, &bad)) = labels
            .iter()
            .enumerate()
            .find(|(_, c)| !ALLOWED_CODES.contains(c))
        {
            return Err(PipelineError::Input(format!(
                "expert '{}' pixel {} carries invalid code {}",
                expert_id, i, bad
            )));
        }
        Ok(AnnotationMap {
            width,
            height,
            labels,
            expert_id: expert_id.to_string(),
        })
    }

    /// Loads an 8-bit grayscale PNG of label codes.
    pub fn from_gray_png(path: &Path, expert_id: &str) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| PipelineError::Image(format!("{}: {}", path.display(), e)))?
            .into_luma8();
        let (width, height) = img.dimensions();
        AnnotationMap::new(width, height, img.into_raw(), expert_id)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn at(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }
}

/// Per-pixel consensus; codes as above plus [`AMBIGUOUS`].
#[derive(Clone, Debug)]
pub struct ConsensusMap {
    width: u32,
    height: u32,
    codes: Vec<u8>,
}

impl ConsensusMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn at(&self, x: u32, y: u32) -> u8 {
        self.codes[y as usize * self.width as usize + x as usize]
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn from_codes(width: u32, height: u32, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != (width as usize) * (height as usize) {
            return Err(PipelineError::Dimension(format!(
                "code buffer {} does not match {}x{}",
                codes.len(),
                width,
                height
            )));
        }
        Ok(ConsensusMap {
            width,
            height,
            codes,
        })
    }
}

/// Pixel-level majority voting across expert maps. A pixel keeps the code
/// held by a strict plurality of experts; ties become [`AMBIGUOUS`].
pub fn majority_vote(maps: &[AnnotationMap]) -> Result<ConsensusMap> {
    let first = maps
        .first()
        .ok_or_else(|| PipelineError::Input("majority vote needs at least one map".into()))?;
    let (width, height) = (first.width, first.height);
    for m in maps {
        if m.width != width || m.height != height {
            return Err(PipelineError::Dimension(format!(
                "expert '{}' map is {}x{}, expected {}x{}",
                m.expert_id, m.width, m.height, width, height
            )));
        }
    }
    let n = (width as usize) * (height as usize);
    let mut codes = vec![0u8; n];
    for (i, slot) in codes.iter_mut().enumerate() {
        // Counts indexed by code value; code 2 is never used.
        let mut counts = [0u32; 6];
        for m in maps {
            counts[m.labels[i] as usize] += 1;
        }
        let best = counts.iter().cloned().max().unwrap();
        let winners = counts.iter().filter(|&&c| c == best).count();
        *slot = if winners == 1 {
            counts.iter().position(|&c| c == best).unwrap() as u8
        } else {
            AMBIGUOUS
        };
    }
    ConsensusMap::from_codes(width, height, codes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(codes: &[u8], expert: &str) -> AnnotationMap {
        AnnotationMap::new(codes.len() as u32, 1, codes.to_vec(), expert).unwrap()
    }

    #[test]
    fn plurality_wins() {
        let maps = [map(&[3], "a"), map(&[3], "b"), map(&[4], "c")];
        let consensus = majority_vote(&maps).unwrap();
        assert_eq!(consensus.at(0, 0), 3);
    }

    #[test]
    fn ties_are_ambiguous() {
        let maps = [map(&[3], "a"), map(&[4], "b")];
        let consensus = majority_vote(&maps).unwrap();
        assert_eq!(consensus.at(0, 0), AMBIGUOUS);
    }

    #[test]
    fn unanimity_wins() {
        let maps = [map(&[5], "a"), map(&[5], "b"), map(&[5], "c")];
        assert_eq!(majority_vote(&maps).unwrap().at(0, 0), 5);
    }

    #[test]
    fn invalid_code_rejected_at_construction() {
        let err = AnnotationMap::new(1, 1, vec![2], "a").unwrap_err();
        assert!(err.to_string().contains("invalid code 2"));
    }

    #[test]
    fn dimension_mismatch_names_the_expert() {
        let maps = [map(&[3, 3], "a"), map(&[3], "late")];
        let err = majority_vote(&maps).unwrap_err();
        assert!(err.to_string().contains("late"));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(majority_vote(&[]).is_err());
    }
}
