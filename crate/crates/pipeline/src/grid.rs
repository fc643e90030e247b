//! Patch grid enumeration and central-core labeling.

use medmamba_core::ClassLabel;

use crate::annotation::{code_to_label, ConsensusMap, AMBIGUOUS, CODE_BACKGROUND};

/// Top-left corners of every patch position on the stride grid. Images
/// smaller than the patch yield an empty list (the caller logs a warning).
pub fn enumerate_grid(image_w: u32, image_h: u32, patch: u32, stride: u32) -> Vec<(u32, u32)> {
    if image_w < patch || image_h < patch || stride == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut y = 0;
    while y + patch <= image_h {
        let mut x = 0;
        while x + patch <= image_w {
            out.push((x, y));
            x += stride;
        }
        y += stride;
    }
    out
}

/// Labels a patch from the centered `core x core` region of the consensus:
/// if every core pixel holds the same non-background, non-ambiguous code,
/// the patch takes that label; otherwise it is discarded (`None`).
///
/// The core is centered, offset `(patch - core) / 2` on both axes.
pub fn assign_label(
    consensus: &ConsensusMap,
    x: u32,
    y: u32,
    patch: u32,
    core: u32,
) -> Option<ClassLabel> {
    debug_assert!(core <= patch);
    debug_assert!(x + patch <= consensus.width() && y + patch <= consensus.height());
    let offset = (patch - core) / 2;
    let (cx, cy) = (x + offset, y + offset);
    let first = consensus.at(cx, cy);
    if first == CODE_BACKGROUND || first == AMBIGUOUS {
        return None;
    }
    for yy in cy..cy + core {
        for xx in cx..cx + core {
            if consensus.at(xx, yy) != first {
                return None;
            }
        }
    }
    code_to_label(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::ConsensusMap;

    #[test]
    fn full_scale_grid_count() {
        let grid = enumerate_grid(5120, 5120, 512, 256);
        assert_eq!(grid.len(), 361); // 19 positions per axis
        assert_eq!(grid[0], (0, 0));
        assert_eq!(*grid.last().unwrap(), (4608, 4608));
    }

    #[test]
    fn single_fit() {
        assert_eq!(enumerate_grid(512, 512, 512, 256), vec![(0, 0)]);
    }

    #[test]
    fn rectangular_image() {
        assert_eq!(
            enumerate_grid(768, 512, 512, 256),
            vec![(0, 0), (256, 0)]
        );
    }

    #[test]
    fn undersized_image_is_empty() {
        assert!(enumerate_grid(500, 5120, 512, 256).is_empty());
    }

    fn uniform_consensus(side: u32, code: u8) -> ConsensusMap {
        ConsensusMap::from_codes(side, side, vec![code; (side * side) as usize]).unwrap()
    }

    #[test]
    fn uniform_grade_core_keeps_the_label() {
        let consensus = uniform_consensus(512, 3);
        assert_eq!(
            assign_label(&consensus, 0, 0, 512, 250),
            Some(medmamba_core::ClassLabel::G3)
        );
    }

    #[test]
    fn single_background_pixel_in_core_discards() {
        let mut codes = vec![4u8; 512 * 512];
        // Core starts at offset (512-250)/2 = 131.
        codes[131 * 512 + 131] = 0;
        let consensus = ConsensusMap::from_codes(512, 512, codes).unwrap();
        assert_eq!(assign_label(&consensus, 0, 0, 512, 250), None);
    }

    #[test]
    fn mixed_grades_in_core_discard() {
        let mut codes = vec![3u8; 512 * 512];
        codes[200 * 512 + 200] = 4;
        let consensus = ConsensusMap::from_codes(512, 512, codes).unwrap();
        assert_eq!(assign_label(&consensus, 0, 0, 512, 250), None);
    }

    #[test]
    fn background_outside_core_is_fine() {
        let mut codes = vec![0u8; 512 * 512];
        for y in 131..131 + 250 {
            for x in 131..131 + 250 {
                codes[y * 512 + x] = 5;
            }
        }
        let consensus = ConsensusMap::from_codes(512, 512, codes).unwrap();
        assert_eq!(
            assign_label(&consensus, 0, 0, 512, 250),
            Some(medmamba_core::ClassLabel::G5)
        );
    }

    #[test]
    fn ambiguous_core_discards() {
        let mut codes = vec![3u8; 512 * 512];
        codes[256 * 512 + 256] = AMBIGUOUS;
        let consensus = ConsensusMap::from_codes(512, 512, codes).unwrap();
        assert_eq!(assign_label(&consensus, 0, 0, 512, 250), None);
    }
}
