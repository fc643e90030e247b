//! Dataset engineering for patch-level tissue classification: multi-expert
//! pixel consensus, strided patch extraction with central-core labeling,
//! and patient-grouped train/val/test and fold assignment.

pub mod annotation;
pub mod error;
pub mod extract;
pub mod grid;
pub mod manifest;
pub mod split;

pub use annotation::{majority_vote, AnnotationMap, ConsensusMap, AMBIGUOUS};
pub use error::{PipelineError, Result};
pub use extract::{extract_dataset, extract_image, ExtractParams, ExtractSummary};
pub use grid::{assign_label, enumerate_grid};
pub use manifest::{read_manifest, read_patient_map, write_manifest, PatchRecord, Split};
pub use split::{assign_folds, split_by_patient, SplitPlan};
