//! Patch manifests: the CSV that ties every extracted patch to its patient,
//! source image, grid position, label, and split/fold assignment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use medmamba_core::ClassLabel;

use crate::error::{PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{}'", other)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchRecord {
    pub patch_id: String,
    pub patient_id: String,
    pub image_id: String,
    pub x: u32,
    pub y: u32,
    pub label: ClassLabel,
    pub split: Option<Split>,
    pub fold: Option<u8>,
}

impl PatchRecord {
    pub fn patch_id_for(image_id: &str, x: u32, y: u32) -> String {
        format!("{}_x{}_y{}", image_id, x, y)
    }
}

pub const MANIFEST_HEADER: [&str; 8] = [
    "patch_id",
    "patient_id",
    "image_id",
    "x",
    "y",
    "label",
    "split",
    "fold",
];

/// Writes records in the canonical order (image_id, y, x); output bytes are
/// a pure function of the records.
pub fn write_manifest(path: &Path, records: &[PatchRecord]) -> Result<()> {
    let mut sorted: Vec<&PatchRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.image_id, a.y, a.x).cmp(&(&b.image_id, b.y, b.x))
    });
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for r in sorted {
        w.write_record([
            r.patch_id.as_str(),
            r.patient_id.as_str(),
            r.image_id.as_str(),
            &r.x.to_string(),
            &r.y.to_string(),
            r.label.as_str(),
            r.split.map(|s| s.as_str()).unwrap_or(""),
            &r.fold.map(|f| f.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<PatchRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != MANIFEST_HEADER {
            return Err(PipelineError::Input(format!(
                "manifest header {:?} does not match {:?}",
                got, MANIFEST_HEADER
            )));
        }
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2; // header is line 1
        let field = |k: usize| row.get(k).unwrap_or("").to_string();
        let label: ClassLabel = field(5)
            .parse()
            .map_err(|e| PipelineError::Input(format!("line {}: {}", line, e)))?;
        let split = match field(6).as_str() {
            "" => None,
            s => Some(
                s.parse::<Split>()
                    .map_err(|e| PipelineError::Input(format!("line {}: {}", line, e)))?,
            ),
        };
        let fold = match field(7).as_str() {
            "" => None,
            s => Some(s.parse::<u8>().map_err(|_| {
                PipelineError::Input(format!("line {}: bad fold '{}'", line, s))
            })?),
        };
        out.push(PatchRecord {
            patch_id: field(0),
            patient_id: field(1),
            image_id: field(2),
            x: field(3)
                .parse()
                .map_err(|_| PipelineError::Input(format!("line {}: bad x", line)))?,
            y: field(4)
                .parse()
                .map_err(|_| PipelineError::Input(format!("line {}: bad y", line)))?,
            label,
            split,
            fold,
        });
    }
    Ok(out)
}

/// `image_id,patient_id` mapping.
pub fn read_patient_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_path(path)?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != ["image_id", "patient_id"] {
            return Err(PipelineError::Input(format!(
                "patient map header {:?} must be [image_id, patient_id]",
                got
            )));
        }
    }
    let mut map = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        map.insert(
            row.get(0).unwrap_or("").to_string(),
            row.get(1).unwrap_or("").to_string(),
        );
    }
    Ok(map)
}
