use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use medmamba_pipeline::extract::{class_supports, extract_dataset, format_summary, ExtractParams};
use medmamba_pipeline::manifest::{read_patient_map, write_manifest};
use serde::Serialize;

use crate::config::emit_resolved_config;
use crate::errors::{CliError, Result};

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Directory of RGB source images, one `<image_id>.png` each.
    #[arg(long)]
    pub images: PathBuf,

    /// Directory of expert maps: `<annotations>/<image_id>/expert_<k>.png`.
    #[arg(long)]
    pub annotations: PathBuf,

    /// Output directory for the manifest, crops, and resolved config.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long = "patch-size", default_value_t = 512)]
    pub patch_size: u32,

    #[arg(long, default_value_t = 256)]
    pub stride: u32,

    /// Side of the centered region that decides the patch label.
    #[arg(long, default_value_t = 250)]
    pub core: u32,

    /// Optional `image_id,patient_id` CSV; image ids double as patient ids
    /// when absent.
    #[arg(long = "patient-map")]
    pub patient_map: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResolvedExtractConfig {
    images: PathBuf,
    annotations: PathBuf,
    out: PathBuf,
    patch_size: u32,
    stride: u32,
    core: u32,
    patient_map: Option<PathBuf>,
}

pub fn run(args: ExtractArgs) -> Result<()> {
    if !args.images.is_dir() {
        return Err(CliError::input(format!(
            "images directory does not exist: {}",
            args.images.display()
        )));
    }
    if !args.annotations.is_dir() {
        return Err(CliError::input(format!(
            "annotations directory does not exist: {}",
            args.annotations.display()
        )));
    }
    if std::fs::read_dir(&args.annotations)?.next().is_none() {
        return Err(CliError::input(format!(
            "annotations directory is empty: {}",
            args.annotations.display()
        )));
    }
    let params = ExtractParams {
        patch: args.patch_size,
        stride: args.stride,
        core: args.core,
    };
    params.validate()?;

    let patient_map = match &args.patient_map {
        Some(path) => read_patient_map(path)?,
        None => BTreeMap::new(),
    };

    std::fs::create_dir_all(&args.out)?;
    let patches_dir = args.out.join("patches");
    let (records, summary) = extract_dataset(
        &args.images,
        &args.annotations,
        &patient_map,
        &params,
        Some(&patches_dir),
    )?;
    if summary.kept == 0 {
        return Err(CliError::runtime(
            "extraction kept zero patches; nothing to write".to_string(),
        ));
    }
    write_manifest(&args.out.join("manifest.csv"), &records)?;
    emit_resolved_config(
        &args.out.join("extract_config.json"),
        &ResolvedExtractConfig {
            images: args.images.clone(),
            annotations: args.annotations.clone(),
            out: args.out.clone(),
            patch_size: args.patch_size,
            stride: args.stride,
            core: args.core,
            patient_map: args.patient_map.clone(),
        },
    )?;

    println!("{}", format_summary(&summary));
    let supports = class_supports(&records);
    log::info!("class supports: {:?}", supports);
    Ok(())
}
