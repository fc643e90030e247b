use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use medmamba_pipeline::manifest::{read_manifest, write_manifest, PatchRecord};
use medmamba_pipeline::split::{assign_folds, split_by_patient};
use serde::Serialize;

use crate::config::emit_resolved_config;
use crate::errors::{CliError, Result};

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    /// Output manifest; rewrites the input in place when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long = "test-frac", default_value_t = 0.2)]
    pub test_frac: f64,

    #[arg(long = "val-frac", default_value_t = 0.1)]
    pub val_frac: f64,

    /// Assign patient-grouped folds instead of train/val splits.
    #[arg(long)]
    pub folds: Option<usize>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct ResolvedSplitConfig {
    manifest: PathBuf,
    out: PathBuf,
    test_frac: f64,
    val_frac: f64,
    folds: Option<usize>,
    seed: u64,
}

fn support_table(records: &[PatchRecord]) -> String {
    let mut groups: BTreeMap<String, [usize; 4]> = BTreeMap::new();
    for r in records {
        let key = match (r.split, r.fold) {
            (_, Some(f)) => format!("fold{}", f),
            (Some(s), None) => s.to_string(),
            (None, None) => "unassigned".to_string(),
        };
        groups.entry(key).or_insert([0; 4])[r.label.index()] += 1;
    }
    let mut s = format!(
        "{:<12}{:>8}{:>8}{:>8}{:>8}{:>8}\n",
        "subset", "benign", "g3", "g4", "g5", "total"
    );
    for (key, counts) in groups {
        let total: usize = counts.iter().sum();
        s.push_str(&format!(
            "{:<12}{:>8}{:>8}{:>8}{:>8}{:>8}\n",
            key, counts[0], counts[1], counts[2], counts[3], total
        ));
    }
    s
}

pub fn run(args: SplitArgs) -> Result<()> {
    if !args.manifest.is_file() {
        return Err(CliError::input(format!(
            "manifest does not exist: {}",
            args.manifest.display()
        )));
    }
    let mut records = read_manifest(&args.manifest)?;
    if records.is_empty() {
        return Err(CliError::input("manifest has no records".to_string()));
    }
    let plan = match args.folds {
        Some(k) => assign_folds(&records, k, args.test_frac, args.seed)?,
        None => split_by_patient(&records, args.test_frac, args.val_frac, args.seed)?,
    };
    plan.apply(&mut records)?;

    let out = args.out.clone().unwrap_or_else(|| args.manifest.clone());
    write_manifest(&out, &records)?;
    let config_path = out
        .parent()
        .map(|p| p.join("split_config.json"))
        .unwrap_or_else(|| PathBuf::from("split_config.json"));
    emit_resolved_config(
        &config_path,
        &ResolvedSplitConfig {
            manifest: args.manifest.clone(),
            out: out.clone(),
            test_frac: args.test_frac,
            val_frac: args.val_frac,
            folds: args.folds,
            seed: args.seed,
        },
    )?;

    println!("{}", support_table(&records));
    Ok(())
}
