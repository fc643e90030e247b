//! Shared fixtures for the black-box CLI tests: synthetic slide images with
//! per-class textures and uniform expert annotations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use medmamba_core::synth;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const BIN: &str = env!("CARGO_BIN_EXE_gleason-mamba");

pub fn run_cmd(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("GLEASON_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn assert_exit(output: &Output, code: i32, context: &str) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "{}: stdout={} stderr={}",
        context,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Class index for each fixture image, cycling the four labels.
pub fn fixture_class(image_index: usize) -> usize {
    image_index % 4
}

fn annotation_code(class: usize) -> u8 {
    [1u8, 3, 4, 5][class]
}

/// Builds `images/`, `annotations/`, and `patients.csv` under `root`:
/// `n_images` textured slides of `side` pixels, three unanimous experts
/// each, two images per patient.
pub fn build_fixture(root: &Path, n_images: usize, side: u32) -> (PathBuf, PathBuf, PathBuf) {
    let images_dir = root.join("images");
    let annotations_dir = root.join("annotations");
    std::fs::create_dir_all(&images_dir).unwrap();
    std::fs::create_dir_all(&annotations_dir).unwrap();

    let mut patient_rows = String::from("image_id,patient_id\n");
    for i in 0..n_images {
        let image_id = format!("im{:02}", i);
        let class = fixture_class(i);

        // Texture image of the class, rendered as one big patch.
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + i as u64);
        let sample = synth::render(side as usize, class, &mut rng);
        let img = image::RgbImage::from_raw(side, side, sample.pixels.clone()).unwrap();
        img.save(images_dir.join(format!("{}.png", image_id))).unwrap();

        // Three experts, unanimous over the whole slide.
        let ann_dir = annotations_dir.join(&image_id);
        std::fs::create_dir_all(&ann_dir).unwrap();
        for e in 0..3 {
            let code = annotation_code(class);
            let map = image::GrayImage::from_pixel(side, side, image::Luma([code]));
            map.save(ann_dir.join(format!("expert_{}.png", e))).unwrap();
        }

        patient_rows.push_str(&format!("{},patient{:02}\n", image_id, i / 2));
    }
    let patients = root.join("patients.csv");
    std::fs::write(&patients, patient_rows).unwrap();
    (images_dir, annotations_dir, patients)
}

/// Extracts and splits the fixture, returning the manifest path. Patches
/// are 32x32 so they feed the desk-scale model directly.
pub fn extract_and_split(root: &Path, n_images: usize, side: u32, seed: u64) -> PathBuf {
    let (images, annotations, patients) = build_fixture(root, n_images, side);
    let out = root.join("dataset");
    let output = run_cmd(&[
        "extract",
        "--images",
        images.to_str().unwrap(),
        "--annotations",
        annotations.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--patch-size",
        "32",
        "--stride",
        "32",
        "--core",
        "16",
        "--patient-map",
        patients.to_str().unwrap(),
    ]);
    assert_exit(&output, 0, "extract");
    let manifest = out.join("manifest.csv");
    let output = run_cmd(&[
        "split",
        "--manifest",
        manifest.to_str().unwrap(),
        "--test-frac",
        "0.25",
        "--val-frac",
        "0.2",
        "--seed",
        &seed.to_string(),
    ]);
    assert_exit(&output, 0, "split");
    manifest
}

/// Recursively collects (relative path, bytes) for every file under `dir`.
pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries = Vec::new();
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        paths.sort();
        for p in paths {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    walk(dir, dir, &mut entries);
    entries
}
