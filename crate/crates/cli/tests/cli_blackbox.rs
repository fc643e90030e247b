//! Black-box tests of the binary: exit codes, validation messages, and
//! end-to-end command flow on synthetic fixtures.

mod util;

use util::{assert_exit, build_fixture, dir_bytes, extract_and_split, run_cmd};

#[test]
fn missing_images_directory_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cmd(&[
        "extract",
        "--images",
        dir.path().join("nope").to_str().unwrap(),
        "--annotations",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&out, 2, "missing images dir");
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn empty_annotations_directory_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    let annotations = dir.path().join("annotations");
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&annotations).unwrap();
    image::RgbImage::from_pixel(64, 64, image::Rgb([1, 2, 3]))
        .save(images.join("im.png"))
        .unwrap();
    let out = run_cmd(&[
        "extract",
        "--images",
        images.to_str().unwrap(),
        "--annotations",
        annotations.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&out, 2, "empty annotations dir");
    assert!(String::from_utf8_lossy(&out.stderr).contains("annotations"));
}

#[test]
fn extract_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (images, annotations, patients) = build_fixture(dir.path(), 4, 64);
    let mut outs = Vec::new();
    for run in 0..2 {
        let out_dir = dir.path().join(format!("out{}", run));
        let out = run_cmd(&[
            "extract",
            "--images",
            images.to_str().unwrap(),
            "--annotations",
            annotations.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--patch-size",
            "32",
            "--stride",
            "32",
            "--core",
            "16",
            "--patient-map",
            patients.to_str().unwrap(),
        ]);
        assert_exit(&out, 0, "extract");
        // The resolved config embeds the out path, which differs between
        // the two runs by construction; compare everything else.
        let mut bytes = dir_bytes(&out_dir);
        bytes.retain(|(name, _)| name != "extract_config.json");
        outs.push(bytes);
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn split_single_patient_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("manifest.csv"),
        "patch_id,patient_id,image_id,x,y,label,split,fold\n\
         a_x0_y0,p0,a,0,0,g3,,\n\
         a_x32_y0,p0,a,32,0,g4,,\n",
    )
    .unwrap();
    let out = run_cmd(&[
        "split",
        "--manifest",
        dir.path().join("manifest.csv").to_str().unwrap(),
    ]);
    assert_exit(&out, 2, "single patient");
    assert!(String::from_utf8_lossy(&out.stderr).contains("patient"));
}

#[test]
fn split_reruns_identically_and_prints_supports() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = extract_and_split(dir.path(), 8, 64, 11);
    let first = std::fs::read(&manifest).unwrap();
    let out = run_cmd(&[
        "split",
        "--manifest",
        manifest.to_str().unwrap(),
        "--test-frac",
        "0.25",
        "--val-frac",
        "0.2",
        "--seed",
        "11",
    ]);
    assert_exit(&out, 0, "second split");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("subset"));
    assert!(stdout.contains("test"));
    assert_eq!(first, std::fs::read(&manifest).unwrap());
}

#[test]
fn split_with_folds_fills_the_fold_column() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = extract_and_split(dir.path(), 8, 64, 3);
    let out = run_cmd(&[
        "split",
        "--manifest",
        manifest.to_str().unwrap(),
        "--folds",
        "2",
        "--test-frac",
        "0.25",
        "--seed",
        "3",
    ]);
    assert_exit(&out, 0, "fold split");
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.lines().skip(1).any(|l| l.ends_with(",1") || l.ends_with(",2")));
}

#[test]
fn eval_requires_exactly_one_source() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = extract_and_split(dir.path(), 8, 64, 5);
    let out = run_cmd(&[
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("m").to_str().unwrap(),
    ]);
    assert_exit(&out, 2, "no source");
}

#[test]
fn eval_perfect_predictions_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = extract_and_split(dir.path(), 8, 64, 7);
    // Predict the ground truth for every test patch.
    let records = std::fs::read_to_string(&manifest).unwrap();
    let mut preds = String::from("patch_id,predicted_label\n");
    for line in records.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols[6] == "test" {
            preds.push_str(&format!("{},{}\n", cols[0], cols[5]));
        }
    }
    let pred_path = dir.path().join("preds.csv");
    std::fs::write(&pred_path, preds).unwrap();
    let out_dir = dir.path().join("metrics");
    let out = run_cmd(&[
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--pred-csv",
        pred_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0, "perfect eval");
    let metrics = std::fs::read_to_string(out_dir.join("metrics.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&metrics).unwrap();
    assert_eq!(parsed["overall_accuracy"], 1.0);
    assert_eq!(parsed["weighted"]["f1"], 1.0);
    assert!(out_dir.join("confusion_counts.csv").is_file());
    assert!(out_dir.join("confusion_normalized.csv").is_file());
}

#[test]
fn eval_unknown_label_exits_2_with_row() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = extract_and_split(dir.path(), 8, 64, 9);
    let records = std::fs::read_to_string(&manifest).unwrap();
    let mut preds = String::from("patch_id,predicted_label\n");
    let mut wrote_bad = false;
    for line in records.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols[6] == "test" {
            if wrote_bad {
                preds.push_str(&format!("{},{}\n", cols[0], cols[5]));
            } else {
                preds.push_str(&format!("{},gradeZ\n", cols[0]));
                wrote_bad = true;
            }
        }
    }
    let pred_path = dir.path().join("preds.csv");
    std::fs::write(&pred_path, preds).unwrap();
    let out = run_cmd(&[
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--pred-csv",
        pred_path.to_str().unwrap(),
        "--out",
        dir.path().join("m").to_str().unwrap(),
    ]);
    assert_exit(&out, 2, "unknown label");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("row 2"), "stderr: {}", stderr);
    assert!(stderr.contains("gradeZ"));
}

#[test]
fn eval_missing_prediction_lists_ids() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = extract_and_split(dir.path(), 8, 64, 13);
    let pred_path = dir.path().join("preds.csv");
    std::fs::write(&pred_path, "patch_id,predicted_label\n").unwrap();
    let out = run_cmd(&[
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--pred-csv",
        pred_path.to_str().unwrap(),
        "--out",
        dir.path().join("m").to_str().unwrap(),
    ]);
    assert_exit(&out, 2, "missing predictions");
    assert!(String::from_utf8_lossy(&out.stderr).contains("no prediction"));
}

#[test]
fn train_zero_epochs_writes_initial_checkpoint_and_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = extract_and_split(dir.path(), 8, 64, 15);
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, r#"{"epochs":0}"#).unwrap();
    let out_dir = dir.path().join("run");
    let out = run_cmd(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0, "zero-epoch train");
    assert!(out_dir.join("checkpoint.ckpt").is_file());
    let log = std::fs::read_to_string(out_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.trim(), "epoch,train_loss,train_acc,val_loss,val_acc");
    assert!(out_dir.join("train_config.json").is_file());
}

#[test]
fn train_without_split_columns_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (images, annotations, patients) = build_fixture(dir.path(), 4, 64);
    let out_dir = dir.path().join("dataset");
    let out = run_cmd(&[
        "extract",
        "--images",
        images.to_str().unwrap(),
        "--annotations",
        annotations.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--patch-size",
        "32",
        "--stride",
        "32",
        "--core",
        "16",
        "--patient-map",
        patients.to_str().unwrap(),
    ]);
    assert_exit(&out, 0, "extract");
    let out = run_cmd(&[
        "train",
        "--manifest",
        out_dir.join("manifest.csv").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_exit(&out, 2, "train without splits");
    assert!(String::from_utf8_lossy(&out.stderr).contains("split"));
}
