use std::path::Path;
use std::process::{Command, Output};

use viewgrid::report::CameraRow;
use viewgrid_core::camera::{intrinsic_matrix, rotation_from_euler, EulerAngles, Intrinsics};

const TINY: [&str; 8] = [
    "--set",
    "synthdata.train_per_class=3",
    "--set",
    "synthdata.test_seen_per_class=1",
    "--set",
    "synthdata.test_unseen_per_class=1",
    "--set",
    "train.epochs=1",
];

fn viewgrid(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewgrid")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(&TINY);
    v
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_writes_header_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let o = viewgrid(&["gen"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("dataset.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["version"], 1);
    assert_eq!(header["config"]["num_classes"], 5);
    let classes: std::collections::BTreeSet<u64> = text
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["class"].as_u64().unwrap())
        .collect();
    assert_eq!(classes.len(), 5);
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn gen_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = viewgrid(&["gen", "--set", "synthdata.seed=7"], d.path());
        assert!(o.status.success());
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("dataset.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn overlapping_yaw_ranges_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = viewgrid(&["gen", "--set", "synthdata.unseen_yaw_deg=[10,40]"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("synthdata.unseen_yaw_deg"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = viewgrid(&["train", "--set", "model.cams=2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.cams"));
}

#[test]
fn missing_dataset_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = viewgrid(&["train", "--set", "dataset=/nonexistent/ds.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn train_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let o = viewgrid(&with_tiny(&["train"]), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("seen="), "{}", stdout(&o));
    for f in ["checkpoint.vgrd", "metrics.json", "timing.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["epochs"].as_array().unwrap().len(), 1);
    assert_eq!(metrics["config"]["model"]["head"], "multiview2d");

    let o = viewgrid(&with_tiny(&["eval"]), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("unseen="));

    let ck = dir.path().join("checkpoint.vgrd");
    let o = viewgrid(&["export-cameras", "--checkpoint", ck.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(dir.path().join("cameras.csv")).unwrap();
    let rows: Vec<CameraRow> = rdr.deserialize().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        let k = intrinsic_matrix(
            &Intrinsics { s_x: r.s_x, s_y: r.s_y, x_0: r.x_0, y_0: r.y_0 },
            &rotation_from_euler(EulerAngles::new(r.yaw, r.pitch, r.roll)),
        );
        let got = [r.k00, r.k01, r.k02, r.k10, r.k11, r.k12, r.k20, r.k21, r.k22];
        for (a, b) in k.iter().flatten().zip(got) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn fresh_cameras_are_spread_in_yaw() {
    let dir = tempfile::tempdir().unwrap();
    let o = viewgrid(&with_tiny(&["train", "--set", "train.lr=0", "--set", "model.num_cameras=4"]), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = dir.path().join("checkpoint.vgrd");
    let o = viewgrid(&["export-cameras", "--checkpoint", ck.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    let mut rdr = csv::Reader::from_path(dir.path().join("cameras.csv")).unwrap();
    let rows: Vec<CameraRow> = rdr.deserialize().map(Result::unwrap).collect();
    for (i, r) in rows.iter().enumerate() {
        let expected = std::f64::consts::TAU * i as f64 / 4.0;
        assert!((r.yaw - expected).abs() < 0.05, "camera {i}: yaw {}", r.yaw);
    }
}

#[test]
fn export_cameras_without_cameras_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = viewgrid(&with_tiny(&["train", "--set", "model.head=baseline-none"]), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = dir.path().join("checkpoint.vgrd");
    let o = viewgrid(&["export-cameras", "--checkpoint", ck.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no learned cameras"));
}

#[test]
fn train_from_generated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = viewgrid(&with_tiny(&["gen"]), dir.path());
    assert!(o.status.success());
    let ds = dir.path().join("dataset.jsonl");
    let set = format!("dataset={}", ds.display());
    let o = viewgrid(&with_tiny(&["train", "--set", &set, "--set", "model.head=baseline-none"]), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let o = viewgrid(&["gradcheck"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    let ops = stdout(&o).lines().filter(|l| l.contains("max_rel_error")).count();
    assert!(ops >= 10);

    let o = viewgrid(&["gradcheck", "--corrupt", "rotation"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let line = stdout(&o).lines().find(|l| l.starts_with("rotation ")).unwrap().to_string();
    assert!(line.ends_with("FAIL"), "{line}");
}

#[test]
fn ablation_rows_match_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = viewgrid(&with_tiny(&["ablate", "--grid", "cameras", "--set", "model.grid=6"]), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(dir.path().join("ablation.csv")).unwrap();
    let rows: Vec<viewgrid::ablate::Row> = rdr.deserialize().map(Result::unwrap).collect();
    let cams: Vec<usize> = rows.iter().map(|r| r.num_cameras).collect();
    assert_eq!(cams, [1, 2, 4, 8]);
}

#[test]
fn usage_error_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = viewgrid(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
