use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn pnal() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pnal"));
    cmd.env_remove("PNAL_OUTPUT_ROOT").env_remove("PNAL_WORKERS");
    cmd
}

fn run(dir: &Path, args: &[&str]) -> Output {
    pnal().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file under `dir`, relative path to bytes.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const SMALL: &[&str] = &["--count", "2", "--points-per-instance", "100", "--instances-per-class", "2"];

fn small_clean(dir: &Path) {
    let mut args = vec!["synth", "-o", "clean", "--seed", "4"];
    args.extend_from_slice(SMALL);
    ok(dir, &args);
}

#[test]
fn synth_writes_manifest_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "-o", "a", "--count", "2"]);
    ok(d, &["synth", "-o", "b", "--count", "2"]);
    let manifest = json(d.join("a/manifest.json"));
    assert_eq!(manifest["scenes"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["class_count"], 6);
    assert!(d.join("a/scene_001.txt").exists());
    assert_eq!(snapshot(&d.join("a")), snapshot(&d.join("b")));
    let lines = fs::read_to_string(d.join("a/scene_000.txt")).unwrap().lines().count();
    assert_eq!(lines, 12000);
}

#[test]
fn synth_rejects_zero_count_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["synth", "-o", "x", "--count", "0"]);
    assert_eq!(code(&out), 1);
    assert!(!tmp.path().join("x").exists());
    let out = run(tmp.path(), &["synth", "-o", "x", "--classes", "1"]);
    assert_eq!(code(&out), 1);
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let out = pnal()
        .current_dir(tmp.path())
        .env("PNAL_OUTPUT_ROOT", &root)
        .args(["synth", "-o", "data", "--count", "1", "--points-per-instance", "50"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("data/manifest.json").exists());
    assert!(!tmp.path().join("data").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&run(d, &["synth", "--bogus"])), 1);
    assert_eq!(code(&run(d, &["stats", "-i", "missing"])), 2);
    fs::write(d.join("bad.json"), r#"{"trian": {}}"#).unwrap();
    assert_eq!(code(&run(d, &["synth", "-o", "x", "--config", "bad.json"])), 1);
    assert_eq!(code(&run(d, &["synth", "-o", "x", "--config", "nope.json"])), 2);
    assert_eq!(code(&run(d, &["--workers", "0", "synth", "-o", "x"])), 1);
    assert_eq!(code(&run(d, &["--help"])), 0);
}

#[test]
fn config_file_with_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("run.json"),
        r#"{"synth": {"class_count": 3, "points_per_instance": 50}, "scene_count": 3}"#,
    )
    .unwrap();
    ok(d, &["synth", "-o", "x", "--config", "run.json", "--count", "1"]);
    let m = json(d.join("x/manifest.json"));
    assert_eq!(m["class_count"], 3);
    assert_eq!(m["scenes"].as_array().unwrap().len(), 1);
    assert_eq!(m["synth"]["points_per_instance"], 50);
}

#[test]
fn inject_symmetric_rate_on_500_instances() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // 17 scenes of 30 instances
    ok(d, &["synth", "-o", "clean", "--count", "17", "--points-per-instance", "60"]);
    ok(d, &["inject", "-i", "clean", "-o", "noisy", "--tau", "0.6", "--seed", "2"]);
    let report = json(d.join("noisy/noise_report.json"));
    assert_eq!(report["instances"], 510);
    let rate = report["measured_instance_rate"].as_f64().unwrap();
    assert!((0.54..=0.66).contains(&rate), "{rate}");
    assert_eq!(report["scenes"].as_array().unwrap().len(), 17);
}

#[test]
fn inject_zero_rate_is_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_clean(d);
    ok(d, &["inject", "-i", "clean", "-o", "noisy", "--tau", "0"]);
    for f in ["scene_000.txt", "scene_001.txt"] {
        assert_eq!(fs::read(d.join("clean").join(f)).unwrap(), fs::read(d.join("noisy").join(f)).unwrap());
    }
    let report = json(d.join("noisy/noise_report.json"));
    assert_eq!(report["measured_instance_rate"], 0.0);
    assert_eq!(report["flipped_points"], 0);
}

#[test]
fn inject_boundary_flips_every_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_clean(d);
    let before = snapshot(&d.join("clean"));
    ok(d, &["inject", "-i", "clean", "-o", "noisy", "--kind", "boundary", "--alpha", "1", "--beta", "0.7"]);
    let report = json(d.join("noisy/noise_report.json"));
    for s in report["scenes"].as_array().unwrap() {
        assert!(s["flipped_points"].as_u64().unwrap() > 0);
    }
    assert_eq!(before, snapshot(&d.join("clean")));
}

#[test]
fn inject_needs_instances_and_a_distinct_output() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::create_dir(d.join("plain")).unwrap();
    fs::write(d.join("plain/a.txt"), "0 0 0 0.1 0.1 0.1 0\n1 0 0 0.2 0.2 0.2 1\n").unwrap();
    fs::write(d.join("plain/manifest.json"), r#"{"class_count": 2, "scenes": ["a.txt"]}"#).unwrap();
    let out = run(d, &["inject", "-i", "plain", "-o", "noisy", "--tau", "0.5"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("instance"));
    assert!(!d.join("noisy").exists());
    assert_eq!(code(&run(d, &["inject", "-i", "plain", "-o", "plain", "--kind", "boundary"])), 1);
    assert_eq!(code(&run(d, &["inject", "-i", "plain", "-o", "x", "--tau", "1.5"])), 1);
}

#[test]
fn cluster_dumps() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_clean(d);
    ok(d, &["cluster", "-i", "clean", "-o", "cl"]);
    let summary = json(d.join("cl/clusters.json"));
    assert_eq!(summary.as_array().unwrap().len(), 2);
    let dump = fs::read_to_string(d.join("cl/scene_000.clusters")).unwrap();
    assert_eq!(dump.lines().next().unwrap().split(' ').count(), 2);
    assert_eq!(dump.lines().count(), 1200);
}

fn noisy_fixture(d: &Path) {
    small_clean(d);
    ok(d, &["inject", "-i", "clean", "-o", "noisy", "--tau", "0.4", "--seed", "1"]);
}

const TRAIN: &[&str] = &["--epochs", "6", "--warmup", "4", "--points-per-block", "512"];

#[test]
fn train_reports_and_exports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    noisy_fixture(d);
    let inputs = (snapshot(&d.join("noisy")), snapshot(&d.join("clean")));
    let mut args = vec!["train", "-i", "noisy", "-o", "run", "--clean", "clean", "--test", "clean"];
    args.extend_from_slice(TRAIN);
    let out = ok(d, &args);
    assert!(String::from_utf8_lossy(&out.stdout).contains("replaced_fraction"));
    let report = json(d.join("run/report.json"));
    assert!(report["oa"].is_number());
    assert!(report["replaced_fraction"].is_number());
    assert_eq!(fs::read_to_string(d.join("run/epochs.jsonl")).unwrap().lines().count(), 6);
    assert!(d.join("run/cleaned/scene_001.mask").exists());
    assert!(d.join("run/config.json").exists());
    let log = fs::read_to_string(d.join("run/corrections.log")).unwrap();
    assert!(log.lines().skip(1).all(|l| l.split(' ').count() == 6));
    assert_eq!(inputs, (snapshot(&d.join("noisy")), snapshot(&d.join("clean"))));

    // the cleaned export is itself a dataset
    let stats = ok(d, &["stats", "-i", "run/cleaned", "--clean", "clean"]);
    let stats: Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(stats["replaced_fraction"], report["replaced_fraction"]);
}

#[test]
fn train_without_clean_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    noisy_fixture(d);
    let mut args = vec!["train", "-i", "noisy", "-o", "run"];
    args.extend_from_slice(TRAIN);
    ok(d, &args);
    let report = json(d.join("run/report.json"));
    assert!(report["oa"].is_number());
    assert!(report.get("replaced_fraction").is_none());
    assert!(report.get("true_correction_fraction").is_none());
}

#[test]
fn train_is_deterministic_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    noisy_fixture(d);
    for (dir, workers) in [("r1", "1"), ("r2", "3")] {
        let mut args = vec![
            "--workers", workers, "train", "-i", "noisy", "-o", dir, "--clean", "clean", "--pipeline", "mixed",
            "--boundary-epochs", "2", "--dump-band",
        ];
        args.extend_from_slice(TRAIN);
        ok(d, &args);
    }
    let out = pnal()
        .current_dir(d)
        .env("PNAL_WORKERS", "2")
        .args(["train", "-i", "noisy", "-o", "r3", "--clean", "clean", "--pipeline", "mixed", "--boundary-epochs", "2", "--dump-band"])
        .args(TRAIN)
        .output()
        .unwrap();
    assert!(out.status.success());
    let a = snapshot(&d.join("r1"));
    assert!(a.iter().any(|(p, _)| p.starts_with("bands")));
    assert_eq!(a, snapshot(&d.join("r2")));
    assert_eq!(a, snapshot(&d.join("r3")));
}

#[test]
fn boundary_pipeline_on_single_class_data_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::create_dir(d.join("flat")).unwrap();
    let scene: String = (0..200)
        .map(|i| format!("{} {} 0 0.5 0.5 0.5 1 0\n", (i % 20) as f64 * 0.01, (i / 20) as f64 * 0.01))
        .collect();
    fs::write(d.join("flat/s.txt"), scene).unwrap();
    fs::write(d.join("flat/manifest.json"), r#"{"class_count": 2, "scenes": ["s.txt"]}"#).unwrap();
    let out = run(d, &["train", "-i", "flat", "-o", "run", "--pipeline", "pnal_boundary", "--epochs", "5", "--warmup", "4"]);
    assert_eq!(code(&out), 1);
    assert!(!d.join("run").exists());
    let out = run(d, &["train", "-i", "flat", "-o", "run", "--pipeline", "pnal", "--epochs", "3", "--warmup", "2"]);
    assert_eq!(code(&out), 1, "warm-up shorter than the history");
}

fn write_scene(path: &Path, rows: &[(f64, u32)]) {
    let text: String = rows.iter().map(|(x, l)| format!("{x} 0 0 0.5 0.5 0.5 {l}\n")).collect();
    fs::write(path, text).unwrap();
}

#[test]
fn eval_identity_and_alignment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let gt: Vec<(f64, u32)> = (0..40).map(|i| (i as f64, u32::from(i >= 20))).collect();
    write_scene(&d.join("gt.txt"), &gt);
    let out = ok(d, &["eval", "--pred", "gt.txt", "--gt", "gt.txt", "--json", "r.json"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("oa_edge"));
    let r = json(d.join("r.json"));
    assert_eq!(r["oa"], 1.0);
    assert_eq!(r["miou"], 1.0);

    let mut shuffled = gt.clone();
    shuffled.reverse();
    write_scene(&d.join("shuffled.txt"), &shuffled);
    assert_eq!(code(&run(d, &["eval", "--pred", "shuffled.txt", "--gt", "gt.txt"])), 1);
    write_scene(&d.join("short.txt"), &gt[..39]);
    assert_eq!(code(&run(d, &["eval", "--pred", "short.txt", "--gt", "gt.txt"])), 1);
}

#[test]
fn eval_matches_hand_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let gt: Vec<(f64, u32)> = (0..40).map(|i| (i as f64, u32::from(i >= 20))).collect();
    // four wrong labels at the boundary, two deep inside class 0
    let pred: Vec<(f64, u32)> = gt
        .iter()
        .map(|&(x, l)| match x as usize {
            18 | 19 => (x, 1),
            20 | 21 => (x, 0),
            2 | 3 => (x, 1),
            _ => (x, l),
        })
        .collect();
    write_scene(&d.join("gt.txt"), &gt);
    write_scene(&d.join("pred.txt"), &pred);
    ok(d, &["eval", "--pred", "pred.txt", "--gt", "gt.txt", "--k-boundary", "5", "--json", "r.json"]);
    let r = json(d.join("r.json"));
    assert_eq!(r["oa"], 34.0 / 40.0);
    // band of a 5-NN line split at 20 is points 16..24
    assert_eq!(r["oa_edge"], 4.0 / 8.0);
    assert_eq!(r["oa_in"], 30.0 / 32.0);
    // class 0: tp 16, fp 2, fn 4; class 1: tp 18, fp 4, fn 2
    let iou0 = 16.0 / 22.0;
    let iou1 = 18.0 / 24.0;
    assert!((r["miou"].as_f64().unwrap() - (iou0 + iou1) / 2.0).abs() < 1e-12);
}

#[test]
fn stats_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_clean(d);
    let out = ok(d, &["stats", "-i", "clean"]);
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["scenes"], 2);
    assert_eq!(s["points"], 2400);
    assert_eq!(s["class_histogram"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect::<Vec<_>>(), vec![400; 6]);
    assert_eq!(s["instances"], 24);
    assert!(s.get("label_accuracy").is_none());
    let out = ok(d, &["stats", "-i", "clean", "--clean", "clean"]);
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["label_accuracy"], 1.0);
}
