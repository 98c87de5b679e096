use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};

fn detcal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detcal"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn detcal_stdin(dir: &Path, args: &[&str], input: &[u8]) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_detcal"))
        .current_dir(dir)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input).unwrap();
    child.wait_with_output().unwrap()
}

fn json_out(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) {
    std::fs::write(dir.join(name), serde_json::to_vec(v).unwrap()).unwrap();
}

fn perfect_fixture(dir: &Path) {
    let boxes = [
        [10.0, 20.0, 20.0, 20.0],
        [100.0, 100.0, 50.0, 40.0],
        [300.0, 50.0, 120.0, 110.0],
    ];
    let anns: Vec<Value> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| json!({"id": i + 1, "image_id": 1, "category_id": 1, "bbox": b}))
        .collect();
    let gt = json!({
        "images": [{"id": 1, "width": 640, "height": 480}],
        "annotations": anns,
        "categories": [{"id": 1, "name": "lesion"}],
    });
    let dets: Vec<Value> = boxes
        .iter()
        .map(|b| json!({"image_id": 1, "category_id": 1, "bbox": b, "score": 1.0}))
        .collect();
    write_json(dir, "gt.json", &gt);
    write_json(dir, "dets.json", &Value::Array(dets));
}

#[test]
fn evaluate_perfect_detections() {
    let dir = tempfile::tempdir().unwrap();
    perfect_fixture(dir.path());
    let report = json_out(&detcal(
        dir.path(),
        &["evaluate", "--gt", "gt.json", "--dets", "dets.json"],
    ));
    for key in ["ap", "ap50", "ap75", "ap_s", "ap_m", "ap_l"] {
        assert_eq!(report[key], json!(1.0), "{key}");
    }
}

#[test]
fn evaluate_csv_and_pr_file() {
    let dir = tempfile::tempdir().unwrap();
    perfect_fixture(dir.path());
    let out = detcal(
        dir.path(),
        &[
            "evaluate",
            "--gt",
            "gt.json",
            "--dets",
            "dets.json",
            "--format",
            "csv",
            "--pr-csv",
            "pr.csv",
        ],
    );
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout, std::fs::read_to_string(dir.path().join("pr.csv")).unwrap());
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("iou_threshold,recall,precision"));
    assert_eq!(lines.count(), 10 * 101);
}

#[test]
fn assign_at_zero_progress_uses_anchor_iou() {
    let dir = tempfile::tempdir().unwrap();
    let synth = detcal(
        dir.path(),
        &[
            "synth",
            "--seed",
            "3",
            "--n-anchors",
            "400",
            "--n-gts",
            "6",
            "--noise",
            "0.3",
        ],
    );
    assert!(synth.status.success());
    std::fs::write(dir.path().join("s.json"), &synth.stdout).unwrap();
    let scenario: detcal::Scenario = serde_json::from_slice(&synth.stdout).unwrap();
    let result = json_out(&detcal(
        dir.path(),
        &["assign", "--scenario", "s.json", "--progress", "0.0"],
    ));
    let diou = result["diou"].as_array().unwrap();
    for (i, a) in scenario.anchors.iter().enumerate() {
        let best = scenario
            .gts
            .iter()
            .map(|g| detcal::iou(a, g))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(diou[i].as_f64().unwrap(), best, "anchor {i}");
    }
}

#[test]
fn piped_synth_assign_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        let synth = detcal(
            dir.path(),
            &["synth", "--seed", "7", "--n-anchors", "500", "--progress", "0.4"],
        );
        assert!(synth.status.success());
        let assign = detcal_stdin(dir.path(), &["assign", "--lambda", "0.7"], &synth.stdout);
        assert!(assign.status.success());
        (synth.stdout, assign.stdout)
    };
    assert_eq!(run(), run());
}

#[test]
fn stats_recovers_planted_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let edges = detcal::dataio::DEFAULT_AR_BINS;
    let planted = [130usize, 170, 200, 150, 120, 130, 100];
    let mut anns = Vec::new();
    let mut images = Vec::new();
    for (bin, &count) in planted.iter().enumerate() {
        let ar = 0.5 * (edges[bin] + edges[bin + 1]);
        for _ in 0..count {
            let id = anns.len() + 1;
            let side = (ar * 1000.0 * 1000.0).sqrt();
            images.push(json!({"id": id, "width": 1000, "height": 1000}));
            anns.push(json!({"id": id, "image_id": id, "category_id": 1, "bbox": [0.0, 0.0, side, side]}));
        }
    }
    assert_eq!(anns.len(), 1000);
    write_json(
        dir.path(),
        "coco.json",
        &json!({"images": images, "annotations": anns, "categories": [{"id": 1, "name": "lesion"}]}),
    );
    let report = json_out(&detcal(dir.path(), &["stats", "--coco", "coco.json"]));
    assert_eq!(report["ar_histogram"], json!(planted));
    assert_eq!(report["n_instances"], json!(1000));
    let small: usize = planted[..3].iter().sum();
    assert_eq!(report["small_fraction"].as_f64().unwrap(), small as f64 / 1000.0);

    let csv = detcal(dir.path(), &["stats", "--coco", "coco.json", "--format", "csv"]);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("bin_edge,count"));
    assert_eq!(text.lines().nth(1), Some("0,130"));
}

#[test]
fn split_writes_disjoint_halves() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<Value> = (1..=30)
        .map(|id| json!({"id": id, "width": 100, "height": 100, "pid": format!("p{}", id % 7)}))
        .collect();
    write_json(
        dir.path(),
        "coco.json",
        &json!({"images": images, "annotations": [], "categories": []}),
    );
    let summary = json_out(&detcal(
        dir.path(),
        &[
            "split",
            "--coco",
            "coco.json",
            "--patient-field",
            "pid",
            "--train-fraction",
            "0.7",
            "--seed",
            "5",
            "--train-out",
            "train.json",
            "--test-out",
            "test.json",
        ],
    ));
    assert_eq!(
        summary["train_images"].as_u64().unwrap() + summary["test_images"].as_u64().unwrap(),
        30
    );
    let load = |name: &str| detcal::dataio::load_coco_with(dir.path().join(name), "pid").unwrap();
    let (train, test) = (load("train.json"), load("test.json"));
    let pids = |d: &detcal::dataio::DatasetIndex| -> std::collections::HashSet<String> {
        d.images.iter().map(|i| i.patient_id.clone().unwrap()).collect()
    };
    assert!(pids(&train).is_disjoint(&pids(&test)));
}

#[test]
fn bda_check_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let inst = detcal::bda::BdaInstance::random(&detcal::bda::BdaDims::new(3, 2, 2, 2, 2), 11).unwrap();
    let mut fmap = Vec::new();
    inst.p_i.write_binary(&mut fmap).unwrap();
    std::fs::write(dir.path().join("p.fmap"), fmap).unwrap();
    std::fs::write(dir.path().join("c5.json"), serde_json::to_vec(&inst.c5).unwrap()).unwrap();
    std::fs::write(
        dir.path().join("params.json"),
        serde_json::to_vec(&inst.params).unwrap(),
    )
    .unwrap();
    let report = json_out(&detcal(
        dir.path(),
        &[
            "bda-check",
            "--p-i",
            "p.fmap",
            "--c5",
            "c5.json",
            "--params",
            "params.json",
            "--tolerance",
            "1e-6",
        ],
    ));
    assert_eq!(report["pass"], json!(true));
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-6);
}

fn error_of(out: &Output) -> (i32, Value) {
    let code = out.status.code().unwrap();
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["exit_code"], json!(code));
    (code, err)
}

#[test]
fn failures_use_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = error_of(&detcal(dir.path(), &["stats", "--coco", "missing.json"]));
    assert_eq!(code, 3);
    assert_eq!(err["error"]["kind"], json!("io"));
    assert!(err["error"]["message"].as_str().unwrap().contains("missing.json"));

    perfect_fixture(dir.path());
    let (code, _) = error_of(&detcal(
        dir.path(),
        &["split", "--coco", "gt.json", "--train-fraction", "1.5"],
    ));
    assert_eq!(code, 4);

    let (code, _) = error_of(&detcal(dir.path(), &["evaluate", "--gt", "gt.json"]));
    assert_eq!(code, 2);

    std::fs::write(dir.path().join("bad.json"), b"{\"anchors\": 3}").unwrap();
    let (code, _) = error_of(&detcal(dir.path(), &["assign", "--scenario", "bad.json"]));
    assert_eq!(code, 3);
}

#[test]
fn help_lists_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["assign", "evaluate", "stats", "split", "synth", "bda-check"] {
        let out = detcal(dir.path(), &[sub, "--help"]);
        assert!(out.status.success());
        assert!(String::from_utf8_lossy(&out.stdout).contains("Exit codes"), "{sub}");
    }
}
