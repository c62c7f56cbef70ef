use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stjpda"));
    c.env_remove("STJPDA_THREADS");
    c
}

fn small_config() -> Value {
    json!({
        "scenario": {
            "targets": 2,
            "index_points": (0..10).map(|i| i as f64).collect::<Vec<_>>(),
            "generator": "gp_draw",
            "spatial_kernel": { "family": "matern32", "sigma2": 1.0, "ell": 3.0 },
            "temporal_kernel": { "family": "matern32", "sigma2": 1.0, "ell": 20.0 },
            "b_true": [[1.0, 0.7], [0.7, 1.0]],
            "offsets": [-3.0, 3.0],
            "detection_prob": 0.95,
            "clutter_rate": 0.02,
            "noise_std": 0.1,
            "frames": 8,
            "seed": 5
        },
        "training": { "family": "matern32", "init": { "sigma2": 0.5, "ell": 1.0 } }
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn simulate_train_track_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, &small_config());
    let (c, o) = (cfg.to_str().unwrap(), d.to_str().unwrap());

    ok(&run(&["simulate", "--config", c, "--out", o]));
    assert_eq!(header(&d.join("detections.csv")), "frame,u,z,origin");
    assert_eq!(header(&d.join("truth.csv")), "frame,target,u,value");
    assert_eq!(header(&d.join("training.csv")), "target,u,z");
    assert!(d.join("scenario.json").exists());

    let training = d.join("training.csv");
    ok(&run(&[
        "train",
        "--config",
        c,
        "--out",
        o,
        "--data",
        training.to_str().unwrap(),
    ]));
    let model: Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["format_version"], 1);
    assert!(model["sigma2"].as_f64().unwrap() > 0.0);

    // track with the trained spatial kernel and its coupling
    let mut with_model = small_config();
    with_model["tracker"] = json!({
        "spatial_kernel": "trained:model.json",
        "temporal_kernel": { "family": "matern32", "sigma2": 1.0, "ell": 20.0 }
    });
    let cfg2 = write_config(d, &with_model);
    let dets = d.join("detections.csv");
    ok(&run(&[
        "track",
        "--config",
        cfg2.to_str().unwrap(),
        "--out",
        o,
        "--detections",
        dets.to_str().unwrap(),
        "--emit-plot-data",
    ]));
    assert_eq!(
        header(&d.join("tracks.csv")),
        "frame,target,u,value,variance"
    );
    assert_eq!(header(&d.join("lifecycle.csv")), "frame,target,event");
    assert!(d.join("filtered.csv").exists());

    let (tracks, truth) = (d.join("tracks.csv"), d.join("truth.csv"));
    ok(&run(&[
        "eval",
        "--config",
        c,
        "--out",
        o,
        "--tracks",
        tracks.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
    ]));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn model_file_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, &small_config());
    let c = cfg.to_str().unwrap();
    ok(&run(&[
        "simulate",
        "--config",
        c,
        "--out",
        d.to_str().unwrap(),
    ]));
    let data = d.join("training.csv");
    let mut models = Vec::new();
    for sub in ["a", "b"] {
        let out = d.join(sub);
        ok(&run(&[
            "train",
            "--config",
            c,
            "--out",
            out.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
        ]));
        models.push(std::fs::read(out.join("model.json")).unwrap());
    }
    assert_eq!(models[0], models[1]);
}

#[test]
fn pipeline_is_deterministic_and_batches() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, &small_config());
    let c = cfg.to_str().unwrap();
    let (a, b) = (d.join("a"), d.join("b"));
    ok(&run(&[
        "pipeline",
        "--config",
        c,
        "--out",
        a.to_str().unwrap(),
        "--seed",
        "9",
    ]));
    ok(&run(&[
        "pipeline",
        "--config",
        c,
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "9",
    ]));
    assert_eq!(
        std::fs::read(a.join("tracks.csv")).unwrap(),
        std::fs::read(b.join("tracks.csv")).unwrap()
    );

    let batch = d.join("batch");
    let o = bin()
        .args([
            "pipeline",
            "--config",
            c,
            "--out",
            batch.to_str().unwrap(),
            "--runs",
            "3",
        ])
        .env("STJPDA_THREADS", "2")
        .output()
        .unwrap();
    ok(&o);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(batch.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["runs"], 3);
    assert_eq!(report["runs"].as_array().unwrap().len(), 3);
    assert_eq!(std::fs::read_dir(batch.join("runs")).unwrap().count(), 3);
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = d.to_str().unwrap();

    let mut bad = small_config();
    bad["scenario"]["colour"] = json!("blue");
    let cfg = write_config(d, &bad);
    assert_eq!(
        run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", o])
            .status
            .code(),
        Some(2)
    );

    assert_eq!(
        run(&["simulate", "--config", "/nonexistent/run.json", "--out", o])
            .status
            .code(),
        Some(2)
    );

    let cfg = write_config(d, &small_config());
    let threads = bin()
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", o])
        .env("STJPDA_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));

    let mut reference = small_config();
    reference["tracker"] = json!({
        "spatial_kernel": "model.json",
        "temporal_kernel": { "family": "matern32", "sigma2": 1.0, "ell": 20.0 }
    });
    let cfg = write_config(d, &reference);
    assert_eq!(
        run(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", o])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn event_cap_overflow_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg = small_config();
    cfg["tracker"] = json!({
        "association": { "event_cap": 1 },
        "spatial_kernel": { "family": "matern32", "sigma2": 1.0, "ell": 3.0 },
        "temporal_kernel": { "family": "matern32", "sigma2": 1.0, "ell": 20.0 }
    });
    let p = write_config(d, &cfg);
    let o = run(&[
        "pipeline",
        "--config",
        p.to_str().unwrap(),
        "--out",
        d.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("frame "));
}

#[test]
fn simulate_is_repeatable_and_labels_clutter() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, &small_config());
    let c = cfg.to_str().unwrap();
    let (a, b) = (d.join("a"), d.join("b"));
    ok(&run(&[
        "simulate",
        "--config",
        c,
        "--out",
        a.to_str().unwrap(),
    ]));
    ok(&run(&[
        "simulate",
        "--config",
        c,
        "--out",
        b.to_str().unwrap(),
    ]));
    for f in [
        "detections.csv",
        "truth.csv",
        "training.csv",
        "scenario.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let dets = std::fs::read_to_string(a.join("detections.csv")).unwrap();
    assert!(dets.lines().any(|l| l.ends_with(",clutter")));
}

#[test]
fn perfect_sensor_writes_every_point() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg = small_config();
    cfg["scenario"]["detection_prob"] = json!(1.0);
    cfg["scenario"]["clutter_rate"] = json!(0.0);
    let p = write_config(d, &cfg);
    ok(&run(&[
        "simulate",
        "--config",
        p.to_str().unwrap(),
        "--out",
        d.to_str().unwrap(),
    ]));
    let dets = std::fs::read_to_string(d.join("detections.csv")).unwrap();
    for k in 0..8 {
        let n = dets
            .lines()
            .skip(1)
            .filter(|l| l.split(',').next() == Some(&k.to_string()))
            .count();
        assert_eq!(n, 2 * 10);
    }
}

#[test]
fn empty_detections_give_no_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, &small_config());
    let dets = d.join("empty.csv");
    std::fs::write(&dets, "frame,u,z,origin\n").unwrap();
    ok(&run(&[
        "track",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        d.to_str().unwrap(),
        "--detections",
        dets.to_str().unwrap(),
    ]));
    let tracks = std::fs::read_to_string(d.join("tracks.csv")).unwrap();
    assert_eq!(tracks.lines().count(), 1);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("track_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["confirmed_targets"], 0);
    assert_eq!(report["frames"], 8);
}

#[test]
fn missing_training_data_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, &small_config());
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        d.to_str().unwrap(),
        "--data",
        "/nonexistent/training.csv",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/training.csv"));
}

#[test]
fn reference_config_parses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/reference.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(cfg).unwrap()).unwrap();
    v["scenario"]["frames"] = json!(3);
    let p = write_config(dir.path(), &v);
    ok(&run(&[
        "simulate",
        "--config",
        p.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]));
}
