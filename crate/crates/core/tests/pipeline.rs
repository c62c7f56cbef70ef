mod common;

use common::reference_scenario;
use stjpda::experiment::{monte_carlo, oracle_tracker_config, run_one};
use stjpda::metrics::EvalConfig;
use stjpda::parallel::Execution;
use stjpda::pipeline::{track, LifecycleKind};
use stjpda::simulator::generate;

#[test]
fn clutter_free_scenario_is_tracked() {
    let mut sc = reference_scenario(7);
    sc.clutter_rate = 0.0;
    sc.detection_prob = 1.0;
    sc.frames = 20;
    let (res, out, _) = run_one(&sc, None, &EvalConfig::default()).unwrap();
    assert!(
        res.report.accuracy >= 0.95,
        "accuracy {}",
        res.report.accuracy
    );
    let last = out.per_frame().pop().unwrap();
    assert_eq!(last.len(), sc.targets);
    let confirmed = out
        .lifecycle
        .iter()
        .filter(|e| e.kind == LifecycleKind::Confirmed)
        .count();
    assert_eq!(confirmed, sc.targets);
}

#[test]
fn empty_input_gives_no_tracks() {
    let sc = reference_scenario(0);
    let truth = generate(&sc).unwrap();
    let cfg = oracle_tracker_config(&sc, &truth);
    let frames = vec![Vec::new(); 10];
    let out = track(&frames, &sc.index_points, &cfg, |_| {}).unwrap();
    assert!(out.curves.is_empty());
    assert!(out.lifecycle.is_empty());
    let none = track(&[], &sc.index_points, &cfg, |_| {}).unwrap();
    assert_eq!(none.frames, 0);
}

#[test]
fn runs_are_deterministic() {
    let mut sc = reference_scenario(3);
    sc.frames = 15;
    let (a, oa, _) = run_one(&sc, None, &EvalConfig::default()).unwrap();
    let (b, ob, _) = run_one(&sc, None, &EvalConfig::default()).unwrap();
    assert_eq!(oa.curves, ob.curves);
    assert_eq!(a.report.accuracy, b.report.accuracy);
    assert_eq!(a.nees, b.nees);
}

#[test]
fn sequential_and_parallel_batches_agree() {
    let mut sc = reference_scenario(0);
    sc.frames = 10;
    let seeds = [1, 2, 3, 4];
    let eval = EvalConfig::default();
    let (a, _) = monte_carlo(&sc, None, &eval, &seeds, Execution::Sequential).unwrap();
    let (b, _) = monte_carlo(&sc, None, &eval, &seeds, Execution::Parallel).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.seed, y.seed);
        assert_eq!(x.report.accuracy, y.report.accuracy);
        assert_eq!(x.nees, y.nees);
    }
}

#[test]
fn filtered_frames_are_reported_every_step() {
    let mut sc = reference_scenario(5);
    sc.frames = 8;
    let truth = generate(&sc).unwrap();
    let cfg = oracle_tracker_config(&sc, &truth);
    let mut seen = Vec::new();
    track(&truth.detections, &sc.index_points, &cfg, |f| {
        assert_eq!(f.x.len(), f.targets.len() * sc.index_points.len() * 2);
        seen.push(f.frame);
    })
    .unwrap();
    assert_eq!(seen, (0..8).collect::<Vec<_>>());
}
