//! Simulate → track → evaluate, for single runs and Monte Carlo batches.

use serde::{Deserialize, Serialize};

use crate::association::AssociationConfig;
use crate::error::Result;
use crate::linalg::Vector;
use crate::metrics::{chi2_interval, evaluate, match_lanes, nees_sample, EvalConfig, EvalReport};
use crate::parallel::{self, Execution};
use crate::pipeline::{track, CurveEstimate, FilteredFrame, TrackOutput, TrackerConfig};
use crate::simulator::{generate, GroundTruth, ManeuverMode, ScenarioConfig};

/// Association settings implied by a scenario: the value extent of the
/// surveillance box as `V`, clutter spread evenly over the index steps.
pub fn association_for_scenario(
    base: &AssociationConfig,
    scenario: &ScenarioConfig,
    truth: &GroundTruth,
) -> AssociationConfig {
    let extent = truth.value_range.1 - truth.value_range.0;
    let n = scenario.index_points.len() as f64;
    AssociationConfig {
        detection_prob: scenario.detection_prob,
        meas_noise: scenario.noise_std * scenario.noise_std,
        volume: extent,
        clutter_density: scenario.clutter_rate * scenario.index_range() / n,
        ..*base
    }
}

/// Tracker settings matching the generating model of a scenario.
pub fn oracle_tracker_config(scenario: &ScenarioConfig, truth: &GroundTruth) -> TrackerConfig {
    TrackerConfig {
        association: association_for_scenario(&AssociationConfig::default(), scenario, truth),
        spatial_kernel: scenario.spatial_kernel,
        rbf_order: 2,
        temporal_kernel: scenario.temporal_kernel,
        b: scenario.b_true.clone(),
        frame_period: scenario.frame_period,
        smoother_lag: 2,
        lifecycle: Default::default(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub report: EvalReport,
    /// Per-frame NEES of the filtered joint state (frames where exactly the
    /// true number of confirmed targets is matched one-to-one).
    pub nees: Vec<f64>,
    /// Per crossing maneuver: did both tracks survive it.
    pub crossings_survived: Vec<bool>,
}

/// Matched `(curve, truth)` pairs in one frame.
fn frame_matches(
    curves: &[&CurveEstimate],
    truth: &[Vec<f64>],
    threshold: f64,
    mf: f64,
) -> Vec<(u64, usize)> {
    let preds: Vec<Vec<f64>> = curves.iter().map(|c| c.values.clone()).collect();
    match_lanes(&preds, truth, threshold, mf)
        .matched
        .into_iter()
        .map(|(i, j)| (curves[i].target, j))
        .collect()
}

/// Runs one scenario through a tracker configuration (or the oracle one).
pub fn run_one(
    scenario: &ScenarioConfig,
    tracker: Option<&TrackerConfig>,
    eval: &EvalConfig,
) -> Result<(RunResult, TrackOutput, GroundTruth)> {
    let truth = generate(scenario)?;
    let cfg = match tracker {
        Some(t) => TrackerConfig {
            association: association_for_scenario(&t.association, scenario, &truth),
            ..t.clone()
        },
        None => oracle_tracker_config(scenario, &truth),
    };
    let threshold = eval.point_threshold.unwrap_or(3.0 * scenario.noise_std);
    let n = scenario.index_points.len();
    let d = scenario.targets;
    let mut nees = Vec::new();
    let mut nees_err = None;
    let on_filtered = |f: &FilteredFrame| {
        if f.frame < eval.start_frame || f.targets.len() != d || nees_err.is_some() {
            return;
        }
        let est: Vec<Vec<f64>> = (0..d)
            .map(|t| {
                (0..n)
                    .map(|i| f.targets[t].offset + f.x[f.offset(t, i, 0, n)])
                    .collect()
            })
            .collect();
        let m = match_lanes(&est, &truth.values[f.frame], threshold, eval.match_fraction);
        if m.matched.len() != d {
            return;
        }
        let mut e = Vector::zeros(f.x.len());
        for &(t, j) in &m.matched {
            for i in 0..n {
                let a = f.offset(t, i, 0, n);
                e[a] = f.targets[t].offset + f.x[a] - truth.values[f.frame][j][i];
                e[a + 1] = f.x[a + 1] - truth.rates[f.frame][j][i];
            }
        }
        match nees_sample(&e, &f.p) {
            Ok(v) => nees.push(v),
            Err(err) => nees_err = Some(err),
        }
    };
    let out = track(&truth.detections, &scenario.index_points, &cfg, on_filtered)?;
    if let Some(err) = nees_err {
        return Err(err);
    }
    let per_frame = out.per_frame();
    let preds: Vec<Vec<Vec<f64>>> = per_frame
        .iter()
        .map(|f| f.iter().map(|c| c.values.clone()).collect())
        .collect();
    let mut report = evaluate(&preds, &truth.values, threshold, eval)?;
    report.runtime_seconds = out.runtime_seconds;
    report.frames_per_second = if out.runtime_seconds > 0.0 {
        out.frames as f64 / out.runtime_seconds
    } else {
        0.0
    };
    if !nees.is_empty() {
        report.mean_nees = Some(nees.iter().sum::<f64>() / nees.len() as f64);
        report.nees_dim = Some(d * n * 2);
    }

    let crossings_survived = scenario
        .schedule
        .iter()
        .filter(|m| m.mode == ManeuverMode::Cross)
        .map(|m| {
            let before = m.start.saturating_sub(1);
            let after = m.end.min(scenario.frames - 1);
            let ids = |k: usize| {
                let mut v: Vec<u64> = frame_matches(
                    &per_frame[k],
                    &truth.values[k],
                    threshold,
                    eval.match_fraction,
                )
                .into_iter()
                .filter(|(_, j)| m.pair.contains(j))
                .map(|(id, _)| id)
                .collect();
                v.sort_unstable();
                v
            };
            let a = ids(before);
            a.len() == 2 && a == ids(after)
        })
        .collect();

    Ok((
        RunResult {
            seed: scenario.seed,
            report,
            nees,
            crossings_survived,
        },
        out,
        truth,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub mean_accuracy: f64,
    pub mean_fp_rate: f64,
    pub mean_fn_rate: f64,
    /// Mean over all NEES samples of all runs.
    pub mean_nees: Option<f64>,
    pub nees_dim: usize,
    /// 95% two-sided chi-square interval for `nees_dim`.
    pub nees_band: (f64, f64),
    /// Fraction of runs in which every crossing was survived (`None` without
    /// crossings).
    pub crossing_survival: Option<f64>,
    pub mean_frames_per_second: f64,
    pub wall_seconds: f64,
}

/// Runs `seeds.len()` independent copies of `scenario`, one per seed.
pub fn monte_carlo(
    scenario: &ScenarioConfig,
    tracker: Option<&TrackerConfig>,
    eval: &EvalConfig,
    seeds: &[u64],
    exec: Execution,
) -> Result<(Vec<RunResult>, BatchSummary)> {
    let start = std::time::Instant::now();
    let results: Vec<Result<RunResult>> = parallel::map(exec, seeds, |&seed| {
        let sc = ScenarioConfig {
            seed,
            ..scenario.clone()
        };
        run_one(&sc, tracker, eval).map(|r| r.0)
    });
    let results: Vec<RunResult> = results.into_iter().collect::<Result<_>>()?;
    let k = results.len().max(1) as f64;
    let mean = |f: &dyn Fn(&RunResult) -> f64| results.iter().map(f).sum::<f64>() / k;
    let samples: Vec<f64> = results
        .iter()
        .flat_map(|r| r.nees.iter().copied())
        .collect();
    let dim = scenario.targets * scenario.index_points.len() * 2;
    let has_cross = scenario
        .schedule
        .iter()
        .any(|m| m.mode == ManeuverMode::Cross);
    let summary = BatchSummary {
        runs: results.len(),
        mean_accuracy: mean(&|r| r.report.accuracy),
        mean_fp_rate: mean(&|r| r.report.fp_rate),
        mean_fn_rate: mean(&|r| r.report.fn_rate),
        mean_nees: (!samples.is_empty())
            .then(|| samples.iter().sum::<f64>() / samples.len() as f64),
        nees_dim: dim,
        nees_band: chi2_interval(dim, 0.95),
        crossing_survival: has_cross
            .then(|| mean(&|r| f64::from(u8::from(r.crossings_survived.iter().all(|&b| b))))),
        mean_frames_per_second: mean(&|r| r.report.frames_per_second),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((results, summary))
}
