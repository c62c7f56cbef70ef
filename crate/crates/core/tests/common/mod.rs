//! Shared fixtures for the integration and acceptance tests.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stjpda::coupling::CoregionalizationMatrix;
use stjpda::kernels::KernelHyperparams;
use stjpda::linalg::{Mat, Vector};
use stjpda::pipeline::TrackerConfig;
use stjpda::simulator::{
    clutter_rate_for_count, Generator, Maneuver, ManeuverMode, ScenarioConfig,
};

/// Three dependent curves (adjacent correlation 0.8) on 20 index points,
/// Pd 0.9, about ten clutter points per frame, 50 frames.
pub fn reference_scenario(seed: u64) -> ScenarioConfig {
    let b = Mat::from_row_slice(3, 3, &[1.0, 0.8, 0.64, 0.8, 1.0, 0.8, 0.64, 0.8, 1.0]);
    let mut sc = ScenarioConfig {
        targets: 3,
        index_points: (0..20).map(|i| i as f64 * 10.0 / 19.0).collect(),
        generator: Generator::GpDraw,
        spatial_kernel: KernelHyperparams::matern32(1.0, 2.0).unwrap(),
        temporal_kernel: KernelHyperparams::matern32(1.0, 20.0).unwrap(),
        b_true: CoregionalizationMatrix::new(b).unwrap(),
        offsets: vec![-4.0, 0.0, 4.0],
        detection_prob: 0.9,
        clutter_rate: 0.0,
        noise_std: 0.1,
        frames: 50,
        frame_period: 1.0,
        schedule: Vec::new(),
        u_jitter: 0.0,
        seed,
    };
    sc.clutter_rate = clutter_rate_for_count(&sc, 10.0).unwrap();
    sc
}

/// The reference scenario with curves 0 and 1 crossing over frames 5..45.
pub fn crossing_scenario(seed: u64) -> ScenarioConfig {
    let mut sc = reference_scenario(seed);
    sc.schedule.push(Maneuver {
        start: 5,
        end: 45,
        pair: [0, 1],
        mode: ManeuverMode::Cross,
        ramp: 0,
    });
    sc.clutter_rate = clutter_rate_for_count(&sc, 10.0).unwrap();
    sc
}

/// Tracker for the crossing scenario: the generating model with a more
/// agile temporal prior, since the maneuver is not part of that model.
pub fn maneuver_tracker(sc: &ScenarioConfig) -> TrackerConfig {
    TrackerConfig {
        association: Default::default(),
        spatial_kernel: sc.spatial_kernel,
        rbf_order: 2,
        temporal_kernel: KernelHyperparams::matern32(4.0, 10.0).unwrap(),
        b: sc.b_true.clone(),
        frame_period: sc.frame_period,
        smoother_lag: 2,
        lifecycle: Default::default(),
    }
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
