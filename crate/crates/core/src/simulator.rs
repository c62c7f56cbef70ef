//! Synthetic scenarios: dependent curves evolving over frames, observed with
//! misdetections and uniform Poisson clutter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::association::Detection;
use crate::coupling::CoregionalizationMatrix;
use crate::error::{Error, Result};
use crate::kernels::{discretize, gram, kernel_to_cssm, KernelHyperparams};
use crate::linalg::{kron, psd_factor, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    GpDraw,
    ParametricLanes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManeuverMode {
    Merge,
    Split,
    Cross,
}

/// A maneuver of target `pair[1]` relative to target `pair[0]` over frames
/// `start..end`.
///
/// * `merge`: the second curve blends onto the first over `ramp` frames
///   before `start`, coincides with it on `start..end` and stays merged.
/// * `split`: the mirror image; coincident up to `end`, separating over the
///   following `ramp` frames.
/// * `cross`: the second curve is tilted toward and past the first by
///   `c(u) = 2(u − u₀)/(u₁ − u₀)` times a triangular amplitude peaking at 1
///   in the middle of the range; the curves intersect whenever the
///   amplitude exceeds ½ (mid-grid at the peak).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Maneuver {
    pub start: usize,
    pub end: usize,
    pub pair: [usize; 2],
    pub mode: ManeuverMode,
    #[serde(default)]
    pub ramp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub targets: usize,
    pub index_points: Vec<f64>,
    pub generator: Generator,
    pub spatial_kernel: KernelHyperparams,
    pub temporal_kernel: KernelHyperparams,
    pub b_true: CoregionalizationMatrix,
    /// Constant per-target curve offsets (zeros when empty).
    #[serde(default)]
    pub offsets: Vec<f64>,
    pub detection_prob: f64,
    /// Expected clutter count per frame per unit area of the surveillance box.
    pub clutter_rate: f64,
    pub noise_std: f64,
    pub frames: usize,
    #[serde(default = "one")]
    pub frame_period: f64,
    #[serde(default)]
    pub schedule: Vec<Maneuver>,
    /// Half-width of uniform jitter added to detection index locations.
    #[serde(default)]
    pub u_jitter: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.index_points.len();
        if self.targets == 0 {
            return Err(Error::Config("scenario.targets must be at least 1".into()));
        }
        if n < 2 {
            return Err(Error::Config(
                "scenario needs at least 2 index points".into(),
            ));
        }
        if self.index_points.iter().any(|u| !u.is_finite())
            || self.index_points.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Config(
                "scenario.index_points must be strictly ascending".into(),
            ));
        }
        if self.frames == 0 {
            return Err(Error::Config("scenario.frames must be at least 1".into()));
        }
        if !(self.detection_prob > 0.0 && self.detection_prob <= 1.0) {
            return Err(Error::Config(format!(
                "scenario.detection_prob = {} not in (0, 1]",
                self.detection_prob
            )));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            return Err(Error::Config(format!(
                "scenario.clutter_rate = {} is invalid",
                self.clutter_rate
            )));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "scenario.noise_std = {} must be > 0",
                self.noise_std
            )));
        }
        if !(self.frame_period > 0.0 && self.frame_period.is_finite()) {
            return Err(Error::Config("scenario.frame_period must be > 0".into()));
        }
        if !(self.u_jitter >= 0.0 && self.u_jitter.is_finite()) {
            return Err(Error::Config("scenario.u_jitter must be >= 0".into()));
        }
        if self.b_true.dim() != self.targets {
            return Err(Error::Config(format!(
                "scenario.b_true is {0}x{0} but targets = {1}",
                self.b_true.dim(),
                self.targets
            )));
        }
        if !self.offsets.is_empty() && self.offsets.len() != self.targets {
            return Err(Error::Config(
                "scenario.offsets must have one entry per target".into(),
            ));
        }
        self.spatial_kernel.validate()?;
        self.temporal_kernel.validate()?;
        for m in &self.schedule {
            if m.start >= m.end || m.end > self.frames {
                return Err(Error::Schedule(format!(
                    "range {}..{} is empty or beyond {} frames",
                    m.start, m.end, self.frames
                )));
            }
            if m.pair[0] == m.pair[1] || m.pair.iter().any(|&t| t >= self.targets) {
                return Err(Error::Schedule(format!("invalid target pair {:?}", m.pair)));
            }
        }
        Ok(())
    }

    pub fn offset(&self, d: usize) -> f64 {
        self.offsets.get(d).copied().unwrap_or(0.0)
    }

    pub fn index_range(&self) -> f64 {
        self.index_points[self.index_points.len() - 1] - self.index_points[0]
    }
}

/// Truth and detections for a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `values[frame][target][i] = f_d(u_i)` at that frame.
    pub values: Vec<Vec<Vec<f64>>>,
    /// Time derivatives of the curves, same layout.
    pub rates: Vec<Vec<Vec<f64>>>,
    pub detections: Vec<Vec<Detection>>,
    /// Value extent `[lo, hi]` of the surveillance box.
    pub value_range: (f64, f64),
}

impl GroundTruth {
    /// Area of the index-range × value-range box.
    pub fn volume(&self, config: &ScenarioConfig) -> f64 {
        surveillance_volume(config.index_range(), self.value_range)
    }
}

/// `(u range) × (value range)`.
pub fn surveillance_volume(index_range: f64, value_range: (f64, f64)) -> f64 {
    index_range * (value_range.1 - value_range.0)
}

/// Blend weight of target `pair[1]` toward `pair[0]` at frame `k`, index
/// location `u`.
fn maneuver_weight(m: &Maneuver, k: usize, u: f64, u0: f64, u1: f64) -> f64 {
    let kf = k as f64;
    match m.mode {
        ManeuverMode::Merge => {
            if k >= m.start {
                1.0
            } else if m.ramp > 0 && k + m.ramp >= m.start {
                1.0 - (m.start - k) as f64 / (m.ramp + 1) as f64
            } else {
                0.0
            }
        }
        ManeuverMode::Split => {
            if k < m.end {
                1.0
            } else if m.ramp > 0 && k < m.end + m.ramp {
                1.0 - (k + 1 - m.end) as f64 / (m.ramp + 1) as f64
            } else {
                0.0
            }
        }
        ManeuverMode::Cross => {
            if k < m.start || k >= m.end {
                return 0.0;
            }
            let len = (m.end - m.start) as f64;
            let mid = m.start as f64 + (len - 1.0) / 2.0;
            let amp = if len <= 1.0 {
                1.0
            } else {
                1.0 - (kf - mid).abs() / ((len - 1.0) / 2.0 + 1.0)
            };
            amp * 2.0 * (u - u0) / (u1 - u0)
        }
    }
}

/// Generates truth and detections. Deterministic for a given config.
pub fn generate(config: &ScenarioConfig) -> Result<GroundTruth> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.targets;
    let us = &config.index_points;
    let n = us.len();
    let (u0, u1) = (us[0], us[n - 1]);

    // base curves (without maneuvers) and their time derivatives
    let mut values = vec![vec![vec![0.0; n]; d]; config.frames];
    let mut rates = values.clone();
    match config.generator {
        Generator::GpDraw => {
            let temporal = kernel_to_cssm(&config.temporal_kernel, 2)?;
            let dss = discretize(&temporal, config.frame_period);
            let s = dss.order();
            let ku = gram(&config.spatial_kernel, us, us);
            let spatial = kron(config.b_true.matrix(), &ku);
            let sf = psd_factor(&spatial);
            let l0 = kron(&sf, &psd_factor(&dss.p0));
            let lq = kron(&sf, &psd_factor(&dss.q));
            let dim = d * n * s;
            let mut x = &l0 * normal_vec(&mut rng, dim);
            for k in 0..config.frames {
                if k > 0 {
                    let mut xn = Vector::zeros(dim);
                    for b in 0..d * n {
                        let seg = &dss.f * x.rows(b * s, s);
                        xn.rows_mut(b * s, s).copy_from(&seg);
                    }
                    x = xn + &lq * normal_vec(&mut rng, dim);
                }
                for t in 0..d {
                    for i in 0..n {
                        let base = (t * n + i) * s;
                        values[k][t][i] = config.offset(t) + x[base];
                        rates[k][t][i] = if s > 1 { x[base + 1] } else { 0.0 };
                    }
                }
            }
        }
        Generator::ParametricLanes => {
            let amp = config.spatial_kernel.sigma2.sqrt();
            let span = (u1 - u0).max(f64::MIN_POSITIVE);
            let coeffs: Vec<(f64, f64)> = (0..d)
                .map(|_| {
                    let c1: f64 = rng.sample(StandardNormal);
                    let c2: f64 = rng.sample(StandardNormal);
                    (0.2 * amp * c1 / span, 0.2 * amp * c2 / (span * span))
                })
                .collect();
            let period = 2.0 * std::f64::consts::PI * config.temporal_kernel.ell * 2.0;
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            for k in 0..config.frames {
                let t = k as f64 * config.frame_period;
                let drift = 0.5 * amp * (t * std::f64::consts::TAU / period + phase).sin();
                let drift_rate = 0.5 * amp * std::f64::consts::TAU / period
                    * (t * std::f64::consts::TAU / period + phase).cos();
                for (tgt, (c1, c2)) in coeffs.iter().enumerate() {
                    for (i, u) in us.iter().enumerate() {
                        let du = u - u0;
                        values[k][tgt][i] = config.offset(tgt) + c1 * du + c2 * du * du + drift;
                        rates[k][tgt][i] = drift_rate;
                    }
                }
            }
        }
    }

    for m in &config.schedule {
        let (a, b) = (m.pair[0], m.pair[1]);
        for k in 0..config.frames {
            for (i, &u) in us.iter().enumerate() {
                let w = maneuver_weight(m, k, u, u0, u1);
                if w != 0.0 {
                    values[k][b][i] += w * (values[k][a][i] - values[k][b][i]);
                    rates[k][b][i] += w * (rates[k][a][i] - rates[k][b][i]);
                }
            }
        }
    }

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.iter().flatten().flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let pad = 3.0 * config.noise_std;
    let value_range = (lo - pad, hi + pad);
    let area = surveillance_volume(config.index_range(), value_range);
    let clutter_mean = config.clutter_rate * area;
    let poisson = if clutter_mean > 0.0 {
        Some(Poisson::new(clutter_mean).map_err(|e| Error::Config(format!("clutter rate: {e}")))?)
    } else {
        None
    };

    let mut detections = Vec::with_capacity(config.frames);
    for (k, frame) in values.iter().enumerate() {
        let mut dets = Vec::new();
        for (t, curve) in frame.iter().enumerate() {
            for (i, &f) in curve.iter().enumerate() {
                if rng.random::<f64>() >= config.detection_prob {
                    continue;
                }
                let noise: f64 = rng.sample(StandardNormal);
                let mut u = us[i];
                if config.u_jitter > 0.0 {
                    u += rng.random_range(-config.u_jitter..=config.u_jitter);
                }
                dets.push(Detection {
                    frame: k,
                    u,
                    z: f + config.noise_std * noise,
                    origin: Some(t),
                });
            }
        }
        if let Some(p) = &poisson {
            let count = p.sample(&mut rng) as usize;
            for _ in 0..count {
                let u = rng.random_range(u0..=u1);
                let z = rng.random_range(value_range.0..=value_range.1);
                dets.push(Detection {
                    frame: k,
                    u,
                    z,
                    origin: None,
                });
            }
        }
        detections.push(dets);
    }

    Ok(GroundTruth {
        values,
        rates,
        detections,
        value_range,
    })
}

/// Clutter rate (per unit area) giving an expected `count` clutter points
/// per frame for this scenario's surveillance box. The truth does not depend
/// on the clutter rate, so the box is known before generation.
pub fn clutter_rate_for_count(config: &ScenarioConfig, count: f64) -> Result<f64> {
    let mut quiet = config.clone();
    quiet.clutter_rate = 0.0;
    let area = generate(&quiet)?.volume(config);
    Ok(if area > 0.0 { count / area } else { 0.0 })
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Covariance of the frame-0 curve values under the coupled prior, scaled
/// by the temporal signal variance.
pub fn prior_value_covariance(config: &ScenarioConfig) -> Mat {
    let ku = gram(
        &config.spatial_kernel,
        &config.index_points,
        &config.index_points,
    );
    kron(config.b_true.matrix(), &ku) * config.temporal_kernel.sigma2
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base(d: usize) -> ScenarioConfig {
        ScenarioConfig {
            targets: d,
            index_points: (0..8).map(|i| i as f64).collect(),
            generator: Generator::GpDraw,
            spatial_kernel: KernelHyperparams::rbf(1.0, 2.0).unwrap(),
            temporal_kernel: KernelHyperparams::matern32(1.0, 10.0).unwrap(),
            b_true: CoregionalizationMatrix::identity(d),
            offsets: (0..d).map(|t| 4.0 * t as f64).collect(),
            detection_prob: 1.0,
            clutter_rate: 0.0,
            noise_std: 0.1,
            frames: 5,
            frame_period: 1.0,
            schedule: Vec::new(),
            u_jitter: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn full_detection_without_clutter_counts() {
        let cfg = base(3);
        let gt = generate(&cfg).unwrap();
        for f in &gt.detections {
            assert_eq!(f.len(), 3 * 8);
            assert!(f.iter().all(|d| d.origin.is_some()));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let mut cfg = base(2);
        cfg.clutter_rate = 0.5;
        cfg.detection_prob = 0.8;
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn detections_stay_near_their_curves() {
        let mut cfg = base(2);
        cfg.frames = 20;
        let gt = generate(&cfg).unwrap();
        for (k, frame) in gt.detections.iter().enumerate() {
            for d in frame {
                let t = d.origin.unwrap();
                let i = cfg.index_points.iter().position(|&u| u == d.u).unwrap();
                assert!((d.z - gt.values[k][t][i]).abs() < 5.0 * cfg.noise_std);
            }
        }
    }

    #[test]
    fn volume_of_boxes() {
        assert_eq!(surveillance_volume(1.0, (0.0, 1.0)), 1.0);
        assert_eq!(surveillance_volume(10.0, (-5.0, 5.0)), 100.0);
    }

    #[test]
    fn merge_curves_coincide_in_range() {
        let mut cfg = base(2);
        cfg.frames = 12;
        cfg.schedule = vec![Maneuver {
            start: 4,
            end: 8,
            pair: [0, 1],
            mode: ManeuverMode::Merge,
            ramp: 3,
        }];
        let gt = generate(&cfg).unwrap();
        for k in 4..8 {
            for i in 0..8 {
                assert!((gt.values[k][0][i] - gt.values[k][1][i]).abs() < 1e-12);
            }
        }
        assert!((gt.values[0][0][0] - gt.values[0][1][0]).abs() > 1e-3);
    }

    #[test]
    fn cross_swaps_sides_along_the_grid() {
        let mut cfg = base(2);
        cfg.frames = 9;
        cfg.schedule = vec![Maneuver {
            start: 0,
            end: 9,
            pair: [0, 1],
            mode: ManeuverMode::Cross,
            ramp: 0,
        }];
        let gt = generate(&cfg).unwrap();
        let k = 4;
        let before = gt.values[k][1][0] - gt.values[k][0][0];
        let after = gt.values[k][1][7] - gt.values[k][0][7];
        assert!(before * after < 0.0);
    }

    #[test]
    fn invalid_schedules_rejected() {
        let mut cfg = base(2);
        cfg.schedule = vec![Maneuver {
            start: 3,
            end: 3,
            pair: [0, 1],
            mode: ManeuverMode::Split,
            ramp: 0,
        }];
        assert!(matches!(generate(&cfg), Err(Error::Schedule(_))));
        cfg.schedule[0].end = 4;
        cfg.schedule[0].pair = [1, 1];
        assert!(matches!(generate(&cfg), Err(Error::Schedule(_))));
    }
}
