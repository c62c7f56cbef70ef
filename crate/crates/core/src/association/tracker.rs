use serde::{Deserialize, Serialize};

use super::events::{
    enumerate_events, event_posteriors, gate, log_event_likelihood, log_event_prior, marginals,
};
use super::update::coupled_update;
use super::{AssociationConfig, Detection};
use crate::coupling::{propagate_blockwise, CoregionalizationMatrix};
use crate::error::{Error, Result};
use crate::kernels::{discretize, ContinuousStateSpace, DiscreteStateSpace};
use crate::linalg::{kron, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Terminated,
}

/// What a track saw at one index step.
#[derive(Debug, Clone, PartialEq)]
pub struct AssocRecord {
    pub index: usize,
    /// Gated measurement values with their association probabilities.
    pub measurements: Vec<(f64, f64)>,
    /// Probability that the track was detected at this step.
    pub detect_prob: f64,
}

/// A spatial track. The state is the deviation of the curve (and its
/// derivatives) from `offset + baseline[k]`, since the spatial prior is
/// zero-mean. Spawned tracks have no baseline; seeded tracks use the
/// temporal prediction, so they estimate its residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    /// Temporal target this track was seeded from, if any.
    pub seed: Option<u64>,
    pub offset: f64,
    /// Per-index-point mean added to `offset` (empty for none).
    pub baseline: Vec<f64>,
    /// Variance scale of the spatial process driving this track.
    pub scale: f64,
    pub xbar: Vector,
    pub pbar: Mat,
    pub assoc_history: Vec<AssocRecord>,
    pub status: TrackStatus,
    pub existence_prob: f64,
    pub consecutive_misses: usize,
    pub hits: usize,
    /// Index step at which the track was created.
    pub born_at: usize,
}

impl Track {
    /// Prior mean of the curve at index step `k`.
    pub fn mean_at(&self, k: usize) -> f64 {
        self.offset + self.baseline.get(k).copied().unwrap_or(0.0)
    }

    /// Curve value estimate at index step `k`, given the state there.
    pub fn value(&self, k: usize, h: &Mat) -> f64 {
        self.mean_at(k) + (h * &self.xbar)[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoMeasurement {
    pub track: u64,
    pub index: usize,
    pub u: f64,
    pub value: f64,
    pub variance: f64,
    pub likelihood: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoMeasurementSet {
    pub items: Vec<PseudoMeasurement>,
}

impl PseudoMeasurementSet {
    pub fn for_track(&self, id: u64) -> impl Iterator<Item = &PseudoMeasurement> {
        self.items.iter().filter(move |p| p.track == id)
    }
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    /// Every track that existed during the sweep, by id.
    pub tracks: Vec<Track>,
    pub pseudo: PseudoMeasurementSet,
}

/// Initial joint state for tracks continued from the temporal filter, at the
/// first index point.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    pub targets: Vec<u64>,
    pub offsets: Vec<f64>,
    /// Per target, the predicted curve at every index point relative to its
    /// offset (empty when the state is the full deviation).
    pub baselines: Vec<Vec<f64>>,
    /// Per target, the variance scale of its spatial process (empty for 1).
    pub scales: Vec<f64>,
    pub mean: Vector,
    pub cov: Mat,
}

/// Spatial state-space model discretized on an index grid.
#[derive(Debug, Clone)]
pub struct SpatialModel {
    cssm: ContinuousStateSpace,
    grid: Vec<f64>,
    steps: Vec<DiscreteStateSpace>,
}

impl SpatialModel {
    pub fn new(cssm: ContinuousStateSpace, grid: Vec<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Config("index grid is empty".into()));
        }
        if grid.iter().any(|u| !u.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "index points must be finite and strictly ascending".into(),
            ));
        }
        let steps = grid
            .windows(2)
            .map(|w| discretize(&cssm, w[1] - w[0]))
            .collect();
        Ok(Self { cssm, grid, steps })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.cssm.order()
    }

    pub fn cssm(&self) -> &ContinuousStateSpace {
        &self.cssm
    }

    /// Transition from index point `k` to `k + 1`.
    pub fn step(&self, k: usize) -> &DiscreteStateSpace {
        &self.steps[k]
    }
}

/// Assigns detections to their nearest index point (ties go to the lower
/// point). Each bin's values are sorted ascending.
pub fn bin_detections(detections: &[Detection], grid: &[f64]) -> Vec<Vec<f64>> {
    let mut bins = vec![Vec::new(); grid.len()];
    if grid.is_empty() {
        return bins;
    }
    for d in detections {
        let k = grid.partition_point(|&g| g < d.u);
        let idx = if k == 0 {
            0
        } else if k == grid.len() {
            grid.len() - 1
        } else if d.u - grid[k - 1] <= grid[k] - d.u {
            k - 1
        } else {
            k
        };
        bins[idx].push(d.z);
    }
    for b in &mut bins {
        b.sort_by(f64::total_cmp);
    }
    bins
}

/// Coupled JPDA sweep along the index axis of one frame.
pub struct SpatialTracker<'a> {
    model: &'a SpatialModel,
    b: &'a CoregionalizationMatrix,
    cfg: AssociationConfig,
}

struct Sweep {
    live: Vec<Track>,
    x: Vector,
    p: Mat,
    done: Vec<Track>,
    pseudo: Vec<PseudoMeasurement>,
}

impl Sweep {
    fn sync(&mut self, s: usize) {
        for (t, tr) in self.live.iter_mut().enumerate() {
            tr.xbar = self.x.rows(t * s, s).into_owned();
            tr.pbar = self.p.view((t * s, t * s), (s, s)).into_owned();
        }
    }

    fn keep(&mut self, keep: &[usize], s: usize) {
        let idx: Vec<usize> = keep.iter().flat_map(|&t| (t * s)..(t * s + s)).collect();
        self.x = Vector::from_iterator(idx.len(), idx.iter().map(|&i| self.x[i]));
        self.p = Mat::from_fn(idx.len(), idx.len(), |i, j| self.p[(idx[i], idx[j])]);
    }

    fn push(&mut self, track: Track, mean: &Vector, cov: &Mat) {
        let old = self.x.len();
        let s = mean.len();
        let mut x = Vector::zeros(old + s);
        x.rows_mut(0, old).copy_from(&self.x);
        x.rows_mut(old, s).copy_from(mean);
        let mut p = Mat::zeros(old + s, old + s);
        p.view_mut((0, 0), (old, old)).copy_from(&self.p);
        p.view_mut((old, old), (s, s)).copy_from(cov);
        self.x = x;
        self.p = p;
        self.live.push(track);
    }
}

impl<'a> SpatialTracker<'a> {
    pub fn new(
        model: &'a SpatialModel,
        b: &'a CoregionalizationMatrix,
        cfg: &'a AssociationConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        // keep every event feasible: a certain detection or a clutter-free
        // scene would make an empty gate (or a surplus measurement) impossible
        let cfg = AssociationConfig {
            detection_prob: cfg.detection_prob.min(1.0 - 1e-9),
            clutter_density: cfg.clutter_density.max(1e-12),
            ..*cfg
        };
        Ok(Self { model, b, cfg })
    }

    /// Runs one sweep. `steps[k]` holds the measurement values binned to
    /// index point `k`; `next_id` supplies fresh track ids.
    pub fn run_frame(
        &self,
        steps: &[Vec<f64>],
        seeds: Option<&SeedSet>,
        next_id: &mut u64,
    ) -> Result<FrameResult> {
        let grid = self.model.grid();
        if steps.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} detection bins for {} index points",
                steps.len(),
                grid.len()
            )));
        }
        let s = self.model.order();
        let mut sw = Sweep {
            live: Vec::new(),
            x: Vector::zeros(0),
            p: Mat::zeros(0, 0),
            done: Vec::new(),
            pseudo: Vec::new(),
        };
        if let Some(seed) = seeds {
            let n = seed.targets.len();
            if seed.offsets.len() != n
                || seed.mean.len() != n * s
                || seed.cov.nrows() != n * s
                || !(seed.baselines.is_empty() || seed.baselines.len() == n)
                || seed.baselines.iter().any(|b| b.len() != grid.len())
                || !(seed.scales.is_empty() || seed.scales.len() == n)
                || seed.scales.iter().any(|&c| !(c > 0.0 && c.is_finite()))
            {
                return Err(Error::DimensionMismatch(
                    "seed set does not match the spatial model".into(),
                ));
            }
            for (t, (&target, &offset)) in seed.targets.iter().zip(&seed.offsets).enumerate() {
                sw.live.push(Track {
                    id: take_id(next_id),
                    seed: Some(target),
                    offset,
                    baseline: seed.baselines.get(t).cloned().unwrap_or_default(),
                    scale: seed.scales.get(t).copied().unwrap_or(1.0),
                    xbar: seed.mean.rows(t * s, s).into_owned(),
                    pbar: seed.cov.view((t * s, t * s), (s, s)).into_owned(),
                    assoc_history: Vec::new(),
                    status: self.status_for(self.cfg.seed_existence, TrackStatus::Tentative),
                    existence_prob: self.cfg.seed_existence,
                    consecutive_misses: 0,
                    hits: 0,
                    born_at: 0,
                });
            }
            sw.x = seed.mean.clone();
            sw.p = seed.cov.clone();
        }
        for (k, zs) in steps.iter().enumerate() {
            if k > 0 && !sw.live.is_empty() {
                self.predict(&mut sw, k - 1);
            }
            self.step(&mut sw, k, zs, next_id)?;
        }
        sw.sync(s);
        let mut tracks = sw.done;
        tracks.extend(sw.live);
        tracks.sort_by_key(|t| t.id);
        Ok(FrameResult {
            tracks,
            pseudo: PseudoMeasurementSet { items: sw.pseudo },
        })
    }

    fn predict(&self, sw: &mut Sweep, k: usize) {
        let dss = self.model.step(k);
        let s = dss.order();
        let n = sw.live.len();
        let mut x = Vector::zeros(n * s);
        for t in 0..n {
            let seg = &dss.f * sw.x.rows(t * s, s);
            x.rows_mut(t * s, s).copy_from(&seg);
        }
        let bn = self.b.resized(n);
        let sq: Vec<f64> = sw.live.iter().map(|t| t.scale.sqrt()).collect();
        let bs = Mat::from_fn(n, n, |i, j| sq[i] * bn.matrix()[(i, j)] * sq[j]);
        let mut p = propagate_blockwise(&sw.p, &dss.f) + kron(&bs, &dss.q);
        crate::linalg::symmetrize_mut(&mut p);
        sw.x = x;
        sw.p = p;
        for tr in &mut sw.live {
            tr.existence_prob *= self.cfg.survival_prob;
        }
    }

    fn step(&self, sw: &mut Sweep, k: usize, zs: &[f64], next_id: &mut u64) -> Result<()> {
        let cfg = &self.cfg;
        let h = &self.model.cssm.h;
        let s = self.model.order();
        let r = cfg.meas_noise;
        let u = self.model.grid()[k];
        let n = sw.live.len();

        let zhat: Vec<f64> = (0..n)
            .map(|t| sw.live[t].mean_at(k) + (h * sw.x.rows(t * s, s))[0])
            .collect();
        let mut sbar = Mat::zeros(n, n);
        for t in 0..n {
            for v in 0..n {
                let blk = sw.p.view((t * s, v * s), (s, s));
                sbar[(t, v)] = (h * blk * h.transpose())[0];
            }
            sbar[(t, t)] += r;
        }
        let s_diag: Vec<f64> = (0..n).map(|t| sbar[(t, t)]).collect();
        let vm = gate(zs, &zhat, &s_diag, cfg.gate_threshold).map_err(|e| match e {
            Error::GatingDegenerate { target } => Error::GatingDegenerate {
                target: sw.live[target].id as usize,
            },
            other => other,
        })?;
        let validated = vm.validated();

        if n > 0 {
            let sub = vm.rows(&validated);
            let zv: Vec<f64> = validated.iter().map(|&j| zs[j]).collect();
            let mut events = enumerate_events(&sub, cfg.event_cap)?;
            let lp: Vec<f64> = events.iter().map(|e| log_event_prior(e, cfg)).collect();
            let ll = events
                .iter()
                .map(|e| log_event_likelihood(e, &zhat, &sbar, &zv, cfg.volume))
                .collect::<Result<Vec<f64>>>()?;
            event_posteriors(&mut events, &lp, &ll)?;
            let (x, p) = coupled_update(&sw.x, &sw.p, h, r, &zv, &zhat, &events)?;
            sw.x = x;
            sw.p = p;
            let marg = marginals(&events, zv.len(), n);

            for t in 0..n {
                let q = (1.0 - marg.beta0[t]).clamp(0.0, 1.0);
                let gated: Vec<usize> = (0..zv.len()).filter(|&j| sub.get(j, t)).collect();
                let tr = &mut sw.live[t];
                tr.existence_prob =
                    existence_update(tr.existence_prob, &gated, &zv, zhat[t], s_diag[t], cfg);
                if q >= 0.5 {
                    tr.hits += 1;
                    tr.consecutive_misses = 0;
                } else {
                    tr.consecutive_misses += 1;
                }
                tr.assoc_history.push(AssocRecord {
                    index: k,
                    measurements: gated.iter().map(|&j| (zv[j], marg.beta[(j, t)])).collect(),
                    detect_prob: q,
                });
                if q >= cfg.min_pseudo_likelihood && q > 0.0 {
                    let value = gated
                        .iter()
                        .map(|&j| marg.beta[(j, t)] * zv[j])
                        .sum::<f64>()
                        / q;
                    let spread = gated
                        .iter()
                        .map(|&j| marg.beta[(j, t)] / q * (zv[j] - value).powi(2))
                        .sum::<f64>();
                    // with probability 1 − q every gated value is clutter,
                    // spread uniformly over the gate
                    let clutter = (1.0 - q) * cfg.gate_threshold * s_diag[t] / 3.0;
                    sw.pseudo.push(PseudoMeasurement {
                        track: tr.id,
                        index: k,
                        u,
                        value,
                        variance: q * (r + spread) + clutter,
                        likelihood: q,
                    });
                }
                if tr.existence_prob >= cfg.confirm_threshold {
                    tr.status = TrackStatus::Confirmed;
                }
                if tr.existence_prob < cfg.terminate_threshold
                    || tr.consecutive_misses > cfg.max_misses
                {
                    tr.status = TrackStatus::Terminated;
                }
            }
            sw.sync(s);
            if sw.live.iter().any(|t| t.status == TrackStatus::Terminated) {
                let keep: Vec<usize> = (0..n)
                    .filter(|&t| sw.live[t].status != TrackStatus::Terminated)
                    .collect();
                sw.keep(&keep, s);
                let (alive, dead): (Vec<Track>, Vec<Track>) = sw
                    .live
                    .drain(..)
                    .partition(|t| t.status != TrackStatus::Terminated);
                sw.live = alive;
                sw.done.extend(dead);
            }
        }

        // new tracks from measurements outside every gate
        let pinf = &self.model.cssm.pinf;
        let mut spawn_cov = pinf.clone();
        for i in 0..s {
            spawn_cov[(0, i)] = 0.0;
            spawn_cov[(i, 0)] = 0.0;
        }
        spawn_cov[(0, 0)] = r;
        let mut spawned: Vec<f64> = Vec::new();
        for (j, &z) in zs.iter().enumerate() {
            if validated.binary_search(&j).is_ok() {
                continue;
            }
            let near_existing =
                (0..n).any(|t| (z - zhat[t]).powi(2) / s_diag[t] < cfg.init_distance);
            let near_new = spawned
                .iter()
                .any(|&w| (z - w).powi(2) / (2.0 * r) < cfg.init_distance);
            if near_existing || near_new {
                continue;
            }
            spawned.push(z);
            let id = take_id(next_id);
            let track = Track {
                id,
                seed: None,
                offset: z,
                baseline: Vec::new(),
                scale: 1.0,
                xbar: Vector::zeros(s),
                pbar: spawn_cov.clone(),
                assoc_history: vec![AssocRecord {
                    index: k,
                    measurements: vec![(z, 1.0)],
                    detect_prob: 1.0,
                }],
                status: self.status_for(cfg.initial_existence, TrackStatus::Tentative),
                existence_prob: cfg.initial_existence,
                consecutive_misses: 0,
                hits: 1,
                born_at: k,
            };
            sw.pseudo.push(PseudoMeasurement {
                track: id,
                index: k,
                u,
                value: z,
                variance: r,
                likelihood: 1.0,
            });
            sw.push(track, &Vector::zeros(s), &spawn_cov);
        }
        Ok(())
    }

    fn status_for(&self, existence: f64, otherwise: TrackStatus) -> TrackStatus {
        if existence >= self.cfg.confirm_threshold {
            TrackStatus::Confirmed
        } else {
            otherwise
        }
    }
}

/// Integrated-PDA existence update: `p⁺ = (1 − δ)p / (1 − δp)` with
/// `δ = P_D·(1 − Σ_j N_j / λc)` over the gated measurements.
fn existence_update(
    prior: f64,
    gated: &[usize],
    zv: &[f64],
    zhat: f64,
    s: f64,
    cfg: &AssociationConfig,
) -> f64 {
    let pd = cfg.detection_prob;
    let delta = if gated.is_empty() {
        pd
    } else if cfg.clutter_density > 0.0 {
        let norm = (2.0 * std::f64::consts::PI * s).sqrt();
        let lik: f64 = gated
            .iter()
            .map(|&j| (-(zv[j] - zhat).powi(2) / (2.0 * s)).exp() / norm)
            .sum();
        pd * (1.0 - lik / cfg.clutter_density)
    } else {
        return 1.0;
    };
    let denom = 1.0 - delta * prior;
    if denom <= 0.0 {
        return 1.0;
    }
    ((1.0 - delta) * prior / denom).clamp(0.0, 1.0)
}

fn take_id(next: &mut u64) -> u64 {
    let id = *next;
    *next += 1;
    id
}

/// Bins a frame's detections and sweeps them with no prior tracks.
pub fn run_integrated_jpdaf(
    detections: &[Detection],
    model: &SpatialModel,
    b: &CoregionalizationMatrix,
    cfg: &AssociationConfig,
) -> Result<(Vec<Track>, PseudoMeasurementSet)> {
    let tracker = SpatialTracker::new(model, b, cfg)?;
    let steps = bin_detections(detections, model.grid());
    let mut next_id = 0;
    let out = tracker.run_frame(&steps, None, &mut next_id)?;
    Ok((out.tracks, out.pseudo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{rbf_to_cssm, KernelHyperparams};

    fn model(n: usize) -> SpatialModel {
        let cssm = rbf_to_cssm(&KernelHyperparams::rbf(1.0, 2.0).unwrap(), 2).unwrap();
        SpatialModel::new(cssm, (0..n).map(|i| i as f64 * 0.5).collect()).unwrap()
    }

    #[test]
    fn binning_uses_nearest_index() {
        let grid = [0.0, 1.0, 2.0];
        let det = |u, z| Detection {
            frame: 0,
            u,
            z,
            origin: None,
        };
        let bins = bin_detections(
            &[
                det(0.4, 1.0),
                det(0.5, 2.0),
                det(0.6, 3.0),
                det(7.0, 4.0),
                det(-1.0, 5.0),
            ],
            &grid,
        );
        assert_eq!(bins, vec![vec![1.0, 2.0, 5.0], vec![3.0], vec![4.0]]);
    }

    #[test]
    fn coasting_track_decays_and_terminates() {
        let m = model(12);
        let b = CoregionalizationMatrix::identity(1);
        let cfg = AssociationConfig {
            max_misses: 100,
            ..AssociationConfig::default()
        };
        let tracker = SpatialTracker::new(&m, &b, &cfg).unwrap();
        let seeds = SeedSet {
            targets: vec![7],
            offsets: vec![0.0],
            baselines: Vec::new(),
            scales: Vec::new(),
            mean: Vector::zeros(2),
            cov: Mat::identity(2, 2) * 0.01,
        };
        let steps = vec![Vec::new(); 12];
        let mut next = 0;
        let out = tracker.run_frame(&steps, Some(&seeds), &mut next).unwrap();
        assert_eq!(out.tracks.len(), 1);
        let tr = &out.tracks[0];
        assert_eq!(tr.status, TrackStatus::Terminated);
        assert!(out.pseudo.items.is_empty());
        assert!(tr.assoc_history.len() < 12);
    }

    #[test]
    fn existence_rises_on_hits_and_falls_on_misses() {
        let cfg = AssociationConfig::default();
        let hit = existence_update(0.5, &[0], &[0.0], 0.0, 0.02, &cfg);
        let miss = existence_update(0.5, &[], &[], 0.0, 0.02, &cfg);
        assert!(hit > 0.5 && miss < 0.5);
        assert!((miss - 0.1 * 0.5 / (1.0 - 0.9 * 0.5)).abs() < 1e-15);
    }
}
