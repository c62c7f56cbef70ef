//! The full tracker: per-frame spatial association seeded from the temporal
//! prediction, a coupled temporal Kalman filter over the targets' curves, and
//! fixed-lag smoothing of the output.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::association::{
    bin_detections, AssociationConfig, Detection, SeedSet, SpatialModel, SpatialTracker,
};
use crate::coupling::{stack_model, CoregionalizationMatrix, StackedModel};
use crate::error::{Error, Result};
use crate::kernels::{discretize, gram, kernel_to_cssm, DiscreteStateSpace, KernelHyperparams};
use crate::linalg::{kron, symmetrize_mut, Mat, Vector};
use crate::smoother::{fixed_lag_smooth, FilterHistory};
use crate::temporal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifecycleConfig {
    /// Frames with sufficient coverage needed to confirm a target.
    pub confirm_hits: usize,
    /// Consecutive uncovered frames before a confirmed target is dropped.
    pub max_misses: usize,
    /// Same, for tentative targets.
    pub tentative_max_misses: usize,
    /// Fraction of index points that must carry a pseudo-measurement for a
    /// frame to count as a hit (and for a spatial track to give birth).
    pub min_coverage: f64,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        Self {
            confirm_hits: 2,
            max_misses: 5,
            tentative_max_misses: 1,
            min_coverage: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    #[serde(default)]
    pub association: AssociationConfig,
    pub spatial_kernel: KernelHyperparams,
    #[serde(default = "default_rbf_order")]
    pub rbf_order: usize,
    pub temporal_kernel: KernelHyperparams,
    pub b: CoregionalizationMatrix,
    #[serde(default = "default_period")]
    pub frame_period: f64,
    #[serde(default = "default_lag")]
    pub smoother_lag: usize,
    #[serde(default)]
    pub lifecycle: LifecycleConfig,
}

fn default_rbf_order() -> usize {
    2
}

fn default_period() -> f64 {
    1.0
}

fn default_lag() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetStatus {
    Tentative,
    Confirmed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: u64,
    /// Constant mean of the curve; the filter state is the deviation from it.
    pub offset: f64,
    pub status: TargetStatus,
    pub hits: usize,
    pub misses: usize,
    pub born: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LifecycleKind {
    Born,
    Confirmed,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifecycleEvent {
    pub frame: usize,
    pub target: u64,
    pub kind: LifecycleKind,
}

/// Smoothed curve of one confirmed target at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveEstimate {
    pub frame: usize,
    pub target: u64,
    pub values: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Filtered joint posterior at one frame (before smoothing).
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredFrame {
    pub frame: usize,
    pub targets: Vec<Target>,
    pub x: Vector,
    pub p: Mat,
}

impl FilteredFrame {
    /// Index of the `(target, point, derivative)` entry in `x`.
    pub fn offset(&self, target: usize, point: usize, deriv: usize, n: usize) -> usize {
        (target * n + point) * 2 + deriv
    }
}

struct Snapshot {
    frame: usize,
    targets: Vec<Target>,
}

/// Spatio-temporal tracker over a fixed index grid.
pub struct StTracker {
    cfg: TrackerConfig,
    grid: Vec<f64>,
    spatial: SpatialModel,
    temporal: DiscreteStateSpace,
    ku: Mat,
    models: HashMap<usize, StackedModel>,
    targets: Vec<Target>,
    x: Vector,
    p: Mat,
    history: FilterHistory,
    snapshots: VecDeque<Snapshot>,
    frame: usize,
    next_target: u64,
    next_track: u64,
    lifecycle: Vec<LifecycleEvent>,
}

impl StTracker {
    pub fn new(cfg: TrackerConfig, grid: Vec<f64>) -> Result<Self> {
        cfg.association.validate()?;
        if !(cfg.frame_period > 0.0 && cfg.frame_period.is_finite()) {
            return Err(Error::Config("frame_period must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&cfg.lifecycle.min_coverage) || cfg.lifecycle.confirm_hits == 0 {
            return Err(Error::Config("invalid lifecycle settings".into()));
        }
        let spatial = SpatialModel::new(
            kernel_to_cssm(&cfg.spatial_kernel, cfg.rbf_order)?,
            grid.clone(),
        )?;
        let tc = kernel_to_cssm(&cfg.temporal_kernel, 2)?;
        if tc.order() != 2 {
            return Err(Error::Config(
                "temporal model must have two states (value, rate)".into(),
            ));
        }
        let temporal = discretize(&tc, cfg.frame_period);
        let ku = gram(&cfg.spatial_kernel, &grid, &grid);
        let lag = cfg.smoother_lag;
        Ok(Self {
            cfg,
            grid,
            spatial,
            temporal,
            ku,
            models: HashMap::new(),
            targets: Vec::new(),
            x: Vector::zeros(0),
            p: Mat::zeros(0, 0),
            history: FilterHistory::for_lag(lag),
            snapshots: VecDeque::new(),
            frame: 0,
            next_target: 0,
            next_track: 0,
            lifecycle: Vec::new(),
        })
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn lifecycle(&self) -> &[LifecycleEvent] {
        &self.lifecycle
    }

    fn n_points(&self) -> usize {
        self.grid.len()
    }

    fn model(&mut self, n: usize) -> Result<&StackedModel> {
        if !self.models.contains_key(&n) {
            let b = self.cfg.b.resized(n);
            let m = stack_model(n, &self.temporal, &b, &self.ku, &self.grid)?;
            self.models.insert(n, m);
        }
        Ok(&self.models[&n])
    }

    /// Processes one frame of detections. Returns the filtered posterior and
    /// any smoothed curves that became final.
    pub fn step(
        &mut self,
        detections: &[Detection],
    ) -> Result<(FilteredFrame, Vec<CurveEstimate>)> {
        let k = self.frame;
        let n = self.targets.len();
        let npts = self.n_points();

        // temporal prediction
        let (xp, pp) = if n > 0 {
            let model = self.model(n)?.clone();
            let (xp, pp) = temporal::predict(&self.x, &self.p, &model)?;
            self.history
                .set_prediction(xp.clone(), pp.clone(), model.fbar.clone());
            (xp, pp)
        } else {
            (Vector::zeros(0), Mat::zeros(0, 0))
        };

        // spatial sweep seeded from the prediction
        let seeds = (n > 0).then(|| self.seeds(&xp, &pp));
        let bins = bin_detections(detections, &self.grid);
        let tracker = SpatialTracker::new(&self.spatial, &self.cfg.b, &self.cfg.association)?;
        let out = tracker.run_frame(&bins, seeds.as_ref(), &mut self.next_track)?;

        // observations per target
        let mut obs: Vec<Vec<Option<(f64, f64)>>> = vec![vec![None; npts]; n];
        let mut births = Vec::new();
        let r = self.cfg.association.meas_noise;
        let need = (self.cfg.lifecycle.min_coverage * npts as f64).ceil() as usize;
        for tr in &out.tracks {
            let pseudo: Vec<_> = out.pseudo.for_track(tr.id).collect();
            match tr.seed {
                Some(tid) => {
                    let t = self
                        .targets
                        .iter()
                        .position(|x| x.id == tid)
                        .expect("seed refers to a live target");
                    for pm in pseudo {
                        obs[t][pm.index] = Some((pm.value, pm.variance));
                    }
                }
                None => {
                    if pseudo.len() < need.max(1) {
                        continue;
                    }
                    // duplicate of an existing target?
                    let dup = (0..n).find(|&t| {
                        let off = self.targets[t].offset;
                        let mut d2 = 0.0;
                        for pm in &pseudo {
                            let j = (t * npts + pm.index) * 2;
                            let pred = off + xp[j];
                            d2 += (pm.value - pred).powi(2) / (pp[(j, j)] + pm.variance);
                        }
                        d2 / (pseudo.len() as f64) < self.cfg.association.gate_threshold
                    });
                    match dup {
                        Some(t) => {
                            for pm in pseudo {
                                if obs[t][pm.index].is_none() {
                                    obs[t][pm.index] = Some((pm.value, pm.variance));
                                }
                            }
                        }
                        None => births.push(
                            pseudo
                                .iter()
                                .map(|pm| (pm.index, pm.value, pm.variance))
                                .collect::<Vec<_>>(),
                        ),
                    }
                }
            }
        }

        // temporal update
        if n > 0 {
            let mut entries = Vec::new();
            for (t, row) in obs.iter().enumerate() {
                for (i, o) in row.iter().enumerate() {
                    if let Some((v, var)) = o {
                        entries.push((
                            (t * npts + i) * 2,
                            v - self.targets[t].offset,
                            var.max(r * 1e-6),
                        ));
                    }
                }
            }
            let (x, p) = temporal::update_entries(&xp, &pp, &entries)?;
            self.x = x;
            self.p = p;
        }

        // lifecycle
        let mut changed = false;
        let mut keep = Vec::with_capacity(n);
        for (t, row) in obs.iter().enumerate() {
            let covered = row.iter().filter(|o| o.is_some()).count();
            let tgt = &mut self.targets[t];
            if covered >= need.max(1) {
                tgt.hits += 1;
                tgt.misses = 0;
            } else {
                tgt.misses += 1;
            }
            if tgt.status == TargetStatus::Tentative && tgt.hits >= self.cfg.lifecycle.confirm_hits
            {
                tgt.status = TargetStatus::Confirmed;
                self.lifecycle.push(LifecycleEvent {
                    frame: k,
                    target: tgt.id,
                    kind: LifecycleKind::Confirmed,
                });
            }
            let budget = match tgt.status {
                TargetStatus::Tentative => self.cfg.lifecycle.tentative_max_misses,
                TargetStatus::Confirmed => self.cfg.lifecycle.max_misses,
            };
            if tgt.misses >= budget.max(1) {
                self.lifecycle.push(LifecycleEvent {
                    frame: k,
                    target: tgt.id,
                    kind: LifecycleKind::Terminated,
                });
                changed = true;
            } else {
                keep.push(t);
            }
        }

        let filtered = FilteredFrame {
            frame: k,
            targets: self.targets.clone(),
            x: self.x.clone(),
            p: self.p.clone(),
        };

        // smoothing output for the current target set
        let mut curves = Vec::new();
        if n > 0 {
            self.history.push(self.x.clone(), self.p.clone());
            self.snapshots.push_back(Snapshot {
                frame: k,
                targets: self.targets.clone(),
            });
            if self.snapshots.len() > self.history.len() {
                self.snapshots.pop_front();
            }
        }
        let births = self.dedup_births(births);
        if changed || !births.is_empty() {
            curves.extend(self.flush()?);
        } else if self.history.is_full() {
            curves.extend(self.emit_oldest()?);
        }

        if changed {
            self.remove_all_but(&keep);
        }
        for b in births {
            self.birth(&b, k)?;
        }
        self.frame += 1;
        Ok((filtered, curves))
    }

    /// Smooths and returns everything still pending.
    pub fn finish(&mut self) -> Result<Vec<CurveEstimate>> {
        self.flush()
    }

    /// Seeds the spatial sweep with the temporal prediction: each seeded
    /// track estimates the residual of its target's predicted curve, with a
    /// spatial process scaled to the prediction's variance.
    fn seeds(&self, xp: &Vector, pp: &Mat) -> SeedSet {
        let n = self.targets.len();
        let npts = self.n_points();
        let s = self.spatial.order();
        let pinf = &self.spatial.cssm().pinf;
        let du = if npts > 1 {
            self.grid[1] - self.grid[0]
        } else {
            1.0
        };
        let dim = n * npts * 2;
        let sk = &self.cfg.spatial_kernel;
        let scales: Vec<f64> = (0..n)
            .map(|t| {
                let v = (0..npts)
                    .map(|i| pp[((t * npts + i) * 2, (t * npts + i) * 2)])
                    .sum::<f64>()
                    / npts as f64;
                (v / sk.sigma2).max(1e-12)
            })
            .collect();
        // linear map from the temporal state to [f(u₀), (f(u₁) − f(u₀))/Δu]
        let mut tmap = Mat::zeros(n * s, dim);
        for t in 0..n {
            tmap[(t * s, t * npts * 2)] = 1.0;
            if s > 1 && npts > 1 {
                tmap[(t * s + 1, (t * npts + 1) * 2)] = 1.0 / du;
                tmap[(t * s + 1, t * npts * 2)] = -1.0 / du;
            }
        }
        let mut cov = &tmap * pp * tmap.transpose();
        let curvature = 3.0 * sk.sigma2 / sk.ell.powi(4);
        for t in 0..n {
            if s > 1 {
                cov[(t * s + 1, t * s + 1)] += (du / 2.0).powi(2) * curvature * scales[t];
            }
            for a in 2..s {
                for b in 2..s {
                    cov[(t * s + a, t * s + b)] = pinf[(a, b)] * scales[t];
                }
            }
        }
        symmetrize_mut(&mut cov);
        SeedSet {
            targets: self.targets.iter().map(|t| t.id).collect(),
            offsets: self.targets.iter().map(|t| t.offset).collect(),
            baselines: (0..n)
                .map(|t| (0..npts).map(|i| xp[(t * npts + i) * 2]).collect())
                .collect(),
            scales,
            mean: Vector::zeros(n * s),
            cov,
        }
    }

    /// Drops birth candidates that duplicate an earlier (better covered) one.
    fn dedup_births(&self, mut births: Vec<Vec<(usize, f64, f64)>>) -> Vec<Vec<(usize, f64, f64)>> {
        births.sort_by_key(|b| std::cmp::Reverse(b.len()));
        let gamma = self.cfg.association.gate_threshold;
        let mut kept: Vec<Vec<(usize, f64, f64)>> = Vec::new();
        for cand in births {
            let dup = kept.iter().any(|k| {
                let mut d2 = 0.0;
                let mut m = 0;
                for &(i, v, var) in &cand {
                    if let Some(&(_, w, wv)) = k.iter().find(|e| e.0 == i) {
                        d2 += (v - w).powi(2) / (var + wv);
                        m += 1;
                    }
                }
                m > 0 && d2 / (m as f64) < gamma
            });
            if !dup {
                kept.push(cand);
            }
        }
        kept
    }

    fn birth(&mut self, pseudo: &[(usize, f64, f64)], frame: usize) -> Result<()> {
        let npts = self.n_points();
        let offset = pseudo.iter().map(|p| p.1).sum::<f64>() / pseudo.len() as f64;
        let variance = self.cfg.b.mean_variance();
        let prior = kron(&(&self.ku * variance), &self.temporal.p0);
        let entries: Vec<(usize, f64, f64)> = pseudo
            .iter()
            .map(|&(i, v, var)| (i * 2, v - offset, var))
            .collect();
        let (xb, pb) = temporal::update_entries(&Vector::zeros(npts * 2), &prior, &entries)?;
        let id = self.next_target;
        self.next_target += 1;
        let target = Target {
            id,
            offset,
            status: TargetStatus::Tentative,
            hits: 1,
            misses: 0,
            born: frame,
        };
        // keep targets ordered by offset so that B's rows line up
        let pos = self.targets.partition_point(|t| t.offset <= offset);
        let blk = npts * 2;
        let old = self.x.len();
        let at = pos * blk;
        let mut x = Vector::zeros(old + blk);
        let mut p = Mat::zeros(old + blk, old + blk);
        let map = |i: usize| if i < at { i } else { i + blk };
        for i in 0..old {
            x[map(i)] = self.x[i];
            for j in 0..old {
                p[(map(i), map(j))] = self.p[(i, j)];
            }
        }
        x.rows_mut(at, blk).copy_from(&xb);
        p.view_mut((at, at), (blk, blk)).copy_from(&pb);
        self.x = x;
        self.p = p;
        self.targets.insert(pos, target);
        self.lifecycle.push(LifecycleEvent {
            frame,
            target: id,
            kind: LifecycleKind::Born,
        });
        Ok(())
    }

    fn remove_all_but(&mut self, keep: &[usize]) {
        let blk = self.n_points() * 2;
        let idx: Vec<usize> = keep
            .iter()
            .flat_map(|&t| (t * blk)..(t * blk + blk))
            .collect();
        self.x = Vector::from_iterator(idx.len(), idx.iter().map(|&i| self.x[i]));
        self.p = Mat::from_fn(idx.len(), idx.len(), |i, j| self.p[(idx[i], idx[j])]);
        self.targets = keep.iter().map(|&t| self.targets[t].clone()).collect();
    }

    fn curves_from(&self, snap: &Snapshot, x: &Vector, p: &Mat) -> Vec<CurveEstimate> {
        let npts = self.n_points();
        snap.targets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.status == TargetStatus::Confirmed)
            .map(|(ti, t)| CurveEstimate {
                frame: snap.frame,
                target: t.id,
                values: (0..npts)
                    .map(|i| t.offset + x[(ti * npts + i) * 2])
                    .collect(),
                variances: (0..npts)
                    .map(|i| {
                        let j = (ti * npts + i) * 2;
                        p[(j, j)]
                    })
                    .collect(),
            })
            .collect()
    }

    fn emit_oldest(&mut self) -> Result<Vec<CurveEstimate>> {
        let sm = fixed_lag_smooth(&self.history, self.cfg.smoother_lag)?;
        let snap = self
            .snapshots
            .pop_front()
            .expect("snapshot per history entry");
        let (x, p) = &sm[0];
        let curves = self.curves_from(&snap, x, p);
        // the history evicts this entry on the next push
        Ok(curves)
    }

    fn flush(&mut self) -> Result<Vec<CurveEstimate>> {
        if self.history.is_empty() {
            self.snapshots.clear();
            return Ok(Vec::new());
        }
        let len = self.history.len();
        let sm = fixed_lag_smooth(&self.history, len - 1)?;
        let mut curves = Vec::new();
        let snaps: Vec<Snapshot> = self.snapshots.drain(..).collect();
        let skip = sm.len() - snaps.len();
        for (snap, (x, p)) in snaps.iter().zip(sm.iter().skip(skip)) {
            curves.extend(self.curves_from(snap, x, p));
        }
        self.history.clear();
        Ok(curves)
    }
}

/// Everything a tracking run produces.
#[derive(Debug, Clone, Default)]
pub struct TrackOutput {
    pub curves: Vec<CurveEstimate>,
    pub lifecycle: Vec<LifecycleEvent>,
    pub frames: usize,
    pub runtime_seconds: f64,
}

impl TrackOutput {
    /// Curves grouped per frame (`frames` entries).
    pub fn per_frame(&self) -> Vec<Vec<&CurveEstimate>> {
        let mut out = vec![Vec::new(); self.frames];
        for c in &self.curves {
            if c.frame < self.frames {
                out[c.frame].push(c);
            }
        }
        for f in &mut out {
            f.sort_by_key(|c| c.target);
        }
        out
    }
}

/// Runs the tracker over a sequence of detection frames, calling
/// `on_filtered` with each frame's filtered posterior.
pub fn track(
    frames: &[Vec<Detection>],
    grid: &[f64],
    cfg: &TrackerConfig,
    mut on_filtered: impl FnMut(&FilteredFrame),
) -> Result<TrackOutput> {
    let start = std::time::Instant::now();
    let mut tracker = StTracker::new(cfg.clone(), grid.to_vec())?;
    let mut curves = Vec::new();
    for (k, dets) in frames.iter().enumerate() {
        let (filtered, done) = tracker.step(dets).map_err(|e| Error::AtFrame {
            frame: k,
            source: Box::new(e),
        })?;
        on_filtered(&filtered);
        curves.extend(done);
    }
    curves.extend(tracker.finish()?);
    curves.sort_by_key(|c| (c.frame, c.target));
    Ok(TrackOutput {
        curves,
        lifecycle: tracker.lifecycle().to_vec(),
        frames: frames.len(),
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}
