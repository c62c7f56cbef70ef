//! Joint probabilistic data association along the index axis.
//!
//! Within one frame the targets' curves are swept over the sorted index
//! points. At each point the coupled tracker predicts every track, gates the
//! detections binned to that point, enumerates the feasible joint
//! association events, weighs them, and applies the coupled mixture update.
//! The per-track output of the sweep is a set of pseudo-measurements that
//! feeds the temporal filter.

mod events;
mod tracker;
mod update;

pub use events::{
    enumerate_events, event_likelihood, event_posteriors, event_prior, gate, log_event_likelihood,
    log_event_prior, marginals, JointAssociationEvent, Marginals, ValidationMatrix,
};
pub use tracker::{
    bin_detections, run_integrated_jpdaf, AssocRecord, FrameResult, PseudoMeasurement,
    PseudoMeasurementSet, SeedSet, SpatialModel, SpatialTracker, Track, TrackStatus,
};
pub use update::coupled_update;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar measurement of some curve at index location `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub u: f64,
    pub z: f64,
    /// Generating target (`None` for clutter). Only the simulator and the
    /// metrics look at this; the trackers never do.
    pub origin: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssociationConfig {
    /// Gate `γ` on the squared Mahalanobis distance.
    pub gate_threshold: f64,
    pub detection_prob: f64,
    /// Expected clutter per unit measurement volume at one index step.
    pub clutter_density: f64,
    /// Measurement volume `V` at one index step (the value extent).
    pub volume: f64,
    /// Measurement noise variance `R`.
    pub meas_noise: f64,
    /// A measurement spawns a track only if its squared Mahalanobis distance
    /// to every live track is at least this.
    pub init_distance: f64,
    pub survival_prob: f64,
    pub initial_existence: f64,
    /// Existence assigned to tracks seeded from the temporal filter.
    pub seed_existence: f64,
    pub confirm_threshold: f64,
    pub terminate_threshold: f64,
    /// Consecutive index steps without association before termination.
    pub max_misses: usize,
    /// Pseudo-measurements are emitted only when the track's association
    /// probability at that step reaches this value.
    pub min_pseudo_likelihood: f64,
    pub event_cap: usize,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            gate_threshold: 9.21,
            detection_prob: 0.9,
            clutter_density: 0.05,
            volume: 10.0,
            meas_noise: 0.01,
            init_distance: 9.21,
            survival_prob: 0.98,
            initial_existence: 0.5,
            seed_existence: 0.95,
            confirm_threshold: 0.9,
            terminate_threshold: 0.1,
            max_misses: 4,
            min_pseudo_likelihood: 0.8,
            event_cap: 1_000_000,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::Config(format!(
                "association.{what} = {v} is out of range"
            )))
        };
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.gate_threshold > 0.0 && self.gate_threshold.is_finite()) {
            return bad("gate_threshold", self.gate_threshold);
        }
        if !(self.detection_prob > 0.0 && self.detection_prob <= 1.0) {
            return bad("detection_prob", self.detection_prob);
        }
        if !(self.clutter_density >= 0.0 && self.clutter_density.is_finite()) {
            return bad("clutter_density", self.clutter_density);
        }
        if !(self.volume > 0.0 && self.volume.is_finite()) {
            return bad("volume", self.volume);
        }
        if !(self.meas_noise > 0.0 && self.meas_noise.is_finite()) {
            return bad("meas_noise", self.meas_noise);
        }
        if !(self.init_distance >= 0.0) {
            return bad("init_distance", self.init_distance);
        }
        for (name, v) in [
            ("survival_prob", self.survival_prob),
            ("initial_existence", self.initial_existence),
            ("seed_existence", self.seed_existence),
            ("confirm_threshold", self.confirm_threshold),
            ("terminate_threshold", self.terminate_threshold),
            ("min_pseudo_likelihood", self.min_pseudo_likelihood),
        ] {
            if !unit(v) {
                return bad(name, v);
            }
        }
        if self.terminate_threshold >= self.confirm_threshold {
            return Err(Error::Config(
                "association.terminate_threshold must be below confirm_threshold".into(),
            ));
        }
        if self.event_cap == 0 {
            return Err(Error::Config(
                "association.event_cap must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Expected clutter count `λc·V` in one index step.
    pub fn clutter_mean(&self) -> f64 {
        self.clutter_density * self.volume
    }
}
