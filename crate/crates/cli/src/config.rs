//! Run configuration and resolution of kernel references.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stjpda::association::AssociationConfig;
use stjpda::coupling::CoregionalizationMatrix;
use stjpda::experiment::oracle_tracker_config;
use stjpda::kernels::{KernelFamily, KernelHyperparams};
use stjpda::metrics::EvalConfig;
use stjpda::parallel::Execution;
use stjpda::pipeline::{LifecycleConfig, TrackerConfig};
use stjpda::simulator::{generate, ScenarioConfig};
use stjpda::training::{OptimizerConfig, TrainInit};
use stjpda::{Error, Result};

use crate::model::ModelFile;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub tracker: Option<TrackerSpec>,
    #[serde(default)]
    pub training: Option<TrainingSpec>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub execution: Execution,
    /// Worker cap; `STJPDA_THREADS` overrides it.
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub family: KernelFamily,
    pub init: TrainInit,
    #[serde(default = "two")]
    pub rbf_order: usize,
    /// Index spacing used to discretize the fitted model.
    #[serde(default = "one")]
    pub step: f64,
    /// Measurement noise variance; defaults to the scenario's.
    #[serde(default)]
    pub noise_var: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

/// A kernel given inline or as `"trained:<model.json>"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSource {
    Inline(KernelHyperparams),
    Reference(String),
}

/// A coupling matrix given inline or as `"trained:<model.json>"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CouplingSource {
    Inline(CoregionalizationMatrix),
    Reference(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerSpec {
    #[serde(default)]
    pub association: AssociationConfig,
    pub spatial_kernel: KernelSource,
    #[serde(default = "two")]
    pub rbf_order: usize,
    pub temporal_kernel: KernelSource,
    /// Defaults to the coupling of a trained spatial model, else the
    /// scenario's.
    #[serde(default)]
    pub b: Option<CouplingSource>,
    /// Index grid; defaults to the scenario's index points.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub frame_period: f64,
    #[serde(default = "two")]
    pub smoother_lag: usize,
    #[serde(default)]
    pub lifecycle: LifecycleConfig,
}

fn one() -> f64 {
    1.0
}

fn two() -> usize {
    2
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        stjpda::io::read_json(path)
    }

    pub fn scenario(&self) -> Result<&ScenarioConfig> {
        self.scenario
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a `scenario` section".into()))
    }

    pub fn training(&self) -> Result<&TrainingSpec> {
        self.training
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a `training` section".into()))
    }

    /// Applies a seed override to the scenario.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let (Some(s), Some(sc)) = (seed, self.scenario.as_mut()) {
            sc.seed = s;
        }
        self
    }

    /// Point threshold for scoring.
    pub fn threshold(&self) -> Result<f64> {
        match (self.eval.point_threshold, &self.scenario) {
            (Some(t), _) => Ok(t),
            (None, Some(sc)) => Ok(3.0 * sc.noise_std),
            (None, None) => Err(Error::Config(
                "set eval.point_threshold or give a scenario".into(),
            )),
        }
    }

    /// Tracker settings and index grid. Without a `tracker` section the
    /// scenario's generating model is used. With a scenario, the
    /// association's sensor settings are derived from it.
    pub fn tracker(&self, base: &Path) -> Result<(TrackerConfig, Vec<f64>)> {
        let truth = match &self.scenario {
            Some(sc) => Some(generate(sc)?),
            None => None,
        };
        let Some(spec) = &self.tracker else {
            let sc = self.scenario()?;
            return Ok((
                oracle_tracker_config(sc, truth.as_ref().unwrap()),
                sc.index_points.clone(),
            ));
        };
        let (spatial, trained_b) = resolve_kernel(&spec.spatial_kernel, base)?;
        let (temporal, _) = resolve_kernel(&spec.temporal_kernel, base)?;
        let b = match &spec.b {
            Some(CouplingSource::Inline(b)) => b.clone(),
            Some(CouplingSource::Reference(r)) => load_reference(r, base)?.b,
            None => match (trained_b, &self.scenario) {
                (Some(b), _) => b,
                (None, Some(sc)) => sc.b_true.clone(),
                (None, None) => {
                    return Err(Error::Config(
                        "tracker.b is required without a scenario".into(),
                    ))
                }
            },
        };
        let grid = match (&spec.grid, &self.scenario) {
            (Some(g), _) => g.clone(),
            (None, Some(sc)) => sc.index_points.clone(),
            (None, None) => {
                return Err(Error::Config(
                    "tracker.grid is required without a scenario".into(),
                ))
            }
        };
        let association = match (&self.scenario, &truth) {
            (Some(sc), Some(t)) => {
                stjpda::experiment::association_for_scenario(&spec.association, sc, t)
            }
            _ => spec.association,
        };
        let cfg = TrackerConfig {
            association,
            spatial_kernel: spatial,
            rbf_order: spec.rbf_order,
            temporal_kernel: temporal,
            b,
            frame_period: spec.frame_period,
            smoother_lag: spec.smoother_lag,
            lifecycle: spec.lifecycle,
        };
        Ok((cfg, grid))
    }

    /// Tracker override for batch runs (`None` means the oracle model).
    pub fn tracker_override(&self, base: &Path) -> Result<Option<TrackerConfig>> {
        match &self.tracker {
            Some(_) => Ok(Some(self.tracker(base)?.0)),
            None => Ok(None),
        }
    }
}

fn reference_path(r: &str, base: &Path) -> Result<PathBuf> {
    let rest = r.strip_prefix("trained:").ok_or_else(|| {
        Error::Config(format!(
            "kernel reference {r:?} must look like \"trained:<path>\""
        ))
    })?;
    let p = PathBuf::from(rest);
    Ok(if p.is_absolute() { p } else { base.join(p) })
}

fn load_reference(r: &str, base: &Path) -> Result<ModelFile> {
    ModelFile::load(&reference_path(r, base)?)
}

fn resolve_kernel(
    src: &KernelSource,
    base: &Path,
) -> Result<(KernelHyperparams, Option<CoregionalizationMatrix>)> {
    match src {
        KernelSource::Inline(k) => {
            k.validate()?;
            Ok((*k, None))
        }
        KernelSource::Reference(r) => {
            let m = load_reference(r, base)?;
            Ok((
                KernelHyperparams::new(m.family, m.sigma2, m.ell)?,
                Some(m.b),
            ))
        }
    }
}
