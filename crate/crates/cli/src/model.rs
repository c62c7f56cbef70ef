//! Versioned JSON file for a trained model.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stjpda::coupling::CoregionalizationMatrix;
use stjpda::io::{matrix_rows, read_json, write_json};
use stjpda::kernels::KernelFamily;
use stjpda::training::TrainedModel;
use stjpda::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpaceFile {
    pub a: Vec<Vec<f64>>,
    pub l: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub qc: f64,
    pub pinf: Vec<Vec<f64>>,
    pub step: f64,
    pub f: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub family: KernelFamily,
    pub sigma2: f64,
    pub ell: f64,
    pub b: CoregionalizationMatrix,
    pub rbf_order: usize,
    pub noise_var: f64,
    pub nlml: f64,
    pub iterations: usize,
    pub converged: bool,
    pub state_space: StateSpaceFile,
}

impl ModelFile {
    pub fn from_trained(m: &TrainedModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            family: m.hyperparams.family,
            sigma2: m.hyperparams.sigma2,
            ell: m.hyperparams.ell,
            b: m.b.clone(),
            rbf_order: m.rbf_order,
            noise_var: m.noise_var,
            nlml: m.nlml,
            iterations: m.iterations,
            converged: m.converged,
            state_space: StateSpaceFile {
                a: matrix_rows(&m.cssm.a),
                l: m.cssm.l.iter().copied().collect(),
                h: matrix_rows(&m.cssm.h),
                qc: m.cssm.qc,
                pinf: matrix_rows(&m.cssm.pinf),
                step: m.ssm.ts,
                f: matrix_rows(&m.ssm.f),
                q: matrix_rows(&m.ssm.q),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!(
                    "model format version {} (expected {FORMAT_VERSION})",
                    m.format_version
                ),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
