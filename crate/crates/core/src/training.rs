//! Hyperparameter learning by negative log marginal likelihood minimization.
//!
//! Parameters are `θ = [log σ², log ℓ, L₂₁, L₂₂, L₃₁, …]` where `L` is the
//! lower Cholesky factor of `B` with `L₁₁ ≡ 1` (the overall scale lives in
//! `σ²`, so freeing `L₁₁` would leave a flat direction).

use serde::{Deserialize, Serialize};

use crate::coupling::CoregionalizationMatrix;
use crate::error::{Error, Result};
use crate::kernels::{
    discretize, eval_kernel, eval_kernel_dlog_ell, kernel_to_cssm, ContinuousStateSpace,
    DiscreteStateSpace, KernelFamily, KernelHyperparams,
};
use crate::linalg::{log_det_cholesky, Mat, Vector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Labeled samples of one target's curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSamples {
    pub u: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub targets: Vec<TargetSamples>,
    /// Observation noise variance `σn²`, held fixed.
    pub noise_var: f64,
}

impl TrainingSet {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::Config("training set has no targets".into()));
        }
        for (d, t) in self.targets.iter().enumerate() {
            if t.u.len() != t.z.len() {
                return Err(Error::Config(format!(
                    "target {d}: {} locations but {} values",
                    t.u.len(),
                    t.z.len()
                )));
            }
            if t.u.len() < 2 {
                return Err(Error::Config(format!(
                    "target {d} has fewer than 2 samples"
                )));
            }
            if t.u.iter().chain(&t.z).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("target {d} has non-finite samples")));
            }
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::Config(format!(
                "noise variance {} is invalid",
                self.noise_var
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.targets.len()
    }

    fn flat(&self) -> (Vec<usize>, Vec<f64>, Vector) {
        let mut who = Vec::new();
        let mut us = Vec::new();
        let mut zs = Vec::new();
        for (d, t) in self.targets.iter().enumerate() {
            for (u, z) in t.u.iter().zip(&t.z) {
                who.push(d);
                us.push(*u);
                zs.push(*z);
            }
        }
        (who, us, Vector::from_vec(zs))
    }
}

/// Negative log marginal likelihood under `K = B ⊗ K_u + σn² I` (entries
/// `B_de k(u_i − u_j)` for samples of targets `d`, `e`).
pub fn nlml(
    params: &KernelHyperparams,
    b: &CoregionalizationMatrix,
    data: &TrainingSet,
) -> Result<f64> {
    params.validate()?;
    data.validate()?;
    if b.dim() != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "B is {0}x{0} for {1} targets",
            b.dim(),
            data.dim()
        )));
    }
    let (who, us, z) = data.flat();
    let k = gram_icm(params, b.matrix(), data.noise_var, &who, &us);
    let (chol, _) = factor(&k)?;
    let alpha = chol.solve(&z);
    Ok(0.5 * z.dot(&alpha) + 0.5 * log_det_cholesky(&chol) + 0.5 * z.len() as f64 * LN_2PI)
}

fn gram_icm(params: &KernelHyperparams, b: &Mat, noise: f64, who: &[usize], us: &[f64]) -> Mat {
    let n = us.len();
    let mut k = Mat::from_fn(n, n, |i, j| {
        b[(who[i], who[j])] * eval_kernel(params, us[i] - us[j])
    });
    for i in 0..n {
        k[(i, i)] += noise;
    }
    k
}

/// Cholesky with the training jitter schedule: `1e-9·mean(diag)`, ×10 per
/// failure, at most three escalations.
fn factor(k: &Mat) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    if let Some(c) = k.clone().cholesky() {
        return Ok((c, 0.0));
    }
    let scale = k.trace() / k.nrows() as f64;
    let mut jitter = 1e-9 * scale;
    for _ in 0..4 {
        let mut kj = k.clone();
        for i in 0..k.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = kj.cholesky() {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Conditioning)
}

/// Number of free Cholesky entries for `D` targets (lower triangle minus `L₁₁`).
pub fn chol_params(d: usize) -> usize {
    d * (d + 1) / 2 - 1
}

/// Packs `(σ², ℓ, L)` into `θ`.
pub fn pack(params: &KernelHyperparams, l: &Mat) -> Vec<f64> {
    let mut th = vec![params.sigma2.ln(), params.ell.ln()];
    for i in 0..l.nrows() {
        for j in 0..=i {
            if i == 0 && j == 0 {
                continue;
            }
            th.push(l[(i, j)]);
        }
    }
    th
}

/// Unpacks `θ` into hyperparameters and the lower Cholesky factor.
pub fn unpack(theta: &[f64], family: KernelFamily, d: usize) -> (KernelHyperparams, Mat) {
    let params = KernelHyperparams {
        family,
        sigma2: theta[0].exp(),
        ell: theta[1].exp(),
    };
    let mut l = Mat::zeros(d, d);
    l[(0, 0)] = 1.0;
    let mut k = 2;
    for i in 0..d {
        for j in 0..=i {
            if i == 0 && j == 0 {
                continue;
            }
            l[(i, j)] = theta[k];
            k += 1;
        }
    }
    (params, l)
}

/// Objective and analytic gradient `½ tr((K⁻¹ − ααᵀ) ∂K)` at `θ`.
pub fn nlml_with_grad(
    theta: &[f64],
    family: KernelFamily,
    data: &TrainingSet,
) -> Result<(f64, Vec<f64>)> {
    let d = data.dim();
    if theta.len() != 2 + chol_params(d) {
        return Err(Error::DimensionMismatch(format!(
            "θ has {} entries, expected {}",
            theta.len(),
            2 + chol_params(d)
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidHyperparams(
            "non-finite parameter vector".into(),
        ));
    }
    let (params, l) = unpack(theta, family, d);
    params.validate()?;
    let b = &l * l.transpose();
    let (who, us, z) = data.flat();
    let n = us.len();
    let kern = Mat::from_fn(n, n, |i, j| eval_kernel(&params, us[i] - us[j]));
    let dkern = Mat::from_fn(n, n, |i, j| eval_kernel_dlog_ell(&params, us[i] - us[j]));
    let mut k = Mat::from_fn(n, n, |i, j| b[(who[i], who[j])] * kern[(i, j)]);
    for i in 0..n {
        k[(i, i)] += data.noise_var;
    }
    let (chol, _) = factor(&k)?;
    let alpha = chol.solve(&z);
    let f = 0.5 * z.dot(&alpha) + 0.5 * log_det_cholesky(&chol) + 0.5 * n as f64 * LN_2PI;
    let mut w = chol.inverse();
    w -= &alpha * alpha.transpose();

    let mut g = vec![0.0; theta.len()];
    // ∂/∂ log σ²: the signal part of K
    let mut gs = 0.0;
    let mut gl = 0.0;
    // ∂B_de/∂L_ab = δ_da L_eb + L_db δ_ea; accumulate Σ_ij W_ij k_ij per (d, e) pair
    let mut wk = Mat::zeros(d, d);
    for i in 0..n {
        for j in 0..n {
            let wij = w[(i, j)];
            let bij = b[(who[i], who[j])];
            gs += wij * bij * kern[(i, j)];
            gl += wij * bij * dkern[(i, j)];
            wk[(who[i], who[j])] += wij * kern[(i, j)];
        }
    }
    g[0] = 0.5 * gs;
    g[1] = 0.5 * gl;
    let mut idx = 2;
    for a in 0..d {
        for bcol in 0..=a {
            if a == 0 && bcol == 0 {
                continue;
            }
            // Σ_de wk_de ∂B_de/∂L_{a,bcol} = Σ_e wk_{a e} L_{e bcol} + Σ_d wk_{d a} L_{d bcol}
            let mut acc = 0.0;
            for e in 0..d {
                acc += wk[(a, e)] * l[(e, bcol)] + wk[(e, a)] * l[(e, bcol)];
            }
            g[idx] = 0.5 * acc;
            idx += 1;
        }
    }
    Ok((f, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    /// Extra starts with the initial length scale multiplied by 4, ¼, 16,
    /// ¼², …; the lowest final objective wins.
    pub restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS with a backtracking Armijo line search. Non-finite or failed
/// objective evaluations are treated as infinitely bad trial points.
pub fn bfgs<F>(x0: &[f64], cfg: &OptimizerConfig, mut obj: F) -> Result<OptimizeResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = Vector::from_column_slice(x0);
    let (mut f, g0) = obj(x0)?;
    let mut g = Vector::from_vec(g0);
    let mut hinv = Mat::identity(n, n);
    let mut converged = g.amax() < cfg.grad_tol;
    let mut iterations = 0;
    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        let mut dir = -(&hinv * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            hinv = Mat::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        // keep first trial steps moderate in log-parameter space
        let dmax = dir.amax();
        let mut step = if dmax > 2.0 { 2.0 / dmax } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &x + &dir * step;
            if let Ok((ft, gt)) = obj(trial.as_slice()) {
                if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, Vector::from_vec(gt)));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            break;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = Mat::identity(n, n);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            hinv = &left * &hinv * &right + &s * s.transpose() * rho;
        }
        let rel = (f - fnew).abs() / f.abs().max(1.0);
        x = xn;
        f = fnew;
        g = gn;
        converged = g.amax() < cfg.grad_tol || rel < cfg.rel_tol;
    }
    Ok(OptimizeResult {
        x: x.as_slice().to_vec(),
        f,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainInit {
    pub sigma2: f64,
    pub ell: f64,
    /// Initial coregionalization; identity when absent.
    #[serde(default)]
    pub b: Option<CoregionalizationMatrix>,
}

/// Trained kernel, coupling and the state-space model built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub hyperparams: KernelHyperparams,
    pub b: CoregionalizationMatrix,
    pub rbf_order: usize,
    pub noise_var: f64,
    pub cssm: ContinuousStateSpace,
    pub ssm: DiscreteStateSpace,
    pub nlml: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits `(σ², ℓ, B)` and builds the discretized state-space model.
pub fn train(
    data: &TrainingSet,
    family: KernelFamily,
    init: &TrainInit,
    rbf_order: usize,
    ts: f64,
    opt: &OptimizerConfig,
) -> Result<TrainedModel> {
    data.validate()?;
    let d = data.dim();
    let p0 = KernelHyperparams::new(family, init.sigma2, init.ell)?;
    let l0 = match &init.b {
        Some(b) if b.dim() != d => {
            return Err(Error::DimensionMismatch(format!(
                "initial B is {0}x{0} for {d} targets",
                b.dim()
            )));
        }
        Some(b) => {
            // rescale so that B₁₁ = 1, moving the scale into σ²
            let scale = b.matrix()[(0, 0)];
            let bm = b.matrix() / scale;
            let chol = bm.clone().cholesky().map(|c| c.l()).unwrap_or_else(|| {
                let mut j = bm.clone();
                for i in 0..d {
                    j[(i, i)] += 1e-9;
                }
                j.cholesky()
                    .map(|c| c.l())
                    .unwrap_or_else(|| Mat::identity(d, d))
            });
            (chol, scale)
        }
        None => (Mat::identity(d, d), 1.0),
    };
    let start = KernelHyperparams {
        sigma2: p0.sigma2 * l0.1,
        ..p0
    };
    let mut best: Option<(OptimizeResult, usize)> = None;
    let mut iterations = 0;
    for k in 0..=opt.restarts {
        let factor = if k % 2 == 1 {
            4f64.powi(k.div_ceil(2) as i32)
        } else {
            0.25f64.powi((k / 2) as i32)
        };
        let theta0 = pack(
            &KernelHyperparams {
                ell: start.ell * factor,
                ..start
            },
            &l0.0,
        );
        let res = match bfgs(&theta0, opt, |th| nlml_with_grad(th, family, data)) {
            Ok(r) => r,
            // the first start must succeed; later ones are optional
            Err(e) if k == 0 => return Err(e),
            Err(_) => continue,
        };
        iterations += res.iterations;
        if best.as_ref().is_none_or(|(b, _)| res.f < b.f) {
            best = Some((res, k));
        }
    }
    let (res, _) = best.expect("the first start always yields a result");
    let (hyperparams, l) = unpack(&res.x, family, d);
    let b = CoregionalizationMatrix::from_cholesky(&l)?;
    let cssm = kernel_to_cssm(&hyperparams, rbf_order)?;
    let ssm = discretize(&cssm, ts);
    Ok(TrainedModel {
        hyperparams,
        b,
        rbf_order,
        noise_var: data.noise_var,
        cssm,
        ssm,
        nlml: res.f,
        iterations,
        converged: res.converged,
    })
}
