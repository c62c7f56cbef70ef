use super::spectral::{check_order, rbf_spectral_taylor, stable_factorization};
use super::{KernelFamily, KernelHyperparams};
use crate::error::{Error, Result};
use crate::linalg::{expm, kron, max_abs, symmetrize, Mat, Vector};

/// Continuous-time LTI model `df = A f dt + L dβ`, `E[dβ²] = Qc dt`, `y = H f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousStateSpace {
    pub a: Mat,
    pub l: Vector,
    pub h: Mat,
    pub qc: f64,
    pub pinf: Mat,
}

/// Discretized model at step `ts`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateSpace {
    pub f: Mat,
    pub q: Mat,
    pub h: Mat,
    pub p0: Mat,
    pub ts: f64,
}

impl ContinuousStateSpace {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Output covariance `H e^{A|τ|} P∞ Hᵀ` at lag `τ`.
    pub fn covariance_at(&self, tau: f64) -> f64 {
        let phi = expm(&(&self.a * tau.abs()));
        (&self.h * phi * &self.pinf * self.h.transpose())[(0, 0)]
    }

    /// `‖A P∞ + P∞ Aᵀ + L Qc Lᵀ‖_max`.
    pub fn lyapunov_residual(&self) -> f64 {
        lyapunov_residual(&self.a, &self.l, self.qc, &self.pinf)
    }
}

impl DiscreteStateSpace {
    pub fn order(&self) -> usize {
        self.f.nrows()
    }
}

/// Companion-form drift for the monic polynomial with coefficients
/// `[a₀, …, a_{s−1}]`, plus the noise-effect column `L = e_s`.
pub fn companion_form(coeffs: &[f64]) -> (Mat, Vector) {
    let s = coeffs.len();
    let mut a = Mat::zeros(s, s);
    for i in 0..s.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    for (j, c) in coeffs.iter().enumerate() {
        a[(s - 1, j)] = -c;
    }
    let mut l = Vector::zeros(s);
    l[s - 1] = 1.0;
    (a, l)
}

fn emission_row(s: usize) -> Mat {
    let mut h = Mat::zeros(1, s);
    h[(0, 0)] = 1.0;
    h
}

/// Exact Matérn 3/2 model with rate `λ = √3/ℓ`.
pub fn matern32_to_cssm(params: &KernelHyperparams) -> Result<ContinuousStateSpace> {
    params.validate()?;
    if params.family != KernelFamily::Matern32 {
        return Err(Error::FamilyMismatch {
            expected: KernelFamily::Matern32,
            actual: params.family,
        });
    }
    let lam = params.matern_rate();
    let (a, l) = companion_form(&[lam * lam, 2.0 * lam]);
    let pinf = Mat::from_diagonal(&Vector::from_vec(vec![
        params.sigma2,
        lam * lam * params.sigma2,
    ]));
    Ok(ContinuousStateSpace {
        a,
        l,
        h: emission_row(2),
        qc: 4.0 * lam.powi(3) * params.sigma2,
        pinf,
    })
}

/// Approximate squared-exponential model of state dimension `order`.
pub fn rbf_to_cssm(params: &KernelHyperparams, order: usize) -> Result<ContinuousStateSpace> {
    check_order(order)?;
    let spec = rbf_spectral_taylor(params, order)?;
    let coeffs = stable_factorization(&spec)?;
    let (a, l) = companion_form(&coeffs);
    let qc = spec.prefactor;
    let pinf = stationary_covariance(&a, &l, qc)?;
    Ok(ContinuousStateSpace {
        a,
        l,
        h: emission_row(order),
        qc,
        pinf,
    })
}

/// Builds the continuous model for any supported family. `rbf_order` is
/// ignored for Matérn kernels.
pub fn kernel_to_cssm(
    params: &KernelHyperparams,
    rbf_order: usize,
) -> Result<ContinuousStateSpace> {
    match params.family {
        KernelFamily::Matern32 => matern32_to_cssm(params),
        KernelFamily::Rbf => rbf_to_cssm(params, rbf_order),
    }
}

fn lyapunov_residual(a: &Mat, l: &Vector, qc: f64, p: &Mat) -> f64 {
    let r = a * p + p * a.transpose() + l * l.transpose() * qc;
    max_abs(&r)
}

/// Solves `A P + P Aᵀ + L Qc Lᵀ = 0` for the stationary covariance.
///
/// Direct solve of the vectorized system `(I⊗A + A⊗I) vec(P) = −vec(L Qc Lᵀ)`
/// followed by one step of iterative refinement when the residual exceeds
/// `1e-8·Qc`. State orders here are at most 6, so the `s²×s²` system is tiny.
pub fn stationary_covariance(a: &Mat, l: &Vector, qc: f64) -> Result<Mat> {
    let s = a.nrows();
    if a.ncols() != s || l.len() != s {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, L has length {}",
            a.nrows(),
            a.ncols(),
            l.len()
        )));
    }
    let max_re = crate::linalg::eigenvalues(a)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_re >= 0.0 {
        return Err(Error::Stability(max_re));
    }
    let eye = Mat::identity(s, s);
    let op = kron(&eye, a) + kron(a, &eye);
    let rhs_mat = -(l * l.transpose() * qc);
    let rhs = Vector::from_column_slice(rhs_mat.as_slice());
    let lu = op.clone().lu();
    let mut x = lu.solve(&rhs).ok_or(Error::Stability(max_re))?;
    let mut p = symmetrize(&Mat::from_column_slice(s, s, x.as_slice()));
    if lyapunov_residual(a, l, qc, &p) > 1e-8 * qc {
        let resid = &rhs - &op * &x;
        if let Some(dx) = lu.solve(&resid) {
            x += dx;
            p = symmetrize(&Mat::from_column_slice(s, s, x.as_slice()));
        }
    }
    Ok(p)
}

/// `F = e^{A·ts}`, `Q = P∞ − F P∞ Fᵀ`, `P0 = P∞`.
pub fn discretize(cssm: &ContinuousStateSpace, ts: f64) -> DiscreteStateSpace {
    let f = expm(&(&cssm.a * ts));
    let q = symmetrize(&(&cssm.pinf - &f * &cssm.pinf * f.transpose()));
    DiscreteStateSpace {
        f,
        q,
        h: cssm.h.clone(),
        p0: cssm.pinf.clone(),
        ts,
    }
}
