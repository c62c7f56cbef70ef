//! Stationary covariance functions and their state-space representations.
//!
//! A stationary kernel `k(τ)` whose spectral density is (or is approximated
//! by) a rational function in `ω²` is the output covariance of a linear SDE
//! `df = A f dt + L dβ`, `y = H f`. This module builds `(A, L, H, Qc, P∞)`
//! for the Matérn 3/2 kernel exactly and for the squared-exponential kernel
//! through a Taylor expansion of its spectral density, then discretizes the
//! model for a given step.

mod spectral;
mod statespace;

pub use spectral::{rbf_spectral_taylor, stable_factorization, RationalSpectralDensity};
pub use statespace::{
    companion_form, discretize, kernel_to_cssm, matern32_to_cssm, rbf_to_cssm,
    stationary_covariance, ContinuousStateSpace, DiscreteStateSpace,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Rbf,
    Matern32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelHyperparams {
    pub family: KernelFamily,
    /// Signal variance.
    pub sigma2: f64,
    /// Length scale.
    pub ell: f64,
}

impl KernelHyperparams {
    pub fn new(family: KernelFamily, sigma2: f64, ell: f64) -> Result<Self> {
        let p = Self {
            family,
            sigma2,
            ell,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn rbf(sigma2: f64, ell: f64) -> Result<Self> {
        Self::new(KernelFamily::Rbf, sigma2, ell)
    }

    pub fn matern32(sigma2: f64, ell: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern32, sigma2, ell)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.sigma2) || !ok(self.ell) {
            return Err(Error::InvalidHyperparams(format!(
                "sigma2 = {}, ell = {} (both must be finite and > 0)",
                self.sigma2, self.ell
            )));
        }
        Ok(())
    }

    /// Matérn 3/2 rate `√3/ℓ`.
    pub fn matern_rate(&self) -> f64 {
        3.0_f64.sqrt() / self.ell
    }
}

/// Evaluates `k(τ)`.
pub fn eval_kernel(params: &KernelHyperparams, tau: f64) -> f64 {
    match params.family {
        KernelFamily::Rbf => params.sigma2 * (-0.5 * tau * tau / (params.ell * params.ell)).exp(),
        KernelFamily::Matern32 => {
            let a = params.matern_rate() * tau.abs();
            params.sigma2 * (1.0 + a) * (-a).exp()
        }
    }
}

/// Derivative of `k(τ)` with respect to `log ℓ`.
pub fn eval_kernel_dlog_ell(params: &KernelHyperparams, tau: f64) -> f64 {
    match params.family {
        KernelFamily::Rbf => {
            let r2 = tau * tau / (params.ell * params.ell);
            params.sigma2 * (-0.5 * r2).exp() * r2
        }
        KernelFamily::Matern32 => {
            let a = params.matern_rate() * tau.abs();
            params.sigma2 * a * a * (-a).exp()
        }
    }
}

/// Cross-covariance matrix `K[i, j] = k(us[i] − vs[j])`.
pub fn gram(params: &KernelHyperparams, us: &[f64], vs: &[f64]) -> Mat {
    Mat::from_fn(us.len(), vs.len(), |i, j| {
        eval_kernel(params, us[i] - vs[j])
    })
}

/// Gram matrix with the standard `1e-9·σ²` diagonal jitter applied.
pub fn gram_jittered(params: &KernelHyperparams, us: &[f64]) -> Mat {
    let mut k = gram(params, us, us);
    for i in 0..us.len() {
        k[(i, i)] += GRAM_JITTER * params.sigma2;
    }
    k
}

pub const GRAM_JITTER: f64 = 1e-9;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_values_at_zero_equal_signal_variance() {
        let rbf = KernelHyperparams::rbf(1.0, 1.0).unwrap();
        let mat = KernelHyperparams::matern32(1.0, 1.0).unwrap();
        assert_eq!(eval_kernel(&rbf, 0.0), 1.0);
        assert_eq!(eval_kernel(&mat, 0.0), 1.0);
    }

    #[test]
    fn rbf_value_at_unit_lag() {
        let p = KernelHyperparams::rbf(2.0, 1.0).unwrap();
        // 2·e^{-1/2}
        assert!((eval_kernel(&p, 1.0) - 1.213_061_319_425_267).abs() < 1e-12);
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        assert!(KernelHyperparams::rbf(0.0, 1.0).is_err());
        assert!(KernelHyperparams::rbf(1.0, -1.0).is_err());
        assert!(KernelHyperparams::matern32(f64::NAN, 1.0).is_err());
        assert!(KernelHyperparams::matern32(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn length_scale_derivative_matches_finite_difference() {
        for family in [KernelFamily::Rbf, KernelFamily::Matern32] {
            let p = KernelHyperparams::new(family, 1.3, 0.7).unwrap();
            let h: f64 = 1e-6;
            for tau in [0.0, 0.3, 1.1, -2.0] {
                let up = KernelHyperparams {
                    ell: p.ell * h.exp(),
                    ..p
                };
                let dn = KernelHyperparams {
                    ell: p.ell * (-h).exp(),
                    ..p
                };
                let fd = (eval_kernel(&up, tau) - eval_kernel(&dn, tau)) / (2.0 * h);
                assert!((fd - eval_kernel_dlog_ell(&p, tau)).abs() < 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(sigma2 in 0.01f64..10.0, ell in 0.05f64..10.0, tau in -20.0f64..20.0) {
            for family in [KernelFamily::Rbf, KernelFamily::Matern32] {
                let p = KernelHyperparams::new(family, sigma2, ell).unwrap();
                prop_assert_eq!(eval_kernel(&p, tau), eval_kernel(&p, -tau));
            }
        }

        #[test]
        fn gram_is_psd(sigma2 in 0.1f64..5.0, ell in 0.1f64..5.0, pts in proptest::collection::vec(-10.0f64..10.0, 20)) {
            for family in [KernelFamily::Rbf, KernelFamily::Matern32] {
                let p = KernelHyperparams::new(family, sigma2, ell).unwrap();
                let k = gram(&p, &pts, &pts);
                prop_assert!(crate::linalg::min_eigenvalue(&k) >= -1e-9 * sigma2);
            }
        }
    }
}
