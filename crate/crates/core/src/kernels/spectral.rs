use nalgebra::Complex;

use super::{KernelFamily, KernelHyperparams};
use crate::error::{Error, Result};

/// Rational spectral density `S(ω) = prefactor / Σₙ cₙ ω²ⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalSpectralDensity {
    pub prefactor: f64,
    /// `cₙ` for `n = 0..=order`; monic, so `c[order] == 1`.
    pub denom_coeffs: Vec<f64>,
    pub order: usize,
}

impl RationalSpectralDensity {
    pub fn evaluate(&self, omega: f64) -> f64 {
        let w2 = omega * omega;
        let denom = self
            .denom_coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * w2 + c);
        self.prefactor / denom
    }

    /// Coefficients (ascending powers of `x`) of `p(x) = Σₙ cₙ (−1)ⁿ x²ⁿ`,
    /// the denominator after substituting `ω² = −x²`.
    pub fn characteristic_poly(&self) -> Vec<f64> {
        let mut p = vec![0.0; 2 * self.order + 1];
        for (n, c) in self.denom_coeffs.iter().enumerate() {
            p[2 * n] = if n % 2 == 0 { *c } else { -*c };
        }
        p
    }
}

pub(crate) fn check_order(order: usize) -> Result<()> {
    match order {
        2 | 4 | 6 => Ok(()),
        _ => Err(Error::OrderParity(order)),
    }
}

/// Taylor approximation of order `order` to the squared-exponential
/// spectral density `σ²√(π/ζ) exp(−ω²/(4ζ))`, `ζ = 1/(2ℓ²)`.
pub fn rbf_spectral_taylor(
    params: &KernelHyperparams,
    order: usize,
) -> Result<RationalSpectralDensity> {
    params.validate()?;
    if params.family != KernelFamily::Rbf {
        return Err(Error::FamilyMismatch {
            expected: KernelFamily::Rbf,
            actual: params.family,
        });
    }
    check_order(order)?;
    let zeta = 1.0 / (2.0 * params.ell * params.ell);
    let four_zeta = 4.0 * zeta;
    let n_fact = factorial(order);
    let prefactor = params.sigma2
        * n_fact
        * four_zeta.powi(order as i32)
        * (std::f64::consts::PI / zeta).sqrt();
    let denom_coeffs = (0..=order)
        .map(|n| n_fact * four_zeta.powi((order - n) as i32) / factorial(n))
        .collect();
    Ok(RationalSpectralDensity {
        prefactor,
        denom_coeffs,
        order,
    })
}

/// Spectral factorization of the denominator: returns the coefficients
/// `[a₀, …, a_{N−1}]` of the monic degree-`N` polynomial whose roots are
/// the left-half-plane roots of [`RationalSpectralDensity::characteristic_poly`].
pub fn stable_factorization(spec: &RationalSpectralDensity) -> Result<Vec<f64>> {
    let poly = spec.characteristic_poly();
    let roots = polynomial_roots(&poly);
    let mut stable = Vec::with_capacity(spec.order);
    for r in roots {
        if r.re.abs() < 1e-9 {
            return Err(Error::FactorizationDegenerate(r.re));
        }
        if r.re < 0.0 {
            stable.push(r);
        }
    }
    if stable.len() != spec.order {
        return Err(Error::FactorizationDegenerate(0.0));
    }
    // expand Π (x − rᵢ), ascending coefficients
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for r in &stable {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (k, c) in coeffs.iter().enumerate() {
            next[k + 1] += *c;
            next[k] -= *c * r;
        }
        coeffs = next;
    }
    Ok(coeffs[..spec.order].iter().map(|c| c.re).collect())
}

/// All complex roots of a real polynomial (ascending coefficients).
pub(crate) fn polynomial_roots(poly: &[f64]) -> Vec<Complex<f64>> {
    crate::linalg::poly_roots(poly)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}
