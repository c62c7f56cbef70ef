//! Dense linear-algebra helpers shared by the filters.

use nalgebra::{Cholesky, Complex, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

pub fn symmetrize(p: &Mat) -> Mat {
    (p + p.transpose()) * 0.5
}

pub fn symmetrize_mut(p: &mut Mat) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue(p: &Mat) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    symmetrize(p)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Cholesky factorization with the escalating jitter schedule: first
/// `base` (relative to the mean diagonal), then ×10 up to three more times.
pub fn cholesky_jittered(k: &Mat, base: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    if let Some(c) = k.clone().cholesky() {
        return Ok((c, 0.0));
    }
    let scale = (k.trace() / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = base * scale;
    for _ in 0..4 {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = kj.cholesky() {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Conditioning)
}

pub fn log_det_cholesky(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Log density of a zero-mean Gaussian with covariance `cov`, evaluated at `r`.
pub fn gaussian_log_density(r: &Vector, cov: &Mat) -> Option<f64> {
    let chol = cov.clone().cholesky()?;
    let alpha = chol.solve(r);
    let quad = r.dot(&alpha);
    Some(-0.5 * (quad + log_det_cholesky(&chol) + r.len() as f64 * LN_2PI))
}

/// Symmetric square root factor `S` with `S Sᵀ = p`, clamping tiny negative
/// eigenvalues to zero. Used for sampling from near-singular covariances.
pub fn psd_factor(p: &Mat) -> Mat {
    let eig = symmetrize(p).symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&sqrt_vals)
}

/// Solves `X a = b` for `X` (i.e. `X = b a⁻¹`) with `a` SPD, through the
/// transposed system `a Xᵀ = bᵀ`.
pub fn right_solve_spd(b: &Mat, a: &Mat) -> Option<Mat> {
    let chol = a.clone().cholesky()?;
    Some(chol.solve(&b.transpose()).transpose())
}

pub fn select_rows(m: &Mat, rows: &[usize]) -> Mat {
    Mat::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_cols(m: &Mat, cols: &[usize]) -> Mat {
    Mat::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

pub fn select_block(m: &Mat, rows: &[usize], cols: &[usize]) -> Mat {
    Mat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_entries(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Matrix exponential (scaling and squaring with Padé approximants).
pub fn expm(a: &Mat) -> Mat {
    a.clone().exp()
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Roots of a real polynomial given by ascending coefficients (nonzero
/// leading term), by Aberth–Ehrlich simultaneous iteration.
pub fn poly_roots(poly: &[f64]) -> Vec<Complex<f64>> {
    let mut p = poly.to_vec();
    while p.len() > 1 && p[p.len() - 1] == 0.0 {
        p.pop();
    }
    let deg = p.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = p[deg];
    let monic: Vec<f64> = p.iter().map(|c| c / lead).collect();
    let radius = monic[..deg]
        .iter()
        .fold(0.0_f64, |m, c| m.max(c.abs()))
        .max(1e-300);
    // start on a circle between the geometric-mean modulus and the Cauchy bound
    let r0 = if monic[0] != 0.0 {
        monic[0].abs().powf(1.0 / deg as f64)
    } else {
        radius.min(1.0)
    };
    let mut z: Vec<Complex<f64>> = (0..deg)
        .map(|k| {
            let ang = std::f64::consts::TAU * k as f64 / deg as f64 + 0.4;
            Complex::from_polar(r0, ang)
        })
        .collect();
    for _ in 0..500 {
        let mut moved = 0.0_f64;
        for k in 0..deg {
            let (v, dv) = horner(&monic, z[k]);
            if v.norm() == 0.0 {
                continue;
            }
            let ratio = v / dv;
            let mut sum = Complex::new(0.0, 0.0);
            for j in 0..deg {
                if j != k {
                    sum += (z[k] - z[j]).inv();
                }
            }
            let w = ratio / (Complex::new(1.0, 0.0) - ratio * sum);
            if w.is_finite() {
                z[k] -= w;
                moved = moved.max(w.norm() / z[k].norm().max(1e-300));
            }
        }
        if moved < 1e-15 {
            break;
        }
    }
    z
}

fn horner(p: &[f64], z: Complex<f64>) -> (Complex<f64>, Complex<f64>) {
    p.iter().rev().fold(
        (Complex::new(0.0, 0.0), Complex::new(0.0, 0.0)),
        |(v, dv), &c| (v * z + c, dv * z + v),
    )
}

/// Characteristic polynomial `det(xI − A)`, ascending coefficients
/// (Faddeev–LeVerrier; intended for small matrices).
pub fn char_poly(a: &Mat) -> Vec<f64> {
    let n = a.nrows();
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let eye = Mat::identity(n, n);
    let mut m = Mat::zeros(n, n);
    for k in 1..=n {
        m = a * &m + &eye * c[n - k + 1];
        c[n - k] = -(a * &m).trace() / k as f64;
    }
    c
}

/// Eigenvalues of a small square matrix as roots of its characteristic
/// polynomial.
pub fn eigenvalues(a: &Mat) -> Vec<Complex<f64>> {
    poly_roots(&char_poly(a))
}
