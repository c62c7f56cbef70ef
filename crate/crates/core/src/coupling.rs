//! Coregionalized coupling of dependent targets.
//!
//! State ordering is target-major, then index point, then derivative:
//! entry `(d, i, r)` of the stacked vector lives at `(d·N + i)·s + r`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::DiscreteStateSpace;
use crate::linalg::{kron, min_eigenvalue, Mat, Vector};

/// Symmetric PSD `D×D` dependency matrix between target outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CoregionalizationMatrix {
    b: Mat,
}

impl CoregionalizationMatrix {
    pub fn new(b: Mat) -> Result<Self> {
        let d = b.nrows();
        if d == 0 || b.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "coregionalization matrix must be square and non-empty, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "coregionalization matrix has non-finite entries".into(),
            ));
        }
        for i in 0..d {
            if b[(i, i)] <= 0.0 {
                return Err(Error::Config(format!(
                    "B[{i},{i}] = {} must be > 0",
                    b[(i, i)]
                )));
            }
            for j in 0..i {
                if b[(i, j)] != b[(j, i)] {
                    return Err(Error::Config(format!("B is not symmetric at ({i},{j})")));
                }
            }
        }
        let min_eig = min_eigenvalue(&b);
        if min_eig < -1e-10 * b.trace() {
            return Err(Error::Config(format!(
                "B is not PSD (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { b })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            b: Mat::identity(d, d),
        }
    }

    /// Rank-one `a aᵀ`.
    pub fn rank_one(a: &[f64]) -> Result<Self> {
        let v = Vector::from_column_slice(a);
        Self::new(&v * v.transpose())
    }

    /// `L Lᵀ` from a lower-triangular factor (upper part ignored).
    pub fn from_cholesky(l: &Mat) -> Result<Self> {
        let lower = l.lower_triangle();
        let mut b = &lower * lower.transpose();
        crate::linalg::symmetrize_mut(&mut b);
        Self::new(b)
    }

    /// Equal variances and equal pairwise correlation. `corr` is clamped to
    /// the PSD range `[−1/(d−1), 1]`.
    pub fn exchangeable(d: usize, variance: f64, corr: f64) -> Self {
        let lo = if d > 1 { -1.0 / (d as f64 - 1.0) } else { -1.0 };
        let c = corr.clamp(lo, 1.0);
        let b = Mat::from_fn(d, d, |i, j| if i == j { variance } else { variance * c });
        Self { b }
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.b
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.b[(i, j)] / (self.b[(i, i)] * self.b[(j, j)]).sqrt()
    }

    pub fn mean_variance(&self) -> f64 {
        self.b.trace() / self.dim() as f64
    }

    pub fn mean_correlation(&self) -> f64 {
        let d = self.dim();
        if d < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..d {
            for j in 0..i {
                sum += self.correlation(i, j);
            }
        }
        sum / (d * (d - 1) / 2) as f64
    }

    /// The matrix to use for `n` tracks: itself when `n` matches, otherwise
    /// the exchangeable matrix with this matrix's mean variance and mean
    /// correlation.
    pub fn resized(&self, n: usize) -> Self {
        if n == self.dim() {
            self.clone()
        } else {
            Self::exchangeable(n, self.mean_variance(), self.mean_correlation())
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for CoregionalizationMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(
                "coregionalization rows are ragged".into(),
            ));
        }
        Self::new(Mat::from_fn(d, d, |i, j| rows[i][j]))
    }
}

impl From<CoregionalizationMatrix> for Vec<Vec<f64>> {
    fn from(b: CoregionalizationMatrix) -> Self {
        crate::io::matrix_rows(&b.b)
    }
}

/// `B ⊗ K_u`.
pub fn coupled_kernel(b: &CoregionalizationMatrix, ku: &Mat) -> Result<Mat> {
    if ku.nrows() != ku.ncols() || ku.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "spatial Gram matrix must be square, got {}x{}",
            ku.nrows(),
            ku.ncols()
        )));
    }
    Ok(kron(b.matrix(), ku))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedModel {
    pub d: usize,
    pub n: usize,
    pub s: usize,
    pub fbar: Mat,
    pub qbar: Mat,
    pub hbar: Mat,
    pub pbar0: Mat,
    pub index_points: Vec<f64>,
    /// Per-block transition `F`, kept for blockwise propagation.
    pub f_block: Mat,
}

impl StackedModel {
    pub fn dim(&self) -> usize {
        self.d * self.n * self.s
    }

    /// Position of `(target, index point, derivative)` in the stacked vector.
    pub fn offset(&self, target: usize, point: usize, deriv: usize) -> usize {
        (target * self.n + point) * self.s + deriv
    }

    /// `F̄ P F̄ᵀ` computed one `s×s` block at a time (`F̄ = I ⊗ F`).
    pub fn propagate_covariance(&self, p: &Mat) -> Mat {
        propagate_blockwise(p, &self.f_block)
    }

    pub fn propagate_mean(&self, x: &Vector) -> Vector {
        let s = self.s;
        let mut out = Vector::zeros(x.len());
        for b in 0..x.len() / s {
            let seg = &self.f_block * x.rows(b * s, s);
            out.rows_mut(b * s, s).copy_from(&seg);
        }
        out
    }
}

/// `(I ⊗ F) P (I ⊗ F)ᵀ` with `F` of size `s×s`, blockwise.
pub fn propagate_blockwise(p: &Mat, f: &Mat) -> Mat {
    let s = f.nrows();
    let nb = p.nrows() / s;
    let ft = f.transpose();
    let mut out = Mat::zeros(p.nrows(), p.ncols());
    for bi in 0..nb {
        for bj in 0..nb {
            let blk = p.view((bi * s, bj * s), (s, s));
            let r = f * blk * &ft;
            out.view_mut((bi * s, bj * s), (s, s)).copy_from(&r);
        }
    }
    out
}

/// Assembles the stacked model for `d` targets over the `N` index points
/// of `ku`: `F̄ = I_D ⊗ I_N ⊗ F`, `Q̄ = (B ⊗ K_u) ⊗ Q`, `H̄ = I_D ⊗ I_N ⊗ H`,
/// `P̄0 = (B ⊗ K_u) ⊗ P0`.
pub fn stack_model(
    d: usize,
    dssm: &DiscreteStateSpace,
    b: &CoregionalizationMatrix,
    ku: &Mat,
    index_points: &[f64],
) -> Result<StackedModel> {
    if b.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "B is {}x{} but D = {d}",
            b.dim(),
            b.dim()
        )));
    }
    let n = ku.nrows();
    if index_points.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} index points for a {n}x{n} Gram matrix",
            index_points.len()
        )));
    }
    let s = dssm.order();
    let spatial = coupled_kernel(b, ku)?;
    let eye = Mat::identity(d * n, d * n);
    Ok(StackedModel {
        d,
        n,
        s,
        fbar: kron(&eye, &dssm.f),
        qbar: kron(&spatial, &dssm.q),
        hbar: kron(&eye, &dssm.h),
        pbar0: kron(&spatial, &dssm.p0),
        index_points: index_points.to_vec(),
        f_block: dssm.f.clone(),
    })
}

/// Concatenates per-target state vectors in target order.
pub fn stack_states(states: &[Vector]) -> Result<Vector> {
    let Some(first) = states.first() else {
        return Ok(Vector::zeros(0));
    };
    let len = first.len();
    if states.iter().any(|x| x.len() != len) {
        return Err(Error::DimensionMismatch("ragged per-target states".into()));
    }
    Ok(Vector::from_iterator(
        len * states.len(),
        states.iter().flat_map(|x| x.iter().copied()),
    ))
}

pub fn unstack_states(x: &Vector, d: usize) -> Result<Vec<Vector>> {
    if d == 0 || !x.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch(format!(
            "cannot split length {} into {d} targets",
            x.len()
        )));
    }
    let len = x.len() / d;
    Ok((0..d).map(|t| x.rows(t * len, len).into_owned()).collect())
}
