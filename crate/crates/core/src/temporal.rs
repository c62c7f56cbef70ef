//! Between-frame Kalman filtering of the stacked extended-target state.

use crate::coupling::{propagate_blockwise, StackedModel};
use crate::error::{Error, Result};
use crate::linalg::{select_block, select_cols, symmetrize_mut, Mat, Vector};

/// `x⁺ = F̄x`, `P⁺ = F̄PF̄ᵀ + Q̄`, exploiting `F̄ = I ⊗ F`.
pub fn predict(x: &Vector, p: &Mat, model: &StackedModel) -> Result<(Vector, Mat)> {
    let dim = model.dim();
    if x.len() != dim || p.nrows() != dim || p.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "state length {}, covariance {}x{}, model dimension {dim}",
            x.len(),
            p.nrows(),
            p.ncols()
        )));
    }
    let xn = model.propagate_mean(x);
    let mut pn = propagate_blockwise(p, &model.f_block) + &model.qbar;
    symmetrize_mut(&mut pn);
    Ok((xn, pn))
}

/// Standard Kalman update with a dense emission matrix.
pub fn update(x: &Vector, p: &Mat, z: &Vector, r: &Mat, h: &Mat) -> Result<(Vector, Mat)> {
    let dim = x.len();
    let m = z.len();
    if p.nrows() != dim || h.ncols() != dim || h.nrows() != m || r.nrows() != m || r.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "update: state {dim}, H {}x{}, R {}x{}, z {m}",
            h.nrows(),
            h.ncols(),
            r.nrows(),
            r.ncols()
        )));
    }
    if m == 0 {
        return Ok((x.clone(), p.clone()));
    }
    let pht = p * h.transpose();
    let s = h * &pht + r;
    let chol = s.clone().cholesky().ok_or(Error::UpdateDegenerate)?;
    let k = chol.solve(&pht.transpose()).transpose();
    let v = z - h * x;
    let xn = x + &k * v;
    let mut pn = p - &k * s * k.transpose();
    symmetrize_mut(&mut pn);
    Ok((xn, pn))
}

/// Update with some measurement rows absent: rows of `h`, `z`, `r` whose
/// entry in `z` is `None` are dropped before the standard update.
pub fn missing_update(
    x: &Vector,
    p: &Mat,
    z: &[Option<f64>],
    r: &Mat,
    h: &Mat,
) -> Result<(Vector, Mat)> {
    let present: Vec<usize> = (0..z.len()).filter(|&i| z[i].is_some()).collect();
    if h.nrows() != z.len() || r.nrows() != z.len() {
        return Err(Error::DimensionMismatch(
            "missing_update: row counts disagree".into(),
        ));
    }
    let zs = Vector::from_iterator(present.len(), present.iter().map(|&i| z[i].unwrap_or(0.0)));
    let rs = select_block(r, &present, &present);
    let hs = Mat::from_fn(present.len(), h.ncols(), |i, j| h[(present[i], j)]);
    update(x, p, &zs, &rs, &hs)
}

/// Update for observations of individual state entries: each item is
/// `(state index, value, noise variance)`, noise independent across items.
pub fn update_entries(x: &Vector, p: &Mat, obs: &[(usize, f64, f64)]) -> Result<(Vector, Mat)> {
    if obs.is_empty() {
        return Ok((x.clone(), p.clone()));
    }
    if obs.iter().any(|o| o.0 >= x.len()) {
        return Err(Error::DimensionMismatch(
            "observed entry outside the state".into(),
        ));
    }
    let idx: Vec<usize> = obs.iter().map(|o| o.0).collect();
    let pht = select_cols(p, &idx);
    let mut s = select_block(p, &idx, &idx);
    for (i, o) in obs.iter().enumerate() {
        s[(i, i)] += o.2;
    }
    let chol = s.cholesky().ok_or(Error::UpdateDegenerate)?;
    let v = Vector::from_iterator(obs.len(), obs.iter().map(|o| o.1 - x[o.0]));
    let k = chol.solve(&pht.transpose()).transpose();
    let xn = x + &k * v;
    let mut pn = p - &k * pht.transpose();
    symmetrize_mut(&mut pn);
    Ok((xn, pn))
}
