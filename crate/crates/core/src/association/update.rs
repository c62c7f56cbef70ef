use super::JointAssociationEvent;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, select_block, select_cols, symmetrize_mut, Mat, Vector};

/// Coupled state update under measurement-origin uncertainty.
///
/// `x`, `p` are the stacked predicted mean and covariance of `n` targets with
/// `s` states each; `h` (1×s) maps a target's state to its measurement and
/// `zhat[t]` is target `t`'s predicted measurement (including any mean
/// offset). Each event `A` contributes the Kalman update obtained with the
/// emission rows of its detected targets; the result is the moment-matched
/// mixture `x⁺ = Σ P(A)·x_A`,
/// `P⁺ = Σ P(A)·(P_A + (x_A − x⁺)(x_A − x⁺)ᵀ)`.
pub fn coupled_update(
    x: &Vector,
    p: &Mat,
    h: &Mat,
    r: f64,
    zs: &[f64],
    zhat: &[f64],
    events: &[JointAssociationEvent],
) -> Result<(Vector, Mat)> {
    let s = h.ncols();
    let dim = x.len();
    if s == 0 || !dim.is_multiple_of(s) || p.nrows() != dim || p.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "state length {dim}, covariance {}x{}, block size {s}",
            p.nrows(),
            p.ncols()
        )));
    }
    let n = dim / s;
    if zhat.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted measurements for {n} targets",
            zhat.len()
        )));
    }
    // P H̄ᵀ, one column per target
    let mut pht = Mat::zeros(dim, n);
    for t in 0..n {
        let col = p.columns(t * s, s) * h.transpose();
        pht.set_column(t, &col.column(0));
    }
    let mut sbar = Mat::zeros(n, n);
    for t in 0..n {
        let row = h * pht.rows(t * s, s);
        for u in 0..n {
            sbar[(t, u)] = row[(0, u)];
        }
        sbar[(t, t)] += r;
    }

    let mut means = Vec::with_capacity(events.len());
    let mut p_acc = Mat::zeros(dim, dim);
    for ev in events {
        let pairs = ev.pairs();
        if pairs.is_empty() {
            means.push(x.clone());
            p_acc += p * ev.posterior;
            continue;
        }
        let targets: Vec<usize> = pairs.iter().map(|q| q.0).collect();
        let v = Vector::from_iterator(pairs.len(), pairs.iter().map(|&(t, j)| zs[j] - zhat[t]));
        let s_a = select_block(&sbar, &targets, &targets);
        let chol = s_a.cholesky().ok_or(Error::DegenerateLikelihood)?;
        let pht_a = select_cols(&pht, &targets);
        // K_A = P H_Aᵀ S_A⁻¹
        let k = chol.solve(&pht_a.transpose()).transpose();
        means.push(x + &k * v);
        p_acc += (p - &k * pht_a.transpose()) * ev.posterior;
    }
    let mut x_new = Vector::zeros(dim);
    for (ev, m) in events.iter().zip(&means) {
        x_new += m * ev.posterior;
    }
    for (ev, m) in events.iter().zip(&means) {
        let d = m - &x_new;
        p_acc += &d * d.transpose() * ev.posterior;
    }
    symmetrize_mut(&mut p_acc);
    let tr = p_acc.trace();
    let min_eig = min_eigenvalue(&p_acc);
    if min_eig < -1e-9 * tr.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::UpdateInconsistency(min_eig));
    }
    Ok((x_new, p_acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::{enumerate_events, ValidationMatrix};

    fn h2() -> Mat {
        Mat::from_row_slice(1, 2, &[1.0, 0.0])
    }

    #[test]
    fn clutter_only_event_leaves_state_unchanged() {
        let x = Vector::from_column_slice(&[0.3, -0.1]);
        let p = Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let mut ev = enumerate_events(&ValidationMatrix::new(2, 1), 10).unwrap();
        ev[0].posterior = 1.0;
        let (xn, pn) = coupled_update(&x, &p, &h2(), 0.1, &[5.0, 6.0], &[0.3], &ev).unwrap();
        assert_eq!(xn, x);
        assert_eq!(pn, p);
    }

    #[test]
    fn mixture_with_two_measurements_matches_weighted_moments() {
        let x = Vector::from_column_slice(&[0.0, 1.0]);
        let p = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = 0.5;
        let zs = [0.4, -0.9];
        let mut ev =
            enumerate_events(&ValidationMatrix::from_rows(&[vec![true], vec![true]]), 10).unwrap();
        let w = [0.2, 0.5, 0.3];
        for (e, wi) in ev.iter_mut().zip(w) {
            e.posterior = wi;
        }
        let (xn, pn) = coupled_update(&x, &p, &h2(), r, &zs, &[0.0], &ev).unwrap();
        // classical PDA form
        let s = p[(0, 0)] + r;
        let k = p.column(0) / s;
        let b0 = ev.iter().find(|e| e.phi == 2).unwrap().posterior;
        let b = |j: usize| {
            ev.iter()
                .find(|e| e.assignment[j] == Some(0))
                .unwrap()
                .posterior
        };
        let vbar = b(0) * zs[0] + b(1) * zs[1];
        let x_ref = &x + &k * vbar;
        let spread = b(0) * zs[0] * zs[0] + b(1) * zs[1] * zs[1] - vbar * vbar;
        let pc = &p - &k * k.transpose() * s;
        let p_ref = &p * b0 + &pc * (1.0 - b0) + &k * k.transpose() * spread;
        assert!((xn - x_ref).amax() < 1e-12);
        assert!((pn - p_ref).amax() < 1e-12);
    }
}
