//! Evaluation: point accuracy, lane false-positive/negative rates, RMSE and
//! normalized estimation error squared.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// Number of points with `|pred − truth| < threshold`.
pub fn correct_points(pred: &[f64], truth: &[f64], threshold: f64) -> usize {
    pred.iter()
        .zip(truth)
        .filter(|(p, t)| (*p - *t).abs() < threshold)
        .count()
}

/// Fraction of correct points of one predicted curve against one truth.
pub fn lane_accuracy(pred: &[f64], truth: &[f64], threshold: f64) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    correct_points(pred, truth, threshold) as f64 / truth.len() as f64
}

/// One-to-one assignment of predicted to true curves in a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneMatching {
    /// `(prediction, truth, correct points)` for every assigned pair.
    pub pairs: Vec<(usize, usize, usize)>,
    /// Assigned pairs whose lane accuracy reaches the match fraction.
    pub matched: Vec<(usize, usize)>,
}

/// Optimal assignment: maximizes the number of matching pairs (lane
/// accuracy ≥ `match_fraction`), then the total number of correct points.
/// Exact dynamic program over subsets of truths.
pub fn match_lanes(
    preds: &[Vec<f64>],
    truths: &[Vec<f64>],
    threshold: f64,
    match_fraction: f64,
) -> LaneMatching {
    let (p, t) = (preds.len(), truths.len());
    let correct: Vec<Vec<usize>> = preds
        .iter()
        .map(|pr| {
            truths
                .iter()
                .map(|tr| correct_points(pr, tr, threshold))
                .collect()
        })
        .collect();
    let is_match = |i: usize, j: usize| {
        !truths[j].is_empty() && correct[i][j] as f64 >= match_fraction * truths[j].len() as f64
    };
    // score = (matches, correct points); lexicographic
    let states = 1usize << t;
    let neg = (i64::MIN / 4, i64::MIN / 4);
    let mut best = vec![vec![neg; states]; p + 1];
    let mut choice = vec![vec![usize::MAX; states]; p + 1];
    best[p] = vec![(0, 0); states];
    for i in (0..p).rev() {
        for mask in 0..states {
            // prediction i unassigned
            let mut b = best[i + 1][mask];
            let mut c = usize::MAX;
            for j in 0..t {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let rest = best[i + 1][mask | (1 << j)];
                let cand = (
                    rest.0 + is_match(i, j) as i64,
                    rest.1 + correct[i][j] as i64,
                );
                if cand > b {
                    b = cand;
                    c = j;
                }
            }
            best[i][mask] = b;
            choice[i][mask] = c;
        }
    }
    let mut pairs = Vec::new();
    let mut matched = Vec::new();
    let mut mask = 0usize;
    for i in 0..p {
        let j = choice[i][mask];
        if j != usize::MAX {
            pairs.push((i, j, correct[i][j]));
            if is_match(i, j) {
                matched.push((i, j));
            }
            mask |= 1 << j;
        }
    }
    LaneMatching { pairs, matched }
}

/// Correct points over requested (truth) points, accumulated over frames.
/// Each frame is a pair `(predicted curves, true curves)`.
pub fn accuracy(
    frames: &[(Vec<Vec<f64>>, Vec<Vec<f64>>)],
    threshold: f64,
    match_fraction: f64,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut requested = 0usize;
    for (preds, truths) in frames {
        let m = match_lanes(preds, truths, threshold, match_fraction);
        correct += m.pairs.iter().map(|p| p.2).sum::<usize>();
        requested += truths.iter().map(Vec::len).sum::<usize>();
    }
    if requested == 0 {
        return Err(Error::Config("accuracy: ground truth is empty".into()));
    }
    Ok(correct as f64 / requested as f64)
}

/// `(FP, FN) = (unmatched predictions / predictions, unmatched truths / truths)`;
/// an empty denominator gives 0.
pub fn fp_fn(
    preds: &[Vec<f64>],
    truths: &[Vec<f64>],
    threshold: f64,
    match_fraction: f64,
) -> (f64, f64) {
    let m = match_lanes(preds, truths, threshold, match_fraction);
    let k = m.matched.len();
    (
        ratio(preds.len() - k, preds.len()),
        ratio(truths.len() - k, truths.len()),
    )
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// `eᵀP⁻¹e`.
pub fn nees_sample(e: &Vector, p: &Mat) -> Result<f64> {
    if p.nrows() != e.len() || p.ncols() != e.len() {
        return Err(Error::DimensionMismatch(format!(
            "error length {}, covariance {}x{}",
            e.len(),
            p.nrows(),
            p.ncols()
        )));
    }
    let chol = p.clone().cholesky().ok_or(Error::SingularCovariance)?;
    Ok(e.dot(&chol.solve(e)))
}

/// Mean NEES over a sequence of (error, covariance) samples.
pub fn nees(errors: &[Vector], covs: &[Mat]) -> Result<f64> {
    if errors.len() != covs.len() {
        return Err(Error::DimensionMismatch(
            "nees: error and covariance counts differ".into(),
        ));
    }
    if errors.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (e, p) in errors.iter().zip(covs) {
        total += nees_sample(e, p)?;
    }
    Ok(total / errors.len() as f64)
}

/// Two-sided chi-square interval `[q_{(1−c)/2}, q_{(1+c)/2}]` for `dof`.
pub fn chi2_interval(dof: usize, confidence: f64) -> (f64, f64) {
    let chi = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    let a = (1.0 - confidence) / 2.0;
    (chi.inverse_cdf(a), chi.inverse_cdf(1.0 - a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Point threshold; `None` means three times the scenario noise std.
    pub point_threshold: Option<f64>,
    pub match_fraction: f64,
    /// Frames before this one are not scored (track initialization).
    pub start_frame: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            point_threshold: None,
            match_fraction: 0.5,
            start_frame: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    /// Per true target; `None` if it was never matched.
    pub rmse: Vec<Option<f64>>,
    pub mean_nees: Option<f64>,
    pub nees_dim: Option<usize>,
    pub frames_evaluated: usize,
    pub runtime_seconds: f64,
    pub frames_per_second: f64,
}

/// Scores per-frame curve estimates against truth. `preds[k]` and
/// `truths[k]` hold the curves of frame `k`.
pub fn evaluate(
    preds: &[Vec<Vec<f64>>],
    truths: &[Vec<Vec<f64>>],
    threshold: f64,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated frames vs {} truth frames",
            preds.len(),
            truths.len()
        )));
    }
    let d = truths.first().map_or(0, Vec::len);
    let mut correct = 0usize;
    let mut requested = 0usize;
    let (mut fp, mut n_pred, mut fnc, mut n_gt) = (0usize, 0usize, 0usize, 0usize);
    let mut sq = vec![0.0; d];
    let mut cnt = vec![0usize; d];
    let mut frames = 0;
    for (p, t) in preds.iter().zip(truths).skip(cfg.start_frame) {
        frames += 1;
        let m = match_lanes(p, t, threshold, cfg.match_fraction);
        correct += m.pairs.iter().map(|q| q.2).sum::<usize>();
        requested += t.iter().map(Vec::len).sum::<usize>();
        fp += p.len() - m.matched.len();
        n_pred += p.len();
        fnc += t.len() - m.matched.len();
        n_gt += t.len();
        for &(i, j) in &m.matched {
            if j < d {
                for (a, b) in p[i].iter().zip(&t[j]) {
                    sq[j] += (a - b) * (a - b);
                    cnt[j] += 1;
                }
            }
        }
    }
    let accuracy = if requested == 0 {
        0.0
    } else {
        correct as f64 / requested as f64
    };
    Ok(EvalReport {
        accuracy,
        fp_rate: ratio(fp, n_pred),
        fn_rate: ratio(fnc, n_gt),
        rmse: sq
            .iter()
            .zip(&cnt)
            .map(|(s, &c)| (c > 0).then(|| (s / c as f64).sqrt()))
            .collect(),
        mean_nees: None,
        nees_dim: None,
        frames_evaluated: frames,
        runtime_seconds: 0.0,
        frames_per_second: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lane(v: f64, n: usize) -> Vec<f64> {
        vec![v; n]
    }

    #[test]
    fn accuracy_examples() {
        let t = vec![lane(0.0, 10)];
        assert_eq!(accuracy(&[(t.clone(), t.clone())], 0.3, 0.5).unwrap(), 1.0);
        let mut p = lane(0.0, 50);
        for v in p.iter_mut().take(5) {
            *v = 1.0;
        }
        assert!(
            (accuracy(&[(vec![p], vec![lane(0.0, 50)])], 0.3, 0.5).unwrap() - 0.9).abs() < 1e-15
        );
        assert_eq!(
            accuracy(&[(vec![lane(0.6, 10)], t.clone())], 0.3, 0.5).unwrap(),
            0.0
        );
        assert!(accuracy(&[(vec![], vec![])], 0.3, 0.5).is_err());
    }

    #[test]
    fn fp_fn_examples() {
        let truths: Vec<Vec<f64>> = (0..10).map(|i| lane(i as f64, 4)).collect();
        assert_eq!(fp_fn(&truths, &truths, 0.3, 0.5), (0.0, 0.0));
        let mut preds: Vec<Vec<f64>> = (0..8).map(|i| lane(i as f64, 4)).collect();
        preds.push(lane(100.0, 4));
        preds.push(lane(200.0, 4));
        let t8: Vec<Vec<f64>> = (0..8).map(|i| lane(i as f64, 4)).collect();
        assert_eq!(fp_fn(&preds, &t8, 0.3, 0.5), (0.2, 0.0));
        let t4: Vec<Vec<f64>> = (0..4).map(|i| lane(i as f64, 4)).collect();
        assert_eq!(fp_fn(&t4[..3], &t4, 0.3, 0.5), (0.0, 0.25));
        assert_eq!(fp_fn(&[], &[], 0.3, 0.5), (0.0, 0.0));
    }

    #[test]
    fn nees_examples() {
        assert_eq!(
            nees(&[Vector::zeros(2)], &[Mat::identity(2, 2)]).unwrap(),
            0.0
        );
        assert_eq!(
            nees(&[Vector::from_element(1, 1.0)], &[Mat::identity(1, 1)]).unwrap(),
            1.0
        );
        assert!(matches!(
            nees(&[Vector::from_element(1, 1.0)], &[Mat::zeros(1, 1)]),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn chi_square_band_brackets_the_mean() {
        let (lo, hi) = chi2_interval(120, 0.95);
        assert!(lo < 120.0 && hi > 120.0);
        assert!((lo - 91.573).abs() < 0.01 && (hi - 152.211).abs() < 0.01);
    }
}
