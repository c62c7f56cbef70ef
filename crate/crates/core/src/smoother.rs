//! Fixed-lag Rauch–Tung–Striebel smoothing over a bounded filter history.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{symmetrize_mut, Mat, Vector};

/// One filter step: the filtered moments at `k` and, once the next
/// prediction is known, `x_{k+1|k}`, `P_{k+1|k}` and the transition `F_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub x_filt: Vector,
    pub p_filt: Mat,
    pub next: Option<Prediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub x_pred: Vector,
    pub p_pred: Mat,
    pub f: Mat,
}

/// Ring buffer of the most recent `capacity` filter steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterHistory {
    capacity: usize,
    entries: VecDeque<HistoryEntry>,
}

impl FilterHistory {
    /// A history sized for fixed-lag smoothing with lag `lag` (capacity
    /// `lag + 1`).
    pub fn for_lag(lag: usize) -> Self {
        Self {
            capacity: lag + 1,
            entries: VecDeque::with_capacity(lag + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Records the prediction made from the newest entry.
    pub fn set_prediction(&mut self, x_pred: Vector, p_pred: Mat, f: Mat) {
        if let Some(last) = self.entries.back_mut() {
            last.next = Some(Prediction { x_pred, p_pred, f });
        }
    }

    /// Appends a filtered step, evicting the oldest entry when full. Returns
    /// the evicted entry.
    pub fn push(&mut self, x_filt: Vector, p_filt: Mat) -> Option<HistoryEntry> {
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(HistoryEntry {
            x_filt,
            p_filt,
            next: None,
        });
        evicted
    }
}

/// Backward RTS pass over the last `lag + 1` entries of `history`. Returns
/// smoothed `(x̃, P̃)` oldest first; the newest equals its filtered value.
pub fn fixed_lag_smooth(history: &FilterHistory, lag: usize) -> Result<Vec<(Vector, Mat)>> {
    let len = history.len();
    if len == 0 {
        return Err(Error::DimensionMismatch("empty filter history".into()));
    }
    let start = len - (lag + 1).min(len);
    let window: Vec<&HistoryEntry> = history.entries.iter().skip(start).collect();
    rts(&window, start)
}

/// Full-interval RTS smoother over a sequence of entries.
pub fn rts_smooth(entries: &[HistoryEntry]) -> Result<Vec<(Vector, Mat)>> {
    let window: Vec<&HistoryEntry> = entries.iter().collect();
    rts(&window, 0)
}

fn rts(window: &[&HistoryEntry], base: usize) -> Result<Vec<(Vector, Mat)>> {
    let last = window.len() - 1;
    let mut out = vec![(Vector::zeros(0), Mat::zeros(0, 0)); window.len()];
    out[last] = (window[last].x_filt.clone(), window[last].p_filt.clone());
    for k in (0..last).rev() {
        let e = window[k];
        let pred = e.next.as_ref().ok_or_else(|| {
            Error::DimensionMismatch(format!("history entry {} lacks its prediction", base + k))
        })?;
        // G = P_{k|k} Fᵀ P_{k+1|k}⁻¹, via P_{k+1|k} Gᵀ = F P_{k|k}
        let rhs = &pred.f * &e.p_filt;
        let gt = match pred.p_pred.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => pred
                .p_pred
                .clone()
                .lu()
                .solve(&rhs)
                .ok_or(Error::SmootherDegenerate(base + k))?,
        };
        if gt.iter().any(|v| !v.is_finite()) {
            return Err(Error::SmootherDegenerate(base + k));
        }
        let g = gt.transpose();
        let (xs_next, ps_next) = &out[k + 1];
        let x = &e.x_filt + &g * (xs_next - &pred.x_pred);
        let mut p = &e.p_filt + &g * (ps_next - &pred.p_pred) * g.transpose();
        symmetrize_mut(&mut p);
        out[k] = (x, p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_history(lag: usize, steps: usize) -> FilterHistory {
        // scalar random constant observed with unit noise, F = 1, Q = 0
        let mut h = FilterHistory::for_lag(lag);
        let (mut x, mut p) = (0.0, 10.0);
        for k in 0..steps {
            let z = 1.0 + 0.1 * k as f64;
            if k > 0 {
                h.set_prediction(
                    Vector::from_element(1, x),
                    Mat::from_element(1, 1, p),
                    Mat::identity(1, 1),
                );
            }
            let kg = p / (p + 1.0);
            x += kg * (z - x);
            p -= kg * p;
            h.push(Vector::from_element(1, x), Mat::from_element(1, 1, p));
        }
        h
    }

    #[test]
    fn lag_zero_is_filtered() {
        let h = static_history(0, 5);
        let out = fixed_lag_smooth(&h, 0).unwrap();
        let last = h.entries().last().unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, last.x_filt);
        assert_eq!(out[0].1, last.p_filt);
    }

    #[test]
    fn static_system_smooths_to_final_estimate() {
        let h = static_history(4, 9);
        let out = fixed_lag_smooth(&h, 4).unwrap();
        let fin = out.last().unwrap().0[0];
        for (x, p) in &out {
            assert!((x[0] - fin).abs() < 1e-10);
            assert!(p[(0, 0)] > 0.0);
        }
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut h = FilterHistory::for_lag(2);
        for k in 0..5 {
            let ev = h.push(Vector::from_element(1, k as f64), Mat::identity(1, 1));
            assert_eq!(ev.is_some(), k >= 3);
        }
        assert_eq!(h.len(), 3);
        assert_eq!(h.entries().next().unwrap().x_filt[0], 2.0);
    }

    #[test]
    fn singular_prediction_is_reported() {
        let mut h = FilterHistory::for_lag(1);
        h.push(Vector::zeros(2), Mat::identity(2, 2));
        h.set_prediction(Vector::zeros(2), Mat::zeros(2, 2), Mat::identity(2, 2));
        h.push(Vector::zeros(2), Mat::identity(2, 2));
        assert!(matches!(
            fixed_lag_smooth(&h, 1),
            Err(Error::SmootherDegenerate(0))
        ));
    }
}
