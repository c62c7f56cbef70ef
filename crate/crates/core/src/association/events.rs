use statrs::function::factorial::ln_factorial;

use super::AssociationConfig;
use crate::error::{Error, Result};
use crate::linalg::{gaussian_log_density, select_block, Mat, Vector};

/// Boolean gate outcomes, `m` measurements × `n` targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationMatrix {
    m: usize,
    n: usize,
    cells: Vec<bool>,
}

impl ValidationMatrix {
    pub fn new(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            cells: vec![false; m * n],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let mut v = Self::new(m, n);
        for (j, r) in rows.iter().enumerate() {
            for (t, &b) in r.iter().enumerate().take(n) {
                v.set(j, t, b);
            }
        }
        v
    }

    pub fn measurements(&self) -> usize {
        self.m
    }

    pub fn targets(&self) -> usize {
        self.n
    }

    pub fn get(&self, j: usize, t: usize) -> bool {
        self.cells[j * self.n + t]
    }

    pub fn set(&mut self, j: usize, t: usize, v: bool) {
        self.cells[j * self.n + t] = v;
    }

    /// Measurements validated by at least one target.
    pub fn validated(&self) -> Vec<usize> {
        (0..self.m)
            .filter(|&j| (0..self.n).any(|t| self.get(j, t)))
            .collect()
    }

    /// Restriction to the given measurement rows.
    pub fn rows(&self, rows: &[usize]) -> Self {
        let mut v = Self::new(rows.len(), self.n);
        for (k, &j) in rows.iter().enumerate() {
            for t in 0..self.n {
                v.set(k, t, self.get(j, t));
            }
        }
        v
    }
}

/// One feasible joint assignment of measurements to targets or clutter.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAssociationEvent {
    /// Target index for each measurement, `None` for clutter.
    pub assignment: Vec<Option<usize>>,
    /// Detection indicator for each target.
    pub delta: Vec<bool>,
    /// Number of clutter measurements.
    pub phi: usize,
    pub posterior: f64,
}

impl JointAssociationEvent {
    pub fn detected(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }

    /// Detected targets in ascending order, paired with their measurement.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut p: Vec<(usize, usize)> = self
            .assignment
            .iter()
            .enumerate()
            .filter_map(|(j, t)| t.map(|t| (t, j)))
            .collect();
        p.sort_unstable();
        p
    }
}

/// Squared-Mahalanobis gating of scalar measurements. `s_diag[t]` is target
/// `t`'s innovation variance.
pub fn gate(zs: &[f64], zhat: &[f64], s_diag: &[f64], gamma: f64) -> Result<ValidationMatrix> {
    if zhat.len() != s_diag.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted measurements, {} innovation variances",
            zhat.len(),
            s_diag.len()
        )));
    }
    for (t, s) in s_diag.iter().enumerate() {
        if !(*s > 0.0 && s.is_finite()) {
            return Err(Error::GatingDegenerate { target: t });
        }
    }
    let mut v = ValidationMatrix::new(zs.len(), zhat.len());
    for (j, z) in zs.iter().enumerate() {
        for t in 0..zhat.len() {
            let r = z - zhat[t];
            v.set(j, t, r * r / s_diag[t] < gamma);
        }
    }
    Ok(v)
}

/// All feasible events for a validation matrix, in depth-first order
/// (clutter first, then targets ascending, per measurement).
pub fn enumerate_events(v: &ValidationMatrix, cap: usize) -> Result<Vec<JointAssociationEvent>> {
    let (m, n) = (v.measurements(), v.targets());
    let mut out = Vec::new();
    let mut used = vec![false; n];
    let mut assignment = Vec::with_capacity(m);
    descend(v, 0, &mut used, &mut assignment, &mut out, cap)?;
    Ok(out)
}

fn descend(
    v: &ValidationMatrix,
    j: usize,
    used: &mut [bool],
    assignment: &mut Vec<Option<usize>>,
    out: &mut Vec<JointAssociationEvent>,
    cap: usize,
) -> Result<()> {
    if j == v.measurements() {
        if out.len() >= cap {
            return Err(Error::CombinatorialBlowup { cap });
        }
        let phi = assignment.iter().filter(|a| a.is_none()).count();
        out.push(JointAssociationEvent {
            assignment: assignment.clone(),
            delta: used.to_vec(),
            phi,
            posterior: 0.0,
        });
        return Ok(());
    }
    assignment.push(None);
    descend(v, j + 1, used, assignment, out, cap)?;
    assignment.pop();
    for t in 0..v.targets() {
        if v.get(j, t) && !used[t] {
            used[t] = true;
            assignment.push(Some(t));
            descend(v, j + 1, used, assignment, out, cap)?;
            assignment.pop();
            used[t] = false;
        }
    }
    Ok(())
}

/// Log of the unnormalized prior `(φ!/m!)·μ_F(φ)·Π P_D^δ (1−P_D)^{1−δ}`
/// with Poisson clutter of mean `λc·V`.
pub fn log_event_prior(event: &JointAssociationEvent, cfg: &AssociationConfig) -> f64 {
    let m = event.assignment.len() as u64;
    let phi = event.phi as u64;
    let mu = cfg.clutter_mean();
    let log_poisson = if mu > 0.0 {
        -mu + phi as f64 * mu.ln() - ln_factorial(phi)
    } else if phi == 0 {
        0.0
    } else {
        f64::NEG_INFINITY
    };
    let pd = cfg.detection_prob;
    let detection: f64 = event
        .delta
        .iter()
        .map(|&d| if d { pd.ln() } else { (1.0 - pd).ln() })
        .sum();
    ln_factorial(phi) - ln_factorial(m) + log_poisson + detection
}

pub fn event_prior(event: &JointAssociationEvent, cfg: &AssociationConfig) -> f64 {
    log_event_prior(event, cfg).exp()
}

/// Log of `V^{−φ}` times the joint Gaussian density of the assigned
/// measurements, using the block of `sbar` picked out by the detected targets.
pub fn log_event_likelihood(
    event: &JointAssociationEvent,
    zhat: &[f64],
    sbar: &Mat,
    zs: &[f64],
    volume: f64,
) -> Result<f64> {
    let pairs = event.pairs();
    let clutter = -(event.phi as f64) * volume.ln();
    if pairs.is_empty() {
        return Ok(clutter);
    }
    let targets: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let resid = Vector::from_iterator(pairs.len(), pairs.iter().map(|&(t, j)| zs[j] - zhat[t]));
    let s = select_block(sbar, &targets, &targets);
    let g = gaussian_log_density(&resid, &s).ok_or(Error::DegenerateLikelihood)?;
    Ok(clutter + g)
}

pub fn event_likelihood(
    event: &JointAssociationEvent,
    zhat: &[f64],
    sbar: &Mat,
    zs: &[f64],
    volume: f64,
) -> Result<f64> {
    log_event_likelihood(event, zhat, sbar, zs, volume).map(f64::exp)
}

/// Fills in posteriors from log priors and log likelihoods (normalized in
/// log space).
pub fn event_posteriors(
    events: &mut [JointAssociationEvent],
    log_priors: &[f64],
    log_likelihoods: &[f64],
) -> Result<()> {
    if events.len() != log_priors.len() || events.len() != log_likelihoods.len() {
        return Err(Error::DimensionMismatch(
            "event weights do not match event count".into(),
        ));
    }
    let logw: Vec<f64> = log_priors
        .iter()
        .zip(log_likelihoods)
        .map(|(a, b)| a + b)
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NoFeasibleEvent);
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for (e, wi) in events.iter_mut().zip(w) {
        e.posterior = wi / total;
    }
    Ok(())
}

/// Per-target marginal association probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    /// `beta[(j, t)] = P(measurement j originated from target t)`.
    pub beta: Mat,
    /// `beta0[t] = P(target t not detected)`.
    pub beta0: Vec<f64>,
}

pub fn marginals(events: &[JointAssociationEvent], m: usize, n: usize) -> Marginals {
    let mut beta = Mat::zeros(m, n);
    let mut beta0 = vec![0.0; n];
    for e in events {
        for (j, t) in e.assignment.iter().enumerate() {
            if let Some(t) = t {
                beta[(j, *t)] += e.posterior;
            }
        }
        for (t, d) in e.delta.iter().enumerate() {
            if !d {
                beta0[t] += e.posterior;
            }
        }
    }
    Marginals { beta, beta0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(pd: f64, lambda: f64, volume: f64) -> AssociationConfig {
        AssociationConfig {
            detection_prob: pd,
            clutter_density: lambda,
            volume,
            ..AssociationConfig::default()
        }
    }

    #[test]
    fn gate_examples() {
        let v = gate(&[1.0], &[1.0], &[1.0], 1e-6).unwrap();
        assert!(v.get(0, 0));
        let v = gate(&[4.0], &[0.0], &[1.0], 9.0).unwrap();
        assert!(!v.get(0, 0));
        let v = gate(&[4.0], &[0.0], &[4.0], 9.0).unwrap();
        assert!(v.get(0, 0));
        assert!(matches!(
            gate(&[0.0], &[0.0, 1.0], &[1.0, 0.0], 9.0),
            Err(Error::GatingDegenerate { target: 1 })
        ));
    }

    #[test]
    fn event_counts() {
        let full = |m, n| ValidationMatrix::from_rows(&vec![vec![true; n]; m]);
        assert_eq!(enumerate_events(&full(1, 1), 10).unwrap().len(), 2);
        assert_eq!(enumerate_events(&full(2, 1), 10).unwrap().len(), 3);
        assert_eq!(enumerate_events(&full(2, 2), 10).unwrap().len(), 7);
        assert_eq!(enumerate_events(&full(0, 3), 10).unwrap().len(), 1);
        assert!(matches!(
            enumerate_events(&full(3, 3), 5),
            Err(Error::CombinatorialBlowup { cap: 5 })
        ));
    }

    #[test]
    fn prior_examples() {
        let v = ValidationMatrix::from_rows(&[vec![true]]);
        let ev = enumerate_events(&v, 10).unwrap();
        let (miss, hit) = (&ev[0], &ev[1]);
        assert_eq!(event_prior(miss, &cfg(1.0, 0.1, 10.0)), 0.0);
        assert_eq!(event_prior(miss, &cfg(0.9, 0.0, 10.0)), 0.0);
        let c = cfg(0.9, 0.03, 7.0);
        let ratio = event_prior(miss, &c) / event_prior(hit, &c);
        let expected = (1.0 - 0.9) * 0.03 * 7.0 / 0.9;
        assert!((ratio - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn likelihood_examples() {
        let v = ValidationMatrix::from_rows(&[vec![true], vec![true]]);
        let ev = enumerate_events(&v, 10).unwrap();
        let s = Mat::from_element(1, 1, 1.0);
        let l = event_likelihood(&ev[0], &[0.0], &s, &[0.3, -0.2], 5.0).unwrap();
        assert!((l - 1.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn pda_weight_matches_classical_form() {
        let c = cfg(0.8, 0.2, 4.0);
        let v = ValidationMatrix::from_rows(&[vec![true]]);
        let mut ev = enumerate_events(&v, 10).unwrap();
        let s = Mat::from_element(1, 1, 0.5);
        let (z, zhat) = (0.4, 0.1);
        let lp: Vec<f64> = ev.iter().map(|e| log_event_prior(e, &c)).collect();
        let ll: Vec<f64> = ev
            .iter()
            .map(|e| log_event_likelihood(e, &[zhat], &s, &[z], c.volume).unwrap())
            .collect();
        event_posteriors(&mut ev, &lp, &ll).unwrap();
        let nrm = (-(z - zhat) * (z - zhat) / (2.0 * 0.5)).exp()
            / (2.0 * std::f64::consts::PI * 0.5).sqrt();
        let beta1 = 0.8 * nrm / (0.8 * nrm + 0.2 * 0.2);
        assert!((ev[1].posterior - beta1).abs() < 1e-12);
    }

    #[test]
    fn symmetric_measurements_get_equal_posteriors() {
        let c = cfg(0.9, 0.1, 10.0);
        let v = ValidationMatrix::from_rows(&[vec![true], vec![true]]);
        let mut ev = enumerate_events(&v, 10).unwrap();
        let s = Mat::from_element(1, 1, 1.0);
        let zs = [1.0, -1.0];
        let lp: Vec<f64> = ev.iter().map(|e| log_event_prior(e, &c)).collect();
        let ll: Vec<f64> = ev
            .iter()
            .map(|e| log_event_likelihood(e, &[0.0], &s, &zs, 10.0).unwrap())
            .collect();
        event_posteriors(&mut ev, &lp, &ll).unwrap();
        assert!((ev[1].posterior - ev[2].posterior).abs() < 1e-15);
        let total: f64 = ev.iter().map(|e| e.posterior).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_weights_rejected() {
        let v = ValidationMatrix::from_rows(&[vec![true]]);
        let mut ev = enumerate_events(&v, 10).unwrap();
        let inf = f64::NEG_INFINITY;
        assert!(matches!(
            event_posteriors(&mut ev, &[inf, inf], &[0.0, 0.0]),
            Err(Error::NoFeasibleEvent)
        ));
    }
}
