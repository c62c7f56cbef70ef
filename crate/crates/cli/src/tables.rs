//! CSV tables written and read by the commands.

use std::path::Path;

use stjpda::association::Detection;
use stjpda::io::{field, fmt_f64, read_csv, write_csv};
use stjpda::pipeline::{CurveEstimate, FilteredFrame, LifecycleEvent, LifecycleKind};
use stjpda::simulator::GroundTruth;
use stjpda::training::{TargetSamples, TrainingSet};
use stjpda::Result;

pub const DETECTIONS: [&str; 4] = ["frame", "u", "z", "origin"];
pub const TRUTH: [&str; 4] = ["frame", "target", "u", "value"];
pub const TRAINING: [&str; 3] = ["target", "u", "z"];
pub const TRACKS: [&str; 5] = ["frame", "target", "u", "value", "variance"];
/// Origin label of clutter rows in the detection table.
pub const CLUTTER: &str = "clutter";
pub const LIFECYCLE: [&str; 3] = ["frame", "target", "event"];

pub fn write_detections(path: &Path, frames: &[Vec<Detection>]) -> Result<()> {
    write_csv(
        path,
        &DETECTIONS,
        frames.iter().flatten().map(|d| {
            vec![
                d.frame.to_string(),
                fmt_f64(d.u),
                fmt_f64(d.z),
                d.origin.map_or(CLUTTER.to_string(), |o| o.to_string()),
            ]
        }),
    )
}

/// Detections grouped by frame; at least `min_frames` frames.
pub fn read_detections(path: &Path, min_frames: usize) -> Result<Vec<Vec<Detection>>> {
    let mut frames: Vec<Vec<Detection>> = vec![Vec::new(); min_frames];
    for rec in read_csv(path, &DETECTIONS)? {
        let frame: usize = field(path, &rec, 0)?;
        let origin = match rec.get(3).map(str::trim) {
            None | Some("") | Some(CLUTTER) => None,
            Some(_) => Some(field(path, &rec, 3)?),
        };
        if frames.len() <= frame {
            frames.resize(frame + 1, Vec::new());
        }
        frames[frame].push(Detection {
            frame,
            u: field(path, &rec, 1)?,
            z: field(path, &rec, 2)?,
            origin,
        });
    }
    Ok(frames)
}

pub fn write_truth(path: &Path, truth: &GroundTruth, grid: &[f64]) -> Result<()> {
    let rows = truth.values.iter().enumerate().flat_map(|(k, targets)| {
        targets.iter().enumerate().flat_map(move |(t, vals)| {
            vals.iter()
                .zip(grid)
                .map(move |(v, u)| vec![k.to_string(), t.to_string(), fmt_f64(*u), fmt_f64(*v)])
        })
    });
    write_csv(path, &TRUTH, rows)
}

/// Per-frame, per-target value vectors (rows in grid order).
pub fn read_truth(path: &Path) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut out: Vec<Vec<Vec<f64>>> = Vec::new();
    for rec in read_csv(path, &TRUTH)? {
        let (k, t): (usize, usize) = (field(path, &rec, 0)?, field(path, &rec, 1)?);
        if out.len() <= k {
            out.resize(k + 1, Vec::new());
        }
        if out[k].len() <= t {
            out[k].resize(t + 1, Vec::new());
        }
        out[k][t].push(field(path, &rec, 3)?);
    }
    Ok(out)
}

/// Noisy observations of each target taken from the labelled detections of
/// frame 0.
pub fn training_from_detections(
    frames: &[Vec<Detection>],
    targets: usize,
    noise_var: f64,
) -> TrainingSet {
    let mut sets = vec![
        TargetSamples {
            u: Vec::new(),
            z: Vec::new()
        };
        targets
    ];
    for d in frames.first().into_iter().flatten() {
        if let Some(t) = d.origin {
            sets[t].u.push(d.u);
            sets[t].z.push(d.z);
        }
    }
    TrainingSet {
        targets: sets,
        noise_var,
    }
}

pub fn write_training(path: &Path, data: &TrainingSet) -> Result<()> {
    let rows = data.targets.iter().enumerate().flat_map(|(t, s)| {
        s.u.iter()
            .zip(&s.z)
            .map(move |(u, z)| vec![t.to_string(), fmt_f64(*u), fmt_f64(*z)])
    });
    write_csv(path, &TRAINING, rows)
}

pub fn read_training(path: &Path, noise_var: f64) -> Result<TrainingSet> {
    let mut sets: Vec<TargetSamples> = Vec::new();
    for rec in read_csv(path, &TRAINING)? {
        let t: usize = field(path, &rec, 0)?;
        if sets.len() <= t {
            sets.resize(
                t + 1,
                TargetSamples {
                    u: Vec::new(),
                    z: Vec::new(),
                },
            );
        }
        sets[t].u.push(field(path, &rec, 1)?);
        sets[t].z.push(field(path, &rec, 2)?);
    }
    Ok(TrainingSet {
        targets: sets,
        noise_var,
    })
}

pub fn write_tracks(path: &Path, curves: &[CurveEstimate], grid: &[f64]) -> Result<()> {
    let rows = curves.iter().flat_map(|c| {
        grid.iter().enumerate().map(move |(i, u)| {
            vec![
                c.frame.to_string(),
                c.target.to_string(),
                fmt_f64(*u),
                fmt_f64(c.values[i]),
                fmt_f64(c.variances[i]),
            ]
        })
    });
    write_csv(path, &TRACKS, rows)
}

/// Per-frame predicted curves (targets in id order).
pub fn read_tracks(path: &Path, frames: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut out: Vec<Vec<(u64, Vec<f64>)>> = vec![Vec::new(); frames];
    for rec in read_csv(path, &TRACKS)? {
        let (k, id): (usize, u64) = (field(path, &rec, 0)?, field(path, &rec, 1)?);
        if out.len() <= k {
            out.resize(k + 1, Vec::new());
        }
        let v: f64 = field(path, &rec, 3)?;
        match out[k].iter_mut().find(|c| c.0 == id) {
            Some(c) => c.1.push(v),
            None => out[k].push((id, vec![v])),
        }
    }
    Ok(out
        .into_iter()
        .map(|mut f| {
            f.sort_by_key(|c| c.0);
            f.into_iter().map(|c| c.1).collect()
        })
        .collect())
}

pub fn write_lifecycle(path: &Path, events: &[LifecycleEvent]) -> Result<()> {
    write_csv(
        path,
        &LIFECYCLE,
        events.iter().map(|e| {
            let kind = match e.kind {
                LifecycleKind::Born => "born",
                LifecycleKind::Confirmed => "confirmed",
                LifecycleKind::Terminated => "terminated",
            };
            vec![e.frame.to_string(), e.target.to_string(), kind.to_string()]
        }),
    )
}

/// Filtered (unsmoothed) means and variances, one row per grid point.
pub fn filtered_rows(f: &FilteredFrame, grid: &[f64]) -> Vec<Vec<String>> {
    let n = grid.len();
    let mut rows = Vec::new();
    for (t, target) in f.targets.iter().enumerate() {
        for (i, u) in grid.iter().enumerate() {
            let o = f.offset(t, i, 0, n);
            rows.push(vec![
                f.frame.to_string(),
                target.id.to_string(),
                fmt_f64(*u),
                fmt_f64(target.offset + f.x[o]),
                fmt_f64(f.p[(o, o)]),
            ]);
        }
    }
    rows
}
