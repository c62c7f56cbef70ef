//! `stjpda`: simulate, train, track and evaluate from the command line.

mod config;
mod model;
mod tables;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use stjpda::experiment::{monte_carlo, run_one, BatchSummary, RunResult};
use stjpda::io::{write_csv, write_json};
use stjpda::metrics::evaluate;
use stjpda::parallel::with_threads;
use stjpda::pipeline::track;
use stjpda::simulator::generate;
use stjpda::training::train;
use stjpda::{Error, Result};

use config::RunConfig;
use model::ModelFile;

#[derive(Parser)]
#[command(
    name = "stjpda",
    version,
    about = "Coupled spatio-temporal tracking of dependent curves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario: detections, truth and training samples.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit kernel hyperparameters and coupling to training samples.
    Train {
        #[command(flatten)]
        common: Common,
        /// CSV with columns target,u,z.
        #[arg(long)]
        data: PathBuf,
    },
    /// Track curves through a detection file.
    Track {
        #[command(flatten)]
        common: Common,
        /// CSV with columns frame,u,z,origin.
        #[arg(long)]
        detections: PathBuf,
        /// Also write the per-frame filtered posterior.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Score tracks against truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Simulate, track and evaluate; a Monte Carlo batch with `--runs`.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Also write the per-frame filtered posterior (single run only).
        #[arg(long)]
        emit_plot_data: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn threads(cfg: &RunConfig) -> Result<Option<usize>> {
    match std::env::var("STJPDA_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("STJPDA_THREADS = {v:?} is not a thread count"))),
        Err(_) => Ok(cfg.threads),
    }
}

fn prepare(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let cfg = RunConfig::load(&common.config)?.with_seed(common.seed);
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    let base = common
        .config
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok((cfg, base))
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Simulate { common }
        | Command::Train { common, .. }
        | Command::Track { common, .. }
        | Command::Eval { common, .. }
        | Command::Pipeline { common, .. } => common,
    };
    let (cfg, base) = prepare(common)?;
    let out = common.out.clone();
    with_threads(threads(&cfg)?, move || match cli.command {
        Command::Simulate { .. } => simulate(&cfg, &out),
        Command::Train { data, .. } => train_cmd(&cfg, &data, &out),
        Command::Track {
            detections,
            emit_plot_data,
            ..
        } => track_cmd(&cfg, &base, &detections, &out, emit_plot_data),
        Command::Eval { tracks, truth, .. } => eval_cmd(&cfg, &tracks, &truth, &out),
        Command::Pipeline {
            runs,
            emit_plot_data,
            ..
        } => pipeline(&cfg, &base, runs, &out, emit_plot_data),
    })
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sc = cfg.scenario()?;
    let truth = generate(sc)?;
    tables::write_detections(&out.join("detections.csv"), &truth.detections)?;
    tables::write_truth(&out.join("truth.csv"), &truth, &sc.index_points)?;
    let data = tables::training_from_detections(
        &truth.detections,
        sc.targets,
        sc.noise_std * sc.noise_std,
    );
    tables::write_training(&out.join("training.csv"), &data)?;
    write_json(&out.join("scenario.json"), sc)?;
    let n: usize = truth.detections.iter().map(Vec::len).sum();
    eprintln!(
        "simulated {} frames, {n} detections (seed {})",
        sc.frames, sc.seed
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let spec = cfg.training()?;
    let noise = match (spec.noise_var, &cfg.scenario) {
        (Some(v), _) => v,
        (None, Some(sc)) => sc.noise_std * sc.noise_std,
        (None, None) => {
            return Err(Error::Config(
                "training.noise_var is required without a scenario".into(),
            ))
        }
    };
    let set = tables::read_training(data, noise)?;
    let m = train(
        &set,
        spec.family,
        &spec.init,
        spec.rbf_order,
        spec.step,
        &spec.optimizer,
    )?;
    ModelFile::from_trained(&m).save(&out.join("model.json"))?;
    eprintln!(
        "trained sigma2 {:.4}, ell {:.4}, nlml {:.4} ({} iterations, converged: {})",
        m.hyperparams.sigma2, m.hyperparams.ell, m.nlml, m.iterations, m.converged
    );
    Ok(())
}

fn track_cmd(
    cfg: &RunConfig,
    base: &Path,
    detections: &Path,
    out: &Path,
    plot: bool,
) -> Result<()> {
    let (tcfg, grid) = cfg.tracker(base)?;
    let min_frames = cfg.scenario.as_ref().map_or(0, |s| s.frames);
    let frames = tables::read_detections(detections, min_frames)?;
    let mut filtered = Vec::new();
    let result = track(&frames, &grid, &tcfg, |f| {
        if plot {
            filtered.extend(tables::filtered_rows(f, &grid));
        }
    })?;
    tables::write_tracks(&out.join("tracks.csv"), &result.curves, &grid)?;
    tables::write_lifecycle(&out.join("lifecycle.csv"), &result.lifecycle)?;
    if plot {
        write_csv(&out.join("filtered.csv"), &tables::TRACKS, filtered)?;
    }
    let report = TrackReport {
        frames: result.frames,
        confirmed_targets: result
            .curves
            .iter()
            .map(|c| c.target)
            .collect::<BTreeSet<_>>()
            .len(),
        runtime_seconds: result.runtime_seconds,
        frames_per_second: result.frames as f64 / result.runtime_seconds.max(1e-12),
    };
    write_json(&out.join("track_report.json"), &report)?;
    eprintln!(
        "tracked {} frames in {:.3} s ({:.1} frames/s)",
        report.frames, report.runtime_seconds, report.frames_per_second
    );
    Ok(())
}

#[derive(Serialize)]
struct TrackReport {
    frames: usize,
    confirmed_targets: usize,
    runtime_seconds: f64,
    frames_per_second: f64,
}

fn eval_cmd(cfg: &RunConfig, tracks: &Path, truth: &Path, out: &Path) -> Result<()> {
    let truths = tables::read_truth(truth)?;
    let preds = tables::read_tracks(tracks, truths.len())?;
    if preds.len() > truths.len() {
        return Err(Error::format(
            tracks,
            "tracks extend beyond the truth frames",
        ));
    }
    let report = evaluate(&preds, &truths, cfg.threshold()?, &cfg.eval)?;
    write_json(&out.join("report.json"), &report)?;
    eprintln!(
        "accuracy {:.4}, FP {:.4}, FN {:.4}",
        report.accuracy, report.fp_rate, report.fn_rate
    );
    Ok(())
}

#[derive(Serialize)]
struct BatchReport<'a> {
    summary: &'a BatchSummary,
    runs: &'a [RunResult],
}

fn pipeline(cfg: &RunConfig, base: &Path, runs: usize, out: &Path, plot: bool) -> Result<()> {
    let sc = cfg.scenario()?;
    let tracker = cfg.tracker_override(base)?;
    if runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    if runs == 1 {
        let (result, output, truth) = run_one(sc, tracker.as_ref(), &cfg.eval)?;
        tables::write_detections(&out.join("detections.csv"), &truth.detections)?;
        tables::write_truth(&out.join("truth.csv"), &truth, &sc.index_points)?;
        write_json(&out.join("scenario.json"), sc)?;
        tables::write_tracks(&out.join("tracks.csv"), &output.curves, &sc.index_points)?;
        tables::write_lifecycle(&out.join("lifecycle.csv"), &output.lifecycle)?;
        if plot {
            let (tcfg, grid) = cfg.tracker(base)?;
            let mut rows = Vec::new();
            track(&truth.detections, &grid, &tcfg, |f| {
                rows.extend(tables::filtered_rows(f, &grid))
            })?;
            write_csv(&out.join("filtered.csv"), &tables::TRACKS, rows)?;
        }
        write_json(&out.join("report.json"), &result)?;
        let r = &result.report;
        eprintln!(
            "accuracy {:.4}, FP {:.4}, FN {:.4}, NEES {}, {:.1} frames/s",
            r.accuracy,
            r.fp_rate,
            r.fn_rate,
            r.mean_nees.map_or("n/a".into(), |v| format!("{v:.2}")),
            r.frames_per_second
        );
        return Ok(());
    }
    if plot {
        return Err(Error::Config(
            "--emit-plot-data applies to single runs only".into(),
        ));
    }
    let seeds: Vec<u64> = (0..runs as u64).map(|i| sc.seed.wrapping_add(i)).collect();
    let (results, summary) = monte_carlo(sc, tracker.as_ref(), &cfg.eval, &seeds, cfg.execution)?;
    let per_run = out.join("runs");
    std::fs::create_dir_all(&per_run).map_err(|e| Error::io(&per_run, e))?;
    for r in &results {
        write_json(&per_run.join(format!("seed_{}.json", r.seed)), r)?;
    }
    write_json(
        &out.join("report.json"),
        &BatchReport {
            summary: &summary,
            runs: &results,
        },
    )?;
    eprintln!(
        "{} runs: accuracy {:.4}, FP {:.4}, FN {:.4}, NEES {} (band [{:.2}, {:.2}]), {:.1} s",
        summary.runs,
        summary.mean_accuracy,
        summary.mean_fp_rate,
        summary.mean_fn_rate,
        summary
            .mean_nees
            .map_or("n/a".into(), |v| format!("{v:.2}")),
        summary.nees_band.0,
        summary.nees_band.1,
        summary.wall_seconds
    );
    Ok(())
}
