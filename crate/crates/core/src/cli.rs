//! Library side of the command line: every subcommand is a function over an
//! [`ExperimentConfig`] and an output directory, so the binary is a thin
//! argument parser and the same calls can be scripted or tested directly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{AlgoConfig, Ear, ExperimentConfig};
use crate::error::{Error, Result};
use crate::identifiers::{run_baseline, IdentificationResult, Snapshot, StorePolicy};
use crate::io;
use crate::metrics::{
    binaural_set, default_max_lag, itd_error_table, pairs_from_snapshots, score_pairs, ItdRow, MetricsReport,
};
use crate::neural::{segment_and_train, SegmentOutcome};
use crate::scenario::{
    render, render_at_snr, synth_trajectory, trajectory_from_grid, IrTrajectory, Recording,
};
use crate::signals::{build_excitation_bank, generate_perfect_sweep, ExcitationBank};

/// File layout inside an output directory.
pub mod paths {
    use super::*;

    pub fn sweep(out: &Path) -> PathBuf {
        out.join("sweep")
    }

    pub fn bank(out: &Path) -> PathBuf {
        out.join("bank")
    }

    pub fn recording(out: &Path, ear: Ear) -> PathBuf {
        out.join(format!("recording_{}", ear.tag()))
    }

    pub fn truth(out: &Path, ear: Ear) -> PathBuf {
        out.join(format!("truth_{}", ear.tag()))
    }

    pub fn result(out: &Path, algo: &str, ear: Ear) -> PathBuf {
        out.join(format!("result_{algo}_{}", ear.tag()))
    }

    pub fn e_trace(out: &Path, algo: &str, ear: Ear) -> PathBuf {
        out.join(format!("etrace_{algo}_{}.csv", ear.tag()))
    }

    pub fn checkpoint(out: &Path, algo: &str, ear: Ear, segment: usize) -> PathBuf {
        out.join(format!("checkpoint_{algo}_{}_seg{segment}", ear.tag()))
    }

    pub fn epoch_log(out: &Path, algo: &str, ear: Ear, segment: usize) -> PathBuf {
        out.join(format!("epochs_{algo}_{}_seg{segment}.csv", ear.tag()))
    }

    pub fn metrics(out: &Path, algo: &str) -> PathBuf {
        out.join(format!("metrics_{algo}.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepHeader {
    period: usize,
    sample_rate: f64,
    scaling: String,
}

pub fn build_bank(cfg: &ExperimentConfig) -> Result<ExcitationBank> {
    let dims = &cfg.dimensions;
    let sweep = generate_perfect_sweep(dims.width())?;
    build_excitation_bank(&sweep, dims.speakers, dims.est_taps(), cfg.frames()?)
}

/// Writes the base sweep and the per-speaker excitation bank.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    io::ensure_dir(out)?;
    let sweep = generate_perfect_sweep(cfg.dimensions.width())?;
    let header = SweepHeader {
        period: sweep.period(),
        sample_rate: cfg.rotation.sample_rate,
        scaling: "unit_power".into(),
    };
    io::write_json(&paths::sweep(out).with_extension("json"), &header)?;
    io::write_f64_raw(&paths::sweep(out).with_extension("f64"), sweep.samples())?;
    io::write_bank(&paths::bank(out), &build_bank(cfg)?, cfg.rotation.sample_rate)
}

pub fn build_trajectory(cfg: &ExperimentConfig, ear: Ear) -> Result<IrTrajectory> {
    let dims = &cfg.dimensions;
    let frames = cfg.frames()?;
    match cfg.synth_kind(ear) {
        Some(kind) => synth_trajectory(&kind, frames, dims.speakers, dims.taps, cfg.rotation),
        None => {
            let grid = io::read_grid(&cfg.grid_path(ear).unwrap())?;
            if grid.taps() != dims.taps {
                return Err(Error::invalid(format!(
                    "grid has {} taps, config says K = {}",
                    grid.taps(),
                    dims.taps
                )));
            }
            if grid.sample_rate() != cfg.rotation.sample_rate {
                return Err(Error::invalid(format!(
                    "grid sample rate {} differs from the rotation's {}",
                    grid.sample_rate(),
                    cfg.rotation.sample_rate
                )));
            }
            let rows = match &cfg.scenario {
                crate::config::ScenarioConfig::Grid { rows: Some(r), .. } => r.clone(),
                _ => (0..dims.speakers).collect(),
            };
            trajectory_from_grid(Arc::new(grid), cfg.rotation, frames, rows)
        }
    }
}

pub fn render_ear(
    cfg: &ExperimentConfig,
    traj: &IrTrajectory,
    bank: &ExcitationBank,
    ear: Ear,
) -> Result<Recording> {
    let seed = cfg.noise_seed(ear);
    match (cfg.noise.variance, cfg.noise.snr_db) {
        (Some(v), _) => render(traj, bank, v, seed),
        (None, Some(snr)) => render_at_snr(traj, bank, snr, seed),
        (None, None) => Err(Error::invalid("noise level is not set")),
    }
}

/// True IRs at the frames selected by `policy`, stored like an identification result.
pub fn truth_snapshots(traj: &IrTrajectory, policy: &StorePolicy) -> Result<IdentificationResult> {
    let rotation = traj.rotation();
    let mut truth = IdentificationResult::empty("truth", traj.speakers(), traj.taps(), rotation);
    truth.frames = traj.frames();
    truth.snapshots = policy
        .frames(traj.frames(), &rotation)?
        .into_iter()
        .map(|n| Snapshot {
            frame: n,
            azimuth: rotation.angle(n),
            values: traj.frame(n),
        })
        .collect();
    Ok(truth)
}

/// Renders every configured ear and stores the recordings plus the true
/// IRs at the evaluation frames.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    io::ensure_dir(out)?;
    let bank = build_bank(cfg)?;
    let policy = cfg.evaluation.store_policy();
    for &ear in &cfg.ears {
        let traj = build_trajectory(cfg, ear)?;
        let rec = render_ear(cfg, &traj, &bank, ear)?;
        io::write_recording(&paths::recording(out, ear), &rec, ear.tag())?;
        if cfg.export_wav {
            io::write_wav_f32(
                &paths::recording(out, ear).with_extension("wav"),
                &rec.y,
                rec.sample_rate(),
            )?;
        }
        io::write_result(&paths::truth(out, ear), &truth_snapshots(&traj, &policy)?)?;
    }
    Ok(())
}

/// Output of one identifier on one ear.
#[derive(Debug, Clone)]
pub struct EarRun {
    pub result: IdentificationResult,
    /// Per-segment training records (DNN only).
    pub segments: Vec<SegmentOutcome>,
}

/// Runs `algo` on one recording with the configured store policy.
pub fn identify_ear(
    cfg: &ExperimentConfig,
    algo: &AlgoConfig,
    bank: &ExcitationBank,
    rec: &Recording,
    workers: usize,
) -> Result<EarRun> {
    let policy = cfg.evaluation.store_policy();
    match (algo, algo.baseline(rec.noise_variance)) {
        (_, Some(baseline)) => Ok(EarRun {
            result: run_baseline(&baseline, bank, rec, &policy)?,
            segments: Vec::new(),
        }),
        (AlgoConfig::Dnn { segments }, None) => {
            let run = segment_and_train(bank, rec, *segments, &cfg.trainer, &policy, workers)?;
            Ok(EarRun {
                result: run.result,
                segments: run.segments,
            })
        }
        _ => Err(Error::Internal("algorithm has no runner".into())),
    }
}

fn selected<'a>(cfg: &'a ExperimentConfig, only: Option<&str>) -> Result<Vec<&'a AlgoConfig>> {
    let picked: Vec<&AlgoConfig> = cfg
        .algorithms
        .iter()
        .filter(|a| only.is_none_or(|name| a.name() == name))
        .collect();
    if picked.is_empty() {
        return Err(Error::invalid(match only {
            Some(name) => format!("algorithm {name:?} is not configured"),
            None => "no algorithms are configured".into(),
        }));
    }
    Ok(picked)
}

/// Identifies every configured ear with every selected algorithm. A DNN
/// segment that fails is written out as a gap and then reported as a
/// numerical failure.
pub fn cmd_identify(cfg: &ExperimentConfig, out: &Path, workers: usize, only: Option<&str>) -> Result<()> {
    cfg.validate()?;
    let algos = selected(cfg, only)?;
    let (_, bank) = io::read_bank(&paths::bank(out))?;
    if bank.layout() != build_bank(cfg)?.layout() {
        return Err(Error::invalid("bank on disk does not match the configuration"));
    }
    let mut failure = None;
    for algo in algos {
        let name = algo.name();
        for &ear in &cfg.ears {
            let (_, rec) = io::read_recording(&paths::recording(out, ear))?;
            let run = identify_ear(cfg, algo, &bank, &rec, workers)?;
            io::write_result(&paths::result(out, name, ear), &run.result)?;
            io::write_e_trace_csv(&paths::e_trace(out, name, ear), &run.result.e_trace)?;
            for (i, seg) in run.segments.iter().enumerate() {
                match &seg.outcome {
                    Ok(t) => {
                        let info = serde_json::json!({
                            "segment": i,
                            "span": [seg.span.start, seg.span.end],
                            "best_epoch": t.best_epoch,
                            "best_loss": t.best_loss,
                            "initial_loss": t.initial_loss(),
                            "stop": t.stop,
                        });
                        io::write_checkpoint(&paths::checkpoint(out, name, ear, i), &t.params, info)?;
                        io::write_epoch_log_csv(&paths::epoch_log(out, name, ear, i), &t.log)?;
                    }
                    Err(msg) => {
                        failure.get_or_insert(Error::NumericalFailure {
                            frame: seg.span.start,
                            message: format!("{name} {} segment {i}: {msg}", ear.tag()),
                            running_loss: None,
                        });
                    }
                }
            }
        }
    }
    failure.map_or(Ok(()), Err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarMetrics {
    pub ear: Ear,
    pub metrics: MetricsReport,
}

/// Scores of one algorithm, averaged over ears.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub algo: String,
    pub nm_db: f64,
    pub lsd_db: f64,
    pub ears: Vec<EarMetrics>,
    pub itd_speaker: usize,
    pub max_lag: usize,
    pub itd_table: Vec<ItdRow>,
}

/// Scores estimates against stored truth. `truth` and `estimates` are keyed by ear.
pub fn evaluate_run(
    cfg: &ExperimentConfig,
    algo: &str,
    truth: &BTreeMap<Ear, IdentificationResult>,
    estimates: &BTreeMap<Ear, IdentificationResult>,
) -> Result<EvaluationReport> {
    let fs = cfg.rotation.sample_rate;
    let band = cfg.evaluation.band.resolve(fs)?;
    let taps = cfg.dimensions.taps;
    let mut ears = Vec::new();
    for (&ear, est) in estimates {
        let t = truth
            .get(&ear)
            .ok_or_else(|| Error::invalid(format!("no truth for the {} ear", ear.tag())))?;
        let pairs = pairs_from_snapshots(t, est)?;
        ears.push(EarMetrics {
            ear,
            metrics: score_pairs(&pairs, fs, cfg.evaluation.fft_size, band)?,
        });
    }
    if ears.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let count = ears.len() as f64;
    let max_lag = cfg
        .evaluation
        .max_lag
        .unwrap_or_else(|| default_max_lag(fs, taps));
    let targets = cfg.evaluation.itd_targets();
    let speaker = cfg.evaluation.itd_speaker;
    let itd_table = match (
        truth.get(&Ear::Left),
        truth.get(&Ear::Right),
        estimates.get(&Ear::Left),
        estimates.get(&Ear::Right),
    ) {
        (Some(tl), Some(tr), Some(el), Some(er)) if !targets.is_empty() => {
            let t = binaural_set(tl, tr, &targets, speaker, taps)?;
            let e = binaural_set(el, er, &targets, speaker, taps)?;
            itd_error_table(&t, &e, &targets, max_lag, fs)?
        }
        _ => Vec::new(),
    };
    Ok(EvaluationReport {
        algo: algo.to_string(),
        nm_db: ears.iter().map(|e| e.metrics.nm_db).sum::<f64>() / count,
        lsd_db: ears.iter().map(|e| e.metrics.lsd_db).sum::<f64>() / count,
        ears,
        itd_speaker: speaker,
        max_lag,
        itd_table,
    })
}

fn itd_csv(rows: &[ItdRow], algo: Option<&str>) -> String {
    let mut s = String::new();
    let prefix = |s: &mut String| {
        if let Some(a) = algo {
            s.push_str(a);
            s.push(',');
        }
    };
    if algo.is_some() {
        s.push_str("algo,");
    }
    s.push_str("azimuth_deg,itd_us_true,itd_us_est,abs_err_us\n");
    for r in rows {
        prefix(&mut s);
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.azimuth_deg, r.itd_us_true, r.itd_us_est, r.abs_err_us
        );
    }
    s
}

fn summary_text(r: &EvaluationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "algorithm: {}", r.algo);
    let _ = writeln!(s, "NM  {:8.3} dB (mean over ears)", r.nm_db);
    let _ = writeln!(s, "LSD {:8.3} dB (mean over ears)", r.lsd_db);
    for e in &r.ears {
        let m = &e.metrics;
        let _ = writeln!(
            s,
            "  {:5}  NM {:8.3} dB  LSD {:7.3} dB  pairs {}  band ({}, {}] Hz  fft {}",
            e.ear.tag(),
            m.nm_db,
            m.lsd_db,
            m.pairs_evaluated,
            m.band.lo,
            m.band.hi,
            m.fft_size
        );
    }
    if !r.itd_table.is_empty() {
        let worst = r.itd_table.iter().map(|row| row.abs_err_us).fold(0.0, f64::max);
        let _ = writeln!(
            s,
            "ITD speaker {}, max lag {}: worst |error| {:.3} us over {} azimuths",
            r.itd_speaker,
            r.max_lag,
            worst,
            r.itd_table.len()
        );
    }
    s
}

/// Scores every selected algorithm and writes `metrics_<algo>.json`,
/// `metrics_<algo>.csv`, `itd_<algo>.csv` and `summary_<algo>.txt`.
pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &Path, only: Option<&str>) -> Result<Vec<EvaluationReport>> {
    cfg.validate()?;
    let mut truth = BTreeMap::new();
    for &ear in &cfg.ears {
        truth.insert(ear, io::read_result(&paths::truth(out, ear))?);
    }
    let mut reports = Vec::new();
    for algo in selected(cfg, only)? {
        let name = algo.name();
        let mut estimates = BTreeMap::new();
        for &ear in &cfg.ears {
            estimates.insert(ear, io::read_result(&paths::result(out, name, ear))?);
        }
        let report = evaluate_run(cfg, name, &truth, &estimates)?;
        io::write_json(&paths::metrics(out, name), &report)?;
        let mut csv = String::from("ear,nm_db,lsd_db,pairs_evaluated\n");
        for e in &report.ears {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                e.ear.tag(),
                e.metrics.nm_db,
                e.metrics.lsd_db,
                e.metrics.pairs_evaluated
            );
        }
        let _ = writeln!(csv, "mean,{},{},", report.nm_db, report.lsd_db);
        io::write_text(&out.join(format!("metrics_{name}.csv")), &csv)?;
        io::write_text(
            &out.join(format!("itd_{name}.csv")),
            &itd_csv(&report.itd_table, None),
        )?;
        io::write_text(&out.join(format!("summary_{name}.txt")), &summary_text(&report))?;
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub algo: String,
    pub nm_db: f64,
    pub lsd_db: f64,
    pub max_abs_itd_err_us: Option<f64>,
}

/// Collects every `metrics_*.json` in `out` into `report.csv`,
/// `report.json` and `report_itd.csv`, one row per algorithm in name order.
pub fn cmd_report(out: &Path) -> Result<Vec<ReportRow>> {
    let entries = std::fs::read_dir(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(out, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("metrics_") && name.ends_with(".json") {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::invalid(format!("no evaluated runs in {}", out.display())));
    }
    let mut reports: Vec<EvaluationReport> = files.iter().map(|p| io::read_json(p)).collect::<Result<_>>()?;
    reports.sort_by(|a, b| a.algo.cmp(&b.algo));

    let rows: Vec<ReportRow> = reports
        .iter()
        .map(|r| ReportRow {
            algo: r.algo.clone(),
            nm_db: r.nm_db,
            lsd_db: r.lsd_db,
            max_abs_itd_err_us: r.itd_table.iter().map(|row| row.abs_err_us).reduce(f64::max),
        })
        .collect();
    let mut csv = String::from("algo,nm_db,lsd_db,max_abs_itd_err_us\n");
    for r in &rows {
        let itd = r.max_abs_itd_err_us.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{}", r.algo, r.nm_db, r.lsd_db, itd);
    }
    io::write_text(&out.join("report.csv"), &csv)?;
    io::write_json(&out.join("report.json"), &rows)?;
    let mut itd = String::new();
    for (i, r) in reports.iter().enumerate() {
        let block = itd_csv(&r.itd_table, Some(&r.algo));
        itd.push_str(if i == 0 {
            &block
        } else {
            block.split_once('\n').map_or("", |x| x.1)
        });
    }
    io::write_text(&out.join("report_itd.csv"), &itd)?;
    Ok(rows)
}
