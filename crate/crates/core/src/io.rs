//! On-disk formats. Signal payloads are raw little-endian `f64` so they
//! round-trip bit for bit; all metadata lives in JSON sidecars next to them.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identifiers::{IdentificationResult, Snapshot};
use crate::neural::{DnnParams, EpochRecord, Field};
use crate::scenario::{IrGrid, Recording, RotationProfile};
use crate::signals::ExcitationBank;

pub fn write_f64_raw(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f64_raw(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format {
            path: path.into(),
            message: format!("{} bytes is not a whole number of f64 values", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.into(),
        message: e.to_string(),
    })
}

/// Float32 mono WAV for listening; not read back.
pub fn write_wav_f32(path: &Path, samples: &[f64], sample_rate: f64) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate.round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Internal(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        writer.write_sample(s as f32).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Writes `header` as `<stem>.json` and `payload` as `<stem>.f64`.
fn write_pair<T: Serialize>(stem: &Path, header: &T, payload: &[f64]) -> Result<()> {
    write_json(&stem.with_extension("json"), header)?;
    write_f64_raw(&stem.with_extension("f64"), payload)
}

fn payload_len_check(path: &Path, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Format {
            path: path.into(),
            message: format!("payload holds {got} values, header implies {expected}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankHeader {
    pub period: usize,
    pub speakers: usize,
    pub taps: usize,
    pub length: usize,
    pub sample_rate: f64,
    /// Normalization of the base sweep.
    pub scaling: String,
}

/// `<stem>.f64` holds the `S` rows back to back.
pub fn write_bank(stem: &Path, bank: &ExcitationBank, sample_rate: f64) -> Result<()> {
    let layout = bank.layout();
    let header = BankHeader {
        period: layout.period(),
        speakers: layout.speakers,
        taps: layout.taps,
        length: layout.length,
        sample_rate,
        scaling: "unit_power".into(),
    };
    let payload: Vec<f64> = bank.rows().iter().flatten().copied().collect();
    write_pair(stem, &header, &payload)
}

pub fn read_bank(stem: &Path) -> Result<(BankHeader, ExcitationBank)> {
    let header: BankHeader = read_json(&stem.with_extension("json"))?;
    let payload_path = stem.with_extension("f64");
    let data = read_f64_raw(&payload_path)?;
    payload_len_check(&payload_path, data.len(), header.speakers * header.length)?;
    let rows = data.chunks(header.length.max(1)).map(<[f64]>::to_vec).collect();
    let bank = ExcitationBank::from_rows(header.taps, rows)?;
    Ok((header, bank))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingHeader {
    pub samples: usize,
    pub noise_variance: f64,
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub rotation: RotationProfile,
    pub ear: String,
}

pub fn write_recording(stem: &Path, rec: &Recording, ear: &str) -> Result<()> {
    let header = RecordingHeader {
        samples: rec.len(),
        noise_variance: rec.noise_variance,
        snr_db: rec.snr_db,
        seed: rec.seed,
        rotation: rec.rotation,
        ear: ear.into(),
    };
    write_pair(stem, &header, &rec.y)
}

pub fn read_recording(stem: &Path) -> Result<(RecordingHeader, Recording)> {
    let header: RecordingHeader = read_json(&stem.with_extension("json"))?;
    let payload_path = stem.with_extension("f64");
    let y = read_f64_raw(&payload_path)?;
    payload_len_check(&payload_path, y.len(), header.samples)?;
    let rec = Recording {
        y,
        noise_variance: header.noise_variance,
        snr_db: header.snr_db,
        seed: header.seed,
        rotation: header.rotation,
    };
    Ok((header, rec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultHeader {
    pub algo: String,
    pub hyperparameters: serde_json::Value,
    pub frames: usize,
    pub speakers: usize,
    pub taps: usize,
    pub rotation: RotationProfile,
    pub snapshot_frames: Vec<usize>,
    pub snapshot_azimuths: Vec<f64>,
    pub segment_starts: Vec<usize>,
    pub failed_segments: Vec<usize>,
}

/// Sidecar plus snapshot payload. The error trace goes to its own CSV.
pub fn write_result(stem: &Path, result: &IdentificationResult) -> Result<()> {
    let header = ResultHeader {
        algo: result.algo.clone(),
        hyperparameters: result.hyperparameters.clone(),
        frames: result.frames,
        speakers: result.speakers,
        taps: result.taps,
        rotation: result.rotation,
        snapshot_frames: result.snapshots.iter().map(|s| s.frame).collect(),
        snapshot_azimuths: result.snapshots.iter().map(|s| s.azimuth).collect(),
        segment_starts: result.segment_starts.clone(),
        failed_segments: result.failed_segments.clone(),
    };
    let payload: Vec<f64> = result
        .snapshots
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .collect();
    write_pair(stem, &header, &payload)
}

/// Reads a result written by [`write_result`]; `e_trace` is left empty.
pub fn read_result(stem: &Path) -> Result<IdentificationResult> {
    let json_path = stem.with_extension("json");
    let header: ResultHeader = read_json(&json_path)?;
    if header.snapshot_frames.len() != header.snapshot_azimuths.len() {
        return Err(Error::Format {
            path: json_path,
            message: "snapshot frame and azimuth lists differ in length".into(),
        });
    }
    let width = header.speakers * header.taps;
    let payload_path = stem.with_extension("f64");
    let data = read_f64_raw(&payload_path)?;
    payload_len_check(&payload_path, data.len(), width * header.snapshot_frames.len())?;
    let snapshots = header
        .snapshot_frames
        .iter()
        .zip(&header.snapshot_azimuths)
        .zip(data.chunks(width.max(1)))
        .map(|((&frame, &azimuth), values)| Snapshot {
            frame,
            azimuth,
            values: values.to_vec(),
        })
        .collect();
    Ok(IdentificationResult {
        algo: header.algo,
        hyperparameters: header.hyperparameters,
        frames: header.frames,
        speakers: header.speakers,
        taps: header.taps,
        rotation: header.rotation,
        e_trace: Vec::new(),
        snapshots,
        segment_starts: header.segment_starts,
        failed_segments: header.failed_segments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub azimuths: Vec<f64>,
    pub rows: usize,
    pub taps: usize,
    pub sample_rate: f64,
    /// Payload order, outermost first.
    pub layout: String,
}

const GRID_LAYOUT: &str = "azimuth,row,tap";

pub fn write_grid(stem: &Path, grid: &IrGrid) -> Result<()> {
    let header = GridHeader {
        azimuths: grid.azimuths().to_vec(),
        rows: grid.rows(),
        taps: grid.taps(),
        sample_rate: grid.sample_rate(),
        layout: GRID_LAYOUT.into(),
    };
    write_pair(stem, &header, grid.data())
}

pub fn read_grid(stem: &Path) -> Result<IrGrid> {
    let json_path = stem.with_extension("json");
    let header: GridHeader = read_json(&json_path)?;
    if header.layout != GRID_LAYOUT {
        return Err(Error::Format {
            path: json_path,
            message: format!("unsupported layout {:?}", header.layout),
        });
    }
    let payload_path = stem.with_extension("f64");
    let data = read_f64_raw(&payload_path)?;
    payload_len_check(
        &payload_path,
        data.len(),
        header.azimuths.len() * header.rows * header.taps,
    )?;
    IrGrid::new(
        header.azimuths,
        header.rows,
        header.taps,
        header.sample_rate,
        data,
    )
}

pub const CHECKPOINT_LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub d: usize,
    pub layout_version: u32,
    pub fields: Vec<FieldEntry>,
    /// Training metadata (segment span, best epoch, loss).
    #[serde(default)]
    pub info: serde_json::Value,
}

pub fn write_checkpoint(stem: &Path, params: &DnnParams, info: serde_json::Value) -> Result<()> {
    let d = params.width();
    let header = CheckpointHeader {
        d,
        layout_version: CHECKPOINT_LAYOUT_VERSION,
        fields: Field::ALL
            .iter()
            .map(|f| FieldEntry {
                name: f.name().into(),
                count: f.len(d),
            })
            .collect(),
        info,
    };
    write_pair(stem, &header, params.as_flat())
}

pub fn read_checkpoint(stem: &Path) -> Result<(CheckpointHeader, DnnParams)> {
    let json_path = stem.with_extension("json");
    let header: CheckpointHeader = read_json(&json_path)?;
    let bad = |message: String| Error::Format {
        path: json_path.clone(),
        message,
    };
    if header.layout_version != CHECKPOINT_LAYOUT_VERSION {
        return Err(bad(format!(
            "unsupported layout version {}",
            header.layout_version
        )));
    }
    let expected: Vec<(String, usize)> = Field::ALL
        .iter()
        .map(|f| (f.name().to_string(), f.len(header.d)))
        .collect();
    let found: Vec<(String, usize)> = header.fields.iter().map(|f| (f.name.clone(), f.count)).collect();
    if expected != found {
        return Err(bad("field list does not match this model layout".into()));
    }
    let payload_path = stem.with_extension("f64");
    let data = read_f64_raw(&payload_path)?;
    let params = DnnParams::from_flat(header.d, data).map_err(|e| Error::Format {
        path: payload_path,
        message: e.to_string(),
    })?;
    Ok((header, params))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// `n,e,ise` rows.
pub fn write_e_trace_csv(path: &Path, e_trace: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "n,e,ise").map_err(io)?;
    for (n, e) in e_trace.iter().enumerate() {
        writeln!(w, "{n},{e},{}", e * e).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_e_trace_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .map(|line| {
            line.split(',')
                .nth(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format {
                    path: path.into(),
                    message: format!("bad e-trace row {line:?}"),
                })
        })
        .collect()
}

/// `epoch,l_train,wall_time,failed` rows.
pub fn write_epoch_log_csv(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "epoch,l_train,wall_time,failed").map_err(io)?;
    for r in log {
        writeln!(w, "{},{},{:.6},{}", r.epoch, r.l_train, r.wall_time, r.failed).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}
