//! CSV and JSON file formats. Column definitions are listed in
//! `FORMATS.md` at the repository root.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use cmi_cusum_core::experiments::ReplicateOutcome;
use cmi_cusum_core::models::Observation;
use cmi_cusum_core::monitor::{monitor_vector, Conditioning, PredictionScale, TraceRow};
use cmi_cusum_core::simgen::PatientRecord;
use serde::Serialize;

use crate::error::{AppError, AppResult};

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> AppError {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(_) => AppError::Runtime(format!("{}: {e}", path.display())),
        _ => AppError::Parse { path: path.to_path_buf(), line, message: e.to_string() },
    }
}

pub fn create(path: &Path) -> AppResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| AppError::io(path, e))
}

/// Header of the patient stream for `p` covariates.
pub fn stream_header(p: usize, emit_confounder: bool) -> Vec<String> {
    let mut h: Vec<String> =
        ["t", "soc_index", "monitor_index", "prediction", "x_tilde", "a", "y"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=p).map(|j| format!("x_{j}")));
    if emit_confounder {
        h.push("u".to_string());
    }
    h
}

/// Writes patient records. Outcomes of treated patients are left empty;
/// `u` is written only when `emit_confounder` is set.
pub fn write_stream<W: Write>(w: W, records: &[PatientRecord], p: usize, emit_confounder: bool) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(stream_header(p, emit_confounder))?;
    let mut row: Vec<String> = Vec::new();
    for r in records {
        row.clear();
        row.push(r.t.to_string());
        row.push(opt(r.soc_index));
        row.push(opt(r.monitor_index));
        row.push(r.prediction.to_string());
        row.push(r.x_tilde.to_string());
        row.push(r.a.to_string());
        row.push(if r.a == 0 { r.y.to_string() } else { String::new() });
        row.extend(r.x.iter().map(f64::to_string));
        if emit_confounder {
            row.push(r.u.to_string());
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// The columns of a stream row the monitor needs.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRow {
    pub line: u64,
    pub t: usize,
    pub soc_index: Option<usize>,
    pub monitor_index: Option<usize>,
    pub prediction: f64,
    pub x_tilde: Option<f64>,
    pub a: u8,
    pub y: Option<u8>,
}

struct Columns {
    t: usize,
    soc_index: Option<usize>,
    monitor_index: Option<usize>,
    prediction: usize,
    x_tilde: Option<usize>,
    a: usize,
    y: usize,
}

/// Reads a patient stream, locating columns by header name. Errors carry
/// the 1-based line number.
pub fn read_stream<R: Read>(r: R, path: &Path) -> AppResult<Vec<StreamRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| {
        find(name).ok_or_else(|| AppError::Parse { path: path.to_path_buf(), line: 1, message: format!("missing column `{name}`") })
    };
    let cols = Columns {
        t: need("t")?,
        soc_index: find("soc_index"),
        monitor_index: find("monitor_index"),
        prediction: need("prediction")?,
        x_tilde: find("x_tilde"),
        a: need("a")?,
        y: need("y")?,
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |col: &str, v: &str| AppError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("column `{col}`: cannot parse `{v}`"),
        };
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let req_usize = |i: usize, col: &str| field(i).parse::<usize>().map_err(|_| bad(col, field(i)));
        let opt_usize = |i: Option<usize>, col: &str| -> AppResult<Option<usize>> {
            match i.map(field) {
                None | Some("") => Ok(None),
                Some(v) => v.parse().map(Some).map_err(|_| bad(col, v)),
            }
        };
        let float = |i: usize, col: &str| -> AppResult<f64> {
            let v = field(i);
            match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(bad(col, v)),
            }
        };
        let binary = |v: &str, col: &str| match v {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            _ => Err(bad(col, v)),
        };
        let prediction = float(cols.prediction, "prediction")?;
        if !(0.0..=1.0).contains(&prediction) {
            return Err(bad("prediction", field(cols.prediction)));
        }
        let y = match field(cols.y) {
            "" => None,
            v => Some(binary(v, "y")?),
        };
        rows.push(StreamRow {
            line,
            t: req_usize(cols.t, "t")?,
            soc_index: opt_usize(cols.soc_index, "soc_index")?,
            monitor_index: opt_usize(cols.monitor_index, "monitor_index")?,
            prediction,
            x_tilde: cols.x_tilde.map(|i| float(i, "x_tilde")).transpose()?,
            a: binary(field(cols.a), "a")?,
            y,
        });
    }
    Ok(rows)
}

/// The monitored observations of a stream, indexed on the monitored clock.
/// Without a `monitor_index` column every untreated row is monitored.
/// Returns the observations and the absolute time of each.
pub fn stream_observations(
    rows: &[StreamRow],
    conditioning: Conditioning,
    scale: PredictionScale,
    path: &Path,
) -> AppResult<(Vec<Observation>, Vec<usize>)> {
    let has_monitor_col = rows.iter().any(|r| r.monitor_index.is_some());
    let mut obs = Vec::new();
    let mut times = Vec::new();
    for r in rows {
        let err = |message: String| AppError::Parse { path: path.to_path_buf(), line: r.line, message };
        let idx = if has_monitor_col {
            r.monitor_index
        } else if r.a == 0 {
            Some(times.len() + 1)
        } else {
            None
        };
        let Some(idx) = idx else { continue };
        if r.a != 0 {
            return Err(err("monitored row is treated".to_string()));
        }
        if idx != obs.len() + 1 {
            return Err(err(format!("monitored index {idx} out of sequence, expected {}", obs.len() + 1)));
        }
        let y = r.y.ok_or_else(|| err("monitored row has no outcome".to_string()))?;
        let xt = match conditioning {
            Conditioning::PredictionOnly => 0.0,
            Conditioning::PredictionPlusCovariates => {
                r.x_tilde.ok_or_else(|| err("conditioning pred+xt needs an x_tilde column".to_string()))?
            }
        };
        let z = monitor_vector(r.prediction, xt, conditioning, scale);
        obs.push(Observation::new(idx, z, y)?);
        times.push(r.t);
    }
    Ok((obs, times))
}

pub fn write_trace<W: Write>(w: W, trace: &[TraceRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "c", "h", "survivors", "theta_norm"])?;
    for r in trace {
        out.write_record([r.t.to_string(), r.c.to_string(), r.h.to_string(), r.survivors.to_string(), r.theta_norm.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Identifies the experiment a replicate row belongs to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunLabel {
    pub scenario: String,
    pub monitor: String,
    pub m: usize,
    #[serde(rename = "K")]
    pub k: f64,
}

pub const REPLICATE_HEADER: [&str; 10] =
    ["scenario", "monitor", "m", "K", "replicate", "seed", "alarm_time_soc", "alarm_time_abs", "valid", "error"];

pub fn write_replicates<'a, W: Write>(
    w: W,
    groups: impl IntoIterator<Item = (&'a RunLabel, &'a [ReplicateOutcome])>,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPLICATE_HEADER)?;
    for (label, outs) in groups {
        for o in outs {
            out.write_record([
                label.scenario.clone(),
                label.monitor.clone(),
                label.m.to_string(),
                label.k.to_string(),
                o.replicate.to_string(),
                o.seed.to_string(),
                opt(o.alarm_time_soc),
                opt(o.alarm_time_abs),
                o.valid.to_string(),
                o.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `value` as pretty-printed JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| AppError::io(path, e))
}

/// Writes a CSV through `f`, mapping errors to `path`.
pub fn write_csv(path: &Path, f: impl FnOnce(BufWriter<File>) -> csv::Result<()>) -> AppResult<PathBuf> {
    let w = create(path)?;
    f(w).map_err(|e| csv_err(path, e))?;
    Ok(path.to_path_buf())
}
