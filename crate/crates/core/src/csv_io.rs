//! CSV emission and parsing for trajectories, series, scans, resource curves
//! and sampled waveforms.
//!
//! Numbers are written with 12 significant digits so that files are stable
//! across platforms; every writer has a matching reader.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::analysis::{CouplingAxis, ResourcePoint, ScanParameter, ScanRecord};
use crate::engine::Trajectory;
use crate::error::QdError;
use crate::observables::{diabatic_probability_series, fidelity_series, ObservableKind, ObservableSeries};
use crate::protocols::ControlSchedule;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error(transparent)]
    Numerical(#[from] QdError),
}

pub type OutputResult<T> = std::result::Result<T, OutputError>;

pub const TRAJECTORY_HEADER: [&str; 10] = [
    "tau", "t", "gamma", "omega", "re_c0", "im_c0", "re_c1", "im_c1", "fidelity", "p_diab",
];
pub const SERIES_HEADER: [&str; 3] = ["tau", "value", "kind"];
pub const SCAN_HEADER: [&str; 3] = ["parameter", "duration", "final_fidelity"];
pub const RESOURCE_HEADER: [&str; 4] = ["axis", "axis_value", "min_duration", "protocol"];
pub const WAVEFORM_HEADER: [&str; 5] = ["tau", "gamma", "omega", "area", "marker"];

/// Formats `x` with 12 significant digits, in plain notation where that is
/// readable and in exponent notation otherwise.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    let a = rounded.abs();
    if (1e-4..1e12).contains(&a) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> OutputResult<()> {
    let io = |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn to_csv<I, R>(header: &[&str], rows: I) -> OutputResult<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| OutputError::Io {
        path: PathBuf::new(),
        source: e,
    })?;
    w.into_inner().map_err(|e| OutputError::Io {
        path: PathBuf::new(),
        source: e.into_error(),
    })
}

fn from_csv<T: for<'de> Deserialize<'de>>(bytes: &[u8], header: &[&str]) -> OutputResult<Vec<T>> {
    let mut r = csv::Reader::from_reader(bytes);
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(OutputError::Malformed {
            row: 0,
            reason: format!("expected header {header:?}, found {found:?}"),
        });
    }
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct TrajectoryRow {
    pub tau: f64,
    pub t: f64,
    pub gamma: f64,
    pub omega: f64,
    pub re_c0: f64,
    pub im_c0: f64,
    pub re_c1: f64,
    pub im_c1: f64,
    pub fidelity: f64,
    pub p_diab: f64,
}

pub fn trajectory_csv(traj: &Trajectory, schedule: &ControlSchedule) -> OutputResult<Vec<u8>> {
    let fid = fidelity_series(traj, schedule)?;
    let pd = diabatic_probability_series(traj)?;
    let rows = traj.samples.iter().enumerate().map(|(i, s)| {
        [
            s.tau,
            s.tau * traj.duration,
            s.control.gamma,
            s.control.omega,
            s.state.c0.re,
            s.state.c0.im,
            s.state.c1.re,
            s.state.c1.im,
            fid.values[i],
            pd.values[i],
        ]
        .map(format_number)
    });
    to_csv(&TRAJECTORY_HEADER, rows)
}

pub fn read_trajectory(bytes: &[u8]) -> OutputResult<Vec<TrajectoryRow>> {
    from_csv(bytes, &TRAJECTORY_HEADER)
}

pub fn series_csv(series: &ObservableSeries) -> OutputResult<Vec<u8>> {
    let rows = series
        .taus
        .iter()
        .zip(&series.values)
        .map(|(&t, &v)| [format_number(t), format_number(v), series.kind.as_str().to_string()]);
    to_csv(&SERIES_HEADER, rows)
}

#[derive(Deserialize)]
struct RawSeriesRow {
    tau: f64,
    value: f64,
    kind: ObservableKind,
}

pub fn read_series(bytes: &[u8]) -> OutputResult<ObservableSeries> {
    let rows: Vec<RawSeriesRow> = from_csv(bytes, &SERIES_HEADER)?;
    let kind = rows.first().map_or(ObservableKind::AdiabaticFidelity, |r| r.kind);
    if let Some(i) = rows.iter().position(|r| r.kind != kind) {
        return Err(OutputError::Malformed {
            row: i + 1,
            reason: "mixed observable kinds".into(),
        });
    }
    Ok(ObservableSeries {
        taus: rows.iter().map(|r| r.tau).collect(),
        values: rows.iter().map(|r| r.value).collect(),
        kind,
    })
}

/// The parameter column holds `name=value`.
pub fn scan_csv(records: &[ScanRecord]) -> OutputResult<Vec<u8>> {
    let rows = records.iter().map(|r| {
        [
            format!("{}={}", r.parameter, format_number(r.value)),
            format_number(r.duration),
            format_number(r.final_fidelity),
        ]
    });
    to_csv(&SCAN_HEADER, rows)
}

#[derive(Deserialize)]
struct RawScanRow {
    parameter: String,
    duration: f64,
    final_fidelity: f64,
}

pub fn read_scan(bytes: &[u8]) -> OutputResult<Vec<ScanRecord>> {
    let rows: Vec<RawScanRow> = from_csv(bytes, &SCAN_HEADER)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let bad = |reason: String| OutputError::Malformed { row: i + 1, reason };
            let (name, value) = r
                .parameter
                .split_once('=')
                .ok_or_else(|| bad(format!("parameter `{}` is not name=value", r.parameter)))?;
            let parameter = ScanParameter::parse(name).ok_or_else(|| bad(format!("unknown parameter `{name}`")))?;
            let value = value
                .parse()
                .map_err(|_| bad(format!("bad parameter value `{value}`")))?;
            Ok(ScanRecord {
                parameter,
                value,
                duration: r.duration,
                final_fidelity: r.final_fidelity,
            })
        })
        .collect()
}

pub fn resource_csv(points: &[ResourcePoint]) -> OutputResult<Vec<u8>> {
    let rows = points.iter().map(|p| {
        [
            p.axis.as_str().to_string(),
            format_number(p.coupling_axis_value),
            format_number(p.min_duration),
            p.protocol_label.clone(),
        ]
    });
    to_csv(&RESOURCE_HEADER, rows)
}

#[derive(Deserialize)]
struct RawResourceRow {
    axis: String,
    axis_value: f64,
    min_duration: f64,
    protocol: String,
}

pub fn read_resource(bytes: &[u8]) -> OutputResult<Vec<ResourcePoint>> {
    let rows: Vec<RawResourceRow> = from_csv(bytes, &RESOURCE_HEADER)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let axis = CouplingAxis::parse(&r.axis).ok_or_else(|| OutputError::Malformed {
                row: i + 1,
                reason: format!("unknown axis `{}`", r.axis),
            })?;
            Ok(ResourcePoint {
                axis,
                coupling_axis_value: r.axis_value,
                min_duration: r.min_duration,
                protocol_label: r.protocol,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformMarker {
    Sample,
    Kick,
}

/// A sampled control value, or a kick with its area.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct WaveformRow {
    pub tau: f64,
    pub gamma: Option<f64>,
    pub omega: Option<f64>,
    pub area: Option<f64>,
    pub marker: WaveformMarker,
}

/// `samples` uniformly spaced control values followed by the kick list.
pub fn waveform_csv(schedule: &ControlSchedule, samples: usize) -> OutputResult<Vec<u8>> {
    let n = samples.max(2);
    let mut rows: Vec<[String; 5]> = (0..n)
        .map(|k| {
            let tau = k as f64 / (n - 1) as f64;
            let c = schedule.control(tau);
            [
                format_number(tau),
                format_number(c.gamma),
                format_number(c.omega),
                String::new(),
                "sample".to_string(),
            ]
        })
        .collect();
    rows.extend(schedule.kicks().iter().map(|k| {
        [
            format_number(k.tau),
            String::new(),
            String::new(),
            format_number(k.area),
            "kick".to_string(),
        ]
    }));
    to_csv(&WAVEFORM_HEADER, rows)
}

pub fn read_waveform(bytes: &[u8]) -> OutputResult<Vec<WaveformRow>> {
    from_csv(bytes, &WAVEFORM_HEADER)
}

/// Single-value table `name,value`, used for scalar results.
pub fn value_csv(rows: &[(&str, f64)]) -> OutputResult<Vec<u8>> {
    to_csv(
        &["name", "value"],
        rows.iter().map(|(k, v)| [k.to_string(), format_number(*v)]),
    )
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ValueRow {
    pub name: String,
    pub value: f64,
}

pub fn read_values(bytes: &[u8]) -> OutputResult<Vec<ValueRow>> {
    from_csv(bytes, &["name", "value"])
}
