//! Run outputs: the per-tick CSV log and its companions.
//!
//! A log starts with `#` comment lines carrying `key: value` pairs
//! (`format`, `scenario`, `scenario_sha256`, `seed`, `dt`, `config`),
//! followed by a CSV header row and one row per tick. Floats are written in
//! shortest round-trip form, so a log parses back to the exact values that
//! produced it. Wall-clock solver times live in `timing.csv` so that the log
//! itself is reproducible byte for byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{BehaviorMode, Classification};
use crate::estimator::EstimatorStats;
use crate::geometry::{AssemblyState, Pose2};
use crate::metrics::{compute_metrics, DensePath, MetricSample, MetricSummary, MetricsError};
use crate::mpc::SolveStatus;
use crate::planner::ReferencePath;
use crate::sim::{Outcome, RunResult, TickRecord};

use super::scenario::LoadedScenario;

pub const LOG_FORMAT: &str = "trolley-log/1";
const FLUSH_EVERY: usize = 100;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing header key {key:?}")]
    MissingHeader { path: PathBuf, key: String },
    #[error("{path}: bad header value for {key:?}: {value:?}")]
    BadHeader { path: PathBuf, key: String, value: String },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io { path: path.to_owned(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> LogError + '_ {
    move |source| LogError::Csv { path: path.to_owned(), source }
}

/// The comment block at the top of a log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogHeader {
    pub scenario: String,
    pub scenario_sha256: String,
    pub seed: u64,
    pub dt: f64,
    /// Canonical JSON of the effective scenario.
    pub config: String,
}

impl LogHeader {
    pub fn for_scenario(s: &LoadedScenario) -> Self {
        Self {
            scenario: s.file.name.clone(),
            scenario_sha256: s.hash(),
            seed: s.file.seed,
            dt: s.file.control.dt,
            config: s.canonical_json(),
        }
    }

    fn lines(&self) -> String {
        format!(
            "# format: {LOG_FORMAT}\n# scenario: {}\n# scenario_sha256: {}\n# seed: {}\n# dt: {}\n# config: {}\n",
            self.scenario, self.scenario_sha256, self.seed, self.dt, self.config
        )
    }

    fn parse(text: &str, path: &Path) -> Result<Self, LogError> {
        let mut kv = BTreeMap::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line[1..].trim_start().split_once(": ") {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let get = |key: &str| {
            kv.get(key).cloned().ok_or_else(|| LogError::MissingHeader {
                path: path.to_owned(),
                key: key.into(),
            })
        };
        let bad = |key: &str, value: String| LogError::BadHeader {
            path: path.to_owned(),
            key: key.into(),
            value,
        };
        let format = get("format")?;
        if format != LOG_FORMAT {
            return Err(bad("format", format));
        }
        let seed = get("seed")?;
        let dt = get("dt")?;
        Ok(Self {
            scenario: get("scenario")?,
            scenario_sha256: get("scenario_sha256")?,
            seed: seed.parse().map_err(|_| bad("seed", seed.clone()))?,
            dt: dt.parse().map_err(|_| bad("dt", dt.clone()))?,
            config: get("config")?,
        })
    }
}

/// One log row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub x_leader: f64,
    pub y_leader: f64,
    pub theta_leader: f64,
    pub x_follower: f64,
    pub y_follower: f64,
    pub theta_follower: f64,
    pub est_x_leader: f64,
    pub est_y_leader: f64,
    pub est_theta_leader: f64,
    pub est_x_follower: f64,
    pub est_y_follower: f64,
    pub est_theta_follower: f64,
    pub covariance_trace: f64,
    pub v_leader: f64,
    pub w_leader: f64,
    pub v_follower: f64,
    pub w_follower: f64,
    pub mode: BehaviorMode,
    pub classification: Classification,
    pub r_error: f64,
    pub phi_leader: f64,
    pub phi_follower: f64,
    pub tracking_error: f64,
    pub mpc_objective: f64,
    pub mpc_iterations: usize,
    pub mpc_status: SolveStatus,
}

impl From<&TickRecord> for LogRow {
    fn from(r: &TickRecord) -> Self {
        let (tl, tf) = (r.truth.leader, r.truth.follower);
        let (el, ef) = (r.estimate.leader, r.estimate.follower);
        Self {
            t: r.t,
            x_leader: tl.x,
            y_leader: tl.y,
            theta_leader: tl.theta,
            x_follower: tf.x,
            y_follower: tf.y,
            theta_follower: tf.theta,
            est_x_leader: el.x,
            est_y_leader: el.y,
            est_theta_leader: el.theta,
            est_x_follower: ef.x,
            est_y_follower: ef.y,
            est_theta_follower: ef.theta,
            covariance_trace: r.covariance_trace,
            v_leader: r.command.v_leader,
            w_leader: r.command.w_leader,
            v_follower: r.command.v_follower,
            w_follower: r.command.w_follower,
            mode: r.mode,
            classification: r.classification,
            r_error: r.r_error,
            phi_leader: r.phi_leader,
            phi_follower: r.phi_follower,
            tracking_error: r.tracking_error,
            mpc_objective: r.mpc_objective,
            mpc_iterations: r.mpc_iterations,
            mpc_status: r.mpc_status,
        }
    }
}

impl LogRow {
    pub fn truth(&self) -> AssemblyState {
        AssemblyState::new(
            Pose2::new(self.x_leader, self.y_leader, self.theta_leader),
            Pose2::new(self.x_follower, self.y_follower, self.theta_follower),
        )
    }

    pub fn metric_sample(&self) -> MetricSample {
        MetricSample {
            t: self.t,
            midpoint: self.truth().midpoint(),
            r_error: self.r_error,
            phi_leader: self.phi_leader,
            phi_follower: self.phi_follower,
            mode: self.mode,
        }
    }
}

/// Streams log rows to disk, flushing every hundred ticks.
pub struct LogWriter {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
    rows: usize,
}

impl LogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self, LogError> {
        let mut file = BufWriter::new(File::create(path).map_err(io_err(path))?);
        file.write_all(header.lines().as_bytes()).map_err(io_err(path))?;
        Ok(Self {
            path: path.to_owned(),
            inner: csv::Writer::from_writer(file),
            rows: 0,
        })
    }

    pub fn write(&mut self, record: &TickRecord) -> Result<(), LogError> {
        self.inner.serialize(LogRow::from(record)).map_err(csv_err(&self.path))?;
        self.rows += 1;
        if self.rows % FLUSH_EVERY == 0 {
            self.inner.flush().map_err(io_err(&self.path))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), LogError> {
        self.inner.flush().map_err(io_err(&self.path))
    }
}

/// A parsed log.
#[derive(Debug, Clone)]
pub struct LogFile {
    pub header: LogHeader,
    pub rows: Vec<LogRow>,
}

pub fn read_log(path: &Path) -> Result<LogFile, LogError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let header = LogHeader::parse(&text, path)?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<LogRow>, _>>()
        .map_err(csv_err(path))?;
    Ok(LogFile { header, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ReferenceRow {
    x: f64,
    y: f64,
    theta: f64,
}

pub fn write_reference(path: &Path, reference: &ReferencePath) -> Result<(), LogError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for p in &reference.waypoints {
        w.serialize(ReferenceRow { x: p.x, y: p.y, theta: p.theta }).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_reference(path: &Path) -> Result<ReferencePath, LogError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let poses = r
        .deserialize()
        .map(|row| row.map(|p: ReferenceRow| Pose2::new(p.x, p.y, p.theta)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(csv_err(path))?;
    Ok(ReferencePath::from_waypoints(poses))
}

#[derive(Debug, Serialize)]
struct TimingRow {
    t: f64,
    solve_time: f64,
    iterations: usize,
}

pub fn write_timing(path: &Path, records: &[TickRecord]) -> Result<(), LogError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in records {
        w.serialize(TimingRow {
            t: r.t,
            solve_time: r.solve_time,
            iterations: r.mpc_iterations,
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Solver times from `timing.csv`.
pub fn read_timing(path: &Path) -> Result<Vec<f64>, LogError> {
    #[derive(Deserialize)]
    struct Row {
        solve_time: f64,
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .map(|row| row.map(|r: Row| r.solve_time))
        .collect::<Result<Vec<_>, _>>()
        .map_err(csv_err(path))
}

#[derive(Debug, Serialize)]
struct PlotRow {
    t: f64,
    v_leader: f64,
    v_follower: f64,
    phi_leader: f64,
    phi_follower: f64,
    r_error_mm: f64,
    tracking_error: f64,
    mode: BehaviorMode,
    /// 1 while the assembly is not in plain navigation.
    shade: u8,
}

/// The per-tick series the plotting scripts draw.
pub fn write_plot_quantities(path: &Path, rows: &[LogRow]) -> Result<(), LogError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(PlotRow {
            t: r.t,
            v_leader: r.v_leader,
            v_follower: r.v_follower,
            phi_leader: r.phi_leader,
            phi_follower: r.phi_follower,
            r_error_mm: 1e3 * r.r_error,
            tracking_error: r.tracking_error,
            mode: r.mode,
            shade: u8::from(r.mode != BehaviorMode::Navigation),
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Metrics over logged rows against a reference.
pub fn metrics_from_rows(rows: &[LogRow], reference: &ReferencePath, dt: f64, solve_times: &[f64]) -> Result<MetricSummary, LogError> {
    let samples: Vec<MetricSample> = rows.iter().map(LogRow::metric_sample).collect();
    let dense = DensePath::new(&reference.waypoints, DensePath::DEFAULT_FACTOR)?;
    Ok(compute_metrics(&samples, &dense, dt, solve_times)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub scenario_sha256: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub ticks: usize,
    /// Desired leader-follower distance (m).
    pub desired_distance: f64,
    pub measurements_applied: usize,
    pub measurements_gated: usize,
    pub measurements_dropped_late: usize,
    pub metrics: MetricSummary,
}

impl RunSummary {
    fn new(header: &LogHeader, result: &RunResult, metrics: MetricSummary) -> Self {
        let EstimatorStats {
            applied,
            gated,
            dropped_late,
        } = result.estimator;
        Self {
            scenario: header.scenario.clone(),
            scenario_sha256: header.scenario_sha256.clone(),
            seed: header.seed,
            outcome: result.outcome,
            ticks: result.records.len(),
            desired_distance: result.l,
            measurements_applied: applied,
            measurements_gated: gated,
            measurements_dropped_late: dropped_late,
            metrics,
        }
    }
}

/// File names inside an output directory.
pub mod files {
    pub const LOG: &str = "log.csv";
    pub const REFERENCE: &str = "reference.csv";
    pub const TIMING: &str = "timing.csv";
    pub const PLOT: &str = "plot_quantities.csv";
    pub const SUMMARY: &str = "summary.json";
}

/// Writes every output of a finished run into `dir` and returns the summary.
pub fn write_run_outputs(dir: &Path, scenario: &LoadedScenario, result: &RunResult) -> Result<RunSummary, LogError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let header = LogHeader::for_scenario(scenario);
    let mut log = LogWriter::create(&dir.join(files::LOG), &header)?;
    for r in &result.records {
        log.write(r)?;
    }
    log.finish()?;
    write_reference(&dir.join(files::REFERENCE), &result.reference)?;
    write_timing(&dir.join(files::TIMING), &result.records)?;
    let rows: Vec<LogRow> = result.records.iter().map(LogRow::from).collect();
    write_plot_quantities(&dir.join(files::PLOT), &rows)?;
    let metrics = metrics_from_rows(&rows, &result.reference, header.dt, &result.solve_times())?;
    let summary = RunSummary::new(&header, result, metrics);
    let path = dir.join(files::SUMMARY);
    std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").map_err(io_err(&path))?;
    Ok(summary)
}

/// Recomputes the metrics of a finished output directory from its files.
pub fn metrics_from_dir(dir: &Path) -> Result<MetricSummary, LogError> {
    let log = read_log(&dir.join(files::LOG))?;
    let reference = read_reference(&dir.join(files::REFERENCE))?;
    let timing = dir.join(files::TIMING);
    let solve_times = if timing.exists() { read_timing(&timing)? } else { Vec::new() };
    metrics_from_rows(&log.rows, &reference, log.header.dt, &solve_times)
}
