//! Run statistics: tracking error against a spline-densified reference,
//! formation error and time spent per behavior mode.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::BehaviorMode;
use crate::geometry::Pose2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("log has no rows")]
    EmptyLog,
    #[error("reference has no waypoints")]
    EmptyReference,
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut b = diag[0];
    c[0] = upper[0] / b;
    rhs[0] /= b;
    for i in 1..n {
        b = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / b;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / b;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Natural cubic spline `y(s)` through `(s_i, y_i)`.
#[derive(Debug, Clone)]
struct Cubic {
    s: Vec<f64>,
    y: Vec<f64>,
    // second derivatives at the knots
    m: Vec<f64>,
}

impl Cubic {
    fn new(s: Vec<f64>, y: Vec<f64>) -> Self {
        let n = s.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let h: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
            let (mut lo, mut di, mut up, mut rhs) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
            for i in 0..k {
                lo[i] = h[i];
                di[i] = 2.0 * (h[i] + h[i + 1]);
                up[i] = h[i + 1];
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
            }
            solve_tridiagonal(&lo, &di, &up, &mut rhs);
            m[1..=k].copy_from_slice(&rhs);
        }
        Self { s, y, m }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.s.len();
        if n == 1 {
            return self.y[0];
        }
        let i = self.s.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
        let h = self.s[i + 1] - self.s[i];
        let a = (self.s[i + 1] - t) / h;
        let b = (t - self.s[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// The reference curve: a natural cubic spline through the waypoints in
/// chord-length parameterization, sampled densely.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePath {
    points: Vec<[f64; 2]>,
}

impl DensePath {
    pub const DEFAULT_FACTOR: usize = 100;

    /// Densifies `waypoints` with `factor` samples per segment. Coincident
    /// consecutive waypoints are merged first.
    pub fn new(waypoints: &[Pose2], factor: usize) -> Result<Self, MetricsError> {
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(waypoints.len());
        for w in waypoints {
            if pts.last().is_none_or(|p: &[f64; 2]| (p[0] - w.x).hypot(p[1] - w.y) > 1e-12) {
                pts.push([w.x, w.y]);
            }
        }
        if pts.is_empty() {
            return Err(MetricsError::EmptyReference);
        }
        if pts.len() == 1 {
            return Ok(Self { points: pts });
        }
        let mut s = vec![0.0];
        for w in pts.windows(2) {
            s.push(s.last().unwrap() + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
        }
        let xs = Cubic::new(s.clone(), pts.iter().map(|p| p[0]).collect());
        let ys = Cubic::new(s.clone(), pts.iter().map(|p| p[1]).collect());
        let factor = factor.max(1);
        let mut points = Vec::with_capacity((pts.len() - 1) * factor + 1);
        for i in 0..pts.len() - 1 {
            for j in 0..factor {
                let t = s[i] + (s[i + 1] - s[i]) * j as f64 / factor as f64;
                points.push([xs.eval(t), ys.eval(t)]);
            }
        }
        points.push(*pts.last().unwrap());
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Euclidean distance from `p` to the densified polyline.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        if self.points.len() == 1 {
            let q = self.points[0];
            return (p[0] - q[0]).hypot(p[1] - q[1]);
        }
        self.points
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// The per-tick quantities the summary is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    pub t: f64,
    pub midpoint: [f64; 2],
    /// Signed `r − l` in meters.
    pub r_error: f64,
    pub phi_leader: f64,
    pub phi_follower: f64,
    pub mode: BehaviorMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

impl Stats {
    /// Population statistics; `max` is the largest value.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Meters.
    pub tracking_error: Stats,
    /// Signed `r − l` in millimeters.
    pub distance_error_mm: Stats,
    /// Largest absolute bearing offset of either robot, radians.
    pub max_abs_bearing: f64,
    /// Midpoint distance traveled over completion time.
    pub avg_speed: f64,
    pub completion_time: f64,
    pub mode_durations: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solve_time_p50: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solve_time_p95: Option<f64>,
}

/// Nearest-rank percentile of unsorted data.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

/// Summarizes a run recorded at period `dt`. `solve_times` may be empty.
pub fn compute_metrics(
    samples: &[MetricSample],
    reference: &DensePath,
    dt: f64,
    solve_times: &[f64],
) -> Result<MetricSummary, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let tracking: Vec<f64> = samples.iter().map(|s| reference.distance(s.midpoint)).collect();
    let dist_mm: Vec<f64> = samples.iter().map(|s| 1e3 * s.r_error).collect();
    let traveled: f64 = samples
        .windows(2)
        .map(|w| (w[1].midpoint[0] - w[0].midpoint[0]).hypot(w[1].midpoint[1] - w[0].midpoint[1]))
        .sum();
    let completion_time = samples.len() as f64 * dt;
    let mut mode_durations: BTreeMap<String, f64> =
        BehaviorMode::ALL.iter().map(|m| (m.as_str().to_string(), 0.0)).collect();
    for s in samples {
        *mode_durations.get_mut(s.mode.as_str()).unwrap() += dt;
    }
    Ok(MetricSummary {
        tracking_error: Stats::of(&tracking),
        distance_error_mm: Stats::of(&dist_mm),
        max_abs_bearing: samples
            .iter()
            .map(|s| s.phi_leader.abs().max(s.phi_follower.abs()))
            .fold(0.0, f64::max),
        avg_speed: traveled / completion_time,
        completion_time,
        mode_durations,
        solve_time_p50: percentile(solve_times, 50.0),
        solve_time_p95: percentile(solve_times, 95.0),
    })
}
