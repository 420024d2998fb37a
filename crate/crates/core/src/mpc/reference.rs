//! Pure-pursuit reference points for the two robots.

use crate::geometry::{normalize, AssemblyState, Pose2};
use crate::planner::ReferencePath;

use super::MpcError;

/// Leader and follower reference positions placed `±l/2` along the heading
/// of a target waypoint.
pub fn formation_references(target: &Pose2, l: f64) -> ([f64; 2], [f64; 2]) {
    let (s, c) = target.theta.sin_cos();
    let h = 0.5 * l;
    (
        [target.x + h * c, target.y + h * s],
        [target.x - h * c, target.y - h * s],
    )
}

/// Tracks progress along a reference path so the closest-point search never
/// jumps back to an earlier pass of a path that approaches itself.
#[derive(Debug, Clone)]
pub struct PathFollower {
    waypoints: Vec<Pose2>,
    // arc length at each waypoint
    stations: Vec<f64>,
    progress: f64,
    window: Option<f64>,
}

impl PathFollower {
    pub fn new(path: &ReferencePath) -> Result<Self, MpcError> {
        if path.waypoints.is_empty() {
            return Err(MpcError::EmptyPath);
        }
        let mut stations = Vec::with_capacity(path.waypoints.len());
        let mut s = 0.0;
        stations.push(0.0);
        for w in path.waypoints.windows(2) {
            s += w[0].distance_to(&w[1]);
            stations.push(s);
        }
        Ok(Self {
            waypoints: path.waypoints.clone(),
            stations,
            progress: 0.0,
            window: None,
        })
    }

    /// Limits each closest-point search to `[progress, progress + window]`.
    pub fn with_window(mut self, window: f64) -> Self {
        self.window = Some(window);
        self
    }

    pub fn total_length(&self) -> f64 {
        *self.stations.last().unwrap()
    }

    pub fn progress(&self) -> f64 {
        self.progress
    }

    /// Arc length of the point on the polyline closest to `p`.
    fn project(&self, p: [f64; 2]) -> f64 {
        if self.waypoints.len() == 1 {
            return 0.0;
        }
        let (lo, hi) = match self.window {
            Some(w) => (self.progress, self.progress + w),
            None => (f64::NEG_INFINITY, f64::INFINITY),
        };
        let mut best = (f64::INFINITY, self.progress);
        for (i, w) in self.waypoints.windows(2).enumerate() {
            let (s0, s1) = (self.stations[i], self.stations[i + 1]);
            if s1 < lo || s0 > hi {
                continue;
            }
            let seg = [w[1].x - w[0].x, w[1].y - w[0].y];
            let len2 = seg[0] * seg[0] + seg[1] * seg[1];
            let t = if len2 > 0.0 {
                (((p[0] - w[0].x) * seg[0] + (p[1] - w[0].y) * seg[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let s = (s0 + t * (s1 - s0)).clamp(lo, hi);
            let q = self.point_at(s);
            let d = (q.x - p[0]).hypot(q.y - p[1]);
            if d < best.0 {
                best = (d, s);
            }
        }
        best.1
    }

    /// Pose at arc length `s`, clamped to the path. Positions are linear
    /// along each segment; the heading blends between the segment's endpoints.
    pub fn point_at(&self, s: f64) -> Pose2 {
        let n = self.waypoints.len();
        if n == 1 || s <= 0.0 {
            return self.waypoints[0];
        }
        if s >= self.total_length() {
            return self.waypoints[n - 1];
        }
        let i = match self.stations.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(i) => return self.waypoints[i],
            Err(i) => i - 1,
        };
        let (a, b) = (self.waypoints[i], self.waypoints[i + 1]);
        let span = self.stations[i + 1] - self.stations[i];
        let t = if span > 0.0 { (s - self.stations[i]) / span } else { 0.0 };
        Pose2::new(
            a.x + t * (b.x - a.x),
            a.y + t * (b.y - a.y),
            a.theta + t * normalize(b.theta - a.theta),
        )
    }

    /// Target waypoint `lookahead` meters beyond the assembly midpoint's
    /// projection onto the path. Advances the stored progress.
    pub fn target(&mut self, x: &AssemblyState, lookahead: f64) -> Pose2 {
        let s = self.project(x.midpoint());
        self.progress = self.progress.max(s);
        if self.window.is_none() {
            self.progress = s;
        }
        self.point_at(self.progress + lookahead)
    }

    /// Leader and follower references for the current state.
    pub fn references(&mut self, x: &AssemblyState, l: f64, lookahead: f64) -> ([f64; 2], [f64; 2]) {
        let target = self.target(x, lookahead);
        formation_references(&target, l)
    }
}

pub fn build_reference(
    path: &ReferencePath,
    x: &AssemblyState,
    l: f64,
    lookahead: f64,
) -> Result<([f64; 2], [f64; 2]), MpcError> {
    Ok(PathFollower::new(path)?.references(x, l, lookahead))
}
