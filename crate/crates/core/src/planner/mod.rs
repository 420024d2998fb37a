//! Global path search for the whole assembly.
//!
//! The assembly is treated as a two-steer virtual vehicle and searched with a
//! Hybrid A* discipline: nodes carry continuous poses, but at most one node is
//! kept per `(x, y, θ)` bin. Each expansion applies one constant-speed step of
//! the virtual vehicle for every pair of sampled front/rear steers.

mod grid;
mod heuristic;

use std::cmp::Ordering;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize, Pose2};
use crate::kinematics::{step_virtual_vehicle, VirtualVehicleState};

pub use grid::{MapError, OccupancyGrid};
pub use heuristic::{heuristic, HeuristicField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("no path: search space exhausted after {expansions} expansions")]
    NoPath { expansions: usize },
    #[error("no path: expansion limit {0} reached")]
    ExpansionLimit(usize),
    #[error("start pose {0:?} collides with the map")]
    InvalidStart(Pose2),
    #[error("goal pose {0:?} collides with the map")]
    InvalidGoal(Pose2),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub xy_resolution: f64,
    pub theta_resolution: f64,
    pub steer_samples: usize,
    pub steer_max: f64,
    pub primitive_speed: f64,
    pub primitive_duration: f64,
    pub footprint_half_length: f64,
    pub footprint_half_width: f64,
    pub inflation: f64,
    pub goal_xy_tolerance: f64,
    pub goal_theta_tolerance: f64,
    /// Cost per radian of steer change between consecutive primitives.
    pub steer_change_weight: f64,
    pub max_expansions: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            xy_resolution: 0.25,
            theta_resolution: 15f64.to_radians(),
            steer_samples: 3,
            steer_max: 0.4,
            primitive_speed: 0.5,
            primitive_duration: 0.75,
            footprint_half_length: 1.0,
            footprint_half_width: 0.35,
            inflation: 0.1,
            goal_xy_tolerance: 0.25,
            goal_theta_tolerance: 15f64.to_radians(),
            steer_change_weight: 0.5,
            max_expansions: 200_000,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidConfig(m.to_owned()));
        if !(self.xy_resolution > 0.0) {
            return bad("xy_resolution must be positive");
        }
        let bins = std::f64::consts::TAU / self.theta_resolution;
        if !(self.theta_resolution > 0.0) || (bins - bins.round()).abs() > 1e-6 {
            return bad("theta_resolution must divide 2*pi into whole bins");
        }
        if self.steer_samples < 2 {
            return bad("steer_samples must be at least 2");
        }
        if !(self.steer_max > 0.0 && self.steer_max < std::f64::consts::FRAC_PI_2) {
            return bad("steer_max must lie in (0, pi/2)");
        }
        if !(self.primitive_speed > 0.0 && self.primitive_duration > 0.0) {
            return bad("primitive speed and duration must be positive");
        }
        if !(self.footprint_half_length > 0.0 && self.footprint_half_width > 0.0) {
            return bad("footprint extents must be positive");
        }
        if !(self.inflation >= 0.0) {
            return bad("inflation must be non-negative");
        }
        if !(self.goal_xy_tolerance > 0.0 && self.goal_theta_tolerance > 0.0) {
            return bad("goal tolerances must be positive");
        }
        Ok(())
    }

    fn theta_bins(&self) -> i64 {
        (std::f64::consts::TAU / self.theta_resolution).round() as i64
    }

    /// The sampled steer values, evenly spaced over `[-steer_max, steer_max]`.
    pub fn steer_values(&self) -> Vec<f64> {
        let n = self.steer_samples;
        (0..n)
            .map(|i| -self.steer_max + 2.0 * self.steer_max * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn step_length(&self) -> f64 {
        self.primitive_speed * self.primitive_duration
    }
}

/// How the primitives between consecutive waypoints were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveTrace {
    /// `(steer_leader, steer_follower)` used to reach waypoint `i + 1` from `i`.
    pub steers: Vec<(f64, f64)>,
    pub speed: f64,
    pub duration: f64,
    pub l: f64,
    pub cost: f64,
}

/// Ordered waypoints `(x, y, θ)` for the assembly's reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    pub waypoints: Vec<Pose2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PrimitiveTrace>,
}

impl ReferencePath {
    pub fn from_waypoints(waypoints: Vec<Pose2>) -> Self {
        Self {
            waypoints,
            trace: None,
        }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Polyline length through the waypoint positions.
    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].distance_to(&w[1]))
            .sum()
    }

    /// Search cost, when the path came from [`plan_path`].
    pub fn cost(&self) -> Option<f64> {
        self.trace.as_ref().map(|t| t.cost)
    }

    /// Re-applies every recorded primitive and returns the largest deviation
    /// from the stored successor waypoint.
    pub fn replay_error(&self) -> Option<f64> {
        let trace = self.trace.as_ref()?;
        let mut worst: f64 = 0.0;
        for (w, &(sl, sf)) in self.waypoints.windows(2).zip(&trace.steers) {
            let s = VirtualVehicleState {
                pose: w[0],
                steer_leader: sl,
                steer_follower: sf,
            };
            let p = step_virtual_vehicle(&s, trace.speed, trace.duration, trace.l).ok()?;
            worst = worst
                .max((p.x - w[1].x).abs())
                .max((p.y - w[1].y).abs())
                .max(normalize(p.theta - w[1].theta).abs());
        }
        Some(worst)
    }
}

/// Whether the inflated footprint centered on `pose` hits an occupied cell or
/// leaves the map.
pub fn footprint_collides(grid: &OccupancyGrid, pose: &Pose2, cfg: &SearchConfig) -> bool {
    grid::rectangle_collides(
        grid,
        pose,
        cfg.footprint_half_length + cfg.inflation,
        cfg.footprint_half_width + cfg.inflation,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeuristicMode {
    /// `max(euclidean, grid Dijkstra distance)`.
    #[default]
    Full,
    /// Uniform-cost search.
    Zero,
}

type Bin = (i64, i64, i64);

#[derive(Debug, Clone)]
struct Node {
    pose: Pose2,
    g: f64,
    steer: (f64, f64),
    parent: Option<usize>,
}

#[derive(Debug, PartialEq)]
struct OpenEntry {
    f: f64,
    h: f64,
    seq: u64,
    node: usize,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    // BinaryHeap is a max-heap; invert so the lowest (f, h, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn plan_path(
    grid: &OccupancyGrid,
    cfg: &SearchConfig,
    start: Pose2,
    goal: Pose2,
    l: f64,
) -> Result<ReferencePath, PlanError> {
    plan_path_with(grid, cfg, start, goal, l, HeuristicMode::Full)
}

pub fn plan_path_with(
    grid: &OccupancyGrid,
    cfg: &SearchConfig,
    start: Pose2,
    goal: Pose2,
    l: f64,
    mode: HeuristicMode,
) -> Result<ReferencePath, PlanError> {
    cfg.validate()?;
    if !(l > 0.0) {
        return Err(PlanError::InvalidConfig("l must be positive".into()));
    }
    if footprint_collides(grid, &start, cfg) {
        return Err(PlanError::InvalidStart(start));
    }
    if footprint_collides(grid, &goal, cfg) {
        return Err(PlanError::InvalidGoal(goal));
    }

    let field = match mode {
        HeuristicMode::Full => Some(HeuristicField::build(grid, &goal)),
        HeuristicMode::Zero => None,
    };
    let h_of = |p: &Pose2| field.as_ref().map_or(0.0, |f| f.estimate(p, &goal));
    let in_goal = |p: &Pose2| {
        p.distance_to(&goal) <= cfg.goal_xy_tolerance
            && normalize(p.theta - goal.theta).abs() <= cfg.goal_theta_tolerance
    };
    let theta_bins = cfg.theta_bins();
    let bin_of = |p: &Pose2| -> Bin {
        let t = (p.theta.rem_euclid(std::f64::consts::TAU) / cfg.theta_resolution).floor() as i64;
        (
            (p.x / cfg.xy_resolution).floor() as i64,
            (p.y / cfg.xy_resolution).floor() as i64,
            t.rem_euclid(theta_bins),
        )
    };
    let steers = cfg.steer_values();
    let speed = cfg.primitive_speed;
    let duration = cfg.primitive_duration;

    let mut nodes = vec![Node {
        pose: start,
        g: 0.0,
        steer: (0.0, 0.0),
        parent: None,
    }];
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    let h0 = h_of(&start);
    open.push(OpenEntry {
        f: h0,
        h: h0,
        seq,
        node: 0,
    });
    let mut best: HashMap<Bin, usize> = HashMap::from([(bin_of(&start), 0)]);
    let mut closed: HashSet<Bin> = HashSet::new();
    let mut expansions = 0usize;

    while let Some(entry) = open.pop() {
        let current = nodes[entry.node].clone();
        let bin = bin_of(&current.pose);
        if closed.contains(&bin) || best.get(&bin) != Some(&entry.node) {
            continue;
        }
        if in_goal(&current.pose) {
            return Ok(reconstruct(&nodes, entry.node, speed, duration, l));
        }
        closed.insert(bin);
        expansions += 1;
        if expansions > cfg.max_expansions {
            return Err(PlanError::ExpansionLimit(cfg.max_expansions));
        }
        for &sl in &steers {
            for &sf in &steers {
                let state = VirtualVehicleState {
                    pose: current.pose,
                    steer_leader: sl,
                    steer_follower: sf,
                };
                let Ok(next) = step_virtual_vehicle(&state, speed, duration, l) else {
                    continue;
                };
                let next_bin = bin_of(&next);
                if closed.contains(&next_bin) {
                    continue;
                }
                let mid = step_virtual_vehicle(&state, speed, 0.5 * duration, l)
                    .expect("same steers as the full step");
                if footprint_collides(grid, &next, cfg) || footprint_collides(grid, &mid, cfg) {
                    continue;
                }
                let h = h_of(&next);
                if !h.is_finite() {
                    continue;
                }
                let g = current.g
                    + speed * duration
                    + cfg.steer_change_weight
                        * ((sl - current.steer.0).abs() + (sf - current.steer.1).abs());
                let node = Node {
                    pose: next,
                    g,
                    steer: (sl, sf),
                    parent: Some(entry.node),
                };
                let idx = match best.entry(next_bin) {
                    Entry::Occupied(mut o) => {
                        if nodes[*o.get()].g <= g {
                            continue;
                        }
                        nodes.push(node);
                        o.insert(nodes.len() - 1);
                        nodes.len() - 1
                    }
                    Entry::Vacant(v) => {
                        nodes.push(node);
                        v.insert(nodes.len() - 1);
                        nodes.len() - 1
                    }
                };
                seq += 1;
                open.push(OpenEntry {
                    f: g + h,
                    h,
                    seq,
                    node: idx,
                });
            }
        }
    }
    Err(PlanError::NoPath { expansions })
}

fn reconstruct(nodes: &[Node], goal: usize, speed: f64, duration: f64, l: f64) -> ReferencePath {
    let mut chain = vec![goal];
    while let Some(p) = nodes[*chain.last().unwrap()].parent {
        chain.push(p);
    }
    chain.reverse();
    let waypoints = chain.iter().map(|&i| nodes[i].pose).collect();
    let steers = chain.iter().skip(1).map(|&i| nodes[i].steer).collect();
    ReferencePath {
        waypoints,
        trace: Some(PrimitiveTrace {
            steers,
            speed,
            duration,
            l,
            cost: nodes[goal].g,
        }),
    }
}
