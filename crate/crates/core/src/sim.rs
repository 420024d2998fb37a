//! Closed-loop simulation of the assembly.
//!
//! Each tick of length `dt` runs, in order: measurement synthesis and filter
//! updates, pedestrian detection in the leader's ROI, the behavior automaton,
//! one NMPC solve on the current belief, command shaping, and finally the
//! plant step with sampled process noise, skipped while the command is zero.
//! The loop is sequential and fully determined by the scenario and its seed.

use std::f64::consts::PI;

use nalgebra::{Matrix6, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{roi_polar, BehaviorConfig, BehaviorError, BehaviorMode, BehaviorSelector, Classification};
use crate::estimator::{
    perturb_state, sample_gaussian, synthesize_measurements, BeliefState, EkfConfig, Estimator, EstimatorError,
    EstimatorStats, MeasurementRates, NoiseModel,
};
use crate::geometry::{normalize, AssemblyState, ControlInput, Pose2};
use crate::kinematics::{bearing_offsets, desired_distance, relative_distance, step_pair, KinematicsError, TrolleyStack, UnicyclePairModel};
use crate::metrics::{DensePath, MetricSample, MetricsError};
use crate::mpc::{first_command, solve, MpcError, MpcLimits, MpcProblem, MpcSolution, MpcWeights, PathFollower, SolveStatus};
use crate::planner::{footprint_collides, plan_path, OccupancyGrid, PlanError, ReferencePath, SearchConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("pedestrian {0}: knot times must be strictly increasing")]
    PedestrianKnots(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A scripted pedestrian moving piecewise linearly between knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pedestrian {
    pub id: String,
    /// `(time, [x, y])` knots.
    pub knots: Vec<(f64, [f64; 2])>,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    0.25
}

impl Pedestrian {
    pub fn new(id: impl Into<String>, knots: Vec<(f64, [f64; 2])>, radius: f64) -> Result<Self, SimError> {
        let p = Self {
            id: id.into(),
            knots,
            radius,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let finite = self.knots.iter().all(|(t, p)| t.is_finite() && p[0].is_finite() && p[1].is_finite());
        if self.knots.is_empty() || !finite || self.knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(SimError::PedestrianKnots(self.id.clone()));
        }
        if !(self.radius >= 0.0) {
            return Err(SimError::InvalidScenario(format!("pedestrian {}: negative radius", self.id)));
        }
        Ok(())
    }

    /// Position at `t`: held at the first knot before it starts and at the
    /// last knot after it ends.
    pub fn position(&self, t: f64) -> [f64; 2] {
        let k = &self.knots;
        let i = k.partition_point(|(kt, _)| *kt <= t);
        if i == 0 {
            return k[0].1;
        }
        if i == k.len() {
            return k[i - 1].1;
        }
        let ((t0, a), (t1, b)) = (k[i - 1], k[i]);
        let s = (t - t0) / (t1 - t0);
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    }
}

/// Center of the goal region for the two-arc course.
pub const TWO_ARC_GOAL: [f64; 2] = [4.5, 4.2];

/// An S-curve from the origin to [`TWO_ARC_GOAL`]: an arc of curvature `+κ`
/// followed by one of `−κ`, equal in length and tangent-continuous, sampled
/// uniformly by arc length.
pub fn two_arc_reference(curvature: f64, n_waypoints: usize) -> Result<ReferencePath, SimError> {
    two_arc_reference_to(curvature, n_waypoints, TWO_ARC_GOAL)
}

/// [`two_arc_reference`] ending at `goal`. When no S-curve of curvature `κ`
/// reaches that far, the widest one (two quarter turns) is scaled up to fit.
pub fn two_arc_reference_to(curvature: f64, n_waypoints: usize, goal: [f64; 2]) -> Result<ReferencePath, SimError> {
    if !(curvature >= 0.0) || !curvature.is_finite() || n_waypoints < 2 {
        return Err(SimError::InvalidScenario(
            "two-arc reference needs curvature >= 0 and at least 2 waypoints".into(),
        ));
    }
    let chord = goal[0].hypot(goal[1]);
    let bearing = goal[1].atan2(goal[0]);
    if curvature < 1e-9 || chord == 0.0 {
        let waypoints = (0..n_waypoints)
            .map(|i| {
                let s = i as f64 / (n_waypoints - 1) as f64;
                Pose2::new(s * goal[0], s * goal[1], bearing)
            })
            .collect();
        return Ok(ReferencePath::from_waypoints(waypoints));
    }
    // each arc subtends `half` radians; the chord of one arc is (2/κ) sin(half/2)
    // and both arc chords are parallel, so the full chord is (4/κ) sin(half/2)
    let ratio = chord * curvature / 4.0;
    let (half, scale) = if ratio <= 1.0 {
        (2.0 * ratio.asin(), 1.0)
    } else {
        (PI, ratio)
    };
    let arc = half / curvature;
    let theta0 = bearing - 0.5 * half;
    let total = 2.0 * arc;
    let at = |s: f64| -> Pose2 {
        let k = curvature;
        let (s1, s2) = (s.min(arc), (s - arc).max(0.0));
        let th1 = theta0 + k * s1;
        let x1 = ((th1).sin() - theta0.sin()) / k;
        let y1 = (theta0.cos() - th1.cos()) / k;
        let th2 = th1 - k * s2;
        let x2 = x1 - (th2.sin() - th1.sin()) / k;
        let y2 = y1 - (th1.cos() - th2.cos()) / k;
        Pose2::new(scale * x2, scale * y2, th2)
    };
    let waypoints = (0..n_waypoints)
        .map(|i| at(total * i as f64 / (n_waypoints - 1) as f64))
        .collect();
    Ok(ReferencePath::from_waypoints(waypoints))
}

/// Where the reference path comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSource {
    /// Hybrid A* from start to goal.
    Planned,
    TwoArc { curvature: f64, waypoints: usize },
    Waypoints { poses: Vec<Pose2> },
}

/// Loop timing and plant options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub dt: f64,
    pub horizon: usize,
    /// Pure-pursuit lookahead along the reference (m).
    pub lookahead: f64,
    /// `|r − l|` above this ends the run as an integrity violation (m).
    pub integrity_threshold: f64,
    /// First-order lag on the follower's linear speed (s); `None` disables it.
    pub follower_lag: Option<f64>,
    /// Standard deviation of pedestrian position detections (m).
    pub pedestrian_sigma: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 20,
            lookahead: 1.0,
            integrity_threshold: 0.15,
            follower_lag: None,
            pedestrian_sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub map: OccupancyGrid,
    pub trolleys: TrolleyStack,
    /// Assembly midpoint.
    pub start: Pose2,
    pub goal: Pose2,
    pub goal_tolerance: f64,
    pub pedestrians: Vec<Pedestrian>,
    pub limits: MpcLimits,
    pub weights: MpcWeights,
    pub search: SearchConfig,
    pub noise: NoiseModel,
    pub initial_covariance: Matrix6<f64>,
    pub rates: MeasurementRates,
    pub seed: u64,
    pub duration_cap: f64,
    pub behavior: BehaviorConfig,
    pub ekf: EkfConfig,
    pub control: ControlConfig,
    pub reference: ReferenceSource,
}

impl Scenario {
    /// A scenario on `map` with every other setting at its default.
    pub fn new(name: impl Into<String>, map: OccupancyGrid, start: Pose2, goal: Pose2) -> Self {
        Self {
            name: name.into(),
            map,
            trolleys: TrolleyStack::default(),
            start,
            goal,
            goal_tolerance: 0.3,
            pedestrians: Vec::new(),
            limits: MpcLimits::default(),
            weights: MpcWeights::default(),
            search: SearchConfig::default(),
            noise: crate::estimator::nominal_noise(),
            initial_covariance: default_initial_covariance(),
            rates: MeasurementRates::default(),
            seed: 0,
            duration_cap: 60.0,
            behavior: BehaviorConfig::default(),
            ekf: EkfConfig::default(),
            control: ControlConfig::default(),
            reference: ReferenceSource::Planned,
        }
    }

    pub fn desired_distance(&self) -> Result<f64, SimError> {
        Ok(desired_distance(&self.trolleys)?)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        if !(self.goal_tolerance > 0.0) {
            return bad("goal_tolerance must be positive");
        }
        if !(self.duration_cap > 0.0) {
            return bad("duration_cap must be positive");
        }
        let c = &self.control;
        if !(c.dt > 0.0) || c.horizon == 0 || !(c.lookahead >= 0.0) || !(c.integrity_threshold > 0.0) {
            return bad("control: dt, horizon and integrity_threshold must be positive");
        }
        if c.follower_lag.is_some_and(|tau| !(tau > 0.0)) || !(c.pedestrian_sigma >= 0.0) {
            return bad("control: follower_lag must be positive and pedestrian_sigma non-negative");
        }
        self.desired_distance()?;
        self.limits.validate()?;
        self.weights.validate()?;
        self.search.validate()?;
        self.noise.validate()?;
        self.rates.validate()?;
        self.behavior.validate()?;
        BeliefState::new(AssemblyState::from_midpoint(self.start, 1.0), self.initial_covariance, 0.0)?;
        for p in &self.pedestrians {
            p.validate()?;
        }
        if footprint_collides(&self.map, &self.start, &self.search) {
            return Err(PlanError::InvalidStart(self.start).into());
        }
        if footprint_collides(&self.map, &self.goal, &self.search) {
            return Err(PlanError::InvalidGoal(self.goal).into());
        }
        Ok(())
    }

    /// The reference path the run will follow.
    pub fn reference_path(&self) -> Result<ReferencePath, SimError> {
        let l = self.desired_distance()?;
        match &self.reference {
            ReferenceSource::Planned => {
                let mut path = plan_path(&self.map, &self.search, self.start, self.goal, l)?;
                // the search stops inside the goal region; finish on the goal itself
                let last = path.waypoints[path.waypoints.len() - 1];
                if (last.x - self.goal.x).hypot(last.y - self.goal.y) > 1e-9 {
                    path.waypoints.push(self.goal);
                    path.trace = None;
                }
                Ok(path)
            }
            ReferenceSource::TwoArc { curvature, waypoints } => {
                let p = two_arc_reference_to(
                    *curvature,
                    *waypoints,
                    [self.goal.x - self.start.x, self.goal.y - self.start.y],
                )?;
                Ok(ReferencePath::from_waypoints(
                    p.waypoints
                        .iter()
                        .map(|w| Pose2::new(w.x + self.start.x, w.y + self.start.y, w.theta))
                        .collect(),
                ))
            }
            ReferenceSource::Waypoints { poses } if poses.is_empty() => {
                Err(SimError::InvalidScenario("reference waypoint list is empty".into()))
            }
            ReferenceSource::Waypoints { poses } => Ok(ReferencePath::from_waypoints(poses.clone())),
        }
    }
}

/// Initial belief spread used when a scenario does not set one.
pub fn default_initial_covariance() -> Matrix6<f64> {
    Matrix6::from_diagonal(&nalgebra::Vector6::new(0.01, 0.01, 0.005, 0.01, 0.01, 0.005).map(|s| s * s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    GoalReached,
    Timeout,
    IntegrityViolation,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::GoalReached => "goal_reached",
            Self::Timeout => "timeout",
            Self::IntegrityViolation => "integrity_violation",
        }
    }
}

/// Everything logged for one tick. States are taken at the start of the
/// tick; `command` is applied over `[t, t + dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub truth: AssemblyState,
    pub estimate: AssemblyState,
    /// Trace of the belief covariance.
    pub covariance_trace: f64,
    pub command: ControlInput,
    pub mode: BehaviorMode,
    /// Raw classification this tick, before debouncing.
    pub classification: Classification,
    /// Signed `r − l` (m).
    pub r_error: f64,
    pub phi_leader: f64,
    pub phi_follower: f64,
    pub tracking_error: f64,
    pub mpc_objective: f64,
    pub mpc_iterations: usize,
    pub mpc_status: SolveStatus,
    /// Wall-clock solver time (s). Not deterministic.
    pub solve_time: f64,
}

impl TickRecord {
    pub fn metric_sample(&self) -> MetricSample {
        MetricSample {
            t: self.t,
            midpoint: self.truth.midpoint(),
            r_error: self.r_error,
            phi_leader: self.phi_leader,
            phi_follower: self.phi_follower,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: Outcome,
    pub records: Vec<TickRecord>,
    pub reference: ReferencePath,
    pub l: f64,
    pub estimator: EstimatorStats,
}

impl RunResult {
    pub fn metric_samples(&self) -> Vec<MetricSample> {
        self.records.iter().map(TickRecord::metric_sample).collect()
    }

    pub fn solve_times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.solve_time).collect()
    }
}

fn is_zero(noise: &NoiseModel) -> bool {
    noise.process.iter().chain(noise.leader.iter()).chain(noise.follower.iter()).chain(noise.relative.iter()).all(|v| *v == 0.0)
}

pub fn run(scenario: &Scenario) -> Result<RunResult, SimError> {
    scenario.validate()?;
    let l = scenario.desired_distance()?;
    let reference = scenario.reference_path()?;
    let dense = DensePath::new(&reference.waypoints, DensePath::DEFAULT_FACTOR)?;
    let ctl = scenario.control;
    let dt = ctl.dt;
    let model = UnicyclePairModel::new(dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut detection_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    detection_rng.set_stream(1);

    let mut truth = AssemblyState::from_midpoint(scenario.start, l);
    let p0 = if is_zero(&scenario.noise) {
        Matrix6::zeros()
    } else {
        scenario.initial_covariance
    };
    let mut estimator = Estimator::new(
        BeliefState::new(perturb_state(&truth, &p0, &mut rng), p0, 0.0)?,
        scenario.ekf,
    );
    let mut selector = BehaviorSelector::new(scenario.behavior)?;
    let mut follower = PathFollower::new(&reference)?.with_window(2.0 * ctl.lookahead + 1.0);
    let pedestrian_cov = nalgebra::Matrix2::identity() * ctl.pedestrian_sigma.powi(2);
    let goal = [scenario.goal.x, scenario.goal.y];
    let mut base_limits = scenario.limits;
    if base_limits.workspace.is_none() {
        base_limits.workspace = Some(scenario.map.world_bounds());
    }

    let mut warm: Option<MpcSolution> = None;
    let mut follower_speed = 0.0;
    let mut records = Vec::new();
    let mut k: u64 = 0;
    let outcome = loop {
        let t = k as f64 * dt;
        for m in synthesize_measurements(&truth, &scenario.noise, &scenario.rates, t, &mut rng) {
            estimator.enqueue(m);
        }
        estimator.drain()?;
        let belief = *estimator.belief();

        let detections: Vec<_> = scenario
            .pedestrians
            .iter()
            .map(|p| {
                let e: Vector2<f64> = sample_gaussian(&pedestrian_cov, &mut detection_rng);
                let q = p.position(t);
                roi_polar(&belief.mean.leader, [q[0] + e[0], q[1] + e[1]])
            })
            .collect();
        let seen = crate::behavior::classify(&detections, &scenario.behavior.roi);
        selector.advance(seen);

        let limits = selector.planner_limits(&base_limits);
        let (p_ref_leader, p_ref_follower) = follower.references(&belief.mean, l, ctl.lookahead);
        let problem = MpcProblem {
            horizon: ctl.horizon,
            dt,
            x_init: belief.mean,
            l,
            p_ref_leader,
            p_ref_follower,
            weights: scenario.weights.clone(),
            limits,
            u_prev: selector.last_command(),
        };
        let solution = solve(&problem, warm.as_ref())?;
        let (_, command) = selector.shape(&first_command(&solution), &base_limits, dt);

        let mut applied = command;
        if let Some(tau) = ctl.follower_lag {
            follower_speed += (dt / tau).min(1.0) * (command.v_follower - follower_speed);
            applied.v_follower = follower_speed;
        } else {
            follower_speed = command.v_follower;
        }

        let r = relative_distance(&truth);
        let (phi_leader, phi_follower) = bearing_offsets(&truth)?;
        records.push(TickRecord {
            t,
            truth,
            estimate: belief.mean,
            covariance_trace: belief.covariance.trace(),
            command,
            mode: selector.mode(),
            classification: seen,
            r_error: r - l,
            phi_leader,
            phi_follower,
            tracking_error: dense.distance(truth.midpoint()),
            mpc_objective: solution.objective,
            mpc_iterations: solution.iterations,
            mpc_status: solution.status,
            solve_time: solution.solve_time,
        });
        warm = Some(solution);

        let moved = step_pair(&model, &truth, &applied);
        // a parked assembly does not drift
        truth = if applied == ControlInput::ZERO {
            moved
        } else {
            perturb_state(&moved, &scenario.noise.process, &mut rng)
        };
        estimator.predict(&command, dt, &scenario.noise.process)?;
        k += 1;

        let mid = truth.midpoint();
        if (mid[0] - goal[0]).hypot(mid[1] - goal[1]) <= scenario.goal_tolerance {
            break Outcome::GoalReached;
        }
        if (relative_distance(&truth) - l).abs() > ctl.integrity_threshold {
            break Outcome::IntegrityViolation;
        }
        if k as f64 * dt >= scenario.duration_cap - 1e-9 {
            break Outcome::Timeout;
        }
    };
    Ok(RunResult {
        outcome,
        records,
        reference,
        l,
        estimator: estimator.stats(),
    })
}

/// Heading change between consecutive waypoints, wrapped.
pub fn heading_steps(path: &ReferencePath) -> Vec<f64> {
    path.waypoints
        .windows(2)
        .map(|w| normalize(w[1].theta - w[0].theta))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_arc_course_ends_at_the_goal() {
        let p = two_arc_reference(0.4, 30).unwrap();
        assert_eq!(p.len(), 30);
        let end = p.waypoints.last().unwrap();
        assert!((end.x - 4.5).hypot(end.y - 4.2) < 0.05);
        assert_eq!(p.waypoints[0].position(), [0.0, 0.0]);
        let steps = heading_steps(&p);
        // one sign change at the junction; equal magnitude elsewhere
        let step = 0.4 * p.waypoints[0].distance_to(&p.waypoints[1]);
        let arcs: Vec<_> = steps.iter().filter(|d| (d.abs() - steps[0].abs()).abs() < 1e-9).collect();
        assert!(arcs.len() >= 27, "{steps:?}");
        assert!(steps[0] > 0.0 && steps.last().unwrap() < &0.0);
        assert!((steps[0] - step).abs() < 1e-3);
    }

    #[test]
    fn two_arc_is_tangent_continuous() {
        let p = two_arc_reference(0.4, 2001).unwrap();
        for w in p.waypoints.windows(2) {
            let chord = (w[1].y - w[0].y).atan2(w[1].x - w[0].x);
            let mid = w[0].theta + 0.5 * normalize(w[1].theta - w[0].theta);
            assert!(normalize(chord - mid).abs() < 1e-6);
        }
    }

    #[test]
    fn two_arc_degenerate_cases() {
        let p = two_arc_reference(0.0, 5).unwrap();
        assert_abs_diff_eq!(p.waypoints[4].x, 4.5, epsilon = 1e-12);
        assert!(heading_steps(&p).iter().all(|d| d.abs() < 1e-12));
        // too tight to reach: scaled up, still ends on target
        let p = two_arc_reference_to(2.0, 50, [4.5, 4.2]).unwrap();
        let end = p.waypoints.last().unwrap();
        assert_abs_diff_eq!(end.x, 4.5, epsilon = 1e-9);
        assert_abs_diff_eq!(end.y, 4.2, epsilon = 1e-9);
        assert!(two_arc_reference(0.4, 1).is_err());
    }

    #[test]
    fn pedestrian_interpolation() {
        let p = Pedestrian::new("a", vec![(1.0, [0.0, 0.0]), (3.0, [2.0, 4.0])], 0.2).unwrap();
        assert_eq!(p.position(0.0), [0.0, 0.0]);
        assert_eq!(p.position(2.0), [1.0, 2.0]);
        assert_eq!(p.position(10.0), [2.0, 4.0]);
        assert_eq!(
            Pedestrian::new("b", vec![(1.0, [0.0, 0.0]), (1.0, [1.0, 0.0])], 0.2),
            Err(SimError::PedestrianKnots("b".into()))
        );
    }

    #[test]
    fn duration_cap_honored() {
        let mut s = Scenario::new(
            "cap",
            OccupancyGrid::empty(60, 20, 0.25),
            Pose2::new(2.0, 2.5, 0.0),
            Pose2::new(12.0, 2.5, 0.0),
        );
        s.reference = ReferenceSource::Waypoints {
            poses: vec![Pose2::new(2.0, 2.5, 0.0), Pose2::new(12.0, 2.5, 0.0)],
        };
        s.duration_cap = 0.1;
        let r = run(&s).unwrap();
        assert_eq!(r.outcome, Outcome::Timeout);
        assert_eq!(r.records.len(), 1);
    }
}
