//! Reactive mode selection around pedestrians near the leader.
//!
//! Obstacles are expressed in the leader's ROI frame: polar coordinates about
//! the leader with bearing 0 pointing straight *behind* it, so the region
//! ahead is centered on `δ = π`. The monitored set spans
//! `δ ∈ [π/3, 5π/3]` within the radial band `[rho_min, rho_max]`; the frontal
//! sector `δ ∈ [2π/3, 4π/3]` blocks the way.
//!
//! | mode \ seen        | Clear        | SideOnly          | Front        |
//! |--------------------|--------------|-------------------|--------------|
//! | Navigation         | Navigation   | LimitedNavigation | Deceleration |
//! | Deceleration       | Navigation   | Deceleration*     | Deceleration*|
//! | Waiting            | Navigation   | LimitedNavigation | Waiting      |
//! | LimitedNavigation  | Navigation   | LimitedNavigation | Deceleration |
//!
//! `*` becomes Waiting once the current speed drops below `stop_eps`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{to_polar_frame, ControlInput, PolarPoint, Pose2};
use crate::mpc::MpcLimits;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BehaviorError {
    #[error("ROI radii must satisfy 0 < rho_min < rho_max (got {0}, {1})")]
    InvalidRoi(f64, f64),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

/// Radial band of the region of interest around the leader.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub rho_min: f64,
    pub rho_max: f64,
}

impl Default for Roi {
    fn default() -> Self {
        Self {
            rho_min: 0.3,
            rho_max: 3.0,
        }
    }
}

impl Roi {
    pub fn new(rho_min: f64, rho_max: f64) -> Result<Self, BehaviorError> {
        let roi = Self { rho_min, rho_max };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<(), BehaviorError> {
        if self.rho_min > 0.0 && self.rho_min < self.rho_max {
            Ok(())
        } else {
            Err(BehaviorError::InvalidRoi(self.rho_min, self.rho_max))
        }
    }

    pub fn monitors(&self, p: &PolarPoint) -> bool {
        (self.rho_min..=self.rho_max).contains(&p.rho) && (PI / 3.0..=5.0 * PI / 3.0).contains(&p.delta)
    }

    pub fn blocks(&self, p: &PolarPoint) -> bool {
        self.monitors(p) && (2.0 * PI / 3.0..=4.0 * PI / 3.0).contains(&p.delta)
    }
}

/// An obstacle position in the ROI frame of `leader`.
pub fn roi_polar(leader: &Pose2, point: [f64; 2]) -> PolarPoint {
    to_polar_frame(&leader.reversed(), point)
}

/// Ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Clear,
    SideOnly,
    Front,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Clear => "clear",
            Self::SideOnly => "side_only",
            Self::Front => "front",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorMode {
    #[default]
    Navigation,
    Deceleration,
    Waiting,
    LimitedNavigation,
}

impl BehaviorMode {
    pub const ALL: [BehaviorMode; 4] = [
        Self::Navigation,
        Self::Deceleration,
        Self::Waiting,
        Self::LimitedNavigation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Navigation => "navigation",
            Self::Deceleration => "deceleration",
            Self::Waiting => "waiting",
            Self::LimitedNavigation => "limited_navigation",
        }
    }
}

impl fmt::Display for BehaviorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify(obstacles: &[PolarPoint], roi: &Roi) -> Classification {
    obstacles
        .iter()
        .map(|p| {
            if roi.blocks(p) {
                Classification::Front
            } else if roi.monitors(p) {
                Classification::SideOnly
            } else {
                Classification::Clear
            }
        })
        .max()
        .unwrap_or(Classification::Clear)
}

pub fn transition(mode: BehaviorMode, seen: Classification, current_speed: f64, stop_eps: f64) -> BehaviorMode {
    use BehaviorMode::*;
    use Classification::*;
    match (mode, seen) {
        (Navigation, Front) | (LimitedNavigation, Front) => Deceleration,
        (Navigation, SideOnly) | (Waiting, SideOnly) => LimitedNavigation,
        (_, Clear) => Navigation,
        (Deceleration, _) if current_speed < stop_eps => Waiting,
        (m, _) => m,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehaviorConfig {
    pub roi: Roi,
    /// Speeds below this count as stopped (m/s).
    pub stop_eps: f64,
    /// Braking rate in Deceleration (m/s²).
    pub decel_rate: f64,
    /// Fraction of `v_max` allowed in LimitedNavigation.
    pub limited_fraction: f64,
    /// Consecutive ticks a classification must persist before it counts.
    pub debounce_ticks: u32,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            roi: Roi::default(),
            stop_eps: 0.02,
            decel_rate: 0.5,
            limited_fraction: 0.5,
            debounce_ticks: 2,
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<(), BehaviorError> {
        self.roi.validate()?;
        if !(self.stop_eps > 0.0) {
            return Err(BehaviorError::NonPositive("stop_eps"));
        }
        if !(self.decel_rate > 0.0) {
            return Err(BehaviorError::NonPositive("decel_rate"));
        }
        if !(self.limited_fraction > 0.0 && self.limited_fraction <= 1.0) {
            return Err(BehaviorError::NonPositive("limited_fraction"));
        }
        if self.debounce_ticks == 0 {
            return Err(BehaviorError::NonPositive("debounce_ticks"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorOutput {
    pub mode: BehaviorMode,
    /// Factor applied to the planner's linear speeds.
    pub v_scale: f64,
    /// `[leader, follower]` speed caps for the next solve.
    pub v_limit_override: Option<[f64; 2]>,
}

impl BehaviorOutput {
    /// `limits` with the speed override applied.
    pub fn apply(&self, limits: &MpcLimits) -> MpcLimits {
        let mut out = *limits;
        if let Some([l, f]) = self.v_limit_override {
            out.v_max_leader = out.v_max_leader.min(l);
            out.v_max_follower = out.v_max_follower.min(f);
        }
        out
    }
}

fn scale_robot(v: f64, w: f64, factor: f64) -> (f64, f64) {
    (v * factor, w * factor)
}

/// Applies `mode` to the planner command `u`. `previous` is the command
/// applied on the last tick; braking ramps down from its speed.
pub fn shape_command(
    mode: BehaviorMode,
    u: &ControlInput,
    previous: &ControlInput,
    limits: &MpcLimits,
    cfg: &BehaviorConfig,
    dt: f64,
) -> (BehaviorOutput, ControlInput) {
    let output = |v_scale, v_limit_override| BehaviorOutput {
        mode,
        v_scale,
        v_limit_override,
    };
    match mode {
        BehaviorMode::Navigation => (output(1.0, None), *u),
        BehaviorMode::Waiting => (output(0.0, None), ControlInput::ZERO),
        BehaviorMode::Deceleration => {
            let cap = (previous.max_speed() - cfg.decel_rate * dt).max(0.5 * cfg.stop_eps);
            let speed = u.max_speed();
            let factor = if speed > cap { cap / speed } else { 1.0 };
            let (vl, wl) = scale_robot(u.v_leader, u.w_leader, factor);
            let (vf, wf) = scale_robot(u.v_follower, u.w_follower, factor);
            (output(factor, None), ControlInput::new(vl, wl, vf, wf))
        }
        BehaviorMode::LimitedNavigation => {
            let caps = [
                cfg.limited_fraction * limits.v_max_leader,
                cfg.limited_fraction * limits.v_max_follower,
            ];
            let factor = |v: f64, cap: f64| if v.abs() > cap { cap / v.abs() } else { 1.0 };
            let (kl, kf) = (factor(u.v_leader, caps[0]), factor(u.v_follower, caps[1]));
            let (vl, wl) = scale_robot(u.v_leader, u.w_leader, kl);
            let (vf, wf) = scale_robot(u.v_follower, u.w_follower, kf);
            (output(kl.min(kf), Some(caps)), ControlInput::new(vl, wl, vf, wf))
        }
    }
}

/// What the selector decided on one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorStep {
    pub seen: Classification,
    /// The classification after debouncing, used for the transition.
    pub accepted: Classification,
    pub output: BehaviorOutput,
    pub command: ControlInput,
}

/// The mode register plus debouncing and the last applied command.
#[derive(Debug, Clone)]
pub struct BehaviorSelector {
    cfg: BehaviorConfig,
    mode: BehaviorMode,
    accepted: Classification,
    candidate: Classification,
    streak: u32,
    last_command: ControlInput,
}

impl BehaviorSelector {
    pub fn new(cfg: BehaviorConfig) -> Result<Self, BehaviorError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            mode: BehaviorMode::Navigation,
            accepted: Classification::Clear,
            candidate: Classification::Clear,
            streak: 0,
            last_command: ControlInput::ZERO,
        })
    }

    pub fn mode(&self) -> BehaviorMode {
        self.mode
    }

    pub fn config(&self) -> &BehaviorConfig {
        &self.cfg
    }

    pub fn last_command(&self) -> ControlInput {
        self.last_command
    }

    /// Feeds one raw classification through the debouncer and returns the
    /// classification in force.
    pub fn observe(&mut self, seen: Classification) -> Classification {
        if seen == self.candidate {
            self.streak = self.streak.saturating_add(1);
        } else {
            self.candidate = seen;
            self.streak = 1;
        }
        if self.streak >= self.cfg.debounce_ticks {
            self.accepted = seen;
        }
        self.accepted
    }

    /// Advances the mode without shaping a command; returns the new mode.
    pub fn advance(&mut self, seen: Classification) -> BehaviorMode {
        let accepted = self.observe(seen);
        self.mode = transition(self.mode, accepted, self.last_command.max_speed(), self.cfg.stop_eps);
        self.mode
    }

    /// Limits the planner should use in the current mode.
    pub fn planner_limits(&self, limits: &MpcLimits) -> MpcLimits {
        match self.mode {
            BehaviorMode::LimitedNavigation => {
                let mut out = *limits;
                out.v_max_leader *= self.cfg.limited_fraction;
                out.v_max_follower *= self.cfg.limited_fraction;
                out
            }
            _ => *limits,
        }
    }

    /// Shapes `u` for the current mode and remembers the result.
    pub fn shape(&mut self, u: &ControlInput, limits: &MpcLimits, dt: f64) -> (BehaviorOutput, ControlInput) {
        let (output, command) = shape_command(self.mode, u, &self.last_command, limits, &self.cfg, dt);
        self.last_command = command;
        (output, command)
    }

    /// One tick: classify the obstacles, update the mode and shape `u`.
    pub fn step(&mut self, obstacles: &[PolarPoint], u: &ControlInput, limits: &MpcLimits, dt: f64) -> BehaviorStep {
        let seen = classify(obstacles, &self.cfg.roi);
        self.advance(seen);
        let (output, command) = self.shape(u, limits, dt);
        BehaviorStep {
            seen,
            accepted: self.accepted,
            output,
            command,
        }
    }
}
