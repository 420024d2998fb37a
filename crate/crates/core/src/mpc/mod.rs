//! Receding-horizon collaborative motion planner.
//!
//! The horizon problem minimizes a pure-pursuit terminal cost on both robot
//! positions plus per-stage formation, bearing, effort and slack terms, over
//! the four-dimensional joint velocity sequence. States are eliminated by
//! single shooting through the unicycle-pair model; the slack on the distance
//! constraint is eliminated in closed form (`ε_k = max(0, |r_k − l|)`), and
//! the velocity and acceleration bounds are enforced exactly by a feasibility
//! map applied to every iterate.

mod cost;
mod feasible;
mod reference;
mod solver;

use nalgebra::{Matrix2, Matrix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AssemblyState, ControlInput};

pub use cost::{objective, objective_and_gradient, CostBreakdown};
pub use feasible::project_inputs;
pub use reference::{build_reference, PathFollower};
pub use solver::{solve, solve_with, SolverOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("reference path is empty")]
    EmptyPath,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
}

/// A per-stage coefficient: one value for every stage or one per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StageValue {
    Uniform(f64),
    PerStage(Vec<f64>),
}

impl StageValue {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StageValue::Uniform(v) => *v,
            StageValue::PerStage(v) => v[k.min(v.len() - 1)],
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            StageValue::Uniform(v) => std::slice::from_ref(v),
            StageValue::PerStage(v) => v,
        }
    }

    fn scaled(&self, c: f64) -> Self {
        match self {
            StageValue::Uniform(v) => StageValue::Uniform(v * c),
            StageValue::PerStage(v) => StageValue::PerStage(v.iter().map(|x| x * c).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcWeights {
    pub p_leader: [[f64; 2]; 2],
    pub p_follower: [[f64; 2]; 2],
    pub r: [[f64; 4]; 4],
    pub lambda_r: StageValue,
    pub lambda_phi: StageValue,
    pub w_slack: StageValue,
}

impl Default for MpcWeights {
    fn default() -> Self {
        let mut r = [[0.0; 4]; 4];
        for (i, v) in [0.1, 0.05, 0.1, 0.05].into_iter().enumerate() {
            r[i][i] = v;
        }
        Self {
            p_leader: [[10.0, 0.0], [0.0, 10.0]],
            p_follower: [[10.0, 0.0], [0.0, 10.0]],
            r,
            lambda_r: StageValue::Uniform(50.0),
            lambda_phi: StageValue::Uniform(5.0),
            w_slack: StageValue::Uniform(100.0),
        }
    }
}

impl MpcWeights {
    pub fn p_leader_matrix(&self) -> Matrix2<f64> {
        Matrix2::from_fn(|i, j| self.p_leader[i][j])
    }

    pub fn p_follower_matrix(&self) -> Matrix2<f64> {
        Matrix2::from_fn(|i, j| self.p_follower[i][j])
    }

    pub fn r_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.r[i][j])
    }

    /// Every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let m2 = |m: [[f64; 2]; 2]| m.map(|row| row.map(|v| v * c));
        Self {
            p_leader: m2(self.p_leader),
            p_follower: m2(self.p_follower),
            r: self.r.map(|row| row.map(|v| v * c)),
            lambda_r: self.lambda_r.scaled(c),
            lambda_phi: self.lambda_phi.scaled(c),
            w_slack: self.w_slack.scaled(c),
        }
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let err = |m: String| Err(MpcError::InvalidWeights(m));
        for (name, p) in [("p_leader", self.p_leader_matrix()), ("p_follower", self.p_follower_matrix())] {
            if (p - p.transpose()).amax() > 1e-12 {
                return err(format!("{name} is not symmetric"));
            }
            if p.symmetric_eigenvalues().min() < -1e-12 {
                return err(format!("{name} is not positive semidefinite"));
            }
        }
        let r = self.r_matrix();
        if (r - r.transpose()).amax() > 1e-12 {
            return err("r is not symmetric".into());
        }
        if r.cholesky().is_none() {
            return err("r is not positive definite".into());
        }
        for (name, v, strict) in [
            ("lambda_r", &self.lambda_r, false),
            ("lambda_phi", &self.lambda_phi, false),
            ("w_slack", &self.w_slack, true),
        ] {
            let vals = v.values();
            if vals.is_empty() {
                return err(format!("{name} has no stages"));
            }
            if vals.iter().any(|x| !x.is_finite() || *x < 0.0 || (strict && *x == 0.0)) {
                return err(format!(
                    "{name} must be {}",
                    if strict { "positive" } else { "non-negative" }
                ));
            }
        }
        Ok(())
    }
}

/// Velocity, acceleration and workspace bounds. Accelerations are per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcLimits {
    pub v_max_leader: f64,
    pub v_max_follower: f64,
    pub w_max_leader: f64,
    pub w_max_follower: f64,
    pub a_max_leader: f64,
    pub a_max_follower: f64,
    pub alpha_max_leader: f64,
    pub alpha_max_follower: f64,
    /// `[xmin, ymin, xmax, ymax]`; unbounded when absent.
    pub workspace: Option<[f64; 4]>,
}

impl Default for MpcLimits {
    fn default() -> Self {
        Self {
            v_max_leader: 0.6,
            v_max_follower: 0.7,
            w_max_leader: 1.0,
            w_max_follower: 1.0,
            a_max_leader: 0.1,
            a_max_follower: 0.1,
            alpha_max_leader: 0.2,
            alpha_max_follower: 0.2,
            workspace: None,
        }
    }
}

impl MpcLimits {
    /// Box bounds in input order `[v_L, ω_L, v_F, ω_F]`.
    pub fn box_bounds(&self) -> [f64; 4] {
        [
            self.v_max_leader,
            self.w_max_leader,
            self.v_max_follower,
            self.w_max_follower,
        ]
    }

    /// Per-step change bounds in input order.
    pub fn rate_bounds(&self) -> [f64; 4] {
        [
            self.a_max_leader,
            self.alpha_max_leader,
            self.a_max_follower,
            self.alpha_max_follower,
        ]
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let names = [
            ("v_max_leader", self.v_max_leader),
            ("v_max_follower", self.v_max_follower),
            ("w_max_leader", self.w_max_leader),
            ("w_max_follower", self.w_max_follower),
            ("a_max_leader", self.a_max_leader),
            ("a_max_follower", self.a_max_follower),
            ("alpha_max_leader", self.alpha_max_leader),
            ("alpha_max_follower", self.alpha_max_follower),
        ];
        for (name, v) in names {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MpcError::InvalidLimits(format!("{name} must be positive")));
            }
        }
        if let Some(w) = self.workspace {
            if !(w[0] < w[2] && w[1] < w[3]) {
                return Err(MpcError::InvalidLimits("workspace is empty".into()));
            }
        }
        Ok(())
    }

    /// Whether `u` satisfies the box bounds.
    pub fn admits(&self, u: &ControlInput) -> bool {
        u.to_array()
            .iter()
            .zip(self.box_bounds())
            .all(|(v, b)| v.abs() <= b)
    }

    /// Whether both robot positions of `x` lie in the workspace.
    pub fn contains(&self, x: &AssemblyState) -> bool {
        match self.workspace {
            None => true,
            Some([x0, y0, x1, y1]) => [x.leader, x.follower]
                .iter()
                .all(|p| p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub horizon: usize,
    pub dt: f64,
    pub x_init: AssemblyState,
    pub l: f64,
    pub p_ref_leader: [f64; 2],
    pub p_ref_follower: [f64; 2],
    pub weights: MpcWeights,
    pub limits: MpcLimits,
    pub u_prev: ControlInput,
}

impl MpcProblem {
    pub fn validate(&self) -> Result<(), MpcError> {
        if self.horizon < 1 {
            return Err(MpcError::InvalidProblem("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(MpcError::InvalidProblem("dt must be positive".into()));
        }
        if !(self.l > 0.0) {
            return Err(MpcError::InvalidProblem("l must be positive".into()));
        }
        if !self.x_init.is_finite() || !self.u_prev.is_finite() {
            return Err(MpcError::InvalidProblem("non-finite initial state or input".into()));
        }
        self.weights.validate()?;
        self.limits.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    InfeasibleStart,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::InfeasibleStart => "infeasible_start",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// `horizon + 1` states, starting at the initial state.
    pub states: Vec<AssemblyState>,
    pub inputs: Vec<ControlInput>,
    pub slacks: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Wall-clock seconds spent in the solver.
    pub solve_time: f64,
}

/// The command to apply for the next control period.
pub fn first_command(solution: &MpcSolution) -> ControlInput {
    solution.inputs.first().copied().unwrap_or(ControlInput::ZERO)
}
