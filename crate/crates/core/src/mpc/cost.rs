//! Horizon objective and its adjoint gradient.

use crate::geometry::{normalize, AssemblyState, ControlInput};
use crate::kinematics::{step_pair, UnicyclePairModel};

use super::MpcProblem;

/// Added to the squared robot distance in bearing derivatives.
const ATAN2_GUARD: f64 = 1e-9;
/// Quadratic penalty on leaving the workspace box.
pub(crate) const WORKSPACE_WEIGHT: f64 = 1e3;

/// The individual objective terms summed over the horizon.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostBreakdown {
    pub terminal: f64,
    pub distance: f64,
    pub bearing: f64,
    pub effort: f64,
    pub slack: f64,
    pub workspace: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.terminal + self.distance + self.bearing + self.effort + self.slack + self.workspace
    }
}

fn input_at(u: &[f64], k: usize) -> ControlInput {
    ControlInput::new(u[4 * k], u[4 * k + 1], u[4 * k + 2], u[4 * k + 3])
}

pub(crate) fn rollout(problem: &MpcProblem, u: &[f64]) -> Vec<AssemblyState> {
    let model = UnicyclePairModel::new(problem.dt).expect("validated dt");
    let mut states = Vec::with_capacity(problem.horizon + 1);
    states.push(problem.x_init);
    for k in 0..problem.horizon {
        let next = step_pair(&model, &states[k], &input_at(u, k));
        states.push(next);
    }
    states
}

/// Workspace excess penalty and its gradient for one position.
fn workspace_term(ws: Option<[f64; 4]>, p: [f64; 2]) -> (f64, [f64; 2]) {
    let Some([x0, y0, x1, y1]) = ws else {
        return (0.0, [0.0; 2]);
    };
    let mut cost = 0.0;
    let mut grad = [0.0; 2];
    for (i, (lo, hi)) in [(x0, x1), (y0, y1)].into_iter().enumerate() {
        let e = if p[i] < lo {
            p[i] - lo
        } else if p[i] > hi {
            p[i] - hi
        } else {
            0.0
        };
        cost += WORKSPACE_WEIGHT * e * e;
        grad[i] = 2.0 * WORKSPACE_WEIGHT * e;
    }
    (cost, grad)
}

/// Stage cost on the state part of stage `k`; accumulates the state gradient
/// into `gx` when given.
fn stage_state_cost(
    problem: &MpcProblem,
    k: usize,
    x: &AssemblyState,
    parts: &mut CostBreakdown,
    gx: Option<&mut [f64; 6]>,
) {
    let w = &problem.weights;
    let l = problem.l;
    let dx = x.leader.x - x.follower.x;
    let dy = x.leader.y - x.follower.y;
    let r2 = dx * dx + dy * dy;
    let r = r2.sqrt();

    let lambda_r = w.lambda_r.at(k);
    let e = r2 - l * l;
    parts.distance += lambda_r * e * e;

    let lambda_phi = w.lambda_phi.at(k);
    let phi_f = normalize(x.follower.theta - dy.atan2(dx));
    parts.bearing += lambda_phi * phi_f * phi_f;

    let w_slack = w.w_slack.at(k);
    let slack = (r - l).abs();
    parts.slack += w_slack * slack * slack;

    let (ws_l, ws_gl) = if k > 0 {
        workspace_term(problem.limits.workspace, [x.leader.x, x.leader.y])
    } else {
        (0.0, [0.0; 2])
    };
    let (ws_f, ws_gf) = if k > 0 {
        workspace_term(problem.limits.workspace, [x.follower.x, x.follower.y])
    } else {
        (0.0, [0.0; 2])
    };
    parts.workspace += ws_l + ws_f;

    if let Some(g) = gx {
        // d/d(dx, dy) of every term that depends on the relative position
        let c_dist = lambda_r * 2.0 * e * 2.0;
        let mut gdx = c_dist * dx;
        let mut gdy = c_dist * dy;

        let q = r2 + ATAN2_GUARD;
        let c_phi = 2.0 * lambda_phi * phi_f;
        // φ_F = θ_F − atan2(dy, dx)
        gdx += c_phi * dy / q;
        gdy -= c_phi * dx / q;
        g[5] += c_phi;

        let rs = (r2 + ATAN2_GUARD * ATAN2_GUARD).sqrt();
        let c_slack = 2.0 * w_slack * (r - l) / rs;
        gdx += c_slack * dx;
        gdy += c_slack * dy;

        g[0] += gdx + ws_gl[0];
        g[1] += gdy + ws_gl[1];
        g[3] += -gdx + ws_gf[0];
        g[4] += -gdy + ws_gf[1];
    }
}

fn effort(r: &nalgebra::Matrix4<f64>, u: &[f64; 4], g: Option<&mut [f64]>) -> f64 {
    let mut total = 0.0;
    let mut ru = [0.0; 4];
    for i in 0..4 {
        for j in 0..4 {
            ru[i] += r[(i, j)] * u[j];
        }
        total += u[i] * ru[i];
    }
    if let Some(g) = g {
        for i in 0..4 {
            // R is symmetric
            g[i] += 2.0 * ru[i];
        }
    }
    total
}

fn terminal(problem: &MpcProblem, x: &AssemblyState, parts: &mut CostBreakdown, gx: Option<&mut [f64; 6]>) {
    let w = &problem.weights;
    let el = [x.leader.x - problem.p_ref_leader[0], x.leader.y - problem.p_ref_leader[1]];
    let ef = [x.follower.x - problem.p_ref_follower[0], x.follower.y - problem.p_ref_follower[1]];
    let quad = |p: &[[f64; 2]; 2], e: [f64; 2]| {
        let pe = [p[0][0] * e[0] + p[0][1] * e[1], p[1][0] * e[0] + p[1][1] * e[1]];
        (e[0] * pe[0] + e[1] * pe[1], pe)
    };
    let (cl, pel) = quad(&w.p_leader, el);
    let (cf, pef) = quad(&w.p_follower, ef);
    parts.terminal += cl + cf;
    let (ws_l, ws_gl) = workspace_term(problem.limits.workspace, [x.leader.x, x.leader.y]);
    let (ws_f, ws_gf) = workspace_term(problem.limits.workspace, [x.follower.x, x.follower.y]);
    parts.workspace += ws_l + ws_f;
    if let Some(g) = gx {
        g[0] += 2.0 * pel[0] + ws_gl[0];
        g[1] += 2.0 * pel[1] + ws_gl[1];
        g[3] += 2.0 * pef[0] + ws_gf[0];
        g[4] += 2.0 * pef[1] + ws_gf[1];
    }
}

/// Objective terms for the flattened input sequence `u` (length `4 T`).
pub fn objective(problem: &MpcProblem, u: &[f64]) -> CostBreakdown {
    let states = rollout(problem, u);
    let r = problem.weights.r_matrix();
    let mut parts = CostBreakdown::default();
    for k in 0..problem.horizon {
        stage_state_cost(problem, k, &states[k], &mut parts, None);
        parts.effort += effort(&r, &[u[4 * k], u[4 * k + 1], u[4 * k + 2], u[4 * k + 3]], None);
    }
    terminal(problem, &states[problem.horizon], &mut parts, None);
    parts
}

/// Total objective and its gradient with respect to `u`, by a backward
/// (adjoint) sweep over the shooting trajectory.
pub fn objective_and_gradient(problem: &MpcProblem, u: &[f64], grad: &mut [f64]) -> f64 {
    let t = problem.horizon;
    let dt = problem.dt;
    let states = rollout(problem, u);
    let r = problem.weights.r_matrix();
    let mut parts = CostBreakdown::default();
    grad.iter_mut().for_each(|g| *g = 0.0);

    let mut lambda = [0.0; 6];
    terminal(problem, &states[t], &mut parts, Some(&mut lambda));
    for k in (0..t).rev() {
        let x = &states[k];
        let uk = [u[4 * k], u[4 * k + 1], u[4 * k + 2], u[4 * k + 3]];
        let gk = &mut grad[4 * k..4 * k + 4];
        parts.effort += effort(&r, &uk, Some(gk));
        let (sl, cl) = x.leader.theta.sin_cos();
        let (sf, cf) = x.follower.theta.sin_cos();
        // G(x_k)^T λ_{k+1}
        gk[0] += dt * (cl * lambda[0] + sl * lambda[1]);
        gk[1] += dt * lambda[2];
        gk[2] += dt * (cf * lambda[3] + sf * lambda[4]);
        gk[3] += dt * lambda[5];
        // λ_k = ∂L_k/∂x_k + F_k^T λ_{k+1}
        let mut next = lambda;
        next[2] += dt * uk[0] * (-sl * lambda[0] + cl * lambda[1]);
        next[5] += dt * uk[2] * (-sf * lambda[3] + cf * lambda[4]);
        stage_state_cost(problem, k, x, &mut parts, Some(&mut next));
        lambda = next;
    }
    parts.total()
}
