//! Shared fixtures for the integration suites: random problem generators and
//! an independent re-derivation of the horizon objective.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trolley_core::geometry::{AssemblyState, ControlInput, Pose2};
use trolley_core::mpc::{MpcLimits, MpcProblem, MpcWeights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Horizon objective written out directly from the cost definition, without
/// sharing any code with the library's cost module.
pub fn oracle_cost(p: &MpcProblem, inputs: &[[f64; 4]]) -> f64 {
    let w = &p.weights;
    let mut x = [
        p.x_init.leader.x,
        p.x_init.leader.y,
        p.x_init.leader.theta,
        p.x_init.follower.x,
        p.x_init.follower.y,
        p.x_init.follower.theta,
    ];
    let ws = |x: &[f64; 6]| -> f64 {
        match p.limits.workspace {
            None => 0.0,
            Some([x0, y0, x1, y1]) => {
                let mut c = 0.0;
                for (px, py) in [(x[0], x[1]), (x[3], x[4])] {
                    let ex = (x0 - px).max(0.0) + (px - x1).max(0.0);
                    let ey = (y0 - py).max(0.0) + (py - y1).max(0.0);
                    c += 1e3 * (ex * ex + ey * ey);
                }
                c
            }
        }
    };
    let mut total = 0.0;
    for (k, u) in inputs.iter().enumerate() {
        let r = ((x[0] - x[3]).powi(2) + (x[1] - x[4]).powi(2)).sqrt();
        let mut phi = x[5] - (x[1] - x[4]).atan2(x[0] - x[3]);
        while phi > PI {
            phi -= 2.0 * PI;
        }
        while phi <= -PI {
            phi += 2.0 * PI;
        }
        let eps = (r - p.l).abs().max(0.0);
        let mut effort = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                effort += u[i] * w.r[i][j] * u[j];
            }
        }
        total += w.lambda_r.at(k) * (r * r - p.l * p.l).powi(2)
            + w.lambda_phi.at(k) * phi * phi
            + effort
            + w.w_slack.at(k) * eps * eps;
        if k > 0 {
            total += ws(&x);
        }
        let dt = p.dt;
        x = [
            x[0] + dt * x[2].cos() * u[0],
            x[1] + dt * x[2].sin() * u[0],
            x[2] + dt * u[1],
            x[3] + dt * x[5].cos() * u[2],
            x[4] + dt * x[5].sin() * u[2],
            x[5] + dt * u[3],
        ];
    }
    let el = [x[0] - p.p_ref_leader[0], x[1] - p.p_ref_leader[1]];
    let ef = [x[3] - p.p_ref_follower[0], x[4] - p.p_ref_follower[1]];
    let quad = |m: &[[f64; 2]; 2], e: [f64; 2]| {
        e[0] * (m[0][0] * e[0] + m[0][1] * e[1]) + e[1] * (m[1][0] * e[0] + m[1][1] * e[1])
    };
    total + quad(&w.p_leader, el) + quad(&w.p_follower, ef) + ws(&x)
}

/// A random problem near formation with a reference up to two meters away.
pub fn random_problem(rng: &mut impl Rng, horizon: usize) -> MpcProblem {
    let l = rng.random_range(1.0..3.0);
    let mid = Pose2::new(
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-PI..PI),
    );
    let mut x = AssemblyState::from_midpoint(mid, l);
    x.leader.x += rng.random_range(-0.15..0.15);
    x.leader.y += rng.random_range(-0.15..0.15);
    x.follower.x += rng.random_range(-0.15..0.15);
    x.follower.y += rng.random_range(-0.15..0.15);
    x.leader = Pose2::new(x.leader.x, x.leader.y, x.leader.theta + rng.random_range(-0.3..0.3));
    x.follower = Pose2::new(x.follower.x, x.follower.y, x.follower.theta + rng.random_range(-0.3..0.3));
    let reach = rng.random_range(0.0..2.0);
    let dir = mid.theta + rng.random_range(-0.8..0.8);
    let target = Pose2::new(
        mid.x + reach * dir.cos(),
        mid.y + reach * dir.sin(),
        mid.theta + rng.random_range(-0.5..0.5),
    );
    let (s, c) = target.theta.sin_cos();
    let limits = MpcLimits {
        workspace: if rng.random_bool(0.5) {
            Some([mid.x - 2.5, mid.y - 2.5, mid.x + 2.5, mid.y + 2.5])
        } else {
            None
        },
        ..MpcLimits::default()
    };
    let b = limits.box_bounds();
    let u_prev = ControlInput::new(
        rng.random_range(-b[0]..b[0]),
        rng.random_range(-b[1]..b[1]),
        rng.random_range(-b[2]..b[2]),
        rng.random_range(-b[3]..b[3]),
    );
    MpcProblem {
        horizon,
        dt: 0.1,
        x_init: x,
        l,
        p_ref_leader: [target.x + 0.5 * l * c, target.y + 0.5 * l * s],
        p_ref_follower: [target.x - 0.5 * l * c, target.y - 0.5 * l * s],
        weights: MpcWeights::default(),
        limits,
        u_prev,
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Exhaustive search over constant controls on a 5-point grid per component.
/// Grid points violating the step-change bound from `u_prev` are skipped.
/// Returns `None` when no grid point is admissible.
pub fn constant_grid_best(p: &MpcProblem) -> Option<f64> {
    let b = p.limits.box_bounds();
    let a = p.limits.rate_bounds();
    let prev = p.u_prev.to_array();
    let axes: Vec<Vec<f64>> = (0..4).map(|i| linspace(-b[i], b[i], 5)).collect();
    let mut best: Option<f64> = None;
    for &v0 in &axes[0] {
        for &v1 in &axes[1] {
            for &v2 in &axes[2] {
                for &v3 in &axes[3] {
                    let u = [v0, v1, v2, v3];
                    if (0..4).any(|i| (u[i] - prev[i]).abs() > a[i]) {
                        continue;
                    }
                    let c = oracle_cost(p, &vec![u; p.horizon]);
                    best = Some(best.map_or(c, |bb: f64| bb.min(c)));
                }
            }
        }
    }
    best
}

/// Random problem for the constant-grid oracle: starts at rest with step
/// bounds loose enough that every grid point is admissible.
pub fn oracle_problem(rng: &mut impl Rng, horizon: usize) -> MpcProblem {
    let mut p = random_problem(rng, horizon);
    p.u_prev = ControlInput::ZERO;
    let b = p.limits.box_bounds();
    p.limits.a_max_leader = b[0];
    p.limits.alpha_max_leader = b[1];
    p.limits.a_max_follower = b[2];
    p.limits.alpha_max_follower = b[3];
    p
}
