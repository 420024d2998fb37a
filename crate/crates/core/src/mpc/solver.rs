//! Projected quasi-Newton single-shooting solver.
//!
//! Each iteration builds a quadratic model from forward differences of the
//! adjoint gradient, takes a projected-gradient (Cauchy) step on the model to
//! pick the active face of the input set, then takes a damped Newton step on
//! that face. Every metric and damping term is measured against the effort
//! weight, so multiplying all weights by a constant leaves the iterates
//! unchanged.

use std::time::Instant;

use crate::geometry::ControlInput;

use nalgebra::{DMatrix, DVector};

use crate::kinematics::relative_distance;

use super::cost::{objective_and_gradient, rollout};
use super::feasible::InputSet;
use super::{MpcError, MpcProblem, MpcSolution, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop when `‖u − P(u − D ∇J)‖∞` falls below this, with `D` the inverse
    /// effort Hessian.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step moves no component more than this.
    pub step_tolerance: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 150,
            gradient_tolerance: 1e-6,
            step_tolerance: 1e-9,
            armijo: 1e-4,
            max_backtracks: 30,
        }
    }
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Model {
    hessian: DMatrix<f64>,
}

impl Model {
    /// Forward differences of the adjoint gradient, symmetrized.
    fn sample(problem: &MpcProblem, u: &[f64], grad: &[f64]) -> Self {
        let n = u.len();
        let mut hessian = DMatrix::zeros(n, n);
        let mut probe = u.to_vec();
        let mut g = vec![0.0; n];
        for j in 0..n {
            let h = HESSIAN_STEP * (1.0 + u[j].abs());
            probe[j] = u[j] + h;
            objective_and_gradient(problem, &probe, &mut g);
            probe[j] = u[j];
            for i in 0..n {
                hessian[(i, j)] = (g[i] - grad[i]) / h;
            }
        }
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        Self { hessian }
    }

    fn value(&self, g: &[f64], s: &[f64]) -> f64 {
        let s = DVector::from_column_slice(s);
        dot(g, s.as_slice()) + 0.5 * s.dot(&(&self.hessian * &s))
    }
}

const HESSIAN_STEP: f64 = 1e-7;

/// Cholesky factor of `h + τ diag(scale)` for the smallest `τ ≥ damping` in
/// `{damping, 10 damping, …}` that makes it positive definite.
fn shifted_cholesky(
    h: &DMatrix<f64>,
    scale: &[f64],
    damping: f64,
) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let mut tau = damping;
    for _ in 0..30 {
        let mut m = h.clone();
        for (i, s) in scale.iter().enumerate() {
            m[(i, i)] += tau * s;
        }
        if let Some(c) = m.cholesky() {
            return Some(c);
        }
        tau = if tau == 0.0 { 1e-8 } else { tau * 10.0 };
    }
    None
}

pub fn solve(problem: &MpcProblem, warm_start: Option<&MpcSolution>) -> Result<MpcSolution, MpcError> {
    solve_with(problem, warm_start, &SolverOptions::default())
}

pub fn solve_with(
    problem: &MpcProblem,
    warm_start: Option<&MpcSolution>,
    opts: &SolverOptions,
) -> Result<MpcSolution, MpcError> {
    problem.validate()?;
    let clock = Instant::now();
    let t = problem.horizon;
    let n = 4 * t;
    let set = InputSet {
        prev: problem.u_prev.to_array(),
        bound: problem.limits.box_bounds(),
        rate: problem.limits.rate_bounds(),
    };

    // Initial candidates: the warm start as given and shifted by one stage,
    // the previous command held, and all zeros.
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm_start.filter(|w| !w.inputs.is_empty()) {
        let at = |k: usize| w.inputs[k.min(w.inputs.len() - 1)].to_array();
        candidates.push((0..t).flat_map(at).collect());
        candidates.push((0..t).flat_map(|k| at(k + 1)).collect());
    }
    candidates.push((0..t).flat_map(|_| problem.u_prev.to_array()).collect());
    candidates.push(vec![0.0; n]);

    let mut grad = vec![0.0; n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mut c in candidates {
        if set.tighten(&mut c.clone()) {
            set.project(&mut c);
        }
        let f = objective_and_gradient(problem, &c, &mut grad);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, c));
        }
    }
    let (_, mut u) = best.expect("at least one candidate");
    let mut f = objective_and_gradient(problem, &u, &mut grad);

    let r = problem.weights.r_matrix();
    let diag: Vec<f64> = (0..n).map(|i| 1.0 / (2.0 * r[(i % 4, i % 4)])).collect();
    // Levenberg damping in units of the effort Hessian
    let mut damping = 0.0;
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let gradient_arc = |u: &[f64], g: &[f64], step: f64, out: &mut [f64]| {
        for i in 0..n {
            out[i] = u[i] - step * diag[i] * g[i];
        }
        set.project(out);
    };

    while iterations < opts.max_iterations {
        gradient_arc(&u, &grad, 1.0, &mut trial);
        if inf_norm_diff(&trial, &u) < opts.gradient_tolerance {
            status = SolveStatus::Converged;
            break;
        }
        iterations += 1;
        let model = Model::sample(problem, &u, &grad);

        // Cauchy point: backtrack along the projected-gradient arc until the
        // model decreases enough, starting near the model minimizer along
        // the first arc segment.
        let mut cauchy = trial.clone();
        let mut step = {
            let s: Vec<f64> = cauchy.iter().zip(&u).map(|(a, b)| a - b).collect();
            let curvature = model.value(&grad, &s) - dot(&grad, &s);
            if curvature > 0.0 {
                (-dot(&grad, &s) / (2.0 * curvature)).clamp(1e-12, 1.0)
            } else {
                1.0
            }
        };
        if step < 1.0 {
            gradient_arc(&u, &grad, step, &mut cauchy);
        }
        for _ in 0..opts.max_backtracks {
            let s: Vec<f64> = cauchy.iter().zip(&u).map(|(a, b)| a - b).collect();
            if model.value(&grad, &s) <= 0.1 * dot(&grad, &s) {
                break;
            }
            step *= 0.5;
            gradient_arc(&u, &grad, step, &mut cauchy);
        }

        // Minimize the model over the face containing the Cauchy point.
        let blocks = set.free_blocks(&cauchy);
        let mut face_step = vec![0.0; n];
        if !blocks.is_empty() {
            let s = DVector::from_iterator(n, cauchy.iter().zip(&u).map(|(a, b)| a - b));
            let gc = DVector::from_column_slice(&grad) + &model.hessian * s;
            let m = blocks.len();
            let reduced_g = DVector::from_iterator(m, blocks.iter().map(|b| b.iter().map(|&i| gc[i]).sum::<f64>()));
            let reduced_h = DMatrix::from_fn(m, m, |p, q| {
                let mut acc = 0.0;
                for &i in &blocks[p] {
                    for &j in &blocks[q] {
                        acc += model.hessian[(i, j)];
                    }
                }
                acc
            });
            let reduced_scale: Vec<f64> = blocks.iter().map(|b| b.iter().map(|&i| 1.0 / diag[i]).sum()).collect();
            if let Some(chol) = shifted_cholesky(&reduced_h, &reduced_scale, damping) {
                let w = chol.solve(&(-reduced_g));
                for (b, wi) in blocks.iter().zip(w.iter()) {
                    for &i in b {
                        face_step[i] = *wi;
                    }
                }
            }
        }

        let armijo_accepts = |x: &[f64], gx: &mut [f64]| -> Option<f64> {
            let decrease: f64 = grad.iter().zip(x.iter().zip(&u)).map(|(g, (a, b))| g * (a - b)).sum();
            if decrease >= 0.0 {
                return None;
            }
            let fx = objective_and_gradient(problem, x, gx);
            (fx < f && fx <= f + opts.armijo * decrease).then_some(fx)
        };
        // Full face step projected back onto the set, then the face step cut
        // at the first constraint it crosses, then the projected-gradient arc.
        for i in 0..n {
            trial[i] = cauchy[i] + face_step[i];
        }
        set.project(&mut trial);
        let mut accepted = armijo_accepts(&trial, &mut trial_grad);
        if accepted.is_some() {
            damping *= 0.25;
            if damping < 1e-6 {
                damping = 0.0;
            }
        } else {
            damping = (damping * 4.0).max(1e-3);
        }
        if accepted.is_none() {
            let mut beta = set.max_step(&cauchy, &face_step);
            for _ in 0..opts.max_backtracks {
                for i in 0..n {
                    trial[i] = cauchy[i] + beta * face_step[i];
                }
                set.tighten(&mut trial);
                accepted = armijo_accepts(&trial, &mut trial_grad);
                if accepted.is_some() || beta == 0.0 {
                    break;
                }
                beta *= 0.5;
            }
        }
        if accepted.is_none() {
            let mut step = 1.0;
            for _ in 0..opts.max_backtracks {
                gradient_arc(&u, &grad, step, &mut trial);
                accepted = armijo_accepts(&trial, &mut trial_grad);
                if accepted.is_some() {
                    break;
                }
                step *= 0.5;
            }
        }
        let Some(ft) = accepted else {
            status = SolveStatus::Converged;
            break;
        };
        // keep the bounds exact after the convex combination
        let ft = if set.tighten(&mut trial) {
            objective_and_gradient(problem, &trial, &mut trial_grad)
        } else {
            ft
        };
        let s: Vec<f64> = trial.iter().zip(&u).map(|(a, b)| a - b).collect();
        let moved = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        u.copy_from_slice(&trial);
        grad.copy_from_slice(&trial_grad);
        f = ft;
        if moved < opts.step_tolerance {
            status = SolveStatus::Converged;
            break;
        }
    }

    if !problem.limits.contains(&problem.x_init) {
        status = SolveStatus::InfeasibleStart;
    }
    let states = rollout(problem, &u);
    let slacks = states[..t]
        .iter()
        .map(|x| (relative_distance(x) - problem.l).abs())
        .collect();
    let inputs = u
        .chunks_exact(4)
        .map(|c| ControlInput::new(c[0], c[1], c[2], c[3]))
        .collect();
    Ok(MpcSolution {
        states,
        inputs,
        slacks,
        objective: f,
        status,
        iterations,
        solve_time: clock.elapsed().as_secs_f64(),
    })
}
