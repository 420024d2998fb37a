//! Discrete-time motion models of the robot-trolley assembly.
//!
//! Two models live here: the concatenated unicycle pair that the local
//! planner and the estimator share, and the two-steer virtual vehicle used by
//! the global search to treat the whole assembly as one car-like body.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize, AssemblyState, ControlInput, Pose2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("robots are coincident; bearing offsets are undefined")]
    SingularConfiguration,
    #[error("steer angle {0} is outside (-pi/2, pi/2)")]
    SteerOutOfDomain(f64),
    #[error("trolley count must be at least 1, got {0}")]
    InvalidTrolleyCount(u32),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

/// Two unicycles sharing one sampling interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicyclePairModel {
    dt: f64,
}

impl UnicyclePairModel {
    pub fn new(dt: f64) -> Result<Self, KinematicsError> {
        if !(dt > 0.0) {
            return Err(KinematicsError::NonPositive("dt"));
        }
        Ok(Self { dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One explicit step `x' = x + G(x) u`.
    pub fn step(&self, x: &AssemblyState, u: &ControlInput) -> AssemblyState {
        step_pair(self, x, u)
    }

    /// Jacobian of [`step`](Self::step) with respect to the state, evaluated at `x`.
    pub fn state_jacobian(&self, x: &AssemblyState, u: &ControlInput) -> Matrix6<f64> {
        let dt = self.dt;
        let mut f = Matrix6::identity();
        let (sl, cl) = x.leader.theta.sin_cos();
        let (sf, cf) = x.follower.theta.sin_cos();
        f[(0, 2)] = -dt * u.v_leader * sl;
        f[(1, 2)] = dt * u.v_leader * cl;
        f[(3, 5)] = -dt * u.v_follower * sf;
        f[(4, 5)] = dt * u.v_follower * cf;
        f
    }
}

pub fn step_pair(model: &UnicyclePairModel, x: &AssemblyState, u: &ControlInput) -> AssemblyState {
    let dt = model.dt;
    let (sl, cl) = x.leader.theta.sin_cos();
    let (sf, cf) = x.follower.theta.sin_cos();
    AssemblyState {
        leader: Pose2 {
            x: x.leader.x + dt * cl * u.v_leader,
            y: x.leader.y + dt * sl * u.v_leader,
            theta: normalize(x.leader.theta + dt * u.w_leader),
        },
        follower: Pose2 {
            x: x.follower.x + dt * cf * u.v_follower,
            y: x.follower.y + dt * sf * u.v_follower,
            theta: normalize(x.follower.theta + dt * u.w_follower),
        },
    }
}

/// Distance between the two robot centers.
pub fn relative_distance(x: &AssemblyState) -> f64 {
    (x.leader.x - x.follower.x).hypot(x.leader.y - x.follower.y)
}

/// Heading of each robot relative to the follower-to-leader line.
pub fn bearing_offsets(x: &AssemblyState) -> Result<(f64, f64), KinematicsError> {
    let dx = x.leader.x - x.follower.x;
    let dy = x.leader.y - x.follower.y;
    if dx == 0.0 && dy == 0.0 {
        return Err(KinematicsError::SingularConfiguration);
    }
    let line = dy.atan2(dx);
    Ok((
        normalize(x.leader.theta - line),
        normalize(x.follower.theta - line),
    ))
}

/// Pose of the assembly's reference point plus the front and rear steers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualVehicleState {
    pub pose: Pose2,
    pub steer_leader: f64,
    pub steer_follower: f64,
}

/// Side-slip angle of the two-steer vehicle.
pub fn slip_angle(steer_leader: f64, steer_follower: f64) -> f64 {
    (0.5 * (steer_leader.tan() + steer_follower.tan())).atan()
}

/// Advances the two-steer virtual vehicle by one step at constant speed.
///
/// The heading rate is `v cos β / l · (tan φ_L − tan φ_F)` and translation is
/// along `θ + β`.
pub fn step_virtual_vehicle(
    s: &VirtualVehicleState,
    v: f64,
    dt: f64,
    l: f64,
) -> Result<Pose2, KinematicsError> {
    if !(l > 0.0) {
        return Err(KinematicsError::NonPositive("l"));
    }
    for steer in [s.steer_leader, s.steer_follower] {
        if !(steer.abs() < FRAC_PI_2) {
            return Err(KinematicsError::SteerOutOfDomain(steer));
        }
    }
    let tl = s.steer_leader.tan();
    let tf = s.steer_follower.tan();
    let beta = (0.5 * (tl + tf)).atan();
    let heading = s.pose.theta + beta;
    Ok(Pose2::new(
        s.pose.x + v * dt * heading.cos(),
        s.pose.y + v * dt * heading.sin(),
        s.pose.theta + v * beta.cos() / l * dt * (tl - tf),
    ))
}

/// A rigid stack of nested trolleys. The robot-to-robot distance grows
/// affinely with the number of trolleys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrolleyStack {
    pub count: u32,
    pub base_length: f64,
    pub per_trolley_increment: f64,
    /// Extra distance between a robot's center and the stack end, per robot.
    pub grip_offset: f64,
}

impl Default for TrolleyStack {
    fn default() -> Self {
        Self {
            count: 3,
            base_length: 0.70,
            per_trolley_increment: 0.32,
            grip_offset: 0.0,
        }
    }
}

impl TrolleyStack {
    pub fn with_count(count: u32) -> Self {
        Self {
            count,
            ..Self::default()
        }
    }
}

/// Desired robot-to-robot distance for a stack.
pub fn desired_distance(stack: &TrolleyStack) -> Result<f64, KinematicsError> {
    if stack.count < 1 {
        return Err(KinematicsError::InvalidTrolleyCount(stack.count));
    }
    if !(stack.base_length > 0.0) {
        return Err(KinematicsError::NonPositive("base_length"));
    }
    if !(stack.per_trolley_increment > 0.0) {
        return Err(KinematicsError::NonPositive("per_trolley_increment"));
    }
    Ok(stack.base_length
        + f64::from(stack.count - 1) * stack.per_trolley_increment
        + 2.0 * stack.grip_offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn assembly(l: (f64, f64, f64), f: (f64, f64, f64)) -> AssemblyState {
        AssemblyState::new(Pose2::new(l.0, l.1, l.2), Pose2::new(f.0, f.1, f.2))
    }

    fn assert_state(a: &AssemblyState, b: &AssemblyState) {
        let d = a.to_vector() - b.to_vector();
        assert!(d.amax() < 1e-12, "{a:?} != {b:?}");
    }

    #[test]
    fn step_pair_examples() {
        let m = UnicyclePairModel::new(0.1).unwrap();
        let x = assembly((0.0, 0.0, 0.0), (-1.0, 0.0, 0.0));
        assert_state(
            &m.step(&x, &ControlInput::new(1.0, 0.0, 1.0, 0.0)),
            &assembly((0.1, 0.0, 0.0), (-0.9, 0.0, 0.0)),
        );
        assert_state(
            &m.step(&x, &ControlInput::new(0.0, 1.0, 0.0, 0.0)),
            &assembly((0.0, 0.0, 0.1), (-1.0, 0.0, 0.0)),
        );
        let x = assembly((0.0, 0.0, 0.5 * PI), (0.0, -1.0, 0.5 * PI));
        assert_state(
            &m.step(&x, &ControlInput::new(1.0, 0.0, 1.0, 0.0)),
            &assembly((0.0, 0.1, 0.5 * PI), (0.0, -0.9, 0.5 * PI)),
        );
    }

    #[test]
    fn model_rejects_bad_dt() {
        assert!(UnicyclePairModel::new(0.0).is_err());
        assert!(UnicyclePairModel::new(f64::NAN).is_err());
    }

    #[test]
    fn distance_examples() {
        let x = assembly((1.0, 1.0, 0.0), (0.0, 0.0, 0.0));
        assert_abs_diff_eq!(relative_distance(&x), 2f64.sqrt());
        assert_eq!(relative_distance(&assembly((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))), 0.0);
        assert_eq!(relative_distance(&assembly((3.0, 4.0, 0.0), (0.0, 0.0, 0.0))), 5.0);
    }

    #[test]
    fn bearing_examples() {
        let (pl, pf) = bearing_offsets(&assembly((1.0, 0.0, 0.0), (0.0, 0.0, 0.0))).unwrap();
        assert_eq!((pl, pf), (0.0, 0.0));
        let (pl, pf) = bearing_offsets(&assembly((1.0, 1.0, 0.0), (0.0, 0.0, 0.0))).unwrap();
        assert_abs_diff_eq!(pl, -FRAC_PI_4, epsilon = 1e-12);
        assert_abs_diff_eq!(pf, -FRAC_PI_4, epsilon = 1e-12);
        let (pl, pf) = bearing_offsets(&assembly((1.0, 0.0, 0.5 * PI), (0.0, 0.0, 0.0))).unwrap();
        assert_abs_diff_eq!(pl, 0.5 * PI, epsilon = 1e-12);
        assert_eq!(pf, 0.0);
        assert_eq!(
            bearing_offsets(&assembly((2.0, 2.0, 0.0), (2.0, 2.0, 1.0))),
            Err(KinematicsError::SingularConfiguration)
        );
    }

    #[test]
    fn virtual_vehicle_examples() {
        let s = VirtualVehicleState {
            pose: Pose2::origin(),
            steer_leader: 0.0,
            steer_follower: 0.0,
        };
        let p = step_virtual_vehicle(&s, 1.0, 0.1, 1.5).unwrap();
        assert_abs_diff_eq!(p.x, 0.1);
        assert_eq!((p.y, p.theta), (0.0, 0.0));

        let s = VirtualVehicleState {
            steer_leader: 0.3,
            steer_follower: 0.3,
            ..s
        };
        let p = step_virtual_vehicle(&s, 1.0, 0.1, 1.5).unwrap();
        assert_abs_diff_eq!(p.x, 0.1 * 0.3f64.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, 0.1 * 0.3f64.sin(), epsilon = 1e-15);
        assert_eq!(p.theta, 0.0);

        // frozen from a direct evaluation of the update lines: 0.2 * tan(0.3)
        let s = VirtualVehicleState {
            steer_leader: 0.3,
            steer_follower: -0.3,
            ..s
        };
        let p = step_virtual_vehicle(&s, 1.0, 0.1, 1.0).unwrap();
        assert_abs_diff_eq!(p.theta, 0.061867249921924654, epsilon = 1e-15);
        assert_abs_diff_eq!(p.x, 0.1, epsilon = 1e-15);
        assert_eq!(p.y, 0.0);
    }

    #[test]
    fn virtual_vehicle_domain_errors() {
        let s = VirtualVehicleState {
            pose: Pose2::origin(),
            steer_leader: FRAC_PI_2,
            steer_follower: 0.0,
        };
        assert!(matches!(
            step_virtual_vehicle(&s, 1.0, 0.1, 1.0),
            Err(KinematicsError::SteerOutOfDomain(_))
        ));
        let s = VirtualVehicleState {
            steer_leader: 0.0,
            ..s
        };
        assert!(step_virtual_vehicle(&s, 1.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn desired_distance_examples() {
        let stack = |n| TrolleyStack::with_count(n);
        assert_abs_diff_eq!(desired_distance(&stack(5)).unwrap(), 1.98, epsilon = 1e-12);
        assert_abs_diff_eq!(desired_distance(&stack(8)).unwrap(), 2.94, epsilon = 1e-12);
        assert_abs_diff_eq!(desired_distance(&stack(1)).unwrap(), 0.70, epsilon = 1e-12);
        assert_eq!(
            desired_distance(&stack(0)),
            Err(KinematicsError::InvalidTrolleyCount(0))
        );
        let gripped = TrolleyStack {
            grip_offset: 0.1,
            ..stack(1)
        };
        assert_abs_diff_eq!(desired_distance(&gripped).unwrap(), 0.90, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = UnicyclePairModel::new(0.1).unwrap();
        let x = assembly((0.3, -0.2, 0.7), (-1.0, 0.4, -2.5));
        let u = ControlInput::new(0.8, -0.3, 0.5, 0.9);
        let f = m.state_jacobian(&x, &u);
        let h = 1e-6;
        for j in 0..6 {
            let mut xp = x.to_vector();
            let mut xm = x.to_vector();
            xp[j] += h;
            xm[j] -= h;
            let fp = m.step(&AssemblyState::from_vector(&xp), &u).to_vector();
            let fm = m.step(&AssemblyState::from_vector(&xm), &u).to_vector();
            for i in 0..6 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - f[(i, j)]).abs() < 1e-6, "F[{i},{j}]");
            }
        }
    }

    fn arb_state() -> impl Strategy<Value = AssemblyState> {
        (
            -5.0f64..5.0,
            -5.0f64..5.0,
            -PI..PI,
            -5.0f64..5.0,
            -5.0f64..5.0,
            -PI..PI,
        )
            .prop_map(|(a, b, c, d, e, f)| assembly((a, b, c), (d, e, f)))
    }

    proptest! {
        #[test]
        fn zero_input_is_identity(x in arb_state()) {
            let m = UnicyclePairModel::new(0.1).unwrap();
            prop_assert_eq!(m.step(&x, &ControlInput::ZERO), x);
        }

        #[test]
        fn aligned_translation_keeps_distance(
            mx in -5.0f64..5.0, my in -5.0f64..5.0, th in -PI..PI,
            l in 0.5f64..3.0, v in -1.0f64..1.0,
        ) {
            let m = UnicyclePairModel::new(0.1).unwrap();
            let x = AssemblyState::from_midpoint(Pose2::new(mx, my, th), l);
            let y = m.step(&x, &ControlInput::new(v, 0.0, v, 0.0));
            prop_assert!((relative_distance(&y) - relative_distance(&x)).abs() < 1e-12);
        }

        #[test]
        fn rotation_equivariance(
            x in arb_state(), rot in -PI..PI,
            v1 in -1.0f64..1.0, w1 in -1.0f64..1.0, v2 in -1.0f64..1.0, w2 in -1.0f64..1.0,
        ) {
            let m = UnicyclePairModel::new(0.1).unwrap();
            let u = ControlInput::new(v1, w1, v2, w2);
            let r = Pose2::new(0.0, 0.0, rot);
            let rotate = |s: &AssemblyState| AssemblyState::new(r.compose(&s.leader), r.compose(&s.follower));
            let a = rotate(&m.step(&x, &u));
            let b = m.step(&rotate(&x), &u);
            for (p, q) in [(a.leader, b.leader), (a.follower, b.follower)] {
                prop_assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
                prop_assert!(normalize(p.theta - q.theta).abs() < 1e-9);
            }
        }

        #[test]
        fn equal_steers_keep_heading(
            th in -PI..PI, steer in -1.2f64..1.2, v in 0.0f64..2.0, l in 0.5f64..3.0,
        ) {
            let s = VirtualVehicleState {
                pose: Pose2::new(1.0, -2.0, th),
                steer_leader: steer,
                steer_follower: steer,
            };
            let p = step_virtual_vehicle(&s, v, 0.2, l).unwrap();
            prop_assert_eq!(p.theta, th);
        }

        #[test]
        fn bearings_translation_invariant(x in arb_state(), tx in -10.0f64..10.0, ty in -10.0f64..10.0) {
            prop_assume!(relative_distance(&x) > 1e-3);
            let shift = |p: Pose2| Pose2::new(p.x + tx, p.y + ty, p.theta);
            let y = AssemblyState::new(shift(x.leader), shift(x.follower));
            let (a1, b1) = bearing_offsets(&x).unwrap();
            let (a2, b2) = bearing_offsets(&y).unwrap();
            prop_assert!(normalize(a1 - a2).abs() < 1e-6);
            prop_assert!(normalize(b1 - b2).abs() < 1e-6);
        }

        #[test]
        fn desired_distance_is_increasing_and_affine(n in 1u32..50) {
            let d = |k| desired_distance(&TrolleyStack::with_count(k)).unwrap();
            prop_assert!(d(n + 1) > d(n));
            prop_assert!(((d(n + 2) - d(n + 1)) - (d(n + 1) - d(n))).abs() < 1e-12);
        }
    }
}
