//! Planar poses, the joint assembly state and angle arithmetic.
//!
//! Headings are counterclockwise positive with zero along +x and are always
//! stored in `(-π, π]`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("angle must be finite, got {0}")]
    NonFiniteAngle(f64),
}

/// Wraps `a` into `(-π, π]`.
pub fn wrap_angle(a: f64) -> Result<f64, GeometryError> {
    if !a.is_finite() {
        return Err(GeometryError::NonFiniteAngle(a));
    }
    Ok(normalize(a))
}

/// Infallible variant of [`wrap_angle`] for internal use on values already
/// known to be finite. Non-finite input passes through unchanged.
#[inline]
pub(crate) fn normalize(a: f64) -> f64 {
    if !a.is_finite() {
        return a;
    }
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Maps an angle into `[0, 2π)`.
#[inline]
pub(crate) fn wrap_positive(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    /// Builds a pose, normalizing the heading.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize(theta),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance_to(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Applies the rigid motion `self` to `other` (other expressed in self's frame).
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    /// Point `(x, y)` expressed in this pose's frame mapped back to the world.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// The same pose with its heading reversed.
    pub fn reversed(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.theta + PI)
    }
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::origin()
    }
}

/// Joint pose of the leader and follower robots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyState {
    pub leader: Pose2,
    pub follower: Pose2,
}

impl AssemblyState {
    pub fn new(leader: Pose2, follower: Pose2) -> Self {
        Self { leader, follower }
    }

    /// Places both robots on the line through `mid` along its heading, the
    /// leader `l/2` ahead and the follower `l/2` behind, both facing forward.
    pub fn from_midpoint(mid: Pose2, l: f64) -> Self {
        let (s, c) = mid.theta.sin_cos();
        let h = 0.5 * l;
        Self {
            leader: Pose2::new(mid.x + h * c, mid.y + h * s, mid.theta),
            follower: Pose2::new(mid.x - h * c, mid.y - h * s, mid.theta),
        }
    }

    pub fn midpoint(&self) -> [f64; 2] {
        [
            0.5 * (self.leader.x + self.follower.x),
            0.5 * (self.leader.y + self.follower.y),
        ]
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.leader.x,
            self.leader.y,
            self.leader.theta,
            self.follower.x,
            self.follower.y,
            self.follower.theta,
        )
    }

    /// Builds a state from a raw vector, wrapping both headings.
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            leader: Pose2::new(v[0], v[1], v[2]),
            follower: Pose2::new(v[3], v[4], v[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.leader.is_finite() && self.follower.is_finite()
    }
}

/// Joint velocity command `[v_L, ω_L, v_F, ω_F]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v_leader: f64,
    pub w_leader: f64,
    pub v_follower: f64,
    pub w_follower: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput {
        v_leader: 0.0,
        w_leader: 0.0,
        v_follower: 0.0,
        w_follower: 0.0,
    };

    pub fn new(v_leader: f64, w_leader: f64, v_follower: f64, w_follower: f64) -> Self {
        Self {
            v_leader,
            w_leader,
            v_follower,
            w_follower,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.v_leader, self.w_leader, self.v_follower, self.w_follower]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::from(self.to_array())
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    /// Largest linear speed magnitude of the two robots.
    pub fn max_speed(&self) -> f64 {
        self.v_leader.abs().max(self.v_follower.abs())
    }
}

/// Polar coordinates of a point: range and bearing in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub rho: f64,
    pub delta: f64,
}

/// Expresses `point` in polar coordinates about `origin`, with the bearing
/// measured counterclockwise from the origin's heading.
///
/// A point coincident with the origin gets bearing 0.
pub fn to_polar_frame(origin: &Pose2, point: [f64; 2]) -> PolarPoint {
    let dx = point[0] - origin.x;
    let dy = point[1] - origin.y;
    let rho = dx.hypot(dy);
    if rho == 0.0 {
        return PolarPoint { rho, delta: 0.0 };
    }
    PolarPoint {
        rho,
        delta: wrap_positive(dy.atan2(dx) - origin.theta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI).unwrap(), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-1.5 * PI).unwrap(), 0.5 * PI, epsilon = 1e-12);
        assert_eq!(wrap_angle(PI).unwrap(), PI);
        assert_eq!(wrap_angle(-PI).unwrap(), PI);
    }

    #[test]
    fn wrap_rejects_non_finite() {
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn polar_examples() {
        let p = to_polar_frame(&Pose2::origin(), [1.0, 0.0]);
        assert_abs_diff_eq!(p.rho, 1.0);
        assert_abs_diff_eq!(p.delta, 0.0);
        let p = to_polar_frame(&Pose2::origin(), [0.0, 1.0]);
        assert_abs_diff_eq!(p.delta, 0.5 * PI, epsilon = 1e-12);
        let p = to_polar_frame(&Pose2::new(0.0, 0.0, 0.5 * PI), [0.0, 2.0]);
        assert_abs_diff_eq!(p.rho, 2.0);
        assert_abs_diff_eq!(p.delta, 0.0, epsilon = 1e-12);
        let p = to_polar_frame(&Pose2::new(3.0, 4.0, 1.0), [3.0, 4.0]);
        assert_eq!((p.rho, p.delta), (0.0, 0.0));
    }

    #[test]
    fn midpoint_formation() {
        let s = AssemblyState::from_midpoint(Pose2::new(1.0, 2.0, 0.5 * PI), 2.0);
        assert_abs_diff_eq!(s.leader.y, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.follower.y, 1.0, epsilon = 1e-12);
        let m = s.midpoint();
        assert_abs_diff_eq!(m[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m[1], 2.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_in_range(a in -1e4f64..1e4) {
            let w = wrap_angle(a).unwrap();
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap_angle(w).unwrap(), w);
            let k = ((a - w) / TAU).round();
            prop_assert!((a - w - k * TAU).abs() < 1e-9);
        }

        #[test]
        fn wrapped_difference_is_bounded(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            prop_assert!(wrap_angle(a - b).unwrap().abs() <= PI);
        }

        #[test]
        fn polar_invariant_under_rigid_motion(
            ox in -5.0f64..5.0, oy in -5.0f64..5.0, ot in -3.0f64..3.0,
            px in -5.0f64..5.0, py in -5.0f64..5.0,
            tx in -10.0f64..10.0, ty in -10.0f64..10.0, tt in -3.0f64..3.0,
        ) {
            let origin = Pose2::new(ox, oy, ot);
            let motion = Pose2::new(tx, ty, tt);
            let a = to_polar_frame(&origin, [px, py]);
            let b = to_polar_frame(&motion.compose(&origin), motion.transform_point([px, py]));
            prop_assert!((a.rho - b.rho).abs() < 1e-9);
            // bearings live on a circle
            let d = normalize(a.delta - b.delta);
            prop_assert!(d.abs() < 1e-9 || a.rho < 1e-9);
        }
    }
}
