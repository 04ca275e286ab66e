//! Body shifting linkage.
//!
//! The two body halves hang off the center link through an antisymmetric
//! parallelogram driven by one posture actuator: rotating the rocker by `φ`
//! moves the right half to `(r sin φ, −r cos φ)` and the left half to the
//! mirror point. Whichever half is gripping the wall stays put in the world,
//! so the center link advances by the anchor half's body-frame retreat.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LimbId, RigidTransform, RobotModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BodyError {
    #[error("actuator angle {0:.4} rad outside the linkage range")]
    AngleOutOfRange(f64),
    #[error("neutral shift state requires a zero actuator angle")]
    InvalidState,
    #[error("invalid four-bar parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LiftSide {
    Left,
    Right,
    Neutral,
}

impl LiftSide {
    pub fn opposite(self) -> LiftSide {
        match self {
            LiftSide::Left => LiftSide::Right,
            LiftSide::Right => LiftSide::Left,
            LiftSide::Neutral => LiftSide::Neutral,
        }
    }

    pub fn contains(self, id: LimbId) -> bool {
        match self {
            LiftSide::Left => id.is_left(),
            LiftSide::Right => !id.is_left(),
            LiftSide::Neutral => false,
        }
    }
}

/// Positive actuator angles put the right half ahead of the left half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftState {
    pub lift_side: LiftSide,
    pub actuator_angle_rad: f64,
}

impl ShiftState {
    pub fn neutral() -> Self {
        Self {
            lift_side: LiftSide::Neutral,
            actuator_angle_rad: 0.0,
        }
    }

    pub fn new(lift_side: LiftSide, actuator_angle_rad: f64) -> Self {
        Self {
            lift_side,
            actuator_angle_rad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrashofClass {
    Grashof,
    NonGrashof,
    ChangePoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourBarParams {
    /// Pivot spacing on the center link.
    pub ground_link_m: f64,
    pub rocker_m: f64,
    /// Pivot spacing on the body half.
    pub coupler_m: f64,
    pub follower_m: f64,
    pub actuator_min_rad: f64,
    pub actuator_max_rad: f64,
    /// Distance between front and back shoulders along the body.
    pub shoulder_span_m: f64,
    /// Loaded posture actuator speed.
    pub actuator_velocity_rad_s: f64,
    /// Axial force the posture actuator adds while lifting.
    pub thrust_n: f64,
}

/// Rocker amplitude giving a 0.075 m half-body lift with a 0.10 m rocker.
fn default_amplitude() -> f64 {
    (0.075f64 / (2.0 * 0.10)).asin()
}

impl Default for FourBarParams {
    fn default() -> Self {
        let a = default_amplitude();
        Self {
            ground_link_m: 0.06,
            rocker_m: 0.10,
            coupler_m: 0.06,
            follower_m: 0.10,
            actuator_min_rad: -a,
            actuator_max_rad: a,
            shoulder_span_m: 0.35,
            actuator_velocity_rad_s: 0.09,
            thrust_n: 30.0,
        }
    }
}

impl FourBarParams {
    pub fn validate(&self) -> Result<(), BodyError> {
        let l = [self.ground_link_m, self.rocker_m, self.coupler_m, self.follower_m];
        if l.iter().any(|v| !(*v > 0.0)) {
            return Err(BodyError::InvalidParams("link lengths must be positive".into()));
        }
        if !(self.actuator_min_rad < self.actuator_max_rad) {
            return Err(BodyError::InvalidParams("empty actuator range".into()));
        }
        if !(self.actuator_velocity_rad_s > 0.0) {
            return Err(BodyError::InvalidParams("actuator velocity must be positive".into()));
        }
        Ok(())
    }

    pub fn grashof(&self) -> GrashofClass {
        let mut l = [self.ground_link_m, self.rocker_m, self.coupler_m, self.follower_m];
        l.sort_by(|a, b| a.total_cmp(b));
        let lhs = l[0] + l[3];
        let rhs = l[1] + l[2];
        if (lhs - rhs).abs() <= 1e-12 * rhs {
            GrashofClass::ChangePoint
        } else if lhs < rhs {
            GrashofClass::Grashof
        } else {
            GrashofClass::NonGrashof
        }
    }

    /// Half-frame advance per radian of actuator rotation at the neutral pose.
    pub fn stroke_gain_m_per_rad(&self) -> f64 {
        self.rocker_m
    }

    /// Relative advance of a half over the full actuator range.
    pub fn lift_stroke_m(&self) -> f64 {
        self.rocker_m * (self.actuator_max_rad.sin() - self.actuator_min_rad.sin())
    }

    /// Actuator angles (start, end) of a lift of the given side.
    pub fn lift_sweep(&self, side: LiftSide) -> (f64, f64) {
        match side {
            LiftSide::Right => (self.actuator_min_rad, self.actuator_max_rad),
            LiftSide::Left => (self.actuator_max_rad, self.actuator_min_rad),
            LiftSide::Neutral => (0.0, 0.0),
        }
    }

    /// Time for the posture actuator to sweep between two angles.
    pub fn sweep_time_s(&self, from: f64, to: f64) -> f64 {
        (to - from).abs() / self.actuator_velocity_rad_s
    }

    /// Closure defect of the parallelogram loop carrying the right half.
    pub fn closure_residual(&self, angle: f64) -> f64 {
        let a1 = Vector3::new(-0.5 * self.ground_link_m, 0.0, 0.0);
        let a2 = Vector3::new(0.5 * self.ground_link_m, 0.0, 0.0);
        let dir = Vector3::new(angle.sin(), -angle.cos(), 0.0);
        let b1 = a1 + self.rocker_m * dir;
        let b2 = a2 + self.follower_m * dir;
        ((b2 - b1).norm() - self.coupler_m).abs()
    }
}

/// Body-frame origin of the half carrying the given limb.
pub fn half_offset(p: &FourBarParams, left: bool, angle: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    if left {
        Vector3::new(-p.rocker_m * s, p.rocker_m * c, 0.0)
    } else {
        Vector3::new(p.rocker_m * s, -p.rocker_m * c, 0.0)
    }
}

fn check_state(p: &FourBarParams, s: &ShiftState) -> Result<(), BodyError> {
    let a = s.actuator_angle_rad;
    if !(a >= p.actuator_min_rad - 1e-12 && a <= p.actuator_max_rad + 1e-12) {
        return Err(BodyError::AngleOutOfRange(a));
    }
    if s.lift_side == LiftSide::Neutral && a.abs() > 1e-12 {
        return Err(BodyError::InvalidState);
    }
    Ok(())
}

/// Shoulder frame of one limb in the body frame, without validation.
pub fn shoulder_frame(model: &RobotModel, id: LimbId, s: &ShiftState) -> RigidTransform {
    let half = half_offset(&model.fourbar, id.is_left(), s.actuator_angle_rad);
    RigidTransform::from_translation(half + model.limb(id).shoulder_offset_m)
}

/// All four shoulder frames in the body frame, in `LimbId::ALL` order.
pub fn shoulder_frames(model: &RobotModel, s: &ShiftState) -> Result<[RigidTransform; 4], BodyError> {
    check_state(&model.fourbar, s)?;
    Ok(LimbId::ALL.map(|id| shoulder_frame(model, id, s)))
}

/// World displacement of the center link when the actuator moves from
/// `from` to `to` while the side opposite `lift_side` holds the wall.
pub fn center_displacement(p: &FourBarParams, lift_side: LiftSide, from: f64, to: f64) -> Vector3<f64> {
    match lift_side {
        LiftSide::Neutral => Vector3::zeros(),
        side => {
            let anchor_left = side == LiftSide::Right;
            -(half_offset(p, anchor_left, to) - half_offset(p, anchor_left, from))
        }
    }
}

/// Axial thrust of the posture actuator on the lifted half.
pub fn body_thrust(p: &FourBarParams, s: &ShiftState, lifting: bool) -> f64 {
    if lifting && s.lift_side != LiftSide::Neutral {
        p.thrust_n
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{compose, default_model};

    #[test]
    fn neutral_is_mirror_symmetric() {
        let m = default_model();
        let f = shoulder_frames(&m, &ShiftState::neutral()).unwrap();
        let mirror = |v: Vector3<f64>| Vector3::new(v.x, -v.y, v.z);
        assert!((f[0].translation - mirror(f[1].translation)).norm() < 1e-15);
        assert!((f[2].translation - mirror(f[3].translation)).norm() < 1e-15);
    }

    #[test]
    fn right_lift_advances_right_shoulders() {
        let m = default_model();
        let (a0, a1) = m.fourbar.lift_sweep(LiftSide::Right);
        let s0 = shoulder_frames(&m, &ShiftState::new(LiftSide::Right, a0)).unwrap();
        let s1 = shoulder_frames(&m, &ShiftState::new(LiftSide::Right, a1)).unwrap();
        for id in [LimbId::FrontRight, LimbId::BackRight] {
            let d = s1[id.index()].translation - s0[id.index()].translation;
            assert!((d.x - 0.075).abs() < 1e-12);
            assert!(d.y.abs() < 1e-12);
        }
    }

    #[test]
    fn anchor_shoulders_hold_still_in_world() {
        let m = default_model();
        let p = &m.fourbar;
        for side in [LiftSide::Right, LiftSide::Left] {
            let (a0, a1) = p.lift_sweep(side);
            let body0 = RigidTransform::from_translation(Vector3::new(0.3, 0.0, 0.25));
            for k in 0..=20 {
                let a = a0 + (a1 - a0) * k as f64 / 20.0;
                let body = RigidTransform::from_translation(
                    body0.translation + center_displacement(p, side, a0, a),
                );
                for id in LimbId::ALL.into_iter().filter(|id| !side.contains(*id)) {
                    let w0 = compose(&body0, &shoulder_frame(&m, id, &ShiftState::new(side, a0)));
                    let w = compose(&body, &shoulder_frame(&m, id, &ShiftState::new(side, a)));
                    assert!((w.translation - w0.translation).norm() < 1e-9);
                }
            }
            let d = center_displacement(p, side, a0, a1);
            assert!((d.x - 0.075).abs() < 1e-12 && d.y.abs() < 1e-12);
        }
    }

    #[test]
    fn center_link_sits_between_halves() {
        let p = FourBarParams::default();
        for k in 0..=10 {
            let a = p.actuator_min_rad + (p.actuator_max_rad - p.actuator_min_rad) * k as f64 / 10.0;
            let mid = half_offset(&p, true, a) + half_offset(&p, false, a);
            assert!(mid.norm() < 1e-15);
            assert!(p.closure_residual(a) < 1e-15);
        }
    }

    #[test]
    fn linkage_class_and_stroke() {
        let p = FourBarParams::default();
        assert_eq!(p.grashof(), GrashofClass::ChangePoint);
        assert!(p.lift_stroke_m() >= 0.075 - 1e-12);
        assert_eq!(p.stroke_gain_m_per_rad(), 0.10);
    }

    #[test]
    fn invalid_states() {
        let m = default_model();
        assert!(matches!(
            shoulder_frames(&m, &ShiftState::new(LiftSide::Right, 1.0)),
            Err(BodyError::AngleOutOfRange(_))
        ));
        assert_eq!(
            shoulder_frames(&m, &ShiftState::new(LiftSide::Neutral, 0.1)),
            Err(BodyError::InvalidState)
        );
    }

    #[test]
    fn thrust_only_while_lifting() {
        let p = FourBarParams::default();
        assert_eq!(body_thrust(&p, &ShiftState::new(LiftSide::Right, 0.0), true), 30.0);
        assert_eq!(body_thrust(&p, &ShiftState::new(LiftSide::Left, 0.0), true), 30.0);
        assert_eq!(body_thrust(&p, &ShiftState::neutral(), false), 0.0);
        assert_eq!(body_thrust(&p, &ShiftState::new(LiftSide::Left, 0.2), false), 0.0);
    }
}
