//! Shared geometry, robot parameters and gravity framing.
//!
//! World coordinates are attached to the climbing surface: `x` runs up the
//! climb axis along the surface, `y` is lateral and `z` is the outward surface
//! normal. The body frame is the center link of the torso with the same
//! convention (x forward, y left, z away from the surface).

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::FourBarParams;
use crate::gripper::{GripperParams, GraspBound, SpineCellParams};
use crate::limb::{self, Branch, FiveBarParams, WristParams};

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Rigid transform with an explicit rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self::new(*r.matrix(), translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Orthonormality defect `‖RᵀR − I‖`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    pub fn is_valid(&self) -> bool {
        self.orthonormality_error() < 1e-9 && (self.rotation.determinant() - 1.0).abs() < 1e-9
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    /// Position distance and geodesic rotation angle to another transform.
    pub fn distance_to(&self, other: &RigidTransform) -> (f64, f64) {
        let dp = (self.translation - other.translation).norm();
        (dp, rotation_angle(&(self.rotation.transpose() * other.rotation)))
    }
}

/// `a ∘ b`: apply `b` first, then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform::new(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
    )
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        compose(&self, &rhs)
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Angle of a rotation matrix, robust near 0 and π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = 0.5 * skew.norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// Rotation vector (axis × angle) of a rotation matrix.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let angle = rotation_angle(r);
    if std::f64::consts::PI - angle > 1e-3 {
        let skew = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        let s = skew.norm();
        if s < 1e-300 {
            return Vector3::zeros();
        }
        return skew * (angle / s);
    }
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Gravity expressed in the wall frame for a given wall inclination.
///
/// 0° is level ground (gravity into the surface), 90° a vertical wall
/// (gravity down the climb axis) and 180° a ceiling (gravity pulling off).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityFrame {
    pub gravity_m_s2: Vector3<f64>,
    pub wall_inclination_deg: f64,
}

impl GravityFrame {
    pub fn new(inclination_deg: f64) -> Result<Self, ModelError> {
        Self::with_magnitude(inclination_deg, STANDARD_GRAVITY)
    }

    pub fn with_magnitude(inclination_deg: f64, g: f64) -> Result<Self, ModelError> {
        if !(0.0..=180.0).contains(&inclination_deg) {
            return Err(ModelError::Invalid(format!(
                "wall inclination {inclination_deg} deg outside [0, 180]"
            )));
        }
        if !(g > 0.0) {
            return Err(ModelError::Invalid("gravity magnitude must be positive".into()));
        }
        let th = inclination_deg.to_radians();
        Ok(Self {
            gravity_m_s2: g * Vector3::new(-th.sin(), 0.0, -th.cos()),
            wall_inclination_deg: inclination_deg,
        })
    }

    pub fn ground() -> Self {
        Self::new(0.0).expect("valid inclination")
    }

    pub fn vertical() -> Self {
        Self::new(90.0).expect("valid inclination")
    }

    pub fn ceiling() -> Self {
        Self::new(180.0).expect("valid inclination")
    }

    pub fn magnitude(&self) -> f64 {
        self.gravity_m_s2.norm()
    }

    /// Gravity component lying in the surface plane.
    pub fn tangential(&self) -> Vector3<f64> {
        Vector3::new(self.gravity_m_s2.x, self.gravity_m_s2.y, 0.0)
    }

    /// Signed gravity component along the outward normal (negative presses into the wall).
    pub fn normal_component(&self) -> f64 {
        self.gravity_m_s2.z
    }

    /// Tilt of the surface away from vertical, in [0, 90] degrees.
    pub fn surface_slope_deg(&self) -> f64 {
        (self.wall_inclination_deg - 90.0).abs().min(90.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LimbId {
    FrontLeft,
    FrontRight,
    BackLeft,
    BackRight,
}

impl LimbId {
    pub const ALL: [LimbId; 4] = [
        LimbId::FrontLeft,
        LimbId::FrontRight,
        LimbId::BackLeft,
        LimbId::BackRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_left(self) -> bool {
        matches!(self, LimbId::FrontLeft | LimbId::BackLeft)
    }

    pub fn is_front(self) -> bool {
        matches!(self, LimbId::FrontLeft | LimbId::FrontRight)
    }

    /// +1 for left limbs, −1 for right limbs (mirrored shoulder rotation).
    pub fn side_sign(self) -> f64 {
        if self.is_left() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            LimbId::FrontLeft => "FL",
            LimbId::FrontRight => "FR",
            LimbId::BackLeft => "BL",
            LimbId::BackRight => "BR",
        }
    }
}

impl fmt::Display for LimbId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Configuration {
    Walking3DoF,
    Climbing6DoF,
}

/// Per-limb kinematic parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbParams {
    pub fivebar: FiveBarParams,
    pub wrist: WristParams,
    /// Shoulder position relative to its body half frame.
    pub shoulder_offset_m: Vector3<f64>,
    /// Physical joint angle = commanded q + offset.
    pub joint_offsets_rad: [f64; 6],
    pub joint_lower_rad: [f64; 6],
    pub joint_upper_rad: [f64; 6],
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub body_length_walking_m: f64,
    pub body_length_climbing_m: f64,
    pub walking_mass_kg: f64,
    pub climbing_mass_kg: f64,
    pub limbs: [LimbParams; 4],
    pub fourbar: FourBarParams,
    pub gripper: GripperParams,
    pub spine: SpineCellParams,
    pub grasp_bound: GraspBound,
    pub cells_per_gripper: usize,
    pub joint_velocity_limits_rad_s: [f64; 6],
    pub joint_torque_limits_nm: [f64; 6],
    /// Structural cap on compressive contact force.
    pub compression_limit_n: f64,
    /// Capacity factor applied to contacts whose limb is driving the body half.
    pub moving_contact_derate: f64,
    /// Manipulability below which IK reports a near-singular target.
    pub singularity_threshold: f64,
    pub configuration: Configuration,
    /// Link lengths are self-consistent defaults, not measured values.
    pub synthetic_geometry: bool,
}

impl RobotModel {
    pub fn limb(&self, id: LimbId) -> &LimbParams {
        &self.limbs[id.index()]
    }

    pub fn mass_kg(&self) -> f64 {
        match self.configuration {
            Configuration::Walking3DoF => self.walking_mass_kg,
            Configuration::Climbing6DoF => self.climbing_mass_kg,
        }
    }

    pub fn body_length_m(&self) -> f64 {
        match self.configuration {
            Configuration::Walking3DoF => self.body_length_walking_m,
            Configuration::Climbing6DoF => self.body_length_climbing_m,
        }
    }

    pub fn with_configuration(&self, configuration: Configuration) -> RobotModel {
        let mut m = self.clone();
        m.configuration = configuration;
        m
    }

    /// Replace every limb's five-bar and recompute the home offsets.
    pub fn with_fivebar(&self, fivebar: FiveBarParams) -> Result<RobotModel, ModelError> {
        let mut m = self.clone();
        for l in m.limbs.iter_mut() {
            l.fivebar = fivebar.clone();
            let (tf, tb) = limb::fivebar_ik(&fivebar, &HOME_POINT, l.branch)
                .map_err(|e| ModelError::Invalid(e.to_string()))?;
            l.joint_offsets_rad[1] = tf;
            l.joint_offsets_rad[2] = tb;
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            self.body_length_walking_m,
            self.body_length_climbing_m,
            self.walking_mass_kg,
            self.climbing_mass_kg,
            self.compression_limit_n,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(ModelError::Invalid("lengths and masses must be positive".into()));
        }
        if self.climbing_mass_kg <= self.walking_mass_kg {
            return Err(ModelError::Invalid(
                "climbing mass must exceed walking mass".into(),
            ));
        }
        for l in &self.limbs {
            l.fivebar.validate().map_err(|e| ModelError::Invalid(e.to_string()))?;
            if !(l.wrist.toe_offset_m > 0.0) {
                return Err(ModelError::Invalid("toe offset must be positive".into()));
            }
        }
        self.fourbar
            .validate()
            .map_err(|e| ModelError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<RobotModel, ModelError> {
        let m: RobotModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RobotModel, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Five-bar end point at the home pose, in the leg plane (u forward, v toward the surface).
pub const HOME_POINT: nalgebra::Vector2<f64> = nalgebra::Vector2::new(0.0, 0.20);

/// Nominal calibrated model. Link lengths are synthetic.
pub fn default_model() -> RobotModel {
    let fivebar = FiveBarParams::default();
    let fourbar = FourBarParams::default();
    let limbs = LimbId::ALL.map(|id| {
        let branch = Branch::ElbowOut;
        let (tf, tb) = limb::fivebar_ik(&fivebar, &HOME_POINT, branch)
            .expect("home point inside the default five-bar workspace");
        let lateral = 0.05 * id.side_sign();
        let along = if id.is_front() {
            0.5 * fourbar.shoulder_span_m
        } else {
            -0.5 * fourbar.shoulder_span_m
        };
        LimbParams {
            fivebar: fivebar.clone(),
            wrist: WristParams::default(),
            shoulder_offset_m: Vector3::new(along, lateral, 0.0),
            joint_offsets_rad: [0.0, tf, tb, 0.0, 0.0, 0.0],
            joint_lower_rad: [-1.3, -1.6, -1.6, -3.2, -1.55, -3.2],
            joint_upper_rad: [1.3, 1.6, 1.6, 3.2, 1.55, 3.2],
            branch,
        }
    });
    RobotModel {
        body_length_walking_m: 0.30,
        body_length_climbing_m: 0.35,
        walking_mass_kg: 6.3,
        climbing_mass_kg: 9.6,
        limbs,
        fourbar,
        gripper: GripperParams::default(),
        spine: SpineCellParams::default(),
        grasp_bound: GraspBound::default(),
        cells_per_gripper: 2,
        joint_velocity_limits_rad_s: [15.0, 15.0, 15.0, 6.0, 6.0, 6.0],
        joint_torque_limits_nm: [6.0, 7.3, 7.3, 4.0, 4.0, 4.0],
        compression_limit_n: 500.0,
        moving_contact_derate: 0.5,
        singularity_threshold: 1e-4,
        configuration: Configuration::Climbing6DoF,
        synthetic_geometry: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn sample() -> RigidTransform {
        RigidTransform::new(rot_z(0.3) * rot_y(-0.7) * rot_x(1.1), Vector3::new(0.1, -0.2, 0.3))
    }

    #[test]
    fn identity_composition() {
        let t = sample();
        let c = compose(&RigidTransform::identity(), &t);
        assert_eq!(c, t);
    }

    #[test]
    fn inverse_composition() {
        let t = sample();
        let c = compose(&t, &t.inverse());
        assert!((c.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(c.translation.norm() < 1e-12);
    }

    #[test]
    fn quarter_turns_add() {
        let q = RigidTransform::from_rotation(rot_z(FRAC_PI_2));
        let h = compose(&q, &q);
        assert!((h.rotation - rot_z(std::f64::consts::PI)).norm() < 1e-12);
    }

    #[test]
    fn default_masses_and_lengths() {
        let m = default_model();
        assert_eq!(m.walking_mass_kg, 6.3);
        assert!((m.climbing_mass_kg - (13.0 - 3.4)).abs() < 1e-12);
        assert!((m.body_length_walking_m - 0.56 / 1.87).abs() < 0.005);
        assert_eq!(m.body_length_climbing_m, 0.35);
        m.validate().unwrap();
    }

    #[test]
    fn gravity_tangential_magnitude() {
        for th in [0.0f64, 90.0, 125.0, 180.0] {
            let g = GravityFrame::new(th).unwrap();
            let expect = 9.81 * th.to_radians().sin();
            assert!((g.tangential().norm() - expect).abs() < 1e-12, "{th}");
        }
        assert!(GravityFrame::new(181.0).is_err());
        assert!(GravityFrame::ground().normal_component() < 0.0);
        assert!(GravityFrame::ceiling().normal_component() > 0.0);
    }

    #[test]
    fn model_json_roundtrip_is_exact() {
        let m = default_model();
        let s = m.to_json().unwrap();
        let back = RobotModel::from_json(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), s);
        assert!(s.contains("body_length_walking_m"));
    }
}
