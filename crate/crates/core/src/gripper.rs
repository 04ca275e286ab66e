//! Two-finger spine gripper: whippletree adaptation, fingertip force
//! transmission, spine-cell shear capacity and the slope-dependent pull bound.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GripperError {
    #[error("object offset {offset:.4} m exceeds passive lateral travel {travel:.4} m")]
    OffsetExceedsTravel { offset: f64, travel: f64 },
    #[error("object width {width:.4} m exceeds maximum opening {max:.4} m")]
    ObjectTooWide { width: f64, max: f64 },
    #[error("object width {width:.4} m below minimum opening {min:.4} m")]
    ObjectTooNarrow { width: f64, min: f64 },
    #[error("opening {0:.4} m outside the finger range")]
    OpeningOutOfRange(f64),
    #[error("actuator force must be non-negative, got {0}")]
    NegativeForce(f64),
    #[error("surface slope {0:.2} deg outside the fitted range")]
    SlopeOutOfRange(f64),
    #[error("stroke fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperParams {
    /// Lateral offset of each finger pivot from the gripper centerline.
    pub finger_pivot_offset_m: f64,
    pub finger_length_m: f64,
    /// Input lever on the finger, driven by the coupler.
    pub lever_length_m: f64,
    pub coupler_length_m: f64,
    /// Half-length of the whippletree bar.
    pub whippletree_arm_m: f64,
    pub min_opening_m: f64,
    pub max_opening_m: f64,
    pub nominal_opening_m: f64,
    pub nominal_fingertip_force_n: f64,
    pub nominal_actuator_force_n: f64,
    pub max_actuator_force_n: f64,
    pub lateral_travel_m: f64,
    /// Time for one full open-and-close stroke.
    pub full_stroke_time_s: f64,
    /// Direction of the cell parallelogram ground link.
    pub cell_ground_angle_rad: f64,
    pub cell_link_m: f64,
}

impl Default for GripperParams {
    fn default() -> Self {
        let mut g = Self {
            finger_pivot_offset_m: 0.01,
            finger_length_m: 0.06,
            lever_length_m: 0.02,
            coupler_length_m: 0.03,
            whippletree_arm_m: 0.015,
            min_opening_m: 0.02,
            max_opening_m: 0.10,
            nominal_opening_m: 0.0508,
            nominal_fingertip_force_n: 70.0,
            nominal_actuator_force_n: 0.0,
            max_actuator_force_n: 0.0,
            lateral_travel_m: 0.02,
            full_stroke_time_s: 8.0,
            cell_ground_angle_rad: 0.0,
            cell_link_m: 0.025,
        };
        g.calibrate_actuator();
        g
    }
}

impl GripperParams {
    /// Set the nominal actuator force so the nominal opening yields the
    /// nominal fingertip force.
    pub fn calibrate_actuator(&mut self) {
        let theta = self.finger_angle(self.nominal_opening_m);
        let ratio = self.transmission(theta);
        self.nominal_actuator_force_n = 2.0 * self.nominal_fingertip_force_n / ratio;
        self.max_actuator_force_n = 2.0 * self.nominal_actuator_force_n;
    }

    fn finger_angle(&self, opening: f64) -> f64 {
        ((0.5 * opening - self.finger_pivot_offset_m) / self.finger_length_m).asin()
    }

    /// Actuator slider position for a finger angle.
    pub fn slider_position(&self, theta: f64) -> f64 {
        let qx = self.finger_pivot_offset_m - self.lever_length_m * theta.cos();
        let qy = self.lever_length_m * theta.sin();
        qy - (self.coupler_length_m.powi(2) - qx * qx).sqrt()
    }

    /// Fingertip lateral position for a finger angle.
    pub fn tip_position(&self, theta: f64) -> f64 {
        self.finger_pivot_offset_m + self.finger_length_m * theta.sin()
    }

    /// `|ds/dθ| / |dx_tip/dθ|` of one finger.
    fn transmission(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        let l = self.lever_length_m;
        let qx = self.finger_pivot_offset_m - l * c;
        let root = (self.coupler_length_m.powi(2) - qx * qx).sqrt();
        let ds = l * c + qx * (l * s) / root;
        let dx = self.finger_length_m * c;
        ds.abs() / dx.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineCellParams {
    pub spines_per_cell: u32,
    pub spine_diameter_mm: f64,
    /// Per-spine suspension spring rate (5 mN/mm).
    pub spring_rate_n_per_m: f64,
    /// Normal-force scale of the saturating engagement model.
    pub engagement_scale_n: f64,
    pub per_spine_shear_n: f64,
}

impl Default for SpineCellParams {
    fn default() -> Self {
        Self {
            spines_per_cell: 50,
            spine_diameter_mm: 0.93,
            spring_rate_n_per_m: 5.0,
            engagement_scale_n: 35.0,
            per_spine_shear_n: 1.5,
        }
    }
}

impl SpineCellParams {
    /// Engaged fraction `1 − exp(−N/N₀)`, zero without preload.
    pub fn engaged_fraction(&self, normal_force: f64) -> f64 {
        if normal_force <= 0.0 {
            0.0
        } else {
            1.0 - (-normal_force / self.engagement_scale_n).exp()
        }
    }
}

/// Slope-linear upper bound on the pull a grasp withstands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspBound {
    pub intercept_n: f64,
    pub slope_n_per_deg: f64,
    pub min_slope_deg: f64,
    pub max_slope_deg: f64,
}

/// Intercept found by bisection as the smallest value keeping every phase of
/// the vertical-wall stepping cycle feasible at 13 kg, before the 1.2 margin.
pub const CALIBRATED_MIN_INTERCEPT_N: f64 = 159.41;
pub const GRASP_BOUND_MARGIN: f64 = 1.2;

impl Default for GraspBound {
    fn default() -> Self {
        Self {
            intercept_n: GRASP_BOUND_MARGIN * CALIBRATED_MIN_INTERCEPT_N,
            slope_n_per_deg: -1.5,
            min_slope_deg: 0.0,
            max_slope_deg: 90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspAdaptation {
    /// Lateral contact positions of the two fingers, gripper frame.
    pub finger_positions_m: [f64; 2],
    pub lateral_shift_m: f64,
    pub cell_orientations_rad: [f64; 2],
    pub contact_forces_n: [f64; 2],
}

/// Passive adaptation to an off-center object of the given width.
pub fn adapt_grasp(g: &GripperParams, object_center_offset: f64, object_width: f64) -> Result<GraspAdaptation, GripperError> {
    if object_center_offset.abs() > g.lateral_travel_m + 1e-12 {
        return Err(GripperError::OffsetExceedsTravel {
            offset: object_center_offset,
            travel: g.lateral_travel_m,
        });
    }
    if object_width > g.max_opening_m {
        return Err(GripperError::ObjectTooWide {
            width: object_width,
            max: g.max_opening_m,
        });
    }
    if object_width < g.min_opening_m {
        return Err(GripperError::ObjectTooNarrow {
            width: object_width,
            min: g.min_opening_m,
        });
    }
    let shift = object_center_offset;
    let half = 0.5 * object_width;
    let theta = g.finger_angle(object_width);

    // whippletree bar rotates until both fingers touch; arms stay equal
    let tilt = (shift / (2.0 * g.whippletree_arm_m)).clamp(-1.0, 1.0).asin();
    let arm_left = g.whippletree_arm_m * tilt.cos();
    let arm_right = g.whippletree_arm_m * tilt.cos();
    let total = g.nominal_actuator_force_n;
    let branch_left = total * arm_right / (arm_left + arm_right);
    let branch_right = total * arm_left / (arm_left + arm_right);
    let ratio = g.transmission(theta);

    // each cell hangs on a parallelogram whose coupler copies the ground link
    let cell = |finger_angle: f64, side: f64| {
        let a1 = (side * g.finger_pivot_offset_m, 0.0);
        let a2 = (a1.0 + g.cell_link_m * g.cell_ground_angle_rad.cos(), a1.1 + g.cell_link_m * g.cell_ground_angle_rad.sin());
        let dir = (finger_angle.sin() * side, finger_angle.cos());
        let b1 = (a1.0 + g.finger_length_m * dir.0, a1.1 + g.finger_length_m * dir.1);
        let b2 = (a2.0 + g.finger_length_m * dir.0, a2.1 + g.finger_length_m * dir.1);
        (b2.1 - b1.1).atan2(b2.0 - b1.0)
    };

    Ok(GraspAdaptation {
        finger_positions_m: [shift - half, shift + half],
        lateral_shift_m: shift,
        cell_orientations_rad: [cell(theta, -1.0), cell(theta, 1.0)],
        contact_forces_n: [branch_left * ratio, branch_right * ratio],
    })
}

/// Normal force at each fingertip for a given actuator force and opening.
pub fn fingertip_force(g: &GripperParams, actuator_force: f64, opening: f64) -> Result<f64, GripperError> {
    if actuator_force < 0.0 {
        return Err(GripperError::NegativeForce(actuator_force));
    }
    if !(opening >= g.min_opening_m && opening <= g.max_opening_m) {
        return Err(GripperError::OpeningOutOfRange(opening));
    }
    Ok(0.5 * actuator_force * g.transmission(g.finger_angle(opening)))
}

pub fn max_withstanding_force(b: &GraspBound, surface_slope_deg: f64) -> Result<f64, GripperError> {
    if !(surface_slope_deg >= b.min_slope_deg && surface_slope_deg <= b.max_slope_deg) {
        return Err(GripperError::SlopeOutOfRange(surface_slope_deg));
    }
    Ok((b.intercept_n + b.slope_n_per_deg * surface_slope_deg).max(0.0))
}

/// Shear one spine cell holds at the given normal preload.
pub fn spine_shear_capacity(sc: &SpineCellParams, normal_force: f64) -> f64 {
    sc.engaged_fraction(normal_force) * sc.spines_per_cell as f64 * sc.per_spine_shear_n
}

/// Time for a fraction of the full open-and-close stroke.
pub fn gripper_timing(g: &GripperParams, stroke_fraction: f64) -> Result<f64, GripperError> {
    if !(0.0..=1.0).contains(&stroke_fraction) {
        return Err(GripperError::InvalidFraction(stroke_fraction));
    }
    Ok(stroke_fraction * g.full_stroke_time_s)
}

/// Whether a hold of the given smallest diameter and centroid uncertainty
/// fits the fingers and the passive lateral travel.
pub fn is_graspable(g: &GripperParams, smallest_diameter_m: f64, centroid_variance_m: f64) -> bool {
    smallest_diameter_m <= g.max_opening_m && centroid_variance_m < g.lateral_travel_m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_grasp_is_symmetric() {
        let g = GripperParams::default();
        let a = adapt_grasp(&g, 0.0, 0.05).unwrap();
        assert_eq!(a.lateral_shift_m, 0.0);
        assert!((a.finger_positions_m[0] + a.finger_positions_m[1]).abs() < 1e-15);
    }

    #[test]
    fn offset_grasp_shifts_and_balances() {
        let g = GripperParams::default();
        let a = adapt_grasp(&g, 0.012, 0.05).unwrap();
        assert_eq!(a.lateral_shift_m, 0.012);
        assert!((a.contact_forces_n[0] - a.contact_forces_n[1]).abs() < 1e-9);
        let mid = 0.5 * (a.finger_positions_m[0] + a.finger_positions_m[1]);
        assert!((mid - 0.012).abs() < 1e-15);
    }

    #[test]
    fn travel_and_width_limits() {
        let g = GripperParams::default();
        assert!(matches!(
            adapt_grasp(&g, g.lateral_travel_m + 1e-6, 0.05),
            Err(GripperError::OffsetExceedsTravel { .. })
        ));
        assert!(matches!(
            adapt_grasp(&g, 0.0, g.max_opening_m + 1e-6),
            Err(GripperError::ObjectTooWide { .. })
        ));
    }

    #[test]
    fn nominal_fingertip_force() {
        let g = GripperParams::default();
        let f = fingertip_force(&g, g.nominal_actuator_force_n, g.nominal_opening_m).unwrap();
        assert!((f - 70.0).abs() < 1e-9);
        assert_eq!(fingertip_force(&g, 0.0, 0.05).unwrap(), 0.0);
        assert!(fingertip_force(&g, 10.0, 0.5).is_err());
    }

    // Virtual work through finite differences of the linkage positions.
    fn virtual_work_oracle(g: &GripperParams, actuator_force: f64, opening: f64) -> f64 {
        let theta = ((0.5 * opening - g.finger_pivot_offset_m) / g.finger_length_m).asin();
        let h = 1e-7;
        let ds = (g.slider_position(theta + h) - g.slider_position(theta - h)) / (2.0 * h);
        let dx = (g.tip_position(theta + h) - g.tip_position(theta - h)) / (2.0 * h);
        0.5 * actuator_force * ds.abs() / dx.abs()
    }

    #[test]
    fn fingertip_force_matches_virtual_work() {
        let g = GripperParams::default();
        for opening in [0.02, 0.035, 0.0508, 0.07, 0.1] {
            for fa in [50.0, 200.0, 400.0] {
                let f = fingertip_force(&g, fa, opening).unwrap();
                let o = virtual_work_oracle(&g, fa, opening);
                assert!((f - o).abs() < 1e-6 * o.max(1.0), "{opening} {fa}");
            }
        }
        let f1 = fingertip_force(&g, 200.0, 0.0508).unwrap();
        let f2 = fingertip_force(&g, 400.0, 0.0508).unwrap();
        assert!(f2 > f1);
    }

    #[test]
    fn bound_is_affine_and_clamped() {
        let b = GraspBound {
            intercept_n: 90.0,
            slope_n_per_deg: -1.5,
            min_slope_deg: 0.0,
            max_slope_deg: 90.0,
        };
        assert_eq!(max_withstanding_force(&b, 60.0).unwrap(), 0.0);
        assert!(max_withstanding_force(&b, 10.0).unwrap() > max_withstanding_force(&b, 20.0).unwrap());
        assert!(max_withstanding_force(&b, 91.0).is_err());
    }

    #[test]
    fn spine_capacity() {
        let sc = SpineCellParams::default();
        assert_eq!(spine_shear_capacity(&sc, 0.0), 0.0);
        let four_cells = 4.0 * spine_shear_capacity(&sc, 70.0);
        assert!(four_cells >= 9.6 * 9.81);
        let mut prev = 0.0;
        for k in 0..100 {
            let c = spine_shear_capacity(&sc, k as f64);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn timing_is_linear() {
        let g = GripperParams::default();
        assert_eq!(gripper_timing(&g, 1.0).unwrap(), 8.0);
        assert_eq!(gripper_timing(&g, 0.0).unwrap(), 0.0);
        assert_eq!(gripper_timing(&g, 0.5).unwrap(), 4.0);
        assert!(gripper_timing(&g, 1.5).is_err());
    }
}
