//! Timed phase plans for the shifting wall gait, hold-to-hold climbing and
//! the ground trot, plus the normalized performance metrics.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{self, LiftSide, ShiftState};
use crate::gripper::gripper_timing;
use crate::limb::{self, Branch, LimbConfig};
use crate::model::{Configuration, LimbId, RigidTransform, RobotModel};
use crate::sdm::{HoldId, SparseMap};
use crate::stance::{Attachment, ContactKind, StanceError, StanceState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaitError {
    #[error("lift stroke {requested} m exceeds the linkage stroke {max} m")]
    StrokeExceeded { requested: f64, max: f64 },
    #[error("hold {1} is out of reach of limb {0}")]
    HoldUnreachable(LimbId, HoldId),
    #[error("no swing order keeps three attachments")]
    NoStableOrder,
    #[error("{speed} m/s needs {required} rad/s on joint {joint}, limit {limit} rad/s")]
    SpeedInfeasible {
        speed: f64,
        joint: usize,
        required: f64,
        limit: f64,
    },
    #[error("plan requires the {0:?} configuration")]
    WrongConfiguration(Configuration),
    #[error("phase {phase}: {source}")]
    Kinematics { phase: usize, source: StanceError },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("hold {0} is not in the map")]
    UnknownHold(HoldId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diagonal {
    /// Front-left with back-right.
    FlBr,
    FrBl,
}

impl Diagonal {
    pub fn limbs(&self) -> [LimbId; 2] {
        match self {
            Diagonal::FlBr => [LimbId::FrontLeft, LimbId::BackRight],
            Diagonal::FrBl => [LimbId::FrontRight, LimbId::BackLeft],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    SwingLimb(LimbId),
    BodyLift(LiftSide),
    BodyAdvance,
    /// The named diagonal pair swings while the other pair supports.
    TrotPair(Diagonal),
}

impl PhaseKind {
    pub fn label(&self) -> String {
        match self {
            PhaseKind::SwingLimb(id) => format!("swing {}", id.short_name()),
            PhaseKind::BodyLift(s) => format!("lift {:?}", s).to_lowercase(),
            PhaseKind::BodyAdvance => "advance".to_string(),
            PhaseKind::TrotPair(d) => format!("trot {:?}", d).to_lowercase(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BodyProfile {
    /// Zero-velocity boundary point-to-point motion.
    Quintic,
    /// Constant body velocity.
    Linear,
    /// Body follows the four-bar with the opposite half held in place.
    Anchored,
}

/// Gripper opening command, times relative to the phase start. 0 = closed, 1 = open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperCommand {
    pub limb: LimbId,
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub open_from: f64,
    pub open_to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub start_s: f64,
    pub duration_s: f64,
    pub body_profile: BodyProfile,
    pub body_start_m: Vector3<f64>,
    pub body_end_m: Vector3<f64>,
    pub shift_start: ShiftState,
    pub shift_end: ShiftState,
    pub toe_start_m: [Vector3<f64>; 4],
    pub toe_end_m: [Vector3<f64>; 4],
    /// Limbs holding the surface for the whole phase.
    pub attached: [bool; 4],
    /// Attached limbs riding on the half driven by the posture actuator.
    pub moving: [bool; 4],
    pub holds: [Option<HoldId>; 4],
    pub gripper: Vec<GripperCommand>,
    pub clearance_m: f64,
}

impl Phase {
    pub fn attached_count(&self) -> usize {
        self.attached.iter().filter(|a| **a).count()
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }
}

/// Quintic time scaling with zero boundary velocity and acceleration.
pub fn quintic(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSample {
    pub t_s: f64,
    pub phase_index: usize,
    pub body_m: Vector3<f64>,
    pub shift: ShiftState,
    pub toes_m: [Vector3<f64>; 4],
    pub attached: [bool; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub name: String,
    pub configuration: Configuration,
    /// Body orientation in the world; columns are climb axis, lateral, surface normal.
    pub body_rotation: Matrix3<f64>,
    pub contact: ContactKind,
    pub preload_n: f64,
    pub phases: Vec<Phase>,
}

impl PhasePlan {
    pub fn total_duration_s(&self) -> f64 {
        self.phases.iter().map(|p| p.duration_s).sum()
    }

    pub fn climb_axis(&self) -> Vector3<f64> {
        self.body_rotation.column(0).into_owned()
    }

    pub fn surface_normal(&self) -> Vector3<f64> {
        self.body_rotation.column(2).into_owned()
    }

    /// Body displacement along the climb axis from the first to the last phase.
    pub fn body_travel_m(&self) -> f64 {
        match (self.phases.first(), self.phases.last()) {
            (Some(a), Some(b)) => (b.body_end_m - a.body_start_m).dot(&self.climb_axis()),
            _ => 0.0,
        }
    }

    /// State at normalized time `tau ∈ [0, 1]` of a phase.
    pub fn sample_phase(&self, model: &RobotModel, index: usize, tau: f64) -> PlanSample {
        let p = &self.phases[index];
        let tau = tau.clamp(0.0, 1.0);
        let s = quintic(tau);
        let (a0, a1) = (p.shift_start.actuator_angle_rad, p.shift_end.actuator_angle_rad);
        let angle = a0 + s * (a1 - a0);
        let side = if p.shift_end.lift_side != LiftSide::Neutral {
            p.shift_end.lift_side
        } else {
            p.shift_start.lift_side
        };
        let shift = ShiftState {
            lift_side: if angle == 0.0 && side == LiftSide::Neutral { LiftSide::Neutral } else { side },
            actuator_angle_rad: angle,
        };
        let body_m = match p.body_profile {
            BodyProfile::Quintic => p.body_start_m + (p.body_end_m - p.body_start_m) * s,
            BodyProfile::Linear => p.body_start_m + (p.body_end_m - p.body_start_m) * tau,
            BodyProfile::Anchored => {
                let lift = match p.kind {
                    PhaseKind::BodyLift(side) => side,
                    _ => side,
                };
                p.body_start_m
                    + self.body_rotation * body::center_displacement(&model.fourbar, lift, a0, angle)
            }
        };
        let n = self.surface_normal();
        let mut toes = p.toe_start_m;
        for i in 0..4 {
            if !p.attached[i] {
                let lift = p.clearance_m * (std::f64::consts::PI * s).sin();
                toes[i] = p.toe_start_m[i] + (p.toe_end_m[i] - p.toe_start_m[i]) * s + n * lift;
            }
        }
        PlanSample {
            t_s: p.start_s + tau * p.duration_s,
            phase_index: index,
            body_m,
            shift,
            toes_m: toes,
            attached: p.attached,
        }
    }

    /// Sample at absolute time; the last phase owns the final instant.
    pub fn sample(&self, model: &RobotModel, t: f64) -> Option<PlanSample> {
        let idx = self
            .phases
            .iter()
            .position(|p| t < p.end_s())
            .or_else(|| self.phases.len().checked_sub(1))?;
        let p = &self.phases[idx];
        let tau = if p.duration_s > 0.0 { (t - p.start_s) / p.duration_s } else { 1.0 };
        Some(self.sample_phase(model, idx, tau))
    }

    /// Joint solution of the full robot at a phase instant.
    pub fn stance_at(
        &self,
        model: &RobotModel,
        index: usize,
        tau: f64,
        map: Option<&SparseMap>,
    ) -> Result<StanceState, StanceError> {
        let smp = self.sample_phase(model, index, tau);
        let p = &self.phases[index];
        let body = RigidTransform::new(self.body_rotation, smp.body_m);
        let toes = smp.toes_m.map(|t| RigidTransform::new(self.body_rotation, t));
        let attachments = std::array::from_fn(|i| {
            if !p.attached[i] {
                return None;
            }
            let mut a = match self.contact {
                ContactKind::Grasp => Attachment::grasp(p.holds[i], self.preload_n),
                ContactKind::Friction { mu } => Attachment::foot(mu),
            };
            if let (Some(h), Some(m)) = (p.holds[i], map) {
                if let Some(hold) = m.hold(h) {
                    a.surface_slope_deg = hold.surface_slope_deg;
                }
            }
            Some(a)
        });
        StanceState::solve(model, body, smp.shift, &toes, attachments)
    }

    /// Solve IK along the whole plan at `rate_hz`; returns every joint sample.
    pub fn replay(&self, model: &RobotModel, rate_hz: f64) -> Result<Vec<(f64, [LimbConfig; 4])>, GaitError> {
        let mut out = Vec::new();
        for (i, p) in self.phases.iter().enumerate() {
            let n = ((p.duration_s * rate_hz).ceil() as usize).max(1);
            for k in 0..=n {
                let tau = k as f64 / n as f64;
                let st = self
                    .stance_at(model, i, tau, None)
                    .map_err(|e| GaitError::Kinematics { phase: i, source: e })?;
                out.push((p.start_s + tau * p.duration_s, st.joints));
            }
        }
        Ok(out)
    }

    /// Structural checks: positive durations, continuity, attachment counts.
    pub fn check_invariants(&self) -> Result<(), String> {
        let climbing = matches!(self.contact, ContactKind::Grasp);
        let mut t = self.phases.first().map(|p| p.start_s).unwrap_or(0.0);
        for (i, p) in self.phases.iter().enumerate() {
            if !(p.duration_s > 0.0) {
                return Err(format!("phase {i} has non-positive duration"));
            }
            if (p.start_s - t).abs() > 1e-9 {
                return Err(format!("phase {i} starts at {} instead of {t}", p.start_s));
            }
            t = p.end_s();
            let need = match p.kind {
                PhaseKind::SwingLimb(_) if climbing => 3,
                PhaseKind::BodyLift(_) | PhaseKind::BodyAdvance if climbing => 4,
                _ => 2,
            };
            if p.attached_count() < need {
                return Err(format!("phase {i} has {} attachments", p.attached_count()));
            }
            if let PhaseKind::BodyLift(side) = p.kind {
                for id in LimbId::ALL {
                    if !side.contains(id) && (!p.attached[id.index()] || p.moving[id.index()]) {
                        return Err(format!("phase {i}: anchor limb {id} not held"));
                    }
                }
            }
            if let PhaseKind::SwingLimb(id) = p.kind {
                if p.attached[id.index()] {
                    return Err(format!("phase {i}: swing limb {id} attached"));
                }
            }
            for k in 0..4 {
                if p.attached[k] && (p.toe_start_m[k] - p.toe_end_m[k]).norm() > 1e-12 {
                    return Err(format!("phase {i}: attached toe {k} moves"));
                }
            }
            if let Some(next) = self.phases.get(i + 1) {
                let jump_body = (next.body_start_m - p.body_end_m).norm();
                let jump_toe = (0..4)
                    .map(|k| (next.toe_start_m[k] - p.toe_end_m[k]).norm())
                    .fold(0.0, f64::max);
                let jump_shift = (next.shift_start.actuator_angle_rad - p.shift_end.actuator_angle_rad).abs();
                if jump_body > 1e-9 || jump_toe > 1e-9 || jump_shift > 1e-12 {
                    return Err(format!("discontinuity between phases {i} and {}", i + 1));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Time series at `rate_hz`: time, phase, body position, shift angle, toes, contact flags.
    pub fn write_csv<W: Write>(&self, model: &RobotModel, rate_hz: f64, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec![
            "t_s".to_string(),
            "phase".to_string(),
            "body_x_m".to_string(),
            "body_y_m".to_string(),
            "body_z_m".to_string(),
            "shift_rad".to_string(),
        ];
        for id in LimbId::ALL {
            for c in ["x", "y", "z"] {
                header.push(format!("{}_toe_{c}_m", id.short_name()));
            }
        }
        for id in LimbId::ALL {
            header.push(format!("{}_contact", id.short_name()));
        }
        wr.write_record(&header)?;
        for (i, p) in self.phases.iter().enumerate() {
            let n = ((p.duration_s * rate_hz).ceil() as usize).max(1);
            let first = if i == 0 { 0 } else { 1 };
            for k in first..=n {
                let s = self.sample_phase(model, i, k as f64 / n as f64);
                let mut rec = vec![
                    format!("{:.6}", s.t_s),
                    p.kind.label(),
                    format!("{:.9}", s.body_m.x),
                    format!("{:.9}", s.body_m.y),
                    format!("{:.9}", s.body_m.z),
                    format!("{:.9}", s.shift.actuator_angle_rad),
                ];
                for t in &s.toes_m {
                    rec.extend(t.iter().map(|v| format!("{v:.9}")));
                }
                rec.extend(s.attached.iter().map(|a| (*a as u8).to_string()));
                wr.write_record(&rec)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub settle_s: f64,
    /// Open plus close time of a regrasp; `None` uses the gripper's full stroke.
    pub gripper_stroke_s: Option<f64>,
    pub clearance_m: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            settle_s: 0.5,
            gripper_stroke_s: None,
            clearance_m: 0.03,
        }
    }
}

impl TimingModel {
    fn stroke(&self, model: &RobotModel) -> f64 {
        self.gripper_stroke_s
            .unwrap_or_else(|| gripper_timing(&model.gripper, 1.0).unwrap_or(model.gripper.full_stroke_time_s))
    }
}

/// Where the toes sit relative to the body during a wall stance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceGeometry {
    /// Body center height above the surface.
    pub body_height_m: f64,
    /// Toe distance from the body's center line.
    pub toe_lateral_m: f64,
}

impl StanceGeometry {
    pub fn for_model(model: &RobotModel) -> Self {
        match model.configuration {
            Configuration::Climbing6DoF => Self {
                body_height_m: 0.25,
                toe_lateral_m: 0.20,
            },
            Configuration::Walking3DoF => Self {
                body_height_m: crate::model::HOME_POINT.y,
                toe_lateral_m: model.fourbar.rocker_m + model.limb(LimbId::FrontLeft).shoulder_offset_m.y,
            },
        }
    }
}

fn frame_from_axis(axis: &Vector3<f64>, normal: &Vector3<f64>) -> Result<Matrix3<f64>, GaitError> {
    let n = normal.normalize();
    let x = axis - n * axis.dot(&n);
    if x.norm() < 1e-9 {
        return Err(GaitError::InvalidParameter("climb axis parallel to the surface normal".into()));
    }
    let x = x.normalize();
    Ok(Matrix3::from_columns(&[x, n.cross(&x), n]))
}

/// Shoulder position in body coordinates.
fn shoulder_body(model: &RobotModel, id: LimbId, angle: f64) -> Vector3<f64> {
    body::half_offset(&model.fourbar, id.is_left(), angle) + model.limb(id).shoulder_offset_m
}

fn joint_travel(a: &[LimbConfig; 4], b: &[LimbConfig; 4], acc: &mut [f64; 6]) {
    for k in 0..4 {
        for j in 0..6 {
            acc[j] += (a[k].q[j] - b[k].q[j]).abs();
        }
    }
}

/// Joint-limited motion time of a phase from IK at several instants.
fn motion_time(model: &RobotModel, plan: &PhasePlan, index: usize) -> Result<f64, GaitError> {
    let mut travel = [0.0; 6];
    let mut prev: Option<[LimbConfig; 4]> = None;
    for k in 0..=8 {
        let st = plan
            .stance_at(model, index, k as f64 / 8.0, None)
            .map_err(|e| GaitError::Kinematics { phase: index, source: e })?;
        if let Some(p) = prev {
            joint_travel(&p, &st.joints, &mut travel);
        }
        prev = Some(st.joints);
    }
    Ok(travel
        .iter()
        .zip(&model.joint_velocity_limits_rad_s)
        .map(|(t, v)| t / v)
        .fold(0.0, f64::max))
}

struct Builder<'a> {
    model: &'a RobotModel,
    timing: TimingModel,
    plan: PhasePlan,
    body: Vector3<f64>,
    shift: ShiftState,
    toes: [Vector3<f64>; 4],
    attached: [bool; 4],
    holds: [Option<HoldId>; 4],
    t: f64,
}

impl<'a> Builder<'a> {
    fn push(&mut self, mut phase: Phase, min_time: f64) -> Result<(), GaitError> {
        phase.start_s = self.t;
        phase.duration_s = 1.0;
        self.plan.phases.push(phase);
        let idx = self.plan.phases.len() - 1;
        let motion = motion_time(self.model, &self.plan, idx)?;
        let p = &mut self.plan.phases[idx];
        p.duration_s = motion.max(min_time) + self.timing.settle_s;
        for g in &mut p.gripper {
            if g.t_end_s > p.duration_s {
                g.t_end_s = p.duration_s;
            }
        }
        self.t += p.duration_s;
        self.body = p.body_end_m;
        self.shift = p.shift_end;
        self.toes = p.toe_end_m;
        self.holds = p.holds;
        Ok(())
    }

    fn base_phase(&self, kind: PhaseKind) -> Phase {
        Phase {
            kind,
            start_s: self.t,
            duration_s: 0.0,
            body_profile: BodyProfile::Quintic,
            body_start_m: self.body,
            body_end_m: self.body,
            shift_start: self.shift,
            shift_end: self.shift,
            toe_start_m: self.toes,
            toe_end_m: self.toes,
            attached: self.attached,
            moving: [false; 4],
            holds: self.holds,
            gripper: Vec::new(),
            clearance_m: self.timing.clearance_m,
        }
    }

    fn swing(&mut self, id: LimbId, target: Vector3<f64>, hold: Option<HoldId>) -> Result<(), GaitError> {
        let stroke = self.timing.stroke(self.model);
        let mut p = self.base_phase(PhaseKind::SwingLimb(id));
        p.attached[id.index()] = false;
        p.toe_end_m[id.index()] = target;
        p.holds[id.index()] = hold;
        p.gripper = vec![
            GripperCommand {
                limb: id,
                t_start_s: 0.0,
                t_end_s: 0.5 * stroke,
                open_from: 0.0,
                open_to: 1.0,
            },
            GripperCommand {
                limb: id,
                t_start_s: 0.5 * stroke,
                t_end_s: stroke,
                open_from: 1.0,
                open_to: 0.0,
            },
        ];
        self.push(p, stroke)
    }

    fn lift(&mut self, side: LiftSide, to_angle: f64) -> Result<(), GaitError> {
        let mut p = self.base_phase(PhaseKind::BodyLift(side));
        p.body_profile = BodyProfile::Anchored;
        let from = self.shift.actuator_angle_rad;
        p.shift_start = ShiftState {
            lift_side: side,
            actuator_angle_rad: from,
        };
        p.shift_end = ShiftState {
            lift_side: side,
            actuator_angle_rad: to_angle,
        };
        p.body_end_m = self.body
            + self.plan.body_rotation * body::center_displacement(&self.model.fourbar, side, from, to_angle);
        for id in LimbId::ALL {
            p.moving[id.index()] = side.contains(id) && p.attached[id.index()];
        }
        let sweep = self.model.fourbar.sweep_time_s(from, to_angle);
        self.push(p, sweep)
    }

    fn advance(&mut self, body_to: Vector3<f64>, shift_to: ShiftState) -> Result<(), GaitError> {
        let mut p = self.base_phase(PhaseKind::BodyAdvance);
        p.body_end_m = body_to;
        p.shift_end = shift_to;
        if shift_to.lift_side == LiftSide::Neutral {
            p.shift_end.lift_side = self.shift.lift_side;
        }
        if self.shift.lift_side == LiftSide::Neutral && shift_to.lift_side != LiftSide::Neutral {
            p.shift_start.lift_side = shift_to.lift_side;
        }
        let sweep = self
            .model
            .fourbar
            .sweep_time_s(self.shift.actuator_angle_rad, shift_to.actuator_angle_rad);
        self.push(p, sweep)
    }
}

fn require_climbing(model: &RobotModel) -> Result<(), GaitError> {
    if model.configuration != Configuration::Climbing6DoF {
        return Err(GaitError::WrongConfiguration(Configuration::Climbing6DoF));
    }
    Ok(())
}

/// One full cycle of the shifting wall gait. Each side runs front swing, body
/// lift and back swing; the body advances twice the lift stroke per cycle.
pub fn plan_shift_cycle(
    model: &RobotModel,
    climb_axis: &Vector3<f64>,
    lift_stroke_m: f64,
    timing: &TimingModel,
    geometry: &StanceGeometry,
) -> Result<PhasePlan, GaitError> {
    require_climbing(model)?;
    let fb = &model.fourbar;
    let max = fb.lift_stroke_m();
    if !(lift_stroke_m >= 0.0) || lift_stroke_m > max + 1e-12 {
        return Err(GaitError::StrokeExceeded {
            requested: lift_stroke_m,
            max,
        });
    }
    let s = lift_stroke_m.min(max);
    let phi = (s / (2.0 * fb.rocker_m)).clamp(-1.0, 1.0).asin();
    let rot = frame_from_axis(climb_axis, &Vector3::z())?;

    let start_shift = ShiftState {
        lift_side: LiftSide::Left,
        actuator_angle_rad: -phi,
    };
    let body0 = rot * Vector3::new(0.0, 0.0, geometry.body_height_m);
    let toes = LimbId::ALL.map(|id| {
        let sh = shoulder_body(model, id, -phi);
        let u = if id.is_front() { -s } else { s };
        rot * Vector3::new(sh.x + u, id.side_sign() * geometry.toe_lateral_m, 0.0)
    });
    let mut b = Builder {
        model,
        timing: *timing,
        plan: PhasePlan {
            name: "wall-shift-cycle".into(),
            configuration: model.configuration,
            body_rotation: rot,
            contact: ContactKind::Grasp,
            preload_n: model.gripper.nominal_fingertip_force_n,
            phases: Vec::new(),
        },
        body: body0,
        shift: start_shift,
        toes,
        attached: [true; 4],
        holds: [None; 4],
        t: 0.0,
    };
    let step = rot * Vector3::new(2.0 * s, 0.0, 0.0);
    for (side, front, back, to) in [
        (LiftSide::Right, LimbId::FrontRight, LimbId::BackRight, phi),
        (LiftSide::Left, LimbId::FrontLeft, LimbId::BackLeft, -phi),
    ] {
        let target = b.toes[front.index()] + step;
        b.swing(front, target, None)?;
        b.attached[front.index()] = true;
        b.lift(side, to)?;
        let target = b.toes[back.index()] + step;
        b.swing(back, target, None)?;
        b.attached[back.index()] = true;
    }
    Ok(b.plan)
}

/// Settings for the hold-to-hold planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClimbSettings {
    /// Step of the body-advance search along the climb axis.
    pub search_step_m: f64,
    pub search_range_m: f64,
    /// Manipulability floor for accepting a limb pose while planning.
    pub reach_margin: f64,
}

impl Default for ClimbSettings {
    fn default() -> Self {
        Self {
            search_step_m: 0.005,
            search_range_m: 0.40,
            reach_margin: 0.02,
        }
    }
}

fn reachable(
    model: &RobotModel,
    rot: &Matrix3<f64>,
    body: &Vector3<f64>,
    shift: &ShiftState,
    id: LimbId,
    toe: &Vector3<f64>,
    margin: f64,
) -> bool {
    if body::shoulder_frames(model, shift).is_err() {
        return false;
    }
    let pose = RigidTransform::new(*rot, *body);
    let target = pose.inverse() * RigidTransform::new(*rot, *toe);
    let shoulder = body::shoulder_frame(model, id, shift);
    match limb::limb_ik_at(model, id, &target, &shoulder, Branch::ElbowOut) {
        Ok(q) => limb::manipulability(model, id, &q) >= margin,
        Err(_) => false,
    }
}

/// Hold-to-hold climb: one limb at a time, inserting body advances and
/// posture shifts whenever the next hold is out of the current workspace.
pub fn plan_climb_sequence(
    model: &RobotModel,
    map: &SparseMap,
    start: &StanceState,
    goals: &[(LimbId, HoldId)],
    timing: &TimingModel,
    settings: &ClimbSettings,
) -> Result<PhasePlan, GaitError> {
    require_climbing(model)?;
    let rot = start.body_pose.rotation;
    let toes = LimbId::ALL.map(|id| start.toe_world(model, id).map(|t| t.translation));
    let mut toe_pos = [Vector3::zeros(); 4];
    for (i, t) in toes.into_iter().enumerate() {
        toe_pos[i] = t.map_err(|e| GaitError::Kinematics {
            phase: 0,
            source: StanceError::Limb(LimbId::ALL[i], e),
        })?;
    }
    let preload = start
        .attachments
        .iter()
        .flatten()
        .map(|a| a.grasp_normal_force_n)
        .next()
        .unwrap_or(model.gripper.nominal_fingertip_force_n);
    let mut b = Builder {
        model,
        timing: *timing,
        plan: PhasePlan {
            name: "hold-sequence".into(),
            configuration: model.configuration,
            body_rotation: rot,
            contact: ContactKind::Grasp,
            preload_n: preload,
            phases: Vec::new(),
        },
        body: start.body_pose.translation,
        shift: start.shift_state,
        toes: toe_pos,
        attached: start.attachments.map(|a| a.is_some()),
        holds: start.attachments.map(|a| a.and_then(|a| a.hold)),
        t: 0.0,
    };
    let pending: Vec<(LimbId, HoldId)> = goals
        .iter()
        .copied()
        .filter(|(id, h)| b.holds[id.index()] != Some(*h))
        .collect();
    if pending.is_empty() {
        return Ok(b.plan);
    }
    let axis = rot.column(0).into_owned();
    let fb = &model.fourbar;
    let angles = [fb.actuator_min_rad, 0.0, fb.actuator_max_rad];

    for &(id, hold_id) in &pending {
        let hold = map.hold(hold_id).ok_or(GaitError::UnknownHold(hold_id))?;
        let target = hold.center_m;
        let others = LimbId::ALL
            .iter()
            .filter(|o| **o != id && b.attached[o.index()])
            .count();
        if others < 3 {
            return Err(GaitError::NoStableOrder);
        }
        let ok_at = |body: &Vector3<f64>, shift: &ShiftState| {
            LimbId::ALL.iter().all(|o| {
                let toe = if *o == id { target } else { b.toes[o.index()] };
                let need = *o == id || b.attached[o.index()];
                !need || reachable(model, &rot, body, shift, *o, &toe, settings.reach_margin)
            })
        };
        if !ok_at(&b.body, &b.shift) {
            let n = (settings.search_range_m / settings.search_step_m).round() as i64;
            let mut best: Option<(f64, Vector3<f64>, ShiftState)> = None;
            for a in angles {
                let shift = ShiftState {
                    lift_side: match b.shift.lift_side {
                        LiftSide::Neutral if a != 0.0 => LiftSide::Right,
                        side => side,
                    },
                    actuator_angle_rad: a,
                };
                let shift_cost = fb.sweep_time_s(b.shift.actuator_angle_rad, a);
                for k in -n..=n {
                    let d = k as f64 * settings.search_step_m;
                    let cost = shift_cost + d.abs();
                    if best.as_ref().is_some_and(|(c, _, _)| *c <= cost) {
                        continue;
                    }
                    let body = b.body + axis * d;
                    if ok_at(&body, &shift) {
                        best = Some((cost, body, shift));
                    }
                }
            }
            let Some((_, body, shift)) = best else {
                return Err(GaitError::HoldUnreachable(id, hold_id));
            };
            b.advance(body, shift)?;
        }
        b.swing(id, target, Some(hold_id))?;
        b.attached[id.index()] = true;
    }

    // center the body over the new toe set
    let start_centroid = start_centroid(&b.plan);
    let end_centroid: Vector3<f64> = b.toes.iter().sum::<Vector3<f64>>() / 4.0;
    let offset = (end_centroid - start_centroid).dot(&axis);
    let first_body = b.plan.phases[0].body_start_m;
    let centered = first_body + axis * offset;
    if (centered - b.body).norm() > 1e-12 {
        let shift = b.shift;
        let ok = LimbId::ALL
            .iter()
            .all(|o| reachable(model, &rot, &centered, &shift, *o, &b.toes[o.index()], settings.reach_margin));
        if ok {
            b.advance(centered, shift)?;
        }
    }
    Ok(b.plan)
}

fn start_centroid(plan: &PhasePlan) -> Vector3<f64> {
    plan.phases[0].toe_start_m.iter().sum::<Vector3<f64>>() / 4.0
}

/// Ground trot with alternating diagonal pairs at the given speed.
pub fn plan_trot(
    model: &RobotModel,
    speed_m_s: f64,
    stride_m: f64,
    duty_factor: f64,
    timing: &TimingModel,
) -> Result<PhasePlan, GaitError> {
    if model.configuration != Configuration::Walking3DoF {
        return Err(GaitError::WrongConfiguration(Configuration::Walking3DoF));
    }
    if !(speed_m_s > 0.0) || !(stride_m > 0.0) {
        return Err(GaitError::InvalidParameter("speed and stride must be positive".into()));
    }
    if !(0.5..1.0).contains(&duty_factor) {
        return Err(GaitError::InvalidParameter(format!("duty factor {duty_factor} outside [0.5, 1)")));
    }
    let geometry = StanceGeometry::for_model(model);
    let period = stride_m / speed_m_s;
    let swing_t = (1.0 - duty_factor) * period;
    let quad_t = (duty_factor - 0.5) * period;
    let d = duty_factor;
    let rot = Matrix3::identity();
    let body0 = Vector3::new(0.0, 0.0, geometry.body_height_m);
    let toes = LimbId::ALL.map(|id| {
        let sh = shoulder_body(model, id, 0.0);
        let first = Diagonal::FlBr.limbs().contains(&id);
        let u = if first {
            -d * stride_m / 2.0
        } else {
            d * stride_m / 2.0 - (d - 0.5) * stride_m
        };
        Vector3::new(sh.x + u, id.side_sign() * geometry.toe_lateral_m, 0.0)
    });
    let mut plan = PhasePlan {
        name: "trot".into(),
        configuration: model.configuration,
        body_rotation: rot,
        contact: ContactKind::Friction { mu: 0.6 },
        preload_n: 0.0,
        phases: Vec::new(),
    };
    let mut t = 0.0;
    let mut body = body0;
    let mut cur = toes;
    let mut push = |kind: PhaseKind, dur: f64, swing: Option<Diagonal>, plan: &mut PhasePlan| {
        let body_end = body + Vector3::new(speed_m_s * dur, 0.0, 0.0);
        let mut end = cur;
        let mut attached = [true; 4];
        if let Some(dg) = swing {
            for id in dg.limbs() {
                end[id.index()] += Vector3::new(stride_m, 0.0, 0.0);
                attached[id.index()] = false;
            }
        }
        plan.phases.push(Phase {
            kind,
            start_s: t,
            duration_s: dur,
            body_profile: BodyProfile::Linear,
            body_start_m: body,
            body_end_m: body_end,
            shift_start: ShiftState::neutral(),
            shift_end: ShiftState::neutral(),
            toe_start_m: cur,
            toe_end_m: end,
            attached,
            moving: [false; 4],
            holds: [None; 4],
            gripper: Vec::new(),
            clearance_m: timing.clearance_m,
        });
        t += dur;
        body = body_end;
        cur = end;
    };
    for dg in [Diagonal::FlBr, Diagonal::FrBl] {
        push(PhaseKind::TrotPair(dg), swing_t, Some(dg), &mut plan);
        if quad_t > 0.0 {
            push(PhaseKind::BodyAdvance, quad_t, None, &mut plan);
        }
    }
    check_joint_rates(model, &plan, speed_m_s, COMMAND_RATE_HZ)?;
    Ok(plan)
}

pub const COMMAND_RATE_HZ: f64 = 150.0;

/// Finite-difference joint rates of a replay at the command rate against the limits.
pub fn check_joint_rates(model: &RobotModel, plan: &PhasePlan, speed: f64, rate_hz: f64) -> Result<(), GaitError> {
    let samples = plan.replay(model, rate_hz)?;
    let active = match model.configuration {
        Configuration::Walking3DoF => 3,
        Configuration::Climbing6DoF => 6,
    };
    let mut worst: Option<(f64, usize)> = None;
    for w in samples.windows(2) {
        let dt = w[1].0 - w[0].0;
        if dt <= 0.0 {
            continue;
        }
        for k in 0..4 {
            for j in 0..active {
                let rate = (w[1].1[k].q[j] - w[0].1[k].q[j]).abs() / dt;
                let ratio = rate / model.joint_velocity_limits_rad_s[j];
                if ratio > 1.0 && worst.is_none_or(|(r, _)| ratio > r) {
                    worst = Some((ratio, j));
                }
            }
        }
    }
    match worst {
        Some((ratio, j)) => Err(GaitError::SpeedInfeasible {
            speed,
            joint: j,
            required: ratio * model.joint_velocity_limits_rad_s[j],
            limit: model.joint_velocity_limits_rad_s[j],
        }),
        None => Ok(()),
    }
}

/// Peak finite-difference joint rate over the plan, as a fraction of its limit.
pub fn peak_rate_ratio(model: &RobotModel, plan: &PhasePlan, rate_hz: f64) -> Result<f64, GaitError> {
    let samples = plan.replay(model, rate_hz)?;
    let mut worst: f64 = 0.0;
    for w in samples.windows(2) {
        let dt = w[1].0 - w[0].0;
        if dt <= 0.0 {
            continue;
        }
        for k in 0..4 {
            for j in 0..6 {
                let rate = (w[1].1[k].q[j] - w[0].1[k].q[j]).abs() / dt;
                worst = worst.max(rate / model.joint_velocity_limits_rad_s[j]);
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitMetrics {
    pub distance_m: f64,
    pub duration_s: f64,
    pub speed_m_s: f64,
    pub speed_m_min: f64,
    pub body_length_m: f64,
    pub normalized_speed_per_s: f64,
    pub normalized_speed_per_min: f64,
    pub payload_kg: f64,
    pub robot_mass_kg: f64,
    pub normalized_payload: f64,
    /// Normalized speed (1/s) times normalized payload.
    pub normalized_workload: f64,
}

/// Metrics from raw travel, time, size and mass.
pub fn metrics_from_raw(distance_m: f64, duration_s: f64, body_length_m: f64, payload_kg: f64, robot_mass_kg: f64) -> GaitMetrics {
    let speed = if duration_s > 0.0 { distance_m / duration_s } else { 0.0 };
    metrics_from_speed(speed, body_length_m, payload_kg, robot_mass_kg, distance_m, duration_s)
}

pub fn metrics_from_speed(
    speed_m_s: f64,
    body_length_m: f64,
    payload_kg: f64,
    robot_mass_kg: f64,
    distance_m: f64,
    duration_s: f64,
) -> GaitMetrics {
    let ns = speed_m_s / body_length_m;
    let np = payload_kg / robot_mass_kg;
    GaitMetrics {
        distance_m,
        duration_s,
        speed_m_s,
        speed_m_min: speed_m_s * 60.0,
        body_length_m,
        normalized_speed_per_s: ns,
        normalized_speed_per_min: ns * 60.0,
        payload_kg,
        robot_mass_kg,
        normalized_payload: np,
        normalized_workload: ns * np,
    }
}

/// Metrics of an executed plan: body travel along the climb axis over total time.
pub fn compute_metrics(plan: &PhasePlan, model: &RobotModel, payload_kg: f64) -> GaitMetrics {
    let mass = match plan.configuration {
        Configuration::Walking3DoF => model.walking_mass_kg,
        Configuration::Climbing6DoF => model.climbing_mass_kg,
    };
    let length = match plan.configuration {
        Configuration::Walking3DoF => model.body_length_walking_m,
        Configuration::Climbing6DoF => model.body_length_climbing_m,
    };
    metrics_from_raw(plan.body_travel_m(), plan.total_duration_s(), length, payload_kg, mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_model;

    #[test]
    fn quintic_boundaries() {
        assert_eq!(quintic(0.0), 0.0);
        assert_eq!(quintic(1.0), 1.0);
        assert!((quintic(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shift_cycle_shape() {
        let m = default_model();
        let p = plan_shift_cycle(&m, &Vector3::x(), 0.075, &TimingModel::default(), &StanceGeometry::for_model(&m)).unwrap();
        let kinds: Vec<_> = p.phases.iter().map(|p| p.kind).collect();
        assert_eq!(
            kinds,
            vec![
                PhaseKind::SwingLimb(LimbId::FrontRight),
                PhaseKind::BodyLift(LiftSide::Right),
                PhaseKind::SwingLimb(LimbId::BackRight),
                PhaseKind::SwingLimb(LimbId::FrontLeft),
                PhaseKind::BodyLift(LiftSide::Left),
                PhaseKind::SwingLimb(LimbId::BackLeft),
            ]
        );
        assert!((p.body_travel_m() - 0.15).abs() < 1e-12);
        p.check_invariants().unwrap();
    }

    #[test]
    fn metric_identities() {
        let g = metrics_from_speed(0.56, 0.30, 14.7, 6.3, 0.0, 0.0);
        assert!((g.normalized_speed_per_s - 0.56 / 0.30).abs() < 1e-15);
        assert_eq!(g.normalized_workload, g.normalized_speed_per_s * g.normalized_payload);
        let z = metrics_from_raw(0.0, 10.0, 0.35, 0.0, 9.6);
        assert_eq!(z.speed_m_s, 0.0);
        assert_eq!(z.normalized_workload, 0.0);
    }
}
