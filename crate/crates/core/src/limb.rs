//! Kinematics of the parallel-serial limb: shoulder roll, co-axial five-bar
//! in the leg plane, and a three-axis spherical wrist.
//!
//! The leg plane uses coordinates `(u, v)` with `u` along the body x axis and
//! `v` pointing toward the surface. Motor angles are absolute, measured from
//! `+u` toward `+v`.

use nalgebra::{Matrix2, Matrix3, Matrix6, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{self, ShiftState};
use crate::model::{rot_x, rot_y, rot_z, Configuration, LimbId, RigidTransform, RobotModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LimbError {
    #[error("five-bar closure infeasible: distal circles do not intersect")]
    ClosureInfeasible,
    #[error("target outside the reachable workspace")]
    Unreachable,
    #[error("target is near a singular configuration (manipulability {0:.3e})")]
    NearSingular(f64),
    #[error("wrist gimbal lock")]
    WristGimbalLock,
    #[error("joint {joint} value {value:.4} rad outside its limits")]
    JointLimit { joint: usize, value: f64 },
    #[error("invalid five-bar parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveBarParams {
    pub l_front_upper: f64,
    pub l_front_lower: f64,
    pub l_back_upper: f64,
    pub l_back_lower: f64,
    /// Distance of the back motor axis behind the front one (0 = co-axial).
    pub motor_axis_offset: f64,
}

impl Default for FiveBarParams {
    fn default() -> Self {
        // back chain uniformly 5 % shorter
        Self {
            l_front_upper: 0.12,
            l_front_lower: 0.20,
            l_back_upper: 0.114,
            l_back_lower: 0.19,
            motor_axis_offset: 0.0,
        }
    }
}

impl FiveBarParams {
    /// Equal front and back chains.
    pub fn symmetric(upper: f64, lower: f64) -> Self {
        Self {
            l_front_upper: upper,
            l_front_lower: lower,
            l_back_upper: upper,
            l_back_lower: lower,
            motor_axis_offset: 0.0,
        }
    }

    /// Back chain scaled by `1 − shrink` relative to the front chain.
    pub fn with_back_shrink(upper: f64, lower: f64, shrink: f64) -> Self {
        Self {
            l_front_upper: upper,
            l_front_lower: lower,
            l_back_upper: upper * (1.0 - shrink),
            l_back_lower: lower * (1.0 - shrink),
            motor_axis_offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), LimbError> {
        let l = [
            self.l_front_upper,
            self.l_front_lower,
            self.l_back_upper,
            self.l_back_lower,
        ];
        if l.iter().any(|v| !(*v > 0.0)) {
            return Err(LimbError::InvalidParams("link lengths must be positive".into()));
        }
        if !(self.motor_axis_offset >= 0.0) {
            return Err(LimbError::InvalidParams("motor axis offset must be >= 0".into()));
        }
        Ok(())
    }

    pub fn is_asymmetric(&self) -> bool {
        self.l_back_upper < self.l_front_upper
    }

    pub fn back_base(&self) -> Vector2<f64> {
        Vector2::new(-self.motor_axis_offset, 0.0)
    }

    pub fn characteristic_length(&self) -> f64 {
        self.l_front_upper + self.l_front_lower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WristParams {
    /// Wrist axes, applied in order z, y, x, all through the wrist center.
    pub axis_order: String,
    /// Distance from the wrist center to the toe along the toe −z axis.
    pub toe_offset_m: f64,
}

impl Default for WristParams {
    fn default() -> Self {
        Self {
            axis_order: "ZYX".into(),
            toe_offset_m: 0.10,
        }
    }
}

/// Assembly mode of the five-bar. `ElbowOut` spreads the two elbows apart
/// with the end point on the far side of the elbow line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Branch {
    #[default]
    ElbowOut,
    ElbowIn,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::ElbowOut => -1.0,
            Branch::ElbowIn => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimbConfig {
    pub q: [f64; 6],
    pub branch: Branch,
}

impl LimbConfig {
    pub fn zero() -> Self {
        Self {
            q: [0.0; 6],
            branch: Branch::ElbowOut,
        }
    }

    pub fn new(q: [f64; 6]) -> Self {
        Self {
            q,
            branch: Branch::ElbowOut,
        }
    }
}

/// Elbow and end-point positions of a solved five-bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiveBarState {
    pub elbow_front: Vector2<f64>,
    pub elbow_back: Vector2<f64>,
    pub end: Vector2<f64>,
    pub theta_front: f64,
    pub theta_back: f64,
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn wrap(a: f64) -> f64 {
    let w = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w + std::f64::consts::TAU
    } else {
        w
    }
}

pub fn fivebar_state(
    p: &FiveBarParams,
    theta_front: f64,
    theta_back: f64,
    branch: Branch,
) -> Result<FiveBarState, LimbError> {
    let ef = p.l_front_upper * Vector2::new(theta_front.cos(), theta_front.sin());
    let eb = p.back_base() + p.l_back_upper * Vector2::new(theta_back.cos(), theta_back.sin());
    let d = eb - ef;
    let dist = d.norm();
    let (a2, b2) = (p.l_front_lower, p.l_back_lower);
    if dist < 1e-12 {
        return Err(LimbError::ClosureInfeasible);
    }
    let x = (a2 * a2 - b2 * b2 + dist * dist) / (2.0 * dist);
    let h2 = a2 * a2 - x * x;
    if h2 < -1e-14 {
        return Err(LimbError::ClosureInfeasible);
    }
    let h = h2.max(0.0).sqrt();
    let dh = d / dist;
    let perp = Vector2::new(-dh.y, dh.x);
    let end = ef + x * dh + branch.sign() * h * perp;
    Ok(FiveBarState {
        elbow_front: ef,
        elbow_back: eb,
        end,
        theta_front,
        theta_back,
    })
}

/// Planar end point for absolute motor angles.
pub fn fivebar_fk(
    p: &FiveBarParams,
    theta_front: f64,
    theta_back: f64,
    branch: Branch,
) -> Result<Vector2<f64>, LimbError> {
    fivebar_state(p, theta_front, theta_back, branch).map(|s| s.end)
}

fn chain_ik(l1: f64, l2: f64, target: &Vector2<f64>) -> Result<(f64, f64), LimbError> {
    let r = target.norm();
    if r < 1e-12 {
        return Err(LimbError::Unreachable);
    }
    let c = (l1 * l1 + r * r - l2 * l2) / (2.0 * l1 * r);
    if c.abs() > 1.0 + 1e-12 {
        return Err(LimbError::Unreachable);
    }
    Ok((target.y.atan2(target.x), c.clamp(-1.0, 1.0).acos()))
}

/// Absolute motor angles placing the end point at `target`.
pub fn fivebar_ik(
    p: &FiveBarParams,
    target: &Vector2<f64>,
    branch: Branch,
) -> Result<(f64, f64), LimbError> {
    let (phi_f, beta_f) = chain_ik(p.l_front_upper, p.l_front_lower, target)?;
    let (phi_b, beta_b) = chain_ik(p.l_back_upper, p.l_back_lower, &(target - p.back_base()))?;
    Ok(match branch {
        Branch::ElbowOut => (phi_f - beta_f, phi_b + beta_b),
        Branch::ElbowIn => (phi_f + beta_f, phi_b - beta_b),
    })
}

/// `|sin γ|` between the two distal links; zero on the parallel singular set.
pub fn fivebar_parallel_index(p: &FiveBarParams, s: &FiveBarState) -> f64 {
    let nf = (s.end - s.elbow_front) / p.l_front_lower;
    let nb = (s.end - s.elbow_back) / p.l_back_lower;
    cross2(&nf, &nb).abs()
}

/// End-point velocity per unit motor velocity: `A ṗ = B θ̇`.
fn fivebar_velocity(p: &FiveBarParams, s: &FiveBarState) -> Option<Matrix2<f64>> {
    let nf = s.end - s.elbow_front;
    let nb = s.end - s.elbow_back;
    let tf = p.l_front_upper * Vector2::new(-s.theta_front.sin(), s.theta_front.cos());
    let tb = p.l_back_upper * Vector2::new(-s.theta_back.sin(), s.theta_back.cos());
    let a = Matrix2::new(nf.x, nf.y, nb.x, nb.y);
    let b = Matrix2::new(nf.dot(&tf), 0.0, 0.0, nb.dot(&tb));
    let scale = p.l_front_lower * p.l_back_lower;
    if a.determinant().abs() < 1e-12 * scale {
        return None;
    }
    a.try_inverse().map(|ai| ai * b)
}

/// All intermediate quantities of the limb chain in the shoulder frame.
#[derive(Debug, Clone, Copy)]
pub struct LimbChain {
    pub alpha: f64,
    pub fivebar: FiveBarState,
    pub wrist_center: Vector3<f64>,
    pub wrist_base: Matrix3<f64>,
    pub toe: RigidTransform,
    pub psi_front: f64,
}

fn home_psi(model: &RobotModel, id: LimbId) -> f64 {
    let lp = model.limb(id);
    let off = lp.joint_offsets_rad;
    match fivebar_state(&lp.fivebar, off[1], off[2], lp.branch) {
        Ok(s) => {
            let n = s.end - s.elbow_front;
            n.y.atan2(n.x)
        }
        Err(_) => 0.0,
    }
}

fn leg_point(alpha: f64, p: &Vector2<f64>) -> Vector3<f64> {
    rot_x(alpha) * Vector3::new(p.x, 0.0, -p.y)
}

pub fn limb_chain(model: &RobotModel, id: LimbId, q: &LimbConfig) -> Result<LimbChain, LimbError> {
    let lp = model.limb(id);
    let off = lp.joint_offsets_rad;
    let sigma = id.side_sign();
    let alpha = sigma * (q.q[0] + off[0]);
    let fb = fivebar_state(&lp.fivebar, q.q[1] + off[1], q.q[2] + off[2], q.branch)?;
    let w = leg_point(alpha, &fb.end);
    let n = fb.end - fb.elbow_front;
    let psi = n.y.atan2(n.x);
    let (base, toe) = match model.configuration {
        Configuration::Walking3DoF => (Matrix3::identity(), RigidTransform::from_translation(w)),
        Configuration::Climbing6DoF => {
            let base = rot_x(alpha) * rot_y(psi - home_psi(model, id));
            let rw = rot_z(q.q[3] + off[3]) * rot_y(q.q[4] + off[4]) * rot_x(q.q[5] + off[5]);
            let r = base * rw;
            let p = w + r * Vector3::new(0.0, 0.0, -lp.wrist.toe_offset_m);
            (base, RigidTransform::new(r, p))
        }
    };
    Ok(LimbChain {
        alpha,
        fivebar: fb,
        wrist_center: w,
        wrist_base: base,
        toe,
        psi_front: psi,
    })
}

/// Toe frame relative to the shoulder frame.
pub fn limb_fk_local(model: &RobotModel, id: LimbId, q: &LimbConfig) -> Result<RigidTransform, LimbError> {
    limb_chain(model, id, q).map(|c| c.toe)
}

/// Shoulder frame in the body frame at the neutral body shift.
pub fn neutral_shoulder(model: &RobotModel, id: LimbId) -> RigidTransform {
    body::shoulder_frame(model, id, &ShiftState::neutral())
}

/// Toe frame in the body frame (neutral body shift).
pub fn limb_fk(model: &RobotModel, id: LimbId, q: &LimbConfig) -> Result<RigidTransform, LimbError> {
    limb_fk_at(model, id, q, &neutral_shoulder(model, id))
}

/// Toe frame for an explicit shoulder frame.
pub fn limb_fk_at(
    model: &RobotModel,
    id: LimbId,
    q: &LimbConfig,
    shoulder: &RigidTransform,
) -> Result<RigidTransform, LimbError> {
    Ok(*shoulder * limb_fk_local(model, id, q)?)
}

/// Geometric Jacobian of the toe in the shoulder frame: rows are linear then
/// angular velocity, columns q1..q6. Walking configuration returns zero
/// angular rows and wrist columns.
pub fn jacobian(model: &RobotModel, id: LimbId, q: &LimbConfig) -> Result<Matrix6<f64>, LimbError> {
    let lp = model.limb(id);
    let ch = limb_chain(model, id, q)?;
    let fb = &ch.fivebar;
    let sigma = id.side_sign();
    let rx = rot_x(ch.alpha);
    let toe = ch.toe.translation;
    let mut j = Matrix6::zeros();

    let ax = Vector3::x() * sigma;
    j.fixed_view_mut::<3, 1>(0, 0).copy_from(&ax.cross(&toe));
    j.fixed_view_mut::<3, 1>(3, 0).copy_from(&ax);

    let dp = fivebar_velocity(&lp.fivebar, fb).ok_or(LimbError::NearSingular(f64::INFINITY))?;
    let nf = fb.end - fb.elbow_front;
    let a2sq = lp.fivebar.l_front_lower.powi(2);
    let def = lp.fivebar.l_front_upper * Vector2::new(-fb.theta_front.sin(), fb.theta_front.cos());
    let climbing = model.configuration == Configuration::Climbing6DoF;
    for k in 0..2 {
        let dpk = Vector2::new(dp[(0, k)], dp[(1, k)]);
        let dw = rx * Vector3::new(dpk.x, 0.0, -dpk.y);
        let mut lin = dw;
        if climbing {
            let dn = if k == 0 { dpk - def } else { dpk };
            let dpsi = cross2(&nf, &dn) / a2sq;
            let omega = dpsi * (rx * Vector3::y());
            lin += omega.cross(&(toe - ch.wrist_center));
            j.fixed_view_mut::<3, 1>(3, k + 1).copy_from(&omega);
        }
        j.fixed_view_mut::<3, 1>(0, k + 1).copy_from(&lin);
    }

    if climbing {
        let off = lp.joint_offsets_rad;
        let rz = rot_z(q.q[3] + off[3]);
        let ry = rot_y(q.q[4] + off[4]);
        let axes = [
            ch.wrist_base * Vector3::z(),
            ch.wrist_base * rz * Vector3::y(),
            ch.wrist_base * rz * ry * Vector3::x(),
        ];
        let arm = toe - ch.wrist_center;
        for (i, a) in axes.iter().enumerate() {
            j.fixed_view_mut::<3, 1>(0, 3 + i).copy_from(&a.cross(&arm));
            j.fixed_view_mut::<3, 1>(3, 3 + i).copy_from(a);
        }
    }
    Ok(j)
}

/// `√det(J Jᵀ)` with translational rows scaled by the characteristic limb
/// length. Uses the 3×3 positional block in the walking configuration.
/// Configurations where the closure cannot be solved report 0.
pub fn manipulability(model: &RobotModel, id: LimbId, q: &LimbConfig) -> f64 {
    let l = model.limb(id).fivebar.characteristic_length();
    let j = match jacobian(model, id, q) {
        Ok(j) => j,
        Err(_) => return 0.0,
    };
    match model.configuration {
        Configuration::Walking3DoF => (j.fixed_view::<3, 3>(0, 0) / l).determinant().abs(),
        Configuration::Climbing6DoF => {
            let mut js = j;
            for r in 0..3 {
                for c in 0..6 {
                    js[(r, c)] /= l;
                }
            }
            js.determinant().abs()
        }
    }
}

/// Distance of the five-bar from its parallel singular set, in `[0, 1]`.
pub fn parallel_singularity_index(model: &RobotModel, id: LimbId, q: &LimbConfig) -> f64 {
    let lp = model.limb(id);
    let off = lp.joint_offsets_rad;
    match fivebar_state(&lp.fivebar, q.q[1] + off[1], q.q[2] + off[2], q.branch) {
        Ok(s) => fivebar_parallel_index(&lp.fivebar, &s),
        Err(_) => 0.0,
    }
}

/// Parallel singularity index for a planar end point, solved through IK.
pub fn planar_singularity_index(p: &FiveBarParams, target: &Vector2<f64>, branch: Branch) -> Option<f64> {
    let (tf, tb) = fivebar_ik(p, target, branch).ok()?;
    let ef = p.l_front_upper * Vector2::new(tf.cos(), tf.sin());
    let eb = p.back_base() + p.l_back_upper * Vector2::new(tb.cos(), tb.sin());
    let nf = (target - ef) / p.l_front_lower;
    let nb = (target - eb) / p.l_back_lower;
    Some(cross2(&nf, &nb).abs())
}

/// Solve joints for a toe frame given in the body frame (neutral body shift).
pub fn limb_ik(
    model: &RobotModel,
    id: LimbId,
    target: &RigidTransform,
    branch: Branch,
) -> Result<LimbConfig, LimbError> {
    limb_ik_at(model, id, target, &neutral_shoulder(model, id), branch)
}

/// Solve joints for a toe frame given relative to an explicit shoulder frame's parent.
pub fn limb_ik_at(
    model: &RobotModel,
    id: LimbId,
    target: &RigidTransform,
    shoulder: &RigidTransform,
    branch: Branch,
) -> Result<LimbConfig, LimbError> {
    let local = shoulder.inverse() * *target;
    let q = limb_ik_local(model, id, &local, branch)?;
    let m = manipulability(model, id, &q);
    if m < model.singularity_threshold {
        return Err(LimbError::NearSingular(m));
    }
    Ok(q)
}

fn limb_ik_local(
    model: &RobotModel,
    id: LimbId,
    local: &RigidTransform,
    branch: Branch,
) -> Result<LimbConfig, LimbError> {
    let lp = model.limb(id);
    let off = lp.joint_offsets_rad;
    let climbing = model.configuration == Configuration::Climbing6DoF;
    let w = if climbing {
        local.translation + lp.wrist.toe_offset_m * (local.rotation * Vector3::z())
    } else {
        local.translation
    };
    let v = w.y.hypot(w.z);
    if v < 1e-9 {
        return Err(LimbError::Unreachable);
    }
    let alpha = w.y.atan2(-w.z);
    let sigma = id.side_sign();
    let planar = Vector2::new(w.x, v);
    let (tf, tb) = fivebar_ik(&lp.fivebar, &planar, branch)?;
    let state = fivebar_state(&lp.fivebar, tf, tb, branch).map_err(|_| LimbError::NearSingular(0.0))?;
    if (state.elbow_front - state.elbow_back).norm() < 1e-9 {
        return Err(LimbError::NearSingular(0.0));
    }
    let mut q = [
        wrap(sigma * alpha - off[0]),
        wrap(tf - off[1]),
        wrap(tb - off[2]),
        0.0,
        0.0,
        0.0,
    ];
    if climbing {
        let n = planar - state.elbow_front;
        let psi = n.y.atan2(n.x);
        let base = rot_x(alpha) * rot_y(psi - home_psi(model, id));
        let rw = base.transpose() * local.rotation;
        let c5 = rw[(0, 0)].hypot(rw[(1, 0)]);
        if c5 < 1e-3 {
            return Err(LimbError::WristGimbalLock);
        }
        let q5 = (-rw[(2, 0)]).atan2(c5);
        let q4 = rw[(1, 0)].atan2(rw[(0, 0)]);
        let q6 = rw[(2, 1)].atan2(rw[(2, 2)]);
        q[3] = wrap(q4 - off[3]);
        q[4] = wrap(q5 - off[4]);
        q[5] = wrap(q6 - off[5]);
    }
    let n_joints = if climbing { 6 } else { 3 };
    for (i, value) in q.iter().enumerate().take(n_joints) {
        if *value < lp.joint_lower_rad[i] || *value > lp.joint_upper_rad[i] {
            return Err(LimbError::JointLimit { joint: i, value: *value });
        }
    }
    Ok(LimbConfig { q, branch })
}

/// Joint torques balancing a toe force `f` (shoulder-frame axes): `τ = Jᵀ f`.
pub fn joint_torques(
    model: &RobotModel,
    id: LimbId,
    q: &LimbConfig,
    force: &Vector3<f64>,
) -> Result<[f64; 6], LimbError> {
    let j = jacobian(model, id, q)?;
    let jt = j.fixed_view::<3, 6>(0, 0).transpose() * force;
    let mut out = [0.0; 6];
    for (i, o) in out.iter_mut().enumerate() {
        *o = jt[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_model, rotation_log};
    use std::f64::consts::PI;

    // Brute-force chain composition: walk both chains link by link.
    fn chain_oracle(p: &FiveBarParams, tf: f64, tb: f64, branch: Branch) -> Option<Vector2<f64>> {
        let ef = Vector2::new(p.l_front_upper * tf.cos(), p.l_front_upper * tf.sin());
        let eb = p.back_base() + Vector2::new(p.l_back_upper * tb.cos(), p.l_back_upper * tb.sin());
        // sweep the front distal angle and keep points matching the back distal length
        let mut best: Option<(f64, Vector2<f64>)> = None;
        let n = 200_000;
        for i in 0..n {
            let psi = -PI + 2.0 * PI * (i as f64) / (n as f64);
            let cand = ef + p.l_front_lower * Vector2::new(psi.cos(), psi.sin());
            let err = ((cand - eb).norm() - p.l_back_lower).abs();
            let side = cross2(&(eb - ef), &(cand - ef));
            if side * branch.sign() <= 0.0 {
                continue;
            }
            if best.map(|b| err < b.0).unwrap_or(true) {
                best = Some((err, cand));
            }
        }
        best.filter(|b| b.0 < 1e-4).map(|b| b.1)
    }

    #[test]
    fn closure_residual_is_tiny() {
        let p = FiveBarParams::default();
        let (tf0, tb0) = fivebar_ik(&p, &Vector2::new(0.0, 0.2), Branch::ElbowOut).unwrap();
        for i in 0..50 {
            let d = -0.4 + 0.016 * i as f64;
            let s = fivebar_state(&p, tf0 + d, tb0 - 0.5 * d, Branch::ElbowOut).unwrap();
            let rf = ((s.end - s.elbow_front).norm() - p.l_front_lower).abs();
            let rb = ((s.end - s.elbow_back).norm() - p.l_back_lower).abs();
            assert!(rf < 1e-10 && rb < 1e-10);
        }
    }

    #[test]
    fn mirrored_symmetric_lies_on_axis() {
        let p = FiveBarParams::symmetric(0.12, 0.2);
        for tf in [0.2, 0.5, 0.9, 1.2] {
            let e = fivebar_fk(&p, tf, PI - tf, Branch::ElbowOut).unwrap();
            assert!(e.x.abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_elbows_have_no_unique_closure() {
        let p = FiveBarParams::symmetric(0.12, 0.2);
        assert_eq!(
            fivebar_fk(&p, 0.7, 0.7, Branch::ElbowOut),
            Err(LimbError::ClosureInfeasible)
        );
    }

    #[test]
    fn equal_motor_angles_match_chain_oracle() {
        // equal motor angles keep the upper links parallel
        let p = FiveBarParams {
            l_front_upper: 0.12,
            l_front_lower: 0.20,
            l_back_upper: 0.10,
            l_back_lower: 0.19,
            motor_axis_offset: 0.0,
        };
        for t in [0.4, 1.0, 1.6] {
            let e = fivebar_fk(&p, t, t, Branch::ElbowOut).unwrap();
            let o = chain_oracle(&p, t, t, Branch::ElbowOut).unwrap();
            assert!((e - o).norm() < 2e-4, "{e:?} {o:?}");
        }
    }

    #[test]
    fn extension_limit() {
        // back chain longer so the front chain can straighten
        let p = FiveBarParams {
            l_front_upper: 0.12,
            l_front_lower: 0.20,
            l_back_upper: 0.12,
            l_back_lower: 0.26,
            motor_axis_offset: 0.0,
        };
        let reach = p.l_front_upper + p.l_front_lower;
        let dir = 1.1f64;
        let target = (reach * (1.0 - 1e-13)) * Vector2::new(dir.cos(), dir.sin());
        let (tf, tb) = fivebar_ik(&p, &target, Branch::ElbowOut).unwrap();
        let e = fivebar_fk(&p, tf, tb, Branch::ElbowOut).unwrap();
        assert!((e.norm() - reach).abs() < 1e-6);
    }

    #[test]
    fn home_pose_golden() {
        let m = default_model();
        let t = limb_fk(&m, LimbId::FrontLeft, &LimbConfig::zero()).unwrap();
        assert!((t.translation - Vector3::new(0.175, 0.15, -0.30)).norm() < 1e-12);
        assert!((t.rotation - Matrix3::identity()).norm() < 1e-12);
        let t = limb_fk(&m, LimbId::BackRight, &LimbConfig::zero()).unwrap();
        assert!((t.translation - Vector3::new(-0.175, -0.15, -0.30)).norm() < 1e-12);
    }

    #[test]
    fn shoulder_rotation_equivariance() {
        let m = default_model();
        for id in LimbId::ALL {
            let q = LimbConfig::new([0.1, 0.2, -0.1, 0.3, -0.2, 0.4]);
            let d = 0.25;
            let mut q2 = q;
            q2.q[0] += d;
            let a = limb_fk_local(&m, id, &q).unwrap();
            let b = limb_fk_local(&m, id, &q2).unwrap();
            let r = rot_x(id.side_sign() * d);
            assert!((r * a.translation - b.translation).norm() < 1e-12);
            assert!((r * a.rotation - b.rotation).norm() < 1e-12);
        }
    }

    #[test]
    fn walking_uses_point_foot() {
        let m = default_model().with_configuration(Configuration::Walking3DoF);
        let q = LimbConfig::new([0.1, 0.2, -0.1, 0.3, -0.2, 0.4]);
        let t = limb_fk(&m, LimbId::FrontRight, &q).unwrap();
        assert_eq!(t.rotation, Matrix3::identity());
        let mut q2 = q;
        q2.q[3] = -1.0;
        assert_eq!(limb_fk(&m, LimbId::FrontRight, &q2).unwrap(), t);
    }

    #[test]
    fn ik_recovers_fk() {
        let m = default_model();
        let q = LimbConfig::new([0.3, 0.25, -0.15, 0.6, -0.4, 1.1]);
        for id in LimbId::ALL {
            let t = limb_fk(&m, id, &q).unwrap();
            let back = limb_ik(&m, id, &t, Branch::ElbowOut).unwrap();
            for i in 0..6 {
                assert!((back.q[i] - q.q[i]).abs() < 1e-9, "{id} {i}");
            }
        }
    }

    #[test]
    fn unreachable_target() {
        let m = default_model();
        let t = RigidTransform::from_translation(Vector3::new(0.175, 0.15, -0.75));
        assert_eq!(
            limb_ik(&m, LimbId::FrontLeft, &t, Branch::ElbowOut),
            Err(LimbError::Unreachable)
        );
    }

    #[test]
    fn coincident_elbow_target_is_near_singular() {
        let m = default_model()
            .with_fivebar(FiveBarParams::symmetric(0.12, 0.20))
            .unwrap()
            .with_configuration(Configuration::Walking3DoF);
        let sh = neutral_shoulder(&m, LimbId::FrontLeft);
        let t = RigidTransform::from_translation(sh.translation + Vector3::new(0.0, 0.0, -0.32));
        assert!(matches!(
            limb_ik(&m, LimbId::FrontLeft, &t, Branch::ElbowOut),
            Err(LimbError::NearSingular(_))
        ));
    }

    #[test]
    fn gimbal_lock_is_reported() {
        let m = default_model();
        let q = LimbConfig::new([0.0, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0]);
        let t = limb_fk(&m, LimbId::FrontLeft, &q).unwrap();
        assert_eq!(
            limb_ik(&m, LimbId::FrontLeft, &t, Branch::ElbowOut),
            Err(LimbError::WristGimbalLock)
        );
    }

    fn fd_jacobian(m: &RobotModel, id: LimbId, q: &LimbConfig) -> Matrix6<f64> {
        let h = 1e-6;
        let mut j = Matrix6::zeros();
        for k in 0..6 {
            let mut qp = *q;
            let mut qm = *q;
            qp.q[k] += h;
            qm.q[k] -= h;
            let tp = limb_fk_local(m, id, &qp).unwrap();
            let tm = limb_fk_local(m, id, &qm).unwrap();
            let dv = (tp.translation - tm.translation) / (2.0 * h);
            let dw = rotation_log(&(tp.rotation * tm.rotation.transpose())) / (2.0 * h);
            j.fixed_view_mut::<3, 1>(0, k).copy_from(&dv);
            j.fixed_view_mut::<3, 1>(3, k).copy_from(&dw);
        }
        j
    }

    #[test]
    fn jacobian_matches_finite_differences_at_home() {
        let m = default_model();
        for id in LimbId::ALL {
            let q = LimbConfig::new([0.2, 0.1, -0.2, 0.4, 0.3, -0.5]);
            let err = (jacobian(&m, id, &q).unwrap() - fd_jacobian(&m, id, &q)).amax();
            assert!(err < 1e-5, "{id} {err}\n{}\n{}", jacobian(&m, id, &q).unwrap(), fd_jacobian(&m, id, &q));
        }
    }

    #[test]
    fn back_chain_extension_is_singular() {
        let m = default_model().with_configuration(Configuration::Walking3DoF);
        let lp = m.limb(LimbId::FrontLeft);
        let p = &lp.fivebar;
        let phi = 1.5f64;
        let target = (p.l_back_upper + p.l_back_lower) * Vector2::new(phi.cos(), phi.sin());
        let (tf, _) = chain_ik(p.l_front_upper, p.l_front_lower, &target).unwrap();
        let tf = tf - chain_ik(p.l_front_upper, p.l_front_lower, &target).unwrap().1;
        let q = LimbConfig::new([0.0, tf - lp.joint_offsets_rad[1], phi - lp.joint_offsets_rad[2], 0.0, 0.0, 0.0]);
        assert!(manipulability(&m, LimbId::FrontLeft, &q) < 1e-6);
    }

    #[test]
    fn home_is_well_conditioned() {
        let m = default_model();
        let w = manipulability(&m, LimbId::FrontLeft, &LimbConfig::zero());
        assert!(w > 0.01, "{w}");
    }
}
