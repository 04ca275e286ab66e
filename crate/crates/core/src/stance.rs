//! Instantaneous robot stance: body pose, shift, joints and attachments.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{self, BodyError, ShiftState};
use crate::limb::{self, Branch, LimbConfig, LimbError};
use crate::model::{GravityFrame, LimbId, RigidTransform, RobotModel};
use crate::sdm::{HoldId, SparseMap};
use crate::stability::{ContactSpec, StanceScenario, Surface, TorqueContext};

pub const ATTACH_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StanceError {
    #[error("limb {0}: {1}")]
    Limb(LimbId, LimbError),
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error("{0} attachments, at least {1} required")]
    TooFewAttachments(usize, usize),
    #[error("limb {limb} toe is {error_m} m from hold {hold}")]
    AttachmentMismatch { limb: LimbId, hold: HoldId, error_m: f64 },
    #[error("hold {0} is not in the map")]
    UnknownHold(HoldId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ContactKind {
    /// Gripper closed on a hold or wall.
    Grasp,
    /// Unilateral point foot on the ground.
    Friction { mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub hold: Option<HoldId>,
    pub grasp_normal_force_n: f64,
    pub surface_slope_deg: f64,
    pub kind: ContactKind,
}

impl Attachment {
    pub fn grasp(hold: Option<HoldId>, preload_n: f64) -> Self {
        Self {
            hold,
            grasp_normal_force_n: preload_n,
            surface_slope_deg: 0.0,
            kind: ContactKind::Grasp,
        }
    }

    pub fn foot(mu: f64) -> Self {
        Self {
            hold: None,
            grasp_normal_force_n: 0.0,
            surface_slope_deg: 0.0,
            kind: ContactKind::Friction { mu },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceState {
    pub body_pose: RigidTransform,
    pub shift_state: ShiftState,
    pub joints: [LimbConfig; 4],
    pub attachments: [Option<Attachment>; 4],
    pub payload_kg: f64,
    /// Payload location in the body frame.
    pub payload_point_m: Vector3<f64>,
}

/// Toe frame in the world with the toe axis along the surface normal.
pub fn toe_target(position: Vector3<f64>) -> RigidTransform {
    RigidTransform::from_translation(position)
}

impl StanceState {
    /// Solve joints so each toe reaches its world target.
    pub fn solve(
        model: &RobotModel,
        body_pose: RigidTransform,
        shift_state: ShiftState,
        toes: &[RigidTransform; 4],
        attachments: [Option<Attachment>; 4],
    ) -> Result<Self, StanceError> {
        let frames = body::shoulder_frames(model, &shift_state)?;
        let inv = body_pose.inverse();
        let mut joints = [LimbConfig::zero(); 4];
        for id in LimbId::ALL {
            let target = inv * toes[id.index()];
            joints[id.index()] = limb::limb_ik_at(model, id, &target, &frames[id.index()], Branch::ElbowOut)
                .map_err(|e| StanceError::Limb(id, e))?;
        }
        Ok(Self {
            body_pose,
            shift_state,
            joints,
            attachments,
            payload_kg: 0.0,
            payload_point_m: Vector3::zeros(),
        })
    }

    pub fn toe_world(&self, model: &RobotModel, id: LimbId) -> Result<RigidTransform, LimbError> {
        let shoulder = body::shoulder_frame(model, id, &self.shift_state);
        Ok(self.body_pose * limb::limb_fk_at(model, id, &self.joints[id.index()], &shoulder)?)
    }

    pub fn attached_count(&self) -> usize {
        self.attachments.iter().filter(|a| a.is_some()).count()
    }

    pub fn com_world(&self) -> Vector3<f64> {
        self.body_pose.translation
    }

    pub fn payload_world(&self) -> Vector3<f64> {
        self.body_pose.transform_point(&self.payload_point_m)
    }

    /// Contacts at every attached toe, with the surface normal taken from the toe axis.
    pub fn contact_specs(&self, model: &RobotModel, moving: &[bool; 4]) -> Result<Vec<ContactSpec>, StanceError> {
        let mut out = Vec::new();
        for id in LimbId::ALL {
            let Some(a) = self.attachments[id.index()] else { continue };
            let toe = self.toe_world(model, id).map_err(|e| StanceError::Limb(id, e))?;
            let surface = match a.kind {
                ContactKind::Grasp => Surface::Grasp {
                    slope_deg: a.surface_slope_deg,
                    preload_n: a.grasp_normal_force_n,
                },
                ContactKind::Friction { mu } => Surface::Friction { mu },
            };
            out.push(ContactSpec {
                position: toe.translation,
                frame: orthonormalize(&toe.rotation),
                surface,
                moving: moving[id.index()],
                limb: Some(id),
            });
        }
        Ok(out)
    }

    /// Stability query for this instant.
    pub fn scenario(
        &self,
        model: &RobotModel,
        gravity: &GravityFrame,
        moving: &[bool; 4],
        thrust_n: Option<f64>,
        torque_limited: bool,
    ) -> Result<StanceScenario, StanceError> {
        let mut contacts = self.contact_specs(model, moving)?;
        // wall contacts without a mapped hold take the wall's own slope
        for c in &mut contacts {
            let unmapped = c
                .limb
                .and_then(|id| self.attachments[id.index()])
                .is_some_and(|a| a.hold.is_none());
            if let (true, Surface::Grasp { slope_deg, .. }) = (unmapped, &mut c.surface) {
                *slope_deg = gravity.surface_slope_deg();
            }
        }
        Ok(StanceScenario {
            contacts,
            com: self.com_world(),
            robot_mass_kg: model.mass_kg(),
            payload_kg: self.payload_kg,
            payload_point: self.payload_world(),
            gravity: gravity.clone(),
            thrust_n,
            climb_axis: self.body_pose.rotation.column(0).into_owned(),
            lifted_fraction: 0.5,
            torque: Some(TorqueContext {
                body_pose: self.body_pose,
                joints: self.joints,
            }),
            torque_limited,
        })
    }

    /// Attachment count, and toe-to-hold coincidence when a map is given.
    pub fn check_invariants(
        &self,
        model: &RobotModel,
        map: Option<&SparseMap>,
        min_attached: usize,
    ) -> Result<(), StanceError> {
        let n = self.attached_count();
        if n < min_attached {
            return Err(StanceError::TooFewAttachments(n, min_attached));
        }
        if let Some(map) = map {
            for id in LimbId::ALL {
                let Some(Attachment { hold: Some(h), .. }) = self.attachments[id.index()] else { continue };
                let hold = map.hold(h).ok_or(StanceError::UnknownHold(h))?;
                let toe = self.toe_world(model, id).map_err(|e| StanceError::Limb(id, e))?;
                let err = (toe.translation - hold.center_m).norm();
                if err > ATTACH_TOLERANCE_M {
                    return Err(StanceError::AttachmentMismatch { limb: id, hold: h, error_m: err });
                }
            }
        }
        Ok(())
    }
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let m = u * vt;
    if m.determinant() < 0.0 {
        let mut u = u;
        let flipped = -u.column(2);
        u.set_column(2, &flipped);
        u * vt
    } else {
        m
    }
}
