//! Quasi-static contact force distribution under grasp bounds.
//!
//! Forces act on the robot at each contact. A grasp contact may pull toward
//! the surface up to its withstanding bound, push up to the structural limit,
//! and carry tangential load up to the spine shear capacity (inscribed
//! octagon). A friction contact only pushes and stays inside an inscribed
//! octagonal friction pyramid. The distribution minimizes the largest contact
//! force norm, then the sum of squared norms among the minimizers.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{self, LiftSide, ShiftState};
use crate::convex::{self, BarrierSettings, ConicProgram, Constraint, Objective};
use crate::gripper::{max_withstanding_force, spine_shear_capacity};
use crate::gait::{PhaseKind, PhasePlan};
use crate::limb::{self, LimbConfig};
use crate::sdm::SparseMap;
use crate::stance::{ContactKind, StanceError};
use crate::model::{GravityFrame, LimbId, RigidTransform, RobotModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("no admissible contact force distribution")]
    Infeasible,
    #[error("at least two contacts are required, got {0}")]
    TooFewContacts(usize),
    #[error("baseline stance is infeasible without payload")]
    BaselineInfeasible,
    #[error("contact {0} has an invalid frame")]
    InvalidFrame(usize),
    #[error("solver failure: {0}")]
    Solver(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Surface {
    Grasp { slope_deg: f64, preload_n: f64 },
    Friction { mu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSpec {
    pub position: Vector3<f64>,
    /// Columns: tangent 1, tangent 2, outward normal.
    pub frame: Matrix3<f64>,
    pub surface: Surface,
    /// Contact of a limb that is driving its body half.
    pub moving: bool,
    pub limb: Option<LimbId>,
}

impl ContactSpec {
    pub fn on_wall(position: Vector3<f64>, surface: Surface) -> Self {
        Self {
            position,
            frame: Matrix3::identity(),
            surface,
            moving: false,
            limb: None,
        }
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.frame.column(2).into_owned()
    }

    pub fn frame_is_orthonormal(&self) -> bool {
        (self.frame.transpose() * self.frame - Matrix3::identity()).norm() < 1e-9
            && (self.frame.determinant() - 1.0).abs() < 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Self {
            force: Vector3::zeros(),
            torque: Vector3::zeros(),
        }
    }

    /// Wrench about the origin of a force applied at a point.
    pub fn point_force(point: &Vector3<f64>, force: &Vector3<f64>) -> Self {
        Self {
            force: *force,
            torque: point.cross(force),
        }
    }

    pub fn add(&self, other: &Wrench) -> Wrench {
        Wrench {
            force: self.force + other.force,
            torque: self.torque + other.torque,
        }
    }
}

/// Extra balance on the lifted body half: its contacts, its share of the
/// load and the posture actuator force `t` along `axis` sum to zero, with
/// `|t| ≤ thrust_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrustLoad {
    pub axis: Vector3<f64>,
    pub thrust_n: f64,
    /// Gravity force acting on the lifted half.
    pub lifted_load: Vector3<f64>,
}

/// Admissible-set parameters of one contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactLimits {
    pub pull_cap_n: f64,
    pub shear_cap_n: f64,
    pub compression_cap_n: f64,
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSolution {
    pub forces: Vec<Vector3<f64>>,
    pub residual_force: Vector3<f64>,
    pub residual_torque: Vector3<f64>,
    /// Largest contact force norm.
    pub objective: f64,
    pub sum_squares: f64,
    /// Smallest constraint slack of the returned forces (N).
    pub min_slack: f64,
    /// Largest uniform slack any admissible distribution attains (N), capped at the solver scale.
    pub margin_n: f64,
    /// Posture actuator force on the lifted half, when a lift is in progress.
    pub actuator_force_n: Option<f64>,
}

const OCTAGON: usize = 8;

pub fn contact_limits(model: &RobotModel, c: &ContactSpec) -> ContactLimits {
    let derate = if c.moving { model.moving_contact_derate } else { 1.0 };
    match c.surface {
        Surface::Grasp { slope_deg, preload_n } => {
            let shear = model.cells_per_gripper as f64 * spine_shear_capacity(&model.spine, preload_n);
            let bound = max_withstanding_force(&model.grasp_bound, slope_deg.clamp(
                model.grasp_bound.min_slope_deg,
                model.grasp_bound.max_slope_deg,
            ))
            .unwrap_or(0.0);
            ContactLimits {
                pull_cap_n: derate * bound,
                shear_cap_n: derate * shear,
                compression_cap_n: model.compression_limit_n,
                mu: None,
            }
        }
        Surface::Friction { mu } => ContactLimits {
            pull_cap_n: 0.0,
            shear_cap_n: 0.0,
            compression_cap_n: model.compression_limit_n,
            mu: Some(mu),
        },
    }
}

/// Rows `(a, b)` of `aᵀ f ≤ b` for one contact force.
fn contact_inequalities(c: &ContactSpec, lim: &ContactLimits) -> Vec<(Vector3<f64>, f64)> {
    let t1: Vector3<f64> = c.frame.column(0).into_owned();
    let t2: Vector3<f64> = c.frame.column(1).into_owned();
    let n: Vector3<f64> = c.frame.column(2).into_owned();
    let facet = (std::f64::consts::PI / OCTAGON as f64).cos();
    let mut rows = Vec::with_capacity(OCTAGON + 2);
    rows.push((n, lim.compression_cap_n));
    match lim.mu {
        None => {
            rows.push((-n, lim.pull_cap_n));
            for j in 0..OCTAGON {
                let a = std::f64::consts::TAU * j as f64 / OCTAGON as f64;
                rows.push((t1 * a.cos() + t2 * a.sin(), lim.shear_cap_n * facet));
            }
        }
        Some(mu) => {
            rows.push((-n, 0.0));
            for j in 0..OCTAGON {
                let a = std::f64::consts::TAU * j as f64 / OCTAGON as f64;
                rows.push((t1 * a.cos() + t2 * a.sin() - n * (mu * facet), 0.0));
            }
        }
    }
    rows
}

/// `(Σf + f_ext, Σ p×f + τ_ext)`.
pub fn equilibrium_residual(contacts: &[ContactSpec], forces: &[Vector3<f64>], external: &Wrench) -> Wrench {
    let mut w = *external;
    for (c, f) in contacts.iter().zip(forces) {
        w.force += f;
        w.torque += c.position.cross(f);
    }
    w
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

struct Reduced {
    f0: DVector<f64>,
    null: DMatrix<f64>,
}

fn reduce_equalities(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<Reduced> {
    let n = a.ncols();
    let mut sq = DMatrix::zeros(n.max(a.nrows()), n);
    sq.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = sq.clone().svd(true, true);
    let u = svd.u.as_ref()?;
    let vt = svd.v_t.as_ref()?;
    let smax = svd.singular_values.amax();
    let tol = 1e-10 * smax.max(1e-300);
    let mut bb = DVector::zeros(sq.nrows());
    bb.rows_mut(0, b.len()).copy_from(b);
    let mut f0 = DVector::zeros(n);
    let mut null_cols = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        let v = vt.row(i).transpose();
        if *s > tol {
            f0 += &v * (u.column(i).dot(&bb) / s);
        } else {
            null_cols.push(v);
        }
    }
    let resid = (a * &f0 - b).norm();
    if resid > 1e-9 * b.norm().max(1.0) {
        return None;
    }
    let null = if null_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    Some(Reduced { f0, null })
}

/// Minimum-peak contact forces balancing the external wrench, or `Infeasible`.
pub fn distribute_forces(
    model: &RobotModel,
    contacts: &[ContactSpec],
    external: &Wrench,
    thrust: Option<&ThrustLoad>,
) -> Result<ContactSolution, StabilityError> {
    solve_distribution(model, contacts, external, thrust).map(|(s, _)| s)
}

/// Solution plus the phase-one margin (negative means strictly feasible), in newtons.
pub fn solve_distribution(
    model: &RobotModel,
    contacts: &[ContactSpec],
    external: &Wrench,
    thrust: Option<&ThrustLoad>,
) -> Result<(ContactSolution, f64), StabilityError> {
    let k = contacts.len();
    if k < 2 {
        return Err(StabilityError::TooFewContacts(k));
    }
    for (i, c) in contacts.iter().enumerate() {
        if !c.frame_is_orthonormal() {
            return Err(StabilityError::InvalidFrame(i));
        }
    }
    let n = 3 * k;
    // torques about the contact centroid keep the rows well scaled
    let centroid = contacts.iter().map(|c| c.position).sum::<Vector3<f64>>() / k as f64;
    let ext_torque = external.torque - centroid.cross(&external.force);
    let rows = if thrust.is_some() { 7 } else { 6 };
    // the posture actuator force is one extra unknown after the contact forces
    let actuated = thrust.is_some_and(|t| t.thrust_n > 0.0);
    let nvar = if actuated { n + 1 } else { n };
    let mut a = DMatrix::zeros(rows, nvar);
    let mut b = DVector::zeros(rows);
    for (i, c) in contacts.iter().enumerate() {
        a.view_mut((0, 3 * i), (3, 3)).copy_from(&Matrix3::identity());
        a.view_mut((3, 3 * i), (3, 3)).copy_from(&skew(&(c.position - centroid)));
    }
    b.rows_mut(0, 3).copy_from(&(-external.force));
    b.rows_mut(3, 3).copy_from(&(-ext_torque));
    if let Some(t) = thrust {
        let axis = t.axis.normalize();
        for (i, c) in contacts.iter().enumerate() {
            if c.moving {
                a.view_mut((6, 3 * i), (1, 3)).copy_from(&axis.transpose());
            }
        }
        if actuated {
            a[(6, n)] = 1.0;
        }
        b[6] = -axis.dot(&t.lifted_load);
    }

    let scale = b.amax().max(1.0);
    let bs = &b / scale;
    let red = reduce_equalities(&a, &bs).ok_or(StabilityError::Infeasible)?;
    let nz = red.null.ncols();

    let mut ineq: Vec<(DVector<f64>, f64)> = Vec::new();
    for (i, c) in contacts.iter().enumerate() {
        let lim = contact_limits(model, c);
        for (row, rhs) in contact_inequalities(c, &lim) {
            let mut full = DVector::zeros(nvar);
            full.rows_mut(3 * i, 3).copy_from(&row);
            let az = red.null.transpose() * &full;
            ineq.push((az, rhs / scale - full.dot(&red.f0)));
        }
    }
    if let Some(t) = thrust.filter(|_| actuated) {
        for sign in [1.0, -1.0] {
            let mut full = DVector::zeros(nvar);
            full[n] = sign;
            let az = red.null.transpose() * &full;
            ineq.push((az, t.thrust_n / scale - full.dot(&red.f0)));
        }
    }

    let forces_of = |z: &DVector<f64>| -> Vec<Vector3<f64>> {
        let f = &red.f0 + &red.null * z;
        (0..k)
            .map(|i| Vector3::new(f[3 * i], f[3 * i + 1], f[3 * i + 2]) * scale)
            .collect()
    };

    let max_violation = |z: &DVector<f64>| {
        ineq.iter()
            .map(|(az, r)| az.dot(z) - r)
            .fold(f64::NEG_INFINITY, f64::max)
    };

    // phase one: minimize the worst violation s with s ≥ −1
    let (z, margin) = if nz == 0 {
        let z = DVector::zeros(0);
        let m = max_violation(&z);
        (z, m)
    } else {
        let dim = nz + 1;
        let mut cons: Vec<Constraint> = ineq
            .iter()
            .map(|(az, r)| {
                let mut row = DVector::zeros(dim);
                row.rows_mut(0, nz).copy_from(az);
                row[nz] = -1.0;
                Constraint::Linear { a: row, b: *r }
            })
            .collect();
        let mut lower = DVector::zeros(dim);
        lower[nz] = -1.0;
        cons.push(Constraint::Linear { a: lower, b: 1.0 });
        let mut obj = DVector::zeros(dim);
        obj[nz] = 1.0;
        let prog = ConicProgram {
            dim,
            objective: Objective::Linear(obj),
            constraints: cons,
        };
        let mut x0 = DVector::zeros(dim);
        x0[nz] = (max_violation(&DVector::zeros(nz)) + 1.0).max(0.0);
        let settings = BarrierSettings {
            gap_tol: 1e-11,
            target: Some(-0.5),
            ..Default::default()
        };
        let r = convex::solve(&prog, x0, &settings).map_err(|e| StabilityError::Solver(e.to_string()))?;
        let z = r.x.rows(0, nz).into_owned();
        let m = max_violation(&z);
        (z, m)
    };
    if margin >= -1e-12 {
        return Err(StabilityError::Infeasible);
    }

    let z = if nz == 0 { z } else { refine(&red, &ineq, k, z) };
    let forces = forces_of(&z);
    let resid = equilibrium_residual(contacts, &forces, external);
    let objective = forces.iter().map(|f| f.norm()).fold(0.0, f64::max);
    let sum_squares = forces.iter().map(|f| f.norm_squared()).sum();
    let min_slack = -max_violation(&z) * scale;
    let actuator_force_n = match (thrust, actuated) {
        (Some(_), true) => Some((red.f0[n] + (red.null.row(n) * &z)[0]) * scale),
        (Some(_), false) => Some(0.0),
        (None, _) => None,
    };
    Ok((
        ContactSolution {
            forces,
            residual_force: resid.force,
            residual_torque: resid.torque,
            objective,
            sum_squares,
            min_slack,
            margin_n: -margin * scale,
            actuator_force_n,
        },
        margin * scale,
    ))
}

/// Phases two and three: min-max norm, then min sum of squares at that peak.
fn refine(red: &Reduced, ineq: &[(DVector<f64>, f64)], k: usize, z1: DVector<f64>) -> DVector<f64> {
    let nz = red.null.ncols();
    let block = |i: usize| red.null.rows(3 * i, 3).into_owned();
    let offset = |i: usize| red.f0.rows(3 * i, 3).into_owned();
    let norms = |z: &DVector<f64>| -> Vec<f64> { (0..k).map(|i| (offset(i) + block(i) * z).norm()).collect() };

    let dim = nz + 1;
    let mut cons: Vec<Constraint> = ineq
        .iter()
        .map(|(az, r)| {
            let mut row = DVector::zeros(dim);
            row.rows_mut(0, nz).copy_from(az);
            Constraint::Linear { a: row, b: *r }
        })
        .collect();
    for i in 0..k {
        let mut m = DMatrix::zeros(3, dim);
        m.view_mut((0, 0), (3, nz)).copy_from(&block(i));
        let mut d = DVector::zeros(dim);
        d[nz] = 1.0;
        cons.push(Constraint::Cone { m, c: offset(i), d, e: 0.0 });
    }
    let mut obj = DVector::zeros(dim);
    obj[nz] = 1.0;
    let prog = ConicProgram {
        dim,
        objective: Objective::Linear(obj),
        constraints: cons,
    };
    let mut x0 = DVector::zeros(dim);
    x0.rows_mut(0, nz).copy_from(&z1);
    x0[nz] = norms(&z1).into_iter().fold(0.0, f64::max) * 1.5 + 1e-3;
    let settings = BarrierSettings::default();
    let z2 = match convex::solve(&prog, x0, &settings) {
        Ok(r) => r.x,
        Err(_) => return z1,
    };
    let peak = z2[nz];
    let z2 = z2.rows(0, nz).into_owned();

    let cap = peak * (1.0 + 1e-6) + 1e-12;
    let mut cons: Vec<Constraint> = ineq
        .iter()
        .map(|(az, r)| Constraint::Linear { a: az.clone(), b: *r })
        .collect();
    for i in 0..k {
        cons.push(Constraint::Cone {
            m: block(i),
            c: offset(i),
            d: DVector::zeros(nz),
            e: cap,
        });
    }
    let forces = red.null.rows(0, 3 * k);
    let p = forces.transpose() * forces;
    let q = forces.transpose() * red.f0.rows(0, 3 * k);
    let prog = ConicProgram {
        dim: nz,
        objective: Objective::Quadratic { p, q },
        constraints: cons,
    };
    if prog.min_slack(&z2) <= 0.0 {
        return z2;
    }
    match convex::solve(&prog, z2.clone(), &settings) {
        Ok(r) => r.x,
        Err(_) => z2,
    }
}

/// Joint torque excess for one limb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorqueViolation {
    pub limb: LimbId,
    pub joint: usize,
    pub torque_nm: f64,
    pub limit_nm: f64,
}

/// Joint configuration context for the torque post-filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorqueContext {
    pub body_pose: RigidTransform,
    pub joints: [LimbConfig; 4],
}

/// `Jᵀf` against the joint torque limits for every limb-bound contact.
pub fn check_torques(
    model: &RobotModel,
    contacts: &[ContactSpec],
    solution: &ContactSolution,
    ctx: &TorqueContext,
) -> Vec<TorqueViolation> {
    let active = match model.configuration {
        crate::model::Configuration::Walking3DoF => 3,
        crate::model::Configuration::Climbing6DoF => 6,
    };
    let mut out = Vec::new();
    for (c, f) in contacts.iter().zip(&solution.forces) {
        let Some(id) = c.limb else { continue };
        let fb = ctx.body_pose.rotation.transpose() * f;
        match limb::joint_torques(model, id, &ctx.joints[id.index()], &fb) {
            Ok(tau) => {
                for j in 0..active {
                    let lim = model.joint_torque_limits_nm[j];
                    if tau[j].abs() > lim {
                        out.push(TorqueViolation {
                            limb: id,
                            joint: j,
                            torque_nm: tau[j],
                            limit_nm: lim,
                        });
                    }
                }
            }
            Err(_) => out.push(TorqueViolation {
                limb: id,
                joint: 0,
                torque_nm: f64::INFINITY,
                limit_nm: model.joint_torque_limits_nm[0],
            }),
        }
    }
    out
}

/// Stance, loads and gravity for payload and feasibility queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceScenario {
    pub contacts: Vec<ContactSpec>,
    pub com: Vector3<f64>,
    pub robot_mass_kg: f64,
    pub payload_kg: f64,
    pub payload_point: Vector3<f64>,
    pub gravity: GravityFrame,
    /// Posture-actuator thrust on the moving half, if a lift is in progress.
    pub thrust_n: Option<f64>,
    pub climb_axis: Vector3<f64>,
    /// Share of the total weight carried by the lifted half.
    pub lifted_fraction: f64,
    pub torque: Option<TorqueContext>,
    /// Whether joint torque limits count toward feasibility.
    pub torque_limited: bool,
}

impl StanceScenario {
    pub fn external_wrench(&self) -> Wrench {
        let g = self.gravity.gravity_m_s2;
        Wrench::point_force(&self.com, &(g * self.robot_mass_kg))
            .add(&Wrench::point_force(&self.payload_point, &(g * self.payload_kg)))
    }

    pub fn thrust_load(&self) -> Option<ThrustLoad> {
        self.thrust_n.map(|t| ThrustLoad {
            axis: self.climb_axis,
            thrust_n: t,
            lifted_load: self.gravity.gravity_m_s2 * ((self.robot_mass_kg + self.payload_kg) * self.lifted_fraction),
        })
    }

    pub fn with_payload(&self, payload_kg: f64) -> StanceScenario {
        let mut s = self.clone();
        s.payload_kg = payload_kg;
        s
    }

    /// Force distribution plus torque violations.
    pub fn evaluate(&self, model: &RobotModel) -> Result<(ContactSolution, Vec<TorqueViolation>), StabilityError> {
        let sol = distribute_forces(model, &self.contacts, &self.external_wrench(), self.thrust_load().as_ref())?;
        let viol = match &self.torque {
            Some(ctx) => check_torques(model, &self.contacts, &sol, ctx),
            None => Vec::new(),
        };
        Ok((sol, viol))
    }

    pub fn is_feasible(&self, model: &RobotModel) -> bool {
        match self.evaluate(model) {
            Ok((_, v)) => !self.torque_limited || v.is_empty(),
            Err(_) => false,
        }
    }
}

/// Largest payload (kg, to 0.01 kg) keeping the stance feasible.
pub fn max_payload(model: &RobotModel, scenario: &StanceScenario) -> Result<f64, StabilityError> {
    if !scenario.with_payload(0.0).is_feasible(model) {
        return Err(StabilityError::BaselineInfeasible);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while scenario.with_payload(hi).is_feasible(model) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 {
            return Ok(lo);
        }
    }
    while hi - lo > 0.005 {
        let mid = 0.5 * (lo + hi);
        if scenario.with_payload(mid).is_feasible(model) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Instant of a plan checked by `certify_plan`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantCheck {
    pub phase_index: usize,
    pub time_s: f64,
    pub feasible: bool,
    /// Smallest admissible-set slack (N); negative or absent when infeasible.
    pub margin_n: Option<f64>,
    pub peak_force_n: Option<f64>,
    pub torque_violations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFeasibility {
    pub phase_index: usize,
    pub kind: String,
    pub feasible: bool,
    pub worst_margin_n: Option<f64>,
    pub peak_force_n: Option<f64>,
    pub torque_violations: usize,
    pub first_infeasible_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub phases: Vec<PhaseFeasibility>,
    pub all_feasible: bool,
    pub first_infeasible: Option<(usize, f64)>,
}

/// Evaluate a set of independent instants in parallel and merge them by phase.
pub fn certify_instants(
    model: &RobotModel,
    instants: &[(usize, String, f64, StanceScenario)],
) -> FeasibilityReport {
    let checks: Vec<(usize, String, InstantCheck)> = instants
        .par_iter()
        .map(|(phase, kind, t, sc)| {
            let check = match sc.evaluate(model) {
                Ok((sol, viol)) => InstantCheck {
                    phase_index: *phase,
                    time_s: *t,
                    feasible: true,
                    margin_n: Some(sol.margin_n),
                    peak_force_n: Some(sol.objective),
                    torque_violations: viol.len(),
                    error: None,
                },
                Err(e) => InstantCheck {
                    phase_index: *phase,
                    time_s: *t,
                    feasible: false,
                    margin_n: None,
                    peak_force_n: None,
                    torque_violations: 0,
                    error: Some(e.to_string()),
                },
            };
            (*phase, kind.clone(), check)
        })
        .collect();
    let mut phases: Vec<PhaseFeasibility> = Vec::new();
    for (phase, kind, c) in checks {
        if phases.last().map(|p| p.phase_index != phase).unwrap_or(true) {
            phases.push(PhaseFeasibility {
                phase_index: phase,
                kind,
                feasible: true,
                worst_margin_n: None,
                peak_force_n: None,
                torque_violations: 0,
                first_infeasible_time_s: None,
            });
        }
        let p = phases.last_mut().expect("phase entry");
        p.torque_violations += c.torque_violations;
        if c.feasible {
            let m = c.margin_n.unwrap_or(f64::INFINITY);
            p.worst_margin_n = Some(p.worst_margin_n.map_or(m, |w| w.min(m)));
            let f = c.peak_force_n.unwrap_or(0.0);
            p.peak_force_n = Some(p.peak_force_n.map_or(f, |w| w.max(f)));
        } else {
            p.feasible = false;
            if p.first_infeasible_time_s.is_none() {
                p.first_infeasible_time_s = Some(c.time_s);
            }
        }
    }
    let first_infeasible = phases
        .iter()
        .find(|p| !p.feasible)
        .map(|p| (p.phase_index, p.first_infeasible_time_s.unwrap_or(0.0)));
    FeasibilityReport {
        all_feasible: first_infeasible.is_none(),
        phases,
        first_infeasible,
    }
}

/// Normalized instants checked in every phase.
pub const CERTIFY_SAMPLES: [f64; 3] = [0.0, 0.5, 1.0];

/// A two-foot trot support only balances statically when its diagonal passes
/// under the center of mass, which happens at mid-stance.
pub fn certify_samples(kind: &PhaseKind) -> &'static [f64] {
    match kind {
        PhaseKind::TrotPair(_) => &[0.5],
        _ => &CERTIFY_SAMPLES,
    }
}

/// Stability query for one plan instant.
pub fn plan_instant(
    model: &RobotModel,
    plan: &PhasePlan,
    map: Option<&SparseMap>,
    gravity: &GravityFrame,
    payload_kg: f64,
    index: usize,
    tau: f64,
) -> Result<StanceScenario, StanceError> {
    let phase = &plan.phases[index];
    let mut st = plan.stance_at(model, index, tau, map)?;
    st.payload_kg = payload_kg;
    let lifting = matches!(phase.kind, PhaseKind::BodyLift(_));
    let thrust = lift_thrust(model, &st.shift_state, lifting);
    let ground = matches!(plan.contact, ContactKind::Friction { .. });
    st.scenario(model, gravity, &phase.moving, thrust, ground)
}

/// Force feasibility at sampled instants of every phase, evaluated in parallel.
pub fn certify_plan(
    plan: &PhasePlan,
    map: Option<&SparseMap>,
    model: &RobotModel,
    gravity: &GravityFrame,
    payload_kg: f64,
) -> FeasibilityReport {
    let mut instants = Vec::new();
    let mut broken = Vec::new();
    for (i, p) in plan.phases.iter().enumerate() {
        for &tau in certify_samples(&p.kind) {
            let t = p.start_s + tau * p.duration_s;
            match plan_instant(model, plan, map, gravity, payload_kg, i, tau) {
                Ok(sc) => instants.push((i, p.kind.label(), t, sc)),
                Err(_) => broken.push((i, p.kind.label(), t)),
            }
        }
    }
    let mut report = certify_instants(model, &instants);
    for (i, kind, t) in broken {
        match report.phases.iter_mut().find(|p| p.phase_index == i) {
            Some(p) => {
                p.feasible = false;
                p.first_infeasible_time_s = Some(p.first_infeasible_time_s.map_or(t, |x| x.min(t)));
            }
            None => report.phases.push(PhaseFeasibility {
                phase_index: i,
                kind,
                feasible: false,
                worst_margin_n: None,
                peak_force_n: None,
                torque_violations: 0,
                first_infeasible_time_s: Some(t),
            }),
        }
    }
    report.phases.sort_by_key(|p| p.phase_index);
    report.first_infeasible = report
        .phases
        .iter()
        .find(|p| !p.feasible)
        .map(|p| (p.phase_index, p.first_infeasible_time_s.unwrap_or(0.0)));
    report.all_feasible = report.first_infeasible.is_none();
    report
}

/// Axial thrust on the lifted half for a given shift state.
pub fn lift_thrust(model: &RobotModel, shift: &ShiftState, lifting: bool) -> Option<f64> {
    if lifting && shift.lift_side != LiftSide::Neutral {
        Some(body::body_thrust(&model.fourbar, shift, lifting))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_model;

    fn grasp(p: Vector3<f64>) -> ContactSpec {
        ContactSpec::on_wall(p, Surface::Grasp { slope_deg: 0.0, preload_n: 70.0 })
    }

    #[test]
    fn zero_residual_cases() {
        let c = vec![grasp(Vector3::new(0.0, 0.0, 0.0)), grasp(Vector3::new(1.0, 0.0, 0.0))];
        let r = equilibrium_residual(&c, &[Vector3::zeros(), Vector3::zeros()], &Wrench::zero());
        assert_eq!(r.force.norm() + r.torque.norm(), 0.0);
        let com = Vector3::new(0.0, 0.0, 0.3);
        let w = Wrench::point_force(&com, &Vector3::new(0.0, 0.0, -50.0));
        let r = equilibrium_residual(&c[..1], &[Vector3::new(0.0, 0.0, 50.0)], &w);
        assert!(r.force.norm() < 1e-12 && r.torque.norm() < 1e-12);
    }

    #[test]
    fn ceiling_pair_is_feasible() {
        let m = default_model();
        let c = vec![
            grasp(Vector3::new(0.25, 0.25, 0.0)),
            grasp(Vector3::new(-0.25, -0.25, 0.0)),
        ];
        let g = GravityFrame::ceiling();
        let w = Wrench::point_force(&Vector3::new(0.0, 0.0, 0.25), &(g.gravity_m_s2 * 9.6));
        let s = distribute_forces(&m, &c, &w, None).unwrap();
        assert!(s.residual_force.norm() < 1e-6 && s.residual_torque.norm() < 1e-6);
        assert!((s.objective - 9.6 * 9.81 / 2.0).abs() < 1e-3);
    }

    #[test]
    fn heavy_load_is_infeasible() {
        let m = default_model();
        let c = vec![grasp(Vector3::new(0.2, 0.2, 0.0)), grasp(Vector3::new(-0.2, -0.2, 0.0))];
        let g = GravityFrame::vertical();
        let w = Wrench::point_force(&Vector3::new(0.0, 0.0, 0.25), &(g.gravity_m_s2 * 1300.0));
        assert_eq!(distribute_forces(&m, &c, &w, None), Err(StabilityError::Infeasible));
    }
}
