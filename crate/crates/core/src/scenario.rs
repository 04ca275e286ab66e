//! Scenario files, end-to-end runs and the comparison report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::ShiftState;
use crate::control::{self, ControlParams, CommandRecord, SquareWave};
use crate::gait::{
    self, ClimbSettings, GaitMetrics, PhasePlan, StanceGeometry, TimingModel,
};
use crate::model::{default_model, Configuration, GravityFrame, LimbId, ModelError, RigidTransform, RobotModel};
use crate::sdm::{self, HoldId, MapError, PointGroups, SparseMap};
use crate::stability::{self, FeasibilityReport};
use crate::stance::{Attachment, StanceState};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario {0}: {1}")]
    Invalid(String, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Environment {
    BoulderingVertical,
    ShiftPayloadVertical,
    Overhang125,
    Ceiling,
    TrotGround,
    TrotPayloadGround,
}

impl Environment {
    pub fn default_inclination_deg(self) -> f64 {
        match self {
            Environment::BoulderingVertical | Environment::ShiftPayloadVertical => 90.0,
            Environment::Overhang125 => 125.0,
            Environment::Ceiling => 180.0,
            Environment::TrotGround | Environment::TrotPayloadGround => 0.0,
        }
    }

    pub fn is_ground(self) -> bool {
        matches!(self, Environment::TrotGround | Environment::TrotPayloadGround)
    }

    pub fn configuration(self) -> Configuration {
        if self.is_ground() {
            Configuration::Walking3DoF
        } else {
            Configuration::Climbing6DoF
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitSettings {
    pub lift_stroke_m: f64,
    pub speed_m_s: f64,
    pub stride_m: f64,
    pub duty_factor: f64,
    /// Limb short name to hold name, for map-based climbs.
    pub start: BTreeMap<String, String>,
    /// Ordered (limb, hold) regrasps.
    pub goals: Vec<(String, String)>,
    pub timing: TimingModel,
    pub climb: ClimbSettings,
}

impl Default for GaitSettings {
    fn default() -> Self {
        Self {
            lift_stroke_m: 0.075,
            speed_m_s: 0.56,
            stride_m: 0.2,
            duty_factor: 0.5,
            start: BTreeMap::new(),
            goals: Vec::new(),
            timing: TimingModel::default(),
            climb: ClimbSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Checks {
    /// Bisect the largest payload every certified instant still carries.
    pub max_payload: bool,
    /// Square-wave force tracking runs, one per frequency.
    pub force_tracking_hz: Vec<f64>,
    /// Diagonal two-gripper hang at the start stance.
    pub two_contact_hang: bool,
}

/// One pass/fail condition on a named report value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
}

impl Expectation {
    pub fn check(&self, value: Option<f64>) -> bool {
        let Some(v) = value.filter(|v| v.is_finite()) else { return false };
        if self.min.is_some_and(|m| v < m) || self.max.is_some_and(|m| v > m) {
            return false;
        }
        if let Some(t) = self.target {
            let tol = self.abs_tol.unwrap_or(0.0).max(self.rel_tol.unwrap_or(0.0) * t.abs());
            if (v - t).abs() > tol {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub environment: Environment,
    #[serde(default)]
    pub inclination_deg: Option<f64>,
    #[serde(default)]
    pub payload_kg: f64,
    /// Point-group file for map-based climbs, relative to the scenario file.
    #[serde(default)]
    pub map: Option<PathBuf>,
    /// Gaussian noise added to map points, m.
    #[serde(default)]
    pub sensor_noise_m: f64,
    #[serde(default)]
    pub seed: u64,
    /// JSON merged over the default model.
    #[serde(default)]
    pub model_overrides: Option<serde_json::Value>,
    #[serde(default)]
    pub gait: GaitSettings,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default)]
    pub expectations: Vec<Expectation>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let mut sc = Self::from_json(&std::fs::read_to_string(path)?)?;
        sc.base_dir = path.parent().map(Path::to_path_buf);
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(self.name.clone(), m.into()));
        if self.name.is_empty() {
            return bad("name is empty");
        }
        if !(self.payload_kg >= 0.0) || !(self.sensor_noise_m >= 0.0) {
            return bad("payload and sensor noise must be non-negative");
        }
        if self.environment == Environment::BoulderingVertical {
            if self.map.is_none() {
                return bad("a map file is required");
            }
            if self.gait.start.len() != 4 || self.gait.goals.is_empty() {
                return bad("four start holds and at least one goal are required");
            }
        }
        Ok(())
    }

    pub fn gravity(&self) -> Result<GravityFrame, ScenarioError> {
        Ok(GravityFrame::new(
            self.inclination_deg.unwrap_or(self.environment.default_inclination_deg()),
        )?)
    }

    pub fn model(&self, base: Option<&RobotModel>) -> Result<RobotModel, ScenarioError> {
        let base = base.cloned().unwrap_or_else(default_model);
        let mut model = base.with_configuration(self.environment.configuration());
        if let Some(patch) = &self.model_overrides {
            let mut v = serde_json::to_value(&model)?;
            merge(&mut v, patch);
            model = serde_json::from_value(v)?;
        }
        model.validate()?;
        Ok(model)
    }

    fn map_path(&self) -> Option<PathBuf> {
        let p = self.map.as_ref()?;
        Some(match &self.base_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.clone(),
        })
    }
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub expectation: Expectation,
    pub value: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub environment: Environment,
    pub inclination_deg: f64,
    pub payload_kg: f64,
    pub metrics: Option<GaitMetrics>,
    /// Every named value an expectation can refer to.
    pub values: BTreeMap<String, f64>,
    pub feasibility: Option<FeasibilityReport>,
    pub expectations: Vec<ExpectationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
    pub error: Option<String>,
    /// Wall-clock time; kept out of the serialized report so reruns compare equal.
    #[serde(skip)]
    pub runtime_s: f64,
}

/// Logs produced by a run, written only on request.
#[derive(Debug, Default)]
pub struct RunLogs {
    pub plan: Option<PhasePlan>,
    pub commands: Vec<CommandRecord>,
    pub force_traces: Vec<control::ForceTrace>,
}

pub fn run_scenario(s: &Scenario) -> RunReport {
    run_scenario_with(s, None, None)
}

/// Plan, certify, execute and score one scenario. Failures end up in the report.
pub fn run_scenario_with(s: &Scenario, base_model: Option<&RobotModel>, logs: Option<&mut RunLogs>) -> RunReport {
    let start = Instant::now();
    let mut report = RunReport {
        name: s.name.clone(),
        environment: s.environment,
        inclination_deg: s.inclination_deg.unwrap_or(s.environment.default_inclination_deg()),
        payload_kg: s.payload_kg,
        metrics: None,
        values: BTreeMap::new(),
        feasibility: None,
        expectations: Vec::new(),
        pass: None,
        error: None,
        runtime_s: 0.0,
    };
    if let Err(e) = execute(s, base_model, &mut report, logs) {
        report.error = Some(e);
    }
    report.expectations = s
        .expectations
        .iter()
        .map(|e| {
            let value = report.values.get(&e.metric).copied();
            ExpectationResult {
                expectation: e.clone(),
                value,
                passed: report.error.is_none() && e.check(value),
            }
        })
        .collect();
    if !s.expectations.is_empty() {
        report.pass = Some(report.expectations.iter().all(|r| r.passed));
    }
    report.runtime_s = start.elapsed().as_secs_f64();
    report
}

fn execute(
    s: &Scenario,
    base_model: Option<&RobotModel>,
    report: &mut RunReport,
    logs: Option<&mut RunLogs>,
) -> Result<(), String> {
    s.validate().map_err(|e| e.to_string())?;
    let model = s.model(base_model).map_err(|e| e.to_string())?;
    let gravity = s.gravity().map_err(|e| e.to_string())?;
    let g = &s.gait;
    let axis = Vector3::x();

    let (plan, map) = match s.environment {
        Environment::BoulderingVertical => {
            let (map, names) = load_map(s)?;
            let start = start_stance(&model, &map, &names, s)?;
            let goals = g
                .goals
                .iter()
                .map(|(l, h)| Ok((parse_limb(l)?, lookup(&names, h)?)))
                .collect::<Result<Vec<_>, String>>()?;
            let plan = gait::plan_climb_sequence(&model, &map, &start, &goals, &g.timing, &g.climb)
                .map_err(|e| e.to_string())?;
            (plan, Some(map))
        }
        Environment::ShiftPayloadVertical | Environment::Overhang125 | Environment::Ceiling => {
            let plan = gait::plan_shift_cycle(&model, &axis, g.lift_stroke_m, &g.timing, &StanceGeometry::for_model(&model))
                .map_err(|e| e.to_string())?;
            (plan, None)
        }
        Environment::TrotGround | Environment::TrotPayloadGround => {
            let plan = gait::plan_trot(&model, g.speed_m_s, g.stride_m, g.duty_factor, &g.timing)
                .map_err(|e| e.to_string())?;
            (plan, None)
        }
    };
    plan.check_invariants().map_err(|e| format!("plan invariant: {e}"))?;

    let v = &mut report.values;
    let metrics = gait::compute_metrics(&plan, &model, s.payload_kg);
    for (k, x) in [
        ("distance_m", metrics.distance_m),
        ("duration_s", metrics.duration_s),
        ("speed_m_s", metrics.speed_m_s),
        ("speed_m_min", metrics.speed_m_min),
        ("normalized_speed_per_s", metrics.normalized_speed_per_s),
        ("normalized_speed_per_min", metrics.normalized_speed_per_min),
        ("normalized_payload", metrics.normalized_payload),
        ("normalized_workload", metrics.normalized_workload),
    ] {
        v.insert(k.into(), x);
    }
    let stroke = g.timing.gripper_stroke_s.unwrap_or(model.gripper.full_stroke_time_s);
    let regrasps = plan.phases.iter().filter(|p| !p.gripper.is_empty()).count();
    if metrics.duration_s > 0.0 {
        v.insert("gripper_time_fraction".into(), regrasps as f64 * stroke / metrics.duration_s);
    }
    report.metrics = Some(metrics);

    let feas = stability::certify_plan(&plan, map.as_ref(), &model, &gravity, s.payload_kg);
    v.insert("feasible".into(), f64::from(u8::from(feas.all_feasible)));
    if let Some(m) = feas.phases.iter().filter_map(|p| p.worst_margin_n).min_by(f64::total_cmp) {
        v.insert("worst_margin_n".into(), m);
    }
    if let Some(m) = feas.phases.iter().filter_map(|p| p.peak_force_n).max_by(f64::total_cmp) {
        v.insert("peak_contact_force_n".into(), m);
    }
    v.insert(
        "torque_violations".into(),
        feas.phases.iter().map(|p| p.torque_violations).sum::<usize>() as f64,
    );
    report.feasibility = Some(feas);

    if s.checks.max_payload {
        v.insert("max_payload_kg".into(), plan_max_payload(&model, &plan, map.as_ref(), &gravity)?);
    }
    if s.checks.two_contact_hang {
        let (feasible, total) = two_contact_hang(&model, &plan, &gravity)?;
        v.insert("hang_feasible".into(), f64::from(u8::from(feasible)));
        v.insert("hang_max_total_kg".into(), total);
    }

    let params = ControlParams::for_model(&model);
    let nominal = Vector3::zeros();
    v.insert("sag_shift_m".into(), (control::sag_feedforward(&params, &gravity, &nominal) - nominal).norm());

    let mut logs = logs;
    let mut commands = Vec::new();
    let want_log = logs.is_some();
    let exec = control::execute_plan(&params, &model, &plan, want_log.then_some(&mut commands))
        .map_err(|e| e.to_string())?;
    v.insert("max_tracking_error_rad".into(), exec.max_tracking_error_rad);
    v.insert("peak_command_rad_s".into(), exec.peak_command_rad_s);
    v.insert("command_saturation_fraction".into(), exec.saturated_fraction);
    if model.configuration == Configuration::Walking3DoF {
        let ratio = gait::peak_rate_ratio(&model, &plan, gait::COMMAND_RATE_HZ).map_err(|e| e.to_string())?;
        v.insert("peak_rate_ratio".into(), ratio);
    }

    let mut traces = Vec::new();
    for f in &s.checks.force_tracking_hz {
        let wave = SquareWave { low_n: 10.0, high_n: 30.0, frequency_hz: *f };
        let periods = ((*f * 4.0).ceil() as usize).max(4);
        let trace = control::simulate_force_tracking(&params, wave, periods);
        let m = trace.metrics();
        v.insert(format!("force_rms_ratio_{f}hz"), m.rms_error_ratio);
        v.insert(format!("force_attenuation_{f}hz"), m.attenuation);
        traces.push(trace);
    }

    if let Some(l) = logs.as_deref_mut() {
        l.plan = Some(plan);
        l.commands = commands;
        l.force_traces = traces;
    }
    Ok(())
}

fn parse_limb(s: &str) -> Result<LimbId, String> {
    LimbId::ALL
        .into_iter()
        .find(|l| l.short_name().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown limb {s}"))
}

fn lookup(names: &BTreeMap<String, HoldId>, name: &str) -> Result<HoldId, String> {
    names.get(name).copied().ok_or_else(|| format!("unknown hold {name}"))
}

/// Build the hold map from the point file, with optional seeded sensor noise.
pub fn load_map(s: &Scenario) -> Result<(SparseMap, BTreeMap<String, HoldId>), String> {
    let path = s.map_path().ok_or("no map file")?;
    let mut groups: PointGroups = sdm::load_point_groups(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if s.sensor_noise_m > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let noise = Normal::new(0.0, s.sensor_noise_m).map_err(|e| e.to_string())?;
        for p in groups.holds.iter_mut().flat_map(|g| g.points.iter_mut()) {
            for c in p.iter_mut() {
                *c += noise.sample(&mut rng);
            }
        }
    }
    let map = groups.build_map(&s.name).map_err(|e| e.to_string())?;
    let names = groups
        .holds
        .iter()
        .enumerate()
        .map(|(i, g)| (g.name.clone(), HoldId(i as u32)))
        .collect();
    Ok((map, names))
}

/// Neutral posture with every toe on its start hold and the body centered above them.
pub fn start_stance(
    model: &RobotModel,
    map: &SparseMap,
    names: &BTreeMap<String, HoldId>,
    s: &Scenario,
) -> Result<StanceState, String> {
    let normal = map.wall_normal();
    let mut toes = [RigidTransform::identity(); 4];
    let mut attachments = [None; 4];
    let mut center = Vector3::zeros();
    for (limb, hold) in &s.gait.start {
        let id = parse_limb(limb)?;
        let h = lookup(names, hold)?;
        let c = map.hold(h).ok_or_else(|| format!("hold {h} missing"))?.center_m;
        toes[id.index()] = RigidTransform::from_translation(c);
        attachments[id.index()] = Some(Attachment::grasp(Some(h), model.gripper.nominal_fingertip_force_n));
        center += c / 4.0;
    }
    let height = StanceGeometry::for_model(model).body_height_m;
    let body = RigidTransform::from_translation(center + normal * height);
    StanceState::solve(model, body, ShiftState::neutral(), &toes, attachments).map_err(|e| e.to_string())
}

/// Smallest, over certified instants, of the largest payload that instant carries.
fn plan_max_payload(model: &RobotModel, plan: &PhasePlan, map: Option<&SparseMap>, gravity: &GravityFrame) -> Result<f64, String> {
    let mut worst = f64::INFINITY;
    for (i, p) in plan.phases.iter().enumerate() {
        for &tau in stability::certify_samples(&p.kind) {
            let sc = stability::plan_instant(model, plan, map, gravity, 0.0, i, tau).map_err(|e| e.to_string())?;
            let m = stability::max_payload(model, &sc).unwrap_or(0.0);
            worst = worst.min(m);
        }
    }
    Ok(worst)
}

/// Hang from one diagonal pair of grippers at the plan's first instant.
fn two_contact_hang(model: &RobotModel, plan: &PhasePlan, gravity: &GravityFrame) -> Result<(bool, f64), String> {
    let mut st = plan.stance_at(model, 0, 0.0, None).map_err(|e| e.to_string())?;
    for id in [LimbId::FrontRight, LimbId::BackLeft] {
        st.attachments[id.index()] = None;
    }
    let sc = st
        .scenario(model, gravity, &[false; 4], None, false)
        .map_err(|e| e.to_string())?;
    let feasible = sc.is_feasible(model);
    let extra = stability::max_payload(model, &sc).unwrap_or(0.0);
    Ok((feasible, model.mass_kg() + extra))
}

/// Published comparison rows kept beside simulated results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundReference {
    pub robot: &'static str,
    pub weight_kg: f64,
    pub normalized_payload: Option<f64>,
    pub max_payload_kg: Option<f64>,
    pub normalized_speed_per_s: f64,
    pub velocity_m_s: f64,
    pub normalized_workload: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClimbingReference {
    pub robot: &'static str,
    pub velocity_m_min: f64,
    pub normalized_per_min: f64,
    pub payload_kg: Option<f64>,
}

pub const GROUND_REFERENCES: [GroundReference; 6] = [
    GroundReference { robot: "SCALER (walking)", weight_kg: 6.3, normalized_payload: Some(2.33), max_payload_kg: Some(14.7), normalized_speed_per_s: 1.87, velocity_m_s: 0.56, normalized_workload: Some(3.88) },
    GroundReference { robot: "ANYmal", weight_kg: 30.0, normalized_payload: Some(0.33), max_payload_kg: Some(10.0), normalized_speed_per_s: 1.0, velocity_m_s: 0.8, normalized_workload: Some(0.33) },
    GroundReference { robot: "Stanford Doggo", weight_kg: 4.8, normalized_payload: None, max_payload_kg: None, normalized_speed_per_s: 2.14, velocity_m_s: 0.9, normalized_workload: Some(3.2) },
    GroundReference { robot: "Titan XIII", weight_kg: 5.65, normalized_payload: Some(0.89), max_payload_kg: Some(5.0), normalized_speed_per_s: 4.29, velocity_m_s: 0.9, normalized_workload: Some(3.79) },
    GroundReference { robot: "SPOT", weight_kg: 30.0, normalized_payload: Some(0.47), max_payload_kg: Some(14.0), normalized_speed_per_s: 1.45, velocity_m_s: 1.6, normalized_workload: Some(0.68) },
    GroundReference { robot: "Mini Cheetah", weight_kg: 9.0, normalized_payload: Some(1.0), max_payload_kg: Some(9.0), normalized_speed_per_s: 6.62, velocity_m_s: 2.45, normalized_workload: None },
];

pub const CLIMBING_REFERENCES: [ClimbingReference; 6] = [
    ClimbingReference { robot: "SCALER (climbing)", velocity_m_min: 0.35, normalized_per_min: 1.0, payload_kg: Some(3.4) },
    ClimbingReference { robot: "LEMUR 3", velocity_m_min: 0.0027, normalized_per_min: 0.0067, payload_kg: None },
    ClimbingReference { robot: "HubRobo", velocity_m_min: 0.17, normalized_per_min: 0.57, payload_kg: None },
    ClimbingReference { robot: "Slalom", velocity_m_min: 4.2, normalized_per_min: 12.0, payload_kg: None },
    ClimbingReference { robot: "RiSE", velocity_m_min: 15.0, normalized_per_min: 40.0, payload_kg: Some(1.5) },
    ClimbingReference { robot: "Bobcat", velocity_m_min: 10.5, normalized_per_min: 22.8, payload_kg: None },
];

/// Reference climbing speed while carrying its payload, m/min.
pub const REFERENCE_PAYLOAD_CLIMB_M_MIN: f64 = 0.16;

/// The reference walking row prints a workload that its own speed and payload do not give.
pub fn workload_note() -> String {
    let r = &GROUND_REFERENCES[0];
    let product = r.normalized_speed_per_s * r.normalized_payload.unwrap_or(0.0);
    format!(
        "reference walking workload: speed x payload = {:.2} x {:.2} = {:.2}, table prints {:.2}",
        r.normalized_speed_per_s,
        r.normalized_payload.unwrap_or(0.0),
        product,
        r.normalized_workload.unwrap_or(0.0)
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub runs: Vec<RunReport>,
    pub ground_references: Vec<GroundReference>,
    pub climbing_references: Vec<ClimbingReference>,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub all_pass: Option<bool>,
}

/// Merge runs (sorted by name) with the reference rows.
pub fn report(runs: &[RunReport]) -> Report {
    let mut runs = runs.to_vec();
    runs.sort_by(|a, b| a.name.cmp(&b.name));
    let ground = runs.iter().any(|r| r.environment.is_ground());
    let climbing = runs.iter().any(|r| !r.environment.is_ground());
    let mut notes = Vec::new();
    if ground {
        notes.push(workload_note());
    }
    let judged: Vec<bool> = runs.iter().filter_map(|r| r.pass).collect();
    Report {
        all_pass: (!judged.is_empty()).then(|| judged.iter().all(|p| *p)),
        ground_references: if ground { GROUND_REFERENCES.to_vec() } else { Vec::new() },
        climbing_references: if climbing { CLIMBING_REFERENCES.to_vec() } else { Vec::new() },
        runs,
        notes,
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".into(), |x| format!("{x:.prec$}"))
}

fn pass_cell(p: Option<bool>) -> &'static str {
    match p {
        Some(true) => "pass",
        Some(false) => "FAIL",
        None => "",
    }
}

impl Report {
    /// Aligned plain-text tables, ground then climbing.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let ground: Vec<_> = self.runs.iter().filter(|r| r.environment.is_ground()).collect();
        let climbing: Vec<_> = self.runs.iter().filter(|r| !r.environment.is_ground()).collect();
        if !ground.is_empty() {
            let mut rows = vec![[
                "ground".to_string(),
                "payload kg".into(),
                "norm payload".into(),
                "speed m/s".into(),
                "norm speed /s".into(),
                "workload".into(),
                "feasible".into(),
                "result".into(),
            ]];
            for r in &ground {
                let m = r.metrics.as_ref();
                rows.push([
                    r.name.clone(),
                    format!("{:.2}", r.payload_kg),
                    opt(m.map(|m| m.normalized_payload), 2),
                    opt(m.map(|m| m.speed_m_s), 3),
                    opt(m.map(|m| m.normalized_speed_per_s), 2),
                    opt(m.map(|m| m.normalized_workload), 2),
                    feasible_cell(r),
                    pass_cell(r.pass).into(),
                ]);
            }
            for g in &self.ground_references {
                rows.push([
                    format!("[ref] {}", g.robot),
                    opt(g.max_payload_kg, 2),
                    opt(g.normalized_payload, 2),
                    format!("{:.3}", g.velocity_m_s),
                    format!("{:.2}", g.normalized_speed_per_s),
                    opt(g.normalized_workload, 2),
                    String::new(),
                    String::new(),
                ]);
            }
            render(&mut out, &rows);
        }
        if !climbing.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            let mut rows = vec![[
                "climbing".to_string(),
                "incline deg".into(),
                "payload kg".into(),
                "speed m/min".into(),
                "norm /min".into(),
                "margin N".into(),
                "feasible".into(),
                "result".into(),
            ]];
            for r in &climbing {
                let m = r.metrics.as_ref();
                rows.push([
                    r.name.clone(),
                    format!("{:.0}", r.inclination_deg),
                    format!("{:.2}", r.payload_kg),
                    opt(m.map(|m| m.speed_m_min), 3),
                    opt(m.map(|m| m.normalized_speed_per_min), 2),
                    opt(r.values.get("worst_margin_n").copied(), 1),
                    feasible_cell(r),
                    pass_cell(r.pass).into(),
                ]);
            }
            for c in &self.climbing_references {
                rows.push([
                    format!("[ref] {}", c.robot),
                    String::new(),
                    opt(c.payload_kg, 2),
                    format!("{:.4}", c.velocity_m_min),
                    format!("{:.4}", c.normalized_per_min),
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
            }
            render(&mut out, &rows);
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        for r in &self.runs {
            if let Some(e) = &r.error {
                let _ = writeln!(out, "error: {}: {e}", r.name);
            }
            for x in r.expectations.iter().filter(|x| !x.passed) {
                let _ = writeln!(out, "failed: {}: {} = {}", r.name, x.expectation.metric, opt(x.value, 4));
            }
        }
        out
    }
}

fn default_configuration() -> Configuration {
    Configuration::Climbing6DoF
}

/// A neutral stance for payload queries: toes under the shoulders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRequest {
    #[serde(default = "default_configuration")]
    pub configuration: Configuration,
    pub inclination_deg: f64,
    /// Attached limbs by short name; empty means all four.
    #[serde(default)]
    pub attached: Vec<String>,
    /// Limbs driving a body half, whose grip is derated.
    #[serde(default)]
    pub moving: Vec<String>,
    #[serde(default)]
    pub thrust_n: Option<f64>,
    #[serde(default)]
    pub preload_n: Option<f64>,
    /// Friction feet instead of grippers.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub body_height_m: Option<f64>,
    #[serde(default)]
    pub toe_lateral_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub feasible: bool,
    pub margin_n: Option<f64>,
    pub robot_mass_kg: f64,
    pub max_payload_kg: Option<f64>,
}

impl std::fmt::Display for CapacityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "feasible without payload: {}", self.feasible)?;
        writeln!(f, "robot mass: {:.2} kg", self.robot_mass_kg)?;
        if let Some(m) = self.margin_n {
            writeln!(f, "margin: {m:.2} N")?;
        }
        match self.max_payload_kg {
            Some(p) => write!(f, "max payload: {p:.3} kg (total {:.3} kg)", p + self.robot_mass_kg),
            None => write!(f, "max payload: -"),
        }
    }
}

pub fn capacity(base: Option<&RobotModel>, req: &CapacityRequest) -> Result<CapacityReport, ScenarioError> {
    let invalid = |m: String| ScenarioError::Invalid("capacity".into(), m);
    let model = base.cloned().unwrap_or_else(default_model).with_configuration(req.configuration);
    let gravity = GravityFrame::new(req.inclination_deg)?;
    let geometry = StanceGeometry::for_model(&model);
    let height = req.body_height_m.unwrap_or(geometry.body_height_m);
    let lateral = req.toe_lateral_m.unwrap_or(geometry.toe_lateral_m);
    let limbs = |names: &[String]| -> Result<[bool; 4], ScenarioError> {
        let mut set = [false; 4];
        for n in names {
            set[parse_limb(n).map_err(invalid)?.index()] = true;
        }
        Ok(set)
    };
    let attached = if req.attached.is_empty() { [true; 4] } else { limbs(&req.attached)? };
    let moving = limbs(&req.moving)?;
    let shift = ShiftState::neutral();
    let mut toes = [RigidTransform::identity(); 4];
    let mut attachments = [None; 4];
    for id in LimbId::ALL {
        let sh = crate::body::shoulder_frame(&model, id, &shift).translation;
        toes[id.index()] = RigidTransform::from_translation(Vector3::new(sh.x, id.side_sign() * lateral, 0.0));
        if attached[id.index()] {
            attachments[id.index()] = Some(match req.mu {
                Some(mu) => Attachment::foot(mu),
                None => Attachment::grasp(None, req.preload_n.unwrap_or(model.gripper.nominal_fingertip_force_n)),
            });
        }
    }
    let body = RigidTransform::from_translation(Vector3::new(0.0, 0.0, height));
    let st = StanceState::solve(&model, body, shift, &toes, attachments).map_err(|e| invalid(e.to_string()))?;
    let sc = st
        .scenario(&model, &gravity, &moving, req.thrust_n, req.mu.is_some())
        .map_err(|e| invalid(e.to_string()))?;
    let eval = sc.evaluate(&model);
    let feasible = eval.is_ok();
    Ok(CapacityReport {
        feasible,
        margin_n: eval.ok().map(|(s, _)| s.margin_n),
        robot_mass_kg: model.mass_kg(),
        max_payload_kg: stability::max_payload(&model, &sc).ok(),
    })
}

/// Plain-text listing of a map's holds.
pub fn map_table(map: &SparseMap) -> String {
    let mut rows = vec![[
        "hold".to_string(),
        "center m".into(),
        "semi-axes m".into(),
        "slope deg".into(),
        "variance m".into(),
        "obs".into(),
        "graspable".into(),
    ]];
    let gripper = crate::gripper::GripperParams::default();
    for h in &map.holds {
        let c = h.center_m;
        let a = h.semi_axes_m;
        rows.push([
            h.id.to_string(),
            format!("{:.3} {:.3} {:.3}", c.x, c.y, c.z),
            format!("{:.4} {:.4} {:.4}", a.x, a.y, a.z),
            format!("{:.1}", h.surface_slope_deg),
            format!("{:.4}", h.centroid_variance_m),
            h.observations.to_string(),
            if h.graspable(&gripper) { "yes" } else { "no" }.into(),
        ]);
    }
    let mut out = String::new();
    render(&mut out, &rows);
    for p in &map.planes {
        let n = p.normal;
        let _ = writeln!(out, "plane: normal {:.4} {:.4} {:.4}, offset {:.4} m, rms {:.5} m", n.x, n.y, n.z, p.offset_m, p.inlier_rms_m);
    }
    out
}

fn feasible_cell(r: &RunReport) -> String {
    match &r.feasibility {
        Some(f) if f.all_feasible => "yes".into(),
        Some(_) => "no".into(),
        None => "-".into(),
    }
}

fn render<const N: usize>(out: &mut String, rows: &[[String; N]]) {
    let mut width = [0usize; N];
    for row in rows {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(k, (c, w))| if k == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(width.iter().sum::<usize>() + 2 * (N - 1)));
        }
    }
}
