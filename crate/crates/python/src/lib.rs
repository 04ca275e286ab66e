//! Python bindings for the quadclimb toolkit.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use quadclimb::control::{self, ControlParams, SquareWave};
use quadclimb::gait::{self, StanceGeometry, TimingModel};
use quadclimb::limb::{self, Branch, LimbConfig};
use quadclimb::model::{self, GravityFrame, LimbId, RigidTransform};
use quadclimb::scenario::{self, CapacityRequest, Scenario};
use quadclimb::sdm;
use quadclimb::stability;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn limb_id(name: &str) -> PyResult<LimbId> {
    LimbId::ALL
        .into_iter()
        .find(|l| l.short_name().eq_ignore_ascii_case(name))
        .ok_or_else(|| err(format!("unknown limb {name}, expected FL, FR, BL or BR")))
}

/// Robot parameters; defaults are the reference-scale climbing robot.
#[pyclass(name = "RobotModel", skip_from_py_object)]
#[derive(Clone)]
struct PyRobotModel {
    inner: model::RobotModel,
}

#[pymethods]
impl PyRobotModel {
    #[new]
    fn new() -> Self {
        Self { inner: model::default_model() }
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self { inner: model::RobotModel::from_json(s).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    /// Copy switched to the three-joint walking limbs.
    fn walking(&self) -> Self {
        Self { inner: self.inner.with_configuration(model::Configuration::Walking3DoF) }
    }

    #[getter]
    fn mass_kg(&self) -> f64 {
        self.inner.mass_kg()
    }

    #[getter]
    fn body_length_m(&self) -> f64 {
        self.inner.body_length_m()
    }

    /// Toe position in the body frame for six joint angles.
    fn limb_fk(&self, limb: &str, q: [f64; 6]) -> PyResult<[f64; 3]> {
        let id = limb_id(limb)?;
        let cfg = LimbConfig { q, branch: Branch::ElbowOut };
        let t = limb::limb_fk(&self.inner, id, &cfg).map_err(err)?;
        Ok([t.translation.x, t.translation.y, t.translation.z])
    }

    /// Joint angles reaching a toe position (identity toe orientation).
    fn limb_ik(&self, limb: &str, position: [f64; 3]) -> PyResult<[f64; 6]> {
        let id = limb_id(limb)?;
        let target = RigidTransform::from_translation(Vector3::from(position));
        Ok(limb::limb_ik(&self.inner, id, &target, Branch::ElbowOut).map_err(err)?.q)
    }
}

/// Phase-by-phase motion plan.
#[pyclass(name = "PhasePlan")]
struct PyPhasePlan {
    inner: gait::PhasePlan,
    model: model::RobotModel,
}

#[pymethods]
impl PyPhasePlan {
    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.total_duration_s()
    }

    #[getter]
    fn travel_m(&self) -> f64 {
        self.inner.body_travel_m()
    }

    fn phases(&self) -> Vec<(String, f64, f64)> {
        self.inner
            .phases
            .iter()
            .map(|p| (p.kind.label(), p.start_s, p.duration_s))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    /// Speed and normalized metrics of the plan.
    #[pyo3(signature = (payload_kg = 0.0))]
    fn metrics(&self, payload_kg: f64) -> BTreeMap<String, f64> {
        let m = gait::compute_metrics(&self.inner, &self.model, payload_kg);
        BTreeMap::from([
            ("speed_m_min".to_string(), m.speed_m_min),
            ("normalized_speed_per_s".into(), m.normalized_speed_per_s),
            ("normalized_speed_per_min".into(), m.normalized_speed_per_min),
            ("normalized_payload".into(), m.normalized_payload),
            ("normalized_workload".into(), m.normalized_workload),
        ])
    }

    /// Quasi-static feasibility of every phase; returns (all feasible, worst margin per phase).
    #[pyo3(signature = (inclination_deg, payload_kg = 0.0))]
    fn certify(&self, inclination_deg: f64, payload_kg: f64) -> PyResult<(bool, Vec<Option<f64>>)> {
        let g = GravityFrame::new(inclination_deg).map_err(err)?;
        let r = stability::certify_plan(&self.inner, None, &self.model, &g, payload_kg);
        Ok((r.all_feasible, r.phases.iter().map(|p| p.worst_margin_n).collect()))
    }
}

/// Wall stepping cycle that lifts each body half by `lift_stroke_m`.
#[pyfunction]
#[pyo3(signature = (model, lift_stroke_m = 0.075))]
fn plan_shift_cycle(model: &PyRobotModel, lift_stroke_m: f64) -> PyResult<PyPhasePlan> {
    let m = &model.inner;
    let plan = gait::plan_shift_cycle(m, &Vector3::x(), lift_stroke_m, &TimingModel::default(), &StanceGeometry::for_model(m))
        .map_err(err)?;
    Ok(PyPhasePlan { inner: plan, model: m.clone() })
}

/// Ground trot on the walking configuration.
#[pyfunction]
#[pyo3(signature = (model, speed_m_s, stride_m = 0.2, duty_factor = 0.5))]
fn plan_trot(model: &PyRobotModel, speed_m_s: f64, stride_m: f64, duty_factor: f64) -> PyResult<PyPhasePlan> {
    let m = model.inner.with_configuration(model::Configuration::Walking3DoF);
    let plan = gait::plan_trot(&m, speed_m_s, stride_m, duty_factor, &TimingModel::default()).map_err(err)?;
    Ok(PyPhasePlan { inner: plan, model: m })
}

/// Maximum-volume inscribed ellipsoid of a point cloud's hull: (center, semi-axes, rotation rows).
#[pyfunction]
fn inscribe_ellipsoid(points: Vec<[f64; 3]>) -> PyResult<([f64; 3], [f64; 3], [[f64; 3]; 3])> {
    let pts: Vec<Vector3<f64>> = points.into_iter().map(Vector3::from).collect();
    let e = sdm::inscribe_ellipsoid(&pts).map_err(err)?;
    let r = e.orientation;
    let rows = [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]);
    Ok((e.center_m.into(), e.semi_axes_m.into(), rows))
}

/// Largest payload of a neutral stance described by a JSON request.
#[pyfunction]
fn capacity(request_json: &str) -> PyResult<(bool, Option<f64>)> {
    let req: CapacityRequest = serde_json::from_str(request_json).map_err(err)?;
    let r = scenario::capacity(None, &req).map_err(err)?;
    Ok((r.feasible, r.max_payload_kg))
}

/// Run a scenario file; returns (pass, values, report JSON).
#[pyfunction]
fn run_scenario(path: &str) -> PyResult<(Option<bool>, BTreeMap<String, f64>, String)> {
    let s = Scenario::load(path).map_err(err)?;
    let r = scenario::run_scenario(&s);
    let json = serde_json::to_string(&r).map_err(err)?;
    Ok((r.pass, r.values, json))
}

/// Square-wave force tracking on the backlash plant: (RMS error ratio, attenuation).
#[pyfunction]
#[pyo3(signature = (frequency_hz, backlash_rad = None, periods = 20))]
fn force_tracking(frequency_hz: f64, backlash_rad: Option<f64>, periods: usize) -> PyResult<(f64, f64)> {
    if !(frequency_hz > 0.0) {
        return Err(err("frequency must be positive"));
    }
    let mut p = ControlParams::default();
    if let Some(b) = backlash_rad {
        p.backlash_rad = b;
    }
    p.validate().map_err(err)?;
    let wave = SquareWave { low_n: 10.0, high_n: 30.0, frequency_hz };
    let m = control::simulate_force_tracking(&p, wave, periods).metrics();
    Ok((m.rms_error_ratio, m.attenuation))
}

/// Normalized speed (1/s), payload and workload from raw numbers.
#[pyfunction]
fn normalized_metrics(speed_m_s: f64, body_length_m: f64, payload_kg: f64, robot_mass_kg: f64) -> (f64, f64, f64) {
    let m = gait::metrics_from_speed(speed_m_s, body_length_m, payload_kg, robot_mass_kg, 0.0, 0.0);
    (m.normalized_speed_per_s, m.normalized_payload, m.normalized_workload)
}

#[pymodule]
fn quadclimb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRobotModel>()?;
    m.add_class::<PyPhasePlan>()?;
    m.add_function(wrap_pyfunction!(plan_shift_cycle, m)?)?;
    m.add_function(wrap_pyfunction!(plan_trot, m)?)?;
    m.add_function(wrap_pyfunction!(inscribe_ellipsoid, m)?)?;
    m.add_function(wrap_pyfunction!(capacity, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(force_tracking, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_metrics, m)?)?;
    Ok(())
}
