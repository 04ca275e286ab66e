//! Simulated execution layer: joint servo, admittance force loop on a
//! compliant plant with gear backlash, and gravity sag feedforward.

use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::{GaitError, PhasePlan};
use crate::model::{GravityFrame, RobotModel};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid control parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Virtual dynamics `M·ẍ + B·ẋ + K·x = e`, one set per operational axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceGains {
    pub mass_kg: Vector3<f64>,
    pub damping_n_s_m: Vector3<f64>,
    pub stiffness_n_m: Vector3<f64>,
}

impl AdmittanceGains {
    pub fn uniform(mass_kg: f64, damping_n_s_m: f64, stiffness_n_m: f64) -> Self {
        Self {
            mass_kg: Vector3::repeat(mass_kg),
            damping_n_s_m: Vector3::repeat(damping_n_s_m),
            stiffness_n_m: Vector3::repeat(stiffness_n_m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    /// Joint command rate; commands are held between ticks.
    pub command_rate_hz: f64,
    /// Force sensor sampling rate.
    pub sensor_rate_hz: f64,
    /// Integration rate of the simulated plant.
    pub plant_rate_hz: f64,
    /// Proportional gain of the joint position loop, 1/s.
    pub position_gain_per_s: f64,
    pub velocity_limits_rad_s: Vec<f64>,
    /// Calibrated against the force-loop breakdown near 10 Hz, not measured.
    pub admittance: AdmittanceGains,
    /// Total play of the joint output, rad.
    pub backlash_rad: f64,
    /// Lever from the force joint to the toe, m.
    pub lever_arm_m: f64,
    pub contact_stiffness_n_m: f64,
    pub contact_damping_n_s_m: f64,
    /// Reference shift per unit of sag-inducing gravity, m per m/s².
    pub sag_gain_m_per_m_s2: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            command_rate_hz: 150.0,
            sensor_rate_hz: 400.0,
            plant_rate_hz: 1200.0,
            position_gain_per_s: 120.0,
            velocity_limits_rad_s: vec![15.0, 15.0, 15.0, 6.0, 6.0, 6.0],
            admittance: AdmittanceGains::uniform(2.0, 200.0, 100.0),
            backlash_rad: 0.01,
            lever_arm_m: 0.20,
            contact_stiffness_n_m: 10_000.0,
            contact_damping_n_s_m: 100.0,
            sag_gain_m_per_m_s2: 0.0005,
        }
    }
}

impl ControlParams {
    pub fn for_model(model: &RobotModel) -> Self {
        Self {
            velocity_limits_rad_s: model.joint_velocity_limits_rad_s.to_vec(),
            ..Self::default()
        }
    }

    pub fn command_dt(&self) -> f64 {
        1.0 / self.command_rate_hz
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let rates = [self.command_rate_hz, self.sensor_rate_hz, self.plant_rate_hz];
        if rates.iter().any(|r| !(*r > 0.0)) {
            return Err(ControlError::Invalid("rates must be positive".into()));
        }
        if self.admittance.mass_kg.iter().any(|m| !(*m > 0.0)) {
            return Err(ControlError::Invalid("virtual mass must be positive".into()));
        }
        if self.velocity_limits_rad_s.iter().any(|v| !(*v > 0.0)) {
            return Err(ControlError::Invalid("velocity limits must be positive".into()));
        }
        if self.backlash_rad < 0.0 || !(self.lever_arm_m > 0.0) {
            return Err(ControlError::Invalid("backlash must be non-negative and lever positive".into()));
        }
        if self.contact_stiffness_n_m <= 0.0 || self.contact_damping_n_s_m < 0.0 {
            return Err(ControlError::Invalid("contact stiffness must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub positions_rad: Vec<f64>,
    /// Velocity command currently being held.
    pub velocities_rad_s: Vec<f64>,
}

impl JointState {
    pub fn at_rest(positions_rad: &[f64]) -> Self {
        Self {
            positions_rad: positions_rad.to_vec(),
            velocities_rad_s: vec![0.0; positions_rad.len()],
        }
    }
}

/// Proportional position loop producing clipped velocity commands. The
/// command is held for `dt` and the joint integrates it exactly.
pub fn position_step(params: &ControlParams, state: &JointState, reference: &[f64], dt: f64) -> (Vec<f64>, JointState) {
    let commands: Vec<f64> = state
        .positions_rad
        .iter()
        .zip(reference)
        .enumerate()
        .map(|(i, (q, r))| {
            let limit = params.velocity_limits_rad_s.get(i).copied().unwrap_or(f64::INFINITY);
            (params.position_gain_per_s * (r - q)).clamp(-limit, limit)
        })
        .collect();
    let positions = state.positions_rad.iter().zip(&commands).map(|(q, v)| q + v * dt).collect();
    let next = JointState {
        positions_rad: positions,
        velocities_rad_s: commands.clone(),
    };
    (commands, next)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceState {
    pub offset_m: Vector3<f64>,
    pub rate_m_s: Vector3<f64>,
}

/// One semi-implicit Euler step of the virtual dynamics driven by the wrench error.
pub fn admittance_step(params: &ControlParams, state: &AdmittanceState, wrench_error_n: &Vector3<f64>, dt: f64) -> AdmittanceState {
    let g = &params.admittance;
    let mut next = *state;
    for i in 0..3 {
        let acc = (wrench_error_n[i] - g.damping_n_s_m[i] * state.rate_m_s[i] - g.stiffness_n_m[i] * state.offset_m[i])
            / g.mass_kg[i];
        next.rate_m_s[i] = state.rate_m_s[i] + dt * acc;
        next.offset_m[i] = state.offset_m[i] + dt * next.rate_m_s[i];
    }
    next
}

/// Shift a toe reference against the sag-inducing part of gravity.
///
/// Up to a vertical wall only the in-plane component sags the limbs; past
/// vertical the full weight acts and the correction follows it, which on a
/// ceiling points along the wall normal.
pub fn sag_feedforward(params: &ControlParams, gravity: &GravityFrame, nominal: &Vector3<f64>) -> Vector3<f64> {
    let sag = if gravity.wall_inclination_deg <= 90.0 {
        gravity.tangential()
    } else {
        gravity.gravity_m_s2
    };
    nominal - params.sag_gain_m_per_m_s2 * sag
}

/// Single-axis force plant: motor, gear play, then a spring-damper contact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub motor_rad: f64,
    pub motor_rate_rad_s: f64,
    pub output_rad: f64,
    pub output_rate_rad_s: f64,
    /// Output position minus motor position, within half the play either way.
    pub backlash_offset_rad: f64,
    pub force_n: f64,
}

impl PlantState {
    pub fn step(&mut self, params: &ControlParams, motor_rate_rad_s: f64, dt: f64) {
        let half = 0.5 * params.backlash_rad;
        self.motor_rate_rad_s = motor_rate_rad_s;
        self.motor_rad += motor_rate_rad_s * dt;
        let previous = self.output_rad;
        self.output_rad = self.output_rad.clamp(self.motor_rad - half, self.motor_rad + half);
        self.output_rate_rad_s = (self.output_rad - previous) / dt;
        self.backlash_offset_rad = self.output_rad - self.motor_rad;
        let x = params.lever_arm_m * self.output_rad;
        let xd = params.lever_arm_m * self.output_rate_rad_s;
        self.force_n = (params.contact_stiffness_n_m * x + params.contact_damping_n_s_m * xd).max(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquareWave {
    pub low_n: f64,
    pub high_n: f64,
    pub frequency_hz: f64,
}

impl SquareWave {
    pub fn value(&self, t: f64) -> f64 {
        if (t * self.frequency_hz).fract() < 0.5 {
            self.high_n
        } else {
            self.low_n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t_s: f64,
    pub reference_n: f64,
    pub measured_n: f64,
    pub offset_m: f64,
    pub joint_reference_rad: f64,
    pub velocity_command_rad_s: f64,
    pub motor_rad: f64,
    pub output_rad: f64,
    pub backlash_offset_rad: f64,
    pub force_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceTrace {
    pub wave: SquareWave,
    pub samples: Vec<TraceSample>,
}

/// Closed-loop force tracking of a square wave. The admittance loop and
/// servo run at the command rate, the force sensor at the sensor rate and
/// the plant at the plant rate.
pub fn simulate_force_tracking(params: &ControlParams, wave: SquareWave, periods: usize) -> ForceTrace {
    let plant_dt = 1.0 / params.plant_rate_hz;
    let steps = (periods as f64 / wave.frequency_hz * params.plant_rate_hz).round() as usize;
    let command_every = (params.plant_rate_hz / params.command_rate_hz).round().max(1.0) as usize;
    let sensor_every = (params.plant_rate_hz / params.sensor_rate_hz).round().max(1.0) as usize;
    let dt = command_every as f64 * plant_dt;

    let mut plant = PlantState::default();
    let mut admittance = AdmittanceState::default();
    let mut servo = JointState::at_rest(&[0.0]);
    let mut measured = 0.0;
    let mut command = 0.0;
    let mut joint_reference = 0.0;
    let mut samples = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * plant_dt;
        let reference = wave.value(t);
        if k % sensor_every == 0 {
            measured = plant.force_n;
        }
        if k % command_every == 0 {
            // the compliance is along +x of the admittance frame
            let error = Vector3::new(reference - measured, 0.0, 0.0);
            admittance = admittance_step(params, &admittance, &error, dt);
            joint_reference = admittance.offset_m.x / params.lever_arm_m;
            servo.positions_rad[0] = plant.motor_rad;
            let (cmd, next) = position_step(params, &servo, &[joint_reference], dt);
            command = cmd[0];
            servo = next;
        }
        plant.step(params, command, plant_dt);
        samples.push(TraceSample {
            t_s: t + plant_dt,
            reference_n: reference,
            measured_n: measured,
            offset_m: admittance.offset_m.x,
            joint_reference_rad: joint_reference,
            velocity_command_rad_s: command,
            motor_rad: plant.motor_rad,
            output_rad: plant.output_rad,
            backlash_offset_rad: plant.backlash_offset_rad,
            force_n: plant.force_n,
        });
    }
    ForceTrace { wave, samples }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    /// Plateau RMS error over the step size.
    pub rms_error_ratio: f64,
    /// Plateau high-minus-low force over the reference step.
    pub amplitude_ratio: f64,
    pub attenuation: f64,
}

impl ForceTrace {
    /// Metrics over the settled half of every half-period, skipping the first period.
    pub fn metrics(&self) -> TrackingMetrics {
        let w = &self.wave;
        let step = w.high_n - w.low_n;
        let (mut sq, mut n) = (0.0, 0usize);
        let (mut hi, mut nh, mut lo, mut nl) = (0.0, 0usize, 0.0, 0usize);
        for s in &self.samples {
            let cycles = s.t_s * w.frequency_hz;
            let phase = cycles.fract();
            if cycles < 1.0 || !((0.25..0.5).contains(&phase) || phase >= 0.75) {
                continue;
            }
            let reference = w.value(s.t_s);
            sq += (s.force_n - reference).powi(2);
            n += 1;
            if reference == w.high_n {
                hi += s.force_n;
                nh += 1;
            } else {
                lo += s.force_n;
                nl += 1;
            }
        }
        let rms = (sq / n.max(1) as f64).sqrt();
        let amplitude = hi / nh.max(1) as f64 - lo / nl.max(1) as f64;
        TrackingMetrics {
            rms_error_ratio: rms / step,
            amplitude_ratio: amplitude / step,
            attenuation: 1.0 - amplitude / step,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ControlError> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Servo tracking of a plan's joint trajectory at the command rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionSummary {
    pub ticks: usize,
    pub max_tracking_error_rad: f64,
    pub peak_command_rad_s: f64,
    /// Fraction of joint commands that hit their velocity limit.
    pub saturated_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub t_s: f64,
    pub limb: usize,
    pub joint: usize,
    pub reference_rad: f64,
    pub position_rad: f64,
    pub command_rad_s: f64,
}

/// Run the joint servo against the plan replayed at the command rate.
pub fn execute_plan(
    params: &ControlParams,
    model: &RobotModel,
    plan: &PhasePlan,
    log: Option<&mut Vec<CommandRecord>>,
) -> Result<ExecutionSummary, GaitError> {
    let refs = plan.replay(model, params.command_rate_hz)?;
    let dt = params.command_dt();
    let mut log = log;
    let mut states: Vec<JointState> = match refs.first() {
        Some((_, q)) => q.iter().map(|c| JointState::at_rest(&c.q)).collect(),
        None => return Ok(ExecutionSummary { ticks: 0, max_tracking_error_rad: 0.0, peak_command_rad_s: 0.0, saturated_fraction: 0.0 }),
    };
    let (mut worst, mut peak, mut saturated, mut total) = (0.0_f64, 0.0_f64, 0usize, 0usize);
    for (t, q) in &refs {
        for (limb, state) in states.iter_mut().enumerate() {
            let reference = &q[limb].q;
            let (cmd, next) = position_step(params, state, reference, dt);
            for j in 0..cmd.len() {
                worst = worst.max((reference[j] - state.positions_rad[j]).abs());
                peak = peak.max(cmd[j].abs());
                let limit = params.velocity_limits_rad_s.get(j).copied().unwrap_or(f64::INFINITY);
                if cmd[j].abs() >= limit {
                    saturated += 1;
                }
                total += 1;
                if let Some(log) = log.as_deref_mut() {
                    log.push(CommandRecord {
                        t_s: *t,
                        limb,
                        joint: j,
                        reference_rad: reference[j],
                        position_rad: state.positions_rad[j],
                        command_rad_s: cmd[j],
                    });
                }
            }
            *state = next;
        }
    }
    Ok(ExecutionSummary {
        ticks: refs.len(),
        max_tracking_error_rad: worst,
        peak_command_rad_s: peak,
        saturated_fraction: saturated as f64 / total.max(1) as f64,
    })
}

pub fn write_command_log<W: Write>(records: &[CommandRecord], out: W) -> Result<(), ControlError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_at_state_gives_zero_command() {
        let p = ControlParams::default();
        let s = JointState::at_rest(&[0.1, -0.2, 0.3]);
        let (cmd, next) = position_step(&p, &s, &[0.1, -0.2, 0.3], p.command_dt());
        assert!(cmd.iter().all(|c| *c == 0.0));
        assert_eq!(next.positions_rad, s.positions_rad);
    }

    #[test]
    fn admittance_rest_and_static_gain() {
        let p = ControlParams::default();
        let s = admittance_step(&p, &AdmittanceState::default(), &Vector3::zeros(), p.command_dt());
        assert_eq!(s.offset_m, Vector3::zeros());
        let f = Vector3::new(5.0, -2.0, 1.0);
        let mut s = AdmittanceState::default();
        for _ in 0..20_000 {
            s = admittance_step(&p, &s, &f, p.command_dt());
        }
        let expect = f.component_div(&p.admittance.stiffness_n_m);
        assert!((s.offset_m - expect).norm() < 1e-12);
    }

    #[test]
    fn sag_is_zero_on_ground() {
        let p = ControlParams::default();
        let x = Vector3::new(0.1, 0.2, -0.2);
        assert_eq!(sag_feedforward(&p, &GravityFrame::ground(), &x), x);
    }
}
