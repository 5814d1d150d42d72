//! Closed-loop simulation: a controller sampled at the control rate (torque
//! held between updates), scheduled force pulses and a recorded trace.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::{impedance_torque, pdplus_torque, CartesianSample, ImpedanceGains, PdPlusGains, Reference};
use crate::dynamics::{energy, ContactModel, ExternalLoad, ForceTarget, ForwardModel, Integrator, RobotState};
use crate::error::{Error, Result};
use crate::kinematics::ChainKinematics;
use crate::robot::RobotDescription;
use crate::trace::{SimTrace, TraceRow};

/// Force pulse applied over `[start, start + duration)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub start: f64,
    pub duration: f64,
    #[serde(default = "default_target")]
    pub target: ForceTarget,
    /// World-frame force (N).
    pub force: [f64; 3],
}

fn default_target() -> ForceTarget {
    ForceTarget::EndEffector
}

impl Disturbance {
    pub fn active(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

pub enum Controller<'a> {
    /// Zero motor input.
    Passive,
    /// Fixed motor input.
    Constant(DVector<f64>),
    PdPlus {
        gains: PdPlusGains,
        reference: &'a dyn Reference,
    },
    Impedance {
        gains: ImpedanceGains,
        target: Vector3<f64>,
        posture: DVector<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub dt: f64,
    pub duration: f64,
    /// Controller updates per second; `None` updates every step.
    pub control_rate: Option<f64>,
    pub integrator: Integrator,
    pub contact: ContactModel,
    /// Force applied during the whole run (in addition to disturbances).
    pub constant_load: ExternalLoad,
    pub disturbances: Vec<Disturbance>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            duration: 5.0,
            control_rate: None,
            integrator: Integrator::Rk4,
            contact: ContactModel::default(),
            constant_load: ExternalLoad::none(),
            disturbances: Vec::new(),
        }
    }
}

impl SimulationConfig {
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Number of integration steps between controller updates.
    pub fn decimation(&self) -> Result<usize> {
        match self.control_rate {
            None => Ok(1),
            Some(rate) => {
                if !(rate > 0.0) {
                    return Err(Error::Config(format!("control rate must be > 0, got {rate}")));
                }
                Ok(((1.0 / self.dt) / rate).round().max(1.0) as usize)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be > 0, got {}", self.duration)));
        }
        for d in &self.disturbances {
            if !(d.duration > 0.0) {
                return Err(Error::Config("disturbance duration must be > 0".into()));
            }
        }
        self.contact.validate()?;
        self.decimation()?;
        Ok(())
    }

    pub fn load_at(&self, t: f64) -> ExternalLoad {
        let mut load = self.constant_load.clone();
        for d in self.disturbances.iter().filter(|d| d.active(t)) {
            load.forces.push((d.target, Vector3::from(d.force)));
        }
        load
    }
}

struct Command {
    tau: DVector<f64>,
    q_d: Option<DVector<f64>>,
    qdot_d: Option<DVector<f64>>,
    x_d: Option<Vector3<f64>>,
    sigma: Vec<f64>,
}

fn command(controller: &Controller<'_>, state: &RobotState, robot: &RobotDescription) -> Result<Command> {
    let n = robot.dof();
    Ok(match controller {
        Controller::Passive => Command { tau: DVector::zeros(n), q_d: None, qdot_d: None, x_d: None, sigma: vec![] },
        Controller::Constant(tau) => {
            robot.check_dimension("torque", tau)?;
            Command { tau: tau.clone(), q_d: None, qdot_d: None, x_d: None, sigma: vec![] }
        }
        Controller::PdPlus { gains, reference } => {
            let sample = reference.sample(state.t);
            let out = pdplus_torque(state, &sample, gains, robot)?;
            Command {
                tau: out.tau,
                q_d: Some(sample.q),
                qdot_d: Some(sample.qdot),
                x_d: None,
                sigma: out.compensation.sigma,
            }
        }
        Controller::Impedance { gains, target, posture } => {
            let out = impedance_torque(state, &CartesianSample::setpoint(state.t, *target), posture, gains, robot)?;
            Command { tau: out.tau, q_d: None, qdot_d: None, x_d: Some(*target), sigma: vec![] }
        }
    })
}

/// Runs the closed loop from `initial` for `config.duration` seconds and
/// records every integration step.
pub fn simulate(
    robot: &RobotDescription,
    initial: &RobotState,
    controller: &Controller<'_>,
    config: &SimulationConfig,
) -> Result<SimTrace> {
    config.validate()?;
    initial.validate(robot)?;
    let model = ForwardModel::new(robot, config.contact)?.with_integrator(config.integrator);
    let dec = config.decimation()?;
    let steps = config.steps();
    let mut trace = SimTrace::new(robot.coordinate_names(), robot.module_count(), config.dt);
    trace.rows.reserve(steps + 1);
    let mut state = initial.clone();
    let mut cmd = command(controller, &state, robot)?;
    for k in 0..=steps {
        // exact multiples of dt keep time stamps reproducible
        state.t = initial.t + k as f64 * config.dt;
        if k % dec == 0 && k > 0 {
            cmd = command(controller, &state, robot)?;
        }
        let load = config.load_at(state.t);
        let ch = ChainKinematics::unchecked(robot, &state.q);
        trace.rows.push(TraceRow {
            t: state.t,
            q: state.q.clone(),
            qdot: state.qdot.clone(),
            tau: cmd.tau.clone(),
            f_ext: load.end_effector_force(),
            gaps: robot.plate_gaps(&state.q),
            energy: energy(&state, robot)?,
            x: ch.end_effector.translation,
            q_d: cmd.q_d.clone(),
            qdot_d: cmd.qdot_d.clone(),
            x_d: cmd.x_d,
            sigma: cmd.sigma.clone(),
        });
        if k < steps {
            state = model.step(&state, &cmd.tau, &load, config.dt)?;
            robot.check_configuration(&state.q)?;
        }
    }
    Ok(trace)
}
