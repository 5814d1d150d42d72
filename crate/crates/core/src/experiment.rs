//! Experiment configurations and the runner used by the `softrigid` binary.
//!
//! A run writes into its output directory:
//!
//! * `trace.csv` for simulated kinds (columns documented in [`crate::trace`]),
//!   `points.csv` (`x,y,z`) for `workspace`, `stiffness.csv` for `stiffness`;
//! * `summary.csv` with two columns `metric,value`;
//! * `report.txt`, a human-readable summary plus any invariant violations;
//! * `effective-config.toml`, the normalized spec. Running it again
//!   reproduces the outputs.
//!
//! Summary metrics for simulated kinds, in order: `duration`, `samples`,
//! `settling_time` (first time after which the error stays within
//! `settle_tolerance`, NaN if never), `steady_state_error` (error at the last
//! sample), `min_gap`, `min_gap_<i>` per module, `median_cartesian_error`,
//! `max_cartesian_error`. For PD+ kinds the error is `max_i |q_i − q_d,i|` and
//! the Cartesian error is `‖x − FK(q_d)‖` over samples whose reference lies
//! inside the compression limits (NaN if none does). For `impedance` the error is
//! `‖x − x_d − K_c⁻¹ f‖` with `f` the constant force, and the Cartesian
//! error is `‖x − x_d‖`.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::analysis::{stiffness_experiment, verify_boundedness, BoundOptions, StiffnessOptions};
use crate::control::{
    default_impedance_spec, CoriolisFeedforward, CubicTrajectory, ImpedanceGains, ImpedanceGainsSpec, PdPlusGains,
    PerCoordinate, Reference, Setpoint, Sinusoid, Waypoint,
};
use crate::dynamics::{ContactModel, ExternalLoad, ForceTarget, Integrator, RobotState};
use crate::error::{Error, Result};
use crate::kinematics::{end_effector_position, workspace_sample};
use crate::robot::{RobotDescription, Segment};
use crate::sim::{simulate, Controller, Disturbance, SimulationConfig};
use crate::trace::SimTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    StepResponse,
    DisturbanceRejection,
    Track,
    Impedance,
    Workspace,
    Stiffness,
    Verify,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::StepResponse => "step-response",
            Self::DisturbanceRejection => "disturbance-rejection",
            Self::Track => "track",
            Self::Impedance => "impedance",
            Self::Workspace => "workspace",
            Self::Stiffness => "stiffness",
            Self::Verify => "verify",
        }
    }

    fn default_duration(self) -> f64 {
        match self {
            Self::StepResponse | Self::Verify => 5.0,
            Self::DisturbanceRejection | Self::Track => 8.0,
            Self::Impedance => 10.0,
            Self::Workspace | Self::Stiffness => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointSpec {
    pub t: f64,
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qdot: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidSpec {
    /// Defaults to the setpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub amplitude: PerCoordinate,
    pub omega: PerCoordinate,
    #[serde(default = "zero_per_coordinate")]
    pub phase: PerCoordinate,
}

fn zero_per_coordinate() -> PerCoordinate {
    PerCoordinate::uniform(0.0, 0.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceTask {
    /// Cartesian target (m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<[f64; 3]>,
    /// Configuration whose end-effector position is the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_q: Option<Vec<f64>>,
    /// Nullspace posture; defaults to the initial configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posture: Option<Vec<f64>>,
    /// End-effector force applied for the whole run (N).
    #[serde(default)]
    pub constant_force: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceTask {
    #[serde(default = "default_workspace_count")]
    pub count: usize,
}

fn default_workspace_count() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StiffnessTask {
    #[serde(default = "default_stiffness_settings")]
    pub delta_l: Vec<f64>,
    /// Test masses (kg).
    #[serde(default = "default_stiffness_masses")]
    pub masses: Vec<f64>,
    #[serde(default = "default_load_arm")]
    pub load_arm: f64,
}

fn default_stiffness_settings() -> Vec<f64> {
    vec![0.0, -0.01, -0.02, -0.03, -0.04, -0.075]
}

fn default_stiffness_masses() -> Vec<f64> {
    vec![0.05, 0.1, 0.2]
}

fn default_load_arm() -> f64 {
    StiffnessOptions::default().load_arm
}

impl Default for StiffnessTask {
    fn default() -> Self {
        Self { delta_l: default_stiffness_settings(), masses: default_stiffness_masses(), load_arm: default_load_arm() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyTask {
    /// Audit an existing trace instead of simulating one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
    #[serde(default = "default_transient")]
    pub transient: f64,
    #[serde(default = "default_vdot_tolerance")]
    pub vdot_tolerance: f64,
}

fn default_sample_count() -> usize {
    BoundOptions::default().sample_count
}
fn default_transient() -> f64 {
    BoundOptions::default().transient
}
fn default_vdot_tolerance() -> f64 {
    BoundOptions::default().vdot_tolerance
}

impl Default for VerifyTask {
    fn default() -> Self {
        Self {
            trace: None,
            sample_count: default_sample_count(),
            transient: default_transient(),
            vdot_tolerance: default_vdot_tolerance(),
        }
    }
}

/// Controller gains file. Absent entries take the robot's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    #[serde(default)]
    pub pdplus: PdPlusSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impedance: Option<ImpedanceGainsSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PdPlusSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kp: Option<PerCoordinate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kd: Option<PerCoordinate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sat_limits: Option<PerCoordinate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coriolis: Option<CoriolisFeedforward>,
}

impl GainsSpec {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read gains file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn pdplus(&self, robot: &RobotDescription) -> Result<PdPlusGains> {
        let mut g = PdPlusGains::default_for(robot);
        let p = &self.pdplus;
        if let Some(v) = &p.kp {
            g.kp = v.resolve(robot, "kp")?;
        }
        if let Some(v) = &p.kd {
            g.kd = v.resolve(robot, "kd")?;
        }
        if let Some(v) = &p.sat_limits {
            g.sat_limits = v.resolve(robot, "sat_limits")?;
        }
        if let Some(v) = p.k_c {
            g.k_c = v;
        }
        if let Some(v) = p.coriolis {
            g.coriolis = v;
        }
        g.validate(robot)?;
        Ok(g)
    }

    pub fn impedance(&self, robot: &RobotDescription) -> Result<ImpedanceGains> {
        ImpedanceGains::from_spec(self.impedance.as_ref().unwrap_or(&default_impedance_spec()), robot)
    }
}

/// One experiment. Optional entries are filled by [`ExperimentSpec::normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Robot description file; the built-in four-module robot if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<PathBuf>,
    /// Gains file; defaults for the robot if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<PathBuf>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Controller updates per second; every integration step if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_rate: Option<f64>,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub contact: ContactModel,
    /// Largest tolerated plate interpenetration (m).
    #[serde(default = "default_contact_tolerance")]
    pub contact_tolerance: f64,
    #[serde(default = "default_settle_tolerance")]
    pub settle_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setpoint: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinusoid: Option<SinusoidSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impedance: Option<ImpedanceTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workspace: Option<WorkspaceTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness: Option<StiffnessTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyTask>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<WaypointSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disturbances: Vec<Disturbance>,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_contact_tolerance() -> f64 {
    1e-3
}
fn default_settle_tolerance() -> f64 {
    1e-3
}

/// Setpoint used when none is given: a moderate pose of every coordinate,
/// scaled with module length.
pub fn default_setpoint(robot: &RobotDescription) -> DVector<f64> {
    const JOINTS: [f64; 4] = [0.3, -0.2, 0.25, 0.15];
    const MODULES: [[f64; 3]; 4] =
        [[0.01, -0.008, -0.01], [0.006, 0.01, -0.005], [-0.01, 0.0, -0.02], [0.008, 0.008, 0.0]];
    let mut q = DVector::zeros(robot.dof());
    let (mut j, mut m) = (0, 0);
    for (i, seg) in robot.segments().iter().enumerate() {
        let o = robot.segment_offset(i);
        match seg {
            Segment::Joint(_) => {
                q[o] = JOINTS[j % 4];
                j += 1;
            }
            Segment::Module(sm) => {
                let scale = sm.geometry.rest_length / 0.075;
                for a in 0..3 {
                    q[o + a] = MODULES[m % 4][a] * scale;
                }
                m += 1;
            }
        }
    }
    q
}

fn default_sinusoid(robot: &RobotDescription) -> SinusoidSpec {
    let l = robot.modules().map(|s| s.module.geometry.rest_length).fold(f64::INFINITY, f64::min);
    let scale = if l.is_finite() { l / 0.075 } else { 1.0 };
    SinusoidSpec {
        center: None,
        amplitude: PerCoordinate::uniform(0.2, 0.004 * scale, 0.005 * scale),
        omega: PerCoordinate::uniform(2.0, 2.0, 2.0),
        phase: zero_per_coordinate(),
    }
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn resolve_path(base: &Path, p: &Path) -> Result<PathBuf> {
    let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::fs::canonicalize(&full)
        .map_err(|e| Error::Config(format!("referenced path {} is not resolvable: {e}", full.display())))
}

fn vector(robot: &RobotDescription, what: &'static str, v: &[f64]) -> Result<DVector<f64>> {
    let v = DVector::from_vec(v.to_vec());
    robot.check_dimension(what, &v)?;
    Ok(v)
}

fn configuration(robot: &RobotDescription, what: &'static str, v: &[f64]) -> Result<DVector<f64>> {
    let q = vector(robot, what, v)?;
    robot.check_configuration(&q).map_err(|e| Error::Config(format!("{what}: {e}")))?;
    Ok(q)
}

impl ExperimentSpec {
    /// Defaults for `kind` with every optional entry left empty.
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            robot: None,
            gains: None,
            dt: default_dt(),
            duration: None,
            seed: 0,
            output: default_output(),
            control_rate: None,
            integrator: Integrator::default(),
            contact: ContactModel::default(),
            contact_tolerance: default_contact_tolerance(),
            settle_tolerance: default_settle_tolerance(),
            initial: None,
            setpoint: None,
            sinusoid: None,
            impedance: None,
            workspace: None,
            stiffness: None,
            verify: None,
            waypoints: Vec::new(),
            disturbances: Vec::new(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment spec serializes")
    }

    pub fn load_robot(&self) -> Result<RobotDescription> {
        match &self.robot {
            Some(p) => RobotDescription::from_toml_file(p)
                .map_err(|e| Error::Config(format!("robot file {}: {e}", p.display()))),
            None => Ok(RobotDescription::four_module_default()),
        }
    }

    pub fn load_gains(&self) -> Result<GainsSpec> {
        match &self.gains {
            Some(p) => GainsSpec::from_toml_file(p),
            None => Ok(GainsSpec::default()),
        }
    }

    /// Resolves paths against `base`, fills defaults for the kind and checks
    /// every invariant. Idempotent.
    pub fn normalize(mut self, base: &Path) -> Result<Self> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        let duration = self.duration.unwrap_or(self.kind.default_duration());
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Config(format!("duration must be > 0, got {duration}")));
        }
        self.duration = Some(duration);
        if let Some(rate) = self.control_rate {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::Config(format!("control_rate must be > 0, got {rate}")));
            }
        }
        if !(self.contact_tolerance >= 0.0) || !(self.settle_tolerance > 0.0) {
            return Err(Error::Config("contact_tolerance must be >= 0 and settle_tolerance > 0".into()));
        }
        self.contact.validate()?;
        if let Some(p) = &self.robot {
            self.robot = Some(resolve_path(base, p)?);
        }
        if let Some(p) = &self.gains {
            self.gains = Some(resolve_path(base, p)?);
        }
        if !self.output.is_absolute() {
            self.output = base.join(&self.output);
        }
        let robot = self.load_robot()?;
        let gains = self.load_gains()?;
        let initial = match &self.initial {
            Some(v) => configuration(&robot, "initial", v)?,
            None => DVector::zeros(robot.dof()),
        };
        self.initial = Some(to_vec(&initial));
        for (i, d) in self.disturbances.iter().enumerate() {
            if !(d.duration > 0.0 && d.start >= 0.0) || d.force.iter().any(|f| !f.is_finite()) {
                return Err(Error::Config(format!("disturbance {i}: need start >= 0, duration > 0, finite force")));
            }
        }
        use ExperimentKind::*;
        let uses_setpoint = matches!(self.kind, StepResponse | DisturbanceRejection)
            || (matches!(self.kind, Track | Verify) && self.waypoints.is_empty())
            || (self.kind == Impedance
                && self.impedance.as_ref().is_none_or(|t| t.target.is_none() && t.target_q.is_none()));
        if uses_setpoint || self.setpoint.is_some() {
            let sp = match &self.setpoint {
                Some(v) => vector(&robot, "setpoint", v)?,
                None => default_setpoint(&robot),
            };
            self.setpoint = Some(to_vec(&sp));
        }
        match self.kind {
            StepResponse => {
                gains.pdplus(&robot)?;
            }
            DisturbanceRejection => {
                gains.pdplus(&robot)?;
                if self.disturbances.is_empty() {
                    self.disturbances = vec![
                        Disturbance {
                            start: 2.0,
                            duration: 0.1,
                            target: ForceTarget::EndEffector,
                            force: [2.0, 0.0, 0.0],
                        },
                        Disturbance {
                            start: 5.0,
                            duration: 0.1,
                            target: ForceTarget::EndEffector,
                            force: [0.0, -2.0, 1.0],
                        },
                    ];
                }
            }
            Track | Verify => {
                gains.pdplus(&robot)?;
                if !self.waypoints.is_empty() {
                    self.sinusoid = None;
                    self.reference(&robot)?;
                } else {
                    let mut s = self.sinusoid.clone().unwrap_or_else(|| default_sinusoid(&robot));
                    let center = match &s.center {
                        Some(c) => vector(&robot, "sinusoid center", c)?,
                        None => DVector::from_vec(self.setpoint.clone().expect("filled above")),
                    };
                    s.center = Some(to_vec(&center));
                    for (what, p) in [("amplitude", &mut s.amplitude), ("omega", &mut s.omega), ("phase", &mut s.phase)]
                    {
                        let v = p.resolve(&robot, what)?;
                        if v.iter().any(|x| !x.is_finite()) {
                            return Err(Error::Config(format!("sinusoid {what} must be finite")));
                        }
                        *p = PerCoordinate::Full(to_vec(&v));
                    }
                    self.sinusoid = Some(s);
                }
                if self.kind == Verify {
                    let mut v = self.verify.clone().unwrap_or_default();
                    if let Some(p) = &v.trace {
                        v.trace = Some(resolve_path(base, p)?);
                    }
                    if v.sample_count < 100 || !(v.transient >= 0.0) || !(v.vdot_tolerance >= 0.0) {
                        return Err(Error::Config(
                            "verify needs sample_count >= 100, transient >= 0, vdot_tolerance >= 0".into(),
                        ));
                    }
                    self.verify = Some(v);
                }
            }
            Impedance => {
                gains.impedance(&robot)?;
                let mut task = self.impedance.clone().unwrap_or_default();
                if task.target.is_some() && task.target_q.is_some() {
                    return Err(Error::Config("impedance: give either target or target_q, not both".into()));
                }
                let target = match (&task.target, &task.target_q) {
                    (Some(x), _) => Vector3::from(*x),
                    (None, Some(q)) => end_effector_position(&configuration(&robot, "target_q", q)?, &robot)?,
                    (None, None) => {
                        let sp = DVector::from_vec(self.setpoint.clone().expect("filled above"));
                        end_effector_position(&configuration(&robot, "setpoint", sp.as_slice())?, &robot)?
                    }
                };
                task.target = Some(target.into());
                task.target_q = None;
                let posture = match &task.posture {
                    Some(p) => vector(&robot, "posture", p)?,
                    None => initial.clone(),
                };
                task.posture = Some(to_vec(&posture));
                self.impedance = Some(task);
            }
            Workspace => {
                let w = self.workspace.clone().unwrap_or(WorkspaceTask { count: default_workspace_count() });
                if w.count == 0 {
                    return Err(Error::Config("workspace count must be >= 1".into()));
                }
                self.workspace = Some(w);
            }
            Stiffness => {
                let s = self.stiffness.clone().unwrap_or_default();
                if s.delta_l.is_empty() || s.masses.is_empty() || !(s.load_arm >= 0.0) {
                    return Err(Error::Config("stiffness needs delta_l and masses lists and load_arm >= 0".into()));
                }
                if let Some(m) = s.masses.iter().find(|m| !(**m > 0.0)) {
                    return Err(Error::Config(format!("stiffness masses must be > 0, got {m}")));
                }
                self.stiffness = Some(s);
            }
        }
        Ok(self)
    }

    fn reference(&self, robot: &RobotDescription) -> Result<Box<dyn Reference>> {
        if !self.waypoints.is_empty() {
            let wps = self
                .waypoints
                .iter()
                .map(|w| {
                    Ok(Waypoint {
                        t: w.t,
                        q: vector(robot, "waypoint q", &w.q)?,
                        qdot: w.qdot.as_ref().map(|v| vector(robot, "waypoint qdot", v)).transpose()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(Box::new(CubicTrajectory::new(&wps)?));
        }
        if let Some(s) = &self.sinusoid {
            let center = match &s.center {
                Some(c) => vector(robot, "sinusoid center", c)?,
                None => DVector::from_vec(self.setpoint.clone().unwrap_or_else(|| to_vec(&default_setpoint(robot)))),
            };
            return Ok(Box::new(Sinusoid {
                center,
                amplitude: s.amplitude.resolve(robot, "amplitude")?,
                omega: s.omega.resolve(robot, "omega")?,
                phase: s.phase.resolve(robot, "phase")?,
            }));
        }
        let sp = self.setpoint.clone().map(DVector::from_vec).unwrap_or_else(|| default_setpoint(robot));
        robot.check_dimension("setpoint", &sp)?;
        Ok(Box::new(Setpoint(sp)))
    }

    fn sim_config(&self, constant_force: [f64; 3]) -> SimulationConfig {
        let f = Vector3::from(constant_force);
        SimulationConfig {
            dt: self.dt,
            duration: self.duration.unwrap_or(self.kind.default_duration()),
            control_rate: self.control_rate,
            integrator: self.integrator,
            contact: self.contact,
            constant_load: if f == Vector3::zeros() { ExternalLoad::none() } else { ExternalLoad::end_effector(f) },
            disturbances: self.disturbances.clone(),
        }
    }

    fn initial_state(&self, robot: &RobotDescription) -> Result<RobotState> {
        let q = match &self.initial {
            Some(v) => configuration(robot, "initial", v)?,
            None => DVector::zeros(robot.dof()),
        };
        Ok(RobotState::new(q, DVector::zeros(robot.dof()), 0.0))
    }
}

/// Reads, normalizes and validates an experiment file. Relative paths are
/// taken relative to the file's directory.
pub fn validate_config(path: &Path) -> Result<ExperimentSpec> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let spec: ExperimentSpec = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    spec.normalize(base)
}

/// Named scalar results in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub metrics: Vec<(String, f64)>,
}

impl Summary {
    fn push(&mut self, name: impl Into<String>, v: f64) {
        self.metrics.push((name.into(), v));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wr = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
        let csv_err = |e: csv::Error| Error::Csv(e.to_string());
        wr.write_record(["metric", "value"]).map_err(csv_err)?;
        for (n, v) in &self.metrics {
            wr.write_record([n.clone(), format!("{v:?}")]).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.metrics.iter().map(|(n, v)| format!("{n:<28} {v:.6e}\n")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: ExperimentSpec,
    pub summary: Summary,
    /// Invariant violations; empty on success.
    pub violations: Vec<String>,
    pub artifacts: Vec<PathBuf>,
    pub trace: Option<SimTrace>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Time after which `err` stays within `tol`, NaN if it never does.
fn settling_time(times: &[f64], err: &[f64], tol: f64) -> f64 {
    match err.iter().rposition(|e| !(*e <= tol)) {
        None => times.first().copied().unwrap_or(f64::NAN),
        Some(i) if i + 1 < times.len() => times[i + 1],
        Some(_) => f64::NAN,
    }
}

fn trace_summary(
    trace: &SimTrace,
    robot: &RobotDescription,
    error: &[f64],
    cartesian: &[f64],
    settle_tolerance: f64,
) -> Summary {
    let mut s = Summary::default();
    let times: Vec<f64> = trace.rows.iter().map(|r| r.t).collect();
    s.push("duration", times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0));
    s.push("samples", trace.len() as f64);
    s.push("settling_time", settling_time(&times, error, settle_tolerance));
    s.push("steady_state_error", error.last().copied().unwrap_or(f64::NAN));
    let mut per_module = vec![f64::INFINITY; robot.module_count()];
    for r in &trace.rows {
        for (m, c) in per_module.iter_mut().zip(&r.gaps) {
            *m = m.min(*c);
        }
    }
    s.push("min_gap", per_module.iter().copied().fold(f64::INFINITY, f64::min));
    for (i, c) in per_module.iter().enumerate() {
        s.push(format!("min_gap_{}", i + 1), *c);
    }
    s.push("median_cartesian_error", median(cartesian.to_vec()));
    s.push("max_cartesian_error", cartesian.iter().copied().fold(f64::NAN, f64::max));
    s
}

fn check_trace(trace: &SimTrace, spec: &ExperimentSpec, violations: &mut Vec<String>) {
    if let Err(e) = trace.check_timestamps() {
        violations.push(e.to_string());
    }
    for r in &trace.rows {
        if let Some((i, c)) = r.gaps.iter().enumerate().find(|(_, c)| **c < -spec.contact_tolerance) {
            violations.push(format!(
                "plate gap of module {} reached {c:.3e} m at t = {} (tolerance {:.1e} m)",
                i + 1,
                r.t,
                spec.contact_tolerance
            ));
            break;
        }
    }
}

fn pdplus_metrics(trace: &SimTrace, robot: &RobotDescription) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut err = Vec::with_capacity(trace.len());
    let mut cart = Vec::with_capacity(trace.len());
    for r in &trace.rows {
        let qd = r.q_d.as_ref().ok_or(Error::TraceMetadata("configuration reference"))?;
        err.push((&r.q - qd).amax());
        // references beyond the compression limit have no end-effector position
        if robot.check_configuration(qd).is_ok() {
            cart.push((r.x - end_effector_position(qd, robot)?).norm());
        }
    }
    Ok((err, cart))
}

fn write_text(path: &Path, text: &str, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(path, text)?;
    artifacts.push(path.to_path_buf());
    Ok(())
}

/// Runs a normalized (or raw) spec and writes its artifacts into
/// `spec.output`. Relative paths in a raw spec are taken from the current
/// directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let spec = spec.clone().normalize(Path::new("."))?;
    let robot = spec.load_robot()?;
    let gains = spec.load_gains()?;
    let out = spec.output.clone();
    std::fs::create_dir_all(&out)?;
    let mut artifacts = Vec::new();
    write_text(&out.join("effective-config.toml"), &spec.to_toml_string(), &mut artifacts)?;
    let mut violations = Vec::new();
    let mut report = format!("experiment: {}\nrobot dof: {}\n", spec.kind.name(), robot.dof());
    let mut trace_out = None;

    let summary = match spec.kind {
        ExperimentKind::StepResponse | ExperimentKind::DisturbanceRejection | ExperimentKind::Track => {
            let g = gains.pdplus(&robot)?;
            let reference = spec.reference(&robot)?;
            let ctl = Controller::PdPlus { gains: g, reference: reference.as_ref() };
            let trace = simulate(&robot, &spec.initial_state(&robot)?, &ctl, &spec.sim_config([0.0; 3]))?;
            let (err, cart) = pdplus_metrics(&trace, &robot)?;
            check_trace(&trace, &spec, &mut violations);
            trace_out = Some(trace);
            trace_summary(trace_out.as_ref().unwrap(), &robot, &err, &cart, spec.settle_tolerance)
        }
        ExperimentKind::Impedance => {
            let g = gains.impedance(&robot)?;
            let task = spec.impedance.clone().expect("normalized");
            let target = Vector3::from(task.target.expect("normalized"));
            let posture = DVector::from_vec(task.posture.clone().expect("normalized"));
            let compliance =
                g.k_c.try_inverse().ok_or_else(|| Error::Config("Cartesian stiffness is singular".into()))?
                    * Vector3::from(task.constant_force);
            let ctl = Controller::Impedance { gains: g, target, posture };
            let trace = simulate(&robot, &spec.initial_state(&robot)?, &ctl, &spec.sim_config(task.constant_force))?;
            let err: Vec<f64> = trace.rows.iter().map(|r| (r.x - target - compliance).norm()).collect();
            let cart: Vec<f64> = trace.rows.iter().map(|r| (r.x - target).norm()).collect();
            check_trace(&trace, &spec, &mut violations);
            let mut s = trace_summary(&trace, &robot, &err, &cart, spec.settle_tolerance);
            s.push("compliance_offset", compliance.norm());
            trace_out = Some(trace);
            s
        }
        ExperimentKind::Verify => {
            let v = spec.verify.clone().expect("normalized");
            let g = gains.pdplus(&robot)?;
            let trace = match &v.trace {
                Some(p) => SimTrace::read_csv_file(p)?,
                None => {
                    let reference = spec.reference(&robot)?;
                    let ctl = Controller::PdPlus { gains: g.clone(), reference: reference.as_ref() };
                    simulate(&robot, &spec.initial_state(&robot)?, &ctl, &spec.sim_config([0.0; 3]))?
                }
            };
            let opts = BoundOptions {
                sample_count: v.sample_count,
                seed: spec.seed,
                transient: v.transient,
                vdot_tolerance: v.vdot_tolerance,
            };
            let bound_csv = out.join("bound_report.csv");
            let rep = verify_boundedness(&trace, &g, &robot, &opts, Some(&bound_csv))?;
            artifacts.push(bound_csv);
            report.push_str(&rep.to_text());
            for viol in &rep.violations {
                violations.push(format!("{} violated at t = {} (margin {:.3e})", viol.quantity, viol.t, viol.margin));
            }
            let (err, cart) = pdplus_metrics(&trace, &robot)?;
            check_trace(&trace, &spec, &mut violations);
            let mut s = trace_summary(&trace, &robot, &err, &cart, spec.settle_tolerance);
            s.push("alpha_fc", rep.alpha_fc);
            s.push("mu", rep.mu);
            s.push("ultimate_bound", rep.b);
            s.push("max_state_norm_after_transient", rep.max_state_norm_after_transient);
            s.push("bound_violations", rep.violations.len() as f64);
            trace_out = Some(trace);
            s
        }
        ExperimentKind::Workspace => {
            let count = spec.workspace.as_ref().expect("normalized").count;
            let pts = workspace_sample(&robot, count, spec.seed);
            let path = out.join("points.csv");
            let mut wr = csv::Writer::from_path(&path).map_err(|e| Error::Csv(e.to_string()))?;
            let csv_err = |e: csv::Error| Error::Csv(e.to_string());
            wr.write_record(["x", "y", "z"]).map_err(csv_err)?;
            for p in &pts {
                wr.write_record(p.iter().map(|v| format!("{v:?}"))).map_err(csv_err)?;
            }
            wr.flush()?;
            artifacts.push(path);
            let mut s = Summary::default();
            s.push("count", pts.len() as f64);
            s.push("max_radius", pts.iter().map(|p| p.xy().norm()).fold(0.0, f64::max));
            s.push("min_z", pts.iter().map(|p| p.z).fold(f64::INFINITY, f64::min));
            s.push("max_z", pts.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max));
            s
        }
        ExperimentKind::Stiffness => {
            let task = spec.stiffness.clone().expect("normalized");
            let opts =
                StiffnessOptions { load_arm: task.load_arm, contact: spec.contact, ..StiffnessOptions::default() };
            let table = stiffness_experiment(&robot, &task.delta_l, &task.masses, &opts)?;
            let path = out.join("stiffness.csv");
            table.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
            artifacts.push(path);
            report.push_str(&table.to_text());
            let mut s = Summary::default();
            let base = table.mean_stiffness(task.delta_l[0]).unwrap_or(f64::NAN);
            for (i, dl) in task.delta_l.iter().enumerate() {
                let k = table.mean_stiffness(*dl).unwrap_or(f64::NAN);
                s.push(format!("stiffness_{}", i + 1), k);
                s.push(format!("ratio_{}", i + 1), k / base);
            }
            s
        }
    };

    if let Some(trace) = &trace_out {
        let path = out.join("trace.csv");
        trace.write_csv_file(&path)?;
        artifacts.push(path);
    }
    let path = out.join("summary.csv");
    summary.write_csv(&path)?;
    artifacts.push(path);
    report.push_str(&summary.to_text());
    if violations.is_empty() {
        report.push_str("invariants: ok\n");
    } else {
        report.push_str(&format!("invariants: {} violation(s)\n", violations.len()));
        for v in &violations {
            report.push_str(&format!("  {v}\n"));
        }
    }
    write_text(&out.join("report.txt"), &report, &mut artifacts)?;
    Ok(RunOutcome { spec, summary, violations, artifacts, trace: trace_out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_dt_defaults() {
        let s = ExperimentSpec::from_toml_str("kind = \"step-response\"").unwrap();
        assert_eq!(s.dt, 1e-3);
        let n = s.normalize(Path::new(".")).unwrap();
        assert_eq!(n.duration, Some(5.0));
        assert!(n.to_toml_string().contains("dt = 0.001"));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentSpec::from_toml_str("kind = \"track\"\ndtt = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("dtt"), "{err}");
    }

    #[test]
    fn settling_time_cases() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(settling_time(&t, &[1.0, 0.5, 0.0, 0.0], 0.1), 2.0);
        assert_eq!(settling_time(&t, &[0.0; 4], 0.1), 0.0);
        assert!(settling_time(&t, &[0.0, 0.0, 0.0, 1.0], 0.1).is_nan());
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn echo_round_trips() {
        let n = ExperimentSpec::new(ExperimentKind::Track).normalize(Path::new("/tmp")).unwrap();
        let back = ExperimentSpec::from_toml_str(&n.to_toml_string()).unwrap();
        assert_eq!(back, n);
        assert_eq!(back.clone().normalize(Path::new("/")).unwrap(), n);
    }
}
