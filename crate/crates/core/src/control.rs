//! PD+ control with self-contact compensation, Cartesian impedance control
//! and reference trajectories.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{coriolis_matrix, gravity_forces, mass_matrix_of, rnea_of, RobotState};
use crate::error::{Error, Result};
use crate::geometry::plate_gap;
use crate::kinematics::{actuation_matrix, ChainKinematics};
use crate::robot::{RobotDescription, Segment};

/// Per-coordinate values given either in full or by coordinate kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerCoordinate {
    Full(Vec<f64>),
    ByKind {
        #[serde(default)]
        joint: f64,
        #[serde(default)]
        bend: f64,
        #[serde(default)]
        axial: f64,
    },
}

impl PerCoordinate {
    pub fn uniform(joint: f64, bend: f64, axial: f64) -> Self {
        PerCoordinate::ByKind { joint, bend, axial }
    }

    pub fn resolve(&self, robot: &RobotDescription, what: &'static str) -> Result<DVector<f64>> {
        match self {
            PerCoordinate::Full(v) => {
                if v.len() != robot.dof() {
                    return Err(Error::DimensionMismatch { what, expected: robot.dof(), got: v.len() });
                }
                Ok(DVector::from_vec(v.clone()))
            }
            PerCoordinate::ByKind { joint, bend, axial } => {
                let mut out = DVector::zeros(robot.dof());
                for (i, seg) in robot.segments().iter().enumerate() {
                    let o = robot.segment_offset(i);
                    match seg {
                        Segment::Joint(_) => out[o] = *joint,
                        Segment::Module(_) => {
                            out[o] = *bend;
                            out[o + 1] = *bend;
                            out[o + 2] = *axial;
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Which velocity multiplies `C` in the PD+ feedforward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoriolisFeedforward {
    /// `C(q, q̇) q̇_d`; gives the closed loop used by the boundedness analysis.
    #[default]
    DesiredVelocity,
    /// `C(q, q̇) q̇`.
    ActualVelocity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdPlusGains {
    pub kp: DVector<f64>,
    pub kd: DVector<f64>,
    /// Sigmoid steepness (1/m).
    pub k_c: f64,
    /// Saturation constants `Δmax` (only module coordinates are used).
    pub sat_limits: DVector<f64>,
    pub coriolis: CoriolisFeedforward,
}

impl PdPlusGains {
    pub fn validate(&self, robot: &RobotDescription) -> Result<()> {
        for (what, v) in [("kp", &self.kp), ("kd", &self.kd), ("sat_limits", &self.sat_limits)] {
            robot.check_dimension(what, v)?;
        }
        if self.kp.iter().chain(self.kd.iter()).any(|v| *v < 0.0) {
            return Err(Error::Config("kp and kd must be >= 0".into()));
        }
        if !(self.k_c > 0.0 && self.k_c.is_finite()) {
            return Err(Error::Config(format!("k_c must be > 0, got {}", self.k_c)));
        }
        for s in robot.modules() {
            for i in 0..3 {
                if !(self.sat_limits[s.offset + i] > 0.0) {
                    return Err(Error::Config("sat limits must be > 0 on module coordinates".into()));
                }
            }
        }
        Ok(())
    }

    /// Defaults for a 1 kHz control rate.
    ///
    /// Module damping gains come from the diagonal of `M` in the straight
    /// configuration: the larger of a damping ratio `DEFAULT_DAMPING_RATIO`
    /// and a decay rate `DEFAULT_DECAY_RATE` per coordinate, capped so that
    /// `K_D (M⁻¹)_ii T` stays below 0.5 for the sample time `T` over a fixed
    /// set of admissible configurations.
    pub fn default_for(robot: &RobotDescription) -> Self {
        let kp = PerCoordinate::uniform(3.0, 3000.0, 2000.0).resolve(robot, "kp").expect("by kind");
        let mut kd = PerCoordinate::uniform(0.6, 5.0, 5.0).resolve(robot, "kd").expect("by kind");
        let sat = PerCoordinate::uniform(1.0, 0.03, 0.03).resolve(robot, "sat").expect("by kind");
        let ch = ChainKinematics::unchecked(robot, &DVector::zeros(robot.dof()));
        let m = mass_matrix_of(robot, &ch);
        let k = robot.stiffness_diagonal();
        let mut minv_max = DVector::<f64>::zeros(robot.dof());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let samples = std::iter::once(DVector::zeros(robot.dof()))
            .chain((0..GAIN_SAMPLES).map(|_| robot.sample_admissible(&mut rng)));
        for q in samples {
            let mq = mass_matrix_of(robot, &ChainKinematics::unchecked(robot, &q));
            if let Some(inv) = mq.try_inverse() {
                minv_max = minv_max.zip_map(&inv.diagonal(), f64::max);
            }
        }
        for s in robot.modules() {
            // both bend directions share the tighter bound
            let bend = minv_max[s.offset].max(minv_max[s.offset + 1]);
            minv_max[s.offset] = bend;
            minv_max[s.offset + 1] = bend;
            for i in s.offset..s.offset + 3 {
                let critical = 2.0 * ((k[i] + kp[i]) * m[(i, i)]).sqrt();
                let want = (DEFAULT_DAMPING_RATIO * critical).max(2.0 * DEFAULT_DECAY_RATE * m[(i, i)]);
                let cap = 0.5 / (DEFAULT_SAMPLE_TIME * minv_max[i]);
                kd[i] = want.max(kd[i]).min(cap);
            }
        }
        Self { kp, kd, k_c: 1000.0, sat_limits: sat, coriolis: CoriolisFeedforward::DesiredVelocity }
    }
}

/// Target decay rate (1/s) of the default module damping gains.
pub const DEFAULT_DECAY_RATE: f64 = 2.0;
const GAIN_SAMPLES: usize = 32;

/// Target damping ratio of the default module damping gains.
pub const DEFAULT_DAMPING_RATIO: f64 = 0.7;
/// Control period the default gains are sized for (s).
pub const DEFAULT_SAMPLE_TIME: f64 = 1e-3;

/// `σ(c) = −e^(−k c)/(e^(−k c) + 1)`, in (−1, 0).
pub fn contact_sigmoid(c: f64, k_c: f64) -> f64 {
    let x = k_c * c;
    if x >= 0.0 {
        let e = (-x).exp();
        -e / (e + 1.0)
    } else {
        -1.0 / (1.0 + x.exp())
    }
}

/// `φ(x) = 2Δmax(1 − e^(−x/Δmax))/(1 + e^(−x/Δmax)) = 2Δmax tanh(x/(2Δmax))`.
pub fn saturation(x: f64, delta_max: f64) -> f64 {
    2.0 * delta_max * (x / (2.0 * delta_max)).tanh()
}

#[derive(Debug, Clone)]
pub struct ContactCompensation {
    pub f_c: DVector<f64>,
    pub sigma: Vec<f64>,
    pub gaps: Vec<f64>,
}

/// `F_c,i = σ(c_i(q))·(K̂ q_d − K_P S(q))` on each module's coordinates, zero on joints.
pub fn contact_compensation(
    q: &DVector<f64>,
    q_d: &DVector<f64>,
    gains: &PdPlusGains,
    robot: &RobotDescription,
) -> Result<ContactCompensation> {
    robot.check_dimension("configuration", q)?;
    robot.check_dimension("desired configuration", q_d)?;
    let k = robot.stiffness_diagonal();
    let mut f_c = DVector::zeros(robot.dof());
    let mut sigma = Vec::new();
    let mut gaps = Vec::new();
    for s in robot.modules() {
        let qm = RobotDescription::module_state(q, s.offset);
        let c = plate_gap(&qm, &s.module.geometry);
        let sg = contact_sigmoid(c, gains.k_c);
        for i in s.offset..s.offset + 3 {
            let khat = k[i] + gains.kp[i];
            f_c[i] = sg * (khat * q_d[i] - gains.kp[i] * saturation(q[i], gains.sat_limits[i]));
        }
        sigma.push(sg);
        gaps.push(c);
    }
    Ok(ContactCompensation { f_c, sigma, gaps })
}

/// Configuration-space reference at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub qddot: DVector<f64>,
}

impl TrajectorySample {
    pub fn setpoint(t: f64, q: DVector<f64>) -> Self {
        let n = q.len();
        Self { t, q, qdot: DVector::zeros(n), qddot: DVector::zeros(n) }
    }
}

/// Cartesian reference at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianSample {
    pub t: f64,
    pub x: Vector3<f64>,
    pub xdot: Vector3<f64>,
    pub xddot: Vector3<f64>,
}

impl CartesianSample {
    pub fn setpoint(t: f64, x: Vector3<f64>) -> Self {
        Self { t, x, xdot: Vector3::zeros(), xddot: Vector3::zeros() }
    }
}

#[derive(Debug, Clone)]
pub struct PdPlusOutput {
    /// Motor inputs `τ`.
    pub tau: DVector<f64>,
    /// Generalized force `A τ` requested from the actuators.
    pub generalized_force: DVector<f64>,
    pub compensation: ContactCompensation,
    pub actuation_condition: f64,
}

fn solve_actuation(robot: &RobotDescription, q: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let a = actuation_matrix(q, robot)?;
    if a.is_ill_conditioned() {
        return Err(Error::IllConditioned { condition: a.condition });
    }
    let tau = a.matrix.lu().solve(u).ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    Ok((tau, a.condition))
}

/// `τ = A⁻¹(M q̈_d + C q̇_d + G + K q_d + D q̇_d + K_P(q_d − q) + K_D(q̇_d − q̇) + F_c)`.
pub fn pdplus_torque(
    state: &RobotState,
    sample: &TrajectorySample,
    gains: &PdPlusGains,
    robot: &RobotDescription,
) -> Result<PdPlusOutput> {
    state.validate(robot)?;
    robot.check_dimension("desired configuration", &sample.q)?;
    robot.check_dimension("desired velocity", &sample.qdot)?;
    robot.check_dimension("desired acceleration", &sample.qddot)?;
    let (q, qd) = (&state.q, &state.qdot);
    let ch = ChainKinematics::new(robot, q)?;
    let m = mass_matrix_of(robot, &ch);
    let g = rnea_of(robot, &ch, None, true);
    let k = robot.stiffness_diagonal();
    let d = robot.damping_diagonal();

    let mut u = &m * &sample.qddot + g + k.component_mul(&sample.q) + d.component_mul(&sample.qdot);
    let coriolis_velocity = match gains.coriolis {
        CoriolisFeedforward::DesiredVelocity => &sample.qdot,
        CoriolisFeedforward::ActualVelocity => qd,
    };
    if coriolis_velocity.iter().any(|v| *v != 0.0) {
        u += coriolis_matrix(q, qd, robot)? * coriolis_velocity;
    }
    u += gains.kp.component_mul(&(&sample.q - q));
    u += gains.kd.component_mul(&(&sample.qdot - qd));
    let compensation = contact_compensation(q, &sample.q, gains, robot)?;
    u += &compensation.f_c;
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "controller output", index: i });
    }
    let (tau, cond) = solve_actuation(robot, q, &u)?;
    Ok(PdPlusOutput { tau, generalized_force: u, compensation, actuation_condition: cond })
}

/// Relative eigenvalue of `J M⁻¹ Jᵀ` below which the damped inverse is used.
pub const TASK_DAMPING_THRESHOLD: f64 = 1e-6;
/// Relative eigenvalue below which the task space is treated as singular.
pub const TASK_SINGULAR_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CartesianInertia {
    pub lambda: Matrix3<f64>,
    /// Damping `ε` added to `J M⁻¹ Jᵀ`, zero when not needed.
    pub damping: f64,
    pub min_eigenvalue: f64,
}

fn task_inertia(j: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(CartesianInertia, DMatrix<f64>)> {
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let minv_jt = chol.solve(&j.transpose());
    let inv = j * &minv_jt;
    let inv3 = Matrix3::from_fn(|r, c| 0.5 * (inv[(r, c)] + inv[(c, r)]));
    let eig = SymmetricEigen::new(inv3).eigenvalues;
    let (emin, emax) = (eig.min(), eig.max());
    if !(emax > 0.0) || emin < TASK_SINGULAR_THRESHOLD * emax {
        return Err(Error::SingularTaskSpace { min_eigenvalue: emin });
    }
    let damping = if emin < TASK_DAMPING_THRESHOLD * emax { 1e-6 * inv3.trace() / 3.0 } else { 0.0 };
    let lambda = (inv3 + Matrix3::identity() * damping)
        .try_inverse()
        .ok_or(Error::SingularTaskSpace { min_eigenvalue: emin })?;
    let lambda = (lambda + lambda.transpose()) * 0.5;
    Ok((CartesianInertia { lambda, damping, min_eigenvalue: emin }, minv_jt))
}

/// `Λ = (J M⁻¹ Jᵀ)⁻¹` for the translational Jacobian.
pub fn cartesian_inertia(q: &DVector<f64>, robot: &RobotDescription) -> Result<CartesianInertia> {
    let ch = ChainKinematics::new(robot, q)?;
    let m = mass_matrix_of(robot, &ch);
    Ok(task_inertia(&ch.position_jacobian(), &m)?.0)
}

fn lambda_dmatrix(l: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |r, c| l[(r, c)])
}

/// Dynamically consistent pseudo-inverse `J⁺ = M⁻¹ Jᵀ Λ` (n × 3).
pub fn dyn_consistent_pinv(q: &DVector<f64>, robot: &RobotDescription) -> Result<DMatrix<f64>> {
    let ch = ChainKinematics::new(robot, q)?;
    let m = mass_matrix_of(robot, &ch);
    let (ci, minv_jt) = task_inertia(&ch.position_jacobian(), &m)?;
    Ok(minv_jt * lambda_dmatrix(&ci.lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceGainsSpec {
    /// Cartesian stiffness diagonal (N/m).
    pub stiffness: [f64; 3],
    /// Cartesian damping diagonal (N·s/m).
    pub damping: [f64; 3],
    pub null_kp: PerCoordinate,
    pub null_kd: PerCoordinate,
    #[serde(default = "default_true")]
    pub gravity_compensation: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceGains {
    pub k_c: Matrix3<f64>,
    pub d_c: Matrix3<f64>,
    pub null_kp: DVector<f64>,
    pub null_kd: DVector<f64>,
    /// Adds `G(q)` to the generalized force.
    pub gravity_compensation: bool,
}

impl ImpedanceGains {
    pub fn from_spec(spec: &ImpedanceGainsSpec, robot: &RobotDescription) -> Result<Self> {
        let g = Self {
            k_c: Matrix3::from_diagonal(&Vector3::from(spec.stiffness)),
            d_c: Matrix3::from_diagonal(&Vector3::from(spec.damping)),
            null_kp: spec.null_kp.resolve(robot, "null_kp")?,
            null_kd: spec.null_kd.resolve(robot, "null_kd")?,
            gravity_compensation: spec.gravity_compensation,
        };
        g.validate(robot)?;
        Ok(g)
    }

    pub fn validate(&self, robot: &RobotDescription) -> Result<()> {
        robot.check_dimension("null_kp", &self.null_kp)?;
        robot.check_dimension("null_kd", &self.null_kd)?;
        for (what, m) in [("stiffness", &self.k_c), ("damping", &self.d_c)] {
            let sym = (m - m.transpose()).amax() <= 1e-12 * m.amax();
            if !sym || m.cholesky().is_none() {
                return Err(Error::Config(format!("Cartesian {what} must be symmetric positive definite")));
            }
        }
        if self.null_kp.iter().chain(self.null_kd.iter()).any(|v| *v < 0.0) {
            return Err(Error::Config("nullspace gains must be >= 0".into()));
        }
        Ok(())
    }

    pub fn default_for(robot: &RobotDescription) -> Self {
        Self::from_spec(&default_impedance_spec(), robot).expect("default impedance gains are valid")
    }
}

pub fn default_impedance_spec() -> ImpedanceGainsSpec {
    ImpedanceGainsSpec {
        stiffness: [200.0, 200.0, 200.0],
        damping: [8.0, 8.0, 8.0],
        null_kp: PerCoordinate::uniform(0.5, 500.0, 500.0),
        null_kd: PerCoordinate::uniform(0.01, 10.0, 10.0),
        gravity_compensation: true,
    }
}

#[derive(Debug, Clone)]
pub struct ImpedanceOutput {
    pub tau: DVector<f64>,
    pub generalized_force: DVector<f64>,
    pub x: Vector3<f64>,
    pub xdot: Vector3<f64>,
    pub inertia: CartesianInertia,
}

/// Step of the `J̇` central difference along `q̇`.
pub const JDOT_STEP: f64 = 1e-6;

/// Cartesian impedance law
/// `τ = A⁻¹(Jᵀμẋ_d + JᵀJ⁺ᵀ(Kq + Dq̇) + Jᵀ(Λẍ_d + K_c(x_d − x) + D_c(ẋ_d − ẋ))
///        + (I − JᵀJ⁺ᵀ)(K_P(q_d − q) − K_D q̇) [+ G])`
/// with `μ = J⁺ᵀ C J⁺ − Λ J̇ J⁺` and `q_d` the nullspace posture.
pub fn impedance_torque(
    state: &RobotState,
    sample: &CartesianSample,
    posture: &DVector<f64>,
    gains: &ImpedanceGains,
    robot: &RobotDescription,
) -> Result<ImpedanceOutput> {
    state.validate(robot)?;
    robot.check_dimension("posture", posture)?;
    let n = robot.dof();
    let (q, qd) = (&state.q, &state.qdot);
    let ch = ChainKinematics::new(robot, q)?;
    let m = mass_matrix_of(robot, &ch);
    let j = ch.position_jacobian();
    let (inertia, minv_jt) = task_inertia(&j, &m)?;
    let lambda = lambda_dmatrix(&inertia.lambda);
    let jpinv = &minv_jt * &lambda;
    let jt = j.transpose();
    let jt_jpt = &jt * jpinv.transpose();
    let x = ch.end_effector.translation;
    let xdot_d = &j * qd;
    let xdot = Vector3::new(xdot_d[0], xdot_d[1], xdot_d[2]);

    let k = robot.stiffness_diagonal();
    let d = robot.damping_diagonal();
    let mut u = &jt_jpt * (k.component_mul(q) + d.component_mul(qd));

    let task = inertia.lambda * sample.xddot + gains.k_c * (sample.x - x) + gains.d_c * (sample.xdot - xdot);
    u += &jt * DVector::from_column_slice(task.as_slice());

    if sample.xdot.iter().any(|v| *v != 0.0) {
        let c = coriolis_matrix(q, qd, robot)?;
        let jdot = (crate::kinematics::jacobian(&(q + qd * JDOT_STEP), robot)?
            - crate::kinematics::jacobian(&(q - qd * JDOT_STEP), robot)?)
            / (2.0 * JDOT_STEP);
        let mu = jpinv.transpose() * c * &jpinv - &lambda * jdot * &jpinv;
        u += &jt * (mu * DVector::from_column_slice(sample.xdot.as_slice()));
    }

    let null = DMatrix::identity(n, n) - &jt_jpt;
    u += null * (gains.null_kp.component_mul(&(posture - q)) - gains.null_kd.component_mul(qd));
    if gains.gravity_compensation {
        u += rnea_of(robot, &ch, None, true);
    }
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "controller output", index: i });
    }
    let (tau, _) = solve_actuation(robot, q, &u)?;
    Ok(ImpedanceOutput { tau, generalized_force: u, x, xdot, inertia })
}

/// Source of configuration-space references.
pub trait Reference {
    fn sample(&self, t: f64) -> TrajectorySample;
    /// Upper bound of `‖q_d(t)‖` over all `t`.
    fn max_norm(&self) -> f64;
}

/// Constant setpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoint(pub DVector<f64>);

impl Reference for Setpoint {
    fn sample(&self, t: f64) -> TrajectorySample {
        TrajectorySample::setpoint(t, self.0.clone())
    }
    fn max_norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Timed configuration with optional velocity (zero if absent).
#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: Option<DVector<f64>>,
}

/// Piecewise cubic Hermite interpolation through timed waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicTrajectory {
    times: Vec<f64>,
    positions: Vec<DVector<f64>>,
    velocities: Vec<DVector<f64>>,
}

impl CubicTrajectory {
    pub fn new(waypoints: &[Waypoint]) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Trajectory("at least two waypoints are required".into()));
        }
        let n = waypoints[0].q.len();
        for (i, w) in waypoints.iter().enumerate() {
            if w.q.len() != n || w.qdot.as_ref().is_some_and(|v| v.len() != n) {
                return Err(Error::Trajectory(format!("waypoint {i} has inconsistent dimension")));
            }
            if !w.t.is_finite() || w.q.iter().any(|v| !v.is_finite()) {
                return Err(Error::Trajectory(format!("waypoint {i} is not finite")));
            }
            if i > 0 && !(w.t > waypoints[i - 1].t) {
                return Err(Error::Trajectory(format!(
                    "waypoint times must be strictly increasing (t[{}] = {} after {})",
                    i,
                    w.t,
                    waypoints[i - 1].t
                )));
            }
        }
        Ok(Self {
            times: waypoints.iter().map(|w| w.t).collect(),
            positions: waypoints.iter().map(|w| w.q.clone()).collect(),
            velocities: waypoints.iter().map(|w| w.qdot.clone().unwrap_or_else(|| DVector::zeros(n))).collect(),
        })
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn knots(&self) -> &[f64] {
        &self.times
    }
}

impl Reference for CubicTrajectory {
    fn sample(&self, t: f64) -> TrajectorySample {
        let n = self.positions[0].len();
        if t <= self.times[0] {
            return TrajectorySample {
                t,
                q: self.positions[0].clone(),
                qdot: DVector::zeros(n),
                qddot: DVector::zeros(n),
            };
        }
        let last = self.times.len() - 1;
        if t >= self.times[last] {
            return TrajectorySample {
                t,
                q: self.positions[last].clone(),
                qdot: DVector::zeros(n),
                qddot: DVector::zeros(n),
            };
        }
        let i = self.times.partition_point(|&tk| tk <= t) - 1;
        let h = self.times[i + 1] - self.times[i];
        let s = (t - self.times[i]) / h;
        let (p0, p1) = (&self.positions[i], &self.positions[i + 1]);
        let (v0, v1) = (&self.velocities[i] * h, &self.velocities[i + 1] * h);
        let (s2, s3) = (s * s, s * s * s);
        let q = p0 * (2.0 * s3 - 3.0 * s2 + 1.0)
            + &v0 * (s3 - 2.0 * s2 + s)
            + p1 * (-2.0 * s3 + 3.0 * s2)
            + &v1 * (s3 - s2);
        let qdot = (p0 * (6.0 * s2 - 6.0 * s)
            + &v0 * (3.0 * s2 - 4.0 * s + 1.0)
            + p1 * (-6.0 * s2 + 6.0 * s)
            + &v1 * (3.0 * s2 - 2.0 * s))
            / h;
        let qddot =
            (p0 * (12.0 * s - 6.0) + &v0 * (6.0 * s - 4.0) + p1 * (-12.0 * s + 6.0) + &v1 * (6.0 * s - 2.0)) / (h * h);
        TrajectorySample { t, q, qdot, qddot }
    }

    /// Largest norm over the Bézier control points of every segment, which
    /// bounds the curve by the convex-hull property.
    fn max_norm(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.times.len() - 1 {
            let h = self.times[i + 1] - self.times[i];
            let b1 = &self.positions[i] + &self.velocities[i] * (h / 3.0);
            let b2 = &self.positions[i + 1] - &self.velocities[i + 1] * (h / 3.0);
            for p in [&self.positions[i], &b1, &b2, &self.positions[i + 1]] {
                best = best.max(p.norm());
            }
        }
        best
    }
}

/// `q_d(t) = center + amplitude ⊙ sin(ω t + phase)` per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinusoid {
    pub center: DVector<f64>,
    pub amplitude: DVector<f64>,
    /// Angular frequency per coordinate (rad/s).
    pub omega: DVector<f64>,
    pub phase: DVector<f64>,
}

impl Reference for Sinusoid {
    fn sample(&self, t: f64) -> TrajectorySample {
        let n = self.center.len();
        let mut q = self.center.clone();
        let mut qdot = DVector::zeros(n);
        let mut qddot = DVector::zeros(n);
        for i in 0..n {
            let (a, w) = (self.amplitude[i], self.omega[i]);
            let (s, c) = (w * t + self.phase[i]).sin_cos();
            q[i] += a * s;
            qdot[i] = a * w * c;
            qddot[i] = -a * w * w * s;
        }
        TrajectorySample { t, q, qdot, qddot }
    }

    fn max_norm(&self) -> f64 {
        self.center.abs().zip_map(&self.amplitude.abs(), |c, a| c + a).norm()
    }
}

/// Gravity plus elastic compensation for holding `q` at rest.
pub fn holding_force(q: &DVector<f64>, robot: &RobotDescription) -> Result<DVector<f64>> {
    Ok(gravity_forces(q, robot)? + robot.stiffness_diagonal().component_mul(q))
}
