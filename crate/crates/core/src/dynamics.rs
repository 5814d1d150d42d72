//! Terms of `M q̈ + C q̇ + G + K q + D q̇ = A τ + Jᵀ f_ext`, contact penalty
//! forces and the fixed-step integrator.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{plate_gap, plate_gap_gradient};
use crate::kinematics::{actuation_matrix, segment_of_coordinate, ChainKinematics};
use crate::robot::{RobotDescription, Segment};
use crate::spatial::{cross_force, join, point_velocity};

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub t: f64,
}

impl RobotState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>, t: f64) -> Self {
        Self { q, qdot, t }
    }

    pub fn rest(robot: &RobotDescription) -> Self {
        let n = robot.dof();
        Self::new(DVector::zeros(n), DVector::zeros(n), 0.0)
    }

    pub fn validate(&self, robot: &RobotDescription) -> Result<()> {
        robot.check_configuration(&self.q)?;
        robot.check_dimension("velocity", &self.qdot)?;
        if !self.t.is_finite() {
            return Err(Error::NonFinite { what: "time", index: 0 });
        }
        Ok(())
    }
}

/// One-sided penalty acting when a plate gap becomes negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactModel {
    /// N/m
    pub stiffness: f64,
    /// N·s/m
    pub damping: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self { stiffness: 1.0e5, damping: 50.0 }
    }
}

impl ContactModel {
    pub fn disabled() -> Self {
        Self { stiffness: 0.0, damping: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness >= 0.0 && self.damping >= 0.0) {
            return Err(Error::Config("contact stiffness and damping must be >= 0".into()));
        }
        Ok(())
    }

    /// Normal force magnitude, never adhesive.
    pub fn normal_force(&self, c: f64, cdot: f64) -> f64 {
        if c >= 0.0 {
            0.0
        } else {
            (-(self.stiffness * c + self.damping * cdot)).max(0.0)
        }
    }
}

/// All terms of the equation of motion at one state.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub m: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub g: DVector<f64>,
    pub kq: DVector<f64>,
    pub dqdot: DVector<f64>,
}

impl DynamicsTerms {
    pub fn compute(q: &DVector<f64>, qdot: &DVector<f64>, robot: &RobotDescription) -> Result<Self> {
        Ok(Self {
            m: mass_matrix(q, robot)?,
            c: coriolis_matrix(q, qdot, robot)?,
            g: gravity_forces(q, robot)?,
            kq: robot.stiffness_diagonal().component_mul(q),
            dqdot: robot.damping_diagonal().component_mul(qdot),
        })
    }
}

fn spatial_inertias(ch: &ChainKinematics) -> Vec<Matrix6<f64>> {
    ch.bodies.iter().map(|b| b.inertia.spatial(&b.pose)).collect()
}

/// Sum of spatial inertias of all bodies past the end of each segment.
fn composite_after(robot: &RobotDescription, ch: &ChainKinematics, inertias: &[Matrix6<f64>]) -> Vec<Matrix6<f64>> {
    let nseg = robot.segments().len();
    let mut after = vec![Matrix6::zeros(); nseg];
    let mut acc = Matrix6::zeros();
    let mut k = ch.bodies.len();
    for s in (0..nseg).rev() {
        after[s] = acc;
        while k > 0 && ch.bodies[k - 1].segment == s {
            k -= 1;
            acc += inertias[k];
        }
    }
    after
}

fn bodies_of_segment(ch: &ChainKinematics, s: usize) -> impl Iterator<Item = usize> + '_ {
    ch.bodies.iter().enumerate().filter(move |(_, b)| b.segment == s).map(|(k, _)| k)
}

/// Composite-rigid-body assembly over the lumped body chain.
pub(crate) fn mass_matrix_of(robot: &RobotDescription, ch: &ChainKinematics) -> DMatrix<f64> {
    let n = robot.dof();
    let inertias = spatial_inertias(ch);
    let after = composite_after(robot, ch, &inertias);
    let seg_of: Vec<usize> = (0..n).map(|a| segment_of_coordinate(robot, a)).collect();

    // h_b: momentum produced by a unit rate of coordinate b
    let mut h = vec![Vector6::zeros(); n];
    for (b, hb) in h.iter_mut().enumerate() {
        let s = seg_of[b];
        *hb = after[s] * ch.tip_columns[b];
        for k in bodies_of_segment(ch, s) {
            let col = ch.body_column(robot, k, b).expect("own segment");
            *hb += inertias[k] * col;
        }
    }

    let mut m = DMatrix::zeros(n, n);
    for b in 0..n {
        for a in 0..=b {
            let v = if seg_of[a] < seg_of[b] {
                ch.tip_columns[a].dot(&h[b])
            } else {
                let s = seg_of[a];
                let mut v = ch.tip_columns[a].dot(&(after[s] * ch.tip_columns[b]));
                for k in bodies_of_segment(ch, s) {
                    let ca = ch.body_column(robot, k, a).expect("own segment");
                    let cb = ch.body_column(robot, k, b).expect("own segment");
                    v += ca.dot(&(inertias[k] * cb));
                }
                v
            };
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    for (i, seg) in robot.segments().iter().enumerate() {
        if let Segment::Joint(j) = seg {
            let o = robot.segment_offset(i);
            m[(o, o)] += j.armature;
        }
    }
    m
}

/// Recursive Newton-Euler pass: generalized forces needed to produce `q̈`
/// (zero if `None`) at the velocities stored in `ch`, optionally with gravity.
pub(crate) fn rnea_of(
    robot: &RobotDescription,
    ch: &ChainKinematics,
    qddot: Option<&DVector<f64>>,
    with_gravity: bool,
) -> DVector<f64> {
    let n = robot.dof();
    let nb = ch.bodies.len();
    let a0 = if with_gravity { join(&Vector3::zeros(), &(-robot.gravity())) } else { Vector6::zeros() };
    let has_vel = !ch.body_velocities.is_empty();
    let mut forces = Vec::with_capacity(nb);
    for (k, body) in ch.bodies.iter().enumerate() {
        let inertia = body.inertia.spatial(&body.pose);
        let mut acc = a0;
        if has_vel {
            acc += ch.body_bias_accelerations[k];
        }
        if let Some(qdd) = qddot {
            for a in 0..n {
                if qdd[a] != 0.0 {
                    if let Some(col) = ch.body_column(robot, k, a) {
                        acc += col * qdd[a];
                    }
                }
            }
        }
        let mut f = inertia * acc;
        if has_vel {
            let v = ch.body_velocities[k];
            f += cross_force(&v, &(inertia * v));
        }
        forces.push(f);
    }

    // backward accumulation of the force transmitted past each segment
    let nseg = robot.segments().len();
    let mut after = vec![Vector6::zeros(); nseg];
    let mut acc = Vector6::zeros();
    let mut k = nb;
    for s in (0..nseg).rev() {
        after[s] = acc;
        while k > 0 && ch.bodies[k - 1].segment == s {
            k -= 1;
            acc += forces[k];
        }
    }

    let mut tau = DVector::zeros(n);
    for a in 0..n {
        let s = segment_of_coordinate(robot, a);
        let mut t = ch.tip_columns[a].dot(&after[s]);
        for k in bodies_of_segment(ch, s) {
            t += ch.body_column(robot, k, a).expect("own segment").dot(&forces[k]);
        }
        tau[a] = t;
    }
    if let Some(qdd) = qddot {
        tau += robot.armature_diagonal().component_mul(qdd);
    }
    tau
}

/// Joint-space inertia matrix.
pub fn mass_matrix(q: &DVector<f64>, robot: &RobotDescription) -> Result<DMatrix<f64>> {
    let ch = ChainKinematics::new(robot, q)?;
    Ok(mass_matrix_of(robot, &ch))
}

/// `G(q) = ∂U_gravity/∂q`.
pub fn gravity_forces(q: &DVector<f64>, robot: &RobotDescription) -> Result<DVector<f64>> {
    let ch = ChainKinematics::new(robot, q)?;
    Ok(rnea_of(robot, &ch, None, true))
}

/// Velocity-product forces `C(q, q̇) q̇`.
pub fn velocity_product_forces(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    robot: &RobotDescription,
) -> Result<DVector<f64>> {
    let ch = ChainKinematics::with_velocity(robot, q, qdot)?;
    Ok(rnea_of(robot, &ch, None, false))
}

/// `C(q, q̇) q̇ + G(q)`.
pub fn bias_forces(q: &DVector<f64>, qdot: &DVector<f64>, robot: &RobotDescription) -> Result<DVector<f64>> {
    let ch = ChainKinematics::with_velocity(robot, q, qdot)?;
    Ok(rnea_of(robot, &ch, None, true))
}

/// `M q̈ + C q̇ + G` (rigid-body part only; elastic and damping terms excluded).
pub fn inverse_dynamics(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
    robot: &RobotDescription,
) -> Result<DVector<f64>> {
    robot.check_dimension("acceleration", qddot)?;
    let ch = ChainKinematics::with_velocity(robot, q, qdot)?;
    Ok(rnea_of(robot, &ch, Some(qddot), true))
}

/// Step used for the derivatives of `M` in [`coriolis_matrix`].
pub const MASS_DERIVATIVE_STEP: f64 = 1e-4;

/// Sixth-order central difference `f'(0)` from samples at `±h, ±2h, ±3h`.
pub fn central_difference7<F>(h: f64, mut at: F) -> DMatrix<f64>
where
    F: FnMut(f64) -> DMatrix<f64>,
{
    ((at(3.0 * h) - at(-3.0 * h)) + (at(-2.0 * h) - at(2.0 * h)) * 9.0 + (at(h) - at(-h)) * 45.0) / (60.0 * h)
}

/// `∂M/∂q_k` for every `k`, by seven-point central differences.
pub fn mass_matrix_partials(q: &DVector<f64>, robot: &RobotDescription) -> Result<Vec<DMatrix<f64>>> {
    robot.check_configuration(q)?;
    let h = MASS_DERIVATIVE_STEP;
    let m_at = |qq: &DVector<f64>| mass_matrix_of(robot, &ChainKinematics::unchecked(robot, qq));
    let mut out = Vec::with_capacity(robot.dof());
    for k in 0..robot.dof() {
        out.push(central_difference7(h, |t| {
            let mut qq = q.clone();
            qq[k] += t;
            m_at(&qq)
        }));
    }
    Ok(out)
}

/// Coriolis matrix from the Christoffel symbols of `M`:
/// `C = ½(Ṁ + B − Bᵀ)` with `B[:, j] = (∂M/∂q_j) q̇`, so `Ṁ − 2C` is skew.
pub fn coriolis_matrix(q: &DVector<f64>, qdot: &DVector<f64>, robot: &RobotDescription) -> Result<DMatrix<f64>> {
    robot.check_dimension("velocity", qdot)?;
    let n = robot.dof();
    if qdot.iter().all(|v| *v == 0.0) {
        robot.check_configuration(q)?;
        return Ok(DMatrix::zeros(n, n));
    }
    let partials = mass_matrix_partials(q, robot)?;
    Ok(christoffel_from_partials(&partials, qdot))
}

pub(crate) fn christoffel_from_partials(partials: &[DMatrix<f64>], qdot: &DVector<f64>) -> DMatrix<f64> {
    let n = qdot.len();
    let mut mdot = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for (j, dm) in partials.iter().enumerate() {
        mdot += dm * qdot[j];
        b.set_column(j, &(dm * qdot));
    }
    (mdot + &b - b.transpose()) * 0.5
}

/// Gap of every module and its time derivative.
pub fn plate_gaps_with_rates(q: &DVector<f64>, qdot: &DVector<f64>, robot: &RobotDescription) -> Vec<(f64, f64)> {
    robot
        .modules()
        .map(|s| {
            let qm = RobotDescription::module_state(q, s.offset);
            let g = plate_gap_gradient(&qm, &s.module.geometry);
            let cdot = g[0] * qdot[s.offset] + g[1] * qdot[s.offset + 1] + g[2] * qdot[s.offset + 2];
            (plate_gap(&qm, &s.module.geometry), cdot)
        })
        .collect()
}

/// Generalized penalty force `λ ∇c` of every module with a negative gap.
pub fn contact_wrench(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    robot: &RobotDescription,
    cm: &ContactModel,
) -> Result<DVector<f64>> {
    robot.check_configuration(q)?;
    robot.check_dimension("velocity", qdot)?;
    Ok(contact_wrench_unchecked(q, qdot, robot, cm))
}

fn contact_wrench_unchecked(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    robot: &RobotDescription,
    cm: &ContactModel,
) -> DVector<f64> {
    let mut out = DVector::zeros(robot.dof());
    for s in robot.modules() {
        let qm = RobotDescription::module_state(q, s.offset);
        let c = plate_gap(&qm, &s.module.geometry);
        if c >= 0.0 {
            continue;
        }
        let g = plate_gap_gradient(&qm, &s.module.geometry);
        let cdot = g[0] * qdot[s.offset] + g[1] * qdot[s.offset + 1] + g[2] * qdot[s.offset + 2];
        let lambda = cm.normal_force(c, cdot);
        for i in 0..3 {
            out[s.offset + i] = lambda * g[i];
        }
    }
    out
}

/// Penalty potential `½ k c²` summed over modules with negative gap.
pub fn contact_potential(q: &DVector<f64>, robot: &RobotDescription, cm: &ContactModel) -> f64 {
    robot.plate_gaps(q).into_iter().filter(|c| *c < 0.0).map(|c| 0.5 * cm.stiffness * c * c).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    pub kinetic: f64,
    pub elastic: f64,
    /// Relative to the world origin height.
    pub gravitational: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.elastic + self.gravitational
    }
}

/// Kinetic `½q̇ᵀMq̇`, elastic `½qᵀKq` and gravitational `−Σ mᵢ g·pᵢ` energies.
pub fn energy(state: &RobotState, robot: &RobotDescription) -> Result<Energy> {
    state.validate(robot)?;
    let ch = ChainKinematics::new(robot, &state.q)?;
    let m = mass_matrix_of(robot, &ch);
    let kinetic = 0.5 * state.qdot.dot(&(&m * &state.qdot));
    let k = robot.stiffness_diagonal();
    let elastic = 0.5 * state.q.dot(&k.component_mul(&state.q));
    let g = robot.gravity();
    let gravitational =
        ch.bodies.iter().map(|b| -b.inertia.mass * g.dot(&b.pose.transform_point(&b.inertia.com))).sum();
    Ok(Energy { kinetic, elastic, gravitational })
}

/// Point on the chain where an external force can act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForceTarget {
    EndEffector,
    /// Tip frame of the i-th module (0-based).
    ModuleTip(usize),
}

/// External forces held constant over a step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalLoad {
    pub forces: Vec<(ForceTarget, Vector3<f64>)>,
}

impl ExternalLoad {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn end_effector(f: Vector3<f64>) -> Self {
        Self { forces: vec![(ForceTarget::EndEffector, f)] }
    }

    pub fn is_zero(&self) -> bool {
        self.forces.iter().all(|(_, f)| f.iter().all(|v| *v == 0.0))
    }

    /// Net force applied at the end effector.
    pub fn end_effector_force(&self) -> Vector3<f64> {
        self.forces.iter().filter(|(t, _)| *t == ForceTarget::EndEffector).map(|(_, f)| *f).sum()
    }
}

/// Generalized force `Σ J_pᵀ f` of the external load.
pub fn external_generalized_force(
    robot: &RobotDescription,
    ch: &ChainKinematics,
    load: &ExternalLoad,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(robot.dof());
    for (target, f) in &load.forces {
        let (point, last_coord) = match target {
            ForceTarget::EndEffector => (ch.end_effector.translation, robot.dof()),
            ForceTarget::ModuleTip(i) => {
                let slot = robot
                    .modules()
                    .nth(*i)
                    .ok_or_else(|| Error::Config(format!("force target module {i} does not exist")))?;
                (ch.frames[slot.segment + 1].translation, slot.offset + 3)
            }
        };
        for a in 0..last_coord {
            out[a] += point_velocity(&ch.tip_columns[a], &point).dot(f);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Rk4,
    SemiImplicitEuler,
}

/// Forward-dynamics model bundling the constant parts of the right-hand side.
#[derive(Debug, Clone)]
pub struct ForwardModel<'a> {
    pub robot: &'a RobotDescription,
    pub contact: ContactModel,
    pub integrator: Integrator,
    k: DVector<f64>,
    d: DVector<f64>,
    a: DMatrix<f64>,
}

impl<'a> ForwardModel<'a> {
    pub fn new(robot: &'a RobotDescription, contact: ContactModel) -> Result<Self> {
        contact.validate()?;
        let a = actuation_matrix(&DVector::zeros(robot.dof()), robot)?.matrix;
        Ok(Self {
            robot,
            contact,
            integrator: Integrator::Rk4,
            k: robot.stiffness_diagonal(),
            d: robot.damping_diagonal(),
            a,
        })
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    /// `q̈ = M⁻¹(Aτ + Σ Jᵀf + contact − Cq̇ − G − Kq − Dq̇)`.
    pub fn acceleration(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        tau: &DVector<f64>,
        load: &ExternalLoad,
    ) -> Result<DVector<f64>> {
        let robot = self.robot;
        let ch = ChainKinematics::unchecked_with_velocity(robot, q, qdot);
        let m = mass_matrix_of(robot, &ch);
        let bias = rnea_of(robot, &ch, None, true);
        let mut rhs = &self.a * tau - bias - self.k.component_mul(q) - self.d.component_mul(qdot);
        if !load.forces.is_empty() {
            rhs += external_generalized_force(robot, &ch, load)?;
        }
        if self.contact.stiffness > 0.0 || self.contact.damping > 0.0 {
            rhs += contact_wrench_unchecked(q, qdot, robot, &self.contact);
        }
        let chol = m.cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(chol.solve(&rhs))
    }

    /// One fixed step with `τ` and the load held constant.
    pub fn step(&self, state: &RobotState, tau: &DVector<f64>, load: &ExternalLoad, dt: f64) -> Result<RobotState> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("time step must be > 0, got {dt}")));
        }
        let robot = self.robot;
        robot.check_dimension("torque", tau)?;
        let (q, qd) = (&state.q, &state.qdot);
        let t_next = state.t + dt;
        let accel = |q: &DVector<f64>, v: &DVector<f64>| {
            let a = self.acceleration(q, v, tau, load);
            match a {
                Ok(a) => {
                    self.check_finite(t_next, q, v)?;
                    self.check_finite(t_next, &a, &a)?;
                    Ok(a)
                }
                Err(Error::NotPositiveDefinite) => {
                    self.check_finite(t_next, q, v)?;
                    Err(Error::NotPositiveDefinite)
                }
                Err(e) => Err(e),
            }
        };
        let next = match self.integrator {
            Integrator::Rk4 => {
                let k1v = qd.clone();
                let k1a = accel(q, qd)?;
                let q2 = q + &k1v * (dt / 2.0);
                let v2 = qd + &k1a * (dt / 2.0);
                let k2a = accel(&q2, &v2)?;
                let q3 = q + &v2 * (dt / 2.0);
                let v3 = qd + &k2a * (dt / 2.0);
                let k3a = accel(&q3, &v3)?;
                let q4 = q + &v3 * dt;
                let v4 = qd + &k3a * dt;
                let k4a = accel(&q4, &v4)?;
                let qn = q + (k1v + &v2 * 2.0 + &v3 * 2.0 + v4) * (dt / 6.0);
                let vn = qd + (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (dt / 6.0);
                RobotState::new(qn, vn, state.t + dt)
            }
            Integrator::SemiImplicitEuler => {
                let a = accel(q, qd)?;
                let vn = qd + a * dt;
                let qn = q + &vn * dt;
                RobotState::new(qn, vn, state.t + dt)
            }
        };
        self.check_finite(next.t, &next.q, &next.qdot)?;
        Ok(next)
    }

    fn check_finite(&self, t: f64, q: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
        let n = self.robot.dof();
        if let Some(i) = q.iter().chain(v.iter()).position(|x| !x.is_finite()) {
            let c = i % n;
            let name = self.robot.coordinate_names()[c].clone();
            return Err(Error::IntegrationDiverged { t, coordinate: c, name });
        }
        Ok(())
    }
}

/// One integration step with the default RK4 scheme.
pub fn step(
    state: &RobotState,
    tau: &DVector<f64>,
    load: &ExternalLoad,
    dt: f64,
    robot: &RobotDescription,
    cm: &ContactModel,
) -> Result<RobotState> {
    state.validate(robot)?;
    ForwardModel::new(robot, *cm)?.step(state, tau, load, dt)
}
