//! Brute-force reference computations for testing the dynamics engine.
//!
//! Nothing here touches the recursive algorithms: the mass matrix comes from
//! kinetic energies of body poses differentiated numerically, the Coriolis
//! matrix from Christoffel symbols of that mass matrix, and gravity from the
//! gradient of the potential energy. Slow by design.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::dynamics::RobotState;
use crate::error::{Error, Result};
use crate::kinematics::ChainKinematics;
use crate::robot::{RobotDescription, Segment};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Step along `q̇` for body velocities (five-point stencil).
    pub velocity_step: f64,
    /// Step for `∂M/∂q` in the Christoffel symbols (five-point stencil).
    pub partial_step: f64,
    /// Step for gradients of scalar fields and Jacobian columns.
    pub gradient_step: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { velocity_step: 1e-4, partial_step: 1e-4, gradient_step: 1e-6 }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("velocity_step", self.velocity_step),
            ("partial_step", self.partial_step),
            ("gradient_step", self.gradient_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("oracle {what} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Linear and angular velocity of one body's center of mass.
#[derive(Debug, Clone, Copy)]
struct BodyRate {
    v: Vector3<f64>,
    w: Vector3<f64>,
}

fn vee(a: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(a[(2, 1)] - a[(1, 2)], a[(0, 2)] - a[(2, 0)], a[(1, 0)] - a[(0, 1)]) * 0.5
}

/// Body rates for the motion `q + s·dir`, by a five-point difference of the
/// body poses in `s`.
fn body_rates(q: &DVector<f64>, dir: &DVector<f64>, robot: &RobotDescription, h: f64) -> Vec<BodyRate> {
    let at = |s: f64| ChainKinematics::unchecked(robot, &(q + dir * s));
    let (m2, m1, p1, p2) = (at(-2.0 * h), at(-h), at(h), at(2.0 * h));
    let c0 = ChainKinematics::unchecked(robot, q);
    let d = |f: &dyn Fn(&ChainKinematics) -> DVector<f64>| (f(&m2) - f(&p2) + (f(&p1) - f(&m1)) * 8.0) / (12.0 * h);
    c0.bodies
        .iter()
        .enumerate()
        .map(|(b, body)| {
            let com = |ch: &ChainKinematics| {
                let p = ch.bodies[b].pose.transform_point(&ch.bodies[b].inertia.com);
                DVector::from_column_slice(p.as_slice())
            };
            let rot = |ch: &ChainKinematics| DVector::from_column_slice(ch.bodies[b].pose.rotation.as_slice());
            let v = d(&com);
            let rdot = Matrix3::from_column_slice(d(&rot).as_slice());
            let w = vee(&(rdot * body.pose.rotation.transpose()));
            BodyRate { v: Vector3::new(v[0], v[1], v[2]), w }
        })
        .collect()
}

fn kinetic_energy_of(rates: &[BodyRate], ch: &ChainKinematics) -> f64 {
    rates
        .iter()
        .zip(&ch.bodies)
        .map(|(r, b)| {
            let i_world = b.pose.rotation * b.inertia.inertia * b.pose.rotation.transpose();
            0.5 * b.inertia.mass * r.v.norm_squared() + 0.5 * r.w.dot(&(i_world * r.w))
        })
        .sum()
}

fn armature_energy(robot: &RobotDescription, qdot: &DVector<f64>) -> f64 {
    robot
        .segments()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match s {
            Segment::Joint(j) => Some(0.5 * j.armature * qdot[robot.segment_offset(i)].powi(2)),
            _ => None,
        })
        .sum()
}

/// `½Σ(m‖v‖² + ωᵀIω)` plus rotor energy, with body velocities from pose
/// differences.
pub fn kinetic_energy_fd(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    robot: &RobotDescription,
    cfg: &OracleConfig,
) -> Result<f64> {
    RobotState::new(q.clone(), qdot.clone(), 0.0).validate(robot)?;
    cfg.validate()?;
    let ch = ChainKinematics::new(robot, q)?;
    Ok(kinetic_energy_of(&body_rates(q, qdot, robot, cfg.velocity_step), &ch) + armature_energy(robot, qdot))
}

/// Mass matrix by polarization of the kinetic energy:
/// `M_ii = 2T(e_i)`, `M_ij = T(e_i + e_j) − T(e_i) − T(e_j)`.
pub fn mass_matrix_fd(q: &DVector<f64>, robot: &RobotDescription, cfg: &OracleConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    robot.check_configuration(q)?;
    Ok(mass_matrix_at(q, robot, cfg))
}

fn mass_matrix_at(q: &DVector<f64>, robot: &RobotDescription, cfg: &OracleConfig) -> DMatrix<f64> {
    let n = robot.dof();
    let ch = ChainKinematics::unchecked(robot, q);
    let unit = |i: usize| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
    let rates: Vec<Vec<BodyRate>> = (0..n).map(|i| body_rates(q, &unit(i), robot, cfg.velocity_step)).collect();
    let t_single: Vec<f64> =
        (0..n).map(|i| kinetic_energy_of(&rates[i], &ch) + armature_energy(robot, &unit(i))).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 2.0 * t_single[i];
        for j in 0..i {
            let sum: Vec<BodyRate> =
                rates[i].iter().zip(&rates[j]).map(|(a, b)| BodyRate { v: a.v + b.v, w: a.w + b.w }).collect();
            let t_ij = kinetic_energy_of(&sum, &ch) + armature_energy(robot, &(unit(i) + unit(j)));
            let v = t_ij - t_single[i] - t_single[j];
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `C_ij = Σ_k ½(∂M_ij/∂q_k + ∂M_ik/∂q_j − ∂M_jk/∂q_i) q̇_k`, with `∂M` by
/// five-point differences of [`mass_matrix_fd`].
pub fn coriolis_christoffel(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    robot: &RobotDescription,
    cfg: &OracleConfig,
) -> Result<DMatrix<f64>> {
    RobotState::new(q.clone(), qdot.clone(), 0.0).validate(robot)?;
    cfg.validate()?;
    let n = robot.dof();
    let h = cfg.partial_step;
    let mut dm = Vec::with_capacity(n);
    for k in 0..n {
        let at = |t: f64| {
            let mut qq = q.clone();
            qq[k] += t;
            mass_matrix_at(&qq, robot, cfg)
        };
        dm.push((at(-2.0 * h) - at(2.0 * h) + (at(h) - at(-h)) * 8.0) / (12.0 * h));
    }
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qdot[k];
            }
            c[(i, j)] = s;
        }
    }
    Ok(c)
}

/// Gravity vector as the gradient of the gravitational potential.
pub fn gravity_fd(q: &DVector<f64>, robot: &RobotDescription, cfg: &OracleConfig) -> Result<DVector<f64>> {
    robot.check_configuration(q)?;
    cfg.validate()?;
    gradient_fd(|x| potential_energy(x, robot), q, cfg.gradient_step)
}

/// `−Σ m g·p_com` over all bodies.
pub fn potential_energy(q: &DVector<f64>, robot: &RobotDescription) -> f64 {
    let g = robot.gravity();
    ChainKinematics::unchecked(robot, q)
        .bodies
        .iter()
        .map(|b| -b.inertia.mass * g.dot(&b.pose.transform_point(&b.inertia.com)))
        .sum()
}

/// Central-difference gradient of a scalar field.
pub fn gradient_fd(f: impl Fn(&DVector<f64>) -> f64, q: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
    check_step(q, step)?;
    let mut g = DVector::zeros(q.len());
    for i in 0..q.len() {
        let mut qp = q.clone();
        qp[i] += step;
        let mut qm = q.clone();
        qm[i] -= step;
        g[i] = (f(&qp) - f(&qm)) / (2.0 * step);
    }
    Ok(g)
}

/// Central-difference Jacobian of a vector field; column `i` is `∂f/∂q_i`.
pub fn jacobian_fd(f: impl Fn(&DVector<f64>) -> DVector<f64>, q: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
    check_step(q, step)?;
    let rows = f(q).len();
    let mut j = DMatrix::zeros(rows, q.len());
    for i in 0..q.len() {
        let mut qp = q.clone();
        qp[i] += step;
        let mut qm = q.clone();
        qm[i] -= step;
        j.set_column(i, &((f(&qp) - f(&qm)) / (2.0 * step)));
    }
    Ok(j)
}

fn check_step(q: &DVector<f64>, step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Domain(format!("finite-difference step must be > 0, got {step}")));
    }
    if let Some(i) = q.iter().position(|x| x + step == *x || x - step == *x) {
        return Err(Error::Domain(format!("finite-difference step {step} underflows at coordinate {i}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::{Joint, RigidBody};

    #[test]
    fn constant_field_has_zero_gradient() {
        let q = DVector::from_vec(vec![0.3, -1.0]);
        assert_eq!(gradient_fd(|_| 2.5, &q, 1e-6).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn quadratic_field_gradient() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q = DVector::from_vec(vec![0.3, -1.0]);
        let g = gradient_fd(|x| 0.5 * x.dot(&(&h * x)), &q, 1e-4).unwrap();
        assert!((g - &h * &q).amax() < 1e-9);
    }

    #[test]
    fn step_underflow_rejected() {
        let q = DVector::from_vec(vec![1e20]);
        assert!(gradient_fd(|x| x[0], &q, 1e-6).is_err());
        assert!(gradient_fd(|x| x[0], &q, 0.0).is_err());
    }

    #[test]
    fn pendulum_inertia() {
        // horizontal axis, point-like bob at distance l
        let (m, l, ixx, arm) = (0.3, 0.2, 2e-5, 1e-3);
        let joint = Joint {
            axis: [1.0, 0.0, 0.0],
            offset: l,
            damping: 0.0,
            motor: Some(RigidBody { mass: m, com: [0.0, 0.0, l], inertia: [ixx, ixx, 1e-6] }),
            range: [-3.0, 3.0],
            armature: arm,
        };
        let r = RobotDescription::new(vec![Segment::Joint(joint)], Vector3::new(0.0, 0.0, -9.81), 0.0).unwrap();
        for th in [0.0, 0.7, -2.0] {
            let mm = mass_matrix_fd(&DVector::from_vec(vec![th]), &r, &OracleConfig::default()).unwrap();
            let expect = m * l * l + ixx + arm;
            assert!((mm[(0, 0)] - expect).abs() < 1e-10 * expect, "{} vs {}", mm[(0, 0)], expect);
        }
    }

    #[test]
    fn oracle_mass_matrix_diagonal_positive() {
        let r = RobotDescription::four_module_default();
        let q = DVector::from_fn(r.dof(), |i, _| 0.003 * ((i % 4) as f64 - 1.5));
        let m = mass_matrix_fd(&q, &r, &OracleConfig::default()).unwrap();
        assert!(m.diagonal().iter().all(|v| *v > 0.0));
    }
}
