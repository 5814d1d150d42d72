//! Chain kinematics: frames, body poses, twist columns, Jacobians, the
//! actuation matrix and workspace sampling.
//!
//! Every rigid body of the chain (joint motor housings and module slices) gets
//! a world pose and, for each coordinate that moves it, a world-frame twist
//! column `ξ` so that its spatial velocity is `Σ ξ_a q̇_a`. Joint coordinates
//! and module coordinates share one column for every body past the segment;
//! module coordinates additionally have a column per slice of their own module.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{cable_map_gradient, module_point_transform, pcc_arc, Pose};
use crate::jet::Jet;
use crate::robot::{ActuationMode, RobotDescription, Segment};
use crate::spatial::{angular, cross_motion, join, point_velocity, transform_motion, BodyInertia};

/// Condition number of `A(q)` above which a warning is attached.
pub const ACTUATION_CONDITION_WARN: f64 = 1e8;

/// Second-order motion of an arc frame along a direction in module space.
struct ArcMotion {
    r: Matrix3<f64>,
    rd: Matrix3<f64>,
    rdd: Matrix3<f64>,
    p: Vector3<f64>,
    pd: Vector3<f64>,
    pdd: Vector3<f64>,
}

fn arc_motion(q_mod: &[f64; 3], dir: &[f64; 3], rest_length: f64, radius: f64, s: f64) -> ArcMotion {
    let dx = Jet::variable(s * q_mod[0], s * dir[0]);
    let dy = Jet::variable(s * q_mod[1], s * dir[1]);
    let len = Jet::variable(s * (rest_length + q_mod[2]), s * dir[2]);
    let (r, p) = pcc_arc(dx, dy, len, radius);
    let m = |f: fn(&Jet) -> f64| Matrix3::from_fn(|i, j| f(&r[i][j]));
    let v = |f: fn(&Jet) -> f64| Vector3::new(f(&p[0]), f(&p[1]), f(&p[2]));
    ArcMotion { r: m(|j| j.v), rd: m(|j| j.d), rdd: m(|j| j.dd), p: v(|j| j.v), pd: v(|j| j.d), pdd: v(|j| j.dd) }
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(0.5 * (m[(2, 1)] - m[(1, 2)]), 0.5 * (m[(0, 2)] - m[(2, 0)]), 0.5 * (m[(1, 0)] - m[(0, 1)]))
}

impl ArcMotion {
    /// Twist of the arc frame in the module base frame, at the base origin.
    fn twist(&self) -> Vector6<f64> {
        let w = vee(&(self.rd * self.r.transpose()));
        join(&w, &(self.pd - w.cross(&self.p)))
    }

    /// Time derivative of [`ArcMotion::twist`] with zero input acceleration.
    fn twist_rate(&self) -> Vector6<f64> {
        let w = vee(&(self.rd * self.r.transpose()));
        let wd = vee(&(self.rdd * self.r.transpose() + self.rd * self.rd.transpose()));
        join(&wd, &(self.pdd - wd.cross(&self.p) - w.cross(&self.pd)))
    }
}

/// A rigid body of the chain.
#[derive(Debug, Clone)]
pub struct Body {
    pub pose: Pose,
    pub inertia: BodyInertia,
    pub segment: usize,
    /// Slice index inside its module; `None` for joint motor housings.
    pub slice: Option<usize>,
}

/// Kinematic quantities of the whole chain at one configuration.
#[derive(Debug, Clone)]
pub struct ChainKinematics {
    /// Base frame of each segment, plus the chain tip as the last entry.
    pub frames: Vec<Pose>,
    /// Frame after each joint rotation (before the rigid offset); identity for modules.
    pub joint_frames: Vec<Pose>,
    pub end_effector: Pose,
    pub bodies: Vec<Body>,
    /// Twist column of each coordinate valid for everything past its segment.
    pub tip_columns: Vec<Vector6<f64>>,
    /// For slices: the three columns of their own module's coordinates.
    pub slice_columns: Vec<Option<[Vector6<f64>; 3]>>,
    /// Spatial body velocities (present when velocities were supplied).
    pub body_velocities: Vec<Vector6<f64>>,
    /// Spatial body accelerations for zero `q̈` and zero gravity.
    pub body_bias_accelerations: Vec<Vector6<f64>>,
}

impl ChainKinematics {
    /// Kinematics without velocity terms.
    pub fn new(robot: &RobotDescription, q: &DVector<f64>) -> Result<Self> {
        robot.check_configuration(q)?;
        Ok(Self::compute(robot, q, None))
    }

    /// Kinematics including body velocities and velocity-product accelerations.
    pub fn with_velocity(robot: &RobotDescription, q: &DVector<f64>, qd: &DVector<f64>) -> Result<Self> {
        robot.check_configuration(q)?;
        robot.check_dimension("velocity", qd)?;
        Ok(Self::compute(robot, q, Some(qd)))
    }

    /// No validation: used inside integrator stages and finite differences
    /// where states may transiently leave the admissible set.
    pub(crate) fn unchecked(robot: &RobotDescription, q: &DVector<f64>) -> Self {
        Self::compute(robot, q, None)
    }

    pub(crate) fn unchecked_with_velocity(robot: &RobotDescription, q: &DVector<f64>, qd: &DVector<f64>) -> Self {
        Self::compute(robot, q, Some(qd))
    }

    fn compute(robot: &RobotDescription, q: &DVector<f64>, qd: Option<&DVector<f64>>) -> Self {
        let n = robot.dof();
        let nseg = robot.segments().len();
        let mut frames = Vec::with_capacity(nseg + 1);
        let mut joint_frames = Vec::with_capacity(nseg);
        let mut bodies = Vec::new();
        let mut slice_columns = Vec::new();
        let mut tip_columns = vec![Vector6::zeros(); n];
        let mut body_velocities = Vec::new();
        let mut body_bias = Vec::new();

        let mut frame = Pose::identity();
        let mut vel = Vector6::zeros();
        let mut acc = Vector6::zeros();

        for (si, seg) in robot.segments().iter().enumerate() {
            frames.push(frame);
            let o = robot.segment_offset(si);
            match seg {
                Segment::Joint(j) => {
                    let axis = Vector3::from(j.axis);
                    let after = frame.compose(&Pose::rotation_about(&axis, q[o]));
                    let xi = transform_motion(&frame, &join(&axis, &Vector3::zeros()));
                    tip_columns[o] = xi;
                    if let Some(qd) = qd {
                        let v_rel = xi * qd[o];
                        acc += cross_motion(&vel, &v_rel);
                        vel += v_rel;
                    }
                    joint_frames.push(after);
                    if let Some(motor) = &j.motor {
                        bodies.push(Body { pose: after, inertia: motor.inertia(), segment: si, slice: None });
                        slice_columns.push(None);
                        if qd.is_some() {
                            body_velocities.push(vel);
                            body_bias.push(acc);
                        }
                    }
                    frame = after.compose(&Pose::translation_z(j.offset));
                }
                Segment::Module(m) => {
                    joint_frames.push(Pose::identity());
                    let qm = RobotDescription::module_state(q, o);
                    let geom = &m.geometry;
                    let inertia = m.slice_inertia();
                    let local_cols = |s: f64| {
                        let mut cols = [Vector6::zeros(); 3];
                        for (a, col) in cols.iter_mut().enumerate() {
                            let mut dir = [0.0; 3];
                            dir[a] = 1.0;
                            let am = arc_motion(&qm, &dir, geom.rest_length, geom.radius, s);
                            *col = transform_motion(&frame, &am.twist());
                        }
                        cols
                    };
                    let local_rates = |s: f64, qd: &DVector<f64>| {
                        let dir = [qd[o], qd[o + 1], qd[o + 2]];
                        let am = arc_motion(&qm, &dir, geom.rest_length, geom.radius, s);
                        (transform_motion(&frame, &am.twist()), transform_motion(&frame, &am.twist_rate()))
                    };
                    for (k, s) in m.slice_fractions().into_iter().enumerate() {
                        let pose = frame.compose(&module_point_transform(&qm, geom, s));
                        bodies.push(Body { pose, inertia, segment: si, slice: Some(k) });
                        slice_columns.push(Some(local_cols(s)));
                        if let Some(qd) = qd {
                            let (v_loc, a_loc) = local_rates(s, qd);
                            body_velocities.push(vel + v_loc);
                            body_bias.push(acc + cross_motion(&vel, &v_loc) + a_loc);
                        }
                    }
                    let tip = local_cols(1.0);
                    tip_columns[o..o + 3].copy_from_slice(&tip);
                    if let Some(qd) = qd {
                        let (v_loc, a_loc) = local_rates(1.0, qd);
                        acc += cross_motion(&vel, &v_loc) + a_loc;
                        vel += v_loc;
                    }
                    frame = frame.compose(&module_point_transform(&qm, geom, 1.0));
                }
            }
        }
        frames.push(frame);
        let end_effector = frame.compose(&Pose::translation_z(robot.ee_offset()));
        Self {
            frames,
            joint_frames,
            end_effector,
            bodies,
            tip_columns,
            slice_columns,
            body_velocities,
            body_bias_accelerations: body_bias,
        }
    }

    /// Column of coordinate `a` acting on body `k`, or `None` when the body is
    /// upstream of the coordinate.
    pub fn body_column(&self, robot: &RobotDescription, k: usize, a: usize) -> Option<Vector6<f64>> {
        let body = &self.bodies[k];
        let seg_a = segment_of_coordinate(robot, a);
        if seg_a < body.segment {
            Some(self.tip_columns[a])
        } else if seg_a == body.segment {
            match &self.slice_columns[k] {
                Some(cols) => Some(cols[a - robot.segment_offset(seg_a)]),
                None => Some(self.tip_columns[a]),
            }
        } else {
            None
        }
    }

    /// Translational end-effector Jacobian (3 × n).
    pub fn position_jacobian(&self) -> DMatrix<f64> {
        let p = self.end_effector.translation;
        let n = self.tip_columns.len();
        DMatrix::from_fn(3, n, |i, a| point_velocity(&self.tip_columns[a], &p)[i])
    }

    /// Spatial end-effector Jacobian (6 × n): rows 0..3 translational velocity
    /// of the end-effector point, rows 3..6 angular velocity.
    pub fn spatial_jacobian(&self) -> DMatrix<f64> {
        let p = self.end_effector.translation;
        let n = self.tip_columns.len();
        DMatrix::from_fn(6, n, |i, a| {
            let xi = &self.tip_columns[a];
            if i < 3 {
                point_velocity(xi, &p)[i]
            } else {
                angular(xi)[i - 3]
            }
        })
    }
}

pub(crate) fn segment_of_coordinate(robot: &RobotDescription, a: usize) -> usize {
    let segs = robot.segments();
    (0..segs.len()).rev().find(|&s| robot.segment_offset(s) <= a).expect("coordinate index in range")
}

/// Frames of the chain: for each segment the frame at its end (after the
/// joint offset or at the module tip), followed by the end-effector pose.
pub fn forward_kinematics(q: &DVector<f64>, robot: &RobotDescription) -> Result<Vec<Pose>> {
    let ch = ChainKinematics::new(robot, q)?;
    let mut out: Vec<Pose> = ch.frames[1..].to_vec();
    out.push(ch.end_effector);
    Ok(out)
}

pub fn end_effector_position(q: &DVector<f64>, robot: &RobotDescription) -> Result<Vector3<f64>> {
    Ok(ChainKinematics::new(robot, q)?.end_effector.translation)
}

/// Translational end-effector Jacobian `ẋ = J q̇` (3 × n).
pub fn jacobian(q: &DVector<f64>, robot: &RobotDescription) -> Result<DMatrix<f64>> {
    Ok(ChainKinematics::new(robot, q)?.position_jacobian())
}

/// Spatial end-effector Jacobian (6 × n), translational rows first.
pub fn spatial_jacobian(q: &DVector<f64>, robot: &RobotDescription) -> Result<DMatrix<f64>> {
    Ok(ChainKinematics::new(robot, q)?.spatial_jacobian())
}

/// Input matrix with its condition number.
#[derive(Debug, Clone)]
pub struct ActuationMatrix {
    pub matrix: DMatrix<f64>,
    pub condition: f64,
    pub warning: Option<String>,
}

impl ActuationMatrix {
    pub fn is_ill_conditioned(&self) -> bool {
        self.warning.is_some()
    }
}

/// `A(q)`: unit entries on joints; module blocks `−(∂l/∂q_mod)ᵀ / r` mapping the
/// three motor torques to module generalized forces. Because the cable map is
/// affine the blocks do not depend on `q`.
pub fn actuation_matrix(q: &DVector<f64>, robot: &RobotDescription) -> Result<ActuationMatrix> {
    robot.check_configuration(q)?;
    let n = robot.dof();
    let mut a = DMatrix::identity(n, n);
    if robot.actuation() == ActuationMode::Cable {
        for slot in robot.modules() {
            let g = cable_map_gradient(&slot.module.geometry);
            let block = -g.transpose() / slot.module.geometry.spool_radius;
            a.view_mut((slot.offset, slot.offset), (3, 3)).copy_from(&block);
        }
    }
    let sv = a.singular_values();
    let smin = sv.min();
    let condition = if smin > 0.0 { sv.max() / smin } else { f64::INFINITY };
    let warning = (condition > ACTUATION_CONDITION_WARN)
        .then(|| format!("actuation matrix condition number {condition:.3e} exceeds {ACTUATION_CONDITION_WARN:.0e}"));
    Ok(ActuationMatrix { matrix: a, condition, warning })
}

/// End-effector positions of `count` uniformly sampled admissible
/// configurations (all plate gaps non-negative). Deterministic in `seed`.
pub fn workspace_sample(robot: &RobotDescription, count: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let q = robot.sample_admissible(&mut rng);
            ChainKinematics::compute(robot, &q, None).end_effector.translation
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn robot() -> RobotDescription {
        RobotDescription::four_module_default()
    }

    fn random_q(seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        robot().sample_admissible(&mut rng)
    }

    #[test]
    fn straight_chain_height() {
        let r = robot();
        let q = DVector::zeros(r.dof());
        let frames = forward_kinematics(&q, &r).unwrap();
        let ee = frames.last().unwrap();
        assert_relative_eq!(ee.translation, Vector3::new(0.0, 0.0, 0.68), epsilon = 1e-12);
        assert_relative_eq!(ee.rotation, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn base_column_vanishes_on_axis() {
        let r = robot();
        let j = jacobian(&DVector::zeros(r.dof()), &r).unwrap();
        assert!(j.column(0).norm() < 1e-15);
    }

    #[test]
    fn base_column_is_screw_velocity() {
        let r = robot();
        let q = random_q(5);
        let j = jacobian(&q, &r).unwrap();
        let p = end_effector_position(&q, &r).unwrap();
        let expected = Vector3::z().cross(&p);
        assert_relative_eq!(j.column(0).into_owned(), DVector::from_column_slice(expected.as_slice()), epsilon = 1e-13);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let r = robot();
        let q = random_q(9);
        let j = jacobian(&q, &r).unwrap();
        let h = 1e-6;
        for a in 0..r.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[a] += h;
            qm[a] -= h;
            let d = (end_effector_position(&qp, &r).unwrap() - end_effector_position(&qm, &r).unwrap()) / (2.0 * h);
            for i in 0..3 {
                assert!((j[(i, a)] - d[i]).abs() < 1e-7, "col {a}: {} vs {}", j[(i, a)], d[i]);
            }
        }
    }

    #[test]
    fn spatial_jacobian_angular_rows_match_rotation_rate() {
        let r = robot();
        let q = random_q(2);
        let js = spatial_jacobian(&q, &r).unwrap();
        let h = 1e-6;
        let rot = |q: &DVector<f64>| forward_kinematics(q, &r).unwrap().last().unwrap().rotation;
        let r0 = rot(&q);
        for a in 0..r.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[a] += h;
            qm[a] -= h;
            let rd = (rot(&qp) - rot(&qm)) / (2.0 * h);
            let w = vee(&(rd * r0.transpose()));
            for i in 0..3 {
                assert!((js[(3 + i, a)] - w[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn actuation_blocks() {
        let r = robot();
        let q = DVector::zeros(r.dof());
        let a = actuation_matrix(&q, &r).unwrap();
        assert!(!a.is_ill_conditioned());
        for j in r.joint_coordinates() {
            assert_eq!(a.matrix.column(j).iter().filter(|v| **v != 0.0).count(), 1);
            assert_eq!(a.matrix[(j, j)], 1.0);
        }
        // first cable at ψ = 0: column is −[−1, 0, 1]/r
        assert_relative_eq!(a.matrix[(1, 1)], 100.0, epsilon = 1e-12);
        assert_relative_eq!(a.matrix[(3, 1)], -100.0, epsilon = 1e-12);
        let id = actuation_matrix(&q, &r.clone().with_actuation(ActuationMode::Identity)).unwrap();
        assert_eq!(id.matrix, DMatrix::identity(16, 16));
    }

    #[test]
    fn workspace_is_deterministic() {
        let r = robot();
        assert_eq!(workspace_sample(&r, 50, 11), workspace_sample(&r, 50, 11));
    }
}
