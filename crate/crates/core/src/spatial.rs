//! Spatial vectors in world coordinates, referenced at the world origin.
//!
//! Motion vectors are `[ω; v_O]` where `v_O` is the velocity of the body point
//! instantaneously at the origin. Force vectors are `[n_O; f]`. Because every
//! quantity lives in the same fixed frame, rigid attachments need no transform.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::geometry::{skew, Pose};

#[inline]
pub fn angular(v: &Vector6<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

#[inline]
pub fn linear(v: &Vector6<f64>) -> Vector3<f64> {
    Vector3::new(v[3], v[4], v[5])
}

#[inline]
pub fn join(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

/// Velocity of the world point `p` for the motion `v`.
#[inline]
pub fn point_velocity(v: &Vector6<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    linear(v) + angular(v).cross(p)
}

/// Motion cross product `v ×ₘ m`.
#[inline]
pub fn cross_motion(v: &Vector6<f64>, m: &Vector6<f64>) -> Vector6<f64> {
    let (w, vo) = (angular(v), linear(v));
    let (mw, mv) = (angular(m), linear(m));
    join(&w.cross(&mw), &(w.cross(&mv) + vo.cross(&mw)))
}

/// Force cross product `v ×* f`.
#[inline]
pub fn cross_force(v: &Vector6<f64>, f: &Vector6<f64>) -> Vector6<f64> {
    let (w, vo) = (angular(v), linear(v));
    let (n, fl) = (angular(f), linear(f));
    join(&(w.cross(&n) + vo.cross(&fl)), &w.cross(&fl))
}

/// Maps a motion vector expressed in the frame `pose` (at its origin) into
/// world coordinates at the world origin.
#[inline]
pub fn transform_motion(pose: &Pose, m: &Vector6<f64>) -> Vector6<f64> {
    let w = pose.rotation * angular(m);
    let v = pose.rotation * linear(m) + pose.translation.cross(&w);
    join(&w, &v)
}

/// Rigid body inertial parameters in its own frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyInertia {
    pub mass: f64,
    /// Center of mass in the body frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass, body-frame axes.
    pub inertia: Matrix3<f64>,
}

impl BodyInertia {
    /// 6×6 spatial inertia in world coordinates for a body frame at `pose`.
    pub fn spatial(&self, pose: &Pose) -> Matrix6<f64> {
        let c = pose.transform_point(&self.com);
        let ic = pose.rotation * self.inertia * pose.rotation.transpose();
        let cx = skew(&c);
        let m = self.mass;
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(ic + cx * cx.transpose() * m));
        out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(cx * m));
        out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(cx.transpose() * m));
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * m));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spatial_kinetic_energy_matches_point_form() {
        let body = BodyInertia {
            mass: 2.0,
            com: Vector3::new(0.1, -0.2, 0.3),
            inertia: Matrix3::from_diagonal(&Vector3::new(0.01, 0.02, 0.03)),
        };
        let pose = Pose::rotation_about(&Vector3::new(0.0, 0.6, 0.8), 0.7).compose(&Pose::translation_z(0.4));
        let v = Vector6::new(0.3, -1.0, 0.5, 0.2, 0.1, -0.7);
        let ke_spatial = 0.5 * v.dot(&(body.spatial(&pose) * v));
        let c = pose.transform_point(&body.com);
        let vc = point_velocity(&v, &c);
        let w = angular(&v);
        let ic = pose.rotation * body.inertia * pose.rotation.transpose();
        let ke = 0.5 * body.mass * vc.norm_squared() + 0.5 * w.dot(&(ic * w));
        assert_relative_eq!(ke_spatial, ke, epsilon = 1e-14);
    }

    #[test]
    fn cross_products_are_dual() {
        let v = Vector6::new(0.3, -1.0, 0.5, 0.2, 0.1, -0.7);
        let m = Vector6::new(1.0, 2.0, -0.5, 0.4, -0.1, 0.9);
        let f = Vector6::new(-0.2, 0.5, 0.1, 2.0, -1.0, 0.3);
        // (v ×ₘ m)·f = −m·(v ×* f)
        assert_relative_eq!(cross_motion(&v, &m).dot(&f), -m.dot(&cross_force(&v, &f)), epsilon = 1e-14);
    }
}
