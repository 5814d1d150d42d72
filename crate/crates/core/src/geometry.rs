//! Single-module geometry: the singularity-free constant-curvature map, the
//! inter-plate gap and the cable-length bookkeeping.
//!
//! A module state is `[Δx, Δy, δL]`: `Δx`, `Δy` are arc-length differences
//! between the backbone and a fiber at radius `d` in the x and y directions,
//! `δL` is the change of the backbone length from the rest length `L0`. The
//! bend angle is `θ = √(Δx²+Δy²)/d` about the in-plane axis `(−Δy, Δx, 0)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Scalar;

/// Below this value of `θ²` the closed-form trigonometric ratios are replaced
/// by their Taylor series.
const SERIES_THETA_SQ: f64 = 1e-3;

/// Removable-singularity threshold of the plate gap, relative to `d`.
pub const PLATE_GAP_RHO_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleGeometry {
    /// Rest length of the foam stack (m).
    pub rest_length: f64,
    /// Section radius `d` used both by the parameterization and the plate gap (m).
    pub radius: f64,
    /// Number of inter-plate gaps.
    #[serde(default = "default_plate_gaps")]
    pub plate_gaps: usize,
    /// Spool radius of the cable motors (m).
    pub spool_radius: f64,
    /// Angular positions of the three cables around the section (rad).
    #[serde(default = "default_cable_angles")]
    pub cable_angles: [f64; 3],
    /// Module mass excluding the joint motor (kg).
    pub mass: f64,
    /// Smallest admissible `δL` (m). Defaults to `-rest_length`.
    #[serde(default)]
    pub compression_limit: Option<f64>,
}

fn default_plate_gaps() -> usize {
    3
}

fn default_cable_angles() -> [f64; 3] {
    [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0]
}

impl ModuleGeometry {
    pub fn compression_limit(&self) -> f64 {
        self.compression_limit.unwrap_or(-self.rest_length)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("module {name} must be > 0, got {v}")))
            }
        };
        pos("rest_length", self.rest_length)?;
        pos("radius", self.radius)?;
        pos("spool_radius", self.spool_radius)?;
        if !(self.mass.is_finite() && self.mass >= 0.0) {
            return Err(Error::Config(format!("module mass must be >= 0, got {}", self.mass)));
        }
        if self.plate_gaps == 0 {
            return Err(Error::Config("plate_gaps must be >= 1".into()));
        }
        let lim = self.compression_limit();
        if !(lim >= -self.rest_length && lim < 0.0) {
            return Err(Error::Config(format!(
                "compression_limit must lie in [-rest_length, 0) = [{}, 0), got {lim}",
                -self.rest_length
            )));
        }
        Ok(())
    }

    pub fn check_state(&self, q_mod: &[f64; 3]) -> Result<()> {
        if let Some(i) = q_mod.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "module state", index: i });
        }
        let lim = self.compression_limit();
        if q_mod[2] < lim {
            return Err(Error::CompressionLimit { module: 0, delta_l: q_mod[2], limit: lim });
        }
        Ok(())
    }
}

/// Rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn translation_z(z: f64) -> Self {
        Self::new(Matrix3::identity(), Vector3::new(0.0, 0.0, z))
    }

    /// Rotation by `angle` about the unit `axis`.
    pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Self {
        let k = skew(axis);
        let r = Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos());
        Self::new(r, Vector3::zeros())
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(self.rotation * other.rotation, self.rotation * other.translation + self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `‖RᵀR − I‖∞`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `sin θ / θ` as a function of `u = θ²`.
fn sinc_of_sq<S: Scalar>(u: S) -> S {
    if u.value() < SERIES_THETA_SQ {
        // 1 − u/6 + u²/120 − u³/5040 + u⁴/362880
        let one = S::constant(1.0);
        one - u.scale(1.0 / 6.0)
            * (one - u.scale(1.0 / 20.0) * (one - u.scale(1.0 / 42.0) * (one - u.scale(1.0 / 72.0))))
    } else {
        let th = u.sqrt();
        th.sin() / th
    }
}

/// `(1 − cos θ)/θ²` as a function of `u = θ²`.
fn versc_of_sq<S: Scalar>(u: S) -> S {
    if u.value() < SERIES_THETA_SQ {
        // 1/2 − u/24 + u²/720 − u³/40320 + u⁴/3628800
        let one = S::constant(1.0);
        (one - u.scale(1.0 / 12.0)
            * (one - u.scale(1.0 / 30.0) * (one - u.scale(1.0 / 56.0) * (one - u.scale(1.0 / 90.0)))))
        .scale(0.5)
    } else {
        let th = u.sqrt();
        let s = th.scale(0.5).sin();
        (s * s).scale(2.0) / u
    }
}

/// Constant-curvature arc of backbone length `length` with bend coordinates
/// `(dx, dy)` at radius `radius`. Returns the rotation (row-major) and the
/// translation of the arc tip relative to its base.
pub fn pcc_arc<S: Scalar>(dx: S, dy: S, length: S, radius: f64) -> ([[S; 3]; 3], [S; 3]) {
    let ax = dx.scale(1.0 / radius);
    let ay = dy.scale(1.0 / radius);
    let u = ax * ax + ay * ay;
    let f1 = sinc_of_sq(u);
    let f2 = versc_of_sq(u);
    let one = S::constant(1.0);
    let fxy = -(f2 * ax * ay);
    let r = [
        [one - f2 * ax * ax, fxy, f1 * ax],
        [fxy, one - f2 * ay * ay, f1 * ay],
        [-(f1 * ax), -(f1 * ay), one - f2 * u],
    ];
    let p = [length * f2 * ax, length * f2 * ay, length * f1];
    (r, p)
}

fn pose_from_arc(r: [[f64; 3]; 3], p: [f64; 3]) -> Pose {
    Pose::new(
        Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]),
        Vector3::new(p[0], p[1], p[2]),
    )
}

/// Transform from the module base frame to the frame at arc fraction `s ∈ [0, 1]`
/// without validating the state.
pub fn module_point_transform(q_mod: &[f64; 3], geom: &ModuleGeometry, s: f64) -> Pose {
    let len = s * (geom.rest_length + q_mod[2]);
    let (r, p) = pcc_arc(s * q_mod[0], s * q_mod[1], len, geom.radius);
    pose_from_arc(r, p)
}

/// Transform from the module base frame to the module tip frame.
pub fn module_transform(q_mod: &[f64; 3], geom: &ModuleGeometry) -> Result<Pose> {
    geom.check_state(q_mod)?;
    Ok(module_point_transform(q_mod, geom, 1.0))
}

/// Backbone bend magnitude `ρ = √(Δx²+Δy²)`.
pub fn bend_magnitude(q_mod: &[f64; 3]) -> f64 {
    q_mod[0].hypot(q_mod[1])
}

/// Distance between adjacent plates on the inner side of the bend.
///
/// `c = 2(d(L0+δL)/ρ − d)·sin(ρ/(2·N·d))` with `N` the number of gaps; below
/// `ρ = 1e-4·d` the second-order expansion in `ρ` is used. Negative values
/// indicate interpenetration.
pub fn plate_gap(q_mod: &[f64; 3], geom: &ModuleGeometry) -> f64 {
    let d = geom.radius;
    let len = geom.rest_length + q_mod[2];
    let k = 1.0 / (2.0 * geom.plate_gaps as f64 * d);
    let rho = bend_magnitude(q_mod);
    if rho < PLATE_GAP_RHO_TOL * d {
        2.0 * d * k * (len - rho) - d * len * k.powi(3) * rho * rho / 3.0
    } else {
        2.0 * (d * len / rho - d) * (k * rho).sin()
    }
}

/// Gradient of [`plate_gap`] with respect to `[Δx, Δy, δL]`. At `ρ = 0`
/// the lateral components are set to zero (the gap has a cone point there).
pub fn plate_gap_gradient(q_mod: &[f64; 3], geom: &ModuleGeometry) -> [f64; 3] {
    let d = geom.radius;
    let len = geom.rest_length + q_mod[2];
    let k = 1.0 / (2.0 * geom.plate_gaps as f64 * d);
    let rho = bend_magnitude(q_mod);
    let (dc_drho, dc_dlen) = if rho < PLATE_GAP_RHO_TOL * d {
        (-2.0 * d * k - 2.0 * d * len * k.powi(3) * rho / 3.0, 2.0 * d * k - d * k.powi(3) * rho * rho / 3.0)
    } else {
        let (s, c) = (k * rho).sin_cos();
        (-2.0 * d * len / (rho * rho) * s + 2.0 * (d * len / rho - d) * k * c, 2.0 * d / rho * s)
    };
    if rho > 0.0 {
        [dc_drho * q_mod[0] / rho, dc_drho * q_mod[1] / rho, dc_dlen]
    } else {
        [0.0, 0.0, dc_dlen]
    }
}

/// Largest bend magnitude with non-negative plate gap at a given `δL`:
/// the gap vanishes when `ρ = L0 + δL`.
pub fn max_contact_free_bend(delta_l: f64, geom: &ModuleGeometry) -> f64 {
    (geom.rest_length + delta_l).max(0.0)
}

/// `∂l/∂q_mod` of the affine cable map (row k = cable k).
pub fn cable_map_gradient(geom: &ModuleGeometry) -> Matrix3<f64> {
    let mut g = Matrix3::zeros();
    for (k, psi) in geom.cable_angles.iter().enumerate() {
        g[(k, 0)] = -psi.cos();
        g[(k, 1)] = -psi.sin();
        g[(k, 2)] = 1.0;
    }
    g
}

/// Cable lengths `l_k = (L0 + δL) − (cos ψ_k Δx + sin ψ_k Δy)`.
pub fn cable_lengths(q_mod: &[f64; 3], geom: &ModuleGeometry) -> Result<[f64; 3]> {
    let len = geom.rest_length + q_mod[2];
    let mut out = [0.0; 3];
    for (k, psi) in geom.cable_angles.iter().enumerate() {
        let l = len - (psi.cos() * q_mod[0] + psi.sin() * q_mod[1]);
        if l <= 0.0 {
            return Err(Error::Domain(format!("cable {k} length {l} is not positive")));
        }
        out[k] = l;
    }
    Ok(out)
}

/// Inverse of [`cable_lengths`].
pub fn module_state_from_cables(lengths: &[f64; 3], geom: &ModuleGeometry) -> Result<[f64; 3]> {
    let g = cable_map_gradient(geom);
    let inv = g.try_inverse().ok_or_else(|| Error::Domain("cable angles are collinear".into()))?;
    let rhs = Vector3::new(lengths[0] - geom.rest_length, lengths[1] - geom.rest_length, lengths[2] - geom.rest_length);
    let q = inv * rhs;
    Ok([q.x, q.y, q.z])
}

/// Cable bookkeeping from motor encoders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CableState {
    pub lengths: [f64; 3],
    pub reference_lengths: [f64; 3],
    pub motor_angle_deltas: [f64; 3],
}

impl CableState {
    pub fn from_motor_angles(reference_lengths: [f64; 3], deltas: [f64; 3], geom: &ModuleGeometry) -> Self {
        Self {
            lengths: motor_angles_to_cable_lengths(&reference_lengths, &deltas, geom),
            reference_lengths,
            motor_angle_deltas: deltas,
        }
    }
}

/// `l_k = l0_k − Δθ_k·r`.
pub fn motor_angles_to_cable_lengths(reference: &[f64; 3], deltas: &[f64; 3], geom: &ModuleGeometry) -> [f64; 3] {
    let r = geom.spool_radius;
    [reference[0] - deltas[0] * r, reference[1] - deltas[1] * r, reference[2] - deltas[2] * r]
}

/// `Δθ_k = (l0_k − l_k)/r`.
pub fn cable_lengths_to_motor_angles(reference: &[f64; 3], lengths: &[f64; 3], geom: &ModuleGeometry) -> [f64; 3] {
    let r = geom.spool_radius;
    [(reference[0] - lengths[0]) / r, (reference[1] - lengths[1]) / r, (reference[2] - lengths[2]) / r]
}

#[cfg(test)]
pub(crate) fn test_geometry() -> ModuleGeometry {
    ModuleGeometry {
        rest_length: 0.075,
        radius: 0.03,
        plate_gaps: 3,
        spool_radius: 0.01,
        cable_angles: default_cable_angles(),
        mass: 0.15,
        compression_limit: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Jet;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn straight_module_is_pure_translation() {
        let g = test_geometry();
        let p = module_transform(&[0.0, 0.0, 0.0], &g).unwrap();
        assert_relative_eq!(p.translation, Vector3::new(0.0, 0.0, 0.075), epsilon = 1e-15);
        assert_relative_eq!(p.rotation, Matrix3::identity(), epsilon = 1e-15);
        let p = module_transform(&[0.0, 0.0, -0.0375], &g).unwrap();
        assert_relative_eq!(p.translation, Vector3::new(0.0, 0.0, 0.0375), epsilon = 1e-15);
    }

    /// Integrates the unit tangent of a planar arc of total angle `phi` and
    /// length `len` with composite Simpson's rule.
    fn integrate_arc(len: f64, phi: f64, n: usize) -> (f64, f64) {
        let h = 1.0 / n as f64;
        let (mut x, mut z) = (0.0, 0.0);
        for i in 0..=n {
            let s = i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            x += w * (phi * s).sin();
            z += w * (phi * s).cos();
        }
        (len * x * h / 3.0, len * z * h / 3.0)
    }

    #[test]
    fn quarter_bend_matches_integrated_arc() {
        let g = test_geometry();
        let dx = g.radius * PI / 2.0;
        let p = module_transform(&[dx, 0.0, 0.0], &g).unwrap();
        let (x, z) = integrate_arc(g.rest_length, PI / 2.0, 2000);
        assert_relative_eq!(p.translation.x, x, epsilon = 1e-12);
        assert_relative_eq!(p.translation.z, z, epsilon = 1e-12);
        assert_relative_eq!(p.translation.y, 0.0, epsilon = 1e-15);
        // tip tangent rotated by π/2 toward +x
        assert_relative_eq!(p.rotation.column(2).into_owned(), Vector3::x(), epsilon = 1e-14);
    }

    #[test]
    fn series_and_closed_form_agree_at_switch() {
        let g = test_geometry();
        let th = SERIES_THETA_SQ.sqrt();
        let below = module_point_transform(&[th * g.radius * (1.0 - 1e-12), 0.0, 0.01], &g, 1.0);
        let above = module_point_transform(&[th * g.radius * (1.0 + 1e-12), 0.0, 0.01], &g, 1.0);
        assert!((below.rotation - above.rotation).amax() < 1e-13);
        assert!((below.translation - above.translation).amax() < 1e-14);
    }

    #[test]
    fn jet_derivatives_continuous_through_zero_bend() {
        let g = test_geometry();
        for dx0 in [0.0, 1e-9, 1e-3] {
            let (r, p) = pcc_arc(Jet::variable(dx0, 1.0), Jet::constant(0.0), Jet::constant(0.075), g.radius);
            // dp_x/dΔx at straight pose = L/(2d), d²p_z/dΔx² = −L/(3d²)
            if dx0 < 1e-6 {
                assert_relative_eq!(p[0].d, 0.075 / (2.0 * g.radius), epsilon = 1e-9);
                assert_relative_eq!(p[2].dd, -0.075 / (3.0 * g.radius * g.radius), epsilon = 1e-6);
                assert_relative_eq!(r[0][2].d, 1.0 / g.radius, epsilon = 1e-9);
            }
            assert!(p.iter().all(|v| v.d.is_finite() && v.dd.is_finite()));
        }
    }

    #[test]
    fn compression_limit_rejected() {
        let g = test_geometry();
        assert!(matches!(module_transform(&[0.0, 0.0, -0.08], &g), Err(Error::CompressionLimit { .. })));
    }

    #[test]
    fn plate_gap_limits() {
        let g = test_geometry();
        // small-angle limit L0/3, checked against the closed form at ρ = 1e-6
        let closed = 2.0 * (g.radius * g.rest_length / 1e-6 - g.radius) * (1e-6 / (6.0 * g.radius)).sin();
        assert_relative_eq!(closed, g.rest_length / 3.0, epsilon = 1e-6);
        assert_relative_eq!(plate_gap(&[0.0, 0.0, 0.0], &g), g.rest_length / 3.0, epsilon = 1e-15);
        assert_eq!(plate_gap(&[0.0, 0.0, -g.rest_length], &g), 0.0);
    }

    #[test]
    fn plate_gap_matches_chord_construction() {
        // Inner fiber at radius R − d over one gap's share of the bend angle.
        let g = test_geometry();
        let q = [0.02, 0.0, 0.0];
        let theta = 0.02 / g.radius;
        let bend_radius = g.rest_length / theta;
        let inner = bend_radius - g.radius;
        let phi = theta / 3.0;
        // chord between two points on a circle of radius `inner` separated by phi
        let a = Vector3::new(inner, 0.0, 0.0);
        let b = Vector3::new(inner * phi.cos(), inner * phi.sin(), 0.0);
        let chord = (a - b).norm();
        assert_relative_eq!(plate_gap(&q, &g), chord, epsilon = 1e-14);
    }

    #[test]
    fn plate_gap_continuous_at_series_switch() {
        let g = test_geometry();
        let rho = PLATE_GAP_RHO_TOL * g.radius;
        let d = g.radius;
        let k = 1.0 / (6.0 * d);
        for dl in [0.0, -0.03, 0.01] {
            let len = g.rest_length + dl;
            let closed = 2.0 * (d * len / rho - d) * (k * rho).sin();
            let series = 2.0 * d * k * (len - rho) - d * len * k.powi(3) * rho * rho / 3.0;
            assert!((closed - series).abs() < 1e-10);
        }
    }

    #[test]
    fn plate_gap_gradient_matches_fd() {
        let g = test_geometry();
        for q in [[0.01, -0.004, -0.02], [1e-7, 2e-7, 0.0], [0.03, 0.02, 0.005]] {
            let grad = plate_gap_gradient(&q, &g);
            // the gap is a cone near ρ = 0, so the step must shrink with ρ
            let h = (1e-3 * bend_magnitude(&q)).min(1e-8);
            for i in 0..3 {
                let mut qp = q;
                let mut qm = q;
                qp[i] += h;
                qm[i] -= h;
                let fd = (plate_gap(&qp, &g) - plate_gap(&qm, &g)) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-6, "component {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn gap_vanishes_at_max_contact_free_bend() {
        let g = test_geometry();
        let dl = -0.02;
        let rho = max_contact_free_bend(dl, &g);
        assert!(plate_gap(&[rho, 0.0, dl], &g).abs() < 1e-15);
    }

    #[test]
    fn cable_examples() {
        let g = test_geometry();
        assert_eq!(cable_lengths(&[0.0, 0.0, 0.0], &g).unwrap(), [0.075; 3]);
        let d = 0.01;
        let l = cable_lengths(&[d, 0.0, 0.0], &g).unwrap();
        assert_relative_eq!(l[0], 0.075 - d, epsilon = 1e-15);
        assert_relative_eq!(l[1], 0.075 + d / 2.0, epsilon = 1e-15);
        assert_relative_eq!(l[2], 0.075 + d / 2.0, epsilon = 1e-15);
        assert!(cable_lengths(&[0.2, 0.0, 0.0], &g).is_err());
    }

    #[test]
    fn motor_angle_bookkeeping() {
        let g = test_geometry();
        let l0 = [0.1, 0.11, 0.12];
        assert_eq!(motor_angles_to_cable_lengths(&l0, &[0.0; 3], &g), l0);
        let l = motor_angles_to_cable_lengths(&l0, &[PI, 0.0, 0.0], &g);
        assert_relative_eq!(l0[0] - l[0], 0.031_415_926_535_897_93, epsilon = 1e-15);
        let back = cable_lengths_to_motor_angles(&l0, &l, &g);
        let again = motor_angles_to_cable_lengths(&l0, &back, &g);
        for k in 0..3 {
            assert!((again[k] - l[k]).abs() < 1e-15);
        }
        let st = CableState::from_motor_angles(l0, [0.1, 0.2, 0.3], &g);
        assert_eq!(st.lengths, motor_angles_to_cable_lengths(&l0, &[0.1, 0.2, 0.3], &g));
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(dx in -0.06f64..0.06, dy in -0.06f64..0.06, dl in -0.075f64..0.02) {
            let g = test_geometry();
            let p = module_transform(&[dx, dy, dl], &g).unwrap();
            prop_assert!(p.orthonormality_error() < 1e-12);
            prop_assert!((p.rotation.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cable_round_trip(dx in -0.02f64..0.02, dy in -0.02f64..0.02, dl in -0.03f64..0.02) {
            let g = test_geometry();
            let q = [dx, dy, dl];
            let l = cable_lengths(&q, &g).unwrap();
            prop_assert!((l.iter().sum::<f64>() - 3.0 * (g.rest_length + dl)).abs() < 1e-14);
            let back = module_state_from_cables(&l, &g).unwrap();
            for i in 0..3 {
                prop_assert!((back[i] - q[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn plate_gap_decreases_with_compression(rho in 0.0f64..0.05, a in -0.075f64..0.0, b in -0.075f64..0.0) {
            let g = test_geometry();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(plate_gap(&[rho, 0.0, lo], &g) <= plate_gap(&[rho, 0.0, hi], &g) + 1e-15);
        }
    }
}
