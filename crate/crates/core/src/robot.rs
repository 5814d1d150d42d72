//! Robot description: an open chain of rigid rotational joints and soft
//! constant-curvature modules, with lumped inertial parameters.
//!
//! The description is loadable from TOML. Lengths are in meters, masses in kg,
//! stiffness in N/m (module coordinates are lengths), damping in N·s/m or
//! N·m·s/rad for joints.
//!
//! ```toml
//! gravity = [0.0, 0.0, -9.81]
//! ee_offset = 0.0
//!
//! [[segments]]
//! kind = "joint"
//! axis = [0.0, 0.0, 1.0]
//! offset = 0.095
//! damping = 0.02
//! motor = { mass = 0.1, com = [0.0, 0.0, 0.0475], inertia = [2e-5, 2e-5, 1.5e-5] }
//!
//! [[segments]]
//! kind = "module"
//! bend_stiffness = 1.0e4
//! axial_stiffness = 4.0e3
//! bend_damping = 5.0
//! axial_damping = 5.0
//! [segments.geometry]
//! rest_length = 0.075
//! radius = 0.03
//! spool_radius = 0.01
//! mass = 0.15
//! ```

use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{max_contact_free_bend, plate_gap, ModuleGeometry};
use crate::spatial::BodyInertia;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidBody {
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
    /// Principal moments about the center of mass (kg·m²).
    #[serde(default)]
    pub inertia: [f64; 3],
}

impl RigidBody {
    pub fn inertia(&self) -> BodyInertia {
        BodyInertia {
            mass: self.mass,
            com: Vector3::from(self.com),
            inertia: Matrix3::from_diagonal(&Vector3::from(self.inertia)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Joint {
    /// Rotation axis in the parent frame.
    pub axis: [f64; 3],
    /// Rigid offset along the rotated local z axis (m).
    #[serde(default)]
    pub offset: f64,
    pub damping: f64,
    /// Motor housing attached after the rotation.
    #[serde(default)]
    pub motor: Option<RigidBody>,
    #[serde(default = "default_joint_range")]
    pub range: [f64; 2],
    /// Reflected rotor inertia of the geared motor about the joint axis (kg·m²).
    #[serde(default)]
    pub armature: f64,
}

fn default_joint_range() -> [f64; 2] {
    [-std::f64::consts::PI, std::f64::consts::PI]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftModule {
    pub geometry: ModuleGeometry,
    /// Elastic constant on Δx and Δy (N/m).
    pub bend_stiffness: f64,
    /// Elastic constant on δL (N/m).
    pub axial_stiffness: f64,
    pub bend_damping: f64,
    pub axial_damping: f64,
    /// Number of lumped rigid slices along the arc. Defaults to one per plate gap.
    #[serde(default)]
    pub slices: Option<usize>,
    /// Admissible bend magnitude ρ for sampling (m). Defaults to the rest length.
    #[serde(default)]
    pub bend_limit: Option<f64>,
    /// Admissible δL interval for sampling (m). Defaults to [compression_limit, 0].
    #[serde(default)]
    pub delta_l_range: Option<[f64; 2]>,
    /// Point masses instead of plates with rotational inertia.
    #[serde(default)]
    pub point_masses: bool,
}

impl SoftModule {
    pub fn slice_count(&self) -> usize {
        self.slices.unwrap_or(self.geometry.plate_gaps)
    }

    /// Arc fractions of the lumped slices (the last one is the tip plate).
    pub fn slice_fractions(&self) -> Vec<f64> {
        let n = self.slice_count();
        (1..=n).map(|j| j as f64 / n as f64).collect()
    }

    /// Inertia of one slice: a thin disc of radius `d` in the slice frame.
    pub fn slice_inertia(&self) -> BodyInertia {
        let m = self.geometry.mass / self.slice_count() as f64;
        let d = self.geometry.radius;
        let inertia = if self.point_masses {
            Matrix3::zeros()
        } else {
            Matrix3::from_diagonal(&Vector3::new(m * d * d / 4.0, m * d * d / 4.0, m * d * d / 2.0))
        };
        BodyInertia { mass: m, com: Vector3::zeros(), inertia }
    }

    pub fn bend_limit(&self) -> f64 {
        self.bend_limit.unwrap_or(self.geometry.rest_length)
    }

    pub fn delta_l_range(&self) -> [f64; 2] {
        self.delta_l_range.unwrap_or([self.geometry.compression_limit(), 0.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Segment {
    Joint(Joint),
    Module(SoftModule),
}

impl Segment {
    pub fn dof(&self) -> usize {
        match self {
            Segment::Joint(_) => 1,
            Segment::Module(_) => 3,
        }
    }
}

/// How motor torques enter the generalized forces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActuationMode {
    /// Joint torques directly; module motors through the cable map and spools.
    #[default]
    Cable,
    /// `A = I`: the controller output is the generalized force.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotSpec {
    #[serde(default = "default_gravity")]
    gravity: [f64; 3],
    #[serde(default)]
    ee_offset: f64,
    #[serde(default)]
    actuation: ActuationMode,
    segments: Vec<Segment>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -STANDARD_GRAVITY]
}

/// Validated chain description with its coordinate layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RobotSpec", into = "RobotSpec")]
pub struct RobotDescription {
    segments: Vec<Segment>,
    gravity: Vector3<f64>,
    ee_offset: f64,
    actuation: ActuationMode,
    offsets: Vec<usize>,
    dof: usize,
}

impl TryFrom<RobotSpec> for RobotDescription {
    type Error = Error;
    fn try_from(spec: RobotSpec) -> Result<Self> {
        Ok(RobotDescription::new(spec.segments, Vector3::from(spec.gravity), spec.ee_offset)?
            .with_actuation(spec.actuation))
    }
}

impl From<RobotDescription> for RobotSpec {
    fn from(r: RobotDescription) -> Self {
        RobotSpec { gravity: r.gravity.into(), ee_offset: r.ee_offset, actuation: r.actuation, segments: r.segments }
    }
}

/// Location of a module's coordinates in the stacked vector.
#[derive(Debug, Clone, Copy)]
pub struct ModuleSlot<'a> {
    /// Index among modules.
    pub index: usize,
    pub segment: usize,
    pub offset: usize,
    pub module: &'a SoftModule,
}

impl RobotDescription {
    pub fn new(segments: Vec<Segment>, gravity: Vector3<f64>, ee_offset: f64) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("robot needs at least one segment".into()));
        }
        let mut offsets = Vec::with_capacity(segments.len());
        let mut dof = 0;
        for (i, seg) in segments.iter().enumerate() {
            offsets.push(dof);
            dof += seg.dof();
            match seg {
                Segment::Joint(j) => {
                    let axis = Vector3::from(j.axis);
                    if !(axis.norm() - 1.0).abs().lt(&1e-9) {
                        return Err(Error::Config(format!("segment {i}: joint axis must be a unit vector")));
                    }
                    if !(j.damping >= 0.0) {
                        return Err(Error::Config(format!("segment {i}: joint damping must be >= 0")));
                    }
                    if !(j.offset >= 0.0) {
                        return Err(Error::Config(format!("segment {i}: joint offset must be >= 0")));
                    }
                    if let Some(m) = &j.motor {
                        if !(m.mass >= 0.0) || m.inertia.iter().any(|v| !(*v >= 0.0)) {
                            return Err(Error::Config(format!("segment {i}: motor mass/inertia must be >= 0")));
                        }
                    }
                    if !(j.armature >= 0.0) {
                        return Err(Error::Config(format!("segment {i}: joint armature must be >= 0")));
                    }
                    if !(j.range[0] <= j.range[1]) {
                        return Err(Error::Config(format!("segment {i}: joint range must be ordered")));
                    }
                }
                Segment::Module(m) => {
                    m.geometry.validate().map_err(|e| Error::Config(format!("segment {i}: {e}")))?;
                    if !(m.bend_stiffness >= 0.0 && m.axial_stiffness >= 0.0) {
                        return Err(Error::Config(format!("segment {i}: stiffness must be >= 0")));
                    }
                    if !(m.bend_damping >= 0.0 && m.axial_damping >= 0.0) {
                        return Err(Error::Config(format!("segment {i}: damping must be >= 0")));
                    }
                    if m.slice_count() == 0 {
                        return Err(Error::Config(format!("segment {i}: slices must be >= 1")));
                    }
                    let [lo, hi] = m.delta_l_range();
                    let lim = m.geometry.compression_limit();
                    if lo < lim {
                        return Err(Error::Config(format!(
                            "segment {i}: delta_l_range lower bound {lo} violates compression limit {lim} (delta_l >= -rest_length)"
                        )));
                    }
                    if hi < lo {
                        return Err(Error::Config(format!("segment {i}: delta_l_range must be ordered")));
                    }
                    if !(m.bend_limit() >= 0.0) {
                        return Err(Error::Config(format!("segment {i}: bend_limit must be >= 0")));
                    }
                }
            }
        }
        if !(ee_offset >= 0.0) {
            return Err(Error::Config("ee_offset must be >= 0".into()));
        }
        if gravity.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("gravity must be finite".into()));
        }
        Ok(Self { segments, gravity, ee_offset, actuation: ActuationMode::Cable, offsets, dof })
    }

    /// Four joint+module pairs, 25 mm plate spacing, 0.68 m tall.
    ///
    /// Stiffness and damping values are estimates sized so the passive robot
    /// stands under gravity; they are not identified from hardware.
    pub fn four_module_default() -> Self {
        let mut segments = Vec::new();
        for _ in 0..4 {
            segments.push(Segment::Joint(Joint {
                axis: [0.0, 0.0, 1.0],
                offset: 0.095,
                damping: 0.02,
                motor: Some(RigidBody { mass: 0.1, com: [0.0, 0.0, 0.0475], inertia: [1.0e-4, 1.0e-4, 1.5e-5] }),
                range: default_joint_range(),
                armature: 1.0e-2,
            }));
            segments.push(Segment::Module(SoftModule {
                geometry: ModuleGeometry {
                    rest_length: 0.075,
                    radius: 0.03,
                    plate_gaps: 3,
                    spool_radius: 0.01,
                    cable_angles: [0.0, 2.0 * std::f64::consts::PI / 3.0, 4.0 * std::f64::consts::PI / 3.0],
                    mass: 0.15,
                    compression_limit: None,
                },
                bend_stiffness: 1.0e4,
                axial_stiffness: 4.0e3,
                bend_damping: 5.0,
                axial_damping: 5.0,
                slices: None,
                bend_limit: None,
                delta_l_range: None,
                point_masses: false,
            }));
        }
        Self::new(segments, Vector3::new(0.0, 0.0, -STANDARD_GRAVITY), 0.0).expect("default robot is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("robot description serializes")
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    pub fn with_gravity(mut self, g: Vector3<f64>) -> Self {
        self.gravity = g;
        self
    }

    pub fn ee_offset(&self) -> f64 {
        self.ee_offset
    }

    pub fn with_ee_offset(mut self, offset: f64) -> Self {
        self.ee_offset = offset;
        self
    }

    pub fn actuation(&self) -> ActuationMode {
        self.actuation
    }

    pub fn with_actuation(mut self, mode: ActuationMode) -> Self {
        self.actuation = mode;
        self
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn segment_offset(&self, segment: usize) -> usize {
        self.offsets[segment]
    }

    pub fn modules(&self) -> impl Iterator<Item = ModuleSlot<'_>> + '_ {
        self.segments
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                Segment::Module(m) => Some((i, m)),
                _ => None,
            })
            .enumerate()
            .map(move |(index, (segment, module))| ModuleSlot { index, segment, offset: self.offsets[segment], module })
    }

    pub fn module_count(&self) -> usize {
        self.modules().count()
    }

    /// Stacked indices of the joint coordinates.
    pub fn joint_coordinates(&self) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, Segment::Joint(_)))
            .map(|(i, _)| self.offsets[i])
            .collect()
    }

    /// Diagonal of the elastic matrix K (zero on joint coordinates).
    pub fn stiffness_diagonal(&self) -> DVector<f64> {
        let mut k = DVector::zeros(self.dof);
        for slot in self.modules() {
            k[slot.offset] = slot.module.bend_stiffness;
            k[slot.offset + 1] = slot.module.bend_stiffness;
            k[slot.offset + 2] = slot.module.axial_stiffness;
        }
        k
    }

    /// Rotor inertia added to the joint diagonal of `M`.
    pub fn armature_diagonal(&self) -> DVector<f64> {
        let mut a = DVector::zeros(self.dof);
        for (i, seg) in self.segments.iter().enumerate() {
            if let Segment::Joint(j) = seg {
                a[self.offsets[i]] = j.armature;
            }
        }
        a
    }

    /// Diagonal of the damping matrix D.
    pub fn damping_diagonal(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.dof);
        for (i, seg) in self.segments.iter().enumerate() {
            let o = self.offsets[i];
            match seg {
                Segment::Joint(j) => d[o] = j.damping,
                Segment::Module(m) => {
                    d[o] = m.bend_damping;
                    d[o + 1] = m.bend_damping;
                    d[o + 2] = m.axial_damping;
                }
            }
        }
        d
    }

    pub fn coordinate_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dof);
        let (mut j, mut m) = (0, 0);
        for seg in &self.segments {
            match seg {
                Segment::Joint(_) => {
                    j += 1;
                    names.push(format!("theta{j}"));
                }
                Segment::Module(_) => {
                    m += 1;
                    names.extend([format!("dx{m}"), format!("dy{m}"), format!("dl{m}")]);
                }
            }
        }
        names
    }

    /// Module state `[Δx, Δy, δL]` of a module slot.
    pub fn module_state(q: &DVector<f64>, offset: usize) -> [f64; 3] {
        [q[offset], q[offset + 1], q[offset + 2]]
    }

    pub fn check_dimension(&self, what: &'static str, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dof {
            return Err(Error::DimensionMismatch { what, expected: self.dof, got: v.len() });
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what, index: i });
        }
        Ok(())
    }

    /// Dimension, finiteness and compression-limit checks.
    pub fn check_configuration(&self, q: &DVector<f64>) -> Result<()> {
        self.check_dimension("configuration", q)?;
        for slot in self.modules() {
            let dl = q[slot.offset + 2];
            let lim = slot.module.geometry.compression_limit();
            if dl < lim {
                return Err(Error::CompressionLimit { module: slot.index, delta_l: dl, limit: lim });
            }
        }
        Ok(())
    }

    /// Plate gap of every module.
    pub fn plate_gaps(&self, q: &DVector<f64>) -> Vec<f64> {
        self.modules().map(|s| plate_gap(&Self::module_state(q, s.offset), &s.module.geometry)).collect()
    }

    /// Whether `q` lies in the sampling bounds with all plate gaps non-negative.
    pub fn is_admissible(&self, q: &DVector<f64>) -> bool {
        for (i, seg) in self.segments.iter().enumerate() {
            let o = self.offsets[i];
            match seg {
                Segment::Joint(j) => {
                    if q[o] < j.range[0] || q[o] > j.range[1] {
                        return false;
                    }
                }
                Segment::Module(m) => {
                    let s = Self::module_state(q, o);
                    let [lo, hi] = m.delta_l_range();
                    let rho = s[0].hypot(s[1]);
                    if s[2] < lo || s[2] > hi || rho > m.bend_limit() {
                        return false;
                    }
                    if plate_gap(&s, &m.geometry) < 0.0 {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Uniform sample from the admissible set (sampling bounds with all plate
    /// gaps non-negative), by rejection from the enclosing box.
    pub fn sample_admissible<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut q = DVector::zeros(self.dof);
        for (i, seg) in self.segments.iter().enumerate() {
            let o = self.offsets[i];
            match seg {
                Segment::Joint(j) => q[o] = uniform(rng, j.range[0], j.range[1]),
                Segment::Module(m) => {
                    let [lo, hi] = m.delta_l_range();
                    let box_half = m.bend_limit().min(max_contact_free_bend(hi, &m.geometry));
                    loop {
                        let dl = uniform(rng, lo, hi);
                        let dx = uniform(rng, -box_half, box_half);
                        let dy = uniform(rng, -box_half, box_half);
                        let rho = dx.hypot(dy);
                        if rho <= m.bend_limit().min(max_contact_free_bend(dl, &m.geometry))
                            && plate_gap(&[dx, dy, dl], &m.geometry) >= 0.0
                        {
                            q[o] = dx;
                            q[o + 1] = dy;
                            q[o + 2] = dl;
                            break;
                        }
                    }
                }
            }
        }
        q
    }

    pub fn total_mass(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Joint(j) => j.motor.as_ref().map_or(0.0, |m| m.mass),
                Segment::Module(m) => m.geometry.mass,
            })
            .sum()
    }
}

fn uniform<R: rand::Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn default_robot_layout() {
        let r = RobotDescription::four_module_default();
        assert_eq!(r.dof(), 16);
        assert_eq!(r.module_count(), 4);
        assert_eq!(r.joint_coordinates(), vec![0, 4, 8, 12]);
        let k = r.stiffness_diagonal();
        for j in r.joint_coordinates() {
            assert_eq!(k[j], 0.0);
        }
        assert!(r.damping_diagonal().iter().all(|d| *d > 0.0));
        assert_eq!(&r.coordinate_names()[..4], &["theta1", "dx1", "dy1", "dl1"]);
    }

    #[test]
    fn toml_round_trip() {
        let r = RobotDescription::four_module_default();
        let text = r.to_toml_string();
        let back = RobotDescription::from_toml_str(&text).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn unknown_key_rejected() {
        let text = RobotDescription::four_module_default().to_toml_string().replacen("bend_damping", "bend_dampin", 1);
        let err = RobotDescription::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("bend_dampin"), "{err}");
    }

    #[test]
    fn delta_l_bound_below_limit_rejected() {
        let mut r = RobotDescription::four_module_default();
        if let Segment::Module(m) = &mut r.segments[1] {
            m.delta_l_range = Some([-0.1, 0.0]);
        }
        let err = RobotDescription::new(r.segments.clone(), r.gravity, 0.0).unwrap_err().to_string();
        assert!(err.contains("compression limit"), "{err}");
    }

    #[test]
    fn configuration_checks() {
        let r = RobotDescription::four_module_default();
        let mut q = DVector::zeros(16);
        r.check_configuration(&q).unwrap();
        q[3] = -0.08;
        assert!(matches!(r.check_configuration(&q), Err(Error::CompressionLimit { module: 0, .. })));
        assert!(matches!(r.check_configuration(&DVector::zeros(5)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn admissible_samples_have_open_gaps() {
        let r = RobotDescription::four_module_default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q = r.sample_admissible(&mut rng);
            assert!(r.is_admissible(&q));
            assert!(r.plate_gaps(&q).iter().all(|c| *c >= 0.0));
        }
    }
}
