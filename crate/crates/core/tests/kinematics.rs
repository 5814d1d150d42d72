use nalgebra::{DVector, Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use softrigid::geometry::{cable_lengths, module_state_from_cables, module_transform, plate_gap, ModuleGeometry};
use softrigid::kinematics::{end_effector_position, forward_kinematics, jacobian, workspace_sample};
use softrigid::robot::{RobotDescription, Segment};

fn robot() -> RobotDescription {
    RobotDescription::four_module_default()
}

fn geom() -> ModuleGeometry {
    robot().modules().next().unwrap().module.geometry.clone()
}

fn admissible(seed: u64) -> DVector<f64> {
    robot().sample_admissible(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn module_state() -> impl Strategy<Value = [f64; 3]> {
    let g = geom();
    (-0.06..0.06f64, -0.06..0.06f64, g.compression_limit()..0.0).prop_map(|(dx, dy, dl)| [dx, dy, dl])
}

/// Chain pose rebuilt from per-segment transforms with nalgebra isometries.
fn composed_end_effector(robot: &RobotDescription, q: &DVector<f64>) -> Vector3<f64> {
    let mut iso = Isometry3::identity();
    for (i, seg) in robot.segments().iter().enumerate() {
        let o = robot.segment_offset(i);
        match seg {
            Segment::Joint(j) => {
                let axis = nalgebra::Unit::new_normalize(Vector3::from(j.axis));
                iso *= Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&axis, q[o]));
                iso *= Translation3::new(0.0, 0.0, j.offset);
            }
            Segment::Module(m) => {
                let p = module_transform(&[q[o], q[o + 1], q[o + 2]], &m.geometry).unwrap();
                let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(p.rotation));
                iso *= Isometry3::from_parts(Translation3::from(p.translation), rot);
            }
        }
    }
    iso *= Translation3::new(0.0, 0.0, robot.ee_offset());
    iso.translation.vector
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn module_rotation_is_orthonormal(qm in module_state()) {
        let p = module_transform(&qm, &geom()).unwrap();
        let e = (p.rotation.transpose() * p.rotation - Matrix3::identity()).amax();
        prop_assert!(e < 1e-12, "{e}");
    }

    #[test]
    fn cable_round_trip(qm in module_state()) {
        let g = geom();
        let lengths = cable_lengths(&qm, &g);
        prop_assume!(lengths.is_ok());
        let back = module_state_from_cables(&lengths.unwrap(), &g).unwrap();
        for a in 0..3 {
            prop_assert!((back[a] - qm[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_decreases_with_compression(dx in -0.03..0.03f64, dy in -0.03..0.03f64, a in 0.0..0.07f64, b in 0.0..0.07f64) {
        let g = geom();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        prop_assert!(plate_gap(&[dx, dy, -hi], &g) < plate_gap(&[dx, dy, -lo], &g));
    }

    #[test]
    fn base_rotation_symmetry(seed in 0u64..10_000, alpha in -3.0..3.0f64) {
        let r = robot();
        let q = admissible(seed);
        let mut q2 = q.clone();
        q2[0] = (q[0] + alpha + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), q2[0] - q[0]);
        let a = forward_kinematics(&q, &r).unwrap();
        let b = forward_kinematics(&q2, &r).unwrap();
        for (fa, fb) in a.iter().zip(&b) {
            prop_assert!((rz * fa.translation - fb.translation).amax() < 1e-12);
            prop_assert!((rz.matrix() * fa.rotation - fb.rotation).amax() < 1e-12);
        }
    }

    #[test]
    fn end_effector_matches_composed_modules(seed in 0u64..10_000) {
        let r = robot();
        let q = admissible(seed);
        let x = end_effector_position(&q, &r).unwrap();
        let y = composed_end_effector(&r, &q);
        prop_assert!((x - y).norm() < 1e-12, "{}", (x - y).norm());
    }
}

#[test]
fn jacobian_matches_central_differences_at_100_configurations() {
    let r = robot();
    let h = 1e-7;
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let q = admissible(1000 + seed);
        let j = jacobian(&q, &r).unwrap();
        let mut fd = j.clone() * 0.0;
        for a in 0..r.dof() {
            let mut qp = q.clone();
            qp[a] += h;
            let mut qm = q.clone();
            qm[a] -= h;
            let col = (end_effector_position(&qp, &r).unwrap() - end_effector_position(&qm, &r).unwrap()) / (2.0 * h);
            fd.set_column(a, &col);
        }
        worst = worst.max((&j - &fd).norm() / j.norm());
    }
    assert!(worst < 1e-6, "relative error {worst:e}");
}

#[test]
fn workspace_is_symmetric_in_distribution_and_shrinks_with_compression() {
    let r = robot();
    let pts = workspace_sample(&r, 4000, 11);
    // radial symmetry: the mean position sits near the axis relative to the spread
    let mean: Vector3<f64> = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let spread = pts.iter().map(|p| p.xy().norm()).fold(0.0, f64::max);
    assert!(mean.xy().norm() < 0.05 * spread, "mean {mean:?} spread {spread}");

    let mut segs = r.segments().to_vec();
    for s in segs.iter_mut() {
        if let Segment::Module(m) = s {
            m.delta_l_range = Some([-0.06, -0.06]);
        }
    }
    let compressed = RobotDescription::new(segs, r.gravity(), r.ee_offset()).unwrap();
    let pc = workspace_sample(&compressed, 4000, 11);
    let spread_c = pc.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let spread_0 = pts.iter().map(|p| p.norm()).fold(0.0, f64::max);
    assert!(spread_c < spread_0, "{spread_c} vs {spread_0}");
}

#[test]
fn workspace_cloud_is_deterministic() {
    let r = robot();
    assert_eq!(workspace_sample(&r, 500, 3), workspace_sample(&r, 500, 3));
    assert_ne!(workspace_sample(&r, 500, 3), workspace_sample(&r, 500, 4));
}
