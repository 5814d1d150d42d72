use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softrigid::analysis::{f_c_bound, max_contact_compensation};
use softrigid::control::{
    cartesian_inertia, contact_sigmoid, dyn_consistent_pinv, saturation, CubicTrajectory, ImpedanceGains, PdPlusGains,
    Reference, Waypoint,
};
use softrigid::dynamics::{mass_matrix, ContactModel, ExternalLoad, ForwardModel, RobotState};
use softrigid::kinematics::{actuation_matrix, end_effector_position, jacobian};
use softrigid::robot::{RobotDescription, Segment};
use softrigid::sim::{simulate, Controller, SimulationConfig};

fn robot() -> RobotDescription {
    RobotDescription::four_module_default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn sigmoid_increasing_and_bounded(a in -30.0..30.0f64, b in -30.0..30.0f64, k in 100.0..5000.0f64) {
        // kc within ±30 so σ stays strictly inside (−1, 0) in floating point
        let (lo, hi) = if a < b { (a / k, b / k) } else { (b / k, a / k) };
        prop_assume!(hi - lo > 1e-9);
        let (sl, sh) = (contact_sigmoid(lo, k), contact_sigmoid(hi, k));
        prop_assert!(sl > -1.0 && sl < 0.0 && sh > -1.0 && sh < 0.0);
        // σ rises toward 0 as the gap opens
        prop_assert!(sh > sl);
    }

    #[test]
    fn saturation_is_odd_and_bounded(x in -10.0..10.0f64, d in 1e-3..1.0f64) {
        let y = saturation(x, d);
        prop_assert_eq!(saturation(-x, d), -y);
        prop_assert!(y.abs() <= 2.0 * d);
        if x != 0.0 { prop_assert!(y.abs() < x.abs()); }
    }

    #[test]
    fn cubic_is_continuous_at_knots(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4;
        let mut t = 0.0;
        let wps: Vec<Waypoint> = (0..5)
            .map(|_| {
                t += rng.random_range(0.2..2.0);
                Waypoint {
                    t,
                    q: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
                    qdot: Some(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))),
                }
            })
            .collect();
        let traj = CubicTrajectory::new(&wps).unwrap();
        for w in &wps[1..wps.len() - 1] {
            let eps = 1e-12 * w.t;
            let (l, r) = (traj.sample(w.t - eps), traj.sample(w.t + eps));
            prop_assert!((l.q - &r.q).amax() < 1e-10);
            // one-sided limits, extrapolated to the knot with the local acceleration
            let vl = &l.qdot + &l.qddot * eps;
            let vr = &r.qdot - &r.qddot * eps;
            prop_assert!((vl - vr).amax() < 1e-10);
            let at = traj.sample(w.t);
            prop_assert!((at.q - &w.q).amax() < 1e-12);
            prop_assert!((at.qdot - w.qdot.as_ref().unwrap()).amax() < 1e-12);
        }
        // derivative consistency and the convex-hull bound
        let bound = traj.max_norm();
        for k in 0..200 {
            let tt = wps[0].t + (wps[4].t - wps[0].t) * (k as f64 + 0.5) / 200.0;
            let h = 1e-5;
            // the second derivative jumps at knots, so stencils must stay inside one piece
            if wps.iter().any(|w| (w.t - tt).abs() <= h) {
                continue;
            }
            let s = traj.sample(tt);
            let fd = (traj.sample(tt + h).q - traj.sample(tt - h).q) / (2.0 * h);
            prop_assert!((fd - &s.qdot).amax() < 1e-6 * (1.0 + s.qdot.amax()));
            let fdd = (traj.sample(tt + h).qdot - traj.sample(tt - h).qdot) / (2.0 * h);
            prop_assert!((fdd - &s.qddot).amax() < 1e-5 * (1.0 + s.qddot.amax()));
            prop_assert!(s.q.norm() <= bound + 1e-12);
        }
    }
}

#[test]
fn contact_compensation_stays_below_bound() {
    let r = robot();
    let g = PdPlusGains::default_for(&r);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pairs: Vec<(DVector<f64>, DVector<f64>)> = (0..5000)
        .map(|_| {
            let q = r.sample_admissible(&mut rng);
            let qd = DVector::from_fn(r.dof(), |_, _| rng.random_range(-0.1..0.1));
            (q, qd)
        })
        .collect();
    let qd_max = pairs.iter().map(|(_, qd)| qd.norm()).fold(0.0, f64::max);
    let bound = f_c_bound(&g, &r, qd_max).unwrap();
    let worst = max_contact_compensation(pairs, &g, &r).unwrap();
    assert!(worst <= bound, "{worst} > {bound}");
}

#[test]
fn task_inertia_of_straight_module_is_axial_mass() {
    let full = robot();
    let module = full.modules().next().unwrap().module.clone();
    let r = RobotDescription::new(vec![Segment::Module(module.clone())], Vector3::zeros(), 0.0).unwrap();
    let q = DVector::zeros(3);
    let lambda = cartesian_inertia(&q, &r).unwrap().lambda;
    // each slice moves with s·δL̇ along the axis
    let m_slice = module.slice_inertia().mass;
    let expect: f64 = module.slice_fractions().iter().map(|s| m_slice * s * s).sum();
    assert!((lambda[(2, 2)] - expect).abs() < 1e-12 * expect, "{} vs {expect}", lambda[(2, 2)]);
}

#[test]
fn task_inertia_matches_forward_dynamics() {
    let r = robot().with_gravity(Vector3::zeros());
    let model = ForwardModel::new(&r, ContactModel::disabled()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let q = r.sample_admissible(&mut rng);
        // elastic force cancelled so only the end-effector force accelerates
        let a = actuation_matrix(&q, &r).unwrap().matrix;
        let tau0 = a.lu().solve(&(r.stiffness_diagonal().component_mul(&q))).unwrap();
        let f = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let qdd = model.acceleration(&q, &DVector::zeros(r.dof()), &tau0, &ExternalLoad::end_effector(f)).unwrap();
        let xdd = jacobian(&q, &r).unwrap() * qdd;
        let ci = cartesian_inertia(&q, &r).unwrap();
        assert!(ci.min_eigenvalue > 0.0);
        if ci.damping == 0.0 {
            let back = ci.lambda * Vector3::new(xdd[0], xdd[1], xdd[2]);
            assert!((back - f).norm() < 1e-8 * f.norm(), "{back:?} vs {f:?}");
        }
    }
}

#[test]
fn task_inertia_positive_over_workspace() {
    let r = robot();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let q = r.sample_admissible(&mut rng);
        let l = cartesian_inertia(&q, &r).unwrap().lambda;
        assert!(l.symmetric_eigenvalues().min() > 0.0);
    }
}

#[test]
fn pinv_minimizes_kinetic_energy() {
    let r = robot();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let q = r.sample_admissible(&mut rng);
    let m = mass_matrix(&q, &r).unwrap();
    let j = jacobian(&q, &r).unwrap();
    let jp = dyn_consistent_pinv(&q, &r).unwrap();
    let xdot = DVector::from_vec(vec![0.1, -0.2, 0.05]);
    let best = &jp * &xdot;
    assert!((&j * &best - &xdot).amax() < 1e-10);
    let e_best = best.dot(&(&m * &best));
    // nullspace basis of J from the full SVD
    let svd = j.transpose().svd(true, false);
    let u = svd.u.unwrap();
    let full = DMatrix::<f64>::identity(r.dof(), r.dof()) - &u * u.transpose();
    for _ in 0..1000 {
        let z = DVector::from_fn(r.dof(), |_, _| rng.random_range(-1.0..1.0));
        let cand = &best + &full * z * 0.1;
        assert!((&j * &cand - &xdot).amax() < 1e-9);
        assert!(cand.dot(&(&m * &cand)) >= e_best * (1.0 - 1e-12));
    }
}

fn target_pose() -> DVector<f64> {
    DVector::from_vec(vec![
        0.3, 0.01, -0.008, -0.01, -0.2, 0.006, 0.01, -0.005, 0.25, -0.01, 0.0, -0.02, 0.15, 0.008, 0.008, 0.0,
    ])
}

#[test]
fn rendered_stiffness_matches_cartesian_gain() {
    let r = robot();
    let gains = ImpedanceGains::default_for(&r);
    let target = end_effector_position(&target_pose(), &r).unwrap();
    let ctl = Controller::Impedance { gains: gains.clone(), target, posture: DVector::zeros(r.dof()) };
    let mut state = RobotState::rest(&r);
    let mut pts = Vec::new();
    for k in 1..=4 {
        let f = Vector3::new(0.25 * k as f64, 0.0, 0.0);
        let cfg =
            SimulationConfig { duration: 2.0, constant_load: ExternalLoad::end_effector(f), ..Default::default() };
        let tr = simulate(&r, &state, &ctl, &cfg).unwrap();
        let last = tr.rows.last().unwrap();
        pts.push((f.x, last.x.x - target.x));
        state = RobotState::new(last.q.clone(), last.qdot.clone(), 0.0);
    }
    // least-squares slope through the origin
    let slope = pts.iter().map(|(f, d)| f * d).sum::<f64>() / pts.iter().map(|(_, d)| d * d).sum::<f64>();
    let k = gains.k_c[(0, 0)];
    assert!((slope - k).abs() < 0.05 * k, "slope {slope} vs {k}");
}
