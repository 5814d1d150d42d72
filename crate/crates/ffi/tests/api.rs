use std::ffi::{CStr, CString};
use std::ptr;

use softrigid_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sr_last_error_message()) }.to_string_lossy().into_owned()
}

struct Robot(*mut SrRobot);

impl Robot {
    fn default() -> Self {
        let mut r = ptr::null_mut();
        assert_eq!(unsafe { sr_robot_new_default(&mut r) }, SrStatus::Ok);
        Robot(r)
    }
    fn dof(&self) -> usize {
        let mut n = 0;
        assert_eq!(unsafe { sr_robot_dof(self.0, &mut n) }, SrStatus::Ok);
        n
    }
}

impl Drop for Robot {
    fn drop(&mut self) {
        unsafe { sr_robot_free(self.0) }
    }
}

#[test]
fn default_robot_layout() {
    let r = Robot::default();
    assert_eq!(r.dof(), 16);
    let mut m = 0;
    assert_eq!(unsafe { sr_robot_module_count(r.0, &mut m) }, SrStatus::Ok);
    assert_eq!(m, 4);
    let q = [0.0; 16];
    let mut x = [0.0; 3];
    assert_eq!(unsafe { sr_end_effector_position(r.0, q.as_ptr(), 16, x.as_mut_ptr()) }, SrStatus::Ok);
    assert!((x[2] - 0.68).abs() < 1e-12, "{x:?}");
    assert!(x[0].abs() < 1e-15 && x[1].abs() < 1e-15);
}

#[test]
fn mass_matrix_is_symmetric_and_matches_core() {
    let r = Robot::default();
    let q: Vec<f64> = (0..16).map(|i| 0.002 * (i % 4) as f64 - 0.003).collect();
    let mut m = vec![0.0; 256];
    assert_eq!(unsafe { sr_mass_matrix(r.0, q.as_ptr(), 16, m.as_mut_ptr(), 256) }, SrStatus::Ok);
    for i in 0..16 {
        for j in 0..16 {
            assert_eq!(m[i + 16 * j], m[j + 16 * i]);
        }
    }
    let core = softrigid::dynamics::mass_matrix(
        &nalgebra::DVector::from_vec(q.clone()),
        &softrigid::robot::RobotDescription::four_module_default(),
    )
    .unwrap();
    assert_eq!(core.as_slice(), m.as_slice());
}

#[test]
fn jacobian_shape_checked() {
    let r = Robot::default();
    let q = [0.0; 16];
    let mut j = vec![0.0; 48];
    assert_eq!(unsafe { sr_jacobian(r.0, q.as_ptr(), 16, j.as_mut_ptr(), 48) }, SrStatus::Ok);
    assert_eq!(unsafe { sr_jacobian(r.0, q.as_ptr(), 16, j.as_mut_ptr(), 47) }, SrStatus::InvalidArgument);
    assert!(last_error().contains("need 48"), "{}", last_error());
}

#[test]
fn errors_are_reported() {
    let r = Robot::default();
    let mut x = [0.0; 3];
    let q = [0.0; 15];
    assert_eq!(unsafe { sr_end_effector_position(r.0, q.as_ptr(), 15, x.as_mut_ptr()) }, SrStatus::InvalidArgument);
    assert!(last_error().contains("expected 16"));
    assert_eq!(unsafe { sr_end_effector_position(ptr::null(), q.as_ptr(), 15, x.as_mut_ptr()) }, SrStatus::NullPointer);
    let mut q = [0.0; 16];
    q[3] = -0.1;
    assert_eq!(unsafe { sr_end_effector_position(r.0, q.as_ptr(), 16, x.as_mut_ptr()) }, SrStatus::Domain);
    assert!(last_error().contains("compression limit"), "{}", last_error());
    q[3] = f64::NAN;
    assert_eq!(unsafe { sr_end_effector_position(r.0, q.as_ptr(), 16, x.as_mut_ptr()) }, SrStatus::InvalidArgument);
    // a success clears the message
    q[3] = 0.0;
    assert_eq!(unsafe { sr_end_effector_position(r.0, q.as_ptr(), 16, x.as_mut_ptr()) }, SrStatus::Ok);
    assert_eq!(last_error(), "");
}

#[test]
fn robot_from_toml() {
    let text = CString::new(
        r#"
[[segments]]
kind = "joint"
axis = [0.0, 0.0, 1.0]
offset = 0.1
damping = 0.01
"#,
    )
    .unwrap();
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { sr_robot_from_toml(text.as_ptr(), &mut r) }, SrStatus::Ok);
    let robot = Robot(r);
    assert_eq!(robot.dof(), 1);

    let bad = CString::new("segments = 3").unwrap();
    let mut r2 = ptr::null_mut();
    assert_eq!(unsafe { sr_robot_from_toml(bad.as_ptr(), &mut r2) }, SrStatus::Config);
    assert!(r2.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn simulator_regulates_to_setpoint() {
    let r = Robot::default();
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { sr_simulator_new(r.0, 1e-3, &mut sim) }, SrStatus::Ok);
    // handles are independent copies
    drop(r);
    assert_eq!(unsafe { sr_simulator_run(sim, 1) }, SrStatus::InvalidState);
    let q_d = [0.3, 0.01, -0.008, -0.01, -0.2, 0.006, 0.01, -0.005, 0.25, -0.01, 0.0, -0.02, 0.15, 0.008, 0.008, 0.0];
    assert_eq!(unsafe { sr_simulator_set_setpoint(sim, q_d.as_ptr(), 16) }, SrStatus::Ok);
    assert_eq!(unsafe { sr_simulator_run(sim, 5000) }, SrStatus::Ok);
    let (mut q, mut qd, mut t) = ([0.0; 16], [0.0; 16], 0.0);
    assert_eq!(unsafe { sr_simulator_get_state(sim, q.as_mut_ptr(), qd.as_mut_ptr(), 16, &mut t) }, SrStatus::Ok);
    assert!((t - 5.0).abs() < 1e-9);
    let err = q.iter().zip(&q_d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-3, "error {err}");
    unsafe { sr_simulator_free(sim) };
}

#[test]
fn passive_step_loses_energy() {
    let r = Robot::default();
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { sr_simulator_new(r.0, 1e-3, &mut sim) }, SrStatus::Ok);
    let mut q = [0.0; 16];
    q[1] = 0.01;
    let qd = [0.0; 16];
    assert_eq!(unsafe { sr_simulator_set_state(sim, q.as_ptr(), qd.as_ptr(), 16) }, SrStatus::Ok);
    let total = |sim| {
        let mut e = [0.0; 3];
        assert_eq!(unsafe { sr_simulator_energy(sim, e.as_mut_ptr()) }, SrStatus::Ok);
        e.iter().sum::<f64>()
    };
    let e0 = total(sim);
    let tau = [0.0; 16];
    for _ in 0..200 {
        assert_eq!(unsafe { sr_simulator_step(sim, tau.as_ptr(), 16) }, SrStatus::Ok);
    }
    assert!(total(sim) < e0);
    unsafe { sr_simulator_free(sim) };
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(sr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
