//! C interface to the `softrigid` toolkit.
//!
//! Every function returns an [`SrStatus`]. On failure the message is kept
//! per thread and read with [`sr_last_error_message`]. Handles are opaque and
//! must be released with their `_free` function. Matrices are written
//! column-major. Panics never cross the boundary; they become
//! `SR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::DVector;
use softrigid::control::{pdplus_torque, PdPlusGains, TrajectorySample};
use softrigid::dynamics::{
    bias_forces, energy, gravity_forces, mass_matrix, ContactModel, ExternalLoad, ForwardModel, RobotState,
};
use softrigid::error::Error;
use softrigid::kinematics::{end_effector_position, jacobian};
use softrigid::robot::RobotDescription;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrStatus {
    Ok = 0,
    NullPointer = 1,
    /// Wrong length, non-finite input or out-of-range value.
    InvalidArgument = 2,
    /// Robot or experiment description rejected.
    Config = 3,
    /// Configuration outside the model's domain (e.g. compression limit).
    Domain = 4,
    /// Singular or indefinite matrix.
    Singular = 5,
    /// Integration produced non-finite values.
    Diverged = 6,
    /// Operation needs state that was not set.
    InvalidState = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let mut bytes = msg.into().into_bytes();
    bytes.retain(|b| *b != 0);
    let c = CString::new(bytes).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SrStatus {
    match e {
        Error::Domain(_) | Error::CompressionLimit { .. } => SrStatus::Domain,
        Error::DimensionMismatch { .. } | Error::NonFinite { .. } | Error::Trajectory(_) => SrStatus::InvalidArgument,
        Error::IllConditioned { .. } | Error::SingularTaskSpace { .. } | Error::NotPositiveDefinite => {
            SrStatus::Singular
        }
        Error::IntegrationDiverged { .. } | Error::StaticSolve { .. } => SrStatus::Diverged,
        Error::TraceMetadata(_) => SrStatus::InvalidState,
        Error::Config(_) | Error::Csv(_) | Error::Io(_) => SrStatus::Config,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (SrStatus, String)>) -> SrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SrStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SrStatus::Panic
        }
    }
}

fn fail(e: Error) -> (SrStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SrStatus, String) {
    (SrStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> (SrStatus, String) {
    (SrStatus::InvalidArgument, msg)
}

/// Copies `len` values from `ptr` after checking the expected length.
unsafe fn read_vec(
    ptr: *const f64,
    len: usize,
    expected: usize,
    what: &str,
) -> Result<DVector<f64>, (SrStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len != expected {
        return Err(invalid(format!("{what}: expected {expected} values, got {len}")));
    }
    let s = std::slice::from_raw_parts(ptr, len);
    if let Some(i) = s.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("{what}: value {i} is not finite")));
    }
    Ok(DVector::from_column_slice(s))
}

unsafe fn write_out(ptr: *mut f64, len: usize, values: &[f64], what: &str) -> Result<(), (SrStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len != values.len() {
        return Err(invalid(format!("{what}: buffer holds {len} values, need {}", values.len())));
    }
    std::slice::from_raw_parts_mut(ptr, len).copy_from_slice(values);
    Ok(())
}

unsafe fn robot_ref<'a>(robot: *const SrRobot) -> Result<&'a RobotDescription, (SrStatus, String)> {
    robot.as_ref().map(|r| &r.inner).ok_or_else(|| null("robot"))
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn sr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sr_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains nul"),
    };
    VERSION.as_ptr()
}

/// Chain description.
pub struct SrRobot {
    inner: RobotDescription,
}

/// Robot plus state advanced by the fixed-step integrator.
pub struct SrSimulator {
    robot: RobotDescription,
    state: RobotState,
    dt: f64,
    contact: ContactModel,
    gains: PdPlusGains,
    setpoint: Option<DVector<f64>>,
}

/// Creates the built-in four-module robot.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sr_robot_new_default(out: *mut *mut SrRobot) -> SrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(SrRobot { inner: RobotDescription::four_module_default() }));
        Ok(())
    })
}

/// Parses a robot description from TOML text.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` valid for one handle.
#[no_mangle]
pub unsafe extern "C" fn sr_robot_from_toml(toml: *const c_char, out: *mut *mut SrRobot) -> SrStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(toml).to_str().map_err(|e| invalid(format!("toml is not utf-8: {e}")))?;
        let robot = RobotDescription::from_toml_str(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(SrRobot { inner: robot }));
        Ok(())
    })
}

/// Releases a robot. Null is ignored.
///
/// # Safety
/// `robot` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sr_robot_free(robot: *mut SrRobot) {
    if !robot.is_null() {
        drop(Box::from_raw(robot));
    }
}

/// Number of generalized coordinates.
///
/// # Safety
/// `robot` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_robot_dof(robot: *const SrRobot, out: *mut usize) -> SrStatus {
    guard(|| {
        let r = robot_ref(robot)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = r.dof();
        Ok(())
    })
}

/// Number of soft modules.
///
/// # Safety
/// `robot` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_robot_module_count(robot: *const SrRobot, out: *mut usize) -> SrStatus {
    guard(|| {
        let r = robot_ref(robot)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = r.module_count();
        Ok(())
    })
}

/// End-effector position `out[3]` at `q[n]`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sr_end_effector_position(
    robot: *const SrRobot,
    q: *const f64,
    n: usize,
    out: *mut f64,
) -> SrStatus {
    guard(|| {
        let r = robot_ref(robot)?;
        let q = read_vec(q, n, r.dof(), "q")?;
        let x = end_effector_position(&q, r).map_err(fail)?;
        write_out(out, 3, x.as_slice(), "out")
    })
}

/// Translational Jacobian, 3 × n column-major, into `out[out_len]`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sr_jacobian(
    robot: *const SrRobot,
    q: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> SrStatus {
    guard(|| {
        let r = robot_ref(robot)?;
        let q = read_vec(q, n, r.dof(), "q")?;
        let j = jacobian(&q, r).map_err(fail)?;
        write_out(out, out_len, j.as_slice(), "out")
    })
}

/// Plate gap of every module into `out[out_len]`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sr_plate_gaps(
    robot: *const SrRobot,
    q: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> SrStatus {
    guard(|| {
        let r = robot_ref(robot)?;
        let q = read_vec(q, n, r.dof(), "q")?;
        r.check_configuration(&q).map_err(fail)?;
        write_out(out, out_len, &r.plate_gaps(&q), "out")
    })
}

/// Mass matrix, n × n column-major, into `out[out_len]`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sr_mass_matrix(
    robot: *const SrRobot,
    q: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> SrStatus {
    guard(|| {
        let r = robot_ref(robot)?;
        let q = read_vec(q, n, r.dof(), "q")?;
        let m = mass_matrix(&q, r).map_err(fail)?;
        write_out(out, out_len, m.as_slice(), "out")
    })
}

/// Gravity generalized force `G(q)` into `out[n]`.
///
/// # Safety
/// Pointers must be valid for `n` values.
#[no_mangle]
pub unsafe extern "C" fn sr_gravity_forces(robot: *const SrRobot, q: *const f64, n: usize, out: *mut f64) -> SrStatus {
    guard(|| {
        let r = robot_ref(robot)?;
        let q = read_vec(q, n, r.dof(), "q")?;
        let g = gravity_forces(&q, r).map_err(fail)?;
        write_out(out, n, g.as_slice(), "out")
    })
}

/// `C(q, q̇) q̇ + G(q)` into `out[n]`.
///
/// # Safety
/// Pointers must be valid for `n` values.
#[no_mangle]
pub unsafe extern "C" fn sr_bias_forces(
    robot: *const SrRobot,
    q: *const f64,
    qdot: *const f64,
    n: usize,
    out: *mut f64,
) -> SrStatus {
    guard(|| {
        let r = robot_ref(robot)?;
        let q = read_vec(q, n, r.dof(), "q")?;
        let qd = read_vec(qdot, n, r.dof(), "qdot")?;
        let b = bias_forces(&q, &qd, r).map_err(fail)?;
        write_out(out, n, b.as_slice(), "out")
    })
}

/// Simulator at rest with its own copy of `robot`, default contact model,
/// RK4 and default PD+ gains.
///
/// # Safety
/// `robot` must be a live handle and `out` valid for one handle.
#[no_mangle]
pub unsafe extern "C" fn sr_simulator_new(robot: *const SrRobot, dt: f64, out: *mut *mut SrSimulator) -> SrStatus {
    guard(|| {
        let r = robot_ref(robot)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("dt must be > 0, got {dt}")));
        }
        let sim = SrSimulator {
            robot: r.clone(),
            state: RobotState::rest(r),
            dt,
            contact: ContactModel::default(),
            gains: PdPlusGains::default_for(r),
            setpoint: None,
        };
        *out = Box::into_raw(Box::new(sim));
        Ok(())
    })
}

/// Releases a simulator. Null is ignored.
///
/// # Safety
/// `sim` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sr_simulator_free(sim: *mut SrSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

unsafe fn sim_mut<'a>(sim: *mut SrSimulator) -> Result<&'a mut SrSimulator, (SrStatus, String)> {
    sim.as_mut().ok_or_else(|| null("simulator"))
}

/// Replaces the state; time is kept.
///
/// # Safety
/// Pointers must be valid for `n` values.
#[no_mangle]
pub unsafe extern "C" fn sr_simulator_set_state(
    sim: *mut SrSimulator,
    q: *const f64,
    qdot: *const f64,
    n: usize,
) -> SrStatus {
    guard(|| {
        let s = sim_mut(sim)?;
        let dof = s.robot.dof();
        let state = RobotState::new(read_vec(q, n, dof, "q")?, read_vec(qdot, n, dof, "qdot")?, s.state.t);
        state.validate(&s.robot).map_err(fail)?;
        s.state = state;
        Ok(())
    })
}

/// Copies the state out. `t` may be null.
///
/// # Safety
/// `q`, `qdot` must be valid for `n` values; `t` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sr_simulator_get_state(
    sim: *const SrSimulator,
    q: *mut f64,
    qdot: *mut f64,
    n: usize,
    t: *mut f64,
) -> SrStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("simulator"))?;
        write_out(q, n, s.state.q.as_slice(), "q")?;
        write_out(qdot, n, s.state.qdot.as_slice(), "qdot")?;
        if !t.is_null() {
            *t = s.state.t;
        }
        Ok(())
    })
}

/// Kinetic, elastic and gravitational energy into `out[3]`.
///
/// # Safety
/// `out` must be valid for 3 values.
#[no_mangle]
pub unsafe extern "C" fn sr_simulator_energy(sim: *const SrSimulator, out: *mut f64) -> SrStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("simulator"))?;
        let e = energy(&s.state, &s.robot).map_err(fail)?;
        write_out(out, 3, &[e.kinetic, e.elastic, e.gravitational], "out")
    })
}

/// Enables PD+ regulation to `q_d[n]` for [`sr_simulator_run`].
///
/// # Safety
/// `q_d` must be valid for `n` values.
#[no_mangle]
pub unsafe extern "C" fn sr_simulator_set_setpoint(sim: *mut SrSimulator, q_d: *const f64, n: usize) -> SrStatus {
    guard(|| {
        let s = sim_mut(sim)?;
        s.setpoint = Some(read_vec(q_d, n, s.robot.dof(), "q_d")?);
        Ok(())
    })
}

/// Sets the sigmoid steepness `k_c` (1/m) of the contact compensation.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_simulator_set_contact_gain(sim: *mut SrSimulator, k_c: f64) -> SrStatus {
    guard(|| {
        let s = sim_mut(sim)?;
        let mut g = s.gains.clone();
        g.k_c = k_c;
        g.validate(&s.robot).map_err(fail)?;
        s.gains = g;
        Ok(())
    })
}

/// One step with motor input `tau[n]` held constant.
///
/// # Safety
/// `tau` must be valid for `n` values.
#[no_mangle]
pub unsafe extern "C" fn sr_simulator_step(sim: *mut SrSimulator, tau: *const f64, n: usize) -> SrStatus {
    guard(|| {
        let s = sim_mut(sim)?;
        let tau = read_vec(tau, n, s.robot.dof(), "tau")?;
        let model = ForwardModel::new(&s.robot, s.contact).map_err(fail)?;
        let next = model.step(&s.state, &tau, &ExternalLoad::none(), s.dt).map_err(fail)?;
        s.robot.check_configuration(&next.q).map_err(fail)?;
        s.state = next;
        Ok(())
    })
}

/// Advances `steps` steps under PD+ control to the setpoint, updating the
/// controller every step. Fails with `SR_STATUS_INVALID_STATE` if no setpoint
/// was set.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_simulator_run(sim: *mut SrSimulator, steps: usize) -> SrStatus {
    guard(|| {
        let s = sim_mut(sim)?;
        let q_d = s.setpoint.clone().ok_or((SrStatus::InvalidState, "no setpoint set".to_string()))?;
        let model = ForwardModel::new(&s.robot, s.contact).map_err(fail)?;
        let mut state = s.state.clone();
        for _ in 0..steps {
            let sample = TrajectorySample::setpoint(state.t, q_d.clone());
            let tau = pdplus_torque(&state, &sample, &s.gains, &s.robot).map_err(fail)?.tau;
            state = model.step(&state, &tau, &ExternalLoad::none(), s.dt).map_err(fail)?;
            s.robot.check_configuration(&state.q).map_err(fail)?;
        }
        s.state = state;
        Ok(())
    })
}
