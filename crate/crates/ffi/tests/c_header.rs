//! Compiles and runs a small C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <math.h>
#include "softrigid.h"

int main(void) {
    SrRobot *robot = NULL;
    if (sr_robot_new_default(&robot) != SR_STATUS_OK) return 10;
    size_t n = 0;
    if (sr_robot_dof(robot, &n) != SR_STATUS_OK || n != 16) return 11;
    double q[16] = {0};
    double x[3];
    if (sr_end_effector_position(robot, q, n, x) != SR_STATUS_OK) return 12;
    if (fabs(x[2] - 0.68) > 1e-12) return 13;
    if (sr_end_effector_position(robot, q, 3, x) != SR_STATUS_INVALID_ARGUMENT) return 14;
    if (sr_last_error_message()[0] == '\0') return 15;
    SrSimulator *sim = NULL;
    if (sr_simulator_new(robot, 1e-3, &sim) != SR_STATUS_OK) return 16;
    double tau[16] = {0};
    for (int k = 0; k < 10; ++k)
        if (sr_simulator_step(sim, tau, n) != SR_STATUS_OK) return 17;
    double qd[16], t = 0;
    if (sr_simulator_get_state(sim, q, qd, n, &t) != SR_STATUS_OK) return 18;
    if (fabs(t - 0.01) > 1e-12) return 19;
    sr_simulator_free(sim);
    sr_robot_free(robot);
    printf("ok %s\n", sr_version());
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_dir().join("libsoftrigid_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .arg("-o")
        .arg(&exe)
        .output()
        .expect("C compiler available");
    assert!(out.status.success(), "compile failed:\n{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), format!("ok {}", env!("CARGO_PKG_VERSION")));
}
