/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SOFTRIGID_H
#define SOFTRIGID_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SrStatus {
  SR_STATUS_OK = 0,
  SR_STATUS_NULL_POINTER = 1,
  // Wrong length, non-finite input or out-of-range value.
  SR_STATUS_INVALID_ARGUMENT = 2,
  // Robot or experiment description rejected.
  SR_STATUS_CONFIG = 3,
  // Configuration outside the model's domain (e.g. compression limit).
  SR_STATUS_DOMAIN = 4,
  // Singular or indefinite matrix.
  SR_STATUS_SINGULAR = 5,
  // Integration produced non-finite values.
  SR_STATUS_DIVERGED = 6,
  // Operation needs state that was not set.
  SR_STATUS_INVALID_STATE = 7,
  SR_STATUS_PANIC = 8,
} SrStatus;

// Chain description.
typedef struct SrRobot SrRobot;

// Robot plus state advanced by the fixed-step integrator.
typedef struct SrSimulator SrSimulator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, empty after a success.
// Valid until the next call into the library on the same thread.
const char *sr_last_error_message(void);

// Library version as a static string.
const char *sr_version(void);

// Creates the built-in four-module robot.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum SrStatus sr_robot_new_default(struct SrRobot **out);

// Parses a robot description from TOML text.
//
// # Safety
// `toml` must be a nul-terminated string and `out` valid for one handle.
enum SrStatus sr_robot_from_toml(const char *toml, struct SrRobot **out);

// Releases a robot. Null is ignored.
//
// # Safety
// `robot` must come from this library and not be used afterwards.
void sr_robot_free(struct SrRobot *robot);

// Number of generalized coordinates.
//
// # Safety
// `robot` must be a live handle and `out` writable.
enum SrStatus sr_robot_dof(const struct SrRobot *robot, size_t *out);

// Number of soft modules.
//
// # Safety
// `robot` must be a live handle and `out` writable.
enum SrStatus sr_robot_module_count(const struct SrRobot *robot, size_t *out);

// End-effector position `out[3]` at `q[n]`.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum SrStatus sr_end_effector_position(const struct SrRobot *robot,
                                       const double *q,
                                       size_t n,
                                       double *out);

// Translational Jacobian, 3 × n column-major, into `out[out_len]`.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum SrStatus sr_jacobian(const struct SrRobot *robot,
                          const double *q,
                          size_t n,
                          double *out,
                          size_t out_len);

// Plate gap of every module into `out[out_len]`.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum SrStatus sr_plate_gaps(const struct SrRobot *robot,
                            const double *q,
                            size_t n,
                            double *out,
                            size_t out_len);

// Mass matrix, n × n column-major, into `out[out_len]`.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum SrStatus sr_mass_matrix(const struct SrRobot *robot,
                             const double *q,
                             size_t n,
                             double *out,
                             size_t out_len);

// Gravity generalized force `G(q)` into `out[n]`.
//
// # Safety
// Pointers must be valid for `n` values.
enum SrStatus sr_gravity_forces(const struct SrRobot *robot,
                                const double *q,
                                size_t n,
                                double *out);

// `C(q, q̇) q̇ + G(q)` into `out[n]`.
//
// # Safety
// Pointers must be valid for `n` values.
enum SrStatus sr_bias_forces(const struct SrRobot *robot,
                             const double *q,
                             const double *qdot,
                             size_t n,
                             double *out);

// Simulator at rest with its own copy of `robot`, default contact model,
// RK4 and default PD+ gains.
//
// # Safety
// `robot` must be a live handle and `out` valid for one handle.
enum SrStatus sr_simulator_new(const struct SrRobot *robot, double dt, struct SrSimulator **out);

// Releases a simulator. Null is ignored.
//
// # Safety
// `sim` must come from this library and not be used afterwards.
void sr_simulator_free(struct SrSimulator *sim);

// Replaces the state; time is kept.
//
// # Safety
// Pointers must be valid for `n` values.
enum SrStatus sr_simulator_set_state(struct SrSimulator *sim,
                                     const double *q,
                                     const double *qdot,
                                     size_t n);

// Copies the state out. `t` may be null.
//
// # Safety
// `q`, `qdot` must be valid for `n` values; `t` null or writable.
enum SrStatus sr_simulator_get_state(const struct SrSimulator *sim,
                                     double *q,
                                     double *qdot,
                                     size_t n,
                                     double *t);

// Kinetic, elastic and gravitational energy into `out[3]`.
//
// # Safety
// `out` must be valid for 3 values.
enum SrStatus sr_simulator_energy(const struct SrSimulator *sim, double *out);

// Enables PD+ regulation to `q_d[n]` for [`sr_simulator_run`].
//
// # Safety
// `q_d` must be valid for `n` values.
enum SrStatus sr_simulator_set_setpoint(struct SrSimulator *sim, const double *q_d, size_t n);

// Sets the sigmoid steepness `k_c` (1/m) of the contact compensation.
//
// # Safety
// `sim` must be a live handle.
enum SrStatus sr_simulator_set_contact_gain(struct SrSimulator *sim, double k_c);

// One step with motor input `tau[n]` held constant.
//
// # Safety
// `tau` must be valid for `n` values.
enum SrStatus sr_simulator_step(struct SrSimulator *sim, const double *tau, size_t n);

// Advances `steps` steps under PD+ control to the setpoint, updating the
// controller every step. Fails with `SR_STATUS_INVALID_STATE` if no setpoint
// was set.
//
// # Safety
// `sim` must be a live handle.
enum SrStatus sr_simulator_run(struct SrSimulator *sim, size_t steps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOFTRIGID_H */
