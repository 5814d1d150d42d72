//! Modeling, simulation and control of soft-rigid hybrid manipulators: serial
//! chains of rigid rotational joints and foam modules described by a
//! piecewise-constant-curvature model.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod jet;
pub mod kinematics;
pub mod oracle;
pub mod robot;
pub mod sim;
pub mod spatial;
pub mod trace;

pub use error::{Error, Result};
