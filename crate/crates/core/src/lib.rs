//! Modeling, control and simulation toolkit for a two-tube plastic concentric
//! tube robot.

// Validation uses `!(x > 0.0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod evacuation;
pub mod execution;
pub mod inverse_kinematics;
pub mod kinematics;
pub mod motor_control;
pub mod numeric;
pub mod presets;
pub mod torsion;
pub mod tube_design;
pub mod tube_shape;

pub use error::{CtrError, Result};
pub use execution::Execution;
