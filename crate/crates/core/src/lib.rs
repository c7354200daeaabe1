//! Simulation and verification toolkit for a one-dimensional
//! hyperbolic-parabolic chemotaxis system with damping and its diffusion waves.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod harness;
pub mod model;
pub mod solver;
pub mod wave;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{check_admissible, Params, PressureLaw, PressureModel, QuadraticPressure, StructuralCheck};
pub use solver::{Grid, InitPerturbation, SchemeConfig, Solver, State};
pub use wave::{build_profile, WaveField, WaveProfile};
