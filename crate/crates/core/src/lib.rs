//! Kinetostatics of tendon-driven continuum robots with tapered backbones.
//!
//! * [`geometry`]: taper profile, section properties, stiffness, tendon routing, disc layout
//! * [`rod`]: right-hand sides of the rod equations with and without tendons
//! * [`bvp`]: RK4 integration and the shooting solver
//! * [`design`]: taper/tension sweeps and inverse taper design
//! * [`calibration`]: load-cell lookup, registration, bias and modulus fitting
//! * [`cli`]: command-line front end

pub mod bvp;
pub mod calibration;
pub mod cli;
pub mod design;
pub mod error;
pub mod geometry;
pub mod rod;
pub mod se3;

pub use bvp::{shoot, solve_tension_sweep, RodSolution, SolverConfig};
pub use error::{Error, Result};
pub use geometry::RobotSpec;
pub use rod::{ExternalLoads, RodModel, RodState, TensionSet};
