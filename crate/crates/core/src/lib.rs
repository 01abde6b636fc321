//! Automated co-design of serial-chain modular manipulators.
//!
//! Given a task — timed 3D points with end-effector loads, spherical and
//! planar obstacles, and a base placement region — this crate synthesizes
//! both the structure (module count, twist angles, link lengths, base
//! origin) and the controls (joint angles, velocities, torques) of a
//! modular manipulator, then verifies the result against torque limits and
//! collision constraints along the full end-effector trajectory.
//!
//! The flow is: RRT* path search through the task points, piecewise
//! polynomial trajectory fitting, a kinematic constrained optimization to
//! seed a full kinodynamic optimization, and a trajectory-following
//! verification pass with collision-aware inverse kinematics.

pub mod constraints;
pub mod error;
pub mod geom;
pub mod io;
pub mod kinodyn;
pub mod model;
pub mod opt;
pub mod pipeline;
pub mod plan;
pub(crate) mod util;
pub mod verify;

pub use error::{Error, Result};
