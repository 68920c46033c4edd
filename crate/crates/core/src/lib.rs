//! Recovering the joint angles of a revolute manipulator from 2D joint keypoints.
//!
//! The pipeline maps a distance matrix built from image keypoints to the full
//! Euclidean distance matrix (EDM) of a kinematic point set using a small
//! regression network, recovers a centered 3D point set with classical
//! multidimensional scaling, aligns it to the known base-frame anchors and
//! reads the joint angles off with a sequence of kinematic transformations.
//!
//! Module map:
//! - [`kinematics`]: chain model, forward kinematics, point sets and the IK layer.
//! - [`distgeo`]: EDM algebra, Jacobi eigensolver, classical MDS and anchor alignment.
//! - [`model`]: the regression network, losses, gradients, Adam and training.
//! - [`dataset`]: synthetic sample generation and record files.
//! - [`evalx`]: error metrics and dataset evaluation.
//! - [`cli`]: the `edmik` command-line front end.

pub mod cli;
pub mod dataset;
pub mod distgeo;
pub mod error;
pub mod evalx;
pub mod kinematics;
pub mod model;

pub use error::{Error, Result};
