//! Distributed continuous-time state estimation over sensor networks.
//!
//! Every node runs a Kalman-Bucy-like filter on its own measurements, averages
//! its estimate with its neighbors, and reconstructs the network-wide
//! information matrix through a fixed-time consensus protocol. With enough
//! coupling the nodes recover the performance of the centralized filter,
//! which is provided as the reference.
//!
//! Modules, bottom-up: [`expr`] and [`model`] describe the plant and sensors,
//! [`graph`] the communication topology, [`consensus`] the information
//! consensus, [`centralized`] and [`odeftc`] the filters, [`simulator`] the
//! Monte Carlo harness, [`analysis`] the gain bounds and identity checks, and
//! [`report`] the CSV output.

// `!(x > 0.0)` style checks reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod centralized;
pub mod consensus;
pub mod error;
pub mod expr;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod odeftc;
pub mod report;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};
pub use graph::GraphTopology;
pub use linalg::{Matrix, Vector};
pub use scenario::Scenario;
pub use simulator::{monte_carlo, run_realization, McSummary, SimConfig, SimulationTrace};
