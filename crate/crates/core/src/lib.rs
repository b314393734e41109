//! Matrix-free second-order optimization for lattice-based sequence training.
//!
//! The crate combines a natural-gradient direction (CG on a damped empirical
//! Fisher) with Gauss-Newton curvature (a second CG run started along that
//! direction), next to SGD, NG and HF baselines, and runs them on a synthetic
//! phone-recognition world with MPE lattices.
//!
//! Modules, bottom-up:
//! - [`param`]: flat parameter vectors, layouts, checkpoints
//! - [`network`]: feed-forward net, backprop, forward-mode Jacobian-vector products
//! - [`sequence`]: synthetic corpus, lattices, MPE/MMI/CE criteria, decoding
//! - [`curvature`]: Gauss-Newton and empirical Fisher products, damping, eigen probe
//! - [`solver`]: truncated CG with a forced first direction, NGHF composition
//! - [`optim`]: SGD and second-order training loops
//! - [`harness`]: experiment config, run logs, CSV output, summaries

pub mod curvature;
pub mod error;
pub mod harness;
pub mod network;
pub mod optim;
pub mod param;
pub mod sequence;
pub mod solver;

pub use error::{Error, Result};
