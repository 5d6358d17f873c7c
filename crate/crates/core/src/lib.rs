//! Two-layer precoding for multigroup multicasting with large antenna arrays.
//!
//! The outer layer ([`nullspace`]) removes inter-group interference with a QR-based
//! block-diagonalization zero-forcing basis. Each group is then left with a
//! single-group multicast problem over its effective channels, solved either by
//! successive convex approximation ([`sca`]) or by the linear-complexity successive
//! precoder ([`heuristic`]). [`duality`] converts power-minimisation (QoS) answers
//! into max-min fairness (MMF) answers and back in closed form.

pub mod duality;
pub mod error;
pub mod harness;
pub mod heuristic;
pub mod linalg;
pub mod model;
pub mod nullspace;
pub mod oracle;
pub mod qp;
pub mod rng;
pub mod sca;

pub use error::{Error, Result};
