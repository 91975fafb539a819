//! Probabilistic programs as handler-routed procedures, with automatic
//! non-centring, variationally inferred partial centring (VIP), and HMC
//! samplers that exploit them.

pub mod autodiff;
pub mod data;
pub mod effect;
pub mod error;
pub mod inference;
pub mod oracle;
pub mod pipeline;
pub mod reparam;
pub mod rng;
pub mod vi;
pub mod zoo;

pub use error::{Error, Result};
