//! Hitting-time and escape-rate numerics for interval maps with holes.

pub mod deviations;
pub mod error;
pub mod harness;
pub mod hitting_stats;
pub mod inducing;
pub mod interval_maps;
pub mod numeric;
pub mod open_systems;
pub mod par;
pub mod transfer;

pub use error::{OdxError, Result};
