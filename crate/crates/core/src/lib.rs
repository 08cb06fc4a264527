//! Comparator-network-aided 1-bit multiuser MIMO receivers.
//!
//! The crate models an uplink where every receive antenna feeds two 1-bit
//! ADCs and, optionally, a network of comparators that sign-quantize
//! differences of antenna signals. It provides Bussgang-based LMMSE channel
//! estimation and detection, robust detectors, comparator-network search,
//! sum-rate bounds, a power model and seeded Monte Carlo sweeps.

pub mod bussgang;
pub mod channel;
pub mod detector;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod netdesign;
pub mod power;
pub mod rates;
pub mod rng;

pub use error::{Error, Result};
pub use model::{ComparatorNetwork, SystemConfig};
