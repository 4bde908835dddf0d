//! Error exponents and achievable rates for lossless source coding with
//! decoder side information under matched and mismatched decoding metrics.
//!
//! The crate is organised by concern:
//!
//! * [`model`] holds the problem instance types,
//! * [`dual`] evaluates and optimizes the dual-domain exponents,
//! * [`primal`] solves the primal (divergence) forms used as an oracle,
//! * [`rates`] computes the rate thresholds,
//! * [`sim`] builds explicit binning codes at small blocklength.

pub mod dual;
pub mod error;
pub mod model;
pub mod numerics;
pub mod primal;
pub mod rates;
pub mod sim;

pub use dual::{Branch, Ensemble, ExponentCurve, ExponentPoint, ExponentRow, Family};
pub use error::{Error, Result};
pub use model::{CostFunction, DecodingMetric, DualParams, JointSource};
