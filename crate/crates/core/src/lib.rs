//! Federated learning with personalized aggregation weights, applied to
//! urban vehicle speed prediction.

pub mod error;
pub mod fl;
pub mod dataset;
pub mod harness;
pub mod metrics;
pub mod model;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

/// Identifier of one federated client (one driver/vehicle pairing).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
