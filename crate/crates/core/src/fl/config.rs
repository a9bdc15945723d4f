use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    FedAvg,
    FedProx,
    FedPAW,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::FedAvg, Method::FedProx, Method::FedPAW];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Join ratio: fixed, or drawn uniformly from `[lo, hi]` every round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Participation {
    Fixed(f64),
    Range([f64; 2]),
}

impl Participation {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0 && v <= 1.0;
        match *self {
            Participation::Fixed(r) if ok(r) => Ok(()),
            Participation::Range([lo, hi]) if ok(lo) && ok(hi) && lo <= hi => Ok(()),
            _ => Err(Error::Config(format!("join ratio {self} outside (0, 1]"))),
        }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Participation::Fixed(r) => r,
            Participation::Range([lo, hi]) if lo == hi => lo,
            Participation::Range([lo, hi]) => rng.gen_range(lo..=hi),
        }
    }
}

impl fmt::Display for Participation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Participation::Fixed(r) => write!(f, "{r}"),
            Participation::Range([lo, hi]) => write!(f, "{lo}-{hi}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlConfig {
    pub method: Method,
    pub rounds: usize,
    pub rho: Participation,
    /// Warm-up rounds during which aggregation weights stay zero.
    pub warmup: usize,
    /// Number of output-side layers that receive personalized aggregation.
    pub pa_layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub prox_mu: f64,
}

impl FlConfig {
    /// Training defaults for a method: Adam at 0.005, batch 64, one local
    /// epoch, 300 rounds, full participation.
    pub fn new(method: Method, pa_layers: usize) -> Self {
        FlConfig {
            method,
            rounds: 300,
            rho: Participation::Fixed(1.0),
            warmup: 1,
            pa_layers,
            lr: 0.005,
            batch_size: 64,
            local_epochs: 1,
            prox_mu: 0.01,
        }
    }

    pub fn validate(&self, layer_count: usize) -> Result<()> {
        self.rho.validate()?;
        if self.pa_layers == 0 || self.pa_layers > layer_count {
            return Err(Error::Config(format!(
                "pa_layers {} outside 1..={layer_count}",
                self.pa_layers
            )));
        }
        if self.warmup == 0 {
            return Err(Error::Config("warmup must be at least 1".into()));
        }
        if self.rounds == 0 || self.batch_size == 0 || self.local_epochs == 0 {
            return Err(Error::Config("rounds, batch_size and local_epochs must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.prox_mu.is_finite() && self.prox_mu >= 0.0) {
            return Err(Error::Config(format!("prox_mu {} must be non-negative", self.prox_mu)));
        }
        Ok(())
    }
}
