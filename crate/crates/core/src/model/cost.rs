//! Congestion-dependent delay families for links and nodes.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Per-element delay as a function of load, parameterized by a service rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DelayFamily {
    /// M/M/1 sojourn time `1/(cap - x)`, defined for `x < cap`.
    Mm1,
    /// Third-order expansion of the M/M/1 delay around zero load.
    #[default]
    Taylor3,
    /// Load-independent delay `1/cap`.
    Constant,
}

impl DelayFamily {
    /// Delay at load `x`; `None` outside the domain.
    pub fn delay(self, x: f64, cap: f64) -> Option<f64> {
        match self {
            DelayFamily::Mm1 => (x < cap).then(|| 1.0 / (cap - x)),
            DelayFamily::Taylor3 => {
                let r = x / cap;
                Some((1.0 + r + r * r + r * r * r) / cap)
            }
            DelayFamily::Constant => Some(1.0 / cap),
        }
    }

    /// First derivative of the delay w.r.t. load.
    pub fn delay_prime(self, x: f64, cap: f64) -> Option<f64> {
        match self {
            DelayFamily::Mm1 => (x < cap).then(|| 1.0 / ((cap - x) * (cap - x))),
            DelayFamily::Taylor3 => {
                let r = x / cap;
                Some((1.0 + 2.0 * r + 3.0 * r * r) / (cap * cap))
            }
            DelayFamily::Constant => Some(0.0),
        }
    }

    pub fn has_capacity_limit(self) -> bool {
        matches!(self, DelayFamily::Mm1)
    }
}

impl fmt::Display for DelayFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DelayFamily::Mm1 => "mm1",
            DelayFamily::Taylor3 => "taylor3",
            DelayFamily::Constant => "constant",
        })
    }
}

impl FromStr for DelayFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mm1" => Ok(DelayFamily::Mm1),
            "taylor3" => Ok(DelayFamily::Taylor3),
            "constant" => Ok(DelayFamily::Constant),
            other => Err(format!("unknown delay family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CostModel {
    pub link: DelayFamily,
    pub node: DelayFamily,
}

impl CostModel {
    pub fn new(link: DelayFamily, node: DelayFamily) -> Self {
        CostModel { link, node }
    }

    pub fn uniform(family: DelayFamily) -> Self {
        CostModel::new(family, family)
    }
}
