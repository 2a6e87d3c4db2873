//! Node topology and the analytic roofline cost model.

mod config;
mod cost;
mod residency;

use thiserror::Error;

pub use config::{ActivationTier, Card, HardwareConfig, Host, HwSummary, Links, Switch, DEFAULT_NODE_TOML};
pub use cost::{
    compute_precision, link_bw, op_latency, op_latency_terms, transfer_latency, LatencyTerms, Link, Placement,
    Precision,
};
pub use residency::{plan_residency, plan_residency_with, weight_reuse, ResidencyPlan, Tier};

use crate::graph::GraphError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HwError {
    #[error("config schema violation: {0}")]
    Schema(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("op {op}: no {precision} peak defined for this device")]
    NoPeak { op: String, precision: &'static str },
    #[error("unknown link {0}")]
    UnknownLink(String),
    #[error("unknown card {0}")]
    UnknownCard(usize),
    #[error("unknown weight tensor {0}")]
    UnknownTensor(String),
    #[error("{tier} capacity exceeded by {deficit} bytes")]
    Overflow { tier: &'static str, deficit: u64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, HwError>;
