//! Deterministic discrete-event simulation of a planned node.
//!
//! Requests arrive over the NIC, are grouped into batches by a dispatcher
//! that keeps a bounded number of batches in flight, and flow through the
//! plan's partitions. Every core, host stage, link direction and the NIC is
//! a timeline of busy intervals; work books the earliest idle gap, so a
//! partition starts the next batch as soon as its cores free while
//! downstream partitions still work on the previous one.
//!
//! Card ops take their roofline latency on one core (SLS ops at the batch's
//! actual lookup counts). Cross-partition tensors leave when their producing
//! partition finishes the batch; tensors leaving one device for the same
//! device in that window share a transaction when command batching is on.

mod batching;
mod engine;
mod report;
mod timeline;
mod transfer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::GraphError;
use crate::hardware::HwError;
use crate::partition::PartitionError;

pub use batching::{form_batches, Batch, BatchPolicy};
pub use engine::simulate;
pub use report::{
    nearest_rank, percentiles, summarize_report, CoreBusy, LinkStats, MetricRow, OpEvent, Percentiles, SimReport,
    Summary,
};
pub use transfer::{
    merge_window, plan_transfers, plan_transfers_with, Batching, EdgeBytes, Route, TransferEdge, TransferOptions,
    TransferPlan,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error("unschedulable plan: {0}")]
    Unschedulable(String),
    #[error("item of length {len} exceeds the largest padding boundary {max}")]
    ItemTooLong { len: usize, max: usize },
    #[error("invalid simulation input: {0}")]
    Invalid(String),
}

impl From<PartitionError> for SimError {
    fn from(e: PartitionError) -> Self {
        SimError::Unschedulable(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SimError>;

/// A client request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: usize,
    pub arrival: f64,
    /// Items of the compiled batch this request fills.
    pub items: usize,
    /// Index count per SLS op, in the order of the simulator's SLS sites.
    pub lookups: Vec<u64>,
    pub tokens: Option<usize>,
    pub deadline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Traffic {
    /// Poisson arrivals at `rate` per second for `duration_s`.
    OpenLoop { rate: f64, duration_s: f64, seed: u64 },
    /// `concurrency` clients, each sending its next request when the
    /// previous one completes, `count` requests in total.
    ClosedLoop { concurrency: usize, count: usize },
}

/// How many indices each request actually sends to an SLS op.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LookupModel {
    /// Per pooled row, Binomial(max_lookups, avg/max_lookups): mean equals
    /// the op's annotation; unannotated ops always use the maximum.
    Annotated,
    /// A fixed fraction of the compiled index capacity, rounded.
    Occupancy { fraction: f64 },
}

/// Token lengths drawn uniformly from `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthModel {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub traffic: Traffic,
    #[serde(default)]
    pub batch: BatchPolicy,
    /// Items the graph was compiled for; each request fills
    /// `compiled_batch / n` of them.
    #[serde(default = "one")]
    pub compiled_batch: usize,
    #[serde(default = "annotated")]
    pub lookups: LookupModel,
    #[serde(default)]
    pub lengths: Option<LengthModel>,
    /// Sequence length the graph was compiled at; device time of a padded
    /// batch scales by `padded / compiled_len`. Defaults to the largest
    /// padding boundary.
    #[serde(default)]
    pub compiled_len: Option<usize>,
    #[serde(default = "default_constraint")]
    pub latency_constraint_ms: f64,
    /// Batches dispatched but not yet complete, at most.
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    #[serde(default)]
    pub seed: u64,
    /// Record every op execution in the report.
    #[serde(default)]
    pub trace: bool,
}

fn one() -> usize {
    1
}

fn annotated() -> LookupModel {
    LookupModel::Annotated
}

fn default_constraint() -> f64 {
    100.0
}

fn default_inflight() -> usize {
    8
}

impl SimConfig {
    pub fn new(traffic: Traffic) -> Self {
        Self {
            traffic,
            batch: BatchPolicy::default(),
            compiled_batch: 1,
            lookups: LookupModel::Annotated,
            lengths: None,
            compiled_len: None,
            latency_constraint_ms: default_constraint(),
            max_inflight: default_inflight(),
            seed: 0,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.batch.validate()?;
        let bad = |m: &str| Err(SimError::Invalid(m.into()));
        match self.traffic {
            Traffic::OpenLoop { rate, duration_s, .. } if !(rate >= 0.0 && duration_s >= 0.0) => {
                return bad("rate and duration must not be negative")
            }
            Traffic::ClosedLoop { concurrency: 0, count } if count > 0 => return bad("concurrency must be positive"),
            _ => {}
        }
        if self.compiled_batch == 0 || self.max_inflight == 0 {
            return bad("compiled_batch and max_inflight must be positive");
        }
        if let LookupModel::Occupancy { fraction } = self.lookups {
            if !(0.0..=1.0).contains(&fraction) {
                return bad("occupancy fraction must be in [0, 1]");
            }
        }
        if let Some(l) = self.lengths {
            if l.min == 0 || l.min > l.max {
                return bad("length range must satisfy 1 <= min <= max");
            }
        }
        if !(self.latency_constraint_ms > 0.0) {
            return bad("latency constraint must be positive");
        }
        Ok(())
    }
}
