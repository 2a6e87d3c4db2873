//! Mixed-precision assignment.
//!
//! The search starts from the most aggressive legal assignment (int8 dense
//! ops, 4-bit row-wise embedding tables) and promotes the noisiest op to fp16
//! until an end-to-end proxy metric meets the accuracy budget. The rewrite
//! then materializes the assignment as explicit conversion ops.

mod assign;
mod exec;
pub mod fixtures;
mod rewrite;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assign::{assign_precisions, isolated_layer_errors, quant_candidates};
pub use exec::{budget_metric, CalibrationSet, Int8Params, ParamsMap, ProxyEval, ProxyModel, ReferenceProxy};
pub use rewrite::apply_assignment;

use crate::graph::workloads::Family;
use crate::graph::{ComputeGraph, GraphError, OpKind};
use crate::hardware::{
    compute_precision, op_latency, HardwareConfig, HwError, Placement, Precision, ResidencyPlan,
};
use crate::numerics::{AccuracyBudget, BudgetMetric, NumericsError};

#[derive(Debug, Error)]
pub enum QuantError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("graph has no ops")]
    EmptyGraph,
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("no value for weight {0}")]
    MissingWeight(String),
    #[error("no calibration value for tensor {0}")]
    MissingInput(String),
    #[error("no int8 parameters for op {0}")]
    MissingParams(String),
    #[error("op {op}: {kind} is not executable by the reference proxy")]
    Unsupported { op: String, kind: &'static str },
    #[error("metric {0} has no proxy evaluator")]
    UnsupportedMetric(&'static str),
    #[error("proxy evaluation failed at iteration {iteration}: {source}")]
    Proxy {
        iteration: usize,
        #[source]
        source: Box<QuantError>,
    },
    #[error("assignment references unknown op {0}")]
    UnknownOp(String),
    #[error("assignment does not cover device op {0}")]
    Uncovered(String),
    #[error("op {op}: {kind} cannot run at {precision}")]
    BadPrecision {
        op: String,
        kind: &'static str,
        precision: OpPrecision,
    },
    #[error("{0}")]
    Fixture(String),
}

pub type Result<T> = std::result::Result<T, QuantError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpPrecision {
    Fp32,
    Fp16,
    Int8,
    /// 4-bit row-wise tables; SLS only.
    Int4rw,
}

impl OpPrecision {
    pub fn name(self) -> &'static str {
        match self {
            OpPrecision::Fp32 => "fp32",
            OpPrecision::Fp16 => "fp16",
            OpPrecision::Int8 => "int8",
            OpPrecision::Int4rw => "int4rw",
        }
    }
}

impl fmt::Display for OpPrecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type Precisions = BTreeMap<String, OpPrecision>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentStatus {
    MeetsBudget,
    FallbackAllFp16,
    /// A fixed per-family policy that was never scored.
    Unevaluated,
}

impl AssignmentStatus {
    pub fn name(self) -> &'static str {
        match self {
            AssignmentStatus::MeetsBudget => "meets_budget",
            AssignmentStatus::FallbackAllFp16 => "fallback_all_fp16",
            AssignmentStatus::Unevaluated => "unevaluated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAssignment {
    pub precisions: Precisions,
    /// Present for int8 ops whose weights were available.
    pub params: ParamsMap,
    pub budget: AccuracyBudget,
    pub status: AssignmentStatus,
    /// Metric after the final iteration (`None` when never scored).
    pub metric_value: Option<f64>,
    /// Ops promoted to fp16, in promotion order.
    pub promotions: Vec<String>,
    /// Metric value at each iteration.
    pub history: Vec<f64>,
}

impl PrecisionAssignment {
    pub fn fp16_set(&self) -> BTreeSet<&str> {
        self.precisions
            .iter()
            .filter(|(_, &p)| p == OpPrecision::Fp16)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn count(&self, p: OpPrecision) -> usize {
        self.precisions.values().filter(|&&q| q == p).count()
    }

    /// One line per op, `op_id precision scale zero_point` (`-` where not
    /// int8), followed by status and metric footer lines.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (id, p) in &self.precisions {
            match self.params.get(id) {
                Some(q) if *p == OpPrecision::Int8 => {
                    s += &format!("{id} {p} {} {}\n", q.activation.scale[0], q.activation.zero_point)
                }
                _ => s += &format!("{id} {p} - -\n"),
            }
        }
        s += &format!("status {}\n", self.status.name());
        match self.metric_value {
            Some(v) => s += &format!("metric {} {v}\n", self.budget.metric.name()),
            None => s += &format!("metric {} -\n", self.budget.metric.name()),
        }
        s
    }
}

/// FCs from which no other FC is reachable: the last FC of every chain.
pub fn last_fcs(g: &ComputeGraph) -> Result<BTreeSet<String>> {
    let succ = g.successors();
    let order = g.topo_order()?;
    let mut reaches_fc = vec![false; g.ops.len()];
    for &i in order.iter().rev() {
        reaches_fc[i] = succ[i].iter().any(|&s| g.ops[s].kind == OpKind::FC || reaches_fc[s]);
    }
    Ok(g.ops
        .iter()
        .enumerate()
        .filter(|(i, op)| op.kind == OpKind::FC && !reaches_fc[*i])
        .map(|(_, op)| op.id.clone())
        .collect())
}

/// Fixed per-family deployment precisions. Recsys: int8 FCs except each
/// chain's last, 4-bit tables. Vision and video: int8 dense ops except the
/// first conv and the classifier. Language: fp16. Host-only ops stay fp32
/// and other device ops run in fp16.
pub fn deploy_default(g: &ComputeGraph, family: Family) -> Result<PrecisionAssignment> {
    let last = last_fcs(g)?;
    let first_conv = g
        .topo_order()?
        .into_iter()
        .map(|i| &g.ops[i])
        .find(|op| matches!(op.kind, OpKind::Conv | OpKind::Conv3D))
        .map(|op| op.id.clone());
    let mut precisions = Precisions::new();
    for op in &g.ops {
        let p = if !op.device_supported {
            OpPrecision::Fp32
        } else {
            match family {
                Family::Language => OpPrecision::Fp16,
                _ if op.kind == OpKind::SLS => OpPrecision::Int4rw,
                Family::Recsys if op.kind == OpKind::FC && !last.contains(&op.id) => OpPrecision::Int8,
                Family::Vision | Family::Video
                    if op.kind.is_dense_compute() && !last.contains(&op.id) && first_conv.as_ref() != Some(&op.id) =>
                {
                    OpPrecision::Int8
                }
                _ => OpPrecision::Fp16,
            }
        };
        precisions.insert(op.id.clone(), p);
    }
    let metric = match family {
        Family::Recsys => BudgetMetric::NeDegradation,
        Family::Vision | Family::Video => BudgetMetric::Top1Drop,
        Family::Language => BudgetMetric::BleuDrop,
    };
    Ok(PrecisionAssignment {
        precisions,
        params: ParamsMap::new(),
        budget: AccuracyBudget::default_for(metric),
        status: AssignmentStatus::Unevaluated,
        metric_value: None,
        promotions: Vec::new(),
        history: Vec::new(),
    })
}

/// Estimated latency share of one op kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindShare {
    pub kind: OpKind,
    pub latency_s: f64,
    pub share: f64,
}

/// Ranks op kinds by their share of summed per-op latency. Device ops are
/// priced on a whole card with weights in LPDDR, host-only ops on the host.
/// Device ops still in fp32 are priced at the fp16 rate.
pub fn profile_bottlenecks(g: &ComputeGraph, hw: &HardwareConfig) -> Result<Vec<KindShare>> {
    if g.ops.is_empty() {
        return Err(QuantError::EmptyGraph);
    }
    let residency = ResidencyPlan::default();
    let cores = hw.cards[0].cores;
    let mut by_kind: BTreeMap<OpKind, f64> = BTreeMap::new();
    for op in &g.ops {
        let lat = if op.device_supported {
            let prec = match compute_precision(g, op) {
                Precision::Fp32 => Precision::Fp16,
                p => p,
            };
            op_latency(g, op, prec, Placement::Card { card: 0, cores }, &residency, hw)?
        } else {
            op_latency(g, op, Precision::Fp32, Placement::Host, &residency, hw)?
        };
        *by_kind.entry(op.kind).or_default() += lat;
    }
    let total: f64 = by_kind.values().sum();
    let mut shares: Vec<KindShare> = by_kind
        .into_iter()
        .map(|(kind, latency_s)| KindShare {
            kind,
            latency_s,
            share: latency_s / total,
        })
        .collect();
    shares.sort_by(|a, b| b.share.total_cmp(&a.share).then_with(|| a.kind.name().cmp(b.kind.name())));
    Ok(shares)
}
