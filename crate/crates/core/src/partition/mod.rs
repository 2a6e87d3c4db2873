//! Execution planning: host/device split, multi-card partitioning, core
//! allocation, op splitting and list-scheduled placement.
//!
//! [`build_plan`] runs the whole pipeline and returns an [`ExecutionPlan`],
//! an immutable value the simulator consumes. The individual steps are
//! public so they can be tested and swept on their own.

mod balance;
mod parallel;
mod schedule;
mod split;
mod strategy;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ComputeGraph, GraphError};
use crate::hardware::{
    compute_precision, op_latency, plan_residency_with, HardwareConfig, HwError, Placement, ResidencyPlan, Tier,
};

pub use balance::{
    assign_tables_by_capacity, assign_tables_by_count, balance_sls, sls_tables, zipf_tables, TableAssignment,
    TableInfo,
};
pub use parallel::{parallelize_ops, parallelize_subset, MinChunk, Parallelized};
pub use schedule::{place_ops, place_ops_with, Hint, PlacementPlan, RejectReason, RejectedHint, Scheduler, Slot};
pub use split::{fold_broadcasts, split_host_device, HostDeviceSplit, Segment};
pub use strategy::{
    allocate_cores, partition_recsys, replicate_data_parallel, shard_fc, single_card, PartitionSet, SparseCores,
    TablePolicy,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error("graph has no ops")]
    EmptyGraph,
    #[error("unknown op {0}")]
    UnknownOp(String),
    #[error("op {op} is a {kind}, not an FC or MatMul with a 2-D weight")]
    NotFc { op: String, kind: &'static str },
    #[error("{what} exceed card memory by {deficit} bytes")]
    Capacity { what: &'static str, deficit: u64 },
    #[error("model weights of {bytes} bytes exceed single-card capacity of {capacity} bytes; use shard_fc or partition_recsys")]
    ExceedsCard { bytes: u64, capacity: u64 },
    #[error("no SLS op runs on the device")]
    NoSparse,
    #[error("card {card}: partitions need {needed} cores, {available} available")]
    Oversubscribed { card: usize, needed: usize, available: usize },
    #[error("a partition needs at least one core")]
    NoCores,
    #[error("invalid plan: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PartitionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "on", content = "index")]
pub enum Device {
    Host,
    Card(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    HostPre,
    HostMid,
    HostPost,
    /// A device net that is neither sparse nor dense (single-card, replica
    /// or FC shard).
    Device,
    Sparse,
    Dense,
}

impl Role {
    pub fn is_host(self) -> bool {
        matches!(self, Role::HostPre | Role::HostMid | Role::HostPost)
    }
}

/// A set of ops executed together on one device, or replicated across
/// several devices with requests distributed round-robin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub id: String,
    pub role: Role,
    /// Op ids in graph topological order.
    pub ops: Vec<String>,
    pub devices: Vec<Device>,
    /// Cores per replica; host partitions run on one host thread.
    pub cores: usize,
    /// First card core of the partition's contiguous core range.
    pub first_core: usize,
}

impl Partition {
    pub fn on_host(&self) -> bool {
        self.devices.iter().all(|d| *d == Device::Host)
    }

    pub fn cards(&self) -> impl Iterator<Item = usize> + '_ {
        self.devices.iter().filter_map(|d| match d {
            Device::Card(c) => Some(*c),
            Device::Host => None,
        })
    }
}

/// Where and when an op runs, from the planner's latency estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpPlacement {
    pub partition: usize,
    /// Card core index (host ops use 0).
    pub core: usize,
    /// Position in that core's sequence.
    pub seq: usize,
    /// Estimated start and finish relative to the partition's start.
    pub start: f64,
    pub finish: f64,
}

/// A data edge between two partitions. `src == None` is a graph input
/// arriving from the host, `dst == None` a graph output returned to it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlanEdge {
    pub tensor: String,
    pub src: Option<usize>,
    pub dst: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    /// Every device net on card 0.
    SingleCard,
    /// The whole model on every card.
    DataParallel,
    /// Tables spread across cards, dense compute replicated.
    Recsys {
        #[serde(default)]
        sparse: SparseCores,
        #[serde(default)]
        tables: TablePolicy,
    },
    /// The named FCs column-sharded across all cards.
    ShardFc { fc_ids: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanOptions {
    pub strategy: Strategy,
    #[serde(default = "yes")]
    pub parallelize: bool,
    #[serde(default)]
    pub min_chunk: MinChunk,
    #[serde(default)]
    pub scheduler: Scheduler,
    #[serde(default)]
    pub hints: Vec<Hint>,
}

fn yes() -> bool {
    true
}

impl PlanOptions {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            parallelize: true,
            min_chunk: MinChunk::default(),
            scheduler: Scheduler::List,
            hints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub graph: ComputeGraph,
    pub partitions: Vec<Partition>,
    pub placement: BTreeMap<String, OpPlacement>,
    /// Weight residency of each card in use.
    pub residency: BTreeMap<usize, ResidencyPlan>,
    pub hints_applied: Vec<Hint>,
    pub hints_rejected: Vec<RejectedHint>,
    /// Set when nothing could be offloaded.
    pub host_only: bool,
    pub broadcast_rewrites: usize,
}

impl ExecutionPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PartitionError::Invalid(e.to_string()))
    }

    pub fn partition_of(&self) -> BTreeMap<&str, usize> {
        self.partitions
            .iter()
            .enumerate()
            .flat_map(|(p, part)| part.ops.iter().map(move |o| (o.as_str(), p)))
            .collect()
    }

    /// Every data edge crossing a partition boundary, once per
    /// (tensor, destination).
    pub fn edges(&self) -> Vec<PlanEdge> {
        let owner = self.partition_of();
        let mut producer: BTreeMap<&str, usize> = BTreeMap::new();
        for op in &self.graph.ops {
            for t in &op.outputs {
                producer.insert(t.as_str(), owner[op.id.as_str()]);
            }
        }
        let mut edges = BTreeSet::new();
        for op in &self.graph.ops {
            let dst = owner[op.id.as_str()];
            for t in op.inputs.iter().filter(|t| !self.graph.is_weight(t)) {
                let src = producer.get(t.as_str()).copied();
                let crosses = match src {
                    Some(s) => s != dst,
                    None => !self.partitions[dst].on_host(),
                };
                if crosses {
                    edges.insert(PlanEdge {
                        tensor: t.clone(),
                        src,
                        dst: Some(dst),
                    });
                }
            }
        }
        for t in &self.graph.outputs {
            if let Some(&src) = producer.get(t.as_str()) {
                if !self.partitions[src].on_host() {
                    edges.insert(PlanEdge {
                        tensor: t.clone(),
                        src: Some(src),
                        dst: None,
                    });
                }
            }
        }
        edges.into_iter().collect()
    }

    /// Checks coverage, core budgets and placement consistency.
    pub fn validate(&self, hw: &HardwareConfig) -> Result<()> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for part in &self.partitions {
            for op in &part.ops {
                *seen.entry(op.as_str()).or_default() += 1;
            }
        }
        for op in &self.graph.ops {
            match seen.get(op.id.as_str()) {
                Some(1) => {}
                Some(n) => return Err(PartitionError::Invalid(format!("op {} in {n} partitions", op.id))),
                None => return Err(PartitionError::Invalid(format!("op {} in no partition", op.id))),
            }
        }
        if seen.len() != self.graph.ops.len() {
            return Err(PartitionError::Invalid("partition lists an op missing from the graph".into()));
        }
        let mut used: BTreeMap<usize, usize> = BTreeMap::new();
        for part in self.partitions.iter().filter(|p| !p.on_host()) {
            if part.cores == 0 {
                return Err(PartitionError::NoCores);
            }
            for c in part.cards() {
                let card = hw.cards.get(c).ok_or(HwError::UnknownCard(c))?;
                let top = part.first_core + part.cores;
                *used.entry(c).or_default() += part.cores;
                if top > card.cores || used[&c] > card.cores {
                    return Err(PartitionError::Oversubscribed {
                        card: c,
                        needed: top.max(used[&c]),
                        available: card.cores,
                    });
                }
            }
        }
        for (op, pl) in &self.placement {
            let part = self
                .partitions
                .get(pl.partition)
                .ok_or_else(|| PartitionError::Invalid(format!("op {op} placed in missing partition")))?;
            let lo = if part.on_host() { 0 } else { part.first_core };
            if pl.core < lo || pl.core >= lo + part.cores.max(1) {
                return Err(PartitionError::Invalid(format!("op {op} on core {} outside its partition", pl.core)));
            }
        }
        if self.placement.len() != self.graph.ops.len() {
            return Err(PartitionError::Invalid("placement does not cover every op".into()));
        }
        Ok(())
    }

    /// Estimated single-request makespan of each partition.
    pub fn partition_makespans(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.partitions.len()];
        for pl in self.placement.values() {
            out[pl.partition] = out[pl.partition].max(pl.finish);
        }
        out
    }
}

fn tier_capacity(hw: &HardwareConfig, card: usize, tier: Tier) -> u64 {
    let c = &hw.cards[card];
    match tier {
        Tier::Sram => c.sram_bytes,
        Tier::Lpddr => c.lpddr_bytes,
        Tier::HostDram => (hw.host.host_dram_gb * 1e9) as u64,
    }
}

/// Validates memory hints against the weights each card holds. A hint is
/// applied only if the tensor fits the tier on every card holding it.
fn memory_hints(
    g: &ComputeGraph,
    hw: &HardwareConfig,
    weights: &BTreeMap<usize, Vec<String>>,
    hints: &[(usize, Hint)],
) -> (BTreeMap<usize, BTreeMap<String, Tier>>, Vec<(usize, Hint)>, Vec<(usize, RejectedHint)>) {
    let mut pins: BTreeMap<usize, BTreeMap<String, Tier>> = BTreeMap::new();
    let mut pinned: BTreeMap<(usize, Tier), u64> = BTreeMap::new();
    let mut applied = Vec::new();
    let mut rejected = Vec::new();
    for (pos, hint) in hints {
        let Hint::TensorToMemory { tensor, tier } = hint else { continue };
        let cards: Vec<usize> = weights.iter().filter(|(_, ws)| ws.contains(tensor)).map(|(c, _)| *c).collect();
        let reason = match g.weights.get(tensor) {
            _ if cards.is_empty() => Some(RejectReason::UnknownTensor),
            None => Some(RejectReason::UnknownTensor),
            Some(info) => {
                let fits = cards.iter().all(|&c| {
                    let already = pinned.get(&(c, *tier)).copied().unwrap_or(0);
                    already + info.bytes <= tier_capacity(hw, c, *tier)
                });
                if fits {
                    for &c in &cards {
                        *pinned.entry((c, *tier)).or_default() += info.bytes;
                        pins.entry(c).or_default().insert(tensor.clone(), *tier);
                    }
                    None
                } else {
                    Some(RejectReason::Capacity)
                }
            }
        };
        match reason {
            None => applied.push((*pos, hint.clone())),
            Some(reason) => rejected.push((
                *pos,
                RejectedHint {
                    hint: hint.clone(),
                    reason,
                },
            )),
        }
    }
    (pins, applied, rejected)
}

fn hint_ops(h: &Hint) -> Vec<&str> {
    match h {
        Hint::OpToCore { op, .. } => vec![op.as_str()],
        Hint::OpOrder { before, after } => vec![before.as_str(), after.as_str()],
        Hint::TensorToMemory { .. } => Vec::new(),
    }
}

/// Runs the planning pipeline: partitioning by strategy, op splitting on
/// each card partition, weight residency per card and list-scheduled
/// placement. Partition start times are relative; the simulator turns them
/// into a timeline.
pub fn build_plan(g: &ComputeGraph, hw: &HardwareConfig, opts: &PlanOptions) -> Result<ExecutionPlan> {
    hw.validate()?;
    let mut set = match &opts.strategy {
        Strategy::SingleCard => single_card(g, hw)?,
        Strategy::DataParallel => replicate_data_parallel(g, hw)?,
        Strategy::Recsys { sparse, tables } => partition_recsys(g, hw, *sparse, *tables)?,
        Strategy::ShardFc { fc_ids } => shard_fc(g, hw, fc_ids)?,
    };

    if opts.parallelize {
        for p in 0..set.partitions.len() {
            let part = &set.partitions[p];
            if part.on_host() || part.cores < 2 {
                continue;
            }
            let members: BTreeSet<String> = part.ops.iter().cloned().collect();
            let Parallelized { graph, replaced } = parallelize_subset(&set.graph, Some(&members), part.cores, opts.min_chunk)?;
            if replaced.is_empty() {
                continue;
            }
            set.graph = graph;
            let order: BTreeMap<&str, usize> = set.graph.ops.iter().enumerate().map(|(i, o)| (o.id.as_str(), i)).collect();
            let mut ops: Vec<String> = set.partitions[p]
                .ops
                .iter()
                .flat_map(|o| replaced.get(o).cloned().unwrap_or_else(|| vec![o.clone()]))
                .collect();
            ops.sort_by_key(|o| order[o.as_str()]);
            set.partitions[p].ops = ops;
        }
    }
    let g = &set.graph;

    let mut weights: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for part in set.partitions.iter().filter(|p| !p.on_host()) {
        for c in part.cards() {
            let list = weights.entry(c).or_default();
            for id in &part.ops {
                let op = g.op(id).ok_or_else(|| PartitionError::UnknownOp(id.clone()))?;
                for w in g.op_weights(op) {
                    if !list.iter().any(|x| x == w) {
                        list.push(w.to_string());
                    }
                }
            }
        }
    }
    let indexed: Vec<(usize, Hint)> = opts.hints.iter().cloned().enumerate().collect();
    let (pins, mut applied, mut rejected) = memory_hints(g, hw, &weights, &indexed);
    let mut residency = BTreeMap::new();
    for (c, list) in &weights {
        let empty = BTreeMap::new();
        let plan = plan_residency_with(g, &hw.cards[*c], Some(list), pins.get(c).unwrap_or(&empty))
            .map_err(|e| match e {
                HwError::Overflow { tier, deficit } => PartitionError::Capacity {
                    what: if tier == "sram" { "sram pins" } else { "weights" },
                    deficit,
                },
                e => e.into(),
            })?;
        residency.insert(*c, plan);
    }

    // route scheduling hints to the partition holding their ops
    let owner: BTreeMap<&str, usize> = set
        .partitions
        .iter()
        .enumerate()
        .flat_map(|(p, part)| part.ops.iter().map(move |o| (o.as_str(), p)))
        .collect();
    let mut routed: BTreeMap<usize, Vec<(usize, Hint)>> = BTreeMap::new();
    for (pos, hint) in &indexed {
        let ops = hint_ops(hint);
        if ops.is_empty() {
            continue;
        }
        let parts: BTreeSet<Option<usize>> = ops.iter().map(|o| owner.get(o).copied()).collect();
        let reason = if parts.contains(&None) {
            Some(RejectReason::UnknownOp)
        } else if parts.len() > 1 {
            Some(RejectReason::CrossPartition)
        } else {
            None
        };
        match reason {
            Some(reason) => rejected.push((*pos, RejectedHint { hint: hint.clone(), reason })),
            None => routed.entry(parts.into_iter().next().flatten().expect("owned")).or_default().push((*pos, hint.clone())),
        }
    }

    let empty_res = ResidencyPlan::default();
    let mut placement = BTreeMap::new();
    for (p, part) in set.partitions.iter().enumerate() {
        let (place, cores) = match part.cards().next() {
            None => (Placement::Host, 1),
            Some(card) => (Placement::Card { card, cores: 1 }, part.cores),
        };
        let res = part.cards().next().and_then(|c| residency.get(&c)).unwrap_or(&empty_res);
        let mut lat = BTreeMap::new();
        for id in &part.ops {
            let op = g.op(id).expect("partition op in graph");
            lat.insert(id.clone(), op_latency(g, op, compute_precision(g, op), place, res, hw)?);
        }
        let hints = routed.remove(&p).unwrap_or_default();
        let plain: Vec<Hint> = hints.iter().map(|(_, h)| h.clone()).collect();
        let pp = place_ops_with(g, &part.ops, cores, &lat, &plain, opts.scheduler)?;
        for h in pp.hints_applied {
            let pos = hints.iter().find(|(_, x)| *x == h).map(|(i, _)| *i).unwrap_or(usize::MAX);
            applied.push((pos, h));
        }
        for r in pp.hints_rejected {
            let pos = hints.iter().find(|(_, x)| *x == r.hint).map(|(i, _)| *i).unwrap_or(usize::MAX);
            rejected.push((pos, r));
        }
        let base = if part.on_host() { 0 } else { part.first_core };
        for (id, slot) in pp.slots {
            placement.insert(
                id,
                OpPlacement {
                    partition: p,
                    core: base + slot.core,
                    seq: slot.seq,
                    start: slot.start,
                    finish: slot.finish,
                },
            );
        }
    }
    applied.sort_by_key(|(i, _)| *i);
    rejected.sort_by_key(|(i, _)| *i);

    let plan = ExecutionPlan {
        graph: set.graph,
        partitions: set.partitions,
        placement,
        residency,
        hints_applied: applied.into_iter().map(|(_, h)| h).collect(),
        hints_rejected: rejected.into_iter().map(|(_, r)| r).collect(),
        host_only: set.host_only,
        broadcast_rewrites: set.broadcast_rewrites,
    };
    plan.validate(hw)?;
    Ok(plan)
}
