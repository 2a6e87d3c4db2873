use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{PartitionError, Result};
use crate::graph::ComputeGraph;
use crate::hardware::Tier;

/// Advisory placement directive. Unsatisfiable hints are rejected with a
/// reason and never change the plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Hint {
    OpToCore { op: String, core: usize },
    TensorToMemory { tensor: String, tier: Tier },
    OpOrder { before: String, after: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// The tensor does not fit the remaining capacity of the tier.
    Capacity,
    /// The ordering contradicts a data dependency.
    Dependency,
    UnknownOp,
    /// Not a weight of any card partition.
    UnknownTensor,
    /// Core index outside the partition's cores.
    InvalidCore,
    /// The two ops of an ordering hint run in different partitions.
    CrossPartition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedHint {
    pub hint: Hint,
    pub reason: RejectReason,
}

/// Where and when one op runs within its partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    /// Core index local to the partition.
    pub core: usize,
    /// Position in the core's execution sequence.
    pub seq: usize,
    pub start: f64,
    pub finish: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    #[default]
    List,
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub slots: BTreeMap<String, Slot>,
    pub makespan: f64,
    pub scheduler: Scheduler,
    pub hints_applied: Vec<Hint>,
    pub hints_rejected: Vec<RejectedHint>,
}

impl PlacementPlan {
    /// Op ids on `core` in execution order.
    pub fn core_sequence(&self, core: usize) -> Vec<&str> {
        let mut ops: Vec<(&str, &Slot)> =
            self.slots.iter().filter(|(_, s)| s.core == core).map(|(k, s)| (k.as_str(), s)).collect();
        ops.sort_by_key(|(_, s)| s.seq);
        ops.into_iter().map(|(k, _)| k).collect()
    }
}

/// Local DAG of one partition: data edges between its ops plus accepted
/// ordering edges. Index order is graph topological order.
struct Dag<'a> {
    ids: Vec<&'a str>,
    preds: Vec<BTreeSet<usize>>,
    succs: Vec<BTreeSet<usize>>,
}

impl<'a> Dag<'a> {
    fn new(g: &'a ComputeGraph, ops: &[String]) -> Result<Self> {
        let members: BTreeSet<&str> = ops.iter().map(String::as_str).collect();
        let mut ids = Vec::with_capacity(ops.len());
        for i in g.topo_order()? {
            if members.contains(g.ops[i].id.as_str()) {
                ids.push(g.ops[i].id.as_str());
            }
        }
        if ids.len() != members.len() {
            let missing = members.iter().find(|m| g.op(m).is_none()).copied().unwrap_or_default();
            return Err(PartitionError::UnknownOp(missing.to_string()));
        }
        let mut producer: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            for t in &g.op(id).expect("member").outputs {
                producer.insert(t.as_str(), i);
            }
        }
        let n = ids.len();
        let mut dag = Dag {
            ids,
            preds: vec![BTreeSet::new(); n],
            succs: vec![BTreeSet::new(); n],
        };
        for i in 0..n {
            let op = g.op(dag.ids[i]).expect("member");
            for t in &op.inputs {
                if let Some(&p) = producer.get(t.as_str()) {
                    dag.add_edge(p, i);
                }
            }
        }
        Ok(dag)
    }

    fn index(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| *x == id)
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.preds[b].insert(a);
            self.succs[a].insert(b);
        }
    }

    fn reaches(&self, from: usize, to: usize) -> bool {
        let mut stack = vec![from];
        let mut seen = vec![false; self.ids.len()];
        while let Some(x) = stack.pop() {
            if x == to {
                return true;
            }
            for &s in &self.succs[x] {
                if !seen[s] {
                    seen[s] = true;
                    stack.push(s);
                }
            }
        }
        false
    }

    /// Topological order that prefers graph order among ready ops.
    fn order(&self) -> Vec<usize> {
        let mut indeg: Vec<usize> = self.preds.iter().map(BTreeSet::len).collect();
        let mut ready: BTreeSet<usize> = (0..self.ids.len()).filter(|&i| indeg[i] == 0).collect();
        let mut out = Vec::with_capacity(self.ids.len());
        while let Some(i) = ready.pop_first() {
            out.push(i);
            for &s in &self.succs[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        out
    }
}

/// Splits hints into the ones `place_ops` can honor and the rejected rest.
/// Memory hints are not scheduling hints and are ignored here.
fn check_hints(dag: &mut Dag<'_>, cores: usize, hints: &[Hint]) -> (BTreeMap<usize, usize>, Vec<Hint>, Vec<RejectedHint>) {
    let mut forced = BTreeMap::new();
    let mut applied = Vec::new();
    let mut rejected = Vec::new();
    for hint in hints {
        let reason = match hint {
            Hint::OpToCore { op, core } => match dag.index(op) {
                None => Some(RejectReason::UnknownOp),
                Some(_) if *core >= cores => Some(RejectReason::InvalidCore),
                Some(i) => {
                    forced.insert(i, *core);
                    None
                }
            },
            Hint::OpOrder { before, after } => match (dag.index(before), dag.index(after)) {
                (Some(a), Some(b)) if a == b || dag.reaches(b, a) => Some(RejectReason::Dependency),
                (Some(a), Some(b)) => {
                    dag.add_edge(a, b);
                    None
                }
                _ => Some(RejectReason::UnknownOp),
            },
            Hint::TensorToMemory { .. } => continue,
        };
        match reason {
            None => applied.push(hint.clone()),
            Some(reason) => rejected.push(RejectedHint {
                hint: hint.clone(),
                reason,
            }),
        }
    }
    (forced, applied, rejected)
}

/// Assigns each op a start time on a core given a visiting order and a core
/// choice rule. Ops start once their local predecessors finish.
fn simulate(
    dag: &Dag<'_>,
    order: &[usize],
    lat: &[f64],
    cores: usize,
    forced: &BTreeMap<usize, usize>,
    pick: impl Fn(usize, usize, &[f64], f64) -> usize,
) -> (Vec<(usize, f64, f64)>, f64) {
    let mut avail = vec![0.0f64; cores];
    let mut done = vec![(0usize, 0.0f64, 0.0f64); dag.ids.len()];
    let mut makespan = 0.0f64;
    for (pos, &i) in order.iter().enumerate() {
        let ready = dag.preds[i].iter().map(|&p| done[p].2).fold(0.0, f64::max);
        let core = forced.get(&i).copied().unwrap_or_else(|| pick(i, pos, &avail, ready));
        let start = avail[core].max(ready);
        let finish = start + lat[i];
        avail[core] = finish;
        done[i] = (core, start, finish);
        makespan = makespan.max(finish);
    }
    (done, makespan)
}

fn earliest_core(avail: &[f64], ready: f64) -> usize {
    let mut best = 0;
    for c in 1..avail.len() {
        if avail[c].max(ready) < avail[best].max(ready) {
            best = c;
        }
    }
    best
}

/// List scheduling: repeatedly takes the ready op with the longest remaining
/// critical path (ties by op id) and starts it on the core where it can
/// start earliest (ties to the lowest core).
fn list_order(dag: &Dag<'_>, lat: &[f64]) -> Vec<usize> {
    let topo = dag.order();
    let mut level = vec![0.0f64; dag.ids.len()];
    for &i in topo.iter().rev() {
        level[i] = lat[i] + dag.succs[i].iter().map(|&s| level[s]).fold(0.0, f64::max);
    }
    let mut indeg: Vec<usize> = dag.preds.iter().map(BTreeSet::len).collect();
    let mut ready: Vec<usize> = (0..dag.ids.len()).filter(|&i| indeg[i] == 0).collect();
    let mut out = Vec::with_capacity(dag.ids.len());
    while !ready.is_empty() {
        let (k, _) = ready
            .iter()
            .enumerate()
            .max_by(|(_, &a), (_, &b)| level[a].total_cmp(&level[b]).then_with(|| dag.ids[b].cmp(dag.ids[a])))
            .expect("non-empty");
        let i = ready.swap_remove(k);
        out.push(i);
        for &s in &dag.succs[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(s);
            }
        }
    }
    out
}

/// Places `ops` (one partition) on `cores` cores using per-op latency
/// estimates. Satisfiable `op_to_core` and `op_order` hints are honored.
/// The round-robin baseline is computed as well and returned instead when
/// it finishes strictly earlier, so placement never loses to it.
pub fn place_ops(
    g: &ComputeGraph,
    ops: &[String],
    cores: usize,
    latency: &BTreeMap<String, f64>,
    hints: &[Hint],
) -> Result<PlacementPlan> {
    place_ops_with(g, ops, cores, latency, hints, Scheduler::List)
}

pub fn place_ops_with(
    g: &ComputeGraph,
    ops: &[String],
    cores: usize,
    latency: &BTreeMap<String, f64>,
    hints: &[Hint],
    scheduler: Scheduler,
) -> Result<PlacementPlan> {
    if cores == 0 {
        return Err(PartitionError::NoCores);
    }
    let mut dag = Dag::new(g, ops)?;
    let (forced, applied, rejected) = check_hints(&mut dag, cores, hints);
    let lat: Vec<f64> = dag
        .ids
        .iter()
        .map(|id| latency.get(*id).copied().ok_or_else(|| PartitionError::UnknownOp(id.to_string())))
        .collect::<Result<_>>()?;

    let rr_order = dag.order();
    let rr = simulate(&dag, &rr_order, &lat, cores, &forced, |_, pos, _, _| pos % cores);
    let (order, (done, makespan), used) = match scheduler {
        Scheduler::RoundRobin => (rr_order, rr, Scheduler::RoundRobin),
        Scheduler::List => {
            let order = list_order(&dag, &lat);
            let ls = simulate(&dag, &order, &lat, cores, &forced, |_, _, avail, ready| earliest_core(avail, ready));
            if rr.1 < ls.1 {
                (rr_order, rr, Scheduler::RoundRobin)
            } else {
                (order, ls, Scheduler::List)
            }
        }
    };

    let mut seq = vec![0usize; cores];
    let mut slots = BTreeMap::new();
    for &i in &order {
        let (core, start, finish) = done[i];
        slots.insert(
            dag.ids[i].to_string(),
            Slot {
                core,
                seq: seq[core],
                start,
                finish,
            },
        );
        seq[core] += 1;
    }
    Ok(PlacementPlan {
        slots,
        makespan,
        scheduler: used,
        hints_applied: applied,
        hints_rejected: rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DType, OpKind, OpNode, TensorSpec};

    fn graph(edges: &[(&str, &[&str])]) -> ComputeGraph {
        let mut g = ComputeGraph::new();
        g.add_input(TensorSpec::new("x", vec![1], DType::Fp16));
        for (id, ins) in edges {
            let inputs = if ins.is_empty() {
                vec!["x".to_string()]
            } else {
                ins.iter().map(|i| format!("{i}.y")).collect()
            };
            g.add_op(OpNode::new(*id, OpKind::Add, inputs, vec![format!("{id}.y")]));
        }
        g
    }

    fn costs(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn ids(g: &ComputeGraph) -> Vec<String> {
        g.ops.iter().map(|o| o.id.clone()).collect()
    }

    fn diamond() -> (ComputeGraph, BTreeMap<String, f64>) {
        let g = graph(&[("A", &[]), ("B", &["A"]), ("C", &["A"]), ("D", &["B", "C"])]);
        (g, costs(&[("A", 1.0), ("B", 2.0), ("C", 2.0), ("D", 1.0)]))
    }

    #[test]
    fn chain_stays_on_core_zero() {
        let g = graph(&[("A", &[]), ("B", &["A"]), ("C", &["B"])]);
        let lat = costs(&[("A", 1.0), ("B", 2.0), ("C", 3.0)]);
        let p = place_ops(&g, &ids(&g), 4, &lat, &[]).unwrap();
        assert!(p.slots.values().all(|s| s.core == 0));
        assert_eq!(p.makespan, 6.0);
        assert_eq!(p.core_sequence(0), vec!["A", "B", "C"]);
    }

    #[test]
    fn diamond_runs_branches_in_parallel() {
        let (g, lat) = diamond();
        let p = place_ops(&g, &ids(&g), 2, &lat, &[]).unwrap();
        assert_eq!(p.makespan, 4.0);
        assert_ne!(p.slots["B"].core, p.slots["C"].core);
        assert_eq!(p.scheduler, Scheduler::List);
    }

    #[test]
    fn satisfiable_core_hint_is_applied() {
        let (g, lat) = diamond();
        let hint = Hint::OpToCore {
            op: "B".into(),
            core: 1,
        };
        let p = place_ops(&g, &ids(&g), 2, &lat, std::slice::from_ref(&hint)).unwrap();
        assert_eq!(p.slots["B"].core, 1);
        assert_eq!(p.hints_applied, vec![hint]);
        assert_eq!(p.makespan, 4.0);
    }

    #[test]
    fn order_hints() {
        let (g, lat) = diamond();
        let bad = Hint::OpOrder {
            before: "D".into(),
            after: "A".into(),
        };
        let good = Hint::OpOrder {
            before: "B".into(),
            after: "C".into(),
        };
        let base = place_ops(&g, &ids(&g), 2, &lat, &[]).unwrap();
        let p = place_ops(&g, &ids(&g), 2, &lat, std::slice::from_ref(&bad)).unwrap();
        assert_eq!(p.hints_rejected, vec![RejectedHint { hint: bad, reason: RejectReason::Dependency }]);
        assert_eq!(p.slots, base.slots);
        let p = place_ops(&g, &ids(&g), 2, &lat, std::slice::from_ref(&good)).unwrap();
        assert_eq!(p.hints_applied, vec![good]);
        assert!(p.slots["C"].start >= p.slots["B"].finish);
    }

    #[test]
    fn invalid_core_and_unknown_op_rejected() {
        let (g, lat) = diamond();
        let hints = [
            Hint::OpToCore { op: "B".into(), core: 7 },
            Hint::OpToCore { op: "Z".into(), core: 0 },
        ];
        let p = place_ops(&g, &ids(&g), 2, &lat, &hints).unwrap();
        let reasons: Vec<RejectReason> = p.hints_rejected.iter().map(|r| r.reason).collect();
        assert_eq!(reasons, vec![RejectReason::InvalidCore, RejectReason::UnknownOp]);
    }

    #[test]
    fn never_worse_than_round_robin() {
        let (g, lat) = diamond();
        let ls = place_ops(&g, &ids(&g), 3, &lat, &[]).unwrap();
        let rr = place_ops_with(&g, &ids(&g), 3, &lat, &[], Scheduler::RoundRobin).unwrap();
        assert!(ls.makespan <= rr.makespan);
    }
}
