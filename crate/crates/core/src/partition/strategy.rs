use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::balance::{assign_tables_by_capacity, assign_tables_by_count, balance_sls, sls_tables};
use super::parallel::even_chunks;
use super::split::{split_host_device, HostDeviceSplit};
use super::{Device, Partition, PartitionError, Result, Role};
use crate::graph::{op_cost_stats, resolve_outputs, ComputeGraph, OpAttrs, OpKind, OpNode, TensorSpec};
use crate::hardware::HardwareConfig;

/// Partitions over a (possibly rewritten) graph, before placement.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSet {
    pub graph: ComputeGraph,
    pub partitions: Vec<Partition>,
    pub host_only: bool,
    pub broadcast_rewrites: usize,
}

/// How many cores of each card the sparse partition gets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseCores {
    #[serde(default = "one_third")]
    pub fraction: f64,
    /// Explicit core count; overrides `fraction`.
    #[serde(default)]
    pub cores: Option<usize>,
}

fn one_third() -> f64 {
    1.0 / 3.0
}

impl Default for SparseCores {
    fn default() -> Self {
        Self {
            fraction: one_third(),
            cores: None,
        }
    }
}

impl SparseCores {
    pub fn fixed(cores: usize) -> Self {
        Self {
            cores: Some(cores),
            ..Self::default()
        }
    }

    /// Sparse cores on a `total`-core card, leaving at least one core for
    /// dense work when there is any.
    pub fn resolve(&self, total: usize, has_dense: bool) -> usize {
        if !has_dense {
            return total;
        }
        let k = self
            .cores
            .unwrap_or_else(|| (self.fraction * total as f64 - 1e-9).ceil().max(0.0) as usize);
        k.clamp(1, total.saturating_sub(1).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TablePolicy {
    /// Largest table first onto the card with the most free memory.
    #[default]
    Capacity,
    /// Lookup-aware load balancing.
    LoadBalanced,
    /// Equal table counts.
    CountBalanced,
}

/// The sparse core count minimizing the slower stage,
/// `max(sparse / k, dense / (cores - k))`, over `k` in `1..cores`; ties go
/// to the smaller `k`. No sparse work means no sparse cores.
pub fn allocate_cores(sparse_work: f64, dense_work: f64, cores_total: usize) -> usize {
    if !(sparse_work > 0.0) {
        return 0;
    }
    if cores_total < 2 {
        return cores_total;
    }
    let stage = |k: usize| (sparse_work / k as f64).max(dense_work / (cores_total - k) as f64);
    let mut best = 1;
    for k in 2..cores_total {
        if stage(k) < stage(best) {
            best = k;
        }
    }
    best
}

/// Splits `total` cores over nets in proportion to their work with one core
/// minimum each; leftover cores go to the largest shortfalls (then lowest
/// index).
fn share_cores(total: usize, work: &[f64], card: usize) -> Result<Vec<usize>> {
    let n = work.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > total {
        return Err(PartitionError::Oversubscribed {
            card,
            needed: n,
            available: total,
        });
    }
    let sum: f64 = work.iter().sum();
    let ideal: Vec<f64> = if sum > 0.0 {
        work.iter().map(|w| w / sum * total as f64).collect()
    } else {
        vec![total as f64 / n as f64; n]
    };
    let mut out: Vec<usize> = ideal.iter().map(|x| (x.floor() as usize).max(1)).collect();
    // give back cores taken by the one-core minimum, from the largest shares
    while out.iter().sum::<usize>() > total {
        let i = (0..n).filter(|&i| out[i] > 1).max_by(|&a, &b| out[a].cmp(&out[b]).then(b.cmp(&a))).expect("total >= n");
        out[i] -= 1;
    }
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (ideal[b] - out[b] as f64).total_cmp(&(ideal[a] - out[a] as f64)).then(a.cmp(&b)));
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    Ok(out)
}

fn work(g: &ComputeGraph, ops: &[String]) -> Result<f64> {
    let mut flops = 0.0;
    let mut bytes = 0.0;
    for id in ops {
        let op = g.op(id).ok_or_else(|| PartitionError::UnknownOp(id.clone()))?;
        let s = op_cost_stats(g, op)?;
        flops += s.flops;
        bytes += s.bytes_moved;
    }
    Ok(if flops > 0.0 { flops } else { bytes })
}

fn host_partition(role: Role, mids: &mut usize, ops: Vec<String>) -> Partition {
    let id = match role {
        Role::HostPre => "host_pre".to_string(),
        Role::HostPost => "host_post".to_string(),
        _ => {
            *mids += 1;
            format!("host_mid{}", *mids - 1)
        }
    };
    Partition {
        id,
        role,
        ops,
        devices: vec![Device::Host],
        cores: 1,
        first_core: 0,
    }
}

/// One partition per device net, all sharing the cores of each card.
fn nets(split: &HostDeviceSplit, hw: &HardwareConfig, devices: Vec<Device>, role: Role, prefix: &str) -> Result<PartitionSet> {
    let g = &split.graph;
    let device_ops: Vec<&Vec<String>> = split.device_segments().map(|s| &s.ops).collect();
    let works = device_ops.iter().map(|ops| work(g, ops)).collect::<Result<Vec<_>>>()?;
    let cores = share_cores(hw.cards[0].cores, &works, 0)?;
    let mut partitions = Vec::new();
    let (mut mids, mut net, mut first) = (0, 0, 0);
    for seg in &split.segments {
        if seg.role.is_host() {
            partitions.push(host_partition(seg.role, &mut mids, seg.ops.clone()));
            continue;
        }
        partitions.push(Partition {
            id: format!("{prefix}{net}"),
            role,
            ops: seg.ops.clone(),
            devices: devices.clone(),
            cores: cores[net],
            first_core: first,
        });
        first += cores[net];
        net += 1;
    }
    Ok(PartitionSet {
        graph: split.graph.clone(),
        partitions,
        host_only: split.host_only,
        broadcast_rewrites: split.broadcast_rewrites,
    })
}

fn device_weight_bytes<'a>(g: &ComputeGraph, ops: impl Iterator<Item = &'a String>) -> u64 {
    let mut seen = BTreeSet::new();
    for id in ops {
        if let Some(op) = g.op(id) {
            seen.extend(g.op_weights(op));
        }
    }
    seen.iter().map(|w| g.weights[*w].bytes).sum()
}

/// Every device net on card 0.
pub fn single_card(g: &ComputeGraph, hw: &HardwareConfig) -> Result<PartitionSet> {
    let split = split_host_device(g)?;
    nets(&split, hw, vec![Device::Card(0)], Role::Device, "net")
}

/// The whole model replicated on every card; requests alternate between
/// replicas.
pub fn replicate_data_parallel(g: &ComputeGraph, hw: &HardwareConfig) -> Result<PartitionSet> {
    let split = split_host_device(g)?;
    let bytes = device_weight_bytes(&split.graph, split.device_segments().flat_map(|s| s.ops.iter()));
    let capacity = hw.cards.iter().map(|c| c.lpddr_bytes).min().unwrap_or(0);
    if bytes > capacity {
        return Err(PartitionError::ExceedsCard { bytes, capacity });
    }
    let devices = (0..hw.cards.len()).map(Device::Card).collect();
    nets(&split, hw, devices, Role::Device, "replica")
}

/// Embedding tables spread over cards (model parallel) and the dense
/// subgraph replicated on every card (data parallel). Each card holding
/// tables runs them in a sparse partition on its first cores; the dense
/// partitions share the rest.
pub fn partition_recsys(g: &ComputeGraph, hw: &HardwareConfig, sparse: SparseCores, policy: TablePolicy) -> Result<PartitionSet> {
    let split = split_host_device(g)?;
    let g = &split.graph;
    let sls: Vec<String> = split
        .device_segments()
        .flat_map(|s| s.ops.iter())
        .filter(|id| g.op(id).is_some_and(|o| o.kind == OpKind::SLS))
        .cloned()
        .collect();
    if sls.is_empty() {
        return Err(PartitionError::NoSparse);
    }
    let sls_set: BTreeSet<&String> = sls.iter().collect();
    let dense: Vec<Vec<String>> = split
        .device_segments()
        .map(|s| s.ops.iter().filter(|o| !sls_set.contains(o)).cloned().collect::<Vec<_>>())
        .filter(|ops| !ops.is_empty())
        .collect();
    let dense_bytes = device_weight_bytes(g, dense.iter().flatten());
    let capacity: Vec<u64> = hw.cards.iter().map(|c| c.lpddr_bytes.saturating_sub(dense_bytes)).collect();
    let tables = sls_tables(g, &sls, &hw.cards[0])?;
    let assignment = match policy {
        TablePolicy::Capacity => assign_tables_by_capacity(&tables, &capacity)?,
        TablePolicy::LoadBalanced => balance_sls(&tables, &capacity)?,
        TablePolicy::CountBalanced => assign_tables_by_count(&tables, &capacity)?,
    };

    let total = hw.cards[0].cores;
    let k = sparse.resolve(total, !dense.is_empty());
    let order: BTreeMap<&str, usize> = g.ops.iter().enumerate().map(|(i, o)| (o.id.as_str(), i)).collect();
    let mut sparse_parts = Vec::new();
    for (c, ts) in assignment.cards.iter().enumerate() {
        if ts.is_empty() {
            continue;
        }
        let mut ops: Vec<String> = ts.iter().flat_map(|&t| tables[t].ops.iter().cloned()).collect();
        ops.sort_by_key(|o| order[o.as_str()]);
        sparse_parts.push(Partition {
            id: format!("sparse{c}"),
            role: Role::Sparse,
            ops,
            devices: vec![Device::Card(c)],
            cores: k,
            first_core: 0,
        });
    }
    let works = dense.iter().map(|ops| work(g, ops)).collect::<Result<Vec<_>>>()?;
    let dense_cores = share_cores(total - k, &works, 0)?;
    let all_cards: Vec<Device> = (0..hw.cards.len()).map(Device::Card).collect();

    let mut partitions = Vec::new();
    let (mut mids, mut net, mut first) = (0, 0, k);
    let mut sparse_parts = Some(sparse_parts);
    for seg in &split.segments {
        if seg.role.is_host() {
            partitions.push(host_partition(seg.role, &mut mids, seg.ops.clone()));
            continue;
        }
        if let Some(parts) = sparse_parts.take() {
            partitions.extend(parts);
        }
        let ops: Vec<String> = seg.ops.iter().filter(|o| !sls_set.contains(o)).cloned().collect();
        if ops.is_empty() {
            continue;
        }
        let id = if dense.len() == 1 { "dense".to_string() } else { format!("dense{net}") };
        partitions.push(Partition {
            id,
            role: Role::Dense,
            ops,
            devices: all_cards.clone(),
            cores: dense_cores[net],
            first_core: first,
        });
        first += dense_cores[net];
        net += 1;
    }
    Ok(PartitionSet {
        graph: split.graph.clone(),
        partitions,
        host_only: false,
        broadcast_rewrites: split.broadcast_rewrites,
    })
}

/// Rewrites each named FC into per-card column shards gathered by a Concat.
fn shard_graph(g: &ComputeGraph, fc_ids: &[String], cards: usize) -> Result<ComputeGraph> {
    let mut out = g.clone();
    for id in fc_ids {
        let op = out.op(id).cloned().ok_or_else(|| PartitionError::UnknownOp(id.clone()))?;
        let not_fc = || PartitionError::NotFc {
            op: id.clone(),
            kind: op.kind.name(),
        };
        if !matches!(op.kind, OpKind::FC | OpKind::MatMul) || op.inputs.len() < 2 || !out.is_weight(&op.inputs[1]) {
            return Err(not_fc());
        }
        let w = op.inputs[1].clone();
        let wspec = out.tensors[&w].clone();
        if wspec.shape.len() != 2 {
            return Err(not_fc());
        }
        let (k, n) = (wspec.shape[0], wspec.shape[1]);
        let y = op.outputs[0].clone();
        let rank = out.tensors.get(&y).map_or(2, |t| t.shape.len());
        let pos = out.ops.iter().position(|o| o.id == *id).expect("op present");
        let mut new_ops = Vec::new();
        let mut parts = Vec::new();
        for (c, (_, len)) in even_chunks(n, cards.min(n)).into_iter().enumerate() {
            let ws = out.add_weight(TensorSpec::new(format!("{w}.shard{c}"), vec![k, len], wspec.dtype));
            let mut attrs = op.attrs.clone();
            attrs.input_slices.retain(|s| s.input == 0);
            if attrs.out_features.is_some() {
                attrs.out_features = Some(len);
            }
            let mut shard = OpNode::new(
                format!("{id}.shard{c}"),
                op.kind,
                vec![op.inputs[0].clone(), ws],
                vec![format!("{y}.shard{c}")],
            )
            .with_attrs(attrs);
            shard.device_supported = op.device_supported;
            parts.push(shard.outputs[0].clone());
            new_ops.push(shard);
        }
        let mut gather = OpNode::new(format!("{id}.gather"), OpKind::Concat, parts, vec![y]).with_attrs(OpAttrs {
            axis: Some(rank - 1),
            in_place: true,
            ..Default::default()
        });
        gather.device_supported = op.device_supported;
        new_ops.push(gather);
        let added = new_ops.len();
        out.ops.splice(pos..=pos, new_ops);
        for i in pos..pos + added - 1 {
            resolve_outputs(&mut out, i)?;
        }
        if !out.ops.iter().any(|o| o.inputs.contains(&w)) {
            out.weights.remove(&w);
            out.tensors.remove(&w);
        }
    }
    Ok(out)
}

/// Column-shards the named FCs across all cards: card `c` computes output
/// columns of shard `c` and card 0 gathers them. Everything else runs as in
/// [`single_card`].
pub fn shard_fc(g: &ComputeGraph, hw: &HardwareConfig, fc_ids: &[String]) -> Result<PartitionSet> {
    for id in fc_ids {
        let op = g.op(id).ok_or_else(|| PartitionError::UnknownOp(id.clone()))?;
        if !matches!(op.kind, OpKind::FC | OpKind::MatMul) {
            return Err(PartitionError::NotFc {
                op: id.clone(),
                kind: op.kind.name(),
            });
        }
    }
    let cards = hw.cards.len();
    if cards == 1 || fc_ids.is_empty() {
        return single_card(g, hw);
    }
    let sharded = shard_graph(g, fc_ids, cards)?;
    let mut set = single_card(&sharded, hw)?;
    let remote = |c: usize| -> Vec<String> {
        fc_ids
            .iter()
            .map(|id| format!("{id}.shard{c}"))
            .filter(|s| set.graph.op(s).is_some())
            .collect()
    };
    let mut extra = Vec::new();
    for c in 1..cards {
        let ops = remote(c);
        if ops.is_empty() {
            continue;
        }
        extra.push(Partition {
            id: format!("shard{c}"),
            role: Role::Device,
            ops,
            devices: vec![Device::Card(c)],
            cores: hw.cards[c].cores,
            first_core: 0,
        });
    }
    let moved: BTreeSet<String> = extra.iter().flat_map(|p| p.ops.iter().cloned()).collect();
    for p in &mut set.partitions {
        p.ops.retain(|o| !moved.contains(o));
    }
    set.partitions.retain(|p| !p.ops.is_empty());
    set.partitions.extend(extra);
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, validate_graph, DType};

    #[test]
    fn core_allocation_examples() {
        assert_eq!(allocate_cores(12.0, 12.0, 2), 1);
        assert_eq!(allocate_cores(12.0, 24.0, 12), 4);
        assert_eq!(allocate_cores(0.0, 24.0, 12), 0);
    }

    #[test]
    fn default_fraction_is_one_in_three() {
        assert_eq!(SparseCores::default().resolve(12, true), 4);
        assert_eq!(SparseCores::default().resolve(12, false), 12);
        assert_eq!(SparseCores::fixed(20).resolve(12, true), 11);
    }

    #[test]
    fn cores_shared_by_work() {
        assert_eq!(share_cores(12, &[1.0, 3.0], 0).unwrap(), vec![3, 9]);
        assert_eq!(share_cores(3, &[0.0, 0.0, 0.0], 0).unwrap(), vec![1, 1, 1]);
        assert!(share_cores(1, &[1.0, 1.0], 0).is_err());
    }

    fn fc_graph(out: usize) -> ComputeGraph {
        let mut g = ComputeGraph::new();
        g.add_input(TensorSpec::new("x", vec![4, 8], DType::Fp16));
        g.add_weight(TensorSpec::new("w", vec![8, out], DType::Fp16));
        g.add_op(OpNode::new("fc", OpKind::FC, vec!["x".into(), "w".into()], vec!["y".into()]));
        g.outputs.push("y".into());
        infer_shapes(&g).unwrap()
    }

    #[test]
    fn ten_columns_over_six_cards() {
        let g = shard_graph(&fc_graph(10), &["fc".to_string()], 6).unwrap();
        let widths: Vec<usize> = (0..6).map(|c| g.tensors[&format!("w.shard{c}")].shape[1]).collect();
        assert_eq!(widths, vec![2, 2, 2, 2, 1, 1]);
        assert!(!g.weights.contains_key("w"));
        assert_eq!(g.tensors["y"].shape, vec![4, 10]);
        assert_eq!(validate_graph(&g), Ok(()));
    }

    #[test]
    fn sharding_rejects_non_fc() {
        let mut g = fc_graph(4);
        g.ops[0].kind = OpKind::Add;
        let hw = HardwareConfig::default_node();
        assert!(matches!(shard_fc(&g, &hw, &["fc".to_string()]), Err(PartitionError::NotFc { .. })));
    }
}
