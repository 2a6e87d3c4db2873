use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PartitionError, Result, Role};
use crate::graph::{infer_shapes, ComputeGraph, OpAttrs, OpKind, OpNode};

/// One contiguous host or device phase of a graph, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub role: Role,
    /// Op ids in graph topological order.
    pub ops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostDeviceSplit {
    /// The graph after the broadcast rewrite.
    pub graph: ComputeGraph,
    pub segments: Vec<Segment>,
    /// Number of Tile groups folded into one host Concat plus device Tile.
    pub broadcast_rewrites: usize,
    /// Set when no op could be offloaded and everything stays on the host.
    pub host_only: bool,
}

impl HostDeviceSplit {
    pub fn device_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.role == Role::Device)
    }
}

/// Folds per-feature broadcasts: when a Concat consumes a contiguous run of
/// two or more Tile ops, each tiling a graph input with the same axis and
/// repetition count, the inputs are concatenated once on the host and tiled
/// once on the device.
pub fn fold_broadcasts(g: &ComputeGraph) -> Result<(ComputeGraph, usize)> {
    let producers = g.producers();
    let consumers = g.consumers();
    let mut out = g.clone();
    let mut rewrites = 0;
    for ci in 0..g.ops.len() {
        let cat = &g.ops[ci];
        if cat.kind != OpKind::Concat {
            continue;
        }
        let axis = cat.attrs.axis.unwrap_or(1);
        // (input position, tile op index)
        let tile_of = |t: &str| -> Option<usize> {
            let &p = producers.get(t)?;
            let op = &g.ops[p];
            let ok = op.kind == OpKind::Tile
                && g.inputs.contains(&op.inputs[0])
                && consumers.get(op.outputs[0].as_str()).map_or(0, Vec::len) == 1
                && op.attrs.axis.unwrap_or(0) != axis;
            ok.then_some(p)
        };
        let mut best: Option<(usize, usize)> = None;
        let mut start = 0;
        while start < cat.inputs.len() {
            let Some(first) = tile_of(&cat.inputs[start]) else {
                start += 1;
                continue;
            };
            let key = (g.ops[first].attrs.axis.unwrap_or(0), g.ops[first].attrs.reps);
            let mut end = start + 1;
            while end < cat.inputs.len()
                && tile_of(&cat.inputs[end])
                    .is_some_and(|p| (g.ops[p].attrs.axis.unwrap_or(0), g.ops[p].attrs.reps) == key)
            {
                end += 1;
            }
            if end - start >= 2 && best.is_none_or(|(s, e)| end - start > e - s) {
                best = Some((start, end));
            }
            start = end;
        }
        let Some((s, e)) = best else { continue };
        let tiles: Vec<usize> = cat.inputs[s..e].iter().map(|t| tile_of(t).unwrap()).collect();
        let tile_attrs = g.ops[tiles[0]].attrs.clone();
        let raw: Vec<String> = tiles.iter().map(|&p| g.ops[p].inputs[0].clone()).collect();
        let id = format!("{}.bcast", cat.id);
        let host_cat = OpNode::new(format!("{id}_concat"), OpKind::Concat, raw, vec![format!("{id}_concat.y")])
            .with_attrs(OpAttrs {
                axis: Some(axis),
                ..Default::default()
            })
            .host_only();
        let tile = OpNode::new(
            format!("{id}_tile"),
            OpKind::Tile,
            vec![format!("{id}_concat.y")],
            vec![format!("{id}_tile.y")],
        )
        .with_attrs(tile_attrs);
        let removed: Vec<String> = tiles.iter().map(|&p| g.ops[p].id.clone()).collect();
        for &p in &tiles {
            out.tensors.remove(&g.ops[p].outputs[0]);
        }
        out.ops.retain(|op| !removed.contains(&op.id));
        let cat_pos = out.ops.iter().position(|op| op.id == cat.id).expect("concat kept");
        let new_cat = &mut out.ops[cat_pos];
        new_cat.inputs.splice(s..e, [format!("{id}_tile.y")]);
        out.ops.insert(cat_pos, tile);
        out.ops.insert(cat_pos, host_cat);
        rewrites += 1;
    }
    if rewrites == 0 {
        return Ok((out, 0));
    }
    Ok((infer_shapes(&out)?, rewrites))
}

/// Splits a graph into alternating host and device phases.
///
/// After the broadcast rewrite, each op's phase is the latest phase of its
/// producers, advanced by one whenever it switches between host and device.
/// Device phases are the maximal device-supported subgraphs; host phases
/// before the first and after the last device phase are staging
/// (`host_pre`, `host_post`), the others `host_mid`. Zero-flop layout ops
/// whose only consumers are on the device move to the device when that
/// shrinks the bytes crossing the cut.
pub fn split_host_device(g: &ComputeGraph) -> Result<HostDeviceSplit> {
    let (g, broadcast_rewrites) = fold_broadcasts(g)?;
    let order = g.topo_order()?;
    let preds = g.predecessors();
    let succ = g.successors();
    let mut on_device: Vec<bool> = g.ops.iter().map(|op| op.device_supported).collect();

    // Weightless device ops on the cut shrink it by running on the host
    // whenever they produce fewer bytes than they consume.
    let bytes = |names: &[String]| -> u64 {
        names
            .iter()
            .filter(|t| !g.is_weight(t))
            .filter_map(|t| g.tensors.get(t))
            .map(|s| s.bytes())
            .sum()
    };
    let weightless = |i: usize| g.op_weights(&g.ops[i]).next().is_none();
    for &i in &order {
        let op = &g.ops[i];
        if on_device[i] && weightless(i) && preds[i].iter().all(|&p| !on_device[p]) && bytes(&op.outputs) < bytes(&op.inputs) {
            on_device[i] = false;
        }
    }
    for &i in order.iter().rev() {
        let op = &g.ops[i];
        if on_device[i] && weightless(i) && succ[i].iter().all(|&s| !on_device[s]) && bytes(&op.inputs) < bytes(&op.outputs) {
            on_device[i] = false;
        }
    }
    let mut phase = vec![0usize; g.ops.len()];
    for &i in &order {
        let dev = on_device[i];
        let base = usize::from(dev);
        phase[i] = preds[i]
            .iter()
            .map(|&p| {
                let q = phase[p];
                if (q % 2 == 1) == dev {
                    q
                } else {
                    q + 1
                }
            })
            .max()
            .unwrap_or(base)
            .max(base);
    }

    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for &i in &order {
        groups.entry(phase[i]).or_default().push(g.ops[i].id.clone());
    }
    let last_device = groups.keys().filter(|p| *p % 2 == 1).max().copied();
    let segments = groups
        .into_iter()
        .map(|(p, ops)| {
            let role = match (p % 2 == 1, last_device) {
                (true, _) => Role::Device,
                (false, None) => Role::HostPre,
                (false, Some(_)) if p == 0 => Role::HostPre,
                (false, Some(d)) if p > d => Role::HostPost,
                (false, Some(_)) => Role::HostMid,
            };
            Segment { role, ops }
        })
        .collect();
    if g.ops.is_empty() {
        return Err(PartitionError::EmptyGraph);
    }
    Ok(HostDeviceSplit {
        host_only: last_device.is_none(),
        graph: g,
        segments,
        broadcast_rewrites,
    })
}
