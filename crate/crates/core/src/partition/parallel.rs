use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::Result;
use crate::graph::{resolve_outputs, ComputeGraph, InputSlice, OpAttrs, OpKind, OpNode};

/// Smallest chunk an op is split into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinChunk {
    /// Rows along a batch-like dimension.
    pub rows: usize,
    /// Output channels.
    pub channels: usize,
}

impl Default for MinChunk {
    fn default() -> Self {
        Self { rows: 8, channels: 32 }
    }
}

/// Result of op splitting: the rewritten graph and, per split op, the ids
/// that replaced it (the parts followed by the joining Concat).
#[derive(Debug, Clone, PartialEq)]
pub struct Parallelized {
    pub graph: ComputeGraph,
    pub replaced: BTreeMap<String, Vec<String>>,
}

struct Split {
    /// (input position, axis sliced on that input)
    slices: Vec<(usize, usize)>,
    out_axis: usize,
    extent: usize,
    parts: usize,
    channel_split: bool,
}

fn pick(extent: usize, needed: usize, min: usize) -> usize {
    needed.min(extent / min.max(1))
}

fn plan_split(g: &ComputeGraph, op: &OpNode, needed: usize, min: MinChunk) -> Option<Split> {
    if op.outputs.len() != 1 || !op.attrs.input_slices.is_empty() || !op.device_supported {
        return None;
    }
    let out = &g.tensors.get(&op.outputs[0])?.shape;
    let rank = out.len();
    let batch = *out.first()?;
    let by_batch = |slices: Vec<(usize, usize)>, min_rows: usize| Split {
        slices,
        out_axis: 0,
        extent: batch,
        parts: pick(batch, needed, min_rows),
        channel_split: false,
    };
    let split = match op.kind {
        OpKind::FC | OpKind::MatMul | OpKind::Conv | OpKind::Conv3D => {
            // every batch chunk re-reads the weights and every channel
            // chunk re-reads the input, so FCs duplicate the smaller one
            let bytes = |i: usize| {
                op.inputs
                    .get(i)
                    .and_then(|t| g.tensors.get(t))
                    .map_or(0, |s| s.dtype.tensor_bytes(&s.shape))
            };
            let conv = matches!(op.kind, OpKind::Conv | OpKind::Conv3D);
            let weight_heavy = !conv && bytes(1) > bytes(0) && out[rank - 1] >= 2 * min.channels;
            if batch >= needed * min.rows && !weight_heavy {
                by_batch(vec![(0, 0)], min.rows)
            } else {
                if conv && op.attrs.groups.unwrap_or(1) != 1 {
                    return None;
                }
                let (w_axis, out_axis) = if conv { (0, 1) } else { (1, rank - 1) };
                let channels = out[out_axis];
                Split {
                    slices: vec![(1, w_axis)],
                    out_axis,
                    extent: channels,
                    parts: pick(channels, needed, min.channels),
                    channel_split: true,
                }
            }
        }
        OpKind::BatchMatMul if op.attrs.interaction.is_some() => by_batch(vec![(0, 0)], min.rows),
        // each leading index is a whole matrix
        OpKind::BatchMatMul => by_batch(vec![(0, 0), (1, 0)], 1),
        k if k.is_elementwise() => {
            let slices = op
                .inputs
                .iter()
                .enumerate()
                .filter(|(_, t)| g.tensors.get(t.as_str()).is_some_and(|s| s.shape.len() == rank && s.shape[0] == batch))
                .map(|(i, _)| (i, 0))
                .collect();
            by_batch(slices, if rank >= 3 { 1 } else { min.rows })
        }
        _ => return None,
    };
    (split.parts >= 2).then_some(split)
}

/// Even chunks with the remainder going to the first ones.
pub(crate) fn even_chunks(extent: usize, parts: usize) -> Vec<(usize, usize)> {
    let (q, r) = (extent / parts, extent % parts);
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = q + usize::from(i < r);
            let s = (start, len);
            start += len;
            s
        })
        .collect()
}

/// Splits FC/MatMul/Conv ops and elementwise ops across cores. See
/// [`parallelize_subset`].
pub fn parallelize_ops(g: &ComputeGraph, cores_available: usize, min_chunk: MinChunk) -> Result<ComputeGraph> {
    Ok(parallelize_subset(g, None, cores_available, min_chunk)?.graph)
}

/// Splits the device ops of `only` (all ops when `None`) that lack enough
/// graph-level parallelism. Ops at the same depth are peers; an op with `p`
/// peers needs `ceil(cores / p)` chunks. Dense ops split along the batch when
/// it holds that many chunks of `min_chunk.rows`, else along output channels;
/// FCs whose weights outweigh their input split along channels regardless;
/// elementwise ops split along their outermost dimension. Parts read their
/// share of the inputs through input slices and a Concat joins them back
/// into the original output tensor, so shapes and total flops are unchanged.
pub fn parallelize_subset(
    g: &ComputeGraph,
    only: Option<&BTreeSet<String>>,
    cores_available: usize,
    min_chunk: MinChunk,
) -> Result<Parallelized> {
    let order = g.topo_order()?;
    let preds = g.predecessors();
    let member = |i: usize| only.is_none_or(|s| s.contains(&g.ops[i].id)) && g.ops[i].device_supported;
    let mut depth = vec![0usize; g.ops.len()];
    for &i in &order {
        depth[i] = preds[i].iter().filter(|&&p| member(p)).map(|&p| depth[p] + 1).max().unwrap_or(0);
    }
    let mut peers: BTreeMap<usize, usize> = BTreeMap::new();
    for i in (0..g.ops.len()).filter(|&i| member(i)) {
        *peers.entry(depth[i]).or_default() += 1;
    }

    let mut plans: BTreeMap<usize, Split> = BTreeMap::new();
    for i in (0..g.ops.len()).filter(|&i| member(i)) {
        let needed = cores_available.div_ceil(peers[&depth[i]]);
        if needed < 2 {
            continue;
        }
        if let Some(s) = plan_split(g, &g.ops[i], needed, min_chunk) {
            plans.insert(i, s);
        }
    }

    let mut out = g.clone();
    out.ops.clear();
    let mut replaced = BTreeMap::new();
    let mut fresh = Vec::new();
    for (i, op) in g.ops.iter().enumerate() {
        let Some(split) = plans.get(&i) else {
            out.ops.push(op.clone());
            continue;
        };
        let y = &op.outputs[0];
        let mut ids = Vec::new();
        let mut parts = Vec::new();
        for (p, (start, len)) in even_chunks(split.extent, split.parts).into_iter().enumerate() {
            let mut attrs = op.attrs.clone();
            attrs.input_slices = split
                .slices
                .iter()
                .map(|&(input, axis)| InputSlice { input, axis, start, len })
                .collect();
            if split.channel_split && attrs.out_features.is_some() {
                attrs.out_features = Some(len);
            }
            let mut part = OpNode::new(format!("{}.p{p}", op.id), op.kind, op.inputs.clone(), vec![format!("{y}.part{p}")])
                .with_attrs(attrs);
            part.device_supported = op.device_supported;
            parts.push(part.outputs[0].clone());
            ids.push(part.id.clone());
            fresh.push(out.ops.len());
            out.ops.push(part);
        }
        let join = OpNode::new(format!("{}.join", op.id), OpKind::Concat, parts, vec![y.clone()]).with_attrs(OpAttrs {
            axis: Some(split.out_axis),
            in_place: true,
            ..Default::default()
        });
        ids.push(join.id.clone());
        out.ops.push(join);
        replaced.insert(op.id.clone(), ids);
    }
    for i in fresh {
        resolve_outputs(&mut out, i)?;
    }
    Ok(Parallelized { graph: out, replaced })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, op_cost_stats, validate_graph, DType, TensorSpec};

    fn fc(batch: usize, k: usize, n: usize) -> ComputeGraph {
        let mut g = ComputeGraph::new();
        g.add_input(TensorSpec::new("x", vec![batch, k], DType::Fp16));
        g.add_weight(TensorSpec::new("w", vec![k, n], DType::Fp16));
        g.add_op(OpNode::new("fc", OpKind::FC, vec!["x".into(), "w".into()], vec!["y".into()]));
        g.outputs.push("y".into());
        infer_shapes(&g).unwrap()
    }

    fn flops(g: &ComputeGraph) -> f64 {
        g.ops.iter().map(|o| op_cost_stats(g, o).unwrap().flops).sum()
    }

    fn part_shapes(g: &ComputeGraph) -> Vec<Vec<usize>> {
        g.ops
            .iter()
            .filter(|o| o.kind == OpKind::FC)
            .map(|o| g.tensors[&o.outputs[0]].shape.clone())
            .collect()
    }

    #[test]
    fn batch_split() {
        let g = fc(256, 128, 128);
        let p = parallelize_ops(&g, 4, MinChunk::default()).unwrap();
        assert_eq!(part_shapes(&p), vec![vec![64, 128]; 4]);
        assert_eq!(p.op("fc.join").unwrap().kind, OpKind::Concat);
        assert_eq!(p.tensors["y"].shape, vec![256, 128]);
        assert_eq!(validate_graph(&p), Ok(()));
        assert_eq!(flops(&p), flops(&g));
    }

    #[test]
    fn column_split_when_batch_is_small() {
        let g = fc(1, 128, 256);
        let p = parallelize_ops(&g, 4, MinChunk::default()).unwrap();
        assert_eq!(part_shapes(&p), vec![vec![1, 64]; 4]);
        assert_eq!(p.tensors["y"].shape, vec![1, 256]);
        assert_eq!(validate_graph(&p), Ok(()));
        assert_eq!(flops(&p), flops(&g));
    }

    #[test]
    fn weight_heavy_fc_splits_columns() {
        // 64x128 input, 128x128 weights: re-reading the input is cheaper
        let g = fc(64, 128, 128);
        let p = parallelize_ops(&g, 4, MinChunk::default()).unwrap();
        assert_eq!(part_shapes(&p), vec![vec![64, 32]; 4]);
        assert_eq!(flops(&p), flops(&g));
    }

    #[test]
    fn tiny_op_untouched() {
        let g = fc(4, 16, 16);
        assert_eq!(parallelize_ops(&g, 4, MinChunk::default()).unwrap(), g);
    }

    #[test]
    fn enough_peers_means_no_split() {
        let mut g = ComputeGraph::new();
        g.add_input(TensorSpec::new("x", vec![64, 64], DType::Fp16));
        for i in 0..4 {
            g.add_weight(TensorSpec::new(format!("w{i}"), vec![64, 64], DType::Fp16));
            g.add_op(OpNode::new(format!("fc{i}"), OpKind::FC, vec!["x".into(), format!("w{i}")], vec![format!("y{i}")]));
        }
        let g = infer_shapes(&g).unwrap();
        assert_eq!(parallelize_ops(&g, 4, MinChunk::default()).unwrap(), g);
        // two cores each: 4 x 2 parts
        let p = parallelize_ops(&g, 8, MinChunk::default()).unwrap();
        assert_eq!(p.ops.iter().filter(|o| o.kind == OpKind::FC).count(), 8);
    }

    #[test]
    fn chunks_are_even() {
        assert_eq!(even_chunks(10, 4), vec![(0, 3), (3, 3), (6, 2), (8, 2)]);
    }
}
