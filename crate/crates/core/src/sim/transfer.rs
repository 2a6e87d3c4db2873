use serde::{Deserialize, Serialize};

use super::{Result, SimError};
use crate::graph::{ComputeGraph, OpKind, Variability};
use crate::hardware::HardwareConfig;
use crate::partition::{ExecutionPlan, PlanEdge, Role};

/// How many bytes an edge carries for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EdgeBytes {
    /// The compiled tensor size, always.
    Static { bytes: u64 },
    /// Only the indices actually used by the SLS op `site`.
    PerIndex { site: String, bytes_per_index: u64 },
    /// Only the rows of items actually present: `bytes` scaled by the
    /// filled fraction of the compiled batch.
    ItemScaled { bytes: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Producer and consumer share a device; nothing crosses the switch.
    Local,
    HostToCard,
    CardToHost,
    /// Card to card through the switch (one traversal).
    P2p,
    /// Card to host, then host to card (two traversals).
    HostMediated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    /// Each edge is its own transaction.
    PerEdge,
    /// Edges leaving a device together toward the same device share one
    /// transaction.
    CommandBatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEdge {
    pub edge: PlanEdge,
    pub bytes: EdgeBytes,
    /// Compiled size, for comparison with the partial formula.
    pub static_bytes: u64,
    /// Route between distinct devices; resolved to `Local` at run time when
    /// both ends land on the same card.
    pub route: Route,
    pub batching: Batching,
    /// A sparse-partition output feeding a dense partition.
    pub sparse_to_dense: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub edges: Vec<TransferEdge>,
}

/// Which interconnect optimizations are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferOptions {
    pub partial_tensors: bool,
    pub command_batching: bool,
}

impl Default for TransferOptions {
    fn default() -> Self {
        Self {
            partial_tensors: true,
            command_batching: true,
        }
    }
}

/// Byte formula of `tensor` on an edge. SLS index inputs scale with the
/// indices used; SLS lengths and pooled outputs scale with items present.
pub(crate) fn edge_bytes(g: &ComputeGraph, tensor: &str, partial: bool) -> Result<(EdgeBytes, u64)> {
    let spec = g
        .tensors
        .get(tensor)
        .ok_or_else(|| SimError::Invalid(format!("edge tensor {tensor} missing from graph")))?;
    let full = spec.dtype.tensor_bytes(&spec.compiled_shape());
    let stat = EdgeBytes::Static { bytes: full };
    if !partial {
        return Ok((stat, full));
    }
    for op in g.ops.iter().filter(|o| o.kind == OpKind::SLS) {
        if op.inputs.get(1).map(String::as_str) == Some(tensor) {
            let elem = spec.dtype.tensor_bytes(&[1]);
            return Ok((
                EdgeBytes::PerIndex {
                    site: op.id.clone(),
                    bytes_per_index: elem,
                },
                full,
            ));
        }
        if op.inputs.get(2).map(String::as_str) == Some(tensor) || op.outputs.iter().any(|o| o == tensor) {
            return Ok((EdgeBytes::ItemScaled { bytes: full }, full));
        }
    }
    if let Variability::Variable { .. } = spec.variability {
        return Ok((EdgeBytes::ItemScaled { bytes: full }, full));
    }
    Ok((stat, full))
}

/// Derives the transfer treatment of every cross-partition edge of a plan.
pub fn plan_transfers(plan: &ExecutionPlan, hw: &HardwareConfig) -> Result<TransferPlan> {
    plan_transfers_with(plan, hw, TransferOptions::default())
}

pub fn plan_transfers_with(plan: &ExecutionPlan, hw: &HardwareConfig, opts: TransferOptions) -> Result<TransferPlan> {
    let batching = if opts.command_batching {
        Batching::CommandBatched
    } else {
        Batching::PerEdge
    };
    let on_host = |p: Option<usize>| p.is_none_or(|p| plan.partitions[p].on_host());
    let mut edges = Vec::new();
    for edge in plan.edges() {
        let (bytes, static_bytes) = edge_bytes(&plan.graph, &edge.tensor, opts.partial_tensors)?;
        let route = match (on_host(edge.src), on_host(edge.dst)) {
            (true, true) => Route::Local,
            (true, false) => Route::HostToCard,
            (false, true) => Route::CardToHost,
            (false, false) if hw.p2p_enabled => Route::P2p,
            (false, false) => Route::HostMediated,
        };
        let role = |p: Option<usize>| p.map(|p| plan.partitions[p].role);
        let sparse_to_dense = role(edge.src) == Some(Role::Sparse) && role(edge.dst) == Some(Role::Dense);
        edges.push(TransferEdge {
            edge,
            bytes,
            static_bytes,
            route,
            batching,
            sparse_to_dense,
        });
    }
    Ok(TransferPlan { edges })
}

/// Transaction sizes for one window of same-direction transfers.
pub fn merge_window(sizes: &[u64], batching: Batching) -> Vec<u64> {
    match batching {
        Batching::PerEdge => sizes.to_vec(),
        Batching::CommandBatched if sizes.is_empty() => Vec::new(),
        Batching::CommandBatched => vec![sizes.iter().sum()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DType, OpAttrs, OpNode, TensorSpec};

    fn sls_graph() -> ComputeGraph {
        let mut g = ComputeGraph::new();
        g.add_weight(TensorSpec::new("t", vec![100, 8], DType::Fp16));
        let mut idx = TensorSpec::new("idx", vec![1000], DType::Int32);
        idx.variability = Variability::Variable { max_extent: vec![1000] };
        g.add_input(idx);
        g.add_input(TensorSpec::new("len", vec![10], DType::Int32));
        g.add_op(
            OpNode::new("sls", OpKind::SLS, vec!["t".into(), "idx".into(), "len".into()], vec!["y".into()])
                .with_attrs(OpAttrs {
                    max_lookups: Some(100),
                    ..Default::default()
                }),
        );
        crate::graph::infer_shapes(&g).unwrap()
    }

    #[test]
    fn index_edges_are_partial() {
        let g = sls_graph();
        let (b, full) = edge_bytes(&g, "idx", true).unwrap();
        assert_eq!(full, 4000);
        assert_eq!(
            b,
            EdgeBytes::PerIndex {
                site: "sls".into(),
                bytes_per_index: 4
            }
        );
        // 100 of 1000 indices used
        let EdgeBytes::PerIndex { bytes_per_index, .. } = b else { unreachable!() };
        assert_eq!(100 * bytes_per_index, 400);
        assert_eq!(edge_bytes(&g, "idx", false).unwrap().0, EdgeBytes::Static { bytes: 4000 });
        assert_eq!(edge_bytes(&g, "y", true).unwrap().0, EdgeBytes::ItemScaled { bytes: 160 });
        assert_eq!(edge_bytes(&g, "len", true).unwrap().0, EdgeBytes::ItemScaled { bytes: 40 });
    }

    #[test]
    fn window_merging() {
        let sizes = vec![64u64; 50];
        assert_eq!(merge_window(&sizes, Batching::CommandBatched), vec![3200]);
        assert_eq!(merge_window(&sizes, Batching::PerEdge).len(), 50);
        assert!(merge_window(&[], Batching::CommandBatched).is_empty());
    }
}
