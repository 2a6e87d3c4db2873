use serde::{Deserialize, Serialize};

use super::shape::effective_input_shape;
use super::{ComputeGraph, GraphError, OpKind, OpNode, Result};

/// Bytes one op reads or writes for a single tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorTraffic {
    pub tensor: String,
    pub bytes: f64,
    pub weight: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostStats {
    pub flops: f64,
    pub bytes_moved: f64,
    pub arithmetic_intensity: f64,
}

impl CostStats {
    fn new(flops: f64, bytes_moved: f64) -> Self {
        let arithmetic_intensity = if bytes_moved > 0.0 { flops / bytes_moved } else { 0.0 };
        Self {
            flops,
            bytes_moved,
            arithmetic_intensity,
        }
    }
}

fn elems(shape: &[usize]) -> f64 {
    shape.iter().map(|&d| d as f64).product()
}

fn output_spec_shape(g: &ComputeGraph, op: &OpNode, i: usize) -> Result<Vec<usize>> {
    let name = &op.outputs[i];
    g.tensors
        .get(name)
        .map(|s| s.shape.clone())
        .ok_or_else(|| GraphError::UnresolvedShape {
            op: op.id.clone(),
            tensor: name.clone(),
        })
}

/// Lookups per pooled row the cost model assumes for an SLS op.
pub fn sls_lookups(op: &OpNode) -> f64 {
    op.attrs
        .avg_lookups
        .unwrap_or(op.attrs.max_lookups.unwrap_or(1) as f64)
}

/// Per-tensor traffic of an op. `lookups` overrides the SLS lookup count
/// (runtime-actual sizes in simulation). An in-place Concat moves nothing.
pub fn op_traffic(g: &ComputeGraph, op: &OpNode, lookups: Option<f64>) -> Result<Vec<TensorTraffic>> {
    let mut traffic = Vec::new();
    if op.kind == OpKind::SLS {
        let table = g.tensors.get(&op.inputs[0]).ok_or_else(|| GraphError::UnresolvedShape {
            op: op.id.clone(),
            tensor: op.inputs[0].clone(),
        })?;
        let out = output_spec_shape(g, op, 0)?;
        let batch = out[0] as f64;
        let dim = table.shape.get(1).copied().unwrap_or(1);
        let rows_read = lookups.unwrap_or_else(|| sls_lookups(op)) * batch;
        traffic.push(TensorTraffic {
            tensor: table.name.clone(),
            bytes: rows_read * table.dtype.row_bytes(dim) as f64,
            weight: g.is_weight(&table.name),
        });
        let out_spec = &g.tensors[&op.outputs[0]];
        traffic.push(TensorTraffic {
            tensor: out_spec.name.clone(),
            bytes: out_spec.bytes() as f64,
            weight: false,
        });
        return Ok(traffic);
    }
    if op.attrs.in_place {
        return Ok(traffic);
    }
    for (i, name) in op.inputs.iter().enumerate() {
        let shape = effective_input_shape(g, op, i)?;
        let dtype = g.tensors[name].dtype;
        traffic.push(TensorTraffic {
            tensor: name.clone(),
            bytes: dtype.tensor_bytes(&shape) as f64,
            weight: g.is_weight(name),
        });
    }
    for (i, name) in op.outputs.iter().enumerate() {
        let shape = output_spec_shape(g, op, i)?;
        let dtype = g.tensors[name].dtype;
        traffic.push(TensorTraffic {
            tensor: name.clone(),
            bytes: dtype.tensor_bytes(&shape) as f64,
            weight: false,
        });
    }
    Ok(traffic)
}

pub(crate) fn op_flops(g: &ComputeGraph, op: &OpNode, lookups: Option<f64>) -> Result<f64> {
    if op.outputs.is_empty() {
        return Ok(0.0);
    }
    let out = output_spec_shape(g, op, 0)?;
    let input = |i: usize| effective_input_shape(g, op, i);
    let flops = match op.kind {
        OpKind::FC | OpKind::MatMul => {
            let x = input(0)?;
            let k = *x.last().unwrap_or(&0) as f64;
            2.0 * elems(&out) * k
        }
        OpKind::BatchMatMul => match op.attrs.interaction {
            Some(f) => {
                let x = input(0)?;
                let d = (x[1] / f) as f64;
                2.0 * x[0] as f64 * (f * f) as f64 * d
            }
            None => {
                let a = input(0)?;
                2.0 * elems(&out) * a[2] as f64
            }
        },
        OpKind::Conv | OpKind::Conv3D => {
            let w = input(1)?;
            // (Cin / groups) x kernel volume MACs per output element
            let per_out: f64 = w[1..].iter().map(|&d| d as f64).product();
            2.0 * elems(&out) * per_out
        }
        OpKind::SLS => {
            let lookups = lookups.unwrap_or_else(|| sls_lookups(op));
            lookups * elems(&out)
        }
        OpKind::Add | OpKind::Mul | OpKind::Quantize | OpKind::Dequantize | OpKind::ConvertTo => elems(&out),
        OpKind::Gelu => 8.0 * elems(&out),
        OpKind::Softmax | OpKind::LayerNorm => 5.0 * elems(&out),
        OpKind::Pool => elems(&input(0)?),
        OpKind::Concat | OpKind::Tile | OpKind::Transpose => 0.0,
        OpKind::RoiAlignLike | OpKind::HostDecode | OpKind::Custom => op.attrs.flops.unwrap_or(0) as f64,
    };
    Ok(flops)
}

/// Flops, bytes moved and arithmetic intensity of one op at its tensors' dtypes.
///
/// Bytes are weights + input activations + output activations, except SLS,
/// which moves only the pooled rows it reads plus its output. An op with no
/// traffic reports an intensity of 0.
pub fn op_cost_stats(g: &ComputeGraph, op: &OpNode) -> Result<CostStats> {
    op_cost_stats_with_lookups(g, op, None)
}

pub fn op_cost_stats_with_lookups(g: &ComputeGraph, op: &OpNode, lookups: Option<f64>) -> Result<CostStats> {
    let flops = op_flops(g, op, lookups)?;
    let bytes = match (op.kind, op.attrs.bytes) {
        (OpKind::Custom | OpKind::RoiAlignLike | OpKind::HostDecode, Some(b)) => b as f64,
        _ => op_traffic(g, op, lookups)?.iter().map(|t| t.bytes).sum(),
    };
    Ok(CostStats::new(flops, bytes))
}

/// Whole-graph totals in the units used to describe model families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTotals {
    pub mparams: f64,
    pub gflops: f64,
    /// Over every op.
    pub arithmetic_intensity: f64,
    /// Over weight-bearing dense compute ops (FC, MatMul, Conv, Conv3D).
    pub dense_arithmetic_intensity: f64,
    pub weight_bytes: u64,
}

impl WorkloadTotals {
    pub fn of(g: &ComputeGraph) -> Result<Self> {
        let mut flops = 0.0;
        let mut bytes = 0.0;
        let mut dense_flops = 0.0;
        let mut dense_bytes = 0.0;
        for op in &g.ops {
            let s = op_cost_stats(g, op)?;
            flops += s.flops;
            bytes += s.bytes_moved;
            if op.kind.is_dense_compute() && op.inputs.iter().any(|t| g.is_weight(t)) {
                dense_flops += s.flops;
                dense_bytes += s.bytes_moved;
            }
        }
        let params: f64 = g
            .weights
            .keys()
            .filter_map(|w| g.tensors.get(w))
            .map(|s| s.elements() as f64)
            .sum();
        let ratio = |f: f64, b: f64| if b > 0.0 { f / b } else { 0.0 };
        Ok(Self {
            mparams: params / 1e6,
            gflops: flops / 1e9,
            arithmetic_intensity: ratio(flops, bytes),
            dense_arithmetic_intensity: ratio(dense_flops, dense_bytes),
            weight_bytes: g.total_weight_bytes(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, DType, OpAttrs, TensorSpec};

    fn fc(b: usize, k: usize, n: usize, dtype: DType) -> ComputeGraph {
        let mut g = ComputeGraph::new();
        g.add_input(TensorSpec::new("x", vec![b, k], dtype));
        g.add_weight(TensorSpec::new("w", vec![k, n], dtype));
        g.add_op(OpNode::new("fc", OpKind::FC, vec!["x".into(), "w".into()], vec!["y".into()]));
        infer_shapes(&g).unwrap()
    }

    #[test]
    fn fc_fp16_hand_arithmetic() {
        let g = fc(64, 256, 256, DType::Fp16);
        let s = op_cost_stats(&g, &g.ops[0]).unwrap();
        assert_eq!(s.flops, 8_388_608.0);
        assert_eq!(s.bytes_moved, 131_072.0 + 32_768.0 + 32_768.0);
        assert!((s.arithmetic_intensity - 42.6667).abs() < 1e-3);
    }

    #[test]
    fn transformer_matmul_intensity_tracks_tokens() {
        // [T, H] x [H, 4H] at fp16 and batch 1: intensity ~ T when H >> T
        for t in [32usize, 64] {
            let mut g = ComputeGraph::new();
            g.add_input(TensorSpec::new("x", vec![t, 1024], DType::Fp16));
            g.add_weight(TensorSpec::new("w", vec![1024, 4096], DType::Fp16));
            g.add_op(OpNode::new("mm", OpKind::MatMul, vec!["x".into(), "w".into()], vec!["y".into()]));
            let g = infer_shapes(&g).unwrap();
            let s = op_cost_stats(&g, &g.ops[0]).unwrap();
            let rel = (s.arithmetic_intensity - t as f64).abs() / t as f64;
            assert!(rel < 0.1, "T={t} AI={}", s.arithmetic_intensity);
        }
    }

    #[test]
    fn empty_op_has_zero_intensity() {
        let mut g = ComputeGraph::new();
        g.add_op(OpNode::new("nop", OpKind::Custom, vec![], vec![]));
        let s = op_cost_stats(&g, &g.ops[0]).unwrap();
        assert_eq!((s.flops, s.bytes_moved, s.arithmetic_intensity), (0.0, 0.0, 0.0));
    }

    #[test]
    fn int8_halves_weight_bytes_keeps_flops() {
        let a = fc(64, 256, 256, DType::Fp16);
        let mut b = a.clone();
        b.set_weight_dtype("w", DType::Int8);
        let ta = op_traffic(&a, &a.ops[0], None).unwrap();
        let tb = op_traffic(&b, &b.ops[0], None).unwrap();
        assert_eq!(ta[1].bytes, 2.0 * tb[1].bytes);
        assert_eq!(
            op_cost_stats(&a, &a.ops[0]).unwrap().flops,
            op_cost_stats(&b, &b.ops[0]).unwrap().flops
        );
    }

    #[test]
    fn sls_counts_pooled_rows() {
        let mut g = ComputeGraph::new();
        g.add_weight(TensorSpec::new("t", vec![1000, 64], DType::Fp16));
        g.add_input(TensorSpec::new("i", vec![320], DType::Int32));
        g.add_input(TensorSpec::new("l", vec![32], DType::Int32));
        g.add_op(
            OpNode::new("s", OpKind::SLS, vec!["t".into(), "i".into(), "l".into()], vec!["p".into()]).with_attrs(
                OpAttrs {
                    max_lookups: Some(10),
                    avg_lookups: Some(4.0),
                    ..Default::default()
                },
            ),
        );
        let g = infer_shapes(&g).unwrap();
        let s = op_cost_stats(&g, &g.ops[0]).unwrap();
        assert_eq!(s.flops, 4.0 * 32.0 * 64.0);
        assert_eq!(s.bytes_moved, 4.0 * 32.0 * 128.0 + 32.0 * 64.0 * 2.0);
    }
}
