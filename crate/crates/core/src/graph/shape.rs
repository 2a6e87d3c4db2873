use super::{ComputeGraph, DType, GraphError, OpKind, OpNode, Result, TensorSpec, Variability};

/// Shape of input `i` as the op sees it, after any input slice.
pub(crate) fn effective_input_shape(g: &ComputeGraph, op: &OpNode, i: usize) -> Result<Vec<usize>> {
    let name = &op.inputs[i];
    let spec = g.tensors.get(name).ok_or_else(|| GraphError::UnresolvedShape {
        op: op.id.clone(),
        tensor: name.clone(),
    })?;
    let mut shape = spec.shape.clone();
    if let Some(s) = op.slice_for(i) {
        let extent = shape.get(s.axis).copied().ok_or_else(|| GraphError::ShapeMismatch {
            op: op.id.clone(),
            detail: format!("slice axis {} out of rank {}", s.axis, shape.len()),
        })?;
        if s.len == 0 || s.start + s.len > extent {
            return Err(GraphError::ShapeMismatch {
                op: op.id.clone(),
                detail: format!("slice {}..{} exceeds extent {extent}", s.start, s.start + s.len),
            });
        }
        shape[s.axis] = s.len;
    }
    Ok(shape)
}

fn mismatch(op: &OpNode, detail: String) -> GraphError {
    GraphError::ShapeMismatch {
        op: op.id.clone(),
        detail,
    }
}

fn need_inputs(op: &OpNode, n: usize) -> Result<()> {
    if op.inputs.len() < n {
        return Err(mismatch(op, format!("expected {n} inputs, got {}", op.inputs.len())));
    }
    Ok(())
}

fn rank(op: &OpNode, shape: &[usize], want: usize, what: &str) -> Result<()> {
    if shape.len() != want {
        return Err(mismatch(op, format!("{what} must be rank {want}, got {shape:?}")));
    }
    Ok(())
}

/// Output shape of a single op given resolved input specs.
pub(crate) fn output_shape(g: &ComputeGraph, op: &OpNode) -> Result<Vec<usize>> {
    let input = |i: usize| effective_input_shape(g, op, i);
    match op.kind {
        OpKind::FC | OpKind::MatMul => {
            need_inputs(op, 2)?;
            let x = input(0)?;
            let w = input(1)?;
            rank(op, &w, 2, "weight")?;
            let k = *x.last().ok_or_else(|| mismatch(op, "empty input shape".into()))?;
            if k != w[0] {
                return Err(mismatch(op, format!("K mismatch {k} vs {}", w[0])));
            }
            if op.kind == OpKind::FC {
                rank(op, &x, 2, "input")?;
                if let Some(inf) = op.attrs.in_features {
                    if inf != k {
                        return Err(mismatch(op, format!("in_features {inf} vs input K {k}")));
                    }
                }
            }
            let mut out = x.clone();
            *out.last_mut().unwrap() = w[1];
            Ok(out)
        }
        OpKind::BatchMatMul => {
            if let Some(f) = op.attrs.interaction {
                need_inputs(op, 1)?;
                let x = input(0)?;
                rank(op, &x, 2, "interaction input")?;
                if f == 0 || x[1] % f != 0 {
                    return Err(mismatch(op, format!("width {} not divisible into {f} features", x[1])));
                }
                return Ok(vec![x[0], f * f]);
            }
            need_inputs(op, 2)?;
            let a = input(0)?;
            let b = input(1)?;
            rank(op, &a, 3, "lhs")?;
            rank(op, &b, 3, "rhs")?;
            if a[0] != b[0] || a[2] != b[1] {
                return Err(mismatch(op, format!("batched dims {a:?} x {b:?}")));
            }
            Ok(vec![a[0], a[1], b[2]])
        }
        OpKind::Conv | OpKind::Conv3D => {
            need_inputs(op, 2)?;
            let x = input(0)?;
            let w = input(1)?;
            let r = if op.kind == OpKind::Conv { 4 } else { 5 };
            rank(op, &x, r, "input")?;
            rank(op, &w, r, "weight")?;
            let groups = op.attrs.groups.unwrap_or(1).max(1);
            if x[1] % groups != 0 || x[1] / groups != w[1] {
                return Err(mismatch(
                    op,
                    format!("input channels {} / groups {groups} vs weight {}", x[1], w[1]),
                ));
            }
            let stride = op.attrs.stride.unwrap_or(1).max(1);
            let mut out = vec![x[0], w[0]];
            let spatial_from = if op.kind == OpKind::Conv3D {
                // temporal axis is never strided
                out.push(x[2]);
                3
            } else {
                2
            };
            for &d in &x[spatial_from..] {
                out.push(d.div_ceil(stride));
            }
            Ok(out)
        }
        OpKind::SLS => {
            need_inputs(op, 3)?;
            let table = input(0)?;
            let lengths = input(2)?;
            rank(op, &table, 2, "table")?;
            rank(op, &lengths, 1, "lengths")?;
            Ok(vec![lengths[0], table[1]])
        }
        OpKind::Quantize
        | OpKind::Dequantize
        | OpKind::ConvertTo
        | OpKind::Gelu
        | OpKind::Softmax
        | OpKind::LayerNorm => {
            need_inputs(op, 1)?;
            input(0)
        }
        OpKind::Add | OpKind::Mul => {
            need_inputs(op, 2)?;
            let a = input(0)?;
            let b = input(1)?;
            // b broadcasts against trailing dims of a
            if b.len() > a.len() || a[a.len() - b.len()..].iter().zip(&b).any(|(&x, &y)| y != x && y != 1) {
                return Err(mismatch(op, format!("cannot broadcast {b:?} onto {a:?}")));
            }
            Ok(a)
        }
        OpKind::Concat => {
            need_inputs(op, 1)?;
            let axis = op.attrs.axis.unwrap_or(1);
            let mut out = input(0)?;
            if axis >= out.len() {
                return Err(mismatch(op, format!("axis {axis} out of rank {}", out.len())));
            }
            for i in 1..op.inputs.len() {
                let s = input(i)?;
                if s.len() != out.len() || s.iter().enumerate().any(|(d, &e)| d != axis && e != out[d]) {
                    return Err(mismatch(op, format!("concat operand {s:?} vs {out:?}")));
                }
                out[axis] += s[axis];
            }
            Ok(out)
        }
        OpKind::Tile => {
            need_inputs(op, 1)?;
            let axis = op.attrs.axis.unwrap_or(0);
            let reps = op.attrs.reps.ok_or(GraphError::MissingAttr {
                op: op.id.clone(),
                attr: "reps",
            })?;
            let mut out = input(0)?;
            if axis >= out.len() {
                return Err(mismatch(op, format!("axis {axis} out of rank {}", out.len())));
            }
            out[axis] *= reps;
            Ok(out)
        }
        OpKind::Transpose => {
            need_inputs(op, 1)?;
            let x = input(0)?;
            // an explicit out_shape makes this a layout change (reshape + permute)
            if let Some(shape) = &op.attrs.out_shape {
                let n: usize = x.iter().product();
                if shape.iter().product::<usize>() != n {
                    return Err(mismatch(op, format!("cannot lay out {x:?} as {shape:?}")));
                }
                return Ok(shape.clone());
            }
            let perm = op
                .attrs
                .perm
                .clone()
                .unwrap_or_else(|| (0..x.len()).rev().collect());
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            if sorted != (0..x.len()).collect::<Vec<_>>() {
                return Err(mismatch(op, format!("bad permutation {perm:?}")));
            }
            Ok(perm.iter().map(|&p| x[p]).collect())
        }
        OpKind::Pool => {
            need_inputs(op, 1)?;
            let x = input(0)?;
            if x.len() < 3 {
                return Err(mismatch(op, format!("pool input must have spatial dims, got {x:?}")));
            }
            match op.attrs.stride {
                // global pooling flattens to [N, C]
                None => Ok(vec![x[0], x[1]]),
                Some(s) => {
                    let mut out = x.clone();
                    let from = if x.len() == 5 { 3 } else { 2 };
                    out[from..].iter_mut().for_each(|d| *d = d.div_ceil(s.max(1)));
                    Ok(out)
                }
            }
        }
        OpKind::RoiAlignLike | OpKind::HostDecode | OpKind::Custom => {
            op.attrs.out_shape.clone().ok_or(GraphError::MissingAttr {
                op: op.id.clone(),
                attr: "out_shape",
            })
        }
    }
}

/// Output dtype of an op. An explicit `out_dtype` attribute wins.
pub(crate) fn output_dtype(g: &ComputeGraph, op: &OpNode) -> DType {
    if let Some(d) = op.attrs.out_dtype {
        return d;
    }
    let dtype_of = |i: usize| op.inputs.get(i).and_then(|t| g.tensors.get(t)).map(|s| s.dtype);
    match op.kind {
        OpKind::Quantize => DType::Int8,
        OpKind::Dequantize => DType::Fp32,
        OpKind::SLS => match dtype_of(0) {
            Some(DType::Fp32) | None => DType::Fp32,
            _ => DType::Fp16,
        },
        _ => dtype_of(0).unwrap_or(DType::Fp32),
    }
}

/// Resolves every intermediate tensor spec from graph inputs and weights.
///
/// Graph inputs with variable extents compile at their maximum. Running the
/// pass twice yields identical specs.
pub fn infer_shapes(g: &ComputeGraph) -> Result<ComputeGraph> {
    let mut out = g.clone();
    for name in &g.inputs {
        if let Some(spec) = out.tensors.get_mut(name) {
            if let Variability::Variable { max_extent } = &spec.variability {
                spec.shape = max_extent.clone();
            }
        }
    }
    for i in g.topo_order()? {
        resolve_outputs(&mut out, i)?;
    }
    Ok(out)
}

/// Writes the output specs of op `i`, keeping any declared variability.
pub(crate) fn resolve_outputs(g: &mut ComputeGraph, i: usize) -> Result<()> {
    let op = &g.ops[i];
    let shape = output_shape(g, op)?;
    let dtype = output_dtype(g, op);
    let outputs = op.outputs.clone();
    for name in outputs {
        let variability = g.tensors.get(&name).map(|s| s.variability.clone()).unwrap_or_default();
        g.tensors.insert(
            name.clone(),
            TensorSpec {
                name,
                shape: shape.clone(),
                dtype,
                variability,
            },
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::OpAttrs;

    fn fc_graph(x: Vec<usize>, w: Vec<usize>) -> ComputeGraph {
        let mut g = ComputeGraph::new();
        g.add_input(TensorSpec::new("x", x, DType::Fp16));
        g.add_weight(TensorSpec::new("w", w, DType::Fp16));
        g.add_op(OpNode::new("fc", OpKind::FC, vec!["x".into(), "w".into()], vec!["y".into()]));
        g.outputs.push("y".into());
        g
    }

    #[test]
    fn fc_matrix_product_rule() {
        let g = infer_shapes(&fc_graph(vec![64, 256], vec![256, 128])).unwrap();
        assert_eq!(g.tensors["y"].shape, vec![64, 128]);
    }

    #[test]
    fn fc_k_mismatch_names_dims() {
        let err = infer_shapes(&fc_graph(vec![64, 256], vec![200, 128])).unwrap_err();
        assert!(err.to_string().contains("K mismatch 256 vs 200"), "{err}");
        assert!(err.to_string().contains("fc"));
    }

    #[test]
    fn sls_pools_one_row_per_batch_element() {
        let mut g = ComputeGraph::new();
        g.add_weight(TensorSpec::new("table", vec![1000, 64], DType::Fp32));
        g.add_input(TensorSpec::new("idx", vec![32 * 10], DType::Int32));
        g.add_input(TensorSpec::new("len", vec![32], DType::Int32));
        g.add_op(
            OpNode::new("sls", OpKind::SLS, vec!["table".into(), "idx".into(), "len".into()], vec!["p".into()])
                .with_attrs(OpAttrs {
                    max_lookups: Some(10),
                    ..Default::default()
                }),
        );
        let g = infer_shapes(&g).unwrap();
        assert_eq!(g.tensors["p"].shape, vec![32, 64]);
    }

    #[test]
    fn concat_and_tile_rules() {
        let mut g = ComputeGraph::new();
        g.add_input(TensorSpec::new("a", vec![1, 4], DType::Fp32));
        g.add_input(TensorSpec::new("b", vec![1, 6], DType::Fp32));
        g.add_op(
            OpNode::new("cat", OpKind::Concat, vec!["a".into(), "b".into()], vec!["c".into()]).with_attrs(
                OpAttrs {
                    axis: Some(1),
                    ..Default::default()
                },
            ),
        );
        g.add_op(
            OpNode::new("tile", OpKind::Tile, vec!["c".into()], vec!["t".into()]).with_attrs(OpAttrs {
                axis: Some(0),
                reps: Some(8),
                ..Default::default()
            }),
        );
        let g = infer_shapes(&g).unwrap();
        assert_eq!(g.tensors["c"].shape, vec![1, 10]);
        assert_eq!(g.tensors["t"].shape, vec![8, 10]);
    }

    #[test]
    fn variable_inputs_compile_at_max_extent() {
        let mut g = fc_graph(vec![3, 16], vec![16, 4]);
        g.tensors.get_mut("x").unwrap().variability = Variability::Variable {
            max_extent: vec![8, 16],
        };
        let g = infer_shapes(&g).unwrap();
        assert_eq!(g.tensors["y"].shape, vec![8, 4]);
    }

    #[test]
    fn infer_is_idempotent() {
        let g = infer_shapes(&fc_graph(vec![64, 256], vec![256, 128])).unwrap();
        assert_eq!(infer_shapes(&g).unwrap(), g);
    }

    #[test]
    fn conv_same_padding_with_stride() {
        let mut g = ComputeGraph::new();
        g.add_input(TensorSpec::new("x", vec![1, 32, 15, 15], DType::Fp32));
        g.add_weight(TensorSpec::new("w", vec![64, 8, 3, 3], DType::Fp32));
        g.add_op(
            OpNode::new("c", OpKind::Conv, vec!["x".into(), "w".into()], vec!["y".into()]).with_attrs(OpAttrs {
                groups: Some(4),
                stride: Some(2),
                kernel: Some(vec![3, 3]),
                ..Default::default()
            }),
        );
        let g = infer_shapes(&g).unwrap();
        assert_eq!(g.tensors["y"].shape, vec![1, 64, 8, 8]);
    }
}
