use std::collections::{BTreeSet, HashMap};
use std::fmt;

use super::{ComputeGraph, OpKind, Variability};

/// A broken graph invariant. Violations are collected, never thrown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Cycle { op: String },
    DanglingInput { op: String, tensor: String },
    MultipleProducers { tensor: String },
    UnproducedOutput { tensor: String },
    OrphanTensor { tensor: String },
    DuplicateOpId { op: String },
    BadExtent { tensor: String },
    SlsLookups { op: String, detail: String },
    WeightRecord { tensor: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle { op } => write!(f, "cycle through {op}"),
            Violation::DanglingInput { op, tensor } => write!(f, "dangling input {tensor} (op {op})"),
            Violation::MultipleProducers { tensor } => write!(f, "tensor {tensor} has multiple producers"),
            Violation::UnproducedOutput { tensor } => write!(f, "graph output {tensor} is never produced"),
            Violation::OrphanTensor { tensor } => {
                write!(f, "tensor {tensor} has no producer and is not an input or weight")
            }
            Violation::DuplicateOpId { op } => write!(f, "duplicate op id {op}"),
            Violation::BadExtent { tensor } => write!(f, "tensor {tensor} has an extent below 1"),
            Violation::SlsLookups { op, detail } => write!(f, "SLS {op}: {detail}"),
            Violation::WeightRecord { tensor } => {
                write!(f, "weight {tensor} byte size or dtype disagrees with its tensor spec")
            }
        }
    }
}

/// Checks every structural invariant of a compute graph.
pub fn validate_graph(g: &ComputeGraph) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();

    let mut ids = BTreeSet::new();
    for op in &g.ops {
        if !ids.insert(op.id.as_str()) {
            v.push(Violation::DuplicateOpId { op: op.id.clone() });
        }
    }

    let mut produced: HashMap<&str, usize> = HashMap::new();
    for op in &g.ops {
        for out in &op.outputs {
            *produced.entry(out.as_str()).or_default() += 1;
        }
    }
    let sources: BTreeSet<&str> = g
        .inputs
        .iter()
        .map(String::as_str)
        .chain(g.weights.keys().map(String::as_str))
        .collect();
    for (t, &n) in &produced {
        if n > 1 || (n == 1 && sources.contains(t)) {
            v.push(Violation::MultipleProducers { tensor: t.to_string() });
        }
    }

    for op in &g.ops {
        for inp in &op.inputs {
            if !produced.contains_key(inp.as_str()) && !sources.contains(inp.as_str()) {
                v.push(Violation::DanglingInput {
                    op: op.id.clone(),
                    tensor: inp.clone(),
                });
            }
        }
        if op.kind == OpKind::SLS {
            match op.attrs.max_lookups {
                None | Some(0) => v.push(Violation::SlsLookups {
                    op: op.id.clone(),
                    detail: "max_lookups must be >= 1".into(),
                }),
                Some(max) => {
                    if let Some(avg) = op.attrs.avg_lookups {
                        if !(1.0..=max as f64).contains(&avg) {
                            v.push(Violation::SlsLookups {
                                op: op.id.clone(),
                                detail: format!("avg_lookups {avg} outside [1, {max}]"),
                            });
                        }
                    }
                }
            }
        }
    }

    for out in &g.outputs {
        if !produced.contains_key(out.as_str()) && !sources.contains(out.as_str()) {
            v.push(Violation::UnproducedOutput { tensor: out.clone() });
        }
    }

    for (name, spec) in &g.tensors {
        if !produced.contains_key(name.as_str()) && !sources.contains(name.as_str()) {
            v.push(Violation::OrphanTensor { tensor: name.clone() });
        }
        let bad_max = match &spec.variability {
            Variability::Static => false,
            Variability::Variable { max_extent } => {
                max_extent.len() != spec.shape.len() || max_extent.contains(&0)
            }
        };
        if spec.shape.contains(&0) || bad_max {
            v.push(Violation::BadExtent { tensor: name.clone() });
        }
    }

    for (name, w) in &g.weights {
        match g.tensors.get(name) {
            Some(spec) if spec.dtype == w.dtype && spec.bytes() == w.bytes => {}
            _ => v.push(Violation::WeightRecord { tensor: name.clone() }),
        }
    }

    // Self-loops and longer cycles both show up as ops Kahn's algorithm
    // cannot release.
    {
        let producers = g.producers();
        let mut indeg = vec![0usize; g.ops.len()];
        let mut succ = vec![Vec::new(); g.ops.len()];
        for (i, op) in g.ops.iter().enumerate() {
            let preds: BTreeSet<usize> = op
                .inputs
                .iter()
                .filter_map(|t| producers.get(t.as_str()).copied())
                .collect();
            indeg[i] = preds.len();
            for p in preds {
                succ[p].push(i);
            }
        }
        let mut stack: Vec<usize> = (0..g.ops.len()).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = stack.pop() {
            seen += 1;
            for &s in &succ[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    stack.push(s);
                }
            }
        }
        if seen < g.ops.len() {
            for (i, op) in g.ops.iter().enumerate() {
                if indeg[i] > 0 {
                    v.push(Violation::Cycle { op: op.id.clone() });
                }
            }
        }
    }

    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DType, OpAttrs, OpNode, TensorSpec};

    fn fc_add() -> ComputeGraph {
        let mut g = ComputeGraph::new();
        g.add_input(TensorSpec::new("x", vec![4, 8], DType::Fp32));
        g.add_input(TensorSpec::new("bias", vec![4, 2], DType::Fp32));
        g.add_weight(TensorSpec::new("w", vec![8, 2], DType::Fp32));
        g.add_op(
            OpNode::new("fc", OpKind::FC, vec!["x".into(), "w".into()], vec!["y".into()]).with_attrs(OpAttrs {
                in_features: Some(8),
                out_features: Some(2),
                ..Default::default()
            }),
        );
        g.add_op(OpNode::new("add", OpKind::Add, vec!["y".into(), "bias".into()], vec!["z".into()]));
        g.outputs.push("z".into());
        g
    }

    #[test]
    fn well_formed_chain_is_ok() {
        assert_eq!(validate_graph(&fc_add()), Ok(()));
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let mut g = fc_add();
        g.ops[1].inputs.push("z".into());
        let errs = validate_graph(&g).unwrap_err();
        assert!(errs.contains(&Violation::Cycle { op: "add".into() }), "{errs:?}");
        assert!(errs.iter().any(|e| e.to_string().contains("cycle")));
    }

    #[test]
    fn undeclared_tensor_is_dangling() {
        let mut g = fc_add();
        g.ops[1].inputs[1] = "t9".into();
        let errs = validate_graph(&g).unwrap_err();
        assert!(errs.iter().any(|e| e.to_string().starts_with("dangling input t9")), "{errs:?}");
    }

    #[test]
    fn sls_lookup_annotation_bounds() {
        let mut g = ComputeGraph::new();
        g.add_weight(TensorSpec::new("tab", vec![10, 4], DType::Fp32));
        g.add_input(TensorSpec::new("idx", vec![8], DType::Int32));
        g.add_input(TensorSpec::new("len", vec![2], DType::Int32));
        g.add_op(
            OpNode::new("sls", OpKind::SLS, vec!["tab".into(), "idx".into(), "len".into()], vec!["p".into()])
                .with_attrs(OpAttrs {
                    max_lookups: Some(4),
                    avg_lookups: Some(5.0),
                    ..Default::default()
                }),
        );
        g.outputs.push("p".into());
        let errs = validate_graph(&g).unwrap_err();
        assert!(matches!(errs[0], Violation::SlsLookups { .. }));
    }

    #[test]
    fn unproduced_output_reported() {
        let mut g = fc_add();
        g.outputs.push("nope".into());
        let errs = validate_graph(&g).unwrap_err();
        assert_eq!(errs, vec![Violation::UnproducedOutput { tensor: "nope".into() }]);
    }
}
