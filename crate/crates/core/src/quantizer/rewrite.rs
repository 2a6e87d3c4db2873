use std::collections::{BTreeMap, HashMap};

use super::{OpPrecision, PrecisionAssignment, QuantError, Result};
use crate::graph::{resolve_outputs, ComputeGraph, DType, OpAttrs, OpKind, OpNode};

/// Activation dtype an op consumes at precision `p`.
fn activation_dtype(p: OpPrecision) -> DType {
    match p {
        OpPrecision::Fp32 => DType::Fp32,
        OpPrecision::Int8 => DType::Int8,
        OpPrecision::Fp16 | OpPrecision::Int4rw => DType::Fp16,
    }
}

fn weight_dtype(kind: OpKind, p: OpPrecision) -> Option<DType> {
    match p {
        OpPrecision::Fp32 => None,
        OpPrecision::Fp16 => Some(DType::Fp16),
        OpPrecision::Int8 => Some(DType::Int8),
        OpPrecision::Int4rw if kind == OpKind::SLS => Some(DType::Int4rw),
        OpPrecision::Int4rw => None,
    }
}

/// Tracks every materialized dtype version of each original tensor. The
/// original name carries the original dtype; other versions are suffixed
/// with their dtype.
struct Versions {
    original: HashMap<String, DType>,
    /// original name -> dtype -> tensor name
    have: HashMap<String, BTreeMap<DType, String>>,
    /// original name -> the version its producer wrote
    primary: HashMap<String, (DType, String)>,
}

impl Versions {
    fn name(&self, t: &str, d: DType) -> String {
        if self.original.get(t) == Some(&d) {
            t.to_string()
        } else {
            format!("{t}.{d}")
        }
    }

    fn record(&mut self, t: &str, d: DType, name: String, primary: bool) {
        self.have.entry(t.to_string()).or_default().insert(d, name.clone());
        if primary {
            self.primary.insert(t.to_string(), (d, name));
        }
    }
}

fn push(out: &mut ComputeGraph, op: OpNode) -> Result<()> {
    out.ops.push(op);
    resolve_outputs(out, out.ops.len() - 1)?;
    Ok(())
}

/// Returns the name of `t` at dtype `want`, inserting a Quantize,
/// Dequantize or ConvertTo from the primary version when needed.
fn materialize(out: &mut ComputeGraph, v: &mut Versions, t: &str, want: DType) -> Result<String> {
    if let Some(name) = v.have.get(t).and_then(|m| m.get(&want)) {
        return Ok(name.clone());
    }
    let (from, src) = v.primary[t].clone();
    let name = v.name(t, want);
    let kind = match (from, want) {
        (_, DType::Int8) => OpKind::Quantize,
        (DType::Int8, _) => OpKind::Dequantize,
        _ => OpKind::ConvertTo,
    };
    let attrs = OpAttrs {
        out_dtype: Some(want),
        ..Default::default()
    };
    let id = format!("{t}.to_{want}");
    push(out, OpNode::new(id, kind, vec![src], vec![name.clone()]).with_attrs(attrs))?;
    v.record(t, want, name.clone(), false);
    Ok(name)
}

/// Materializes an assignment: weights take the precision of their op,
/// activations are converted exactly where producer and consumer dtypes
/// differ. Consecutive int8 ops therefore share one int8 tensor, and every
/// conversion is emitted once per (tensor, dtype). Graph outputs keep their
/// original names and dtypes.
pub fn apply_assignment(g: &ComputeGraph, a: &PrecisionAssignment) -> Result<ComputeGraph> {
    for id in a.precisions.keys() {
        if g.op(id).is_none() {
            return Err(QuantError::UnknownOp(id.clone()));
        }
    }
    for op in &g.ops {
        let p = match a.precisions.get(&op.id) {
            Some(&p) => p,
            None if op.device_supported => return Err(QuantError::Uncovered(op.id.clone())),
            None => continue,
        };
        let legal = match p {
            OpPrecision::Int4rw => op.kind == OpKind::SLS,
            OpPrecision::Int8 => op.kind.is_dense_compute() || op.kind == OpKind::SLS,
            _ => true,
        };
        if !legal {
            return Err(QuantError::BadPrecision {
                op: op.id.clone(),
                kind: op.kind.name(),
                precision: p,
            });
        }
    }

    let mut out = ComputeGraph {
        ops: Vec::new(),
        ..g.clone()
    };
    let mut v = Versions {
        original: g.tensors.iter().map(|(n, s)| (n.clone(), s.dtype)).collect(),
        have: HashMap::new(),
        primary: HashMap::new(),
    };
    for t in &g.inputs {
        v.record(t, g.tensors[t].dtype, t.clone(), true);
    }

    for i in g.topo_order()? {
        let op = &g.ops[i];
        let p = a.precisions.get(&op.id).copied().unwrap_or(OpPrecision::Fp32);
        let want = activation_dtype(p);
        let mut new_op = op.clone();
        for (slot, t) in op.inputs.iter().enumerate() {
            if g.is_weight(t) {
                if let Some(d) = weight_dtype(op.kind, p) {
                    out.set_weight_dtype(t, d);
                }
                continue;
            }
            let (cur, name) = v.primary[t.as_str()].clone();
            new_op.inputs[slot] = if cur.is_numeric_payload() && cur != want {
                materialize(&mut out, &mut v, t, want)?
            } else {
                name
            };
        }
        // name outputs after the dtype they will carry
        let probe = out.ops.len();
        push(&mut out, new_op)?;
        let dtype = out.tensors[&out.ops[probe].outputs[0]].dtype;
        let renamed: Vec<String> = op.outputs.iter().map(|t| v.name(t, dtype)).collect();
        if renamed != op.outputs {
            out.ops[probe].outputs = renamed.clone();
            resolve_outputs(&mut out, probe)?;
        }
        for (t, name) in op.outputs.iter().zip(renamed) {
            v.record(t, dtype, name, true);
        }
    }
    for t in &g.outputs {
        if let Some(&d) = v.original.get(t.as_str()) {
            if v.primary.contains_key(t.as_str()) {
                materialize(&mut out, &mut v, t, d)?;
            }
        }
    }
    // drop specs of original names no longer produced at their own dtype
    let mut live: std::collections::HashSet<String> = out.ops.iter().flat_map(|o| o.outputs.clone()).collect();
    live.extend(out.inputs.iter().cloned());
    live.extend(out.weights.keys().cloned());
    out.tensors.retain(|name, _| live.contains(name));
    Ok(out)
}
