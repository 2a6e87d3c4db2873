use std::collections::BTreeMap;

use super::exec::{ParamsMap, ProxyEval, ProxyModel};
use super::{last_fcs, AssignmentStatus, OpPrecision, PrecisionAssignment, Precisions, QuantError, Result};
use crate::graph::{ComputeGraph, OpKind};
use crate::numerics::{layer_error, AccuracyBudget, ErrorMetric};

/// Ops the search may run in int8: weight-bearing FC, MatMul and Conv, minus
/// the last FC of every chain and the first convolution.
pub fn quant_candidates(g: &ComputeGraph) -> Result<Vec<String>> {
    let last = last_fcs(g)?;
    let first_conv = g
        .topo_order()?
        .into_iter()
        .map(|i| &g.ops[i])
        .find(|op| matches!(op.kind, OpKind::Conv | OpKind::Conv3D))
        .map(|op| op.id.as_str());
    Ok(g.ops
        .iter()
        .filter(|op| op.device_supported && op.kind.is_dense_compute())
        .filter(|op| op.inputs.iter().any(|t| g.is_weight(t)))
        .filter(|op| !last.contains(&op.id) && Some(op.id.as_str()) != first_conv)
        .map(|op| op.id.clone())
        .collect())
}

/// Relative L2 error of each op run alone at int8 on its fp32 inputs.
pub fn isolated_layer_errors(model: &ProxyModel, ops: &[String], params: &ParamsMap) -> Result<BTreeMap<String, f64>> {
    let reference = model.execute(&Precisions::new(), params)?;
    let mut errors = BTreeMap::new();
    for id in ops {
        let op = model.graph.op(id).ok_or_else(|| QuantError::UnknownOp(id.clone()))?;
        let exact = &reference[&op.outputs[0]];
        let quant = model.run_op(op, OpPrecision::Int8, &reference, params)?;
        errors.insert(id.clone(), layer_error(exact, &quant, ErrorMetric::RelativeL2)?);
    }
    Ok(errors)
}

/// Iterative error-driven precision search.
///
/// Starts with every candidate in int8, SLS tables in 4-bit row-wise and
/// remaining device ops in fp16. While the proxy metric misses the budget,
/// the int8 op with the largest isolated error (ties by id) moves to fp16.
/// Promotions are never undone, so at most one promotion per candidate
/// happens before the search falls back to all-fp16.
pub fn assign_precisions(
    model: &ProxyModel,
    budget: AccuracyBudget,
    proxy: &dyn ProxyEval,
) -> Result<PrecisionAssignment> {
    let g = &model.graph;
    let params = model.calibrate()?;
    let candidates = quant_candidates(g)?;
    let errors = isolated_layer_errors(model, &candidates, &params)?;

    let mut precisions = Precisions::new();
    for op in &g.ops {
        let p = if !op.device_supported {
            OpPrecision::Fp32
        } else if op.kind == OpKind::SLS {
            OpPrecision::Int4rw
        } else {
            OpPrecision::Fp16
        };
        precisions.insert(op.id.clone(), p);
    }
    for id in &candidates {
        precisions.insert(id.clone(), OpPrecision::Int8);
    }

    let mut promotions = Vec::new();
    let mut history = Vec::new();
    let status = loop {
        let value = proxy.evaluate(&precisions).map_err(|e| QuantError::Proxy {
            iteration: history.len(),
            source: Box::new(e),
        })?;
        history.push(value);
        if budget.is_met(value) {
            break AssignmentStatus::MeetsBudget;
        }
        let worst = candidates
            .iter()
            .filter(|id| precisions[*id] == OpPrecision::Int8)
            .max_by(|a, b| errors[*a].total_cmp(&errors[*b]).then_with(|| b.cmp(a)));
        match worst {
            Some(id) => {
                precisions.insert(id.clone(), OpPrecision::Fp16);
                promotions.push(id.clone());
            }
            None => break AssignmentStatus::FallbackAllFp16,
        }
    };

    let params = params
        .into_iter()
        .filter(|(id, _)| precisions.get(id) == Some(&OpPrecision::Int8))
        .collect();
    Ok(PrecisionAssignment {
        precisions,
        params,
        budget,
        status,
        metric_value: history.last().copied(),
        promotions,
        history,
    })
}
