use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{OpPrecision, Precisions, QuantError, Result};
use crate::graph::{ComputeGraph, DType, OpKind, OpNode};
use crate::numerics::{
    fc_int8_reference, fp16_round, layer_error, ne_metric, quantize_int8, quantize_rowwise, sls_reference,
    BudgetMetric, ErrorMetric, FcInt8, OutDType, QuantParams, SlsTable,
};

/// Calibration inputs: float activations at their compiled shapes, SLS
/// index and length streams, and one binary label per output row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub inputs: BTreeMap<String, Vec<f32>>,
    pub indices: BTreeMap<String, Vec<i64>>,
    pub labels: Vec<u8>,
}

impl CalibrationSet {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty() && self.indices.is_empty()
    }
}

/// A graph small enough to execute, with its weight values and calibration data.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyModel {
    pub graph: ComputeGraph,
    pub weights: BTreeMap<String, Vec<f32>>,
    pub calib: CalibrationSet,
}

/// Static int8 parameters of one op.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Int8Params {
    pub activation: QuantParams,
    pub weight: QuantParams,
}

pub type ParamsMap = BTreeMap<String, Int8Params>;

fn round_all(v: &[f32]) -> Vec<f32> {
    v.iter().map(|&x| fp16_round(x)).collect()
}

fn unsupported(op: &OpNode) -> QuantError {
    QuantError::Unsupported {
        op: op.id.clone(),
        kind: op.kind.name(),
    }
}

/// Row-major `[m, k] x [k, n]` with f32 accumulation in ascending k.
fn matmul(x: &[f32], w: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for p in 0..k {
                acc += x[i * k + p] * w[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

impl ProxyModel {
    fn shape(&self, t: &str) -> Result<&[usize]> {
        self.graph
            .tensors
            .get(t)
            .map(|s| s.shape.as_slice())
            .ok_or_else(|| QuantError::MissingInput(t.to_string()))
    }

    fn value<'a>(&'a self, vals: &'a BTreeMap<String, Vec<f32>>, t: &str) -> Result<&'a [f32]> {
        if let Some(v) = vals.get(t) {
            return Ok(v);
        }
        if self.graph.is_weight(t) {
            return self
                .weights
                .get(t)
                .map(Vec::as_slice)
                .ok_or_else(|| QuantError::MissingWeight(t.to_string()));
        }
        Err(QuantError::MissingInput(t.to_string()))
    }

    fn stream(&self, t: &str) -> Result<&[i64]> {
        self.calib
            .indices
            .get(t)
            .map(Vec::as_slice)
            .ok_or_else(|| QuantError::MissingInput(t.to_string()))
    }

    /// Runs every op at its assigned precision (unassigned ops run in fp32)
    /// and returns every tensor's value.
    pub fn execute(&self, precisions: &Precisions, params: &ParamsMap) -> Result<BTreeMap<String, Vec<f32>>> {
        let mut vals: BTreeMap<String, Vec<f32>> = BTreeMap::new();
        for name in &self.graph.inputs {
            let spec = &self.graph.tensors[name];
            if spec.dtype == DType::Int32 {
                continue;
            }
            let v = self
                .calib
                .inputs
                .get(name)
                .ok_or_else(|| QuantError::MissingInput(name.clone()))?;
            vals.insert(name.clone(), v.clone());
        }
        for i in self.graph.topo_order()? {
            let op = &self.graph.ops[i];
            let p = precisions.get(&op.id).copied().unwrap_or(OpPrecision::Fp32);
            let out = self.run_op(op, p, &vals, params)?;
            if let Some(name) = op.outputs.first() {
                vals.insert(name.clone(), out);
            }
        }
        Ok(vals)
    }

    /// Output of one op at precision `p`, reading its inputs from `vals`.
    pub fn run_op(
        &self,
        op: &OpNode,
        p: OpPrecision,
        vals: &BTreeMap<String, Vec<f32>>,
        params: &ParamsMap,
    ) -> Result<Vec<f32>> {
        let fp16 = p != OpPrecision::Fp32;
        let input = |i: usize| -> Result<Vec<f32>> {
            let t = op.inputs.get(i).ok_or_else(|| unsupported(op))?;
            let v = self.value(vals, t)?;
            Ok(if fp16 { round_all(v) } else { v.to_vec() })
        };
        let out = match op.kind {
            OpKind::FC | OpKind::MatMul => {
                let xs = self.shape(&op.inputs[0])?;
                let ws = self.shape(&op.inputs[1])?;
                if ws.len() != 2 || !op.attrs.input_slices.is_empty() {
                    return Err(unsupported(op));
                }
                let (k, n) = (ws[0], ws[1]);
                let m = xs.iter().product::<usize>() / k;
                if p == OpPrecision::Int8 {
                    let qp = params.get(&op.id).ok_or_else(|| QuantError::MissingParams(op.id.clone()))?;
                    let x = self.value(vals, &op.inputs[0])?;
                    let w = self.value(vals, &op.inputs[1])?;
                    let qx = quantize_int8(x, &[m, k], &qp.activation)?;
                    let qw = quantize_int8(w, &[k, n], &qp.weight)?;
                    fc_int8_reference(&FcInt8 {
                        x: &qx,
                        w: &qw,
                        b: m,
                        k,
                        n,
                        x_params: &qp.activation,
                        w_params: &qp.weight,
                        out: OutDType::Fp32,
                    })?
                } else {
                    matmul(&input(0)?, &input(1)?, m, k, n)
                }
            }
            OpKind::SLS => {
                let table = self.value(vals, &op.inputs[0])?;
                let ts = self.shape(&op.inputs[0])?;
                let (rows, dim) = (ts[0], ts[1]);
                let indices = self.stream(&op.inputs[1])?;
                let lengths = self.stream(&op.inputs[2])?;
                match p {
                    OpPrecision::Fp32 => sls_reference(SlsTable::Dense { data: table, rows, dim }, indices, lengths)?,
                    OpPrecision::Fp16 => {
                        let t = round_all(table);
                        sls_reference(SlsTable::Dense { data: &t, rows, dim }, indices, lengths)?
                    }
                    OpPrecision::Int4rw | OpPrecision::Int8 => {
                        let width = if p == OpPrecision::Int4rw { 4 } else { 8 };
                        let q = quantize_rowwise(table, rows, dim, width);
                        sls_reference(SlsTable::Rowwise(&q), indices, lengths)?
                    }
                }
            }
            OpKind::Concat => {
                let axis = op.attrs.axis.unwrap_or(1);
                let out_shape = self.shape(&op.outputs[0])?;
                let outer: usize = out_shape[..axis].iter().product();
                let mut parts = Vec::new();
                for (i, t) in op.inputs.iter().enumerate() {
                    let inner: usize = self.shape(t)?[axis..].iter().product();
                    parts.push((input(i)?, inner));
                }
                let mut out = Vec::with_capacity(out_shape.iter().product());
                for o in 0..outer {
                    for (v, inner) in &parts {
                        out.extend_from_slice(&v[o * inner..(o + 1) * inner]);
                    }
                }
                out
            }
            OpKind::Tile => {
                let axis = op.attrs.axis.unwrap_or(0);
                let reps = op.attrs.reps.unwrap_or(1);
                let s = self.shape(&op.inputs[0])?;
                let outer: usize = s[..axis].iter().product();
                let inner: usize = s[axis..].iter().product();
                let x = input(0)?;
                let mut out = Vec::with_capacity(x.len() * reps);
                for o in 0..outer {
                    for _ in 0..reps {
                        out.extend_from_slice(&x[o * inner..(o + 1) * inner]);
                    }
                }
                out
            }
            OpKind::BatchMatMul => match op.attrs.interaction {
                Some(f) => {
                    let s = self.shape(&op.inputs[0])?;
                    let (b, d) = (s[0], s[1] / f);
                    let x = input(0)?;
                    let mut out = vec![0.0f32; b * f * f];
                    for r in 0..b {
                        let row = &x[r * f * d..(r + 1) * f * d];
                        for i in 0..f {
                            for j in 0..f {
                                let mut acc = 0.0f32;
                                for e in 0..d {
                                    acc += row[i * d + e] * row[j * d + e];
                                }
                                out[r * f * f + i * f + j] = acc;
                            }
                        }
                    }
                    out
                }
                None => {
                    let a = self.shape(&op.inputs[0])?;
                    let bs = self.shape(&op.inputs[1])?;
                    let (batch, m, k, n) = (a[0], a[1], a[2], bs[2]);
                    let (x, y) = (input(0)?, input(1)?);
                    let mut out = Vec::with_capacity(batch * m * n);
                    for i in 0..batch {
                        out.extend(matmul(&x[i * m * k..(i + 1) * m * k], &y[i * k * n..(i + 1) * k * n], m, k, n));
                    }
                    out
                }
            },
            OpKind::Add | OpKind::Mul => {
                let a_shape = self.shape(&op.inputs[0])?;
                let b_shape = self.shape(&op.inputs[1])?;
                let trimmed: Vec<usize> = b_shape.iter().copied().skip_while(|&d| d == 1).collect();
                if trimmed[..] != a_shape[a_shape.len() - trimmed.len()..] {
                    return Err(unsupported(op));
                }
                let (a, b) = (input(0)?, input(1)?);
                a.iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let y = b[i % b.len()];
                        if op.kind == OpKind::Add {
                            x + y
                        } else {
                            x * y
                        }
                    })
                    .collect()
            }
            OpKind::Gelu => input(0)?
                .iter()
                .map(|&x| 0.5 * x * (1.0 + (0.797_884_6 * (x + 0.044_715 * x * x * x)).tanh()))
                .collect(),
            OpKind::Softmax | OpKind::LayerNorm => {
                let s = self.shape(&op.inputs[0])?;
                let last = *s.last().unwrap_or(&1);
                let mut x = input(0)?;
                for row in x.chunks_mut(last) {
                    if op.kind == OpKind::Softmax {
                        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                        let mut sum = 0.0f32;
                        for v in row.iter_mut() {
                            *v = (*v - m).exp();
                            sum += *v;
                        }
                        row.iter_mut().for_each(|v| *v /= sum);
                    } else {
                        let mean = row.iter().sum::<f32>() / last as f32;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / last as f32;
                        let inv = 1.0 / (var + 1e-5).sqrt();
                        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
                    }
                }
                x
            }
            _ => return Err(unsupported(op)),
        };
        Ok(if fp16 { round_all(&out) } else { out })
    }

    /// Static int8 parameters for every FC/MatMul with a weight operand:
    /// activation min/max from an fp32 run, symmetric per-output-channel weights.
    pub fn calibrate(&self) -> Result<ParamsMap> {
        if self.calib.is_empty() {
            return Err(QuantError::EmptyCalibration);
        }
        let vals = self.execute(&Precisions::new(), &ParamsMap::new())?;
        let mut params = ParamsMap::new();
        for op in &self.graph.ops {
            if !matches!(op.kind, OpKind::FC | OpKind::MatMul) || !self.graph.is_weight(&op.inputs[1]) {
                continue;
            }
            let x = self.value(&vals, &op.inputs[0])?;
            let (lo, hi) = x
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let w = self.value(&vals, &op.inputs[1])?;
            let ws = self.shape(&op.inputs[1])?;
            params.insert(
                op.id.clone(),
                Int8Params {
                    activation: QuantParams::from_range(lo, hi),
                    weight: QuantParams::symmetric_per_channel(w, ws, 1),
                },
            );
        }
        Ok(params)
    }

    fn output<'a>(&self, vals: &'a BTreeMap<String, Vec<f32>>) -> Result<&'a [f32]> {
        let name = self.graph.outputs.first().ok_or(QuantError::EmptyGraph)?;
        vals.get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| QuantError::MissingInput(name.clone()))
    }

    /// Final output of an execution at the given precisions.
    pub fn run_output(&self, precisions: &Precisions, params: &ParamsMap) -> Result<Vec<f32>> {
        let vals = self.execute(precisions, params)?;
        Ok(self.output(&vals)?.to_vec())
    }
}

fn sigmoid(x: f32) -> f64 {
    1.0 / (1.0 + (-f64::from(x)).exp())
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Budget metric of a candidate output against the fp32 reference output.
///
/// NE degradation is relative: `NE(candidate) / NE(reference) - 1`, with the
/// output read as logits. Top-1 drop is the fraction of rows whose argmax
/// changes, which bounds the accuracy drop from above.
pub fn budget_metric(
    metric: BudgetMetric,
    reference: &[f32],
    candidate: &[f32],
    labels: &[u8],
    row_width: usize,
) -> Result<f64> {
    match metric {
        BudgetMetric::NeDegradation => {
            let p = |v: &[f32]| v.iter().map(|&x| sigmoid(x)).collect::<Vec<f64>>();
            let base = ne_metric(&p(reference), labels)?;
            let cand = ne_metric(&p(candidate), labels)?;
            Ok(cand / base - 1.0)
        }
        BudgetMetric::CosineSimilarity => Ok(layer_error(reference, candidate, ErrorMetric::Cosine)?),
        BudgetMetric::Top1Drop => {
            let w = row_width.max(1);
            let rows = reference.len() / w;
            let changed = reference
                .chunks(w)
                .zip(candidate.chunks(w))
                .filter(|(a, b)| argmax(a) != argmax(b))
                .count();
            Ok(if rows == 0 { 0.0 } else { changed as f64 / rows as f64 })
        }
        BudgetMetric::BleuDrop => Err(QuantError::UnsupportedMetric(metric.name())),
    }
}

/// End-to-end accuracy evaluator consulted by the precision search.
pub trait ProxyEval {
    fn evaluate(&self, precisions: &Precisions) -> Result<f64>;
}

impl<F: Fn(&Precisions) -> Result<f64>> ProxyEval for F {
    fn evaluate(&self, precisions: &Precisions) -> Result<f64> {
        self(precisions)
    }
}

/// Scores the budget metric by executing the model with the reference kernels.
pub struct ReferenceProxy<'a> {
    model: &'a ProxyModel,
    params: ParamsMap,
    reference: Vec<f32>,
    metric: BudgetMetric,
}

impl<'a> ReferenceProxy<'a> {
    pub fn new(model: &'a ProxyModel, metric: BudgetMetric) -> Result<Self> {
        let params = model.calibrate()?;
        let reference = model.run_output(&Precisions::new(), &params)?;
        Ok(Self {
            model,
            params,
            reference,
            metric,
        })
    }

    pub fn reference_output(&self) -> &[f32] {
        &self.reference
    }
}

impl ProxyEval for ReferenceProxy<'_> {
    fn evaluate(&self, precisions: &Precisions) -> Result<f64> {
        let out = self.model.run_output(precisions, &self.params)?;
        let width = self
            .model
            .graph
            .outputs
            .first()
            .and_then(|t| self.model.graph.tensors.get(t))
            .and_then(|s| s.shape.last().copied())
            .unwrap_or(1);
        budget_metric(self.metric, &self.reference, &out, &self.model.calib.labels, width)
    }
}
