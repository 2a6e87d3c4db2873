//! Compute-graph representation.
//!
//! A [`ComputeGraph`] is a typed DAG of tensor operations. Tensors live in a
//! name-keyed table; ops reference them by name. Weights are tensors with a
//! recorded byte size and dtype so memory planning never has to re-derive
//! them from shapes.

mod cost;
mod shape;
mod validate;
pub mod workloads;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cost::{op_cost_stats, op_cost_stats_with_lookups, op_traffic, sls_lookups, CostStats, TensorTraffic, WorkloadTotals};
pub use shape::infer_shapes;
pub(crate) use shape::resolve_outputs;
pub use validate::{validate_graph, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("shape mismatch in op {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },
    #[error("tensor {tensor} has no resolved shape (needed by op {op})")]
    UnresolvedShape { op: String, tensor: String },
    #[error("op {op}: missing attribute {attr}")]
    MissingAttr { op: String, attr: &'static str },
    #[error("graph contains a cycle through op {0}")]
    Cycle(String),
    #[error("unknown op {0}")]
    UnknownOp(String),
    #[error("unknown preset {0}")]
    UnknownPreset(String),
    #[error("inconsistent structure: {0}")]
    InconsistentStructure(String),
    #[error("graph parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    Fp32,
    Fp16,
    Bf16,
    Int8,
    /// Row-wise quantized 4-bit codes with an fp16 scale and bias per row.
    Int4rw,
    /// Accumulator / index type.
    Int32,
}

impl DType {
    /// Bytes per element, excluding the per-row overhead of `Int4rw`.
    pub fn bytes_per_element(self) -> f64 {
        match self {
            DType::Fp32 | DType::Int32 => 4.0,
            DType::Fp16 | DType::Bf16 => 2.0,
            DType::Int8 => 1.0,
            DType::Int4rw => 0.5,
        }
    }

    /// Per-row overhead in bytes (scale + bias as two fp16 values for `Int4rw`).
    pub fn row_overhead_bytes(self) -> u64 {
        match self {
            DType::Int4rw => 4,
            _ => 0,
        }
    }

    /// Storage bytes of one row of `dim` elements.
    pub fn row_bytes(self, dim: usize) -> u64 {
        match self {
            DType::Int4rw => (dim as u64).div_ceil(2) + self.row_overhead_bytes(),
            _ => (dim as f64 * self.bytes_per_element()) as u64,
        }
    }

    /// Storage bytes of a tensor with the given shape. Rows are all but the last
    /// dimension.
    pub fn tensor_bytes(self, shape: &[usize]) -> u64 {
        let dim = shape.last().copied().unwrap_or(1);
        let rows: u64 = shape
            .iter()
            .take(shape.len().saturating_sub(1))
            .map(|&d| d as u64)
            .product();
        rows * self.row_bytes(dim)
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::Fp32 | DType::Fp16 | DType::Bf16)
    }

    /// True for types that carry activations or weights (everything but indices).
    pub fn is_numeric_payload(self) -> bool {
        !matches!(self, DType::Int32)
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::Fp32 => "fp32",
            DType::Fp16 => "fp16",
            DType::Bf16 => "bf16",
            DType::Int8 => "int8",
            DType::Int4rw => "int4rw",
            DType::Int32 => "int32",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Variability {
    #[default]
    Static,
    /// Runtime extent may be smaller than the compiled extent; `max_extent`
    /// holds the per-dimension upper bound.
    Variable { max_extent: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    #[serde(default, skip_serializing_if = "is_static")]
    pub variability: Variability,
}

fn is_static(v: &Variability) -> bool {
    matches!(v, Variability::Static)
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, dtype: DType) -> Self {
        Self {
            name: name.into(),
            shape,
            dtype,
            variability: Variability::Static,
        }
    }

    pub fn elements(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product()
    }

    pub fn bytes(&self) -> u64 {
        self.dtype.tensor_bytes(&self.shape)
    }

    /// Shape used for compilation: variable dimensions take their maximum.
    pub fn compiled_shape(&self) -> Vec<usize> {
        match &self.variability {
            Variability::Static => self.shape.clone(),
            Variability::Variable { max_extent } => max_extent.clone(),
        }
    }
}

/// Closed op vocabulary plus `Custom` for opaque costed ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    FC,
    MatMul,
    BatchMatMul,
    Conv,
    Conv3D,
    SLS,
    Quantize,
    Dequantize,
    ConvertTo,
    Concat,
    Tile,
    Transpose,
    Add,
    Mul,
    Pool,
    Softmax,
    Gelu,
    LayerNorm,
    RoiAlignLike,
    HostDecode,
    Custom,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::FC => "FC",
            OpKind::MatMul => "MatMul",
            OpKind::BatchMatMul => "BatchMatMul",
            OpKind::Conv => "Conv",
            OpKind::Conv3D => "Conv3D",
            OpKind::SLS => "SLS",
            OpKind::Quantize => "Quantize",
            OpKind::Dequantize => "Dequantize",
            OpKind::ConvertTo => "ConvertTo",
            OpKind::Concat => "Concat",
            OpKind::Tile => "Tile",
            OpKind::Transpose => "Transpose",
            OpKind::Add => "Add",
            OpKind::Mul => "Mul",
            OpKind::Pool => "Pool",
            OpKind::Softmax => "Softmax",
            OpKind::Gelu => "Gelu",
            OpKind::LayerNorm => "LayerNorm",
            OpKind::RoiAlignLike => "RoiAlignLike",
            OpKind::HostDecode => "HostDecode",
            OpKind::Custom => "Custom",
        }
    }

    /// Weight-bearing dense compute ops (the quantization candidates).
    pub fn is_dense_compute(self) -> bool {
        matches!(self, OpKind::FC | OpKind::MatMul | OpKind::Conv | OpKind::Conv3D)
    }

    pub fn is_elementwise(self) -> bool {
        matches!(
            self,
            OpKind::Add
                | OpKind::Mul
                | OpKind::Gelu
                | OpKind::Softmax
                | OpKind::LayerNorm
                | OpKind::Quantize
                | OpKind::Dequantize
                | OpKind::ConvertTo
        )
    }

    pub fn is_conversion(self) -> bool {
        matches!(self, OpKind::Quantize | OpKind::Dequantize | OpKind::ConvertTo)
    }

    pub fn is_nonlinear(self) -> bool {
        matches!(self, OpKind::Gelu | OpKind::Softmax | OpKind::LayerNorm)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Restricts an op to a contiguous window of one of its inputs. Produced by
/// op splitting so chunks can read the shared tensor without a slice op.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSlice {
    pub input: usize,
    pub axis: usize,
    pub start: usize,
    pub len: usize,
}

/// Kind-specific attributes. Unused fields stay `None` and are omitted from
/// the graph file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OpAttrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_lookups: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lookups: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    /// Number of feature vectors of a pairwise-interaction BatchMatMul.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perm: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flops: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dtype: Option<DType>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_slices: Vec<InputSlice>,
    /// A Concat whose operands were written straight into its output
    /// buffer: it orders the parts but moves no data.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub in_place: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: String,
    pub kind: OpKind,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub attrs: OpAttrs,
    pub device_supported: bool,
}

impl OpNode {
    pub fn new(id: impl Into<String>, kind: OpKind, inputs: Vec<String>, outputs: Vec<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            inputs,
            outputs,
            attrs: OpAttrs::default(),
            device_supported: !matches!(kind, OpKind::RoiAlignLike | OpKind::HostDecode),
        }
    }

    pub fn with_attrs(mut self, attrs: OpAttrs) -> Self {
        self.attrs = attrs;
        self
    }

    pub fn host_only(mut self) -> Self {
        self.device_supported = false;
        self
    }

    pub fn slice_for(&self, input: usize) -> Option<&InputSlice> {
        self.attrs.input_slices.iter().find(|s| s.input == input)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightInfo {
    pub bytes: u64,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComputeGraph {
    pub tensors: BTreeMap<String, TensorSpec>,
    pub ops: Vec<OpNode>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub weights: BTreeMap<String, WeightInfo>,
}

impl ComputeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_input(&mut self, spec: TensorSpec) -> String {
        let name = spec.name.clone();
        self.tensors.insert(name.clone(), spec);
        self.inputs.push(name.clone());
        name
    }

    pub fn add_weight(&mut self, spec: TensorSpec) -> String {
        let name = spec.name.clone();
        self.weights.insert(
            name.clone(),
            WeightInfo {
                bytes: spec.bytes(),
                dtype: spec.dtype,
            },
        );
        self.tensors.insert(name.clone(), spec);
        name
    }

    /// Changes a weight's dtype, keeping the recorded byte size consistent.
    pub fn set_weight_dtype(&mut self, name: &str, dtype: DType) {
        if let Some(spec) = self.tensors.get_mut(name) {
            spec.dtype = dtype;
            let bytes = spec.bytes();
            self.weights.insert(name.to_string(), WeightInfo { bytes, dtype });
        }
    }

    pub fn add_op(&mut self, op: OpNode) {
        self.ops.push(op);
    }

    pub fn is_weight(&self, tensor: &str) -> bool {
        self.weights.contains_key(tensor)
    }

    pub fn op(&self, id: &str) -> Option<&OpNode> {
        self.ops.iter().find(|o| o.id == id)
    }

    pub fn op_index(&self) -> HashMap<&str, usize> {
        self.ops.iter().enumerate().map(|(i, o)| (o.id.as_str(), i)).collect()
    }

    /// Map from tensor name to producing op index.
    pub fn producers(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::new();
        for (i, op) in self.ops.iter().enumerate() {
            for out in &op.outputs {
                map.entry(out.as_str()).or_insert(i);
            }
        }
        map
    }

    /// Map from tensor name to consuming op indices (in op order).
    pub fn consumers(&self) -> HashMap<&str, Vec<usize>> {
        let mut map: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, op) in self.ops.iter().enumerate() {
            for inp in &op.inputs {
                let list = map.entry(inp.as_str()).or_default();
                if list.last() != Some(&i) {
                    list.push(i);
                }
            }
        }
        map
    }

    /// Op-level predecessor lists (indices), deduplicated.
    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let producers = self.producers();
        self.ops
            .iter()
            .map(|op| {
                let set: BTreeSet<usize> = op
                    .inputs
                    .iter()
                    .filter_map(|t| producers.get(t.as_str()).copied())
                    .collect();
                set.into_iter().collect()
            })
            .collect()
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.ops.len()];
        for (i, preds) in self.predecessors().into_iter().enumerate() {
            for p in preds {
                succ[p].push(i);
            }
        }
        succ
    }

    /// Kahn topological order; ready ops are taken in op-list order.
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let preds = self.predecessors();
        let succ = self.successors();
        let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..self.ops.len()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.ops.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &s in &succ[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        if order.len() != self.ops.len() {
            let stuck = (0..self.ops.len()).find(|&i| indeg[i] > 0).unwrap_or(0);
            return Err(GraphError::Cycle(self.ops[stuck].id.clone()));
        }
        Ok(order)
    }

    pub fn total_weight_bytes(&self) -> u64 {
        self.weights.values().map(|w| w.bytes).sum()
    }

    /// Weight tensors read by an op.
    pub fn op_weights<'a>(&'a self, op: &'a OpNode) -> impl Iterator<Item = &'a str> + 'a {
        op.inputs
            .iter()
            .filter(|t| self.is_weight(t))
            .map(String::as_str)
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.get(name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int4_rowwise_bytes_include_row_overhead() {
        assert_eq!(DType::Int4rw.tensor_bytes(&[10, 64]), 10 * (32 + 4));
        assert_eq!(DType::Int4rw.tensor_bytes(&[3, 5]), 3 * (3 + 4));
        assert_eq!(DType::Fp16.tensor_bytes(&[256, 256]), 131072);
    }

    #[test]
    fn bytes_per_element_positive() {
        for d in [DType::Fp32, DType::Fp16, DType::Bf16, DType::Int8, DType::Int4rw, DType::Int32] {
            assert!(d.bytes_per_element() > 0.0);
        }
    }

    #[test]
    fn fc_weight_bytes_halve_fp16_to_int8() {
        let mut g = ComputeGraph::new();
        g.add_weight(TensorSpec::new("w", vec![256, 128], DType::Fp16));
        let before = g.weights["w"].bytes;
        g.set_weight_dtype("w", DType::Int8);
        assert_eq!(g.weights["w"].bytes * 2, before);
    }
}
