//! Bit-exact reference kernels for low-precision inference and the accuracy
//! metrics the quantizer steers by.
//!
//! Rounding is ties-to-even everywhere. Kernels are deterministic, so two
//! implementations of the same op can be compared bit for bit (see
//! [`bitexact`]).

pub mod bitexact;
mod fc;
mod fp16;
mod metrics;
mod quant;
mod rowwise;
mod sls;

use thiserror::Error;

pub use fc::{fc_int8_naive, fc_int8_reference, fc_int8_tiled, FcInt8, OutDType, MAX_FC_K};
pub use fp16::{bf16_round, f16_bits_to_f32, f32_to_bf16_bits, f32_to_f16_bits, fp16_round};
pub use metrics::{layer_error, ne_metric, AccuracyBudget, BudgetMetric, ErrorMetric, NE_EPSILON};
pub use quant::{dequantize_int8, quantize_int8, QuantParams, QuantScheme};
pub use rowwise::{quantize_rowwise, RowwiseQuantTable};
pub use sls::{sls_general, sls_reference, SlsTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("quantization scale must be positive and finite")]
    NonPositiveScale,
    #[error("zero point {0} outside [-128, 127] or not allowed by the scheme")]
    ZeroPoint(i32),
    #[error("per-channel params need a channel axis within the tensor rank")]
    MissingAxis,
    #[error("expected {expected} channel scales, got {got}")]
    ChannelCount { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index} out of range for a table of {rows} rows")]
    IndexOutOfRange { index: i64, rows: usize },
    #[error("negative length {length} for item {item}")]
    NegativeLength { item: usize, length: i64 },
    #[error("lengths sum to {lengths} but {indices} indices were given")]
    LengthSum { lengths: i64, indices: usize },
    #[error("reduction length {k} exceeds the exact int32 limit {max}")]
    ReductionTooLong { k: usize, max: usize },
    #[error("prediction {0} outside [0, 1]")]
    Probability(f64),
    #[error("label {0} is not 0 or 1")]
    Label(u8),
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("threshold {threshold} outside the valid range for {metric}")]
    Budget { metric: &'static str, threshold: f64 },
    #[error("kernel error: {0}")]
    Kernel(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
