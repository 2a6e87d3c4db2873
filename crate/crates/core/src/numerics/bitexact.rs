//! Dual-implementation harness: run two kernels registered for the same op
//! over a seeded corpus and report every bit-level disagreement.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fc::{fc_int8_naive, fc_int8_reference, FcInt8, OutDType};
use super::fp16::fp16_round;
use super::quant::{dequantize_int8, quantize_int8, QuantParams};
use super::rowwise::{quantize_rowwise, RowwiseQuantTable};
use super::sls::{sls_general, sls_reference, SlsTable};
use super::{NumericsError, Result};

/// Cases per op when no corpus size is given.
pub const DEFAULT_CORPUS_SIZE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelOp {
    Quantize,
    Dequantize,
    Rowwise4,
    Sls,
    FcInt8,
}

impl KernelOp {
    pub const ALL: [KernelOp; 5] = [
        KernelOp::Quantize,
        KernelOp::Dequantize,
        KernelOp::Rowwise4,
        KernelOp::Sls,
        KernelOp::FcInt8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelOp::Quantize => "quantize_int8",
            KernelOp::Dequantize => "dequantize_int8",
            KernelOp::Rowwise4 => "rowwise_4bit",
            KernelOp::Sls => "sls",
            KernelOp::FcInt8 => "fc_int8",
        }
    }
}

impl fmt::Display for KernelOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One input set for a kernel signature.
#[derive(Debug, Clone, PartialEq)]
pub enum Case {
    Quantize {
        x: Vec<f32>,
        shape: Vec<usize>,
        params: QuantParams,
    },
    Dequantize {
        q: Vec<i8>,
        shape: Vec<usize>,
        params: QuantParams,
    },
    Rowwise {
        table: Vec<f32>,
        rows: usize,
        dim: usize,
        width: u32,
    },
    Sls {
        table: RowwiseQuantTable,
        indices: Vec<i64>,
        lengths: Vec<i64>,
    },
    Fc {
        x: Vec<i8>,
        w: Vec<i8>,
        b: usize,
        k: usize,
        n: usize,
        x_params: QuantParams,
        w_params: QuantParams,
        out: OutDType,
    },
}

impl Case {
    pub fn op(&self) -> KernelOp {
        match self {
            Case::Quantize { .. } => KernelOp::Quantize,
            Case::Dequantize { .. } => KernelOp::Dequantize,
            Case::Rowwise { .. } => KernelOp::Rowwise4,
            Case::Sls { .. } => KernelOp::Sls,
            Case::Fc { .. } => KernelOp::FcInt8,
        }
    }
}

/// A kernel returns its output as raw bit patterns (f32 bits, or integer
/// codes widened to u32).
pub type KernelFn = fn(&Case) -> Result<Vec<u32>>;

#[derive(Clone, Copy)]
pub struct Kernel {
    pub name: &'static str,
    pub op: KernelOp,
    pub run: KernelFn,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Kernel({} for {})", self.name, self.op)
    }
}

fn f32_bits(v: Vec<f32>) -> Vec<u32> {
    v.into_iter().map(f32::to_bits).collect()
}

fn i8_bits(v: Vec<i8>) -> Vec<u32> {
    v.into_iter().map(|q| u32::from(q as u8)).collect()
}

fn signature(case: &Case, want: KernelOp) -> Result<()> {
    if case.op() == want {
        Ok(())
    } else {
        Err(NumericsError::Kernel(format!("case for {} given to a {want} kernel", case.op())))
    }
}

fn rowwise_bits(t: &RowwiseQuantTable) -> Vec<u32> {
    t.codes
        .iter()
        .map(|&c| u32::from(c))
        .chain(t.scale.iter().map(|s| s.to_bits()))
        .chain(t.bias.iter().map(|b| b.to_bits()))
        .collect()
}

/// Ties-to-even via floor and an explicit parity test.
fn round_even_by_parity(v: f32) -> f32 {
    let f = v.floor();
    let d = v - f;
    if d > 0.5 || (d == 0.5 && (f as i64).rem_euclid(2) == 1) {
        f + 1.0
    } else {
        f
    }
}

fn quantize_ref(c: &Case) -> Result<Vec<u32>> {
    signature(c, KernelOp::Quantize)?;
    let Case::Quantize { x, shape, params } = c else { unreachable!() };
    quantize_int8(x, shape, params).map(i8_bits)
}

fn quantize_alt(c: &Case) -> Result<Vec<u32>> {
    signature(c, KernelOp::Quantize)?;
    let Case::Quantize { x, shape, params } = c else { unreachable!() };
    params.validate(shape)?;
    let out = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let q = round_even_by_parity(v / params.scale_at(i, shape)) as i64 + i64::from(params.zero_point);
            q.clamp(-128, 127) as i8
        })
        .collect();
    Ok(i8_bits(out))
}

fn dequantize_ref(c: &Case) -> Result<Vec<u32>> {
    signature(c, KernelOp::Dequantize)?;
    let Case::Dequantize { q, shape, params } = c else { unreachable!() };
    dequantize_int8(q, shape, params).map(f32_bits)
}

fn dequantize_alt(c: &Case) -> Result<Vec<u32>> {
    // The f64 product of two f32 values is exact, so one final rounding to
    // f32 must equal the f32 multiply.
    signature(c, KernelOp::Dequantize)?;
    let Case::Dequantize { q, shape, params } = c else { unreachable!() };
    params.validate(shape)?;
    let out = q
        .iter()
        .enumerate()
        .map(|(i, &v)| (f64::from(i32::from(v) - params.zero_point) * f64::from(params.scale_at(i, shape))) as f32)
        .collect();
    Ok(f32_bits(out))
}

fn rowwise_ref(c: &Case) -> Result<Vec<u32>> {
    signature(c, KernelOp::Rowwise4)?;
    let Case::Rowwise { table, rows, dim, width } = c else { unreachable!() };
    Ok(rowwise_bits(&quantize_rowwise(table, *rows, *dim, *width)))
}

fn rowwise_alt(c: &Case) -> Result<Vec<u32>> {
    signature(c, KernelOp::Rowwise4)?;
    let Case::Rowwise { table, rows, dim, width } = c else { unreachable!() };
    let levels = ((1u32 << width) - 1) as f32;
    let mut codes = Vec::new();
    let mut scales = Vec::new();
    let mut biases = Vec::new();
    for r in 0..*rows {
        let row = &table[r * dim..(r + 1) * dim];
        let mut sorted = row.to_vec();
        sorted.sort_by(f32::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let mut scale = fp16_round(if hi > lo { (hi - lo) / levels } else { 1.0 });
        if !(scale > 0.0 && scale.is_finite()) {
            scale = 1.0;
        }
        let bias = fp16_round(lo);
        codes.extend(row.iter().map(|&x| round_even_by_parity((x - bias) / scale).clamp(0.0, levels) as u8));
        scales.push(scale);
        biases.push(bias);
    }
    Ok(rowwise_bits(&RowwiseQuantTable {
        width: *width,
        rows: *rows,
        dim: *dim,
        codes,
        scale: scales,
        bias: biases,
    }))
}

fn sls_fast(c: &Case) -> Result<Vec<u32>> {
    signature(c, KernelOp::Sls)?;
    let Case::Sls { table, indices, lengths } = c else { unreachable!() };
    sls_reference(SlsTable::Rowwise(table), indices, lengths).map(f32_bits)
}

fn sls_pool_only(c: &Case) -> Result<Vec<u32>> {
    signature(c, KernelOp::Sls)?;
    let Case::Sls { table, indices, lengths } = c else { unreachable!() };
    sls_general(SlsTable::Rowwise(table), indices, lengths).map(f32_bits)
}

fn fc_operands(c: &Case) -> Result<FcInt8<'_>> {
    signature(c, KernelOp::FcInt8)?;
    let Case::Fc {
        x,
        w,
        b,
        k,
        n,
        x_params,
        w_params,
        out,
    } = c
    else {
        unreachable!()
    };
    Ok(FcInt8 {
        x,
        w,
        b: *b,
        k: *k,
        n: *n,
        x_params,
        w_params,
        out: *out,
    })
}

fn fc_ref(c: &Case) -> Result<Vec<u32>> {
    fc_int8_reference(&fc_operands(c)?).map(f32_bits)
}

fn fc_naive(c: &Case) -> Result<Vec<u32>> {
    fc_int8_naive(&fc_operands(c)?).map(f32_bits)
}

/// The shipped reference kernel and its independent counterpart, per op.
pub fn kernel_pair(op: KernelOp) -> (Kernel, Kernel) {
    let k = |name, run| Kernel { name, op, run };
    match op {
        KernelOp::Quantize => (k("quantize_ref", quantize_ref), k("quantize_parity", quantize_alt)),
        KernelOp::Dequantize => (k("dequantize_ref", dequantize_ref), k("dequantize_f64", dequantize_alt)),
        KernelOp::Rowwise4 => (k("rowwise_ref", rowwise_ref), k("rowwise_sorted", rowwise_alt)),
        KernelOp::Sls => (k("sls_lookup_fast_path", sls_fast), k("sls_general", sls_pool_only)),
        KernelOp::FcInt8 => (k("fc_int8_tiled", fc_ref), k("fc_int8_naive", fc_naive)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub case_id: usize,
    pub op: KernelOp,
    pub index: Option<usize>,
    pub a_bits: Option<u32>,
    pub b_bits: Option<u32>,
    pub cause: Option<String>,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "case {} {}", self.case_id, self.op)?;
        if let Some(i) = self.index {
            write!(f, " index {i}")?;
        }
        let hex = |b: Option<u32>| b.map_or_else(|| "-".to_string(), |b| format!("0x{b:08x}"));
        write!(f, " a={} b={}", hex(self.a_bits), hex(self.b_bits))?;
        if let Some(c) = &self.cause {
            write!(f, " cause: {c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitexactReport {
    pub op: KernelOp,
    pub kernel_a: String,
    pub kernel_b: String,
    pub cases: usize,
    pub mismatches: Vec<Mismatch>,
}

impl BitexactReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// One line per mismatch.
    pub fn render(&self) -> String {
        self.mismatches.iter().map(|m| format!("{m}\n")).collect()
    }
}

fn compare_case(id: usize, op: KernelOp, a: &Kernel, b: &Kernel, case: &Case) -> Option<Mismatch> {
    let miss = |index, a_bits, b_bits, cause| Mismatch {
        case_id: id,
        op,
        index,
        a_bits,
        b_bits,
        cause,
    };
    match ((a.run)(case), (b.run)(case)) {
        (Ok(x), Ok(y)) => {
            if let Some(i) = (0..x.len().min(y.len())).find(|&i| x[i] != y[i]) {
                Some(miss(Some(i), Some(x[i]), Some(y[i]), None))
            } else if x.len() != y.len() {
                let i = x.len().min(y.len());
                Some(miss(
                    Some(i),
                    x.get(i).copied(),
                    y.get(i).copied(),
                    Some(format!("output lengths {} vs {}", x.len(), y.len())),
                ))
            } else {
                None
            }
        }
        // both rejecting the same input is agreement
        (Err(ea), Err(eb)) if ea == eb => None,
        (Err(e), _) => Some(miss(None, None, None, Some(format!("{}: {e}", a.name)))),
        (_, Err(e)) => Some(miss(None, None, None, Some(format!("{}: {e}", b.name)))),
    }
}

/// Runs both kernels on every case and reports bit-level inequality. Cases are
/// independent and evaluated in parallel; the report is ordered by case id.
pub fn bitexact_compare(a: &Kernel, b: &Kernel, cases: &[Case]) -> Result<BitexactReport> {
    if a.op != b.op {
        return Err(NumericsError::Kernel(format!("{} and {} implement different ops", a.name, b.name)));
    }
    let mismatches: Vec<Mismatch> = cases
        .par_iter()
        .enumerate()
        .filter_map(|(id, case)| compare_case(id, a.op, a, b, case))
        .collect();
    Ok(BitexactReport {
        op: a.op,
        kernel_a: a.name.to_string(),
        kernel_b: b.name.to_string(),
        cases: cases.len(),
        mismatches,
    })
}

fn quant_params(rng: &mut ChaCha8Rng, shape: &[usize]) -> QuantParams {
    if shape.len() == 2 && rng.gen_bool(0.3) {
        let scales = (0..shape[1]).map(|_| 10f32.powf(rng.gen_range(-3.0..0.0))).collect();
        QuantParams::per_channel(scales, 1)
    } else {
        QuantParams::per_tensor(10f32.powf(rng.gen_range(-3.0..0.0)), rng.gen_range(-20..=20))
    }
}

fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    if rng.gen_bool(0.5) {
        vec![rng.gen_range(1..=64)]
    } else {
        vec![rng.gen_range(1..=8), rng.gen_range(1..=8)]
    }
}

fn quantize_case(rng: &mut ChaCha8Rng) -> Case {
    let shape = random_shape(rng);
    let n: usize = shape.iter().product();
    if rng.gen_bool(0.25) {
        // exact half-way points on a power-of-two grid
        let scale = 2f32.powi(-rng.gen_range(0..8));
        let x = (0..n).map(|_| (rng.gen_range(-100..100) as f32 + 0.5) * scale).collect();
        return Case::Quantize {
            x,
            shape: vec![n],
            params: QuantParams::symmetric(scale),
        };
    }
    let params = quant_params(rng, &shape);
    let x = (0..n).map(|_| rng.gen_range(-2.0f32..2.0) * 64.0 * params.scale[0]).collect();
    Case::Quantize { x, shape, params }
}

fn rowwise_table(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<f32> {
    let spread = 10f32.powf(rng.gen_range(-2.0..1.0));
    (0..rows * dim).map(|_| rng.gen_range(-1.0f32..1.0) * spread).collect()
}

/// Seeded random corpus for one op signature.
pub fn corpus(op: KernelOp, n: usize, seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (op as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..n)
        .map(|_| match op {
            KernelOp::Quantize => quantize_case(&mut rng),
            KernelOp::Dequantize => {
                let shape = random_shape(&mut rng);
                let len: usize = shape.iter().product();
                let params = quant_params(&mut rng, &shape);
                let q = (0..len).map(|_| rng.gen::<i8>()).collect();
                Case::Dequantize { q, shape, params }
            }
            KernelOp::Rowwise4 => {
                let rows = rng.gen_range(1..=8);
                let dim = rng.gen_range(1..=32);
                Case::Rowwise {
                    table: rowwise_table(&mut rng, rows, dim),
                    rows,
                    dim,
                    width: 4,
                }
            }
            KernelOp::Sls => {
                let rows = rng.gen_range(1..=50);
                let dim = rng.gen_range(1..=16);
                let table = quantize_rowwise(&rowwise_table(&mut rng, rows, dim), rows, dim, 4);
                let batch = rng.gen_range(1..=8);
                // single lookups are common so the shortcut is exercised
                let lengths: Vec<i64> = (0..batch)
                    .map(|_| if rng.gen_bool(0.4) { 1 } else { rng.gen_range(0..=4) })
                    .collect();
                let total: i64 = lengths.iter().sum();
                let indices = (0..total).map(|_| rng.gen_range(0..rows as i64)).collect();
                Case::Sls {
                    table,
                    indices,
                    lengths,
                }
            }
            KernelOp::FcInt8 => {
                let b = rng.gen_range(1..=4);
                let k = rng.gen_range(1..=96);
                let n = rng.gen_range(1..=16);
                let x = (0..b * k).map(|_| rng.gen::<i8>()).collect();
                let w = (0..k * n).map(|_| rng.gen::<i8>()).collect();
                let x_params = QuantParams::per_tensor(10f32.powf(rng.gen_range(-3.0..0.0)), rng.gen_range(-128..=127));
                let w_params = if rng.gen_bool(0.5) {
                    QuantParams::per_channel((0..n).map(|_| 10f32.powf(rng.gen_range(-3.0..0.0))).collect(), 1)
                } else {
                    QuantParams::symmetric(10f32.powf(rng.gen_range(-3.0..0.0)))
                };
                let out = if rng.gen_bool(0.5) { OutDType::Fp16 } else { OutDType::Fp32 };
                Case::Fc {
                    x,
                    w,
                    b,
                    k,
                    n,
                    x_params,
                    w_params,
                    out,
                }
            }
        })
        .collect()
}
