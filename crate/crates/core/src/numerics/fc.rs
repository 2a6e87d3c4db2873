use super::fp16::fp16_round;
use super::quant::{QuantParams, QuantScheme};
use super::{NumericsError, Result};

/// Largest reduction length the int32 accumulator holds exactly:
/// `|x - zx| <= 255` and `|w| <= 128`, so `65536 * 255 * 128 < 2^31`.
pub const MAX_FC_K: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutDType {
    Fp16,
    Fp32,
}

/// Operands of a quantized FC: `x` is `[b, k]`, `w` is `[k, n]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FcInt8<'a> {
    pub x: &'a [i8],
    pub w: &'a [i8],
    pub b: usize,
    pub k: usize,
    pub n: usize,
    pub x_params: &'a QuantParams,
    pub w_params: &'a QuantParams,
    pub out: OutDType,
}

impl FcInt8<'_> {
    fn check(&self) -> Result<()> {
        if self.x.len() != self.b * self.k || self.w.len() != self.k * self.n {
            return Err(NumericsError::Shape(format!(
                "x {} / w {} elements for [{}, {}] x [{}, {}]",
                self.x.len(),
                self.w.len(),
                self.b,
                self.k,
                self.k,
                self.n
            )));
        }
        if self.k > MAX_FC_K {
            return Err(NumericsError::ReductionTooLong { k: self.k, max: MAX_FC_K });
        }
        self.x_params.validate(&[self.b, self.k])?;
        if self.x_params.scheme != QuantScheme::PerTensorAsymmetric {
            return Err(NumericsError::Shape("activation params must be per-tensor".into()));
        }
        self.w_params.validate(&[self.k, self.n])?;
        if self.w_params.zero_point != 0 {
            return Err(NumericsError::ZeroPoint(self.w_params.zero_point));
        }
        if self.w_params.scheme == QuantScheme::PerChannelSymmetric && self.w_params.axis != Some(1) {
            return Err(NumericsError::Shape("weight channels must run along N (axis 1)".into()));
        }
        Ok(())
    }

    /// `acc * x_scale * w_scale[n]`, evaluated in f64 and rounded once to f32,
    /// then to fp16 when requested.
    pub(crate) fn requantize(&self, acc: i32, col: usize) -> f32 {
        let ws = if self.w_params.scale.len() == 1 {
            self.w_params.scale[0]
        } else {
            self.w_params.scale[col]
        };
        let v = (f64::from(acc) * f64::from(self.x_params.scale[0]) * f64::from(ws)) as f32;
        match self.out {
            OutDType::Fp32 => v,
            OutDType::Fp16 => fp16_round(v),
        }
    }
}

/// Quantized FC with exact int32 accumulation, processed in `tile` x `tile`
/// blocks over K and N. Integer accumulation is associative, so the result does
/// not depend on the tile size.
pub fn fc_int8_tiled(op: &FcInt8<'_>, tile: usize) -> Result<Vec<f32>> {
    op.check()?;
    let tile = tile.max(1);
    let zx = op.x_params.zero_point;
    let mut acc = vec![0i32; op.b * op.n];
    for k0 in (0..op.k).step_by(tile) {
        let k1 = (k0 + tile).min(op.k);
        for n0 in (0..op.n).step_by(tile) {
            let n1 = (n0 + tile).min(op.n);
            for r in 0..op.b {
                let xrow = &op.x[r * op.k..(r + 1) * op.k];
                let arow = &mut acc[r * op.n..(r + 1) * op.n];
                for kk in k0..k1 {
                    let xv = i32::from(xrow[kk]) - zx;
                    let wrow = &op.w[kk * op.n..(kk + 1) * op.n];
                    for nn in n0..n1 {
                        arow[nn] += xv * i32::from(wrow[nn]);
                    }
                }
            }
        }
    }
    Ok(acc
        .iter()
        .enumerate()
        .map(|(i, &a)| op.requantize(a, i % op.n))
        .collect())
}

pub fn fc_int8_reference(op: &FcInt8<'_>) -> Result<Vec<f32>> {
    fc_int8_tiled(op, 64)
}

/// The textbook triple loop, kept as the comparison kernel.
pub fn fc_int8_naive(op: &FcInt8<'_>) -> Result<Vec<f32>> {
    op.check()?;
    let zx = op.x_params.zero_point;
    let mut out = Vec::with_capacity(op.b * op.n);
    for r in 0..op.b {
        for c in 0..op.n {
            let mut acc = 0i32;
            for kk in 0..op.k {
                acc += (i32::from(op.x[r * op.k + kk]) - zx) * i32::from(op.w[kk * op.n + c]);
            }
            out.push(op.requantize(acc, c));
        }
    }
    Ok(out)
}
