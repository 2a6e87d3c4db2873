use serde::{Deserialize, Serialize};

use super::fp16::fp16_round;

/// Embedding table quantized row by row to 4- or 8-bit unsigned codes.
///
/// Scale and bias are stored as fp16 values (kept here already rounded, as
/// f32). A row dequantizes as `code * scale + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowwiseQuantTable {
    pub width: u32,
    pub rows: usize,
    pub dim: usize,
    pub codes: Vec<u8>,
    pub scale: Vec<f32>,
    pub bias: Vec<f32>,
}

impl RowwiseQuantTable {
    pub fn max_code(&self) -> u32 {
        (1u32 << self.width) - 1
    }

    /// Dequantized row `r`, written into `out`.
    pub fn dequantize_row_into(&self, r: usize, out: &mut [f32]) {
        let codes = &self.codes[r * self.dim..(r + 1) * self.dim];
        let (s, b) = (self.scale[r], self.bias[r]);
        for (o, &c) in out.iter_mut().zip(codes) {
            *o = f32::from(c) * s + b;
        }
    }

    pub fn dequantize_row(&self, r: usize) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        self.dequantize_row_into(r, &mut out);
        out
    }

    pub fn dequantize(&self) -> Vec<f32> {
        (0..self.rows).flat_map(|r| self.dequantize_row(r)).collect()
    }
}

/// Row-wise quantization with `bias = min(row)` and
/// `scale = (max - min) / (2^width - 1)` (1 for constant rows). Codes are
/// computed against the stored (fp16) scale and bias.
///
/// # Panics
/// If `width` is not 4 or 8 or the table is not `rows * dim` long.
pub fn quantize_rowwise(table: &[f32], rows: usize, dim: usize, width: u32) -> RowwiseQuantTable {
    assert!(width == 4 || width == 8, "row-wise width must be 4 or 8");
    assert_eq!(table.len(), rows * dim, "table is not rows x dim");
    let max_code = ((1u32 << width) - 1) as f32;
    let mut codes = Vec::with_capacity(rows * dim);
    let mut scales = Vec::with_capacity(rows);
    let mut biases = Vec::with_capacity(rows);
    for row in table.chunks(dim.max(1)).take(rows) {
        let lo = row.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let raw = if hi > lo { (hi - lo) / max_code } else { 1.0 };
        let mut scale = fp16_round(raw);
        if !(scale > 0.0) || !scale.is_finite() {
            scale = 1.0;
        }
        let bias = fp16_round(lo);
        for &x in row {
            let c = ((x - bias) / scale).round_ties_even().clamp(0.0, max_code);
            codes.push(c as u8);
        }
        scales.push(scale);
        biases.push(bias);
    }
    RowwiseQuantTable {
        width,
        rows,
        dim,
        codes,
        scale: scales,
        bias: biases,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_row_lands_on_grid() {
        let t = quantize_rowwise(&[0.0, 1.0, 2.0, 3.0], 1, 4, 4);
        assert_eq!(t.codes, vec![0, 5, 10, 15]);
        assert_eq!(t.bias[0], 0.0);
        assert_eq!(t.scale[0], fp16_round(0.2));
        for (x, want) in t.dequantize_row(0).into_iter().zip([0.0, 1.0, 2.0, 3.0]) {
            assert!((x - want).abs() < 1e-3, "{x} vs {want}");
        }
    }

    #[test]
    fn constant_row_uses_unit_scale() {
        let t = quantize_rowwise(&[7.0, 7.0], 1, 2, 4);
        assert_eq!((t.scale[0], t.bias[0]), (1.0, 7.0));
        assert_eq!(t.codes, vec![0, 0]);
    }

    #[test]
    fn eight_bit_codes_bounded() {
        let row: Vec<f32> = (0..64).map(|i| (i as f32 * 0.37).sin() * 50.0).collect();
        let t = quantize_rowwise(&row, 2, 32, 8);
        assert!(t.codes.iter().all(|&c| u32::from(c) <= 255));
        assert_eq!(t.max_code(), 255);
    }
}
