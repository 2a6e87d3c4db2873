use serde::{Deserialize, Serialize};

use super::{NumericsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantScheme {
    PerTensorAsymmetric,
    PerChannelSymmetric,
}

/// Affine int8 quantization parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scheme: QuantScheme,
    /// One entry per tensor, or one per channel along `axis`.
    pub scale: Vec<f32>,
    pub zero_point: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<usize>,
}

impl QuantParams {
    pub fn per_tensor(scale: f32, zero_point: i32) -> Self {
        Self {
            scheme: QuantScheme::PerTensorAsymmetric,
            scale: vec![scale],
            zero_point,
            axis: None,
        }
    }

    pub fn symmetric(scale: f32) -> Self {
        Self::per_tensor(scale, 0)
    }

    pub fn per_channel(scales: Vec<f32>, axis: usize) -> Self {
        Self {
            scheme: QuantScheme::PerChannelSymmetric,
            scale: scales,
            zero_point: 0,
            axis: Some(axis),
        }
    }

    /// Asymmetric per-tensor parameters covering `[min, max]` (widened to
    /// include zero so zero is exactly representable).
    pub fn from_range(min: f32, max: f32) -> Self {
        let lo = min.min(0.0);
        let hi = max.max(0.0);
        let span = hi - lo;
        let scale = if span > 0.0 && span.is_finite() { span / 255.0 } else { 1.0 };
        let zp = (-128.0 - lo / scale).round_ties_even().clamp(-128.0, 127.0) as i32;
        Self::per_tensor(scale, zp)
    }

    /// Symmetric per-channel parameters from each channel's absolute maximum.
    pub fn symmetric_per_channel(x: &[f32], shape: &[usize], axis: usize) -> Self {
        let channels = shape.get(axis).copied().unwrap_or(1);
        let mut absmax = vec![0.0f32; channels];
        for (i, v) in x.iter().enumerate() {
            let c = channel_of(i, shape, axis);
            absmax[c] = absmax[c].max(v.abs());
        }
        let scales = absmax
            .into_iter()
            .map(|m| if m > 0.0 { m / 127.0 } else { 1.0 })
            .collect();
        Self::per_channel(scales, axis)
    }

    pub fn validate(&self, shape: &[usize]) -> Result<()> {
        if self.scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(NumericsError::NonPositiveScale);
        }
        if !(-128..=127).contains(&self.zero_point) {
            return Err(NumericsError::ZeroPoint(self.zero_point));
        }
        match self.scheme {
            QuantScheme::PerTensorAsymmetric => {
                if self.scale.len() != 1 {
                    return Err(NumericsError::ChannelCount {
                        expected: 1,
                        got: self.scale.len(),
                    });
                }
            }
            QuantScheme::PerChannelSymmetric => {
                let axis = self.axis.ok_or(NumericsError::MissingAxis)?;
                let extent = *shape.get(axis).ok_or(NumericsError::MissingAxis)?;
                if self.scale.len() != extent {
                    return Err(NumericsError::ChannelCount {
                        expected: extent,
                        got: self.scale.len(),
                    });
                }
                if self.zero_point != 0 {
                    return Err(NumericsError::ZeroPoint(self.zero_point));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn scale_at(&self, flat: usize, shape: &[usize]) -> f32 {
        match self.axis {
            Some(axis) if self.scheme == QuantScheme::PerChannelSymmetric => self.scale[channel_of(flat, shape, axis)],
            _ => self.scale[0],
        }
    }
}

fn channel_of(flat: usize, shape: &[usize], axis: usize) -> usize {
    let inner: usize = shape[axis + 1..].iter().product();
    (flat / inner.max(1)) % shape[axis].max(1)
}

fn check_len(len: usize, shape: &[usize]) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != len {
        return Err(NumericsError::Shape(format!("{len} elements for shape {shape:?}")));
    }
    Ok(())
}

/// `q = clamp(round_half_even(x / scale) + zero_point, -128, 127)`, in f32.
pub fn quantize_int8(x: &[f32], shape: &[usize], p: &QuantParams) -> Result<Vec<i8>> {
    check_len(x.len(), shape)?;
    p.validate(shape)?;
    let zp = p.zero_point as f32;
    Ok(x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let q = (v / p.scale_at(i, shape)).round_ties_even() + zp;
            q.clamp(-128.0, 127.0) as i8
        })
        .collect())
}

/// `x = (q - zero_point) * scale`, in f32.
pub fn dequantize_int8(q: &[i8], shape: &[usize], p: &QuantParams) -> Result<Vec<f32>> {
    check_len(q.len(), shape)?;
    p.validate(shape)?;
    Ok(q.iter()
        .enumerate()
        .map(|(i, &v)| (i32::from(v) - p.zero_point) as f32 * p.scale_at(i, shape))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_example_ties_to_even() {
        let p = QuantParams::symmetric(1.0 / 127.0);
        let q = quantize_int8(&[-1.0, 0.0, 0.5], &[3], &p).unwrap();
        assert_eq!(q, vec![-127, 0, 64]);
        let x = dequantize_int8(&q, &[3], &p).unwrap();
        assert_eq!(x[0], -1.0);
        assert_eq!(x[1], 0.0);
        assert!((x[2] - 64.0 / 127.0).abs() < 1e-7);
    }

    #[test]
    fn zeros_map_to_zero_point() {
        let p = QuantParams::per_tensor(0.1, -17);
        assert_eq!(quantize_int8(&[0.0; 5], &[5], &p).unwrap(), vec![-17; 5]);
    }

    #[test]
    fn bad_scale_rejected() {
        let p = QuantParams::symmetric(0.0);
        assert_eq!(quantize_int8(&[1.0], &[1], &p), Err(NumericsError::NonPositiveScale));
        let p = QuantParams::symmetric(-1.0);
        assert!(dequantize_int8(&[1], &[1], &p).is_err());
    }

    #[test]
    fn per_channel_needs_matching_scale_count() {
        let p = QuantParams::per_channel(vec![1.0, 2.0], 1);
        assert!(quantize_int8(&[0.0; 6], &[2, 3], &p).is_err());
        let p = QuantParams::per_channel(vec![1.0, 2.0, 4.0], 1);
        let q = quantize_int8(&[4.0; 6], &[2, 3], &p).unwrap();
        assert_eq!(q, vec![4, 2, 1, 4, 2, 1]);
    }

    #[test]
    fn range_params_cover_the_range() {
        let p = QuantParams::from_range(-1.0, 3.0);
        let q = quantize_int8(&[-1.0, 0.0, 3.0], &[3], &p).unwrap();
        assert_eq!(q[0], -128);
        assert_eq!(q[2], 127);
        let x = dequantize_int8(&q, &[3], &p).unwrap();
        assert_eq!(x[1], 0.0);
    }
}
