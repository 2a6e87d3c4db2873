//! Binary16 and bfloat16 rounding at the bit level.

/// Rounds an f32 onto the binary16 grid (round to nearest, ties to even).
///
/// Values beyond the largest finite half overflow to a signed infinity,
/// subnormal halves are preserved and NaN stays NaN.
pub fn fp16_round(x: f32) -> f32 {
    f16_bits_to_f32(f32_to_f16_bits(x))
}

/// Rounds an f32 onto the bfloat16 grid (ties to even).
pub fn bf16_round(x: f32) -> f32 {
    f32::from_bits(u32::from(f32_to_bf16_bits(x)) << 16)
}

fn round_shift(value: u32, shift: u32) -> u32 {
    if shift == 0 {
        return value;
    }
    if shift >= 32 {
        return 0;
    }
    let kept = value >> shift;
    let rem = value & ((1u32 << shift) - 1);
    let half = 1u32 << (shift - 1);
    if rem > half || (rem == half && kept & 1 == 1) {
        kept + 1
    } else {
        kept
    }
}

pub fn f32_to_f16_bits(x: f32) -> u16 {
    let b = x.to_bits();
    let sign = ((b >> 16) & 0x8000) as u16;
    let exp = ((b >> 23) & 0xff) as i32;
    let man = b & 0x007f_ffff;
    if exp == 0xff {
        return if man == 0 { sign | 0x7c00 } else { sign | 0x7e00 | (man >> 13) as u16 };
    }
    let e = exp - 127 + 15;
    if e >= 0x1f {
        return sign | 0x7c00;
    }
    if e <= 0 {
        if exp == 0 {
            // f32 subnormals are far below the smallest half subnormal
            return sign;
        }
        let m = man | 0x0080_0000;
        let shift = (14 - e) as u32;
        if shift > 24 {
            return sign;
        }
        // a carry out of the subnormal range lands on the smallest normal
        return sign | round_shift(m, shift) as u16;
    }
    let unrounded = ((e as u32) << 10) | (man >> 13);
    let rem = man & 0x1fff;
    let up = rem > 0x1000 || (rem == 0x1000 && unrounded & 1 == 1);
    // a carry may ripple into the exponent and reach 0x7c00 (infinity)
    sign | (unrounded + u32::from(up)) as u16
}

pub fn f16_bits_to_f32(h: u16) -> f32 {
    let sign = u32::from(h & 0x8000) << 16;
    let exp = u32::from((h >> 10) & 0x1f);
    let man = u32::from(h & 0x03ff);
    let bits = match (exp, man) {
        (0, 0) => sign,
        (0, _) => {
            // normalise the subnormal
            let mut e = 127 - 15 + 1;
            let mut m = man;
            while m & 0x0400 == 0 {
                m <<= 1;
                e -= 1;
            }
            sign | ((e as u32) << 23) | ((m & 0x03ff) << 13)
        }
        (0x1f, 0) => sign | 0x7f80_0000,
        (0x1f, _) => sign | 0x7fc0_0000 | (man << 13),
        _ => sign | ((exp + 127 - 15) << 23) | (man << 13),
    };
    f32::from_bits(bits)
}

pub fn f32_to_bf16_bits(x: f32) -> u16 {
    let b = x.to_bits();
    if x.is_nan() {
        return ((b >> 16) as u16) | 0x0040;
    }
    // NaN is excluded above, so the carry can at most reach infinity
    round_shift(b, 16) as u16
}
