//! Emulated storage precisions. Values always live in binary32; quantizing
//! rounds them to the nearest value representable in the target format
//! (ties to even) and expands back, so every result is exactly expressible
//! both as the narrow format and as binary32.

use serde::{Deserialize, Serialize};

/// Canonical quiet NaN produced by any quantization of a NaN.
const CANONICAL_NAN: u32 = 0x7FC0_0000;

/// The arithmetic format a forward pass emulates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionMode {
    Fp32,
    Fp16,
    Bf16,
}

impl PrecisionMode {
    /// Every mode, in the fixed order used for reports and precision sets.
    pub const ALL: [PrecisionMode; 3] = [PrecisionMode::Fp32, PrecisionMode::Fp16, PrecisionMode::Bf16];

    pub fn name(self) -> &'static str {
        match self {
            PrecisionMode::Fp32 => "fp32",
            PrecisionMode::Fp16 => "fp16",
            PrecisionMode::Bf16 => "bf16",
        }
    }
}

impl std::fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PrecisionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fp32" => Ok(PrecisionMode::Fp32),
            "fp16" => Ok(PrecisionMode::Fp16),
            "bf16" => Ok(PrecisionMode::Bf16),
            other => Err(format!("unknown precision mode {other:?} (expected fp32, fp16, or bf16)")),
        }
    }
}

/// Round a binary32 value to what the given mode can store.
///
/// Fp32 is the identity. Fp16 honors subnormals and overflows to signed
/// infinity past 65504. Bf16 keeps the binary32 exponent range and rounds
/// the significand to 7 fraction bits. NaN always becomes the canonical
/// quiet NaN; zeros keep their sign.
#[inline]
pub fn quantize(x: f32, mode: PrecisionMode) -> f32 {
    match mode {
        PrecisionMode::Fp32 => x,
        PrecisionMode::Fp16 => {
            if x.is_nan() {
                return f32::from_bits(CANONICAL_NAN);
            }
            f16_bits_to_f32(f32_to_f16_bits(x))
        }
        PrecisionMode::Bf16 => {
            if x.is_nan() {
                return f32::from_bits(CANONICAL_NAN);
            }
            let bits = x.to_bits();
            // Round to nearest even on the high half: add 0x7FFF plus the
            // keep-bit's LSB, then truncate. Carries ripple into the exponent
            // and, from the largest finite values, on into infinity.
            let rounded = bits.wrapping_add(0x7FFF + ((bits >> 16) & 1));
            f32::from_bits(rounded & 0xFFFF_0000)
        }
    }
}

/// Quantize a slice in place.
pub fn quantize_buffer(xs: &mut [f32], mode: PrecisionMode) {
    if mode == PrecisionMode::Fp32 {
        return;
    }
    for x in xs {
        *x = quantize(*x, mode);
    }
}

/// Binary32 to binary16 bit pattern, round to nearest even.
fn f32_to_f16_bits(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let abs = bits & 0x7FFF_FFFF;
    if abs >= 0x7F80_0000 {
        // Infinity; NaN was handled by the caller.
        return sign | 0x7C00;
    }
    let e = (abs >> 23) as i32;
    if e == 0 {
        // Binary32 subnormals sit below half the smallest binary16 subnormal.
        return sign;
    }
    let sig = (abs & 0x7F_FFFF) | 0x80_0000;
    let unbiased = e - 127;
    if unbiased >= 16 {
        return sign | 0x7C00;
    }
    let e16 = unbiased + 15;
    // Normal targets drop 13 significand bits; subnormal targets drop more
    // as the exponent shortfall grows.
    let shift = if e16 >= 1 { 13 } else { 14 - e16 } as u32;
    if shift > 24 {
        return sign;
    }
    let round = ((1u32 << (shift - 1)) - 1) + ((sig >> shift) & 1);
    let r = (sig + round) >> shift;
    if e16 >= 1 {
        // r carries the implicit bit, so exponent carries (including the one
        // that lands on infinity) fall out of the addition.
        sign | (((e16 as u32 - 1) << 10) + r) as u16
    } else {
        sign | r as u16
    }
}

/// Exact expansion of a binary16 bit pattern to binary32.
fn f16_bits_to_f32(h: u16) -> f32 {
    let sign = u32::from(h >> 15) << 31;
    let e = (u32::from(h) >> 10) & 0x1F;
    let m = u32::from(h) & 0x3FF;
    if e == 0x1F {
        return f32::from_bits(sign | 0x7F80_0000 | (m << 13));
    }
    if e == 0 {
        if m == 0 {
            return f32::from_bits(sign);
        }
        // Subnormal: m * 2^-24, exact in binary32.
        let mag = m as f32 * f32::from_bits(0x3380_0000);
        return if sign != 0 { -mag } else { mag };
    }
    f32::from_bits(sign | ((e + 112) << 23) | (m << 13))
}
