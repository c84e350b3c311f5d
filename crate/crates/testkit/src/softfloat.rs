//! Reference rounding from binary32 into narrower IEEE-style formats.
//!
//! Works on the exact integer significand of the input, so it shares no
//! machinery (and no bugs) with bit-shifting fast paths: decode |x| as
//! m * 2^k with integer m, round m to the destination's unit in the last
//! place with ties to even, then rebuild the value.

/// A binary floating-point format narrower than binary32.
#[derive(Clone, Copy, Debug)]
pub struct MiniFormat {
    /// Significand bits including the implicit leading one.
    pub precision: u32,
    /// Smallest normal exponent e, for values 1.f * 2^e.
    pub min_exp: i32,
    /// Largest normal exponent.
    pub max_exp: i32,
}

/// IEEE binary16: 1 sign, 5 exponent, 10 fraction bits.
pub const HALF: MiniFormat = MiniFormat {
    precision: 11,
    min_exp: -14,
    max_exp: 15,
};

/// bfloat16: 1 sign, 8 exponent, 7 fraction bits.
pub const BRAIN: MiniFormat = MiniFormat {
    precision: 8,
    min_exp: -126,
    max_exp: 127,
};

/// Round `x` to the nearest value representable in `fmt` (ties to even),
/// returned as the binary32 value it expands back to. NaN becomes the
/// canonical quiet NaN, infinities and zeros pass through with their sign,
/// and magnitudes beyond the format's largest finite value become infinite.
pub fn round_to_format(x: f32, fmt: MiniFormat) -> f32 {
    if x.is_nan() {
        return f32::from_bits(0x7FC0_0000);
    }
    if x.is_infinite() || x == 0.0 {
        return x;
    }
    let bits = x.to_bits();
    let neg = bits >> 31 == 1;
    let biased = ((bits >> 23) & 0xFF) as i32;
    let frac = bits & 0x7F_FFFF;

    // |x| = m * 2^k exactly, m a positive integer below 2^24.
    let (m, k): (u64, i32) = if biased == 0 {
        (u64::from(frac), -126 - 23)
    } else {
        (u64::from(frac | 0x80_0000), biased - 127 - 23)
    };

    // Exponent of the leading bit of |x|, i.e. floor(log2 |x|).
    let msb = 63 - m.leading_zeros() as i32 + k;
    // Destination unit in the last place, floored at the subnormal unit.
    let prec = fmt.precision as i32;
    let ulp = (msb - (prec - 1)).max(fmt.min_exp - (prec - 1));
    let shift = ulp - k;
    assert!(shift >= 0, "binary32 inputs never need upshifting");

    let q: u64 = if shift >= 64 {
        0
    } else {
        let s = shift as u32;
        let floor = m >> s;
        if s == 0 {
            floor
        } else {
            let rem = m & ((1u64 << s) - 1);
            let half = 1u64 << (s - 1);
            if rem > half || (rem == half && floor & 1 == 1) {
                floor + 1
            } else {
                floor
            }
        }
    };

    if q == 0 {
        return if neg { -0.0 } else { 0.0 };
    }
    // Rounding may carry into the next binade; recheck against max_exp.
    let q_msb = 63 - q.leading_zeros() as i32 + ulp;
    if q_msb > fmt.max_exp {
        return if neg { f32::NEG_INFINITY } else { f32::INFINITY };
    }

    // q * 2^ulp, assembled exactly: q has at most `precision` + 1 bits and
    // ulp stays well inside the f64 normal range.
    let scale = f64::from_bits(((ulp + 1023) as u64) << 52);
    let mag = (q as f64 * scale) as f32;
    if neg {
        -mag
    } else {
        mag
    }
}
