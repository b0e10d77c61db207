//! IEEE-754 binary16 codec: 1 sign bit, 5 exponent bits (bias 15),
//! 10 significand bits.

pub const F16_POS_INFINITY: u16 = 0x7C00;
pub const F16_NEG_INFINITY: u16 = 0xFC00;
pub const F16_MAX: f32 = 65504.0;
/// Smallest positive normal, 2^-14.
pub const F16_MIN_POSITIVE: f32 = 6.103_515_6e-5;

/// Rounds to nearest, ties to even. Overflow saturates to infinity,
/// underflow produces subnormals or signed zero, NaN stays NaN (quiet).
pub fn f32_to_f16_bits(value: f32) -> u16 {
    let bits = value.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let man = bits & 0x007F_FFFF;

    if exp == 0xFF {
        if man == 0 {
            return sign | F16_POS_INFINITY;
        }
        // keep the top payload bits, force quiet
        return sign | F16_POS_INFINITY | 0x0200 | (man >> 13) as u16;
    }

    let half_exp = exp - 127 + 15;
    if half_exp >= 0x1F {
        return sign | F16_POS_INFINITY;
    }

    if half_exp <= 0 {
        // Subnormal result: significand in units of 2^-24.
        if half_exp < -10 {
            return sign;
        }
        let full = man | 0x0080_0000;
        let shift = (14 - half_exp) as u32;
        let mut half_man = full >> shift;
        let rem = full & ((1 << shift) - 1);
        let halfway = 1 << (shift - 1);
        if rem > halfway || (rem == halfway && half_man & 1 == 1) {
            // may carry into the exponent field, giving the smallest normal
            half_man += 1;
        }
        return sign | half_man as u16;
    }

    let mut out = ((half_exp as u32) << 10) | (man >> 13);
    let rem = man & 0x1FFF;
    if rem > 0x1000 || (rem == 0x1000 && out & 1 == 1) {
        // carry may roll the exponent up, up to infinity
        out += 1;
    }
    sign | out as u16
}

/// Exact widening conversion.
pub fn f16_bits_to_f32(bits: u16) -> f32 {
    let sign = ((bits & 0x8000) as u32) << 16;
    let exp = ((bits >> 10) & 0x1F) as u32;
    let man = (bits & 0x03FF) as u32;

    let out = match (exp, man) {
        (0, 0) => sign,
        (0, _) => {
            // subnormal: normalise into an f32 normal
            let lead = man.leading_zeros() - 22; // zeros within the 10-bit field
            let shifted = (man << (lead + 1)) & 0x03FF;
            let e = 127 - 15 - lead;
            sign | (e << 23) | (shifted << 13)
        }
        (0x1F, 0) => sign | 0x7F80_0000,
        (0x1F, _) => sign | 0x7FC0_0000 | (man << 13),
        _ => sign | ((exp + 127 - 15) << 23) | (man << 13),
    };
    f32::from_bits(out)
}

/// Value after an encode/decode cycle.
pub fn round_to_f16(value: f32) -> f32 {
    f16_bits_to_f32(f32_to_f16_bits(value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_patterns() {
        assert_eq!(f32_to_f16_bits(1.0), 0x3C00);
        assert_eq!(f32_to_f16_bits(0.5), 0x3800);
        assert_eq!(f32_to_f16_bits(-2.0), 0xC000);
        assert_eq!(f32_to_f16_bits(65536.0), F16_POS_INFINITY);
        assert_eq!(f32_to_f16_bits(F16_MAX), 0x7BFF);
    }

    #[test]
    fn decode_is_exact_for_every_pattern() {
        for bits in 0..=u16::MAX {
            let v = f16_bits_to_f32(bits);
            if v.is_nan() {
                assert!(f32_to_f16_bits(v) & 0x7C00 == 0x7C00 && f32_to_f16_bits(v) & 0x03FF != 0);
            } else {
                assert_eq!(f32_to_f16_bits(v), bits, "pattern {bits:#06x}");
            }
        }
    }

    #[test]
    fn ties_round_to_even() {
        // 1 + 2^-11 sits halfway between 1.0 and 1 + 2^-10
        assert_eq!(f32_to_f16_bits(1.0 + f32::powi(2.0, -11)), 0x3C00);
        // 1 + 3*2^-11 is halfway between odd 0x3C01 and even 0x3C02
        assert_eq!(f32_to_f16_bits(1.0 + 3.0 * f32::powi(2.0, -11)), 0x3C02);
        // halfway below the smallest subnormal goes to zero
        assert_eq!(f32_to_f16_bits(f32::powi(2.0, -25)), 0x0000);
        assert_eq!(f32_to_f16_bits(f32::powi(2.0, -25) * 1.0001), 0x0001);
    }
}
