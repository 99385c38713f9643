//! BF16 storage: the upper 16 bits of an IEEE-754 single (1 sign, 8 exponent,
//! 7 fraction bits), rounded to nearest-even on the dropped half.

/// Raw BF16 bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(transparent)]
pub struct Bf16(pub u16);

const SIGN_MASK: u16 = 0x8000;
const ABS_INF: u16 = 0x7F80;
const ABS_MAX_FINITE: u16 = 0x7F7F;

impl Bf16 {
    pub const MAX: Bf16 = Bf16(ABS_MAX_FINITE);

    /// Round-to-nearest-even. Finite inputs that would round past the largest
    /// finite BF16 saturate to it instead of becoming infinite.
    pub fn from_f32(x: f32) -> Bf16 {
        let bits = x.to_bits();
        if x.is_nan() {
            // keep it a quiet NaN
            return Bf16((bits >> 16) as u16 | 0x0040);
        }
        let lsb = (bits >> 16) & 1;
        let out = (bits.wrapping_add(0x7FFF + lsb) >> 16) as u16;
        if x.is_finite() && out & !SIGN_MASK == ABS_INF {
            return Bf16((out & SIGN_MASK) | ABS_MAX_FINITE);
        }
        Bf16(out)
    }

    /// Exact widening.
    pub fn to_f32(self) -> f32 {
        f32::from_bits(u32::from(self.0) << 16)
    }

    pub fn to_bits(self) -> u16 {
        self.0
    }
}

/// Nearest BF16 value of `x`, returned widened to f32.
pub fn to_bf16(x: f32) -> f32 {
    Bf16::from_f32(x).to_f32()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent reference: pick the closer of the two BF16 neighbours by
    /// exact f64 distance; ties go to the even mantissa.
    fn reference(x: f32) -> u16 {
        let bits = x.to_bits();
        let down = (bits >> 16) as u16;
        let up = down.wrapping_add(1);
        let lo = f64::from(f32::from_bits(u32::from(down) << 16));
        let hi = f64::from(f32::from_bits(u32::from(up) << 16));
        let xv = f64::from(x);
        let (dl, dh) = ((xv - lo).abs(), (hi - xv).abs());
        if dl < dh || (dl == dh && down & 1 == 0) {
            down
        } else {
            up
        }
    }

    #[test]
    fn exact_values() {
        assert_eq!(to_bf16(1.0), 1.0);
        assert_eq!(to_bf16(0.0), 0.0);
        assert_eq!(to_bf16(-2.5), -2.5);
        assert_eq!(to_bf16(-0.0).to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn point_two() {
        // 0.2f32 = 0x3E4CCCCD; dropped half 0xCCCD > 0x8000 rounds up to 0x3E4D.
        let b = Bf16::from_f32(0.2);
        assert_eq!(b.to_bits(), 0x3E4D);
        assert_eq!(b.to_bits(), reference(0.2));
        assert_eq!(b.to_f32(), 0.200_195_312_5);
        assert_eq!(b.to_bits(), half::bf16::from_f32(0.2).to_bits());
    }

    #[test]
    fn ties_go_to_even() {
        // 1 + 2^-8 sits exactly between 1.0 (even) and 1 + 2^-7.
        assert_eq!(to_bf16(1.0 + 2f32.powi(-8)), 1.0);
        // 1 + 3·2^-8 sits between 1 + 2^-7 (odd) and 1 + 2^-6 (even).
        assert_eq!(to_bf16(1.0 + 3.0 * 2f32.powi(-8)), 1.0 + 2f32.powi(-6));
    }

    #[test]
    fn overflow_saturates() {
        assert_eq!(Bf16::from_f32(f32::MAX), Bf16::MAX);
        assert_eq!(Bf16::from_f32(-f32::MAX).to_bits(), 0xFF7F);
        assert!(to_bf16(f32::MAX).is_finite());
        assert_eq!(Bf16::from_f32(f32::INFINITY).to_bits(), 0x7F80);
    }

    proptest! {
        #[test]
        fn matches_reference(bits in any::<u32>()) {
            let x = f32::from_bits(bits);
            prop_assume!(x.is_finite());
            let expect = reference(x);
            let got = Bf16::from_f32(x).to_bits();
            if expect & 0x7FFF == ABS_INF {
                prop_assert_eq!(got, (expect & SIGN_MASK) | ABS_MAX_FINITE);
            } else {
                prop_assert_eq!(got, expect);
            }
        }

        #[test]
        fn agrees_with_half_crate_below_overflow(x in -1e30f32..1e30f32) {
            prop_assert_eq!(Bf16::from_f32(x).to_bits(), half::bf16::from_f32(x).to_bits());
        }

        #[test]
        fn idempotent(bits in any::<u32>()) {
            let x = f32::from_bits(bits);
            prop_assume!(x.is_finite());
            let once = to_bf16(x);
            prop_assert_eq!(to_bf16(once).to_bits(), once.to_bits());
        }
    }
}
