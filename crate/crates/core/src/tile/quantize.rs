//! Symmetric mid-tread quantizer shared by the DAC and ADC models.

use rand::Rng as _;

use crate::device::Rounding;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Inputs may exceed the unit range by this much from rounding in the
/// normalization divide.
pub const RANGE_TOLERANCE: f64 = 1e-12;

/// Number of positive levels, `2^(bits-1) - 1`. Step size is `1 / levels`.
#[inline]
pub fn levels(bits: u32) -> f64 {
    debug_assert!(bits >= 2);
    ((1u64 << (bits - 1)) - 1) as f64
}

/// Rounds each component of `v` (which must lie in `[-1, 1]`) onto the grid
/// `k / levels(bits)`. `bits == 0` returns the input unchanged.
pub fn quantize_vector(v: &[f64], bits: u32, mode: Rounding, rng: &mut Rng) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    quantize_in_place(&mut out, bits, mode, rng)?;
    Ok(out)
}

pub(crate) fn quantize_in_place(v: &mut [f64], bits: u32, mode: Rounding, rng: &mut Rng) -> Result<()> {
    if let Some(bad) = v.iter().find(|x| !(x.abs() <= 1.0 + RANGE_TOLERANCE)) {
        return Err(Error::OutOfRange(format!("quantizer input {bad} outside [-1, 1]")));
    }
    if bits == 0 {
        return Ok(());
    }
    if bits == 1 || bits > crate::device::MAX_BITS {
        return Err(Error::OutOfRange(format!("unsupported quantizer width {bits}")));
    }
    let n = levels(bits);
    match mode {
        Rounding::Nearest => {
            for x in v.iter_mut() {
                // f64::round breaks ties away from zero
                *x = (x.clamp(-1.0, 1.0) * n).round() / n;
            }
        }
        Rounding::Stochastic => {
            for x in v.iter_mut() {
                let scaled = x.clamp(-1.0, 1.0) * n;
                let floor = scaled.floor();
                let frac = scaled - floor;
                let k = if frac > 0.0 && rng.random::<f64>() < frac {
                    floor + 1.0
                } else {
                    floor
                };
                *x = k.min(n) / n;
            }
        }
    }
    Ok(())
}

/// ADC: rounds `y` (already clamped to `[-bound, bound]`) to the nearest of
/// `2 levels(bits) + 1` codes; `±bound` map to the extreme codes exactly.
#[inline]
pub(crate) fn adc(y: f64, bound: f64, bits: u32) -> f64 {
    let n = levels(bits);
    (y * n / bound).round() * bound / n
}
