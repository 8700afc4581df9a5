//! 256-level scalar quantizer shared by the `<loc>`, `<aloc>` and `<arot>` families.

use super::vocab::BINS;
use super::TokenError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quantized {
    pub bin: u8,
    /// `x` was outside `[lo, hi]` and got clamped to an edge bin.
    pub clamped: bool,
}

/// `clamp(floor((x − lo)·256/(hi − lo)), 0, 255)`.
pub fn quantize(x: f64, lo: f64, hi: f64) -> Result<Quantized, TokenError> {
    check_range(lo, hi)?;
    if !x.is_finite() {
        return Err(TokenError::NonFinite(x));
    }
    let clamped = x < lo || x > hi;
    let raw = ((x - lo) * BINS as f64 / (hi - lo)).floor();
    let bin = raw.clamp(0.0, (BINS - 1) as f64) as u8;
    Ok(Quantized { bin, clamped })
}

/// Center of `bin`: `lo + (bin + 0.5)·(hi − lo)/256`.
pub fn dequantize(bin: u32, lo: f64, hi: f64) -> Result<f64, TokenError> {
    check_range(lo, hi)?;
    if bin as usize >= BINS {
        return Err(TokenError::BinOutOfRange(bin));
    }
    Ok(bin_center(bin as u8, lo, hi))
}

#[inline]
pub(crate) fn bin_center(bin: u8, lo: f64, hi: f64) -> f64 {
    lo + (bin as f64 + 0.5) * (hi - lo) / BINS as f64
}

/// Width of one bin over `[lo, hi]`.
pub fn bin_width(lo: f64, hi: f64) -> f64 {
    (hi - lo) / BINS as f64
}

fn check_range(lo: f64, hi: f64) -> Result<(), TokenError> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(TokenError::InvalidRange { lo, hi })
    }
}
