//! Fixed-point numeric core.
//!
//! Every tensor inside the quantized datapath is an integer code array plus a
//! [`FixFormat`] giving its bit width and power-of-two scale. Narrowing uses
//! round-half-to-even and saturates; saturation events are counted per call
//! rather than stored globally.

mod format;
mod vpu;

pub use format::{FixFormat, FixTensor};
pub use vpu::{vpu_eval, Saturation, VpuKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Diagnostic counters accumulated over a run.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Clamped fixed-point writes.
    pub saturated: usize,
    /// Positive lanes forced to zero in exponential mode.
    pub exp_clamped: usize,
}

impl Counters {
    pub fn add(&mut self, other: Counters) {
        self.saturated += other.saturated;
        self.exp_clamped += other.exp_clamped;
    }
}

/// Right shift with round-half-to-even. A negative `shift` is an exact left
/// shift.
pub fn shift_round(v: i128, shift: i32) -> i128 {
    if shift <= 0 {
        return v << (-shift) as u32;
    }
    if shift >= 127 {
        return 0;
    }
    let s = shift as u32;
    let floor = v >> s;
    let rem = v - (floor << s);
    let half = 1i128 << (s - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Smallest `p` with `max|x| / 2^p <= 2^(width-1) - 1`; zero for all-zero
/// input.
pub fn choose_pot_exponent<T: Real>(x: &[T], width: u8) -> Result<i32> {
    if x.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut peak = 0.0f64;
    for v in x {
        let f = v.as_f64();
        if !f.is_finite() {
            return Err(Error::NonFinite);
        }
        peak = peak.max(f.abs());
    }
    Ok(pot_exponent_for_peak(peak, width))
}

pub(crate) fn pot_exponent_for_peak(peak: f64, width: u8) -> i32 {
    if peak == 0.0 {
        return 0;
    }
    let qmax = ((1i64 << (width - 1)) - 1) as f64;
    let fits = |p: i32| peak <= qmax * 2f64.powi(p);
    let mut p = (peak / qmax).log2().ceil() as i32;
    while !fits(p) {
        p += 1;
    }
    while fits(p - 1) {
        p -= 1;
    }
    p
}

/// Quantizes real values into `fmt`. Returns the tensor and the number of
/// clamped elements.
pub fn quantize_pot<T: Real>(x: &[T], shape: &[usize], fmt: FixFormat) -> Result<(FixTensor, usize)> {
    let n: usize = shape.iter().product();
    if n != x.len() {
        return Err(Error::Shape(format!("{} values for shape {shape:?}", x.len())));
    }
    let mut sat = Saturation::default();
    let codes = x.iter().map(|v| sat.quantize(v.as_f64(), fmt)).collect();
    Ok((FixTensor::new(shape.to_vec(), codes, fmt)?, sat.count()))
}

/// `code · 2^(-frac)`, exact.
pub fn dequantize<T: Real>(t: &FixTensor) -> Vec<T> {
    let scale = t.fmt().ulp();
    t.codes().iter().map(|&c| T::of_f64(c as f64 * scale)).collect()
}
