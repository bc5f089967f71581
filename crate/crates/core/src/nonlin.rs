//! Shift-based exponential and SoftPlus approximation.
//!
//! For `x ≤ 0`, `e^x = 2^(x·log2 e)`. With `log2 e` truncated to `(1.0111)₂`,
//! `t = x · 23/16` splits into an integer part `u ≤ 0` and a fraction
//! `v ∈ (-1, 0]`; `2^v` comes from an 8-segment chord table and `2^u` is a
//! right shift by `|u|`.
//!
//! SoftPlus reuses the same unit: `SoftPlus(x) ≈ e^x` for `x ≤ 0` and
//! `e^(-x) + x` for `x > 0`.
//!
//! Two evaluators are provided. The real path is generic over [`Real`] and
//! uses the exact chord coefficients; instantiated with [`Exact`](crate::Exact)
//! it satisfies the SoftPlus symmetry identity with no rounding at all. The
//! fixed path ([`NlUnit`]) emulates the 16-bit hardware lanes.

use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixpoint::{shift_round, FixFormat, FixTensor, Saturation};
use crate::scalar::Real;

pub const SEGMENTS: usize = 8;
/// Fraction bits of the 16-bit slope/intercept codes.
pub const COEF_FRAC: i32 = 14;
/// Lane count of the hardware unit.
pub const DEFAULT_LANES: usize = 24;
/// Δ̃ output format.
pub const SOFTPLUS_OUT: FixFormat = FixFormat::q16(12);
/// Exponential output format, range `(0, 1]`.
pub const EXP_OUT: FixFormat = FixFormat::q16(14);

/// `log2 e ≈ (1.0111)₂ = 23/16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Log2eConst;

impl Log2eConst {
    pub const CODE: i64 = 23;
    pub const FRAC: i32 = 4;

    pub fn value<T: Real>() -> T {
        T::of_f64(Self::CODE as f64 / (1i64 << Self::FRAC) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PwlSegment {
    pub v_lo: f64,
    pub slope: f64,
    pub intercept: f64,
    pub slope_code: i16,
    pub intercept_code: i16,
}

/// Chord approximation of `2^v` on `(-1, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlTable {
    segments: [PwlSegment; SEGMENTS],
}

impl Default for PwlTable {
    fn default() -> Self {
        Self::build()
    }
}

impl PwlTable {
    /// Segment `k` covers `(v_lo, v_lo + 1/8]`, `v_lo = -1 + k/8`, and
    /// interpolates `2^v` between its endpoints.
    pub fn build() -> Self {
        let width = 1.0 / SEGMENTS as f64;
        let segments = std::array::from_fn(|k| {
            let v_lo = -1.0 + k as f64 * width;
            let v_hi = v_lo + width;
            let slope = (v_hi.exp2() - v_lo.exp2()) / width;
            // anchored at the upper endpoint so the last segment hits 1.0 exactly
            let intercept = v_hi.exp2() - slope * v_hi;
            let code = |c: f64| (c * 2f64.powi(COEF_FRAC)).round_ties_even() as i16;
            PwlSegment { v_lo, slope, intercept, slope_code: code(slope), intercept_code: code(intercept) }
        });
        Self { segments }
    }

    /// Process-wide instance.
    pub fn shared() -> &'static PwlTable {
        static TABLE: OnceLock<PwlTable> = OnceLock::new();
        TABLE.get_or_init(PwlTable::build)
    }

    pub fn segments(&self) -> &[PwlSegment; SEGMENTS] {
        &self.segments
    }

    /// Segment holding `v ∈ (-1, 0]`.
    pub fn segment_index<T: Real>(v: &T) -> usize {
        let k = ((v.clone() + T::one()) * T::of_f64(SEGMENTS as f64)).ceil_int() - 1;
        k.clamp(0, SEGMENTS as i64 - 1) as usize
    }

    pub fn eval<T: Real>(&self, v: &T) -> T {
        let s = &self.segments[Self::segment_index(v)];
        T::of_f64(s.slope) * v.clone() + T::of_f64(s.intercept)
    }

    /// `v_lo,slope,intercept,slope_code,intercept_code` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("v_lo,slope,intercept,slope_code,intercept_code\n");
        for s in &self.segments {
            let _ = writeln!(out, "{},{},{},{},{}", s.v_lo, s.slope, s.intercept, s.slope_code, s.intercept_code);
        }
        out
    }
}

/// `t = u + v` with integer `u ≤ 0` and `v ∈ (-1, 0]`.
pub fn split_uv<T: Real>(t: &T) -> Result<(i64, T)> {
    if *t > T::zero() {
        return Err(Error::PositiveExpInput(t.as_f64()));
    }
    let u = t.ceil_int();
    let v = t.clone() - T::of_f64(u as f64);
    Ok((u, v))
}

/// `e^x` for `x ≤ 0` via the shift-plus-chord scheme.
pub fn exp_neg_approx<T: Real>(x: &T, table: &PwlTable) -> Result<T> {
    if *x > T::zero() {
        return Err(Error::PositiveExpInput(x.as_f64()));
    }
    let t = x.clone() * Log2eConst::value::<T>();
    let (u, v) = split_uv(&t)?;
    let u = u.max(-(1 << 20)) as i32;
    Ok(table.eval(&v) * T::pow2(u))
}

/// SoftPlus via the symmetry rewrite: `e^x` for `x ≤ 0`, `e^(-x) + x` above.
pub fn softplus_approx<T: Real>(x: &T, table: &PwlTable) -> T {
    if *x <= T::zero() {
        exp_neg_approx(x, table).expect("non-positive")
    } else {
        let neg = -x.clone();
        exp_neg_approx(&neg, table).expect("non-positive") + x.clone()
    }
}

/// Configuration of the multiplexed unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NlMode {
    Exp,
    SoftPlus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NlOutput {
    pub tensor: FixTensor,
    /// Positive lanes forced to zero in exponential mode.
    pub clamped: usize,
    pub saturated: usize,
}

/// Exponent magnitudes beyond this flush the exponential term to zero.
const MAX_SHIFT: i64 = 96;

/// Fixed-point emulation of the nonlinear approximation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct NlUnit {
    lanes: usize,
    softplus_out: FixFormat,
    exp_out: FixFormat,
    table: PwlTable,
}

impl Default for NlUnit {
    fn default() -> Self {
        Self::new(DEFAULT_LANES)
    }
}

impl NlUnit {
    pub fn new(lanes: usize) -> Self {
        Self { lanes, softplus_out: SOFTPLUS_OUT, exp_out: EXP_OUT, table: PwlTable::build() }
    }

    pub fn with_formats(mut self, softplus_out: FixFormat, exp_out: FixFormat) -> Self {
        self.softplus_out = softplus_out;
        self.exp_out = exp_out;
        self
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn table(&self) -> &PwlTable {
        &self.table
    }

    pub fn out_format(&self, mode: NlMode) -> FixFormat {
        match mode {
            NlMode::Exp => self.exp_out,
            NlMode::SoftPlus => self.softplus_out,
        }
    }

    /// Evaluates exactly `lanes` inputs.
    pub fn eval(&self, mode: NlMode, input: &FixTensor) -> Result<NlOutput> {
        if input.len() != self.lanes {
            return Err(Error::Length(format!("{} lanes, unit has {}", input.len(), self.lanes)));
        }
        self.eval_any(mode, input)
    }

    /// Evaluates any number of inputs, `lanes` at a time.
    pub fn eval_any(&self, mode: NlMode, input: &FixTensor) -> Result<NlOutput> {
        if input.fmt().width() != 16 {
            return Err(Error::Format(format!("unit takes 16-bit lanes, got {}-bit", input.fmt().width())));
        }
        let out = self.out_format(mode);
        let mut sat = Saturation::default();
        let mut clamped = 0;
        let fi = input.fmt().frac();
        let codes = input
            .codes()
            .iter()
            .map(|&c| {
                let (code, was_clamped) = self.lane(mode, c, fi, out, &mut sat);
                clamped += was_clamped as usize;
                code
            })
            .collect();
        let tensor = FixTensor::new(input.shape().to_vec(), codes, out)?;
        Ok(NlOutput { tensor, clamped, saturated: sat.count() })
    }

    /// One lane: preprocessing (negate and delay), EXP-INT, postprocessing add.
    fn lane(&self, mode: NlMode, code: i32, fi: i32, out: FixFormat, sat: &mut Saturation) -> (i32, bool) {
        let (neg, delayed, clamped) = match mode {
            NlMode::SoftPlus if code > 0 => (-(code as i128), Some(code as i128), false),
            NlMode::Exp if code > 0 => (0, None, true),
            _ => (code as i128, None, false),
        };

        // t = x · (1.0111)₂ at frac f ≥ 0
        let mut t = neg * Log2eConst::CODE as i128;
        let mut f = fi + Log2eConst::FRAC;
        if f < 0 {
            t <<= (-f) as u32;
            f = 0;
        }
        let one = 1i128 << f;
        let u = -((-t) >> f);
        let v = t - u * one;
        let k = (((SEGMENTS as i128) * (v + one) + one - 1) >> f) - 1;
        let seg = &self.table.segments[k.clamp(0, SEGMENTS as i128 - 1) as usize];
        let mut y = seg.slope_code as i128 * v + ((seg.intercept_code as i128) << f);
        let mut yf = COEF_FRAC + f;

        let shift = (-u) as i64;
        if shift > MAX_SHIFT {
            y = 0;
        } else {
            yf += shift as i32;
        }
        let (mut acc, mut af) = (y, yf);
        if let Some(x) = delayed {
            if fi > af {
                acc <<= (fi - af) as u32;
                af = fi;
            }
            acc += x << (af - fi) as u32;
        }
        (sat.clamp(shift_round(acc, af - out.frac()), out), clamped)
    }
}

/// Runs the default 24-lane unit.
pub fn nl_unit_eval(mode: NlMode, lanes: &FixTensor) -> Result<NlOutput> {
    NlUnit::default().eval(mode, lanes)
}
