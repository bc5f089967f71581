use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signed two's-complement format: `width` bits, real value `code · 2^(-frac)`.
///
/// `frac` may be negative, which gives a power-of-two scale above one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixFormat {
    width: u8,
    frac: i32,
}

impl FixFormat {
    pub fn new(width: u8, frac: i32) -> Result<Self> {
        if !matches!(width, 8 | 16 | 32) {
            return Err(Error::Format(format!("width {width} not in {{8, 16, 32}}")));
        }
        if !(-64..=64).contains(&frac) {
            return Err(Error::Format(format!("frac {frac} out of range")));
        }
        Ok(Self { width, frac })
    }

    pub const fn q8(frac: i32) -> Self {
        Self { width: 8, frac }
    }

    pub const fn q16(frac: i32) -> Self {
        Self { width: 16, frac }
    }

    pub const fn acc32(frac: i32) -> Self {
        Self { width: 32, frac }
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    pub fn frac(&self) -> i32 {
        self.frac
    }

    /// PoT exponent `p` of the scale `2^p`.
    pub fn exponent(&self) -> i32 {
        -self.frac
    }

    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.width - 1))
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << (self.width - 1)) - 1
    }

    /// Value of one code step.
    pub fn ulp(&self) -> f64 {
        2f64.powi(-self.frac)
    }

    pub fn max_value(&self) -> f64 {
        self.max_code() as f64 * self.ulp()
    }

    pub fn contains(&self, code: i64) -> bool {
        (self.min_code()..=self.max_code()).contains(&code)
    }

    pub fn with_frac(&self, frac: i32) -> Self {
        Self { width: self.width, frac }
    }
}

/// Integer-coded tensor with a per-tensor fixed-point format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixTensor {
    shape: Vec<usize>,
    codes: Vec<i32>,
    fmt: FixFormat,
}

impl FixTensor {
    pub fn new(shape: Vec<usize>, codes: Vec<i32>, fmt: FixFormat) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != codes.len() {
            return Err(Error::Shape(format!("{} codes for shape {shape:?}", codes.len())));
        }
        if let Some(&c) = codes.iter().find(|&&c| !fmt.contains(c as i64)) {
            return Err(Error::CodeRange { code: c as i64, width: fmt.width() });
        }
        Ok(Self { shape, codes, fmt })
    }

    pub fn vector(codes: Vec<i32>, fmt: FixFormat) -> Result<Self> {
        Self::new(vec![codes.len()], codes, fmt)
    }

    pub fn zeros(shape: Vec<usize>, fmt: FixFormat) -> Self {
        let n = shape.iter().product();
        Self { shape, codes: vec![0; n], fmt }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn codes(&self) -> &[i32] {
        &self.codes
    }

    pub fn fmt(&self) -> FixFormat {
        self.fmt
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn into_codes(self) -> Vec<i32> {
        self.codes
    }

    /// Re-expresses every element in `out` (round-half-even, saturating).
    pub fn narrow(&self, out: FixFormat) -> (FixTensor, usize) {
        let mut sat = super::Saturation::default();
        let codes = self.codes.iter().map(|&c| sat.narrow(c as i128, self.fmt.frac(), out)).collect();
        (FixTensor { shape: self.shape.clone(), codes, fmt: out }, sat.count())
    }
}
