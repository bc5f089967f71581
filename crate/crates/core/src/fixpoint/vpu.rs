//! The five vector processing unit kinds.
//!
//! | kind | operands | result          |
//! |------|----------|-----------------|
//! | PAU  | A, B     | `A + B`         |
//! | PMU  | A, B     | `A × B`         |
//! | PMA  | A, B, C  | `A × B + C`     |
//! | HAT  | A        | `Σ A_i`         |
//! | MAT  | A, B     | `Σ A_i × B_i`   |
//!
//! Operands are aligned to a common fraction exactly; products carry
//! `frac_a + frac_b`. Reductions run in a saturating 32-bit accumulator. The
//! result is narrowed once into the requested output format.

use serde::{Deserialize, Serialize};

use super::{shift_round, FixFormat, FixTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VpuKind {
    Pau,
    Pmu,
    Pma,
    Hat,
    Mat,
}

impl VpuKind {
    pub const ALL: [VpuKind; 5] = [Self::Pau, Self::Pmu, Self::Pma, Self::Hat, Self::Mat];

    pub fn is_reduction(self) -> bool {
        matches!(self, Self::Hat | Self::Mat)
    }
}

/// Counts clamped writes.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Saturation {
    count: usize,
}

impl Saturation {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn absorb(&mut self, n: usize) {
        self.count += n;
    }

    /// Narrows `v` (at `from_frac`) into `out`.
    pub fn narrow(&mut self, v: i128, from_frac: i32, out: FixFormat) -> i32 {
        let r = shift_round(v, from_frac - out.frac());
        self.clamp(r, out)
    }

    /// Clamps an integer into the range of `fmt`.
    pub fn clamp(&mut self, v: i128, fmt: FixFormat) -> i32 {
        let (lo, hi) = (fmt.min_code() as i128, fmt.max_code() as i128);
        if v > hi {
            self.count += 1;
            hi as i32
        } else if v < lo {
            self.count += 1;
            lo as i32
        } else {
            v as i32
        }
    }

    /// Quantizes a real value into `fmt`.
    pub fn quantize(&mut self, x: f64, fmt: FixFormat) -> i32 {
        let scaled = (x * fmt.ulp().recip()).round_ties_even();
        if scaled > fmt.max_code() as f64 {
            self.count += 1;
            fmt.max_code() as i32
        } else if scaled < fmt.min_code() as f64 {
            self.count += 1;
            fmt.min_code() as i32
        } else {
            scaled as i32
        }
    }

    /// 32-bit accumulator register write.
    pub fn acc32(&mut self, v: i128) -> i128 {
        self.clamp(v, FixFormat::acc32(0)) as i128
    }
}

pub(crate) fn align(v: i128, from: i32, to: i32) -> i128 {
    debug_assert!(to >= from);
    v << (to - from) as u32
}

/// Exact `Σ a_i·b_i` over code slices.
pub(crate) fn dot(a: &[i32], b: &[i32]) -> i128 {
    a.iter().zip(b).map(|(&x, &y)| x as i128 * y as i128).sum()
}

/// Evaluates one VPU over whole operand vectors.
///
/// Returns the narrowed result and the number of saturation events (output
/// clamps plus accumulator clamps).
pub fn vpu_eval(
    kind: VpuKind,
    a: &FixTensor,
    b: Option<&FixTensor>,
    c: Option<&FixTensor>,
    out: FixFormat,
) -> Result<(FixTensor, usize)> {
    let need = |t: Option<&FixTensor>, name: &'static str| -> Result<()> {
        match t {
            None => Err(Error::MissingOperand(name, kind)),
            Some(t) if t.len() != a.len() => Err(Error::Length(format!(
                "{kind:?} operand {name} has {} lanes, A has {}",
                t.len(),
                a.len()
            ))),
            Some(_) => Ok(()),
        }
    };
    match kind {
        VpuKind::Pau | VpuKind::Pmu | VpuKind::Mat => need(b, "B")?,
        VpuKind::Pma => {
            need(b, "B")?;
            need(c, "C")?;
        }
        VpuKind::Hat => {}
    }

    let mut sat = Saturation::default();
    let fa = a.fmt().frac();
    let codes: Vec<i32> = match kind {
        VpuKind::Pau => {
            let b = b.unwrap();
            let f = fa.max(b.fmt().frac());
            let fb = b.fmt().frac();
            a.codes()
                .iter()
                .zip(b.codes())
                .map(|(&x, &y)| {
                    let s = align(x as i128, fa, f) + align(y as i128, fb, f);
                    sat.narrow(s, f, out)
                })
                .collect()
        }
        VpuKind::Pmu => {
            let b = b.unwrap();
            let fp = fa + b.fmt().frac();
            a.codes()
                .iter()
                .zip(b.codes())
                .map(|(&x, &y)| sat.narrow(x as i128 * y as i128, fp, out))
                .collect()
        }
        VpuKind::Pma => {
            let (b, c) = (b.unwrap(), c.unwrap());
            let fp = fa + b.fmt().frac();
            let fc = c.fmt().frac();
            let f = fp.max(fc);
            a.codes()
                .iter()
                .zip(b.codes())
                .zip(c.codes())
                .map(|((&x, &y), &z)| {
                    let s = align(x as i128 * y as i128, fp, f) + align(z as i128, fc, f);
                    sat.narrow(s, f, out)
                })
                .collect()
        }
        VpuKind::Hat => {
            let acc = sat.acc32(a.codes().iter().map(|&x| x as i128).sum());
            vec![sat.narrow(acc, fa, out)]
        }
        VpuKind::Mat => {
            let b = b.unwrap();
            let acc = sat.acc32(dot(a.codes(), b.codes()));
            vec![sat.narrow(acc, fa + b.fmt().frac(), out)]
        }
    };
    let shape = if kind.is_reduction() { vec![1] } else { a.shape().to_vec() };
    Ok((FixTensor::new(shape, codes, out)?, sat.count()))
}
