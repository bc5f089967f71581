//! Hadamard-rotated W8A8 linear layers.
//!
//! Weights are rotated per group and quantized to int8 once, at build time.
//! At run time the activations are rotated with the same grouped Hadamard
//! matrices, quantized with a single per-tensor scale, multiplied in integer
//! arithmetic and rescaled by `s_X · s_W · m/d` (the `m/d` undoes the
//! unnormalized Hadamard gain).
//!
//! The activation scale is always snapped to what the hardware requantizer
//! can express: `1/s_X` becomes `s_coe · 2^(-s_shift)` with a 15-bit
//! `s_coe`. With that, the real-valued path and the integer datapath of
//! [`hw_quantized_linear`] produce identical int8 activations.

use rayon::prelude::*;

use super::{fwht, group_width};
use crate::error::{Error, Result};
use crate::fixpoint::{shift_round, FixFormat, FixTensor, Saturation};
use crate::fmw::{Fmw, Tensor, TensorData};
use crate::scalar::Real;
use crate::tensor::Matrix;

/// Mantissa bits of the activation requantization multiplier.
pub const ACT_REQUANT_BITS: u32 = 15;
/// Mantissa bits of the output rescale multiplier.
pub const OUT_REQUANT_BITS: u32 = 31;

const QMAX: f64 = 127.0;

/// Multiply-shift pair approximating a positive factor as `coe · 2^(-shift)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequantParams {
    pub coe: i64,
    pub shift: i32,
}

impl RequantParams {
    /// Represents `factor` with `coe ∈ [2^(bits-1), 2^bits)`.
    pub fn for_factor(factor: f64, bits: u32) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::NonPositiveScale(factor));
        }
        let lo = 1i64 << (bits - 1);
        let mut shift = bits as i32 - 1 - factor.log2().floor() as i32;
        let mut coe = (factor * 2f64.powi(shift)).round_ties_even() as i64;
        // log2 may be off by one near powers of two
        while coe < lo {
            shift += 1;
            coe = (factor * 2f64.powi(shift)).round_ties_even() as i64;
        }
        while coe >= 2 * lo {
            shift -= 1;
            coe = (factor * 2f64.powi(shift)).round_ties_even() as i64;
        }
        Ok(Self { coe, shift })
    }

    /// `coe · 2^(-shift)`.
    pub fn factor(&self) -> f64 {
        self.coe as f64 * 2f64.powi(-self.shift)
    }

    /// `(v · coe) ≫ shift`, rounding half to even.
    pub fn apply(&self, v: i128) -> i128 {
        shift_round(v * self.coe as i128, self.shift)
    }
}

/// Requantization pair for dividing by `s`: `s_coe ∈ [2^14, 2^15)`.
pub fn requant_params(s: f64) -> Result<(i64, i32)> {
    if !(s > 0.0) {
        return Err(Error::NonPositiveScale(s));
    }
    let p = RequantParams::for_factor(1.0 / s, ACT_REQUANT_BITS)?;
    Ok((p.coe, p.shift))
}

/// Symmetric int8 scale `max|x| / 127`; one for all-zero input.
pub fn find_scale<T: Real>(x: &[T]) -> Result<f64> {
    let mut peak = 0.0f64;
    for v in x {
        let f = v.as_f64();
        if !f.is_finite() {
            return Err(Error::NonFinite);
        }
        peak = peak.max(f.abs());
    }
    Ok(if peak == 0.0 { 1.0 } else { peak / QMAX })
}

/// `clamp(round_half_even(x / s), -128, 127)`.
pub fn quantize_int8<T: Real>(x: &[T], s: f64) -> Vec<i8> {
    x.iter().map(|v| clamp_i8((v.as_f64() / s).round_ties_even())).collect()
}

fn clamp_i8(v: f64) -> i8 {
    v.clamp(-128.0, 127.0) as i8
}

/// How the activation scale `s_X` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActScaling {
    /// Recomputed from every input batch.
    Dynamic,
    /// Fixed at calibration time.
    Static(f64),
}

/// Grouped Hadamard-rotated int8 linear layer computing `X·Wᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLinearLayer {
    d: usize,
    q: usize,
    m: usize,
    /// `q × d`; row `k`, group `i` holds `(W[k, group i] · H)` quantized.
    wq: Vec<i8>,
    s_w: f64,
    act: ActScaling,
}

impl QuantLinearLayer {
    /// Rotates and quantizes a `q × d` weight matrix split into `m` groups.
    pub fn from_weights<T: Real>(w: &Matrix<T>, m: usize) -> Result<Self> {
        let (q, d) = (w.rows(), w.cols());
        let gw = group_width(d, m)?;
        let mut wh: Vec<f64> = w.data().iter().map(Real::as_f64).collect();
        for row in wh.chunks_mut(d.max(1)) {
            for g in row.chunks_mut(gw) {
                fwht(g);
            }
        }
        let s_w = find_scale(&wh)?;
        let wq = quantize_int8(&wh, s_w);
        Ok(Self { d, q, m, wq, s_w, act: ActScaling::Dynamic })
    }

    pub fn from_parts(d: usize, q: usize, m: usize, wq: Vec<i8>, s_w: f64, act: ActScaling) -> Result<Self> {
        group_width(d, m)?;
        if wq.len() != d * q {
            return Err(Error::Shape(format!("{} weight codes for {q}x{d}", wq.len())));
        }
        if !(s_w > 0.0) {
            return Err(Error::NonPositiveScale(s_w));
        }
        if let ActScaling::Static(s) = act {
            if !(s > 0.0) {
                return Err(Error::NonPositiveScale(s));
            }
        }
        Ok(Self { d, q, m, wq, s_w, act })
    }

    pub fn with_scaling(mut self, act: ActScaling) -> Self {
        self.act = act;
        self
    }

    /// Switches to static scaling with `s_X` taken from a calibration batch.
    pub fn calibrate<T: Real>(self, sample: &Matrix<T>) -> Result<Self> {
        let xh = self.rotate(sample)?;
        let s = find_scale(xh.data())?;
        Ok(self.with_scaling(ActScaling::Static(s)))
    }

    pub fn in_features(&self) -> usize {
        self.d
    }

    pub fn out_features(&self) -> usize {
        self.q
    }

    pub fn groups(&self) -> usize {
        self.m
    }

    pub fn group_width(&self) -> usize {
        self.d / self.m
    }

    pub fn weight_codes(&self) -> &[i8] {
        &self.wq
    }

    pub fn weight_scale(&self) -> f64 {
        self.s_w
    }

    pub fn scaling(&self) -> ActScaling {
        self.act
    }

    /// Hardware requantization pair for the static scale, if any.
    pub fn static_requant(&self) -> Option<RequantParams> {
        match self.act {
            ActScaling::Static(s) => RequantParams::for_factor(1.0 / s, ACT_REQUANT_BITS).ok(),
            ActScaling::Dynamic => None,
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.d {
            return Err(Error::Shape(format!("input width {cols}, layer expects {}", self.d)));
        }
        Ok(())
    }

    fn rotate<T: Real>(&self, x: &Matrix<T>) -> Result<Matrix<f64>> {
        self.check_input(x.cols())?;
        let mut xh = x.map(Real::as_f64);
        let gw = self.group_width();
        for r in 0..xh.rows() {
            for g in xh.row_mut(r).chunks_mut(gw) {
                fwht(g);
            }
        }
        Ok(xh)
    }

    fn act_requant(&self, peak: f64) -> Result<RequantParams> {
        let s = match self.act {
            ActScaling::Static(s) => s,
            ActScaling::Dynamic => {
                if peak == 0.0 {
                    1.0
                } else {
                    peak / QMAX
                }
            }
        };
        RequantParams::for_factor(1.0 / s, ACT_REQUANT_BITS)
    }

    /// `Ŷ = X̂·Ŵᵀ` in exact integer arithmetic, rows in parallel.
    fn int_matmul(&self, xq: &[i8], rows: usize) -> Vec<i64> {
        let (d, q) = (self.d, self.q);
        let mut y = vec![0i64; rows * q];
        y.par_chunks_mut(q.max(1)).enumerate().for_each(|(r, out)| {
            let x = &xq[r * d..(r + 1) * d];
            for (k, o) in out.iter_mut().enumerate() {
                let w = &self.wq[k * d..(k + 1) * d];
                *o = x.iter().zip(w).map(|(&a, &b)| a as i64 * b as i64).sum();
            }
        });
        y
    }

    /// Real value of one unit of `Ŷ` for activations quantized with `rq`.
    fn output_step(&self, rq: &RequantParams) -> (f64, f64, f64) {
        (1.0 / rq.factor(), self.s_w, self.m as f64 / self.d as f64)
    }

    pub fn to_tensors(&self, prefix: &str) -> Vec<Tensor> {
        let mut out = vec![
            Tensor::i8(format!("{prefix}.wq"), vec![self.q, self.d], 0, self.wq.clone()),
            Tensor::f64_scalar(format!("{prefix}.s_w"), self.s_w),
            Tensor::i16(format!("{prefix}.m"), vec![1], 0, vec![self.m as i16]),
        ];
        if let (ActScaling::Static(s), Some(rq)) = (self.act, self.static_requant()) {
            out.push(Tensor::f64_scalar(format!("{prefix}.s_x"), s));
            out.push(Tensor::i16(format!("{prefix}.s_coe"), vec![1], 0, vec![rq.coe as i16]));
            out.push(Tensor::i16(format!("{prefix}.s_shift"), vec![1], 0, vec![rq.shift as i16]));
        }
        out
    }

    pub fn from_tensors(fmw: &Fmw, prefix: &str) -> Result<Self> {
        let get = |suffix: &str| {
            let name = format!("{prefix}.{suffix}");
            fmw.get(&name).ok_or(Error::MissingTensor(name))
        };
        let bad = |suffix: &str, msg: &str| Error::BadTensor { name: format!("{prefix}.{suffix}"), msg: msg.into() };
        let wq_t = get("wq")?;
        let (q, d) = match wq_t.dims[..] {
            [q, d] => (q, d),
            _ => return Err(bad("wq", "expected 2 dims")),
        };
        let TensorData::I8(wq) = &wq_t.data else { return Err(bad("wq", "expected i8")) };
        let s_w = get("s_w")?.as_f64_scalar().ok_or_else(|| bad("s_w", "expected f64 scalar"))?;
        let m = match &get("m")?.data {
            TensorData::I16(v) if v.len() == 1 && v[0] > 0 => v[0] as usize,
            _ => return Err(bad("m", "expected positive i16 scalar")),
        };
        let act = match fmw.get(&format!("{prefix}.s_x")) {
            Some(t) => ActScaling::Static(t.as_f64_scalar().ok_or_else(|| bad("s_x", "expected f64 scalar"))?),
            None => ActScaling::Dynamic,
        };
        let layer = Self::from_parts(d, q, m, wq.clone(), s_w, act)?;
        if let Some(rq) = layer.static_requant() {
            let coe = get("s_coe")?.data.to_f64();
            let shift = get("s_shift")?.data.to_f64();
            if coe != [rq.coe as f64] || shift != [rq.shift as f64] {
                return Err(bad("s_coe", "inconsistent with s_x"));
            }
        }
        Ok(layer)
    }
}

/// Hadamard-quantized `X·Wᵀ` for a real `l × d` input.
pub fn quantized_linear<T: Real>(x: &Matrix<T>, layer: &QuantLinearLayer) -> Result<Matrix<T>> {
    quantized_linear_counted(x, layer).map(|(y, _)| y)
}

/// As [`quantized_linear`], also returning the number of clamped int8
/// activations.
pub fn quantized_linear_counted<T: Real>(x: &Matrix<T>, layer: &QuantLinearLayer) -> Result<(Matrix<T>, usize)> {
    let xh = layer.rotate(x)?;
    let peak = xh.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !peak.is_finite() {
        return Err(Error::NonFinite);
    }
    let rq = layer.act_requant(peak)?;
    let mult = rq.factor();
    let mut clamped = 0;
    let xq: Vec<i8> = xh
        .data()
        .iter()
        .map(|v| {
            let r = (v * mult).round_ties_even();
            clamped += !(-128.0..=127.0).contains(&r) as usize;
            clamp_i8(r)
        })
        .collect();
    let acc = layer.int_matmul(&xq, x.rows());
    let (sx, sw, gain) = layer.output_step(&rq);
    let data = acc.iter().map(|&v| T::of_f64(v as f64 * sx * sw * gain)).collect();
    Ok((Matrix::from_vec(x.rows(), layer.q, data)?, clamped))
}

/// Plain per-tensor symmetric W8A8 `X·Wᵀ` without rotation.
pub fn w8a8_linear<T: Real>(x: &Matrix<T>, w: &Matrix<T>) -> Result<Matrix<T>> {
    if x.cols() != w.cols() {
        return Err(Error::Shape(format!("input width {}, weight width {}", x.cols(), w.cols())));
    }
    let sx = find_scale(x.data())?;
    let sw = find_scale(w.data())?;
    let xq = quantize_int8(x.data(), sx);
    let wq = quantize_int8(w.data(), sw);
    let d = x.cols();
    let mut out = Vec::with_capacity(x.rows() * w.rows());
    for r in 0..x.rows() {
        let a = &xq[r * d..(r + 1) * d];
        for k in 0..w.rows() {
            let b = &wq[k * d..(k + 1) * d];
            let acc: i64 = a.iter().zip(b).map(|(&p, &q)| p as i64 * q as i64).sum();
            out.push(T::of_f64(acc as f64 * sx * sw));
        }
    }
    Matrix::from_vec(x.rows(), w.rows(), out)
}

/// Integer emulation of the grouped linear datapath.
///
/// `x` is `[l, d]` in a 16-bit format. Per group, Hadamard outputs come from
/// adder trees over sign-recoded inputs (`hat_lanes` per pass), are
/// requantized to int8 by `×s_coe ≫ s_shift`, and feed int8
/// multiply-adder trees; group partial sums are reduced and rescaled into
/// `out`. Returns the output and the saturation count.
pub fn hw_quantized_linear(
    x: &FixTensor,
    layer: &QuantLinearLayer,
    out: FixFormat,
) -> Result<(FixTensor, usize)> {
    const HAT_LANES: usize = 4;
    let (l, d) = match x.shape() {
        [l, d] => (*l, *d),
        [d] => (1, *d),
        s => return Err(Error::Shape(format!("expected [l, d], got {s:?}"))),
    };
    layer.check_input(d)?;
    let gw = layer.group_width();
    let h = super::build_hadamard(gw)?;
    let frac = x.fmt().frac();
    let mut sat = Saturation::default();

    // Hadamard products: one adder tree per output lane.
    let mut xh = vec![0i128; l * d];
    for r in 0..l {
        let row = &x.codes()[r * d..(r + 1) * d];
        for (g, xs) in row.chunks(gw).enumerate() {
            for pass in (0..gw).step_by(HAT_LANES) {
                for j in pass..(pass + HAT_LANES).min(gw) {
                    let tree: i128 = xs
                        .iter()
                        .enumerate()
                        .map(|(t, &v)| if h.get(t, j) > 0 { v as i128 } else { -(v as i128) })
                        .sum();
                    xh[r * d + g * gw + j] = sat.acc32(tree);
                }
            }
        }
    }

    let peak = xh.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0) as f64 * 2f64.powi(-frac);
    let rq = layer.act_requant(peak)?;
    let code_rq = RequantParams { coe: rq.coe, shift: rq.shift + frac };
    let xq: Vec<i8> = xh.iter().map(|&v| sat.clamp(code_rq.apply(v), FixFormat::q8(0)) as i8).collect();

    // Group-parallel MAT units, then cross-group reduction.
    let q = layer.q;
    let mut yhat = vec![0i128; l * q];
    for r in 0..l {
        for k in 0..q {
            let w = &layer.wq[k * d..(k + 1) * d];
            let xs = &xq[r * d..(r + 1) * d];
            let mut total = 0i128;
            for (wg, xg) in w.chunks(gw).zip(xs.chunks(gw)) {
                let partial: i128 = wg.iter().zip(xg).map(|(&a, &b)| a as i128 * b as i128).sum();
                let partial = sat.acc32(partial);
                total = sat.acc32(total + partial);
            }
            yhat[r * q + k] = total;
        }
    }

    let (sx, sw, gain) = layer.output_step(&rq);
    let rescale = RequantParams::for_factor(sx * sw * gain * 2f64.powi(out.frac()), OUT_REQUANT_BITS)?;
    let codes = yhat.iter().map(|&v| sat.clamp(rescale.apply(v), out)).collect();
    let shape = if x.shape().len() == 1 { vec![q] } else { vec![l, q] };
    Ok((FixTensor::new(shape, codes, out)?, sat.count()))
}
