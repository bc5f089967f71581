use serde::{Deserialize, Serialize};

use super::{step1_delta, step2_discretize, Nonlinearity, SsmDims, SsmParams, SsmState, StepInputs};
use crate::error::{Error, Result};
use crate::fixpoint::{
    dequantize, pot_exponent_for_peak, quantize_pot, vpu_eval, Counters, FixFormat, FixTensor, VpuKind,
};
use crate::nonlin::{NlMode, NlUnit, DEFAULT_LANES, EXP_OUT, SOFTPLUS_OUT};
use crate::scalar::{Real, Scalar};

/// Fraction bits used when a tensor was never observed non-zero.
pub const DEFAULT_FRAC: i32 = 10;

/// 16-bit formats of every tensor in the fixed-point SSM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsmFormats {
    pub x: FixFormat,
    pub b: FixFormat,
    pub c: FixFormat,
    /// Raw `Δ` from the projection.
    pub delta: FixFormat,
    pub bias: FixFormat,
    /// `Δ + dt_bias`, the SoftPlus input.
    pub dt: FixFormat,
    /// `Δ̃`.
    pub dtt: FixFormat,
    /// `Δ̃·A`, the exponential input.
    pub arg: FixFormat,
    pub abar: FixFormat,
    pub q: FixFormat,
    pub h: FixFormat,
    pub y: FixFormat,
    pub a: FixFormat,
    pub d: FixFormat,
}

impl Default for SsmFormats {
    fn default() -> Self {
        let f = FixFormat::q16(DEFAULT_FRAC);
        Self {
            x: f,
            b: f,
            c: f,
            delta: f,
            bias: f,
            dt: f,
            dtt: SOFTPLUS_OUT,
            arg: f,
            abar: EXP_OUT,
            q: f,
            h: f,
            y: f,
            a: f,
            d: f,
        }
    }
}

impl SsmFormats {
    pub const LEN: usize = 14;

    fn fields(&self) -> [FixFormat; Self::LEN] {
        [
            self.x, self.b, self.c, self.delta, self.bias, self.dt, self.dtt, self.arg, self.abar, self.q, self.h,
            self.y, self.a, self.d,
        ]
    }

    /// `(width, frac)` pairs in declaration order.
    pub fn to_table(&self) -> Vec<i16> {
        self.fields().iter().flat_map(|f| [f.width() as i16, f.frac() as i16]).collect()
    }

    pub fn from_table(t: &[i16]) -> Result<Self> {
        if t.len() != 2 * Self::LEN {
            return Err(Error::Shape(format!("format table has {} entries, expected {}", t.len(), 2 * Self::LEN)));
        }
        let f = t
            .chunks(2)
            .map(|p| FixFormat::new(p[0].clamp(0, 255) as u8, p[1] as i32))
            .collect::<Result<Vec<_>>>()?;
        if f.iter().any(|f| f.width() != 16) {
            return Err(Error::Format("SSM tensors are 16-bit".into()));
        }
        Ok(Self {
            x: f[0],
            b: f[1],
            c: f[2],
            delta: f[3],
            bias: f[4],
            dt: f[5],
            dtt: f[6],
            arg: f[7],
            abar: f[8],
            q: f[9],
            h: f[10],
            y: f[11],
            a: f[12],
            d: f[13],
        })
    }
}

/// Largest magnitudes seen during calibration.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
struct Peaks {
    x: f64,
    b: f64,
    c: f64,
    delta: f64,
    dt: f64,
    dtt: f64,
    arg: f64,
    q: f64,
    h: f64,
    y: f64,
}

/// Collects activation ranges by running the approximated float path.
#[derive(Debug, Clone)]
pub struct SsmCalibrator {
    dims: SsmDims,
    params: SsmParams<f64>,
    peaks: Peaks,
    steps: usize,
}

fn peak(m: &mut f64, vals: &[f64]) -> Result<()> {
    for v in vals {
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
        *m = m.max(v.abs());
    }
    Ok(())
}

/// Activation rule: tightest PoT scale, then one bit of headroom.
pub fn act_format(peak: f64) -> FixFormat {
    if peak == 0.0 {
        FixFormat::q16(DEFAULT_FRAC)
    } else {
        FixFormat::q16(-pot_exponent_for_peak(peak, 16) - 1)
    }
}

/// Parameter rule: tightest PoT scale for `peak`, no headroom.
pub fn param_format(peak: f64) -> FixFormat {
    if peak == 0.0 {
        FixFormat::q16(DEFAULT_FRAC)
    } else {
        FixFormat::q16(-pot_exponent_for_peak(peak, 16))
    }
}

impl SsmCalibrator {
    pub fn new<T: Scalar>(params: &SsmParams<T>, dims: SsmDims) -> Self {
        Self { dims, params: params.cast(), peaks: Peaks::default(), steps: 0 }
    }

    /// Observes one sequence starting from the zero state.
    pub fn observe<T: Scalar>(&mut self, seq: &[StepInputs<T>]) -> Result<()> {
        let (p, n) = (self.dims.head_dim, self.dims.d_state);
        let mut state = SsmState::<f64>::zeros(&self.dims);
        let pk = &mut self.peaks;
        for inp in seq {
            inp.check(&self.dims)?;
            let f = |v: &[T]| v.iter().map(Real::as_f64).collect::<Vec<f64>>();
            let (x, b, c, delta) = (f(&inp.x), f(&inp.b), f(&inp.c), f(&inp.dt));
            peak(&mut pk.x, &x)?;
            peak(&mut pk.b, &b)?;
            peak(&mut pk.c, &c)?;
            peak(&mut pk.delta, &delta)?;
            for hd in 0..self.dims.n_heads {
                let dt = delta[hd] + self.params.dt_bias[hd];
                let dtt = step1_delta(delta[hd], self.params.dt_bias[hd], Nonlinearity::Pwl);
                let (abar, q) = step2_discretize(dtt, self.params.a[hd], &b[hd * n..(hd + 1) * n], Nonlinearity::Pwl);
                peak(&mut pk.dt, &[dt])?;
                peak(&mut pk.dtt, &[dtt])?;
                peak(&mut pk.arg, &[dtt * self.params.a[hd]])?;
                peak(&mut pk.q, &q)?;
                let h = &mut state.h[hd * p * n..(hd + 1) * p * n];
                let y = super::recurrence_step(
                    h,
                    abar,
                    &q,
                    &x[hd * p..(hd + 1) * p],
                    &c[hd * n..(hd + 1) * n],
                    self.params.d[hd],
                )?;
                peak(&mut pk.h, h)?;
                peak(&mut pk.y, &y)?;
            }
            self.steps += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<SsmFormats> {
        if self.steps == 0 {
            return Err(Error::EmptySample);
        }
        let pk = &self.peaks;
        let pmax = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Ok(SsmFormats {
            x: act_format(pk.x),
            b: act_format(pk.b),
            c: act_format(pk.c),
            delta: act_format(pk.delta),
            bias: param_format(pmax(&self.params.dt_bias)),
            dt: act_format(pk.dt),
            dtt: if pk.dtt == 0.0 { SOFTPLUS_OUT } else { act_format(pk.dtt) },
            arg: act_format(pk.arg),
            abar: EXP_OUT,
            q: act_format(pk.q),
            h: act_format(pk.h),
            y: act_format(pk.y),
            a: param_format(pmax(&self.params.a)),
            d: param_format(pmax(&self.params.d)),
        })
    }
}

/// Formats for one calibration sequence.
pub fn ssm_quant_calibrate<T: Scalar>(
    sample: &[StepInputs<T>],
    params: &SsmParams<T>,
    dims: SsmDims,
) -> Result<SsmFormats> {
    let mut cal = SsmCalibrator::new(params, dims);
    cal.observe(sample)?;
    cal.finish()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantStepInputs {
    pub x: FixTensor,
    pub b: FixTensor,
    pub c: FixTensor,
    pub delta: FixTensor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantSsmState {
    pub h: FixTensor,
}

impl QuantSsmState {
    pub fn zeros(dims: &SsmDims, fmt: FixFormat) -> Self {
        Self { h: FixTensor::zeros(vec![dims.state_len()], fmt) }
    }

    pub fn max_abs_code(&self) -> i32 {
        self.h.codes().iter().map(|c| c.abs()).max().unwrap_or(0)
    }
}

/// Fixed-point SSM: parameters quantized once, steps run on VPU primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantSsm {
    dims: SsmDims,
    fmts: SsmFormats,
    a: FixTensor,
    d: FixTensor,
    bias: FixTensor,
    nl: NlUnit,
}

fn slice(t: &FixTensor, start: usize, len: usize) -> FixTensor {
    FixTensor::vector(t.codes()[start..start + len].to_vec(), t.fmt()).expect("codes already in range")
}

fn splat(code: i32, n: usize, fmt: FixFormat) -> FixTensor {
    FixTensor::vector(vec![code; n], fmt).expect("code already in range")
}

impl QuantSsm {
    pub fn new<T: Scalar>(params: &SsmParams<T>, dims: SsmDims, fmts: SsmFormats) -> Result<Self> {
        if params.n_heads() != dims.n_heads {
            return Err(Error::Shape(format!("{} heads of params for dims {dims:?}", params.n_heads())));
        }
        let q = |v: &[T], f| quantize_pot(v, &[v.len()], f).map(|(t, _)| t);
        Ok(Self {
            dims,
            fmts,
            a: q(&params.a, fmts.a)?,
            d: q(&params.d, fmts.d)?,
            bias: q(&params.dt_bias, fmts.bias)?,
            nl: NlUnit::new(DEFAULT_LANES).with_formats(fmts.dtt, fmts.abar),
        })
    }

    /// Rebuilds from stored codes.
    pub fn from_codes(dims: SsmDims, fmts: SsmFormats, a: FixTensor, d: FixTensor, bias: FixTensor) -> Result<Self> {
        for (name, t, f) in [("A", &a, fmts.a), ("D", &d, fmts.d), ("dt_bias", &bias, fmts.bias)] {
            if t.len() != dims.n_heads || t.fmt() != f {
                return Err(Error::BadTensor { name: name.into(), msg: format!("expected {} codes in {f:?}", dims.n_heads) });
            }
        }
        Ok(Self { dims, fmts, a, d, bias, nl: NlUnit::new(DEFAULT_LANES).with_formats(fmts.dtt, fmts.abar) })
    }

    pub fn dims(&self) -> &SsmDims {
        &self.dims
    }

    pub fn formats(&self) -> &SsmFormats {
        &self.fmts
    }

    pub fn a_codes(&self) -> &FixTensor {
        &self.a
    }

    pub fn d_codes(&self) -> &FixTensor {
        &self.d
    }

    pub fn bias_codes(&self) -> &FixTensor {
        &self.bias
    }

    pub fn zero_state(&self) -> QuantSsmState {
        QuantSsmState::zeros(&self.dims, self.fmts.h)
    }

    pub fn quantize_inputs<T: Scalar>(&self, inp: &StepInputs<T>) -> Result<(QuantStepInputs, usize)> {
        inp.check(&self.dims)?;
        let f = &self.fmts;
        let (x, s1) = quantize_pot(&inp.x, &[inp.x.len()], f.x)?;
        let (b, s2) = quantize_pot(&inp.b, &[inp.b.len()], f.b)?;
        let (c, s3) = quantize_pot(&inp.c, &[inp.c.len()], f.c)?;
        let (delta, s4) = quantize_pot(&inp.dt, &[inp.dt.len()], f.delta)?;
        Ok((QuantStepInputs { x, b, c, delta }, s1 + s2 + s3 + s4))
    }

    /// One position across every head. Returns `y` (`heads·P`, Y format).
    pub fn step(&self, state: &mut QuantSsmState, inp: &QuantStepInputs) -> Result<(FixTensor, Counters)> {
        let (hh, p, n) = (self.dims.n_heads, self.dims.head_dim, self.dims.d_state);
        let f = &self.fmts;
        for (name, t, len, fmt) in [
            ("x", &inp.x, hh * p, f.x),
            ("B", &inp.b, hh * n, f.b),
            ("C", &inp.c, hh * n, f.c),
            ("delta", &inp.delta, hh, f.delta),
        ] {
            if t.len() != len || t.fmt() != fmt {
                return Err(Error::BadTensor { name: name.into(), msg: format!("expected {len} codes in {fmt:?}") });
            }
        }
        if state.h.len() != self.dims.state_len() || state.h.fmt() != f.h {
            return Err(Error::Shape(format!("state does not match dims {:?}", self.dims)));
        }
        let mut cnt = Counters::default();
        let mut run = |kind, a: &FixTensor, b: Option<&FixTensor>, c: Option<&FixTensor>, out| -> Result<FixTensor> {
            let (t, s) = vpu_eval(kind, a, b, c, out)?;
            cnt.saturated += s;
            Ok(t)
        };

        // step 1
        let dt = run(VpuKind::Pau, &inp.delta, Some(&self.bias), None, f.dt)?;
        let sp = self.nl.eval_any(NlMode::SoftPlus, &dt)?;
        // step 2
        let arg = run(VpuKind::Pmu, &sp.tensor, Some(&self.a), None, f.arg)?;
        let ex = self.nl.eval_any(NlMode::Exp, &arg)?;
        let (dtt, abar) = (sp.tensor, ex.tensor);

        let prod = FixFormat::acc32(f.q.frac() + f.x.frac());
        let yacc_fmt = FixFormat::acc32(f.c.frac() + f.h.frac());
        let mut h_codes = state.h.codes().to_vec();
        let mut y = Vec::with_capacity(hh * p);
        for hd in 0..hh {
            let q = run(VpuKind::Pmu, &splat(dtt.codes()[hd], n, f.dtt), Some(&slice(&inp.b, hd * n, n)), None, f.q)?;
            let c = slice(&inp.c, hd * n, n);
            let ab = splat(abar.codes()[hd], n, f.abar);
            let xh = slice(&inp.x, hd * p, p);
            let mut yacc = Vec::with_capacity(p);
            // step 3
            for (pi, &xc) in xh.codes().iter().enumerate() {
                let off = (hd * p + pi) * n;
                let u = run(VpuKind::Pmu, &q, Some(&splat(xc, n, f.x)), None, prod)?;
                let row = FixTensor::vector(h_codes[off..off + n].to_vec(), f.h)?;
                let hn = run(VpuKind::Pma, &ab, Some(&row), Some(&u), f.h)?;
                yacc.push(run(VpuKind::Mat, &c, Some(&hn), None, yacc_fmt)?.codes()[0]);
                h_codes[off..off + n].copy_from_slice(hn.codes());
            }
            let yacc = FixTensor::vector(yacc, yacc_fmt)?;
            let yh = run(VpuKind::Pma, &splat(self.d.codes()[hd], p, f.d), Some(&xh), Some(&yacc), f.y)?;
            y.extend_from_slice(yh.codes());
        }
        cnt.saturated += sp.saturated + ex.saturated;
        cnt.exp_clamped += ex.clamped;
        state.h = FixTensor::vector(h_codes, f.h)?;
        Ok((FixTensor::vector(y, f.y)?, cnt))
    }

    pub fn prefill(&self, inputs: &[QuantStepInputs]) -> Result<(Vec<FixTensor>, QuantSsmState, Counters)> {
        let mut state = self.zero_state();
        let mut total = Counters::default();
        let mut ys = Vec::with_capacity(inputs.len());
        for inp in inputs {
            let (y, c) = self.step(&mut state, inp)?;
            total.add(c);
            ys.push(y);
        }
        Ok((ys, state, total))
    }

    /// Quantizes real inputs, runs from the zero state and decodes outputs.
    pub fn prefill_real<T: Scalar>(&self, inputs: &[StepInputs<T>]) -> Result<(Vec<Vec<f64>>, Counters)> {
        let mut total = Counters::default();
        let q = inputs
            .iter()
            .map(|inp| {
                let (q, s) = self.quantize_inputs(inp)?;
                total.saturated += s;
                Ok(q)
            })
            .collect::<Result<Vec<_>>>()?;
        let (ys, _, c) = self.prefill(&q)?;
        total.add(c);
        Ok((ys.iter().map(dequantize::<f64>).collect(), total))
    }
}
