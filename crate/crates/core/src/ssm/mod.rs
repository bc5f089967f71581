//! Selective state-space block.
//!
//! Per head, with scalar `A < 0`, `D` and `dt_bias`:
//!
//! 1. `Δ̃ = SoftPlus(Δ + dt_bias)`
//! 2. `Ā = exp(Δ̃·A)`, `Q = Δ̃·B`
//! 3. `H'[p,n] = Ā·H[p,n] + Q[n]·x[p]`, `y[p] = Σₙ C[n]·H'[p,n] + D·x[p]`
//!
//! The reference path runs in floating point with either exact or
//! approximated nonlinearities; [`QuantSsm`] runs the same steps on the
//! fixed-point vector units.

mod quant;

pub use quant::{
    act_format, param_format, ssm_quant_calibrate, QuantSsm, QuantSsmState, QuantStepInputs, SsmCalibrator, SsmFormats,
    DEFAULT_FRAC,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlin::{exp_neg_approx, softplus_approx, PwlTable};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsmDims {
    pub n_heads: usize,
    pub head_dim: usize,
    pub d_state: usize,
}

impl SsmDims {
    pub fn new(n_heads: usize, head_dim: usize, d_state: usize) -> Result<Self> {
        if n_heads == 0 || head_dim == 0 || d_state == 0 {
            return Err(Error::Config(format!("SSM dims must be positive: {n_heads}x{head_dim}x{d_state}")));
        }
        Ok(Self { n_heads, head_dim, d_state })
    }

    /// Channels of `x`: `heads · P`.
    pub fn inner(&self) -> usize {
        self.n_heads * self.head_dim
    }

    /// Elements of the state: `heads · P · N`.
    pub fn state_len(&self) -> usize {
        self.inner() * self.d_state
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams<T> {
    pub a: Vec<T>,
    pub d: Vec<T>,
    pub dt_bias: Vec<T>,
}

impl<T: Scalar> SsmParams<T> {
    pub fn new(a: Vec<T>, d: Vec<T>, dt_bias: Vec<T>) -> Result<Self> {
        if a.len() != d.len() || a.len() != dt_bias.len() {
            return Err(Error::Shape(format!("A/D/dt_bias lengths {}/{}/{}", a.len(), d.len(), dt_bias.len())));
        }
        if let Some(bad) = a.iter().find(|v| !(**v < T::zero())) {
            return Err(Error::Config(format!("A must be negative for every head (got {bad})")));
        }
        Ok(Self { a, d, dt_bias })
    }

    pub fn n_heads(&self) -> usize {
        self.a.len()
    }

    pub fn cast<U: Scalar>(&self) -> SsmParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of_f64(x.as_f64())).collect();
        SsmParams { a: c(&self.a), d: c(&self.d), dt_bias: c(&self.dt_bias) }
    }
}

/// Hidden state, `heads × P × N` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmState<T> {
    pub h: Vec<T>,
}

impl<T: Scalar> SsmState<T> {
    pub fn zeros(dims: &SsmDims) -> Self {
        Self { h: vec![T::zero(); dims.state_len()] }
    }

    pub fn max_abs(&self) -> T {
        self.h.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// One position: `x` is `heads·P`, `b` and `c` are `heads·N`, `dt` is
/// per head.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs<T> {
    pub x: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub dt: Vec<T>,
}

impl<T: Scalar> StepInputs<T> {
    pub fn zeros(dims: &SsmDims) -> Self {
        let hn = dims.n_heads * dims.d_state;
        Self { x: vec![T::zero(); dims.inner()], b: vec![T::zero(); hn], c: vec![T::zero(); hn], dt: vec![T::zero(); dims.n_heads] }
    }

    pub fn check(&self, dims: &SsmDims) -> Result<()> {
        let hn = dims.n_heads * dims.d_state;
        if self.x.len() != dims.inner() || self.b.len() != hn || self.c.len() != hn || self.dt.len() != dims.n_heads {
            return Err(Error::Shape(format!(
                "step inputs x/B/C/dt = {}/{}/{}/{} for dims {dims:?}",
                self.x.len(),
                self.b.len(),
                self.c.len(),
                self.dt.len()
            )));
        }
        Ok(())
    }

    /// Multiplies `x` by `k`.
    pub fn scale_x(&self, k: T) -> Self {
        Self { x: self.x.iter().map(|&v| v * k).collect(), ..self.clone() }
    }
}

/// Which SoftPlus/exp the float path uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Nonlinearity {
    #[default]
    Exact,
    /// The shift-and-chord approximations.
    Pwl,
}

fn softplus_exact<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Step 1: `Δ̃ = SoftPlus(Δ + dt_bias)`.
pub fn step1_delta<T: Scalar>(dt: T, dt_bias: T, nl: Nonlinearity) -> T {
    let x = dt + dt_bias;
    match nl {
        Nonlinearity::Exact => softplus_exact(x),
        Nonlinearity::Pwl => softplus_approx(&x, PwlTable::shared()),
    }
}

/// Step 2: `Ā = exp(Δ̃·A)` and `Q = Δ̃·B`.
pub fn step2_discretize<T: Scalar>(dtt: T, a: T, b: &[T], nl: Nonlinearity) -> (T, Vec<T>) {
    let arg = (dtt * a).min(T::zero());
    let abar = match nl {
        Nonlinearity::Exact => arg.exp(),
        Nonlinearity::Pwl => exp_neg_approx(&arg, PwlTable::shared()).expect("non-positive"),
    };
    (abar, b.iter().map(|&v| dtt * v).collect())
}

/// Step 3 for one head: updates `h` (`P × N`) in place and returns `y` (`P`).
pub fn recurrence_step<T: Scalar>(h: &mut [T], abar: T, q: &[T], x: &[T], c: &[T], d: T) -> Result<Vec<T>> {
    let n = q.len();
    if c.len() != n || h.len() != x.len() * n {
        return Err(Error::Shape(format!("state {} vs P={} N={n} (C has {})", h.len(), x.len(), c.len())));
    }
    Ok(x.iter()
        .zip(h.chunks_mut(n))
        .map(|(&xp, row)| {
            let mut acc = T::zero();
            for ((hv, &qn), &cn) in row.iter_mut().zip(q).zip(c) {
                *hv = abar * *hv + qn * xp;
                acc = acc + cn * *hv;
            }
            acc + d * xp
        })
        .collect())
}

/// One position across every head. Returns `y` (`heads·P`).
pub fn ssm_step<T: Scalar>(
    state: &mut SsmState<T>,
    inp: &StepInputs<T>,
    params: &SsmParams<T>,
    dims: &SsmDims,
    nl: Nonlinearity,
) -> Result<Vec<T>> {
    inp.check(dims)?;
    if params.n_heads() != dims.n_heads || state.h.len() != dims.state_len() {
        return Err(Error::Shape(format!("params/state do not match dims {dims:?}")));
    }
    let (p, n) = (dims.head_dim, dims.d_state);
    let mut y = Vec::with_capacity(dims.inner());
    for hd in 0..dims.n_heads {
        let dtt = step1_delta(inp.dt[hd], params.dt_bias[hd], nl);
        let (abar, q) = step2_discretize(dtt, params.a[hd], &inp.b[hd * n..(hd + 1) * n], nl);
        let h = &mut state.h[hd * p * n..(hd + 1) * p * n];
        y.extend(recurrence_step(h, abar, &q, &inp.x[hd * p..(hd + 1) * p], &inp.c[hd * n..(hd + 1) * n], params.d[hd])?);
    }
    Ok(y)
}

/// Runs a sequence from the zero state.
pub fn ssm_prefill<T: Scalar>(
    inputs: &[StepInputs<T>],
    params: &SsmParams<T>,
    dims: &SsmDims,
    nl: Nonlinearity,
) -> Result<(Vec<Vec<T>>, SsmState<T>)> {
    let mut state = SsmState::zeros(dims);
    let ys = inputs.iter().map(|inp| ssm_step(&mut state, inp, params, dims, nl)).collect::<Result<_>>()?;
    Ok((ys, state))
}
