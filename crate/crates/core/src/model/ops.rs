use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// `x / sqrt(mean(x²) + eps) · w`.
pub fn rms_norm<T: Scalar>(x: &[T], weight: &[T], eps: T) -> Result<Vec<T>> {
    if x.len() != weight.len() {
        return Err(Error::Length(format!("rms_norm input {} vs weight {}", x.len(), weight.len())));
    }
    let n = T::of_f64(x.len() as f64);
    let ms = x.iter().map(|&v| v * v).sum::<T>() / n;
    let denom = (ms + eps).sqrt();
    Ok(x.iter()
        .zip(weight)
        .map(|(&v, &w)| if denom == T::zero() { T::zero() } else { v / denom * w })
        .collect())
}

/// Row-wise [`rms_norm`].
pub fn rms_norm_rows<T: Scalar>(x: &Matrix<T>, weight: &[T], eps: T) -> Result<Matrix<T>> {
    let mut out = Vec::with_capacity(x.data().len());
    for r in 0..x.rows() {
        out.extend(rms_norm(x.row(r), weight, eps)?);
    }
    Matrix::from_vec(x.rows(), x.cols(), out)
}

/// `x · sigmoid(x)`.
pub fn silu<T: Scalar>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

/// Gate then normalize: `rms_norm(y · silu(z)) · w`.
pub fn gated_rms_norm<T: Scalar>(y: &[T], z: &[T], weight: &[T], eps: T) -> Result<Vec<T>> {
    if y.len() != z.len() {
        return Err(Error::Length(format!("gate {} vs input {}", z.len(), y.len())));
    }
    let g: Vec<T> = y.iter().zip(z).map(|(&a, &b)| a * silu(b)).collect();
    rms_norm(&g, weight, eps)
}

/// Last `k - 1` inputs of every channel, oldest first (`channels × (k-1)`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWindow<T> {
    channels: usize,
    taps: usize,
    data: Vec<T>,
}

impl<T: Clone + num_traits::Zero> ConvWindow<T> {
    pub fn zeros(channels: usize, kernel: usize) -> Self {
        let taps = kernel.saturating_sub(1);
        Self { channels, taps, data: vec![T::zero(); channels * taps] }
    }

    pub fn from_vec(channels: usize, kernel: usize, data: Vec<T>) -> Result<Self> {
        let taps = kernel.saturating_sub(1);
        if data.len() != channels * taps {
            return Err(Error::Cache(format!("conv window holds {} values, expected {}", data.len(), channels * taps)));
        }
        Ok(Self { channels, taps, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kernel(&self) -> usize {
        self.taps + 1
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.taps..(c + 1) * self.taps]
    }

    /// Shifts `v` into channel `c`.
    pub fn push(&mut self, c: usize, v: T) {
        if self.taps == 0 {
            return;
        }
        let w = &mut self.data[c * self.taps..(c + 1) * self.taps];
        w.rotate_left(1);
        w[self.taps - 1] = v;
    }
}

/// Causal depthwise convolution over `x` (`L × channels`) with `kernel`
/// (`channels × k`). `y_t = Σⱼ k_j · x_(t-k+1+j) + bias`, continuing from
/// `window` and leaving it holding the last inputs.
pub fn causal_conv1d<T: Scalar>(
    x: &Matrix<T>,
    kernel: &Matrix<T>,
    bias: &[T],
    window: &mut ConvWindow<T>,
) -> Result<Matrix<T>> {
    let (ch, k) = (kernel.rows(), kernel.cols());
    if x.cols() != ch || bias.len() != ch {
        return Err(Error::Shape(format!("conv input {} / bias {} for {ch} channels", x.cols(), bias.len())));
    }
    if window.channels() != ch || window.kernel() != k {
        return Err(Error::Shape(format!(
            "kernel length {k} does not match the window (kernel {}, {} channels)",
            window.kernel(),
            window.channels()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), ch);
    for t in 0..x.rows() {
        for c in 0..ch {
            let w = kernel.row(c);
            let hist = window.channel(c);
            let cur = *x.get(t, c);
            let mut acc = T::zero();
            for (j, &kj) in w.iter().enumerate() {
                let v = if j + 1 == k { cur } else { hist[j] };
                acc = acc + kj * v;
            }
            out.set(t, c, acc + bias[c]);
            window.push(c, cur);
        }
    }
    Ok(out)
}
