//! Sylvester Hadamard matrices and grouped Hadamard rotation.

mod linear;

pub use linear::{
    find_scale, hw_quantized_linear, quantize_int8, quantized_linear, quantized_linear_counted, requant_params, w8a8_linear,
    ActScaling, QuantLinearLayer, RequantParams, ACT_REQUANT_BITS, OUT_REQUANT_BITS,
};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Matrix;

/// Default Hadamard group width `d/m`.
pub const DEFAULT_GROUP_WIDTH: usize = 64;

/// `±1` matrix of order `n = 2^k` with `H·Hᵀ = n·I`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HadamardMatrix {
    n: usize,
    entries: Vec<i8>,
}

impl HadamardMatrix {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.entries[r * self.n + c]
    }

    /// Row-major ±1 entries.
    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    pub fn row(&self, r: usize) -> &[i8] {
        &self.entries[r * self.n..(r + 1) * self.n]
    }

    /// `H·Hᵀ` in integer arithmetic.
    pub fn gram(&self) -> Vec<i64> {
        let n = self.n;
        let mut g = vec![0i64; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = self.row(i).iter().zip(self.row(j)).map(|(&a, &b)| a as i64 * b as i64).sum();
            }
        }
        g
    }

    pub fn to_matrix<T: Real>(&self) -> Matrix<T> {
        Matrix::from_vec(self.n, self.n, self.entries.iter().map(|&e| T::of_f64(e as f64)).collect())
            .expect("square")
    }
}

/// Sylvester construction: `H₁ = [1]`, `H₂ₙ = [[Hₙ, Hₙ], [Hₙ, −Hₙ]]`.
pub fn build_hadamard(n: usize) -> Result<HadamardMatrix> {
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut entries = vec![1i8];
    let mut k = 1;
    while k < n {
        let mut next = vec![0i8; 4 * k * k];
        for r in 0..k {
            for c in 0..k {
                let h = entries[r * k + c];
                next[r * 2 * k + c] = h;
                next[r * 2 * k + c + k] = h;
                next[(r + k) * 2 * k + c] = h;
                next[(r + k) * 2 * k + c + k] = -h;
            }
        }
        entries = next;
        k *= 2;
    }
    Ok(HadamardMatrix { n, entries })
}

/// In-place `v ← v·H` for a power-of-two length (fast Walsh–Hadamard,
/// natural order).
pub fn fwht<T: Real>(v: &mut [T]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in v.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (a.clone(), b.clone());
                *a = x.clone() + y.clone();
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Width of each Hadamard group, enforcing `d mod m = 0` and `d/m = 2^k`.
pub fn group_width(d: usize, m: usize) -> Result<usize> {
    if m == 0 || d % m != 0 || !(d / m).is_power_of_two() {
        return Err(Error::GroupRule { dim: d, groups: m });
    }
    Ok(d / m)
}

/// Group count for a dimension under the default width rule: groups of
/// `min(d, group)` columns.
pub fn default_groups(d: usize, group: usize) -> Result<usize> {
    let w = d.min(group);
    if w == 0 || d % w != 0 || !w.is_power_of_two() {
        return Err(Error::GroupRule { dim: d, groups: d.checked_div(w).unwrap_or(0) });
    }
    Ok(d / w)
}

/// Right-multiplies each column group of width `d/m` by its Hadamard matrix.
pub fn hadamard_transform_groups<T: Real>(x: &Matrix<T>, m: usize) -> Result<Matrix<T>> {
    let w = group_width(x.cols(), m)?;
    let mut out = x.clone();
    for r in 0..out.rows() {
        for g in out.row_mut(r).chunks_mut(w) {
            fwht(g);
        }
    }
    Ok(out)
}
