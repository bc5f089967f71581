//! Error metrics between an estimate and a reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Length(format!("{} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// `‖a − b‖ / ‖b‖`; zero when both are zero, infinite when only `b` is.
pub fn rel_l2(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b)?;
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    Ok(match (num == 0.0, den == 0.0) {
        (true, _) => 0.0,
        (false, true) => f64::INFINITY,
        _ => num / den,
    })
}

/// Cosine similarity; two zero vectors count as identical.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b)?;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    Ok(match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, _) | (_, true) => 0.0,
        _ => dot / (na * nb),
    })
}

pub fn max_abs_err(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// The three metrics together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub rel_l2: f64,
    pub cosine: f64,
    pub max_abs: f64,
}

impl ErrorMetrics {
    pub fn between(estimate: &[f64], reference: &[f64]) -> Result<Self> {
        Ok(Self {
            rel_l2: rel_l2(estimate, reference)?,
            cosine: cosine(estimate, reference)?,
            max_abs: max_abs_err(estimate, reference)?,
        })
    }
}
