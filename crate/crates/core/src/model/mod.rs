//! Mamba2 block and stacked model.
//!
//! Block dataflow: `u = rms_norm(x)`; `[z | xBC | Δ] = in_proj(u)`;
//! `xBC → causal conv → silu → (x, B, C)`; SSM on `(x, B, C, Δ)`;
//! `y' = rms_norm(y · silu(z))`; `x + out_proj(y')`.
//!
//! Tensor names in FMW checkpoints:
//!
//! | name                          | float          | quantized                          |
//! |-------------------------------|----------------|------------------------------------|
//! | `embedding.weight`            | f32 `[V, d]`   | f32                                |
//! | `norm_f.weight`               | f32 `[d]`      | f32                                |
//! | `layers.i.norm.weight`        | f32 `[d]`      | f32                                |
//! | `layers.i.in_proj.*`          | `.weight` f32  | `.wq .s_w .m .s_x .s_coe .s_shift` |
//! | `layers.i.conv.*`             | `.weight .bias`| `.wq .w_frac .bias .fmt`           |
//! | `layers.i.ssm.{A,D,dt_bias}`  | f32 `[heads]`  | i16, format in `frac`              |
//! | `layers.i.ssm.fmt`            |                | i16 `[14, 2]` (width, frac)        |
//! | `layers.i.norm2.weight`       | f32 `[d_in]`   | f32                                |
//! | `layers.i.out_proj.*`         | `.weight` f32  | as `in_proj`                       |
//!
//! `embedding.weight` is present iff `vocab_size > 0` and doubles as the
//! output head; `norm_f.weight` is optional.

mod config;
mod ops;
mod quant;
mod reference;
mod weights;

pub use config::ModelConfig;
pub use ops::{causal_conv1d, gated_rms_norm, rms_norm, rms_norm_rows, silu, ConvWindow};
pub use quant::{quantize_checkpoint, quantize_fmw, QuantBlock, QuantCache, QuantConv, QuantModel};
pub use reference::{block_forward, RefCache};
pub use weights::{is_quantized, synthetic_checkpoint, FloatBlock, FloatModel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::fixpoint::Counters;
use crate::fmw::{Fmw, Tensor, TensorData};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Prefill runs any number of positions; decode exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Prefill,
    Decode,
}

/// Token ids (requires a vocabulary) or hidden vectors (`L × d_model`).
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Tokens(Vec<usize>),
    Hidden(Matrix<f64>),
}

impl ModelInput {
    pub fn len(&self) -> usize {
        match self {
            Self::Tokens(t) => t.len(),
            Self::Hidden(h) => h.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Positions `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        match self {
            Self::Tokens(t) => Self::Tokens(t[start..end].to_vec()),
            Self::Hidden(h) => Self::Hidden(
                Matrix::from_vec(end - start, h.cols(), h.data()[start * h.cols()..end * h.cols()].to_vec())
                    .expect("sized"),
            ),
        }
    }

    /// Reads a `tokens` (ids stored as f32) or `hidden` tensor.
    pub fn from_fmw(fmw: &Fmw) -> Result<Self> {
        if let Some(t) = fmw.get("tokens") {
            let ids = t
                .data
                .to_f64()
                .into_iter()
                .map(|v| {
                    if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                        Ok(v as usize)
                    } else {
                        Err(Error::BadTensor { name: "tokens".into(), msg: format!("{v} is not a token id") })
                    }
                })
                .collect::<Result<_>>()?;
            return Ok(Self::Tokens(ids));
        }
        let t = fmw.get("hidden").ok_or_else(|| Error::MissingTensor("tokens or hidden".into()))?;
        let (l, d) = match t.dims[..] {
            [l, d] => (l, d),
            [d] => (1, d),
            _ => return Err(Error::BadTensor { name: "hidden".into(), msg: "expected [L, d_model]".into() }),
        };
        if !matches!(t.data, TensorData::F32(_) | TensorData::F16(_)) {
            return Err(Error::BadTensor { name: "hidden".into(), msg: "expected a float dtype".into() });
        }
        Ok(Self::Hidden(Matrix::from_vec(l, d, t.data.to_f64())?))
    }

    pub fn to_fmw(&self) -> Fmw {
        match self {
            Self::Tokens(t) => Fmw::new(vec![Tensor::f32("tokens", vec![t.len()], t.iter().map(|&v| v as f32).collect())]),
            Self::Hidden(h) => Fmw::new(vec![Tensor::f32(
                "hidden",
                vec![h.rows(), h.cols()],
                h.data().iter().map(|&v| v as f32).collect(),
            )]),
        }
    }
}

/// Result of one forward call.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    /// Logits when the model has a vocabulary, otherwise final hidden states.
    pub output: Matrix<T>,
    /// Hidden state after each block.
    pub layers: Vec<Matrix<T>>,
    pub counters: Counters,
}

/// Shared interface of the float and quantized models.
pub trait MambaModel {
    type Elem: Scalar;
    type Cache: Clone;

    fn config(&self) -> &ModelConfig;

    fn new_caches(&self) -> Vec<Self::Cache>;

    /// Runs every block over `input`, continuing from `caches`.
    fn forward(&self, input: &ModelInput, caches: &mut [Self::Cache], mode: Mode) -> Result<Forward<Self::Elem>>;

    fn caches_to_fmw(&self, caches: &[Self::Cache]) -> Result<Fmw>;

    fn caches_from_fmw(&self, fmw: &Fmw) -> Result<Vec<Self::Cache>>;
}

pub(crate) fn check_step(cfg: &ModelConfig, input: &ModelInput, n_caches: usize, mode: Mode) -> Result<()> {
    if input.is_empty() {
        return Err(Error::Shape("input must have at least one position".into()));
    }
    if mode == Mode::Decode && input.len() != 1 {
        return Err(Error::Cache(format!("decode takes one position, got {}", input.len())));
    }
    if n_caches != cfg.n_layers {
        return Err(Error::Cache(format!("{n_caches} caches for {} layers", cfg.n_layers)));
    }
    Ok(())
}

/// Embeds `input` into `L × d_model`.
pub(crate) fn embed<T: Scalar>(cfg: &ModelConfig, embedding: Option<&Matrix<T>>, input: &ModelInput) -> Result<Matrix<T>> {
    match input {
        ModelInput::Tokens(ids) => {
            let e = embedding.ok_or_else(|| Error::Config("token input needs a vocabulary".into()))?;
            let mut out = Vec::with_capacity(ids.len() * cfg.d_model);
            for &id in ids {
                if id >= cfg.vocab_size {
                    return Err(Error::TokenRange { id, vocab: cfg.vocab_size });
                }
                out.extend_from_slice(e.row(id));
            }
            Matrix::from_vec(ids.len(), cfg.d_model, out)
        }
        ModelInput::Hidden(h) => {
            if h.cols() != cfg.d_model {
                return Err(Error::Shape(format!("hidden width {} vs d_model {}", h.cols(), cfg.d_model)));
            }
            Ok(h.map(|&v| T::of_f64(v)))
        }
    }
}

/// Final norm and tied output head.
pub(crate) fn head<T: Scalar>(cfg: &ModelConfig, embedding: Option<&Matrix<T>>, norm_f: Option<&[T]>, h: &Matrix<T>) -> Result<Matrix<T>> {
    let h = match norm_f {
        Some(w) => rms_norm_rows(h, w, T::of_f64(cfg.rms_eps))?,
        None => h.clone(),
    };
    match embedding {
        Some(e) if cfg.vocab_size > 0 => h.matmul_t(e),
        _ => Ok(h),
    }
}

/// Runs a prompt from fresh caches.
pub fn model_prefill<M: MambaModel>(model: &M, input: &ModelInput) -> Result<(Forward<M::Elem>, Vec<M::Cache>)> {
    let mut caches = model.new_caches();
    let out = model.forward(input, &mut caches, Mode::Prefill)?;
    Ok((out, caches))
}

/// One position, updating `caches` in place.
pub fn model_decode_step<M: MambaModel>(model: &M, input: &ModelInput, caches: &mut [M::Cache]) -> Result<Forward<M::Elem>> {
    model.forward(input, caches, Mode::Decode)
}

/// Deterministic input for calibration and fixtures: token ids when the
/// model has a vocabulary, unit-normal hidden vectors otherwise.
pub fn synthetic_input(cfg: &ModelConfig, len: usize, seed: u64) -> ModelInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if cfg.vocab_size > 0 {
        let u = Uniform::new(0, cfg.vocab_size).expect("non-empty vocabulary");
        ModelInput::Tokens((0..len).map(|_| u.sample(&mut rng)).collect())
    } else {
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        ModelInput::Hidden(
            Matrix::from_vec(len, cfg.d_model, (0..len * cfg.d_model).map(|_| n.sample(&mut rng)).collect())
                .expect("sized"),
        )
    }
}
