use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::fmw::{Fmw, Tensor, TensorData};
use crate::scalar::Scalar;
use crate::ssm::SsmParams;
use crate::tensor::Matrix;

pub(crate) fn lname(i: usize, s: &str) -> String {
    format!("layers.{i}.{s}")
}

/// Unquantized weights of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatBlock<T> {
    pub norm: Vec<T>,
    /// `in_proj_dim × d_model`, rows ordered `[z | xBC | Δ]`.
    pub in_proj: Matrix<T>,
    /// `conv_dim × d_conv`.
    pub conv_w: Matrix<T>,
    pub conv_b: Vec<T>,
    pub ssm: SsmParams<T>,
    pub norm2: Vec<T>,
    /// `d_model × d_inner`.
    pub out_proj: Matrix<T>,
}

/// Unquantized model.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatModel<T> {
    pub config: ModelConfig,
    /// `vocab × d_model`, also the tied output head.
    pub embedding: Option<Matrix<T>>,
    pub blocks: Vec<FloatBlock<T>>,
    pub norm_f: Option<Vec<T>>,
}

fn cast_vec<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::of_f64(x.as_f64())).collect()
}

fn cast_mat<T: Scalar, U: Scalar>(m: &Matrix<T>) -> Matrix<U> {
    m.map(|x| U::of_f64(x.as_f64()))
}

/// Any `.wq` tensor marks a quantized checkpoint.
pub fn is_quantized(fmw: &Fmw) -> bool {
    fmw.tensors.iter().any(|t| t.name.ends_with(".wq"))
}

pub(crate) fn read_f32(fmw: &Fmw, name: &str, dims: &[usize]) -> Result<Vec<f32>> {
    let t = fmw.get(name).ok_or_else(|| Error::MissingTensor(name.into()))?;
    if t.dims != dims {
        return Err(Error::BadTensor { name: name.into(), msg: format!("dims {:?}, expected {dims:?}", t.dims) });
    }
    match &t.data {
        TensorData::F32(v) => Ok(v.clone()),
        TensorData::F16(v) => Ok(v.iter().map(|x| x.to_f32()).collect()),
        _ => Err(Error::BadTensor { name: name.into(), msg: "expected a float dtype".into() }),
    }
}

pub(crate) fn read_f32_opt(fmw: &Fmw, name: &str, dims: &[usize]) -> Result<Option<Vec<f32>>> {
    if fmw.contains(name) {
        read_f32(fmw, name, dims).map(Some)
    } else {
        Ok(None)
    }
}

impl<T: Scalar> FloatModel<T> {
    pub fn cast<U: Scalar>(&self) -> FloatModel<U> {
        FloatModel {
            config: self.config.clone(),
            embedding: self.embedding.as_ref().map(cast_mat),
            blocks: self
                .blocks
                .iter()
                .map(|b| FloatBlock {
                    norm: cast_vec(&b.norm),
                    in_proj: cast_mat(&b.in_proj),
                    conv_w: cast_mat(&b.conv_w),
                    conv_b: cast_vec(&b.conv_b),
                    ssm: b.ssm.cast(),
                    norm2: cast_vec(&b.norm2),
                    out_proj: cast_mat(&b.out_proj),
                })
                .collect(),
            norm_f: self.norm_f.as_deref().map(cast_vec),
        }
    }

    /// Zeroes every block's output projection, turning blocks into identities.
    pub fn zero_out_proj(&mut self) {
        for b in &mut self.blocks {
            b.out_proj.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

impl FloatModel<f32> {
    pub fn from_fmw(fmw: &Fmw, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        if is_quantized(fmw) {
            return Err(Error::AlreadyQuantized);
        }
        let c = config;
        let (dm, di, cd, hh) = (c.d_model, c.d_inner(), c.conv_dim(), c.n_heads);
        let mat = |name: &str, r: usize, k: usize| -> Result<Matrix<f32>> {
            Matrix::from_vec(r, k, read_f32(fmw, name, &[r, k])?)
        };
        let embedding = match c.vocab_size {
            0 => None,
            v => Some(mat("embedding.weight", v, dm)?),
        };
        let blocks = (0..c.n_layers)
            .map(|i| {
                let a = read_f32(fmw, &lname(i, "ssm.A"), &[hh])?;
                let ssm = SsmParams::new(a, read_f32(fmw, &lname(i, "ssm.D"), &[hh])?, read_f32(fmw, &lname(i, "ssm.dt_bias"), &[hh])?)
                    .map_err(|e| Error::BadTensor { name: lname(i, "ssm.A"), msg: e.to_string() })?;
                Ok(FloatBlock {
                    norm: read_f32(fmw, &lname(i, "norm.weight"), &[dm])?,
                    in_proj: mat(&lname(i, "in_proj.weight"), c.in_proj_dim(), dm)?,
                    conv_w: mat(&lname(i, "conv.weight"), cd, c.d_conv)?,
                    conv_b: read_f32(fmw, &lname(i, "conv.bias"), &[cd])?,
                    ssm,
                    norm2: read_f32(fmw, &lname(i, "norm2.weight"), &[di])?,
                    out_proj: mat(&lname(i, "out_proj.weight"), dm, di)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { config: c.clone(), embedding, blocks, norm_f: read_f32_opt(fmw, "norm_f.weight", &[dm])? })
    }

    pub fn to_fmw(&self) -> Fmw {
        let mut out = Fmw::default();
        let m = |name: String, x: &Matrix<f32>| Tensor::f32(name, vec![x.rows(), x.cols()], x.data().to_vec());
        let v = |name: String, x: &[f32]| Tensor::f32(name, vec![x.len()], x.to_vec());
        if let Some(e) = &self.embedding {
            out.push(m("embedding.weight".into(), e));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(v(lname(i, "norm.weight"), &b.norm));
            out.push(m(lname(i, "in_proj.weight"), &b.in_proj));
            out.push(m(lname(i, "conv.weight"), &b.conv_w));
            out.push(v(lname(i, "conv.bias"), &b.conv_b));
            out.push(v(lname(i, "ssm.A"), &b.ssm.a));
            out.push(v(lname(i, "ssm.D"), &b.ssm.d));
            out.push(v(lname(i, "ssm.dt_bias"), &b.ssm.dt_bias));
            out.push(v(lname(i, "norm2.weight"), &b.norm2));
            out.push(m(lname(i, "out_proj.weight"), &b.out_proj));
        }
        if let Some(n) = &self.norm_f {
            out.push(v("norm_f.weight".into(), n));
        }
        out
    }
}

/// Random weights with the usual Mamba2 initialisation ranges:
/// `A ∈ -[1, 16]`, `Δ̃` at init in `[0.001, 0.1]`, `D ≈ 1`.
pub fn synthetic_checkpoint(config: &ModelConfig, seed: u64) -> Result<FloatModel<f32>> {
    config.validate()?;
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    let gauss = |rng: &mut ChaCha8Rng, r: usize, k: usize, std: f32| {
        Matrix::from_vec(r, k, (0..r * k).map(|_| normal.sample(rng) * std).collect()).expect("sized")
    };
    let embedding = (c.vocab_size > 0).then(|| gauss(&mut rng, c.vocab_size, c.d_model, 1.0));
    let mut blocks = Vec::with_capacity(c.n_layers);
    for _ in 0..c.n_layers {
        let near_one = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.random_range(0.8f32..1.2)).collect::<Vec<_>>();
        let norm = near_one(&mut rng, c.d_model);
        let in_proj = gauss(&mut rng, c.in_proj_dim(), c.d_model, (c.d_model as f32).powf(-0.5));
        let conv_w = gauss(&mut rng, c.conv_dim(), c.d_conv, (c.d_conv as f32).powf(-0.5));
        let conv_b = (0..c.conv_dim()).map(|_| rng.random_range(-0.1f32..0.1)).collect();
        let a = (0..c.n_heads).map(|_| -rng.random_range(1.0f32..16.0)).collect();
        let d = (0..c.n_heads).map(|_| rng.random_range(0.5f32..1.5)).collect();
        let dt_bias = (0..c.n_heads)
            .map(|_| {
                let dt = (rng.random_range(0.001f64.ln()..0.1f64.ln())).exp();
                // inverse SoftPlus
                (dt + (-(-dt).exp_m1()).ln()) as f32
            })
            .collect();
        let ssm = SsmParams::new(a, d, dt_bias)?;
        let norm2 = near_one(&mut rng, c.d_inner());
        let out_proj = gauss(&mut rng, c.d_model, c.d_inner(), (c.d_inner() as f32).powf(-0.5) / (c.n_layers as f32).sqrt());
        blocks.push(FloatBlock { norm, in_proj, conv_w, conv_b, ssm, norm2, out_proj });
    }
    let norm_f = Some(vec![1.0; c.d_model]);
    Ok(FloatModel { config: c.clone(), embedding, blocks, norm_f })
}
