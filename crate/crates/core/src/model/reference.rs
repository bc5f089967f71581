use super::config::ModelConfig;
use super::ops::{causal_conv1d, gated_rms_norm, rms_norm_rows, silu, ConvWindow};
use super::weights::{lname, read_f32, FloatBlock, FloatModel};
use super::{check_step, embed, head, Forward, MambaModel, Mode, ModelInput};
use crate::error::{Error, Result};
use crate::fixpoint::Counters;
use crate::fmw::{Fmw, Tensor};
use crate::scalar::Scalar;
use crate::ssm::{ssm_step, Nonlinearity, SsmState, StepInputs};
use crate::tensor::Matrix;

/// Streaming state of one float block.
#[derive(Debug, Clone, PartialEq)]
pub struct RefCache<T> {
    pub conv: ConvWindow<T>,
    pub ssm: SsmState<T>,
}

impl<T: Scalar> RefCache<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self { conv: ConvWindow::zeros(cfg.conv_dim(), cfg.d_conv), ssm: SsmState::zeros(&cfg.ssm_dims()) }
    }
}

/// Splits one conv output row into SSM inputs, broadcasting `B`/`C` over
/// the heads of each group.
pub(crate) fn split_xbc<T: Scalar>(cfg: &ModelConfig, xbc: &[T], dt: &[T]) -> StepInputs<T> {
    let (di, n) = (cfg.d_inner(), cfg.d_state);
    let gn = cfg.n_groups * n;
    let per_group = cfg.n_heads / cfg.n_groups;
    let (b, c) = (&xbc[di..di + gn], &xbc[di + gn..di + 2 * gn]);
    let bcast = |v: &[T]| (0..cfg.n_heads).flat_map(|h| v[(h / per_group) * n..(h / per_group + 1) * n].to_vec()).collect();
    StepInputs { x: xbc[..di].to_vec(), b: bcast(b), c: bcast(c), dt: dt.to_vec() }
}

/// One float block over `x` (`L × d_model`).
pub fn block_forward<T: Scalar>(
    x: &Matrix<T>,
    blk: &FloatBlock<T>,
    cfg: &ModelConfig,
    cache: &mut RefCache<T>,
    mode: Mode,
) -> Result<Matrix<T>> {
    if mode == Mode::Decode && x.rows() != 1 {
        return Err(Error::Cache(format!("decode takes one position, got {}", x.rows())));
    }
    if cache.conv.channels() != cfg.conv_dim() || cache.ssm.h.len() != cfg.ssm_dims().state_len() {
        return Err(Error::Cache("cache does not match the block".into()));
    }
    let eps = T::of_f64(cfg.rms_eps);
    let (di, cd) = (cfg.d_inner(), cfg.conv_dim());
    let u = rms_norm_rows(x, &blk.norm, eps)?;
    let zxd = u.matmul_t(&blk.in_proj)?;
    let xbc = zxd.column_block(di, cd);
    let conv = causal_conv1d(&xbc, &blk.conv_w, &blk.conv_b, &mut cache.conv)?;
    let dims = cfg.ssm_dims();
    let mut gated = Vec::with_capacity(x.rows() * di);
    for t in 0..x.rows() {
        let row = zxd.row(t);
        let act: Vec<T> = conv.row(t).iter().map(|&v| silu(v)).collect();
        let inp = split_xbc(cfg, &act, &row[di + cd..]);
        let y = ssm_step(&mut cache.ssm, &inp, &blk.ssm, &dims, Nonlinearity::Exact)?;
        gated.extend(gated_rms_norm(&y, &row[..di], &blk.norm2, eps)?);
    }
    let out = Matrix::from_vec(x.rows(), di, gated)?.matmul_t(&blk.out_proj)?;
    let data = x.data().iter().zip(out.data()).map(|(&a, &b)| a + b).collect();
    Matrix::from_vec(x.rows(), x.cols(), data)
}

impl<T: Scalar> MambaModel for FloatModel<T> {
    type Elem = T;
    type Cache = RefCache<T>;

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn new_caches(&self) -> Vec<RefCache<T>> {
        (0..self.config.n_layers).map(|_| RefCache::zeros(&self.config)).collect()
    }

    fn forward(&self, input: &ModelInput, caches: &mut [RefCache<T>], mode: Mode) -> Result<Forward<T>> {
        let cfg = &self.config;
        check_step(cfg, input, caches.len(), mode)?;
        let mut h = embed(cfg, self.embedding.as_ref(), input)?;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for (blk, cache) in self.blocks.iter().zip(caches.iter_mut()) {
            h = block_forward(&h, blk, cfg, cache, mode)?;
            layers.push(h.clone());
        }
        let output = head(cfg, self.embedding.as_ref(), self.norm_f.as_deref(), &h)?;
        Ok(Forward { output, layers, counters: Counters::default() })
    }

    fn caches_to_fmw(&self, caches: &[RefCache<T>]) -> Result<Fmw> {
        let cfg = &self.config;
        let f = |v: &[T]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<f32>>();
        let mut out = Fmw::default();
        for (i, c) in caches.iter().enumerate() {
            out.push(Tensor::f32(lname(i, "cache.conv"), vec![cfg.conv_dim(), cfg.d_conv - 1], f(c.conv.data())));
            out.push(Tensor::f32(lname(i, "cache.ssm"), vec![cfg.ssm_dims().state_len()], f(&c.ssm.h)));
        }
        Ok(out)
    }

    fn caches_from_fmw(&self, fmw: &Fmw) -> Result<Vec<RefCache<T>>> {
        let cfg = &self.config;
        let t = |v: Vec<f32>| v.into_iter().map(|x| T::of_f64(x as f64)).collect::<Vec<T>>();
        (0..cfg.n_layers)
            .map(|i| {
                let conv = read_f32(fmw, &lname(i, "cache.conv"), &[cfg.conv_dim(), cfg.d_conv - 1])?;
                let h = read_f32(fmw, &lname(i, "cache.ssm"), &[cfg.ssm_dims().state_len()])?;
                Ok(RefCache { conv: ConvWindow::from_vec(cfg.conv_dim(), cfg.d_conv, t(conv))?, ssm: SsmState { h: t(h) } })
            })
            .collect()
    }
}
