use super::config::ModelConfig;
use super::ops::{causal_conv1d, gated_rms_norm, rms_norm_rows, silu, ConvWindow};
use super::reference::split_xbc;
use super::weights::{is_quantized, lname, read_f32, read_f32_opt, FloatBlock, FloatModel};
use super::{check_step, embed, head, synthetic_input, Forward, MambaModel, Mode, ModelInput};
use crate::error::{Error, Result};
use crate::fixpoint::{dequantize, pot_exponent_for_peak, quantize_pot, Counters, FixFormat, FixTensor, Saturation};
use crate::fmw::{Fmw, Tensor, TensorData};
use crate::hadamard::{default_groups, quantized_linear, quantized_linear_counted, QuantLinearLayer};
use crate::scalar::max_abs;
use crate::ssm::{act_format, param_format, ssm_quant_calibrate, QuantSsm, QuantSsmState, SsmFormats, StepInputs};
use crate::tensor::Matrix;

/// Positions in the synthetic calibration sample.
pub const DEFAULT_CALIB_LEN: usize = 64;
const CALIB_SEED: u64 = 0x5eed;

/// Depthwise causal convolution on the MAT units: 8-bit weights with a PoT
/// scale per channel, 16-bit activations.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantConv {
    channels: usize,
    kernel: usize,
    wq: Vec<i8>,
    w_frac: Vec<i32>,
    bias: FixTensor,
    in_fmt: FixFormat,
    out_fmt: FixFormat,
}

impl QuantConv {
    pub fn from_float(w: &Matrix<f32>, bias: &[f32], in_fmt: FixFormat, out_fmt: FixFormat) -> Result<Self> {
        let (channels, kernel) = (w.rows(), w.cols());
        if bias.len() != channels {
            return Err(Error::Shape(format!("{} bias values for {channels} channels", bias.len())));
        }
        let mut sat = Saturation::default();
        let mut wq = Vec::with_capacity(channels * kernel);
        let mut w_frac = Vec::with_capacity(channels);
        for c in 0..channels {
            let row = w.row(c);
            let peak = max_abs(row) as f64;
            let frac = if peak == 0.0 { 7 } else { -pot_exponent_for_peak(peak, 8) };
            let fmt = FixFormat::q8(frac);
            wq.extend(row.iter().map(|&v| sat.quantize(v as f64, fmt) as i8));
            w_frac.push(frac);
        }
        let (bias, _) = quantize_pot(bias, &[channels], param_format(max_abs(bias) as f64))?;
        Ok(Self { channels, kernel, wq, w_frac, bias, in_fmt, out_fmt })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn in_format(&self) -> FixFormat {
        self.in_fmt
    }

    pub fn out_format(&self) -> FixFormat {
        self.out_fmt
    }

    pub fn weight_codes(&self) -> &[i8] {
        &self.wq
    }

    pub fn weight_fracs(&self) -> &[i32] {
        &self.w_frac
    }

    /// Runs `rows` positions of input codes (`rows × channels`, input
    /// format) and returns output codes in the output format.
    pub fn forward(&self, x: &[i32], rows: usize, window: &mut ConvWindow<i32>, sat: &mut Saturation) -> Result<Vec<i32>> {
        let (ch, k) = (self.channels, self.kernel);
        if x.len() != rows * ch || window.channels() != ch || window.kernel() != k {
            return Err(Error::Shape(format!("conv input {} codes / window {}x{}", x.len(), window.channels(), window.kernel())));
        }
        let fb = self.bias.fmt().frac();
        let mut out = Vec::with_capacity(rows * ch);
        for t in 0..rows {
            for c in 0..ch {
                let cur = x[t * ch + c];
                let hist = window.channel(c);
                let w = &self.wq[c * k..(c + 1) * k];
                let acc: i128 = w
                    .iter()
                    .enumerate()
                    .map(|(j, &wj)| wj as i128 * if j + 1 == k { cur } else { hist[j] } as i128)
                    .sum();
                let acc = sat.acc32(acc);
                let fa = self.in_fmt.frac() + self.w_frac[c];
                let f = fa.max(fb);
                let s = (acc << (f - fa) as u32) + ((self.bias.codes()[c] as i128) << (f - fb) as u32);
                out.push(sat.narrow(s, f, self.out_fmt));
                window.push(c, cur);
            }
        }
        Ok(out)
    }

    fn to_tensors(&self, prefix: &str) -> Result<Vec<Tensor>> {
        let fmt = [self.in_fmt, self.out_fmt].iter().flat_map(|f| [f.width() as i16, f.frac() as i16]).collect();
        Ok(vec![
            Tensor::i8(format!("{prefix}.wq"), vec![self.channels, self.kernel], 0, self.wq.clone()),
            Tensor::i16(format!("{prefix}.w_frac"), vec![self.channels], 0, self.w_frac.iter().map(|&f| f as i16).collect()),
            Tensor::fix(format!("{prefix}.bias"), &self.bias)?,
            Tensor::i16(format!("{prefix}.fmt"), vec![2, 2], 0, fmt),
        ])
    }

    fn from_tensors(fmw: &Fmw, prefix: &str, channels: usize, kernel: usize) -> Result<Self> {
        let get = |s: &str| {
            let name = format!("{prefix}.{s}");
            fmw.get(&name).ok_or(Error::MissingTensor(name))
        };
        let bad = |s: &str, msg: String| Error::BadTensor { name: format!("{prefix}.{s}"), msg };
        let wq = match get("wq")? {
            Tensor { dims, data: TensorData::I8(v), .. } if dims[..] == [channels, kernel] => v.clone(),
            _ => return Err(bad("wq", format!("expected i8 [{channels}, {kernel}]"))),
        };
        let w_frac = match get("w_frac")? {
            Tensor { dims, data: TensorData::I16(v), .. } if dims[..] == [channels] => v.iter().map(|&f| f as i32).collect(),
            _ => return Err(bad("w_frac", format!("expected i16 [{channels}]"))),
        };
        let bias = get("bias")?.to_fix()?;
        if bias.len() != channels || bias.fmt().width() != 16 {
            return Err(bad("bias", format!("expected i16 [{channels}]")));
        }
        let fmt = match get("fmt")? {
            Tensor { data: TensorData::I16(v), .. } if v.len() == 4 => {
                [FixFormat::new(v[0].clamp(0, 255) as u8, v[1] as i32)?, FixFormat::new(v[2].clamp(0, 255) as u8, v[3] as i32)?]
            }
            _ => return Err(bad("fmt", "expected i16 [2, 2]".into())),
        };
        Ok(Self { channels, kernel, wq, w_frac, bias, in_fmt: fmt[0], out_fmt: fmt[1] })
    }
}

/// Quantized weights of one block. Norms stay in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantBlock {
    pub norm: Vec<f32>,
    pub in_proj: QuantLinearLayer,
    pub conv: QuantConv,
    pub ssm: QuantSsm,
    pub norm2: Vec<f32>,
    pub out_proj: QuantLinearLayer,
}

/// Streaming state of one quantized block, held as codes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantCache {
    pub conv: ConvWindow<i32>,
    pub ssm: QuantSsmState,
}

fn add_rows(x: &Matrix<f32>, y: &Matrix<f32>) -> Result<Matrix<f32>> {
    Matrix::from_vec(x.rows(), x.cols(), x.data().iter().zip(y.data()).map(|(&a, &b)| a + b).collect())
}

/// SSM inputs of every position from conv output and projection rows.
fn ssm_inputs(cfg: &ModelConfig, conv: &Matrix<f32>, zxd: &Matrix<f32>) -> Vec<StepInputs<f32>> {
    let (di, cd) = (cfg.d_inner(), cfg.conv_dim());
    (0..conv.rows())
        .map(|t| {
            let act: Vec<f32> = conv.row(t).iter().map(|&v| silu(v)).collect();
            split_xbc(cfg, &act, &zxd.row(t)[di + cd..])
        })
        .collect()
}

fn gate(cfg: &ModelConfig, ys: &[Vec<f32>], zxd: &Matrix<f32>, norm2: &[f32]) -> Result<Matrix<f32>> {
    let di = cfg.d_inner();
    let mut g = Vec::with_capacity(ys.len() * di);
    for (t, y) in ys.iter().enumerate() {
        g.extend(gated_rms_norm(y, &zxd.row(t)[..di], norm2, cfg.rms_eps as f32)?);
    }
    Matrix::from_vec(ys.len(), di, g)
}

impl QuantBlock {
    /// Quantizes `blk`, calibrating static scales and formats on `x`, the
    /// block input produced by the already quantized layers below. Returns
    /// the block and its output on `x`.
    pub fn calibrate(blk: &FloatBlock<f32>, cfg: &ModelConfig, x: &Matrix<f32>) -> Result<(Self, Matrix<f32>)> {
        let (di, cd, l) = (cfg.d_inner(), cfg.conv_dim(), x.rows());
        let eps = cfg.rms_eps as f32;
        let u = rms_norm_rows(x, &blk.norm, eps)?;
        let in_proj = QuantLinearLayer::from_weights(&blk.in_proj, default_groups(cfg.d_model, cfg.hadamard_group)?)?
            .calibrate(&u)?;
        let zxd = quantized_linear(&u, &in_proj)?;
        let xbc = zxd.column_block(di, cd);
        let float_conv = causal_conv1d(&xbc, &blk.conv_w, &blk.conv_b, &mut ConvWindow::zeros(cd, cfg.d_conv))?;
        let conv = QuantConv::from_float(
            &blk.conv_w,
            &blk.conv_b,
            act_format(max_abs(xbc.data()) as f64),
            act_format(max_abs(float_conv.data()) as f64),
        )?;

        let (xq, _) = quantize_pot(xbc.data(), &[l, cd], conv.in_fmt)?;
        let codes = conv.forward(xq.codes(), l, &mut ConvWindow::zeros(cd, cfg.d_conv), &mut Saturation::default())?;
        let conv_out = Matrix::from_vec(l, cd, dequantize::<f32>(&FixTensor::vector(codes, conv.out_fmt)?))?;
        let seq = ssm_inputs(cfg, &conv_out, &zxd);
        let dims = cfg.ssm_dims();
        let ssm = QuantSsm::new(&blk.ssm, dims, ssm_quant_calibrate(&seq, &blk.ssm, dims)?)?;

        let (ys, _) = ssm.prefill_real(&seq)?;
        let ys: Vec<Vec<f32>> = ys.into_iter().map(|y| y.into_iter().map(|v| v as f32).collect()).collect();
        let g = gate(cfg, &ys, &zxd, &blk.norm2)?;
        let out_proj = QuantLinearLayer::from_weights(&blk.out_proj, default_groups(di, cfg.hadamard_group)?)?
            .calibrate(&g)?;
        let block = Self { norm: blk.norm.clone(), in_proj, conv, ssm, norm2: blk.norm2.clone(), out_proj };
        let next = block.forward(x, cfg, &mut block.new_cache(cfg), Mode::Prefill)?.0;
        Ok((block, next))
    }

    pub fn new_cache(&self, cfg: &ModelConfig) -> QuantCache {
        QuantCache { conv: ConvWindow::zeros(cfg.conv_dim(), cfg.d_conv), ssm: self.ssm.zero_state() }
    }

    pub fn forward(&self, x: &Matrix<f32>, cfg: &ModelConfig, cache: &mut QuantCache, mode: Mode) -> Result<(Matrix<f32>, Counters)> {
        if mode == Mode::Decode && x.rows() != 1 {
            return Err(Error::Cache(format!("decode takes one position, got {}", x.rows())));
        }
        if cache.conv.channels() != cfg.conv_dim() || cache.ssm.h.len() != cfg.ssm_dims().state_len() {
            return Err(Error::Cache("cache does not match the block".into()));
        }
        let (di, cd, l) = (cfg.d_inner(), cfg.conv_dim(), x.rows());
        let mut cnt = Counters::default();
        let u = rms_norm_rows(x, &self.norm, cfg.rms_eps as f32)?;
        let (zxd, s) = quantized_linear_counted(&u, &self.in_proj)?;
        cnt.saturated += s;

        let xbc = zxd.column_block(di, cd);
        let (xq, s) = quantize_pot(xbc.data(), &[l, cd], self.conv.in_fmt)?;
        let mut sat = Saturation::default();
        let codes = self.conv.forward(xq.codes(), l, &mut cache.conv, &mut sat)?;
        cnt.saturated += s + sat.count();
        let conv_out = Matrix::from_vec(l, cd, dequantize::<f32>(&FixTensor::vector(codes, self.conv.out_fmt)?))?;

        let mut ys = Vec::with_capacity(l);
        for inp in ssm_inputs(cfg, &conv_out, &zxd) {
            let (q, s) = self.ssm.quantize_inputs(&inp)?;
            let (y, c) = self.ssm.step(&mut cache.ssm, &q)?;
            cnt.saturated += s;
            cnt.add(c);
            ys.push(dequantize::<f32>(&y));
        }
        let g = gate(cfg, &ys, &zxd, &self.norm2)?;
        let (out, s) = quantized_linear_counted(&g, &self.out_proj)?;
        cnt.saturated += s;
        Ok((add_rows(x, &out)?, cnt))
    }
}

/// Quantized model.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantModel {
    pub config: ModelConfig,
    pub embedding: Option<Matrix<f32>>,
    pub blocks: Vec<QuantBlock>,
    pub norm_f: Option<Vec<f32>>,
}

/// Quantizes every block, calibrating each one on the output of the
/// quantized blocks below it.
pub fn quantize_checkpoint(float: &FloatModel<f32>, sample: &ModelInput) -> Result<QuantModel> {
    let cfg = &float.config;
    cfg.validate()?;
    cfg.check_groups()?;
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut h = embed(cfg, float.embedding.as_ref(), sample)?;
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for blk in &float.blocks {
        let (qb, next) = QuantBlock::calibrate(blk, cfg, &h)?;
        blocks.push(qb);
        h = next;
    }
    Ok(QuantModel { config: cfg.clone(), embedding: float.embedding.clone(), blocks, norm_f: float.norm_f.clone() })
}

/// Float checkpoint in, quantized checkpoint out. Without a calibration
/// file a seeded synthetic sample is used.
pub fn quantize_fmw(input: &Fmw, cfg: &ModelConfig, calib: Option<&Fmw>) -> Result<Fmw> {
    if is_quantized(input) {
        return Err(Error::AlreadyQuantized);
    }
    cfg.validate()?;
    cfg.check_groups()?;
    let float = FloatModel::from_fmw(input, cfg)?;
    let sample = match calib {
        Some(f) => ModelInput::from_fmw(f)?,
        None => synthetic_input(cfg, DEFAULT_CALIB_LEN, CALIB_SEED),
    };
    quantize_checkpoint(&float, &sample)?.to_fmw()
}

impl QuantModel {
    pub fn to_fmw(&self) -> Result<Fmw> {
        let mut out = Fmw::default();
        let v = |name: String, x: &[f32]| Tensor::f32(name, vec![x.len()], x.to_vec());
        if let Some(e) = &self.embedding {
            out.push(Tensor::f32("embedding.weight", vec![e.rows(), e.cols()], e.data().to_vec()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(v(lname(i, "norm.weight"), &b.norm));
            out.tensors.extend(b.in_proj.to_tensors(&lname(i, "in_proj")));
            out.tensors.extend(b.conv.to_tensors(&lname(i, "conv"))?);
            out.push(Tensor::fix(lname(i, "ssm.A"), b.ssm.a_codes())?);
            out.push(Tensor::fix(lname(i, "ssm.D"), b.ssm.d_codes())?);
            out.push(Tensor::fix(lname(i, "ssm.dt_bias"), b.ssm.bias_codes())?);
            out.push(Tensor::i16(lname(i, "ssm.fmt"), vec![SsmFormats::LEN, 2], 0, b.ssm.formats().to_table()));
            out.push(v(lname(i, "norm2.weight"), &b.norm2));
            out.tensors.extend(b.out_proj.to_tensors(&lname(i, "out_proj")));
        }
        if let Some(n) = &self.norm_f {
            out.push(v("norm_f.weight".into(), n));
        }
        Ok(out)
    }

    pub fn from_fmw(fmw: &Fmw, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if !is_quantized(fmw) {
            return Err(Error::NotQuantized);
        }
        let (dm, di, cd, hh) = (cfg.d_model, cfg.d_inner(), cfg.conv_dim(), cfg.n_heads);
        let embedding = match cfg.vocab_size {
            0 => None,
            v => Some(Matrix::from_vec(v, dm, read_f32(fmw, "embedding.weight", &[v, dm])?)?),
        };
        let blocks = (0..cfg.n_layers)
            .map(|i| {
                let lin = |name: &str, q: usize, d: usize| -> Result<QuantLinearLayer> {
                    let l = QuantLinearLayer::from_tensors(fmw, &lname(i, name))?;
                    if (l.out_features(), l.in_features()) != (q, d) {
                        return Err(Error::BadTensor { name: lname(i, &format!("{name}.wq")), msg: format!("expected [{q}, {d}]") });
                    }
                    Ok(l)
                };
                let table = match fmw.get(&lname(i, "ssm.fmt")) {
                    Some(Tensor { data: TensorData::I16(v), .. }) => SsmFormats::from_table(v)?,
                    Some(_) => return Err(Error::BadTensor { name: lname(i, "ssm.fmt"), msg: "expected i16".into() }),
                    None => return Err(Error::MissingTensor(lname(i, "ssm.fmt"))),
                };
                let fix = |name: &str| -> Result<FixTensor> {
                    let n = lname(i, name);
                    let t = fmw.get(&n).ok_or_else(|| Error::MissingTensor(n.clone()))?.to_fix()?;
                    if t.len() != hh {
                        return Err(Error::BadTensor { name: n, msg: format!("expected {hh} values") });
                    }
                    Ok(t)
                };
                let ssm = QuantSsm::from_codes(cfg.ssm_dims(), table, fix("ssm.A")?, fix("ssm.D")?, fix("ssm.dt_bias")?)?;
                Ok(QuantBlock {
                    norm: read_f32(fmw, &lname(i, "norm.weight"), &[dm])?,
                    in_proj: lin("in_proj", cfg.in_proj_dim(), dm)?,
                    conv: QuantConv::from_tensors(fmw, &lname(i, "conv"), cd, cfg.d_conv)?,
                    ssm,
                    norm2: read_f32(fmw, &lname(i, "norm2.weight"), &[di])?,
                    out_proj: lin("out_proj", dm, di)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { config: cfg.clone(), embedding, blocks, norm_f: read_f32_opt(fmw, "norm_f.weight", &[dm])? })
    }
}

impl MambaModel for QuantModel {
    type Elem = f32;
    type Cache = QuantCache;

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn new_caches(&self) -> Vec<QuantCache> {
        self.blocks.iter().map(|b| b.new_cache(&self.config)).collect()
    }

    fn forward(&self, input: &ModelInput, caches: &mut [QuantCache], mode: Mode) -> Result<Forward<f32>> {
        let cfg = &self.config;
        check_step(cfg, input, caches.len(), mode)?;
        let mut h = embed(cfg, self.embedding.as_ref(), input)?;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        let mut counters = Counters::default();
        for (blk, cache) in self.blocks.iter().zip(caches.iter_mut()) {
            let (next, c) = blk.forward(&h, cfg, cache, mode)?;
            counters.add(c);
            h = next;
            layers.push(h.clone());
        }
        let output = head(cfg, self.embedding.as_ref(), self.norm_f.as_deref(), &h)?;
        Ok(Forward { output, layers, counters })
    }

    fn caches_to_fmw(&self, caches: &[QuantCache]) -> Result<Fmw> {
        let cfg = &self.config;
        let mut out = Fmw::default();
        for (i, (c, b)) in caches.iter().zip(&self.blocks).enumerate() {
            let conv = FixTensor::new(vec![cfg.conv_dim(), cfg.d_conv - 1], c.conv.data().to_vec(), b.conv.in_fmt)?;
            out.push(Tensor::fix(lname(i, "cache.conv"), &conv)?);
            out.push(Tensor::fix(lname(i, "cache.ssm"), &c.ssm.h)?);
        }
        Ok(out)
    }

    fn caches_from_fmw(&self, fmw: &Fmw) -> Result<Vec<QuantCache>> {
        let cfg = &self.config;
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let get = |s: &str| {
                    let n = lname(i, s);
                    fmw.get(&n).ok_or(Error::MissingTensor(n)).and_then(|t| t.to_fix())
                };
                let conv = get("cache.conv")?;
                let h = get("cache.ssm")?;
                if conv.fmt() != b.conv.in_fmt || h.fmt() != b.ssm.formats().h || h.len() != cfg.ssm_dims().state_len() {
                    return Err(Error::Cache(format!("layer {i} snapshot does not match the checkpoint formats")));
                }
                let h = FixTensor::vector(h.into_codes(), b.ssm.formats().h)?;
                Ok(QuantCache {
                    conv: ConvWindow::from_vec(cfg.conv_dim(), cfg.d_conv, conv.into_codes())?,
                    ssm: QuantSsmState { h },
                })
            })
            .collect()
    }
}
