use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use qmamba::fixpoint::{Counters, FixFormat};
use qmamba::fmw::{Fmw, Tensor};
use qmamba::model::{is_quantized, quantize_fmw, FloatModel, MambaModel, Mode, ModelConfig, ModelInput, QuantModel};
use qmamba::nonlin::PwlTable;
use qmamba::perf::{estimate, CycleReport, HwConfig};
use qmamba::tensor::Matrix;
use serde_json::json;

use crate::{DataPath, DumpPwlArgs, PerfArgs, QuantizeArgs, RunArgs, RunMode, UsageError};

pub fn load_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    Ok(ModelConfig::from_json(&text).with_context(|| format!("config {}", path.display()))?)
}

pub fn load(path: &Path) -> Result<Fmw> {
    Ok(Fmw::load(path).with_context(|| format!("loading {}", path.display()))?)
}

fn save(fmw: &Fmw, path: &Path) -> Result<()> {
    Ok(fmw.save(path).with_context(|| format!("writing {}", path.display()))?)
}

fn fmt(f: FixFormat) -> String {
    format!("q{}.{}", f.width(), f.frac())
}

pub fn quantize(a: QuantizeArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let input = load(&a.input)?;
    let calib = a.calib.as_deref().map(load).transpose()?;
    let out = quantize_fmw(&input, &cfg, calib.as_ref())?;
    let model = QuantModel::from_fmw(&out, &cfg)?;
    save(&out, &a.out)?;
    for (i, b) in model.blocks.iter().enumerate() {
        let s_x = |l: &qmamba::hadamard::QuantLinearLayer| match l.scaling() {
            qmamba::hadamard::ActScaling::Static(s) => format!("{s:.6e}"),
            qmamba::hadamard::ActScaling::Dynamic => "dynamic".into(),
        };
        let f = b.ssm.formats();
        println!(
            "layer {i}: in_proj m={} s_w={:.6e} s_x={} | out_proj m={} s_w={:.6e} s_x={} | conv {}->{} | ssm x={} h={} y={}",
            b.in_proj.groups(),
            b.in_proj.weight_scale(),
            s_x(&b.in_proj),
            b.out_proj.groups(),
            b.out_proj.weight_scale(),
            s_x(&b.out_proj),
            fmt(b.conv.in_format()),
            fmt(b.conv.out_format()),
            fmt(f.x),
            fmt(f.h),
            fmt(f.y),
        );
    }
    println!("wrote {} tensors to {}", out.tensors.len(), a.out.display());
    Ok(())
}

/// Result of one `run` invocation.
pub struct RunOutput {
    pub output: Matrix<f32>,
    pub generated: Vec<usize>,
    pub counters: Counters,
    pub caches: Fmw,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn stack(rows: &[Matrix<f32>]) -> Result<Matrix<f32>> {
    let cols = rows.first().map_or(0, |m| m.cols());
    let data: Vec<f32> = rows.iter().flat_map(|m| m.data().iter().copied()).collect();
    Ok(Matrix::from_vec(data.len() / cols.max(1), cols, data)?)
}

/// Prefill: the whole input, then `steps` greedy tokens. Decode: `steps`
/// single-position calls, feeding input positions first and greedy tokens
/// after them.
pub fn drive<M: MambaModel<Elem = f32>>(
    model: &M,
    input: &ModelInput,
    mode: RunMode,
    steps: Option<usize>,
    state: Option<&Fmw>,
) -> Result<RunOutput> {
    let cfg = model.config().clone();
    let mut caches = match state {
        Some(f) => model.caches_from_fmw(f)?,
        None => model.new_caches(),
    };
    let mut counters = Counters::default();
    let mut outs = Vec::new();
    let mut generated = Vec::new();
    let (prompt, decode_steps) = match mode {
        RunMode::Prefill => (input.len(), steps.unwrap_or(0)),
        RunMode::Decode => (0, steps.unwrap_or(input.len())),
    };
    if prompt > 0 {
        let f = model.forward(input, &mut caches, Mode::Prefill)?;
        counters.add(f.counters);
        outs.push(f.output);
    }
    for i in 0..decode_steps {
        let pos = match mode {
            RunMode::Decode if i < input.len() => input.slice(i, i + 1),
            _ => {
                if cfg.vocab_size == 0 {
                    anyhow::bail!("generating past the input needs a vocabulary (step {i}, input has {} positions)", input.len());
                }
                let last = outs.last().context("nothing to continue from")?;
                let tok = argmax(last.row(last.rows() - 1));
                generated.push(tok);
                ModelInput::Tokens(vec![tok])
            }
        };
        let f = model.forward(&pos, &mut caches, Mode::Decode)?;
        counters.add(f.counters);
        outs.push(f.output);
    }
    if outs.is_empty() {
        anyhow::bail!("nothing to run");
    }
    Ok(RunOutput { output: stack(&outs)?, generated, counters, caches: model.caches_to_fmw(&caches)? })
}

pub fn run(a: RunArgs) -> Result<()> {
    if a.state.is_some() && a.mode == RunMode::Prefill {
        return Err(UsageError("--state applies to --mode decode only".into()).into());
    }
    let cfg = load_config(&a.config)?;
    let weights = load(&a.weights)?;
    let input = ModelInput::from_fmw(&load(&a.input)?)?;
    let state = a.state.as_deref().map(load).transpose()?;
    let start = Instant::now();
    let out = match a.path {
        DataPath::Ref => {
            let m = FloatModel::from_fmw(&weights, &cfg)?;
            drive(&m, &input, a.mode, a.steps, state.as_ref())?
        }
        DataPath::Quant => {
            let q = if is_quantized(&weights) {
                weights
            } else {
                eprintln!("note: float weights given, quantizing with the default calibration sample");
                quantize_fmw(&weights, &cfg, None)?
            };
            let m = QuantModel::from_fmw(&q, &cfg)?;
            drive(&m, &input, a.mode, a.steps, state.as_ref())?
        }
    };
    let secs = start.elapsed().as_secs_f64();
    let o = &out.output;
    let mut fmw = Fmw::new(vec![Tensor::f32("output", vec![o.rows(), o.cols()], o.data().to_vec())]);
    if !out.generated.is_empty() {
        fmw.push(Tensor::f32("tokens", vec![out.generated.len()], out.generated.iter().map(|&t| t as f32).collect()));
    }
    save(&fmw, &a.out)?;
    if let Some(p) = &a.state_out {
        save(&out.caches, p)?;
    }
    println!("positions: {}", o.rows());
    println!("saturated: {}", out.counters.saturated);
    println!("exp_clamped: {}", out.counters.exp_clamped);
    eprintln!("wall-clock: {:.3} s, {:.1} tokens/s", secs, o.rows() as f64 / secs.max(1e-9));
    Ok(())
}

pub fn dump_pwl(a: DumpPwlArgs) -> Result<()> {
    let t = PwlTable::shared();
    if a.json {
        let rows: Vec<_> = t
            .segments()
            .iter()
            .map(|s| {
                json!({
                    "v_lo": s.v_lo,
                    "slope": s.slope,
                    "intercept": s.intercept,
                    "slope_code": s.slope_code,
                    "intercept_code": s.intercept_code,
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&json!({ "version": 1, "coef_frac": qmamba::nonlin::COEF_FRAC, "segments": rows }))?);
    } else {
        print!("{}", t.to_csv());
    }
    Ok(())
}

fn perf_text(r: &CycleReport) -> String {
    let mut s = format!("mode         {}\ntokens       {}\ncomposition  {}\n\n", r.mode, r.tokens, if r.overlap { "overlap" } else { "sum" });
    s += &format!("{:<12} {:>16} {:>8}\n", "module", "cycles", "share");
    for ((name, c), (_, sh)) in r.modules().iter().zip(r.shares()) {
        s += &format!("{:<12} {:>16} {:>7.2}%\n", name, c, 100.0 * sh);
    }
    s += &format!("{:<12} {:>16}\n\n", "total", r.total);
    s += &format!("seconds      {:.6e}\ntokens/s     {:.3}\n", r.seconds, r.tokens_per_s);
    if let Some(e) = r.tokens_per_s_per_w {
        s += &format!("tokens/(s*W) {e:.3}\n");
    }
    s
}

pub fn perf(a: PerfArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => ModelConfig::preset(&a.preset).map_err(|e| UsageError(e.to_string()))?,
    };
    let hw = match &a.hw {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            HwConfig::from_json(&text).with_context(|| format!("hardware config {}", p.display()))?
        }
        None => HwConfig::default(),
    };
    if a.power.is_some_and(|w| !(w > 0.0 && w.is_finite())) {
        return Err(UsageError("--power must be a positive number of watts".into()).into());
    }
    let mode = match a.mode {
        RunMode::Prefill => "prefill",
        RunMode::Decode => "decode",
    };
    let r = estimate(mode, a.len, &cfg, &hw, a.overlap)?.with_power(a.power);
    if a.json {
        let shares: serde_json::Map<_, _> = r.shares().iter().map(|(n, v)| (n.to_string(), json!(v))).collect();
        let mut v = serde_json::to_value(&r)?;
        v["version"] = json!(1);
        v["shares"] = serde_json::Value::Object(shares);
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        print!("{}", perf_text(&r));
    }
    Ok(())
}
