//! Analytical cycle model of the accelerator.
//!
//! Every module is costed as `max(compute, memory)`, where memory is
//! `ceil(bytes / dram_bytes_per_cycle)`. Per layer the module costs add up
//! (no inter-module overlap) unless `overlap` is set, in which case a layer
//! costs its slowest module.
//!
//! Schedules (all divisions round up):
//!
//! * linear, `l` rows, `d → q`, `m` Hadamard groups of width `w = d/m`:
//!   `fill + l · ⌈m/groups⌉ · ⌈w/hat_lanes⌉ · ⌈q/mat_units⌉`. Each of the
//!   `groups` computing groups rotates `hat_lanes` elements per cycle and
//!   feeds them to `mat_units` output columns; partial sums are reduced
//!   across groups in the pipeline.
//! * conv: `fill + L · ⌈conv_dim/conv_mat_units⌉`, each MAT computing one
//!   kernel-4 dot product per cycle.
//! * SSM, per token (tokens are strictly sequential, so the fill is paid
//!   every token): `fill + step1 + step2 + step3` with
//!   `step1 = ⌈H/nl_lanes⌉` (SoftPlus),
//!   `step2 = max(⌈H/ssm_lane24⌉, ⌈H·N/ssm_lane64⌉)` (exp and `Q` in parallel),
//!   `step3 = H·⌈P·N/(tp·tn)⌉ + H·⌈N/tp⌉` (state tile updates, then the
//!   `C·h` reduction).
//! * norm/SiLU (floating point): `fill + L · (⌈(d_model + d_inner)/fp_lanes⌉ +
//!   ⌈(conv_dim + d_inner)/fp_lanes⌉)`.
//! * other: final norm plus the tied output head, run on the linear module.
//!
//! Memory traffic: int8 weights once per call; 16-bit SSM state and conv
//! window read and written once per call; int8 activations in and out of
//! every linear per row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hadamard::default_groups;
use crate::model::ModelConfig;
use crate::ssm::SsmDims;

/// Pipeline depth of each module, paid once per call (SSM: once per token).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineFill {
    pub linear: u64,
    pub conv: u64,
    pub ssm: u64,
    pub norm_silu: u64,
}

impl Default for PipelineFill {
    fn default() -> Self {
        Self { linear: 32, conv: 8, ssm: 16, norm_silu: 8 }
    }
}

/// Accelerator parallelism. JSON field names match the struct; missing
/// fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HwConfig {
    pub freq_mhz: f64,
    pub linear_groups: u64,
    pub hat_lanes_per_group: u64,
    pub mat_units_linear: u64,
    pub conv_mat_units: u64,
    pub ssm_lane24: u64,
    pub ssm_lane64: u64,
    /// `(rows over P, columns over N)` of one state tile.
    pub ssm_state_tile: (u64, u64),
    pub nl_lanes: u64,
    /// Floating-point lanes of the RMSNorm/SiLU path.
    pub fp_lanes: u64,
    pub pipeline_fill_cycles: PipelineFill,
    pub dram_bytes_per_cycle: f64,
}

impl Default for HwConfig {
    fn default() -> Self {
        Self {
            freq_mhz: 250.0,
            linear_groups: 6,
            hat_lanes_per_group: 4,
            mat_units_linear: 64,
            conv_mat_units: 32,
            ssm_lane24: 24,
            ssm_lane64: 64,
            ssm_state_tile: (32, 8),
            nl_lanes: 24,
            fp_lanes: 32,
            pipeline_fill_cycles: PipelineFill::default(),
            dram_bytes_per_cycle: 64.0,
        }
    }
}

impl HwConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let hw: Self = serde_json::from_str(s)?;
        hw.validate()?;
        Ok(hw)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.linear_groups,
            self.hat_lanes_per_group,
            self.mat_units_linear,
            self.conv_mat_units,
            self.ssm_lane24,
            self.ssm_lane64,
            self.ssm_state_tile.0,
            self.ssm_state_tile.1,
            self.nl_lanes,
            self.fp_lanes,
        ];
        let rates_ok = self.freq_mhz.is_finite()
            && self.freq_mhz > 0.0
            && self.dram_bytes_per_cycle.is_finite()
            && self.dram_bytes_per_cycle > 0.0;
        if counts.contains(&0) || !rates_ok {
            return Err(Error::Config("hardware parameters must be positive".into()));
        }
        Ok(())
    }

    fn mem_cycles(&self, bytes: u64) -> u64 {
        (bytes as f64 / self.dram_bytes_per_cycle).ceil() as u64
    }
}

/// Per-module cycle estimate of one call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    /// `"prefill"` or `"decode"`.
    pub mode: String,
    pub tokens: u64,
    pub overlap: bool,
    pub linear: u64,
    pub conv: u64,
    pub ssm: u64,
    pub norm_silu: u64,
    pub other: u64,
    pub total: u64,
    pub seconds: f64,
    pub tokens_per_s: f64,
    pub tokens_per_s_per_w: Option<f64>,
}

impl CycleReport {
    /// `(name, cycles)` in report order.
    pub fn modules(&self) -> [(&'static str, u64); 5] {
        [
            ("linear", self.linear),
            ("conv", self.conv),
            ("ssm", self.ssm),
            ("norm_silu", self.norm_silu),
            ("other", self.other),
        ]
    }

    /// Fraction of the module sum spent in each module.
    pub fn shares(&self) -> [(&'static str, f64); 5] {
        let sum: u64 = self.modules().iter().map(|m| m.1).sum();
        self.modules().map(|(n, c)| (n, if sum == 0 { 0.0 } else { c as f64 / sum as f64 }))
    }

    pub fn with_power(mut self, watts: Option<f64>) -> Self {
        self.tokens_per_s_per_w = watts.filter(|w| *w > 0.0).map(|w| efficiency(self.tokens_per_s, w));
        self
    }
}

/// Tokens per second per watt.
pub fn efficiency(tokens_per_s: f64, watts: f64) -> f64 {
    tokens_per_s / watts
}

fn cdiv(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Compute cycles of one linear layer; zero rows cost nothing.
pub fn estimate_linear_cycles(l: u64, d: u64, q: u64, m: u64, hw: &HwConfig) -> u64 {
    if l == 0 {
        return 0;
    }
    let w = cdiv(d, m.max(1));
    let per_row = cdiv(m, hw.linear_groups) * cdiv(w, hw.hat_lanes_per_group) * cdiv(q, hw.mat_units_linear);
    hw.pipeline_fill_cycles.linear + l * per_row
}

/// Compute cycles of one SSM call over `len` tokens, exactly `len` times
/// the per-token cost.
pub fn estimate_ssm_cycles(len: u64, dims: &SsmDims, hw: &HwConfig) -> u64 {
    let (h, p, n) = (dims.n_heads as u64, dims.head_dim as u64, dims.d_state as u64);
    let (tp, tn) = hw.ssm_state_tile;
    let step1 = cdiv(h, hw.nl_lanes);
    let step2 = cdiv(h, hw.ssm_lane24).max(cdiv(h * n, hw.ssm_lane64));
    let step3 = h * cdiv(p * n, tp * tn) + h * cdiv(n, tp);
    len * (hw.pipeline_fill_cycles.ssm + step1 + step2 + step3)
}

fn conv_cycles(len: u64, cfg: &ModelConfig, hw: &HwConfig) -> u64 {
    if len == 0 {
        return 0;
    }
    hw.pipeline_fill_cycles.conv + len * cdiv(cfg.conv_dim() as u64, hw.conv_mat_units)
}

fn norm_cycles(len: u64, cfg: &ModelConfig, hw: &HwConfig) -> u64 {
    if len == 0 {
        return 0;
    }
    let (dm, di, cd) = (cfg.d_model as u64, cfg.d_inner() as u64, cfg.conv_dim() as u64);
    hw.pipeline_fill_cycles.norm_silu + len * (cdiv(dm + di, hw.fp_lanes) + cdiv(cd + di, hw.fp_lanes))
}

/// `max(compute, memory)` of one linear over `len` rows.
fn linear_module(len: u64, d: u64, q: u64, group: usize, hw: &HwConfig) -> Result<u64> {
    let m = default_groups(d as usize, group)? as u64;
    let bytes = d * q + 4 * q + len * (d + q);
    Ok(estimate_linear_cycles(len, d, q, m, hw).max(hw.mem_cycles(bytes)))
}

struct Breakdown {
    linear: u64,
    conv: u64,
    ssm: u64,
    norm_silu: u64,
}

fn layer_breakdown(len: u64, cfg: &ModelConfig, hw: &HwConfig) -> Result<Breakdown> {
    let (dm, di, cd, h) = (cfg.d_model as u64, cfg.d_inner() as u64, cfg.conv_dim() as u64, cfg.n_heads as u64);
    let linear = linear_module(len, dm, cfg.in_proj_dim() as u64, cfg.hadamard_group, hw)?
        + linear_module(len, di, dm, cfg.hadamard_group, hw)?;
    let k = cfg.d_conv as u64;
    let conv_bytes = cd * (k + 2) + 2 * 2 * cd * k.saturating_sub(1) + len * 2 * 2 * cd;
    let conv = conv_cycles(len, cfg, hw).max(hw.mem_cycles(conv_bytes));
    let dims = cfg.ssm_dims();
    let state = 2 * dims.state_len() as u64;
    let ssm_bytes = 2 * state + 3 * 2 * h + len * 2 * (cd + h + di);
    let ssm = estimate_ssm_cycles(len, &dims, hw).max(hw.mem_cycles(ssm_bytes));
    let norm_bytes = 4 * (dm + di);
    let norm_silu = norm_cycles(len, cfg, hw).max(hw.mem_cycles(norm_bytes));
    Ok(Breakdown { linear, conv, ssm, norm_silu })
}

fn other_cycles(len: u64, cfg: &ModelConfig, hw: &HwConfig) -> Result<u64> {
    let dm = cfg.d_model as u64;
    let norm = if len == 0 { 0 } else { hw.pipeline_fill_cycles.norm_silu + len * cdiv(dm, hw.fp_lanes) };
    let head = match cfg.vocab_size {
        0 => 0,
        v => linear_module(len, dm, v as u64, cfg.hadamard_group, hw)?,
    };
    Ok(norm + head)
}

fn report(mode: &str, len: u64, cfg: &ModelConfig, hw: &HwConfig, overlap: bool) -> Result<CycleReport> {
    cfg.validate()?;
    hw.validate()?;
    let b = layer_breakdown(len, cfg, hw)?;
    let layers = cfg.n_layers as u64;
    let other = other_cycles(len, cfg, hw)?;
    let per_layer = if overlap {
        b.linear.max(b.conv).max(b.ssm).max(b.norm_silu)
    } else {
        b.linear + b.conv + b.ssm + b.norm_silu
    };
    let total = layers * per_layer + other;
    let seconds = total as f64 / (hw.freq_mhz * 1e6);
    Ok(CycleReport {
        mode: mode.into(),
        tokens: len,
        overlap,
        linear: layers * b.linear,
        conv: layers * b.conv,
        ssm: layers * b.ssm,
        norm_silu: layers * b.norm_silu,
        other,
        total,
        seconds,
        tokens_per_s: if seconds > 0.0 { len as f64 / seconds } else { 0.0 },
        tokens_per_s_per_w: None,
    })
}

/// Prompt of `len` tokens from empty state.
pub fn estimate_prefill(len: u64, cfg: &ModelConfig, hw: &HwConfig) -> Result<CycleReport> {
    report("prefill", len, cfg, hw, false)
}

/// One generated token. The recurrent state has a fixed size, so the cost
/// does not depend on how many tokens came before.
pub fn estimate_decode(cfg: &ModelConfig, hw: &HwConfig, power_watts: Option<f64>) -> Result<CycleReport> {
    Ok(report("decode", 1, cfg, hw, false)?.with_power(power_watts))
}

/// [`estimate_prefill`] / [`estimate_decode`] with an explicit composition.
pub fn estimate(mode: &str, len: u64, cfg: &ModelConfig, hw: &HwConfig, overlap: bool) -> Result<CycleReport> {
    match mode {
        "prefill" => report("prefill", len, cfg, hw, overlap),
        "decode" => report("decode", 1, cfg, hw, overlap),
        other => Err(Error::Config(format!("unknown mode {other:?}"))),
    }
}
