use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hadamard::{default_groups, DEFAULT_GROUP_WIDTH};
use crate::ssm::SsmDims;

fn default_group_width() -> usize {
    DEFAULT_GROUP_WIDTH
}

fn one() -> usize {
    1
}

/// Model hyperparameters; the JSON form uses these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub expand: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub d_state: usize,
    pub d_conv: usize,
    /// Zero for hidden-vector input and output.
    pub vocab_size: usize,
    pub rms_eps: f64,
    /// Groups sharing one `B`/`C` pair.
    #[serde(default = "one")]
    pub n_groups: usize,
    /// Hadamard group width used when quantizing linears.
    #[serde(default = "default_group_width")]
    pub hadamard_group: usize,
}

impl ModelConfig {
    pub const PRESETS: [&'static str; 3] = ["mamba2-130m", "mamba2-2.7b", "tiny"];

    pub fn preset(name: &str) -> Result<Self> {
        let base = |n_layers, d_model, n_heads, vocab_size| Self {
            n_layers,
            d_model,
            expand: 2,
            n_heads,
            head_dim: 64,
            d_state: 128,
            d_conv: 4,
            vocab_size,
            rms_eps: 1e-5,
            n_groups: 1,
            hadamard_group: DEFAULT_GROUP_WIDTH,
        };
        match name {
            "mamba2-130m" => Ok(base(24, 768, 24, 50288)),
            "mamba2-2.7b" => Ok(base(64, 2560, 80, 50288)),
            "tiny" => Ok(Self { d_state: 16, ..base(2, 64, 2, 0) }),
            _ => Err(Error::Config(format!("unknown preset {name:?} (known: {})", Self::PRESETS.join(", ")))),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if [self.d_model, self.expand, self.n_heads, self.head_dim, self.d_state, self.d_conv, self.n_groups]
            .contains(&0)
        {
            return bad("dimensions must be positive".into());
        }
        if self.expand * self.d_model != self.n_heads * self.head_dim {
            return bad(format!(
                "expand·d_model = {} but n_heads·head_dim = {}",
                self.expand * self.d_model,
                self.n_heads * self.head_dim
            ));
        }
        if self.n_heads % self.n_groups != 0 {
            return bad(format!("{} heads not divisible into {} groups", self.n_heads, self.n_groups));
        }
        if !(self.rms_eps >= 0.0 && self.rms_eps.is_finite()) {
            return bad(format!("rms_eps must be a non-negative number (got {})", self.rms_eps));
        }
        Ok(())
    }

    /// Checks the Hadamard group rule for both projections.
    pub fn check_groups(&self) -> Result<()> {
        if !self.hadamard_group.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(self.hadamard_group));
        }
        default_groups(self.d_model, self.hadamard_group)?;
        default_groups(self.d_inner(), self.hadamard_group)?;
        Ok(())
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    /// Channels through the convolution: `x`, `B`, `C`.
    pub fn conv_dim(&self) -> usize {
        self.d_inner() + 2 * self.n_groups * self.d_state
    }

    /// `[z | xBC | Δ]`.
    pub fn in_proj_dim(&self) -> usize {
        self.d_inner() + self.conv_dim() + self.n_heads
    }

    pub fn ssm_dims(&self) -> SsmDims {
        SsmDims { n_heads: self.n_heads, head_dim: self.head_dim, d_state: self.d_state }
    }

    /// Weight parameter count of one block.
    pub fn block_params(&self) -> usize {
        self.d_model
            + self.in_proj_dim() * self.d_model
            + self.conv_dim() * (self.d_conv + 1)
            + 3 * self.n_heads
            + self.d_inner()
            + self.d_model * self.d_inner()
    }
}
