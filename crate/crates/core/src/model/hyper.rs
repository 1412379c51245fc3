use serde::{Deserialize, Serialize};

use crate::numerics::Activation;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Reused-representation attention blocks scored with `h + u`.
    Ram,
    /// The same blocks scored with `h` alone (no user embedding).
    RamU,
    /// Causal self-attention comparator.
    Sa,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ram => "ram",
            ModelKind::RamU => "ram-u",
            ModelKind::Sa => "sa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ram" => Ok(ModelKind::Ram),
            "ram-u" => Ok(ModelKind::RamU),
            "sa" => Ok(ModelKind::Sa),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Divisor applied to attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleRule {
    /// `sqrt(d)`, the full embedding width.
    #[default]
    SqrtD,
    /// `sqrt(d / n_h)`, the per-head width.
    SqrtHeadDim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub kind: ModelKind,
    pub d: usize,
    pub n: usize,
    pub heads: usize,
    pub blocks: usize,
    pub activation: Activation,
    pub mask_padding: bool,
    pub scale: ScaleRule,
    /// Inverted-dropout rate on the attention output and the FFN hidden
    /// layer, applied only while training. Zero disables it.
    pub dropout: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            kind: ModelKind::Ram,
            d: 64,
            n: 50,
            heads: 2,
            blocks: 2,
            activation: Activation::Gelu,
            mask_padding: true,
            scale: ScaleRule::SqrtD,
            dropout: 0.0,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            problems.push(format!("d mod n_h must be 0 (d={}, n_h={})", self.d, self.heads));
        }
        if self.blocks == 0 {
            problems.push("n_b must be at least 1".to_owned());
        }
        if self.n < 2 {
            problems.push(format!("n must be at least 2 (n={})", self.n));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout must be in [0, 1) (got {})", self.dropout));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn uses_user_embedding(&self) -> bool {
        self.kind == ModelKind::Ram
    }

    pub fn logit_divisor(&self) -> f64 {
        match self.scale {
            ScaleRule::SqrtD => (self.d as f64).sqrt(),
            ScaleRule::SqrtHeadDim => (self.head_dim() as f64).sqrt(),
        }
    }
}
