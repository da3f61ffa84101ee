use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where layer normalization sits relative to the unfold step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UnfoldOrder {
    /// Unfold neighbouring embeddings, then normalize the stacked `I·D` vector.
    UnfoldLn,
    /// Normalize each `D`-dim embedding, then unfold.
    #[default]
    LnUnfold,
}

/// Input features consumed by the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Mixture RI components only (`2P` channels).
    #[default]
    MixtureOnly,
    /// Mixture (`2P`), first-stage estimates (`2C`) and filter outputs (`2C`).
    MixtureEstimateFilter,
}

impl InputMode {
    pub fn feature_count(self) -> usize {
        match self {
            InputMode::MixtureOnly => 1,
            InputMode::MixtureEstimateFilter => 3,
        }
    }
}

/// Network hyper-parameters. Keys in configuration files use the single
/// letter symbols (`D`, `B`, `I`, `J`, `H`, `L`, `E`, `C`, `P`, `F`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding dimension per T-F unit.
    #[serde(rename = "D")]
    pub emb_dim: usize,
    /// Number of stacked blocks.
    #[serde(rename = "B")]
    pub blocks: usize,
    /// Unfold / Deconv1D kernel size.
    #[serde(rename = "I")]
    pub kernel: usize,
    /// Unfold / Deconv1D stride.
    #[serde(rename = "J")]
    pub stride: usize,
    /// BLSTM hidden units per direction.
    #[serde(rename = "H")]
    pub hidden: usize,
    /// Attention heads.
    #[serde(rename = "L")]
    pub heads: usize,
    /// Query/key channels per head.
    #[serde(rename = "E")]
    pub qk_channels: usize,
    /// Number of sources.
    #[serde(rename = "C")]
    pub sources: usize,
    /// Number of input microphones.
    #[serde(rename = "P")]
    pub mics: usize,
    /// Frequency bins.
    #[serde(rename = "F")]
    pub freqs: usize,
    #[serde(default)]
    pub unfold_order: UnfoldOrder,
    #[serde(default)]
    pub inputs: InputMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("D", self.emb_dim),
            ("B", self.blocks),
            ("I", self.kernel),
            ("J", self.stride),
            ("H", self.hidden),
            ("L", self.heads),
            ("E", self.qk_channels),
            ("C", self.sources),
            ("P", self.mics),
            ("F", self.freqs),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.emb_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "D = {} is not divisible by L = {}",
                self.emb_dim, self.heads
            )));
        }
        if self.stride > self.kernel {
            return Err(Error::Config(format!(
                "stride J = {} exceeds kernel I = {}",
                self.stride, self.kernel
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.emb_dim / self.heads
    }

    /// Input channel count of each embedding branch.
    pub fn feature_channels(&self) -> Vec<usize> {
        match self.inputs {
            InputMode::MixtureOnly => vec![2 * self.mics],
            InputMode::MixtureEstimateFilter => {
                vec![2 * self.mics, 2 * self.sources, 2 * self.sources]
            }
        }
    }

    /// Width of the normalized vector feeding each BLSTM.
    pub fn norm_width(&self) -> usize {
        match self.unfold_order {
            UnfoldOrder::UnfoldLn => self.kernel * self.emb_dim,
            UnfoldOrder::LnUnfold => self.emb_dim,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
