//! Model hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SageError};

/// Architecture configuration. The fused width `D` is the sum of the two
/// modality widths; the transformer requires `D` divisible by `n_heads`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim_visual: usize,
    pub dim_audio: usize,
    /// Temporal convolution layers per modality; layer `i` uses dilation `2^i`.
    #[serde(default = "default_tcn_layers")]
    pub tcn_layers: usize,
    /// Convolution kernel width (odd).
    #[serde(default = "default_tcn_kernel")]
    pub tcn_kernel: usize,
    /// Skip connection around each convolution layer.
    #[serde(default = "default_true")]
    pub tcn_residual: bool,
    /// Reliability gating between fusion and refinement; disabling it
    /// passes features through unweighted (the ablation arm).
    #[serde(default = "default_true")]
    pub use_rgf: bool,
    /// Multiply the gated features by `T`, undoing the softmax's 1/T
    /// shrinkage. Off by default (the literal gating equation).
    #[serde(default)]
    pub rgf_rescale: bool,
    #[serde(default = "default_transformer_layers")]
    pub transformer_layers: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    /// Feed-forward width as a multiple of `D`.
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    /// Concatenated heads go through an output projection; may be turned
    /// off only in single-head mode.
    #[serde(default = "default_true")]
    pub attn_output_projection: bool,
    /// Regression head hidden width; 0 means `D / 2`.
    #[serde(default)]
    pub head_hidden: usize,
}

fn default_tcn_layers() -> usize {
    2
}
fn default_tcn_kernel() -> usize {
    3
}
fn default_transformer_layers() -> usize {
    2
}
fn default_n_heads() -> usize {
    4
}
fn default_ffn_mult() -> usize {
    4
}
fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// Defaults for the given modality widths.
    pub fn new(dim_visual: usize, dim_audio: usize) -> Self {
        ModelConfig {
            dim_visual,
            dim_audio,
            tcn_layers: default_tcn_layers(),
            tcn_kernel: default_tcn_kernel(),
            tcn_residual: true,
            use_rgf: true,
            rgf_rescale: false,
            transformer_layers: default_transformer_layers(),
            n_heads: default_n_heads(),
            ffn_mult: default_ffn_mult(),
            attn_output_projection: true,
            head_hidden: 0,
        }
    }

    /// Fused feature width `D`.
    pub fn fused_dim(&self) -> usize {
        self.dim_visual + self.dim_audio
    }

    /// Per-head width `d`.
    pub fn head_dim(&self) -> usize {
        self.fused_dim() / self.n_heads
    }

    /// Feed-forward width.
    pub fn ffn_dim(&self) -> usize {
        self.fused_dim() * self.ffn_mult
    }

    /// Regression head hidden width (`D / 2` unless set explicitly).
    pub fn head_hidden_dim(&self) -> usize {
        if self.head_hidden > 0 {
            self.head_hidden
        } else {
            (self.fused_dim() / 2).max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_visual == 0 || self.dim_audio == 0 {
            return Err(SageError::Config(format!(
                "both modality widths must be >= 1, got {}/{}",
                self.dim_visual, self.dim_audio
            )));
        }
        if self.tcn_kernel % 2 == 0 || self.tcn_kernel == 0 {
            return Err(SageError::Config(format!(
                "tcn_kernel must be odd, got {}",
                self.tcn_kernel
            )));
        }
        if self.n_heads == 0 {
            return Err(SageError::Config("n_heads must be >= 1".into()));
        }
        if self.fused_dim() % self.n_heads != 0 {
            return Err(SageError::Config(format!(
                "fused width {} not divisible by {} heads",
                self.fused_dim(),
                self.n_heads
            )));
        }
        if self.ffn_mult == 0 {
            return Err(SageError::Config("ffn_mult must be >= 1".into()));
        }
        if !self.attn_output_projection && self.n_heads != 1 {
            return Err(SageError::Config(
                "attention output projection can only be dropped with a single head".into(),
            ));
        }
        Ok(())
    }
}
