//! Named parameter store and initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SageError};
use crate::numerics::Tensor;

use super::config::ModelConfig;

/// How one parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
    Uniform { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

/// Name, shape, and initializer of one parameter tensor. The list order
/// is canonical: it fixes the random-draw order at initialization and the
/// tensor order in checkpoints and optimizer state.
#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

/// The canonical parameter list for a configuration.
pub(crate) fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.fused_dim();
    let d_ff = cfg.ffn_dim();
    let d_h = cfg.head_hidden_dim();
    let k = cfg.tcn_kernel;
    let mut specs = Vec::new();

    let mut push = |name: String, shape: Vec<usize>, init: Init| {
        specs.push(ParamSpec { name, shape, init });
    };

    for (prefix, c) in [("tcn_v", cfg.dim_visual), ("tcn_a", cfg.dim_audio)] {
        for layer in 0..cfg.tcn_layers {
            push(
                format!("{prefix}.layer{layer}.kernel"),
                vec![k, c, c],
                Init::Uniform { fan_in: k * c, fan_out: k * c },
            );
            push(format!("{prefix}.layer{layer}.bias"), vec![c], Init::Zeros);
        }
    }

    if cfg.use_rgf {
        push("rgf.w".into(), vec![1, d], Init::Uniform { fan_in: d, fan_out: 1 });
        push("rgf.b".into(), vec![1], Init::Zeros);
    }

    for layer in 0..cfg.transformer_layers {
        let p = format!("transformer.layer{layer}");
        for m in ["w_q", "w_k", "w_v"] {
            push(format!("{p}.{m}"), vec![d, d], Init::Uniform { fan_in: d, fan_out: d });
        }
        if cfg.attn_output_projection {
            push(format!("{p}.w_o"), vec![d, d], Init::Uniform { fan_in: d, fan_out: d });
        }
        push(format!("{p}.ffn_w1"), vec![d, d_ff], Init::Uniform { fan_in: d, fan_out: d_ff });
        push(format!("{p}.ffn_b1"), vec![d_ff], Init::Zeros);
        push(format!("{p}.ffn_w2"), vec![d_ff, d], Init::Uniform { fan_in: d_ff, fan_out: d });
        push(format!("{p}.ffn_b2"), vec![d], Init::Zeros);
        push(format!("{p}.norm1_gamma"), vec![d], Init::Ones);
        push(format!("{p}.norm1_beta"), vec![d], Init::Zeros);
        push(format!("{p}.norm2_gamma"), vec![d], Init::Ones);
        push(format!("{p}.norm2_beta"), vec![d], Init::Zeros);
    }

    push("head.w1".into(), vec![d, d_h], Init::Uniform { fan_in: d, fan_out: d_h });
    push("head.b1".into(), vec![d_h], Init::Zeros);
    push("head.w2".into(), vec![d_h, 2], Init::Uniform { fan_in: d_h, fan_out: 2 });
    push("head.b2".into(), vec![2], Init::Zeros);
    specs
}

/// All model parameters, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct SageParams {
    entries: Vec<(String, Tensor)>,
}

impl SageParams {
    /// Fresh parameters for `cfg`, drawn deterministically from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = param_specs(cfg)
            .into_iter()
            .map(|spec| {
                let numel: usize = spec.shape.iter().product();
                let data = match spec.init {
                    Init::Uniform { fan_in, fan_out } => {
                        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..numel).map(|_| rng.gen_range(-a..a)).collect()
                    }
                    Init::Zeros => vec![0.0; numel],
                    Init::Ones => vec![1.0; numel],
                };
                Ok((spec.name, Tensor::new(spec.shape, data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SageParams { entries })
    }

    /// Rebuilds parameters from named tensors (checkpoint loading),
    /// verifying the set matches `cfg`'s canonical list exactly.
    pub fn from_entries(
        cfg: &ModelConfig,
        mut named: std::collections::BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut entries = Vec::new();
        for spec in param_specs(cfg) {
            let tensor = named.remove(&spec.name).ok_or_else(|| {
                SageError::Config(format!("checkpoint is missing parameter \"{}\"", spec.name))
            })?;
            if tensor.shape() != spec.shape.as_slice() {
                return Err(SageError::Config(format!(
                    "parameter \"{}\": shape {:?} does not match configured {:?}",
                    spec.name,
                    tensor.shape(),
                    spec.shape
                )));
            }
            if !tensor.all_finite() {
                return Err(SageError::Domain(format!(
                    "parameter \"{}\" contains non-finite values",
                    spec.name
                )));
            }
            entries.push((spec.name, tensor));
        }
        if let Some((name, _)) = named.into_iter().next() {
            return Err(SageError::Config(format!(
                "checkpoint has unexpected parameter \"{name}\""
            )));
        }
        Ok(SageParams { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parameters in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub(crate) fn tensor_at(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub(crate) fn tensor_at_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    #[cfg(test)]
    pub(crate) fn set(&mut self, name: &str, tensor: Tensor) {
        let slot = self
            .entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(slot.1.shape(), tensor.shape(), "shape change for {name}");
        slot.1 = tensor;
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }
}
