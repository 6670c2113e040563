//! The fusion network forward pass, built op by op on the graph.
//!
//! Pipeline: per-modality temporal convolutions, row-wise concatenation,
//! reliability gating (a softmax over time reweighting every frame's
//! fused feature), a transformer encoder for longer-range refinement, and
//! a frame-wise tanh regression head.

use std::collections::HashMap;

use crate::error::{Result, SageError};
use crate::numerics::{Graph, Tensor, Var};

use super::config::ModelConfig;
use super::params::SageParams;

/// Per-frame reliability weights: positive, summing to 1 over the clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityWeights {
    alpha: Vec<f64>,
}

impl ReliabilityWeights {
    /// Sum must be 1 within 1e-9 and every entry in (0, 1]; the upper
    /// bound is attained only by a single-frame clip.
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(SageError::Contract("reliability weights are empty".into()));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SageError::Contract(format!(
                "reliability weights sum to {sum}, expected 1"
            )));
        }
        if alpha.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(SageError::Contract("reliability weight outside (0, 1]".into()));
        }
        Ok(ReliabilityWeights { alpha })
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Inference output for one clip.
#[derive(Debug, Clone)]
pub struct SageOutput {
    /// `[T x 2]`: valence column 0, arousal column 1, each in (-1, 1).
    pub predictions: Tensor,
    pub alpha: ReliabilityWeights,
    /// Refined features `[T x D]` out of the transformer.
    pub refined: Tensor,
}

/// Parameter leaves registered on a graph, looked up by canonical name.
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| SageError::Contract(format!("unbound parameter \"{name}\"")))
    }

    /// Leaves in canonical parameter order.
    pub fn ordered(&self) -> &[Var] {
        &self.vars
    }
}

/// Registers every parameter tensor as a graph leaf; `trainable` marks
/// them as differentiation targets.
pub fn bind_params(g: &mut Graph, params: &SageParams, trainable: bool) -> BoundParams {
    let mut vars = Vec::with_capacity(params.len());
    let mut index = HashMap::with_capacity(params.len());
    for (i, (name, tensor)) in params.iter().enumerate() {
        let t = if trainable { tensor.clone().with_grad() } else { tensor.clone() };
        vars.push(g.leaf(t));
        index.insert(name.to_string(), i);
    }
    BoundParams { vars, index }
}

/// One temporal-convolution layer's parameters.
#[derive(Clone, Copy)]
pub struct TcnLayerVars {
    pub kernel: Var,
    pub bias: Var,
}

/// Stack of dilated convolutions over `[T x C]`; layer `i` uses dilation
/// `2^i`. Each layer is convolution, bias, ReLU, and (optionally) a skip
/// connection around all three. Channel counts are preserved, so the
/// output is `[T x C]`.
pub fn tcn_forward(
    g: &mut Graph,
    x: Var,
    layers: &[TcnLayerVars],
    residual: bool,
) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        let kernel_shape = g.value(layer.kernel).shape().to_vec();
        if kernel_shape[1] != kernel_shape[2] {
            return Err(SageError::Config(format!(
                "temporal convolution must preserve channels, kernel is {kernel_shape:?}"
            )));
        }
        let y = g.conv1d(h, layer.kernel, 1 << i)?;
        let y = g.add_rows(y, layer.bias)?;
        let y = g.relu(y)?;
        h = if residual { g.add(y, h)? } else { y };
    }
    Ok(h)
}

/// Reliability gating: per-frame logits `g = X W_r^T + b_r`, softmax over
/// the `T` frames, then row `t` of `X` scaled by its weight. With
/// `rescale`, the result is additionally multiplied by `T` so the average
/// feature magnitude is independent of clip length.
pub fn rgf_forward(
    g: &mut Graph,
    x: Var,
    w_r: Var,
    b_r: Var,
    rescale: bool,
) -> Result<(Var, Var)> {
    let t = g.value(x).rows();
    let w_t = g.transpose(w_r)?;
    let logits = g.matmul(x, w_t)?;
    let logits = g.add_scalar(logits, b_r)?;
    let logits = g.reshape(logits, vec![t])?;
    let alpha = g.softmax_vec(logits)?;
    let mut z = g.scale_rows(x, alpha)?;
    if rescale {
        z = g.scale_const(z, t as f64)?;
    }
    Ok((z, alpha))
}

/// Multi-head scaled dot-product self-attention over `[T x D]`.
/// Heads are contiguous column blocks of width `D / n_heads`; each head's
/// scores are scaled by `1/sqrt(head width)`. Concatenated head outputs
/// go through `w_o` when given (mandatory for more than one head).
pub fn attention_forward(
    g: &mut Graph,
    x: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    w_o: Option<Var>,
    n_heads: usize,
) -> Result<Var> {
    attention_with_probs(g, x, w_q, w_k, w_v, w_o, n_heads).map(|(out, _)| out)
}

/// As `attention_forward`, also returning each head's `[T x T]`
/// attention-probability matrix for inspection.
pub(crate) fn attention_with_probs(
    g: &mut Graph,
    x: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    w_o: Option<Var>,
    n_heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let d = g.value(x).cols();
    if n_heads == 0 || d % n_heads != 0 {
        return Err(SageError::Config(format!(
            "width {d} not divisible into {n_heads} heads"
        )));
    }
    if w_o.is_none() && n_heads != 1 {
        return Err(SageError::Config(
            "multiple heads require an output projection".into(),
        ));
    }
    let dh = d / n_heads;
    let q = g.matmul(x, w_q)?;
    let k = g.matmul(x, w_k)?;
    let v = g.matmul(x, w_v)?;

    let mut probs = Vec::with_capacity(n_heads);
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scaled = g.scale_const(scores, 1.0 / (dh as f64).sqrt())?;
        let attn = g.softmax_rows(scaled)?;
        probs.push(attn);
        heads.push(g.matmul(attn, vh)?);
    }
    let mut cat = heads[0];
    for &h in &heads[1..] {
        cat = g.concat_cols(cat, h)?;
    }
    let out = match w_o {
        Some(w_o) => g.matmul(cat, w_o)?,
        None => cat,
    };
    Ok((out, probs))
}

/// One transformer layer's parameters.
#[derive(Clone, Copy)]
pub struct TransformerLayerVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Option<Var>,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub norm1_gamma: Var,
    pub norm1_beta: Var,
    pub norm2_gamma: Var,
    pub norm2_beta: Var,
}

/// Sinusoidal positional encoding `[T x D]`: even columns carry sines,
/// odd columns cosines, with geometrically spaced wavelengths.
pub fn positional_encoding(t_len: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(t_len * d);
    for t in 0..t_len {
        for j in 0..d {
            let pair = (j - j % 2) as f64;
            let rate = 1.0 / 10000f64.powf(pair / d as f64);
            let angle = t as f64 * rate;
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::unchecked(vec![t_len, d], data)
}

/// Post-norm transformer encoder: adds positional encoding, then per
/// layer `H <- LayerNorm(H + Attention(H))` and
/// `H <- LayerNorm(H + FFN(H))` with a ReLU feed-forward.
pub fn transformer_forward(
    g: &mut Graph,
    z: Var,
    layers: &[TransformerLayerVars],
    n_heads: usize,
) -> Result<Var> {
    let (t_len, d) = {
        let zt = g.value(z);
        (zt.rows(), zt.cols())
    };
    let pe = g.constant(positional_encoding(t_len, d));
    let mut h = g.add(z, pe)?;
    for layer in layers {
        let attn =
            attention_forward(g, h, layer.w_q, layer.w_k, layer.w_v, layer.w_o, n_heads)?;
        let sum = g.add(h, attn)?;
        h = g.layer_norm(sum, layer.norm1_gamma, layer.norm1_beta)?;

        let f1 = g.matmul(h, layer.ffn_w1)?;
        let f1 = g.add_rows(f1, layer.ffn_b1)?;
        let f1 = g.relu(f1)?;
        let f2 = g.matmul(f1, layer.ffn_w2)?;
        let f2 = g.add_rows(f2, layer.ffn_b2)?;
        let sum2 = g.add(h, f2)?;
        h = g.layer_norm(sum2, layer.norm2_gamma, layer.norm2_beta)?;
    }
    Ok(h)
}

/// Frame-wise regression head: Linear, ReLU, Linear, tanh, applied to each
/// row independently. Output is `[T x 2]`.
pub fn regression_head(
    g: &mut Graph,
    h: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
) -> Result<Var> {
    let l1 = g.matmul(h, w1)?;
    let l1 = g.add_rows(l1, b1)?;
    let r = g.relu(l1)?;
    let l2 = g.matmul(r, w2)?;
    let l2 = g.add_rows(l2, b2)?;
    g.tanh(l2)
}

/// Variables produced by one full forward pass.
pub struct ForwardVars {
    pub predictions: Var,
    pub alpha: Var,
    pub refined: Var,
}

/// Full pipeline on the graph: modality encoders, concatenation (visual
/// columns first), reliability gating, transformer, head. With gating
/// disabled (`use_rgf: false`) the fused features pass through unchanged
/// and `alpha` is the uniform constant `1/T`.
pub fn sage_forward(
    g: &mut Graph,
    bp: &BoundParams,
    cfg: &ModelConfig,
    xv: Var,
    xa: Var,
) -> Result<ForwardVars> {
    cfg.validate()?;
    let (tv, dv) = {
        let t = g.value(xv);
        (t.rows(), t.cols())
    };
    let (ta, da) = {
        let t = g.value(xa);
        (t.rows(), t.cols())
    };
    if dv != cfg.dim_visual || da != cfg.dim_audio {
        return Err(SageError::Config(format!(
            "input widths {dv}/{da} do not match configured {}/{}",
            cfg.dim_visual, cfg.dim_audio
        )));
    }
    if tv != ta {
        return Err(SageError::Alignment(format!(
            "modalities disagree on length: {tv} visual vs {ta} audio frames"
        )));
    }

    let tcn_layers = |g: &BoundParams, prefix: &str| -> Result<Vec<TcnLayerVars>> {
        (0..cfg.tcn_layers)
            .map(|i| {
                Ok(TcnLayerVars {
                    kernel: g.var(&format!("{prefix}.layer{i}.kernel"))?,
                    bias: g.var(&format!("{prefix}.layer{i}.bias"))?,
                })
            })
            .collect()
    };
    let enc_v = tcn_forward(g, xv, &tcn_layers(bp, "tcn_v")?, cfg.tcn_residual)?;
    let enc_a = tcn_forward(g, xa, &tcn_layers(bp, "tcn_a")?, cfg.tcn_residual)?;
    let fused = g.concat_cols(enc_v, enc_a)?;

    let (z, alpha) = if cfg.use_rgf {
        let w_r = bp.var("rgf.w")?;
        let b_r = bp.var("rgf.b")?;
        rgf_forward(g, fused, w_r, b_r, cfg.rgf_rescale)?
    } else {
        let uniform = g.constant(Tensor::full(&[tv], 1.0 / tv as f64));
        (fused, uniform)
    };

    let layers: Vec<TransformerLayerVars> = (0..cfg.transformer_layers)
        .map(|i| {
            let p = format!("transformer.layer{i}");
            Ok(TransformerLayerVars {
                w_q: bp.var(&format!("{p}.w_q"))?,
                w_k: bp.var(&format!("{p}.w_k"))?,
                w_v: bp.var(&format!("{p}.w_v"))?,
                w_o: if cfg.attn_output_projection {
                    Some(bp.var(&format!("{p}.w_o"))?)
                } else {
                    None
                },
                ffn_w1: bp.var(&format!("{p}.ffn_w1"))?,
                ffn_b1: bp.var(&format!("{p}.ffn_b1"))?,
                ffn_w2: bp.var(&format!("{p}.ffn_w2"))?,
                ffn_b2: bp.var(&format!("{p}.ffn_b2"))?,
                norm1_gamma: bp.var(&format!("{p}.norm1_gamma"))?,
                norm1_beta: bp.var(&format!("{p}.norm1_beta"))?,
                norm2_gamma: bp.var(&format!("{p}.norm2_gamma"))?,
                norm2_beta: bp.var(&format!("{p}.norm2_beta"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let refined = transformer_forward(g, z, &layers, cfg.n_heads)?;

    let predictions = regression_head(
        g,
        refined,
        bp.var("head.w1")?,
        bp.var("head.b1")?,
        bp.var("head.w2")?,
        bp.var("head.b2")?,
    )?;
    Ok(ForwardVars { predictions, alpha, refined })
}

/// Runs the model on one clip without recording gradients.
pub fn infer(
    cfg: &ModelConfig,
    params: &SageParams,
    xv: &Tensor,
    xa: &Tensor,
) -> Result<SageOutput> {
    let mut g = Graph::new();
    let bp = bind_params(&mut g, params, false);
    let vv = g.leaf(xv.clone());
    let va = g.leaf(xa.clone());
    let fwd = sage_forward(&mut g, &bp, cfg, vv, va)?;
    Ok(SageOutput {
        predictions: g.value(fwd.predictions).clone(),
        alpha: ReliabilityWeights::new(g.value(fwd.alpha).data().to_vec())?,
        refined: g.value(fwd.refined).clone(),
    })
}
