//! Analytic cost model: binary multiply-accumulates (BOPs), floating ops
//! (FLOPs), the combined OPs = BOPs/64 + FLOPs, and model size in bytes.
//!
//! Counting conventions (one forward pass over a single image):
//! - A linear layer with m outputs and n fan-in on t tokens costs t·m·n MACs;
//!   bias adds are not counted. When binarized those MACs become BOPs plus
//!   t·m FLOPs for applying the channel scales.
//! - Layer norm costs 8 FLOPs/element, GELU 8, softmax 2 (exp + divide),
//!   residual and positional adds 1.
//! - Activation sign-binarization costs 2 FLOPs/element (sign + running |·|
//!   mean), applying an activation scale 1 FLOP/element.
//! - The SAB threshold costs 2n FLOPs per attention row: n for the max scan
//!   and n comparisons.
//! - Score scaling costs 1 FLOP/element full-precision (1/√d_k) and 2 when
//!   binarized (the α_q·α_k product folded in).

use crate::error::Result;
use crate::model::{BinarizationStage, ModelConfig};

pub const LN_FLOPS_PER_ELEM: u64 = 8;
pub const GELU_FLOPS_PER_ELEM: u64 = 8;
pub const SOFTMAX_FLOPS_PER_ELEM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OpsReport {
    pub bops: u64,
    pub flops: u64,
    pub total_ops: f64,
    pub size_bytes: u64,
}

/// Closed-form per-layer MAC count, classified as BOPs where both operands
/// are binary at the configured stage.
pub fn count_ops(cfg: &ModelConfig) -> Result<OpsReport> {
    cfg.validate()?;
    let t = cfg.tokens() as u64;
    let e = cfg.embed_dim as u64;
    let heads = cfg.heads as u64;
    let hid = cfg.hidden_dim() as u64;
    let pd = cfg.patch_dim() as u64;
    let c = cfg.num_classes as u64;
    let attn_binary = !matches!(cfg.stage, BinarizationStage::FullPrecision);
    let mlp_binary = matches!(cfg.stage, BinarizationStage::Full);

    let mut bops: u64 = 0;
    let mut flops: u64 = 0;

    // patch embedding (always full-precision) + positional add
    flops += t * e * pd;
    flops += t * e;

    for _ in 0..cfg.depth {
        // attention sublayer
        flops += LN_FLOPS_PER_ELEM * t * e; // ln1
        let proj = t * e * e;
        if attn_binary {
            bops += 4 * proj; // q, k, v, o
            flops += 4 * t * e; // channel scales
            flops += 2 * (2 * t * e); // sign-binarize q and k activations
        } else {
            flops += 4 * proj;
        }
        let score_macs = heads * t * t * (e / heads); // = t·t·e
        if attn_binary {
            bops += score_macs;
            flops += 2 * heads * t * t; // binarization scales + 1/√d_k
        } else {
            flops += score_macs;
            flops += heads * t * t; // 1/√d_k
        }
        flops += SOFTMAX_FLOPS_PER_ELEM * heads * t * t;
        let av_macs = heads * t * t * (e / heads);
        if attn_binary {
            flops += 2 * heads * t * t; // SAB threshold: max scan + compare
            flops += 2 * t * e; // sign-binarize v activations
            bops += av_macs;
            flops += t * e; // apply v scales
        } else {
            flops += av_macs;
        }
        flops += t * e; // residual

        // mlp sublayer
        flops += LN_FLOPS_PER_ELEM * t * e; // ln2
        let mlp_act_binary = mlp_binary
            && matches!(cfg.mlp_activation_bits, crate::model::MlpActivationBits::Binary);
        if mlp_act_binary {
            flops += 2 * t * e + 2 * t * hid; // binarize both mlp inputs
        }
        if mlp_binary {
            bops += t * hid * e;
            flops += t * hid;
        } else {
            flops += t * hid * e;
        }
        flops += GELU_FLOPS_PER_ELEM * t * hid;
        if mlp_binary {
            bops += t * e * hid;
            flops += t * e;
        } else {
            flops += t * e * hid;
        }
        flops += t * e; // residual
    }

    // pooling, final norm, head
    flops += t * e;
    flops += LN_FLOPS_PER_ELEM * e;
    flops += c * e;

    Ok(OpsReport {
        bops,
        flops,
        total_ops: bops as f64 / 64.0 + flops as f64,
        size_bytes: model_size(cfg)?,
    })
}

fn binary_tensor_bytes(rows: u64, cols: u64) -> u64 {
    // 1 bit per weight, rounded up per tensor, plus one f32 scale per row
    (rows * cols).div_ceil(8) + 4 * rows
}

/// Model size in bytes: 32 bits per full-precision parameter and per scale,
/// 1 bit per binary weight rounded up per tensor.
pub fn model_size(cfg: &ModelConfig) -> Result<u64> {
    cfg.validate()?;
    let e = cfg.embed_dim as u64;
    let hid = cfg.hidden_dim() as u64;
    let attn_binary = !matches!(cfg.stage, BinarizationStage::FullPrecision);
    let mlp_binary = matches!(cfg.stage, BinarizationStage::Full);

    let mut bytes: u64 = 0;
    // patch embed + positional embedding + final norm + head: always FP
    bytes += 4 * (e * cfg.patch_dim() as u64 + e);
    bytes += 4 * (cfg.tokens() as u64 * e);
    bytes += 4 * (2 * e);
    bytes += 4 * (cfg.num_classes as u64 * e + cfg.num_classes as u64);

    for _ in 0..cfg.depth {
        bytes += 4 * (2 * e) * 2; // ln1, ln2
        bytes += 4 * (4 * e); // q/k/v/o biases stay FP
        if attn_binary {
            bytes += 4 * binary_tensor_bytes(e, e);
        } else {
            bytes += 4 * (4 * e * e);
        }
        bytes += 4 * (hid + e); // mlp biases
        if mlp_binary {
            bytes += binary_tensor_bytes(hid, e) + binary_tensor_bytes(e, hid);
        } else {
            bytes += 4 * (hid * e + e * hid);
        }
    }
    Ok(bytes)
}
