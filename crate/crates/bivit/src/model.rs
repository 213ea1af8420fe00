//! A tiny deterministic ViT (patch embed → pre-norm transformer blocks → head)
//! with per-stage binarization views derived from retained full-precision
//! master weights.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{binary_attention_forward, AttentionConfig, AttentionWeights, Linear};
use crate::binarizer::{channel_scale, sign_binarize};
use crate::error::{BivitError, Result};
use crate::matrix::Matrix;
use crate::par;

pub const IMAGE_CHANNELS: usize = 3;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BinarizationStage {
    FullPrecision,
    /// Attention weights and intermediates binarized; MLPs full-precision.
    AttentionOnly,
    /// Additionally binarizes MLP weights (MLP activations per config).
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MlpActivationBits {
    Fp,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    pub beta: f64,
    pub stage: BinarizationStage,
    pub mlp_activation_bits: MlpActivationBits,
    pub seed: u64,
}

impl ModelConfig {
    /// Reference tiny configuration used throughout the tests and golden files.
    pub fn reference() -> Self {
        ModelConfig {
            image_size: 32,
            patch_size: 4,
            embed_dim: 64,
            heads: 4,
            depth: 2,
            mlp_ratio: 4,
            num_classes: 10,
            beta: 0.25,
            stage: BinarizationStage::FullPrecision,
            mlp_activation_bits: MlpActivationBits::Fp,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(BivitError::ConfigError(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(BivitError::ConfigError(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.num_classes == 0 {
            return Err(BivitError::ConfigError("num_classes must be ≥ 1".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(BivitError::InvalidBeta(self.beta));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    pub fn patch_dim(&self) -> usize {
        IMAGE_CHANNELS * self.patch_size * self.patch_size
    }

    pub fn hidden_dim(&self) -> usize {
        self.mlp_ratio * self.embed_dim
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Total master parameter count.
    pub fn param_count(&self) -> usize {
        let e = self.embed_dim;
        let h = self.hidden_dim();
        let per_block = 2 * e            // ln1
            + 4 * (e * e + e)            // q, k, v, o projections
            + 2 * e                      // ln2
            + h * e + h                  // fc1
            + e * h + e; // fc2
        e * self.patch_dim() + e         // patch embed
            + self.tokens() * e          // positional embedding
            + self.depth * per_block
            + 2 * e                      // final norm
            + self.num_classes * e + self.num_classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1: LayerNormParams,
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub ln2: LayerNormParams,
    pub fc1: Matrix,
    pub b1: Vec<f64>,
    pub fc2: Matrix,
    pub b2: Vec<f64>,
}

/// Full-precision master weights; binarization is always a derived view.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterWeights {
    pub patch_embed: Matrix,
    pub patch_bias: Vec<f64>,
    pub pos_embed: Matrix,
    pub blocks: Vec<BlockWeights>,
    pub ln_final: LayerNormParams,
    pub head: Matrix,
    pub head_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct BlockView {
    attn: AttentionWeights,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    masters: MasterWeights,
    views: Vec<BlockView>,
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, normal: &Normal<f64>) -> Matrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| round_f32(normal.sample(rng))).collect();
    Matrix::from_vec(rows, cols, data).expect("sized data")
}

fn derive_views(cfg: &ModelConfig, masters: &MasterWeights) -> Result<Vec<BlockView>> {
    let attn_binary = !matches!(cfg.stage, BinarizationStage::FullPrecision);
    let mlp_binary = matches!(cfg.stage, BinarizationStage::Full);
    let mut views = Vec::with_capacity(masters.blocks.len());
    for b in &masters.blocks {
        let lin = |w: &Matrix, bias: &[f64]| -> Result<Linear> {
            if attn_binary {
                Linear::binarized(w, bias)
            } else {
                Ok(Linear::Fp {
                    weight: w.clone(),
                    bias: bias.to_vec(),
                })
            }
        };
        let mlp_lin = |w: &Matrix, bias: &[f64]| -> Result<Linear> {
            if mlp_binary {
                Linear::binarized(w, bias)
            } else {
                Ok(Linear::Fp {
                    weight: w.clone(),
                    bias: bias.to_vec(),
                })
            }
        };
        views.push(BlockView {
            attn: AttentionWeights {
                wq: lin(&b.wq, &b.bq)?,
                wk: lin(&b.wk, &b.bk)?,
                wv: lin(&b.wv, &b.bv)?,
                wo: lin(&b.wo, &b.bo)?,
            },
            fc1: mlp_lin(&b.fc1, &b.b1)?,
            fc2: mlp_lin(&b.fc2, &b.b2)?,
        });
    }
    Ok(views)
}

/// Builds a model with weights fully determined by the config seed
/// (ChaCha8 stream, N(0, 0.02) init rounded to f32 precision, zero biases,
/// unit layer-norm gains).
pub fn build_model(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, INIT_STD)
        .map_err(|e| BivitError::ConfigError(format!("init distribution: {e}")))?;
    let e = cfg.embed_dim;
    let ln = || LayerNormParams {
        gamma: vec![1.0; e],
        beta: vec![0.0; e],
    };
    let patch_embed = init_matrix(&mut rng, e, cfg.patch_dim(), &normal);
    let pos_embed = init_matrix(&mut rng, cfg.tokens(), e, &normal);
    let mut blocks = Vec::with_capacity(cfg.depth);
    for _ in 0..cfg.depth {
        let h = cfg.hidden_dim();
        blocks.push(BlockWeights {
            ln1: ln(),
            wq: init_matrix(&mut rng, e, e, &normal),
            bq: vec![0.0; e],
            wk: init_matrix(&mut rng, e, e, &normal),
            bk: vec![0.0; e],
            wv: init_matrix(&mut rng, e, e, &normal),
            bv: vec![0.0; e],
            wo: init_matrix(&mut rng, e, e, &normal),
            bo: vec![0.0; e],
            ln2: ln(),
            fc1: init_matrix(&mut rng, h, e, &normal),
            b1: vec![0.0; h],
            fc2: init_matrix(&mut rng, e, h, &normal),
            b2: vec![0.0; e],
        });
    }
    let head = init_matrix(&mut rng, cfg.num_classes, e, &normal);
    let masters = MasterWeights {
        patch_embed,
        patch_bias: vec![0.0; e],
        pos_embed,
        blocks,
        ln_final: ln(),
        head,
        head_bias: vec![0.0; cfg.num_classes],
    };
    from_masters(*cfg, masters)
}

/// Assembles a model around existing masters (used by build and model loading).
pub fn from_masters(cfg: ModelConfig, masters: MasterWeights) -> Result<Model> {
    cfg.validate()?;
    let views = derive_views(&cfg, &masters)?;
    Ok(Model {
        cfg,
        masters,
        views,
    })
}

/// Re-derives binarized views at a new stage; masters are untouched.
pub fn set_stage(model: &Model, stage: BinarizationStage) -> Result<Model> {
    let mut cfg = model.cfg;
    cfg.stage = stage;
    from_masters(cfg, model.masters.clone())
}

fn layer_norm(x: &mut [f64], params: &LayerNormParams) {
    let n = x.len() as f64;
    let mean: f64 = x.iter().sum::<f64>() / n;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-6).sqrt();
    for (i, v) in x.iter_mut().enumerate() {
        *v = (*v - mean) * inv * params.gamma[i] + params.beta[i];
    }
}

fn gelu(x: f64) -> f64 {
    // tanh approximation
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn binarize_activation_rows(x: &Matrix) -> Result<Matrix> {
    let mut rows = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let s = channel_scale(x.row(i))?;
        let bits = sign_binarize(x.row(i))?;
        rows.push(bits.into_iter().map(|b| s * b).collect());
    }
    Matrix::from_rows(&rows)
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn masters(&self) -> &MasterWeights {
        &self.masters
    }

    fn attention_config(&self) -> AttentionConfig {
        let binarized = !matches!(self.cfg.stage, BinarizationStage::FullPrecision);
        AttentionConfig {
            heads: self.cfg.heads,
            head_dim: self.cfg.head_dim(),
            beta: self.cfg.beta,
            binarize_qkv: binarized,
            binarize_attention: binarized,
        }
    }

    fn patchify(&self, image: &[f64]) -> Matrix {
        let s = self.cfg.image_size;
        let p = self.cfg.patch_size;
        let grid = s / p;
        let mut rows = Vec::with_capacity(grid * grid);
        for pr in 0..grid {
            for pc in 0..grid {
                let mut patch = Vec::with_capacity(self.cfg.patch_dim());
                for c in 0..IMAGE_CHANNELS {
                    for dy in 0..p {
                        for dx in 0..p {
                            let y = pr * p + dy;
                            let x = pc * p + dx;
                            patch.push(image[c * s * s + y * s + x]);
                        }
                    }
                }
                rows.push(patch);
            }
        }
        Matrix::from_rows(&rows).expect("uniform patches")
    }

    fn forward_single(&self, image: &[f64]) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        let patches = self.patchify(image);
        let mut x = patches.linear(&self.masters.patch_embed, Some(&self.masters.patch_bias))?;
        for t in 0..x.rows() {
            let pos = self.masters.pos_embed.row(t).to_vec();
            for (v, p) in x.row_mut(t).iter_mut().zip(pos) {
                *v += p;
            }
        }
        let attn_cfg = self.attention_config();
        let mlp_binary_act = matches!(cfg.stage, BinarizationStage::Full)
            && matches!(cfg.mlp_activation_bits, MlpActivationBits::Binary);
        for (li, (block, view)) in self.masters.blocks.iter().zip(&self.views).enumerate() {
            // attention sublayer
            let mut normed = x.clone();
            for t in 0..normed.rows() {
                layer_norm(normed.row_mut(t), &block.ln1);
            }
            let attn_out = binary_attention_forward(&normed, &view.attn, &attn_cfg)?;
            for (v, a) in x.data_mut().iter_mut().zip(attn_out.data()) {
                *v += a;
            }
            // mlp sublayer
            let mut normed = x.clone();
            for t in 0..normed.rows() {
                layer_norm(normed.row_mut(t), &block.ln2);
            }
            let fc1_in = if mlp_binary_act {
                binarize_activation_rows(&normed)?
            } else {
                normed
            };
            let mut hidden = view.fc1.forward(&fc1_in)?;
            for v in hidden.data_mut() {
                *v = gelu(*v);
            }
            let fc2_in = if mlp_binary_act {
                binarize_activation_rows(&hidden)?
            } else {
                hidden
            };
            let mlp_out = view.fc2.forward(&fc2_in)?;
            for (v, m) in x.data_mut().iter_mut().zip(mlp_out.data()) {
                *v += m;
            }
            if x.data().iter().any(|v| !v.is_finite()) {
                return Err(BivitError::NumericalFailure(format!(
                    "non-finite activation after block {li}"
                )));
            }
        }
        // mean pool, final norm, head
        let e = cfg.embed_dim;
        let mut pooled = vec![0.0; e];
        for t in 0..x.rows() {
            for (p, v) in pooled.iter_mut().zip(x.row(t)) {
                *p += v;
            }
        }
        for p in pooled.iter_mut() {
            *p /= x.rows() as f64;
        }
        layer_norm(&mut pooled, &self.masters.ln_final);
        let logits = Matrix::from_rows(&[pooled])?
            .linear(&self.masters.head, Some(&self.masters.head_bias))?;
        let out = logits.row(0).to_vec();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(BivitError::NumericalFailure("non-finite logits".into()));
        }
        Ok(out)
    }

    /// Batched forward; images are channel-planar flattened rows of length
    /// 3·image_size². Parallel over the batch.
    pub fn forward(&self, images: &Matrix) -> Result<Matrix> {
        let expected = IMAGE_CHANNELS * self.cfg.image_size * self.cfg.image_size;
        if images.cols() != expected {
            return Err(BivitError::DimensionMismatch {
                left: images.cols(),
                right: expected,
                context: "image pixels",
            });
        }
        let rows: Vec<Result<Vec<f64>>> =
            par::map_indexed(images.rows(), |i| self.forward_single(images.row(i)));
        let rows: Result<Vec<Vec<f64>>> = rows.into_iter().collect();
        Matrix::from_rows(&rows?)
    }
}
