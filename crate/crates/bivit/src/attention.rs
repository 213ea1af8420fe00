//! Full-precision reference attention and the binarized multi-head forward.

use crate::backward::softmax;
use crate::binarizer::{binarize_weights, channel_scale, sign_binarize, BinaryLinear, ScaleMode};
use crate::bitpack::{gemm_mask_pm, gemm_pm, BitMatrix, Encoding};
use crate::error::{BivitError, Result};
use crate::matrix::Matrix;
use crate::sab::{sab_binarize, AttentionVector};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub beta: f64,
    pub binarize_qkv: bool,
    pub binarize_attention: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(BivitError::ConfigError("heads and head_dim must be ≥ 1".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(BivitError::InvalidBeta(self.beta));
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// A projection that is either full-precision or a binarized view.
#[derive(Debug, Clone, PartialEq)]
pub enum Linear {
    Fp { weight: Matrix, bias: Vec<f64> },
    Binary { layer: BinaryLinear, bias: Vec<f64> },
}

impl Linear {
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Linear::Fp { weight, bias } => x.linear(weight, Some(bias)),
            Linear::Binary { layer, bias } => layer.forward(x, Some(bias)),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Linear::Fp { weight, .. } => weight.rows(),
            Linear::Binary { layer, .. } => layer.weight_bits.rows(),
        }
    }

    pub fn binarized(weight: &Matrix, bias: &[f64]) -> Result<Linear> {
        Ok(Linear::Binary {
            layer: binarize_weights(weight, ScaleMode::Ordinary)?,
            bias: bias.to_vec(),
        })
    }
}

/// Q/K/V and output projections of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

/// Single-head reference attention: softmax(QKᵀ/√d_k)·V.
pub fn fp_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    if q.cols() != k.cols() {
        return Err(BivitError::DimensionMismatch {
            left: q.cols(),
            right: k.cols(),
            context: "query/key dim",
        });
    }
    if k.rows() != v.rows() {
        return Err(BivitError::DimensionMismatch {
            left: k.rows(),
            right: v.rows(),
            context: "key/value tokens",
        });
    }
    let scale = 1.0 / (k.cols() as f64).sqrt();
    let mut out = Matrix::zeros(q.rows(), v.cols());
    for i in 0..q.rows() {
        let scores: Vec<f64> = (0..k.rows())
            .map(|t| {
                let mut acc = 0.0;
                for d in 0..q.cols() {
                    acc += q.get(i, d) * k.get(t, d);
                }
                acc * scale
            })
            .collect();
        let probs = softmax(&scores);
        for j in 0..v.cols() {
            let mut acc = 0.0;
            for t in 0..k.rows() {
                acc += probs[t] * v.get(t, j);
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

fn slice_head(m: &Matrix, head: usize, head_dim: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), head_dim);
    for i in 0..m.rows() {
        for d in 0..head_dim {
            out.set(i, d, m.get(i, head * head_dim + d));
        }
    }
    out
}

/// Sign-binarizes every row with its own mean-|·| scale (Eq. 3 applied to
/// activations) and packs the bits.
fn binarize_rows(m: &Matrix) -> Result<(BitMatrix, Vec<f64>)> {
    let mut bit_rows = Vec::with_capacity(m.rows());
    let mut scales = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        bit_rows.push(sign_binarize(m.row(i))?);
        scales.push(channel_scale(m.row(i))?);
    }
    let bits = Matrix::from_rows(&bit_rows)?;
    Ok((BitMatrix::pack(&bits, Encoding::PlusMinus)?, scales))
}

/// Multi-head forward with per-stage binarization. When a flag is off the
/// corresponding stage runs full-precision:
/// binarize_qkv → Q/K activations are sign-binarized per token row (per head)
/// and scores come from the packed ±1 kernel; binarize_attention → softmax rows
/// are thresholded at β·max into unscaled {0,1} masks applied to binarized V.
pub fn binary_attention_forward(
    x: &Matrix,
    weights: &AttentionWeights,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    cfg.validate()?;
    let embed = cfg.embed_dim();
    if weights.wq.out_dim() != embed {
        return Err(BivitError::DimensionMismatch {
            left: weights.wq.out_dim(),
            right: embed,
            context: "projection output vs heads·head_dim",
        });
    }
    let q = weights.wq.forward(x)?;
    let k = weights.wk.forward(x)?;
    let v = weights.wv.forward(x)?;
    let tokens = x.rows();
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();

    let mut concat = Matrix::zeros(tokens, embed);
    for h in 0..cfg.heads {
        let qh = slice_head(&q, h, cfg.head_dim);
        let kh = slice_head(&k, h, cfg.head_dim);
        let vh = slice_head(&v, h, cfg.head_dim);

        // pre-softmax scores
        let scores = if cfg.binarize_qkv {
            let (qb, qs) = binarize_rows(&qh)?;
            let (kb, ks) = binarize_rows(&kh)?;
            gemm_pm(&qb, &kb, &qs, &ks)?
        } else {
            let mut s = Matrix::zeros(tokens, tokens);
            for i in 0..tokens {
                for t in 0..tokens {
                    let mut acc = 0.0;
                    for d in 0..cfg.head_dim {
                        acc += qh.get(i, d) * kh.get(t, d);
                    }
                    s.set(i, t, acc);
                }
            }
            s
        };

        let mut probs = Vec::with_capacity(tokens);
        for i in 0..tokens {
            let row: Vec<f64> = scores.row(i).iter().map(|v| v * scale).collect();
            probs.push(softmax(&row));
        }

        let head_out = if cfg.binarize_attention {
            let mut mask_rows = Vec::with_capacity(tokens);
            for p in &probs {
                let a_s = AttentionVector::new(p.clone())?;
                mask_rows.push(sab_binarize(&a_s, cfg.beta)?);
            }
            let mask_mat = Matrix::from_rows(&mask_rows)?;
            let mask = BitMatrix::pack(&mask_mat, Encoding::ZeroOne)?;
            let (vb, vs) = binarize_rows(&vh)?;
            gemm_mask_pm(&mask, &vb, &vs)?
        } else {
            let mut out = Matrix::zeros(tokens, cfg.head_dim);
            for i in 0..tokens {
                for j in 0..cfg.head_dim {
                    let mut acc = 0.0;
                    for t in 0..tokens {
                        acc += probs[i][t] * vh.get(t, j);
                    }
                    out.set(i, j, acc);
                }
            }
            out
        };

        for i in 0..tokens {
            for d in 0..cfg.head_dim {
                concat.set(i, h * cfg.head_dim + d, head_out.get(i, d));
            }
        }
    }

    weights.wo.forward(&concat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_rows(
            &(0..rows)
                .map(|_| (0..cols).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
                .collect::<Vec<Vec<f64>>>(),
        )
        .unwrap()
    }

    fn fp_weights(rng: &mut impl Rng, embed: usize) -> AttentionWeights {
        let mk = |rng: &mut dyn RngCore| Linear::Fp {
            weight: Matrix::from_rows(
                &(0..embed)
                    .map(|_| (0..embed).map(|_| rng.gen::<f64>() * 0.4 - 0.2).collect())
                    .collect::<Vec<Vec<f64>>>(),
            )
            .unwrap(),
            bias: vec![0.0; embed],
        };
        AttentionWeights {
            wq: mk(rng),
            wk: mk(rng),
            wv: mk(rng),
            wo: mk(rng),
        }
    }

    #[test]
    fn fp_attention_single_token() {
        let q = Matrix::from_vec(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let v = Matrix::from_vec(1, 4, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let out = fp_attention(&q, &q, &v).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn fp_attention_identical_keys_mean_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let q = random_matrix(&mut rng, 3, 4);
        let krow: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
        let k = Matrix::from_rows(&vec![krow; 5]).unwrap();
        let v = random_matrix(&mut rng, 5, 4);
        let out = fp_attention(&q, &k, &v).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let mean: f64 = (0..5).map(|t| v.get(t, j)).sum::<f64>() / 5.0;
                assert!((out.get(i, j) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fp_attention_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let q = random_matrix(&mut rng, 4, 8);
        let k = random_matrix(&mut rng, 4, 8);
        let v = random_matrix(&mut rng, 4, 8);
        let out = fp_attention(&q, &k, &v).unwrap();
        // independent route: explicit matrices and matmul
        let scale = 1.0 / 8f64.sqrt();
        let mut scores = q.matmul(&k.transpose()).unwrap();
        for i in 0..4 {
            let row: Vec<f64> = scores.row(i).iter().map(|x| x * scale).collect();
            let p = softmax(&row);
            for (t, pv) in p.iter().enumerate() {
                scores.set(i, t, *pv);
            }
        }
        let reference = scores.matmul(&v).unwrap();
        for i in 0..4 {
            for j in 0..8 {
                assert!((out.get(i, j) - reference.get(i, j)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn flags_off_equals_fp_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let cfg = AttentionConfig {
            heads: 1,
            head_dim: 8,
            beta: 0.25,
            binarize_qkv: false,
            binarize_attention: false,
        };
        let weights = fp_weights(&mut rng, 8);
        let x = random_matrix(&mut rng, 5, 8);
        let out = binary_attention_forward(&x, &weights, &cfg).unwrap();
        let q = weights.wq.forward(&x).unwrap();
        let k = weights.wk.forward(&x).unwrap();
        let v = weights.wv.forward(&x).unwrap();
        let attn = fp_attention(&q, &k, &v).unwrap();
        let expected = weights.wo.forward(&attn).unwrap();
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_rows_give_all_ones_masks() {
        // identical tokens → uniform attention → SAB mask all ones
        let cfg = AttentionConfig {
            heads: 1,
            head_dim: 4,
            beta: 0.25,
            binarize_qkv: false,
            binarize_attention: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let weights = fp_weights(&mut rng, 4);
        let row: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
        let x = Matrix::from_rows(&vec![row; 3]).unwrap();
        let out = binary_attention_forward(&x, &weights, &cfg).unwrap();
        // expected: masked sum over all binarized V rows
        let v = weights.wv.forward(&x).unwrap();
        let mut expected = vec![0.0; 4];
        for t in 0..3 {
            let s = channel_scale(v.row(t)).unwrap();
            for (j, e) in expected.iter_mut().enumerate() {
                *e += s * if v.get(t, j) >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        let wo_in = Matrix::from_rows(&vec![expected; 3]).unwrap();
        let expected_out = weights.wo.forward(&wo_in).unwrap();
        for (a, b) in out.data().iter().zip(expected_out.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    /// Unpacked scalar reference making identical binarization decisions.
    fn unpacked_reference(
        x: &Matrix,
        weights: &AttentionWeights,
        cfg: &AttentionConfig,
    ) -> Matrix {
        let q = weights.wq.forward(x).unwrap();
        let k = weights.wk.forward(x).unwrap();
        let v = weights.wv.forward(x).unwrap();
        let tokens = x.rows();
        let embed = cfg.embed_dim();
        let scale = 1.0 / (cfg.head_dim as f64).sqrt();
        let mut concat = Matrix::zeros(tokens, embed);
        for h in 0..cfg.heads {
            let qh = slice_head(&q, h, cfg.head_dim);
            let kh = slice_head(&k, h, cfg.head_dim);
            let vh = slice_head(&v, h, cfg.head_dim);
            let bin = |m: &Matrix| -> (Matrix, Vec<f64>) {
                let rows: Vec<Vec<f64>> =
                    (0..m.rows()).map(|i| sign_binarize(m.row(i)).unwrap()).collect();
                let scales: Vec<f64> =
                    (0..m.rows()).map(|i| channel_scale(m.row(i)).unwrap()).collect();
                (Matrix::from_rows(&rows).unwrap(), scales)
            };
            let (qb, qs) = bin(&qh);
            let (kb, ks) = bin(&kh);
            // integer dot, then scales
            let mut probs = Vec::new();
            for i in 0..tokens {
                let mut row = Vec::new();
                for t in 0..tokens {
                    let mut d: i64 = 0;
                    for c in 0..cfg.head_dim {
                        d += (qb.get(i, c) * kb.get(t, c)) as i64;
                    }
                    row.push(qs[i] * ks[t] * d as f64 * scale);
                }
                probs.push(softmax(&row));
            }
            let (vb, vs) = bin(&vh);
            for i in 0..tokens {
                let a_s = AttentionVector::new(probs[i].clone()).unwrap();
                let mask = sab_binarize(&a_s, cfg.beta).unwrap();
                for j in 0..cfg.head_dim {
                    let mut acc = 0.0;
                    for t in 0..tokens {
                        if mask[t] == 1.0 {
                            acc += vs[t] * vb.get(t, j);
                        }
                    }
                    concat.set(i, h * cfg.head_dim + j, acc);
                }
            }
        }
        weights.wo.forward(&concat).unwrap()
    }

    #[test]
    fn packed_path_matches_unpacked_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let cfg = AttentionConfig {
            heads: 2,
            head_dim: 8,
            beta: 0.25,
            binarize_qkv: true,
            binarize_attention: true,
        };
        let weights = fp_weights(&mut rng, 16);
        let x = random_matrix(&mut rng, 6, 16);
        let packed = binary_attention_forward(&x, &weights, &cfg).unwrap();
        let reference = unpacked_reference(&x, &weights, &cfg);
        for (a, b) in packed.data().iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn single_token_output_is_value_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let cfg = AttentionConfig {
            heads: 1,
            head_dim: 8,
            beta: 0.25,
            binarize_qkv: true,
            binarize_attention: true,
        };
        let weights = fp_weights(&mut rng, 8);
        let x = random_matrix(&mut rng, 1, 8);
        let out = binary_attention_forward(&x, &weights, &cfg).unwrap();
        // one token: softmax row = [1], mask = [1], output = scaled binarized V row
        let v = weights.wv.forward(&x).unwrap();
        let s = channel_scale(v.row(0)).unwrap();
        let vbin: Vec<f64> = sign_binarize(v.row(0)).unwrap().iter().map(|b| s * b).collect();
        let expected = weights
            .wo
            .forward(&Matrix::from_rows(&[vbin]).unwrap())
            .unwrap();
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn argmax_always_active() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..12).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect();
            let p = softmax(&logits);
            let a_s = AttentionVector::new(p.clone()).unwrap();
            let mask = sab_binarize(&a_s, 0.25).unwrap();
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(mask[argmax], 1.0);
        }
    }
}
