//! Bit-exact on-disk formats: the BVT1 tensor file and the model directory
//! layout (config JSON + manifest + one tensor file per master weight).
//!
//! Tensor file layout, all little-endian:
//!   magic "BVT1" | dtype u8 (0 = f32, 1 = packed ±1 bits, 2 = packed 0/1 bits)
//!   | rank u8 | dims rank×u64 | payload.
//! F32 payload is row-major; packed payloads store each row as LSB-first
//! 64-bit words with canonical zero padding, so files are memory images of
//! packed rows.

use std::fs;
use std::path::Path;

use crate::bitpack::{BitMatrix, BitVector, Encoding};
use crate::error::{BivitError, Result};
use crate::matrix::Matrix;
use crate::model::{
    from_masters, BlockWeights, LayerNormParams, MasterWeights, Model, ModelConfig,
};

pub const MAGIC: &[u8; 4] = b"BVT1";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32 { dims: Vec<usize>, data: Vec<f32> },
    Packed(BitMatrix),
}

impl Tensor {
    pub fn from_matrix(m: &Matrix) -> Tensor {
        Tensor::F32 {
            dims: vec![m.rows(), m.cols()],
            data: m.data().iter().map(|v| *v as f32).collect(),
        }
    }

    pub fn from_vec(v: &[f64]) -> Tensor {
        Tensor::F32 {
            dims: vec![v.len()],
            data: v.iter().map(|x| *x as f32).collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match self {
            Tensor::F32 { dims, data } if dims.len() == 2 => Matrix::from_vec(
                dims[0],
                dims[1],
                data.iter().map(|v| *v as f64).collect(),
            ),
            _ => Err(BivitError::FormatError {
                offset: 0,
                message: "expected rank-2 f32 tensor".into(),
            }),
        }
    }

    pub fn to_vec(&self) -> Result<Vec<f64>> {
        match self {
            Tensor::F32 { dims, data } if dims.len() == 1 => {
                Ok(data.iter().map(|v| *v as f64).collect())
            }
            _ => Err(BivitError::FormatError {
                offset: 0,
                message: "expected rank-1 f32 tensor".into(),
            }),
        }
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    match t {
        Tensor::F32 { dims, data } => {
            out.push(0u8);
            out.push(dims.len() as u8);
            for d in dims {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Tensor::Packed(m) => {
            out.push(match m.encoding() {
                Encoding::PlusMinus => 1u8,
                Encoding::ZeroOne => 2u8,
            });
            out.push(2u8);
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for i in 0..m.rows() {
                for w in m.row(i).words() {
                    out.extend_from_slice(&w.to_le_bytes());
                }
            }
        }
    }
    out
}

fn fmt_err(offset: usize, message: impl Into<String>) -> BivitError {
    BivitError::FormatError {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 6 {
        return Err(fmt_err(0, "file shorter than header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fmt_err(0, "bad magic"));
    }
    let dtype = bytes[4];
    let rank = bytes[5] as usize;
    let mut offset = 6;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        if bytes.len() < offset + 8 {
            return Err(fmt_err(offset, "truncated dims"));
        }
        let d = u64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
        dims.push(d as usize);
        offset += 8;
    }
    match dtype {
        0 => {
            let count: usize = dims.iter().product();
            let expected = count * 4;
            if bytes.len() != offset + expected {
                return Err(fmt_err(
                    offset,
                    format!("payload length {} != expected {expected}", bytes.len() - offset),
                ));
            }
            let data: Vec<f32> = bytes[offset..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Tensor::F32 { dims, data })
        }
        1 | 2 => {
            if rank != 2 {
                return Err(fmt_err(5, "packed tensors must be rank 2"));
            }
            let (rows, cols) = (dims[0], dims[1]);
            let words_per_row = cols.div_ceil(64);
            let expected = rows * words_per_row * 8;
            if bytes.len() != offset + expected {
                return Err(fmt_err(
                    offset,
                    format!("payload length {} != expected {expected}", bytes.len() - offset),
                ));
            }
            let encoding = if dtype == 1 {
                Encoding::PlusMinus
            } else {
                Encoding::ZeroOne
            };
            let mut rows_vec = Vec::with_capacity(rows);
            for r in 0..rows {
                let start = offset + r * words_per_row * 8;
                let words: Vec<u64> = bytes[start..start + words_per_row * 8]
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                if cols % 64 != 0 {
                    if let Some(last) = words.last() {
                        if *last >> (cols % 64) != 0 {
                            return Err(fmt_err(start, "non-canonical padding bits"));
                        }
                    }
                }
                rows_vec.push(BitVector::from_words(words, cols, encoding)?);
            }
            Ok(Tensor::Packed(BitMatrix::from_rows(rows_vec)?))
        }
        other => Err(fmt_err(4, format!("unknown dtype code {other}"))),
    }
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct Manifest {
    format_version: u32,
    tensors: Vec<String>,
}

fn tensor_entries(masters: &MasterWeights) -> Vec<(String, Tensor)> {
    let mut out = vec![
        ("patch_embed.weight".to_string(), Tensor::from_matrix(&masters.patch_embed)),
        ("patch_embed.bias".to_string(), Tensor::from_vec(&masters.patch_bias)),
        ("pos_embed".to_string(), Tensor::from_matrix(&masters.pos_embed)),
    ];
    for (i, b) in masters.blocks.iter().enumerate() {
        let p = format!("blocks.{i}");
        out.push((format!("{p}.ln1.gamma"), Tensor::from_vec(&b.ln1.gamma)));
        out.push((format!("{p}.ln1.beta"), Tensor::from_vec(&b.ln1.beta)));
        out.push((format!("{p}.attn.wq.weight"), Tensor::from_matrix(&b.wq)));
        out.push((format!("{p}.attn.wq.bias"), Tensor::from_vec(&b.bq)));
        out.push((format!("{p}.attn.wk.weight"), Tensor::from_matrix(&b.wk)));
        out.push((format!("{p}.attn.wk.bias"), Tensor::from_vec(&b.bk)));
        out.push((format!("{p}.attn.wv.weight"), Tensor::from_matrix(&b.wv)));
        out.push((format!("{p}.attn.wv.bias"), Tensor::from_vec(&b.bv)));
        out.push((format!("{p}.attn.wo.weight"), Tensor::from_matrix(&b.wo)));
        out.push((format!("{p}.attn.wo.bias"), Tensor::from_vec(&b.bo)));
        out.push((format!("{p}.ln2.gamma"), Tensor::from_vec(&b.ln2.gamma)));
        out.push((format!("{p}.ln2.beta"), Tensor::from_vec(&b.ln2.beta)));
        out.push((format!("{p}.mlp.fc1.weight"), Tensor::from_matrix(&b.fc1)));
        out.push((format!("{p}.mlp.fc1.bias"), Tensor::from_vec(&b.b1)));
        out.push((format!("{p}.mlp.fc2.weight"), Tensor::from_matrix(&b.fc2)));
        out.push((format!("{p}.mlp.fc2.bias"), Tensor::from_vec(&b.b2)));
    }
    out.push(("ln_final.gamma".to_string(), Tensor::from_vec(&masters.ln_final.gamma)));
    out.push(("ln_final.beta".to_string(), Tensor::from_vec(&masters.ln_final.beta)));
    out.push(("head.weight".to_string(), Tensor::from_matrix(&masters.head)));
    out.push(("head.bias".to_string(), Tensor::from_vec(&masters.head_bias)));
    out
}

/// Writes config.json, manifest.json and one BVT1 file per master tensor.
pub fn save_model(dir: &Path, model: &Model) -> Result<()> {
    fs::create_dir_all(dir)?;
    let config = serde_json::to_vec_pretty(model.config())?;
    fs::write(dir.join("config.json"), config)?;
    let entries = tensor_entries(model.masters());
    let manifest = Manifest {
        format_version: MODEL_FORMAT_VERSION,
        tensors: entries.iter().map(|(n, _)| n.clone()).collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    for (name, tensor) in &entries {
        write_tensor(&dir.join(format!("{name}.bvt")), tensor)?;
    }
    Ok(())
}

/// Reads a saved model directory back. Any malformed or missing file fails
/// the whole load; no partial model is produced.
pub fn load_model(dir: &Path) -> Result<Model> {
    let cfg: ModelConfig = serde_json::from_slice(&fs::read(dir.join("config.json"))?)?;
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(BivitError::FormatError {
            offset: 0,
            message: format!(
                "unsupported model format version {}",
                manifest.format_version
            ),
        });
    }
    let read = |name: &str| -> Result<Tensor> {
        if !manifest.tensors.iter().any(|t| t == name) {
            return Err(BivitError::FormatError {
                offset: 0,
                message: format!("tensor {name} missing from manifest"),
            });
        }
        read_tensor(&dir.join(format!("{name}.bvt")))
    };
    let ln = |g: &str, b: &str| -> Result<LayerNormParams> {
        Ok(LayerNormParams {
            gamma: read(g)?.to_vec()?,
            beta: read(b)?.to_vec()?,
        })
    };
    let mut blocks = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        let p = format!("blocks.{i}");
        blocks.push(BlockWeights {
            ln1: ln(&format!("{p}.ln1.gamma"), &format!("{p}.ln1.beta"))?,
            wq: read(&format!("{p}.attn.wq.weight"))?.to_matrix()?,
            bq: read(&format!("{p}.attn.wq.bias"))?.to_vec()?,
            wk: read(&format!("{p}.attn.wk.weight"))?.to_matrix()?,
            bk: read(&format!("{p}.attn.wk.bias"))?.to_vec()?,
            wv: read(&format!("{p}.attn.wv.weight"))?.to_matrix()?,
            bv: read(&format!("{p}.attn.wv.bias"))?.to_vec()?,
            wo: read(&format!("{p}.attn.wo.weight"))?.to_matrix()?,
            bo: read(&format!("{p}.attn.wo.bias"))?.to_vec()?,
            ln2: ln(&format!("{p}.ln2.gamma"), &format!("{p}.ln2.beta"))?,
            fc1: read(&format!("{p}.mlp.fc1.weight"))?.to_matrix()?,
            b1: read(&format!("{p}.mlp.fc1.bias"))?.to_vec()?,
            fc2: read(&format!("{p}.mlp.fc2.weight"))?.to_matrix()?,
            b2: read(&format!("{p}.mlp.fc2.bias"))?.to_vec()?,
        });
    }
    let masters = MasterWeights {
        patch_embed: read("patch_embed.weight")?.to_matrix()?,
        patch_bias: read("patch_embed.bias")?.to_vec()?,
        pos_embed: read("pos_embed")?.to_matrix()?,
        blocks,
        ln_final: ln("ln_final.gamma", "ln_final.beta")?,
        head: read("head.weight")?.to_matrix()?,
        head_bias: read("head.bias")?.to_vec()?,
    };
    from_masters(cfg, masters)
}

/// Reads a rank-2 f32 tensor as attention-vector rows.
pub fn read_attention_dump(path: &Path) -> Result<Vec<crate::sab::AttentionVector>> {
    let m = read_tensor(path)?.to_matrix()?;
    (0..m.rows())
        .map(|i| crate::sab::AttentionVector::new(m.row(i).to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f32_zeros_header_arithmetic() {
        let t = Tensor::F32 {
            dims: vec![2, 3],
            data: vec![0.0; 6],
        };
        let bytes = encode_tensor(&t);
        assert_eq!(bytes.len(), 4 + 1 + 1 + 16 + 24);
        assert!(bytes[22..].iter().all(|b| *b == 0));
    }

    #[test]
    fn packed_65_padding_arithmetic() {
        let values: Vec<f64> = (0..65).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let m = Matrix::from_rows(&[values]).unwrap();
        let t = Tensor::Packed(BitMatrix::pack(&m, Encoding::PlusMinus).unwrap());
        let bytes = encode_tensor(&t);
        assert_eq!(bytes.len(), 4 + 1 + 1 + 16 + 16);
    }

    #[test]
    fn tensor_roundtrip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let t = Tensor::F32 {
            dims: vec![3, 7],
            data: (0..21).map(|_| rng.gen::<f32>()).collect(),
        };
        assert_eq!(decode_tensor(&encode_tensor(&t)).unwrap(), t);
        let bits: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..100).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect())
            .collect();
        let p = Tensor::Packed(
            BitMatrix::pack(&Matrix::from_rows(&bits).unwrap(), Encoding::ZeroOne).unwrap(),
        );
        assert_eq!(decode_tensor(&encode_tensor(&p)).unwrap(), p);
    }

    #[test]
    fn writes_are_deterministic() {
        let t = Tensor::F32 {
            dims: vec![2, 2],
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        assert_eq!(encode_tensor(&t), encode_tensor(&t));
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let t = Tensor::F32 {
            dims: vec![2, 2],
            data: vec![1.0; 4],
        };
        let mut bytes = encode_tensor(&t);
        // bad magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_tensor(&bad).unwrap_err(),
            BivitError::FormatError { .. }
        ));
        // truncation
        bytes.pop();
        assert!(matches!(
            decode_tensor(&bytes).unwrap_err(),
            BivitError::FormatError { .. }
        ));
        // unknown dtype
        let mut bad2 = encode_tensor(&t);
        bad2[4] = 9;
        assert!(decode_tensor(&bad2).is_err());
    }

    #[test]
    fn model_save_load_identical_logits() {
        let mut cfg = crate::model::ModelConfig::reference();
        cfg.image_size = 8;
        cfg.embed_dim = 16;
        cfg.heads = 2;
        cfg.depth = 1;
        cfg.mlp_ratio = 2;
        cfg.stage = crate::model::BinarizationStage::AttentionOnly;
        let model = build_model(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model).unwrap();
        let loaded = load_model(dir.path()).unwrap();
        assert_eq!(loaded.config().stage, cfg.stage);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let n = crate::model::IMAGE_CHANNELS * cfg.image_size * cfg.image_size;
        let images = Matrix::from_rows(&[(0..n).map(|_| rng.gen::<f64>()).collect::<Vec<f64>>()])
            .unwrap();
        assert_eq!(
            model.forward(&images).unwrap(),
            loaded.forward(&images).unwrap()
        );
    }

    #[test]
    fn truncated_model_fails_whole_load() {
        let mut cfg = crate::model::ModelConfig::reference();
        cfg.image_size = 8;
        cfg.embed_dim = 16;
        cfg.heads = 2;
        cfg.depth = 1;
        cfg.mlp_ratio = 2;
        let model = build_model(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model).unwrap();
        let victim = dir.path().join("head.weight.bvt");
        let bytes = std::fs::read(&victim).unwrap();
        std::fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_model(dir.path()).is_err());
    }
}
