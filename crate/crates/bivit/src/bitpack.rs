//! Bit-packed binary vectors/matrices and the exact integer XNOR/AND-popcount
//! kernels behind binary matrix multiplication.
//!
//! Bit order is LSB-first within 64-bit words. Padding bits past `len` in the
//! last word are always zero, so popcount over whole words needs no masking.

use crate::error::{BivitError, Result};
use crate::matrix::Matrix;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Encoding {
    /// bit 1 ↦ +1, bit 0 ↦ −1
    PlusMinus,
    /// bit 1 ↦ 1, bit 0 ↦ 0
    ZeroOne,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitVector {
    words: Vec<u64>,
    len: usize,
    encoding: Encoding,
}

impl BitVector {
    /// Packs a vector of binary reals. PlusMinus expects ±1, ZeroOne expects {0, 1}.
    pub fn pack(values: &[f64], encoding: Encoding) -> Result<Self> {
        let mut words = vec![0u64; values.len().div_ceil(64)];
        for (i, &v) in values.iter().enumerate() {
            let bit = match encoding {
                Encoding::PlusMinus => {
                    if v == 1.0 {
                        true
                    } else if v == -1.0 {
                        false
                    } else {
                        return Err(BivitError::InvalidBinaryValue {
                            value: v,
                            index: i,
                            expected: "{-1, +1}",
                        });
                    }
                }
                Encoding::ZeroOne => {
                    if v == 1.0 {
                        true
                    } else if v == 0.0 {
                        false
                    } else {
                        return Err(BivitError::InvalidBinaryValue {
                            value: v,
                            index: i,
                            expected: "{0, 1}",
                        });
                    }
                }
            };
            if bit {
                words[i / 64] |= 1u64 << (i % 64);
            }
        }
        Ok(BitVector {
            words,
            len: values.len(),
            encoding,
        })
    }

    /// Builds from raw words; padding bits are cleared to keep the canonical form.
    pub fn from_words(mut words: Vec<u64>, len: usize, encoding: Encoding) -> Result<Self> {
        if words.len() != len.div_ceil(64) {
            return Err(BivitError::DimensionMismatch {
                left: words.len(),
                right: len.div_ceil(64),
                context: "word count",
            });
        }
        if len % 64 != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (len % 64)) - 1;
            }
        }
        Ok(BitVector {
            words,
            len,
            encoding,
        })
    }

    pub fn unpack(&self) -> Vec<f64> {
        (0..self.len)
            .map(|i| {
                let bit = (self.words[i / 64] >> (i % 64)) & 1 == 1;
                match (self.encoding, bit) {
                    (Encoding::PlusMinus, true) => 1.0,
                    (Encoding::PlusMinus, false) => -1.0,
                    (Encoding::ZeroOne, true) => 1.0,
                    (Encoding::ZeroOne, false) => 0.0,
                }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn popcount(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Flips every bit (canonical padding preserved).
    pub fn complement(&self) -> BitVector {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if self.len % 64 != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (self.len % 64)) - 1;
            }
        }
        BitVector {
            words,
            len: self.len,
            encoding: self.encoding,
        }
    }

    fn check_pair(&self, other: &BitVector, enc_a: Encoding, enc_b: Encoding) -> Result<()> {
        if self.len != other.len {
            return Err(BivitError::DimensionMismatch {
                left: self.len,
                right: other.len,
                context: "bit vector length",
            });
        }
        if self.encoding != enc_a || other.encoding != enc_b {
            return Err(BivitError::EncodingMismatch {
                context: "dot kernel operand encodings",
            });
        }
        Ok(())
    }
}

/// ±1 inner product via XNOR-popcount: n − 2·popcount(a XOR b).
pub fn dot_pm(a: &BitVector, b: &BitVector) -> Result<i64> {
    a.check_pair(b, Encoding::PlusMinus, Encoding::PlusMinus)?;
    let diff: u32 = a
        .words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones())
        .sum();
    Ok(a.len as i64 - 2 * diff as i64)
}

/// Masked ±1 sum via AND-popcount: 2·popcount(mask AND v) − popcount(mask).
pub fn dot_mask_pm(mask: &BitVector, v: &BitVector) -> Result<i64> {
    mask.check_pair(v, Encoding::ZeroOne, Encoding::PlusMinus)?;
    let both: u32 = mask
        .words
        .iter()
        .zip(&v.words)
        .map(|(m, x)| (m & x).count_ones())
        .sum();
    Ok(2 * both as i64 - mask.popcount() as i64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: Vec<BitVector>,
    cols: usize,
    encoding: Encoding,
}

impl BitMatrix {
    pub fn pack(m: &Matrix, encoding: Encoding) -> Result<Self> {
        let rows: Result<Vec<BitVector>> = (0..m.rows())
            .map(|i| BitVector::pack(m.row(i), encoding))
            .collect();
        Ok(BitMatrix {
            rows: rows?,
            cols: m.cols(),
            encoding,
        })
    }

    pub fn from_rows(rows: Vec<BitVector>) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let encoding = rows.first().map_or(Encoding::PlusMinus, |r| r.encoding());
        for r in &rows {
            if r.len() != cols {
                return Err(BivitError::DimensionMismatch {
                    left: r.len(),
                    right: cols,
                    context: "bit matrix row length",
                });
            }
            if r.encoding() != encoding {
                return Err(BivitError::EncodingMismatch {
                    context: "bit matrix row encodings",
                });
            }
        }
        Ok(BitMatrix {
            rows,
            cols,
            encoding,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn row(&self, i: usize) -> &BitVector {
        &self.rows[i]
    }

    pub fn unpack(&self) -> Matrix {
        let rows: Vec<Vec<f64>> = self.rows.iter().map(|r| r.unpack()).collect();
        Matrix::from_rows(&rows).expect("rows are equal length")
    }
}

fn gemm_pm_row(
    a_row: &BitVector,
    b: &BitMatrix,
    row_scale: f64,
    col_scales: &[f64],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(b.rows());
    for j in 0..b.rows() {
        let d = dot_pm(a_row, b.row(j))?;
        out.push(row_scale * col_scales[j] * d as f64);
    }
    Ok(out)
}

fn gemm_pm_check(a: &BitMatrix, b: &BitMatrix, row_scales: &[f64], col_scales: &[f64]) -> Result<()> {
    if a.cols != b.cols {
        return Err(BivitError::DimensionMismatch {
            left: a.cols,
            right: b.cols,
            context: "gemm inner dimension",
        });
    }
    if row_scales.len() != a.rows() {
        return Err(BivitError::DimensionMismatch {
            left: row_scales.len(),
            right: a.rows(),
            context: "row scales",
        });
    }
    if col_scales.len() != b.rows() {
        return Err(BivitError::DimensionMismatch {
            left: col_scales.len(),
            right: b.rows(),
            context: "col scales",
        });
    }
    if a.encoding != Encoding::PlusMinus || b.encoding != Encoding::PlusMinus {
        return Err(BivitError::EncodingMismatch {
            context: "gemm_pm operands must be PlusMinus",
        });
    }
    Ok(())
}

/// Scaled binary GEMM: out[i][j] = row_scales[i]·col_scales[j]·dot_pm(A.row(i), B.row(j)).
/// B is stored row-major as the transposed right operand (its rows are output columns).
/// Parallel over output rows when the `parallel` feature is enabled.
pub fn gemm_pm(
    a: &BitMatrix,
    b: &BitMatrix,
    row_scales: &[f64],
    col_scales: &[f64],
) -> Result<Matrix> {
    gemm_pm_check(a, b, row_scales, col_scales)?;
    let rows: Vec<Result<Vec<f64>>> = par::map_indexed(a.rows(), |i| {
        gemm_pm_row(a.row(i), b, row_scales[i], col_scales)
    });
    let rows: Result<Vec<Vec<f64>>> = rows.into_iter().collect();
    Matrix::from_rows(&rows?)
}

/// Single-threaded variant of [`gemm_pm`], kept available for benchmarking
/// against the parallel path.
pub fn gemm_pm_serial(
    a: &BitMatrix,
    b: &BitMatrix,
    row_scales: &[f64],
    col_scales: &[f64],
) -> Result<Matrix> {
    gemm_pm_check(a, b, row_scales, col_scales)?;
    let rows: Result<Vec<Vec<f64>>> = (0..a.rows())
        .map(|i| gemm_pm_row(a.row(i), b, row_scales[i], col_scales))
        .collect();
    Matrix::from_rows(&rows?)
}

/// Binary attention applied to binarized values:
/// out[i][j] = Σ_t A[i][t] · v_scales[t] · V[t][j],
/// with A a {0,1} mask (rows × tokens), V a ±1 matrix (tokens × dim) and one
/// scale per V row. One-hot mask rows therefore select scaled ±1 rows of V.
pub fn gemm_mask_pm(a: &BitMatrix, v: &BitMatrix, v_scales: &[f64]) -> Result<Matrix> {
    if a.cols != v.rows() {
        return Err(BivitError::DimensionMismatch {
            left: a.cols,
            right: v.rows(),
            context: "mask gemm inner dimension",
        });
    }
    if v_scales.len() != v.rows() {
        return Err(BivitError::DimensionMismatch {
            left: v_scales.len(),
            right: v.rows(),
            context: "value scales",
        });
    }
    if a.encoding != Encoding::ZeroOne || v.encoding != Encoding::PlusMinus {
        return Err(BivitError::EncodingMismatch {
            context: "gemm_mask_pm expects ZeroOne mask and PlusMinus values",
        });
    }
    let dim = v.cols();
    let rows: Vec<Vec<f64>> = par::map_indexed(a.rows(), |i| {
        let mask = a.row(i);
        let mut acc = vec![0.0f64; dim];
        for t in 0..v.rows() {
            if !mask.bit(t) {
                continue;
            }
            let s = v_scales[t];
            let vrow = v.row(t);
            for (j, a) in acc.iter_mut().enumerate() {
                *a += if vrow.bit(j) { s } else { -s };
            }
        }
        acc
    });
    Matrix::from_rows(&rows)
}

/// Naive unpacked references used by tests and the benchmark correctness gate.
pub mod naive {
    use super::*;

    pub fn dot_pm(a: &[f64], b: &[f64]) -> i64 {
        a.iter().zip(b).map(|(x, y)| (x * y) as i64).sum()
    }

    pub fn dot_mask_pm(mask: &[f64], v: &[f64]) -> i64 {
        mask.iter()
            .zip(v)
            .filter(|(m, _)| **m == 1.0)
            .map(|(_, x)| *x as i64)
            .sum()
    }

    pub fn gemm_pm(a: &Matrix, b: &Matrix, row_scales: &[f64], col_scales: &[f64]) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.rows());
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                let d = dot_pm(a.row(i), b.row(j));
                out.set(i, j, row_scales[i] * col_scales[j] * d as f64);
            }
        }
        out
    }

    pub fn gemm_mask_pm(a: &Matrix, v: &Matrix, v_scales: &[f64]) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), v.cols());
        for i in 0..a.rows() {
            for t in 0..v.rows() {
                if a.get(i, t) != 1.0 {
                    continue;
                }
                for j in 0..v.cols() {
                    let cur = out.get(i, j);
                    out.set(i, j, cur + v_scales[t] * v.get(t, j));
                }
            }
        }
        out
    }

    /// FP reference GEMM with B stored transposed, mirroring gemm_pm's layout.
    pub fn gemm_fp(a: &Matrix, b_t: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b_t.rows());
        for i in 0..a.rows() {
            for j in 0..b_t.rows() {
                let mut acc = 0.0;
                let ar = a.row(i);
                let br = b_t.row(j);
                for k in 0..ar.len() {
                    acc += ar[k] * br[k];
                }
                out.set(i, j, acc);
            }
        }
        out
    }
}
