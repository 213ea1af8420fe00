//! Dense row-major f64 matrix used for full-precision paths and references.

use crate::error::{BivitError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(BivitError::DimensionMismatch {
                left: data.len(),
                right: rows * cols,
                context: "matrix data length",
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(BivitError::DimensionMismatch {
                    left: r.len(),
                    right: cols,
                    context: "ragged rows",
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// Plain triple-loop product, also the full-precision reference GEMM.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(BivitError::DimensionMismatch {
                left: self.cols,
                right: other.rows,
                context: "matmul inner dimension",
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// x · W^T + b, the linear-layer forward (W rows are output channels).
    pub fn linear(&self, weight: &Matrix, bias: Option<&[f64]>) -> Result<Matrix> {
        if self.cols != weight.cols {
            return Err(BivitError::DimensionMismatch {
                left: self.cols,
                right: weight.cols,
                context: "linear fan-in",
            });
        }
        let mut out = Matrix::zeros(self.rows, weight.rows);
        for i in 0..self.rows {
            let x = self.row(i);
            for c in 0..weight.rows {
                let w = weight.row(c);
                let mut acc = 0.0;
                for k in 0..x.len() {
                    acc += x[k] * w[k];
                }
                if let Some(b) = bias {
                    acc += b[c];
                }
                out.set(i, c, acc);
            }
        }
        Ok(out)
    }
}
