//! Sign/Bool binarization, per-channel scaling factors and weight binarization,
//! including the parameterized (trainable) scale variant.

use crate::bitpack::{BitMatrix, Encoding};
use crate::error::{BivitError, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ScaleMode {
    /// α_c = ‖W_c‖₁ / n, the closed-form least-squares scale.
    Ordinary,
    /// Scales start at the Ordinary values and are trainable afterwards.
    Parameterized,
}

/// A binarized linear layer: sign bits per output channel plus one scale each.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLinear {
    pub weight_bits: BitMatrix,
    pub scales: Vec<f64>,
    pub scale_mode: ScaleMode,
}

impl BinaryLinear {
    /// out = x · (diag(scales)·Ŵ)^T, computed over unpacked ±1 weights.
    pub fn forward(&self, x: &Matrix, bias: Option<&[f64]>) -> Result<Matrix> {
        if x.cols() != self.weight_bits.cols() {
            return Err(BivitError::DimensionMismatch {
                left: x.cols(),
                right: self.weight_bits.cols(),
                context: "binary linear fan-in",
            });
        }
        let mut out = Matrix::zeros(x.rows(), self.weight_bits.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            for c in 0..self.weight_bits.rows() {
                let bits = self.weight_bits.row(c);
                let mut acc = 0.0;
                for (k, &v) in row.iter().enumerate() {
                    acc += if bits.bit(k) { v } else { -v };
                }
                let mut y = self.scales[c] * acc;
                if let Some(b) = bias {
                    y += b[c];
                }
                out.set(i, c, y);
            }
        }
        Ok(out)
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if let Some(i) = x.iter().position(|v| v.is_nan()) {
        return Err(BivitError::InvalidInput(format!("NaN at index {i}")));
    }
    Ok(())
}

/// Sign binarization: +1 where x ≥ 0, −1 otherwise.
pub fn sign_binarize(x: &[f64]) -> Result<Vec<f64>> {
    check_finite(x)?;
    Ok(x.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect())
}

/// Threshold-shifted Bool binarization: 1 where x − T ≥ 0, else 0.
pub fn bool_binarize(x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_finite(x)?;
    Ok(x.iter().map(|&v| if v - t >= 0.0 { 1.0 } else { 0.0 }).collect())
}

/// Per-channel scaling factor: mean absolute value of the row.
pub fn channel_scale(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(BivitError::InvalidInput("empty channel".into()));
    }
    check_finite(x)?;
    Ok(x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64)
}

/// Binarizes a weight matrix row-wise (rows are output channels).
pub fn binarize_weights(w: &Matrix, mode: ScaleMode) -> Result<BinaryLinear> {
    if w.rows() == 0 || w.cols() == 0 {
        return Err(BivitError::InvalidInput("empty weight matrix".into()));
    }
    let mut bit_rows = Vec::with_capacity(w.rows());
    let mut scales = Vec::with_capacity(w.rows());
    for c in 0..w.rows() {
        let row = w.row(c);
        bit_rows.push(sign_binarize(row)?);
        scales.push(channel_scale(row)?);
    }
    let bits = Matrix::from_rows(&bit_rows)?;
    Ok(BinaryLinear {
        weight_bits: BitMatrix::pack(&bits, Encoding::PlusMinus)?,
        scales,
        scale_mode: mode,
    })
}

/// ∂out/∂α for out = α·(x̂ · x), times the upstream gradient.
pub fn pws_scale_gradient(x: &[f64], weight_bits_row: &[f64], upstream: f64) -> Result<f64> {
    if x.len() != weight_bits_row.len() {
        return Err(BivitError::DimensionMismatch {
            left: x.len(),
            right: weight_bits_row.len(),
            context: "pws gradient lengths",
        });
    }
    let dot: f64 = x.iter().zip(weight_bits_row).map(|(a, b)| a * b).sum();
    Ok(upstream * dot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sign_binarize_zero_maps_positive() {
        assert_eq!(
            sign_binarize(&[0.3, -0.7, 0.0]).unwrap(),
            vec![1.0, -1.0, 1.0]
        );
        assert_eq!(sign_binarize(&[-2.0, -0.1]).unwrap(), vec![-1.0, -1.0]);
    }

    #[test]
    fn sign_binarize_matches_scalar_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x: Vec<f64> = (0..100).map(|_| rng.gen::<f64>() - 0.5).collect();
        let b = sign_binarize(&x).unwrap();
        for (v, s) in x.iter().zip(&b) {
            assert_eq!(*s, if *v >= 0.0 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn sign_binarize_rejects_nan() {
        assert!(matches!(
            sign_binarize(&[f64::NAN]).unwrap_err(),
            BivitError::InvalidInput(_)
        ));
    }

    #[test]
    fn bool_binarize_thresholds() {
        let x = [0.7, 0.2, 0.1];
        assert_eq!(bool_binarize(&x, 0.0).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(bool_binarize(&x, 0.35).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(bool_binarize(&x, 1.0).unwrap(), vec![0.0, 0.0, 0.0]);
        // tie activates: x - T == 0
        assert_eq!(bool_binarize(&[0.2], 0.2).unwrap(), vec![1.0]);
    }

    #[test]
    fn channel_scale_cases() {
        assert_eq!(channel_scale(&[0.5, -1.0, 1.5]).unwrap(), 1.0);
        assert_eq!(channel_scale(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(channel_scale(&[-3.5]).unwrap(), 3.5);
        assert!(channel_scale(&[]).is_err());
    }

    #[test]
    fn binarize_weights_hand_case() {
        let w = Matrix::from_vec(1, 3, vec![0.5, -1.0, 1.5]).unwrap();
        let layer = binarize_weights(&w, ScaleMode::Ordinary).unwrap();
        assert_eq!(layer.weight_bits.row(0).unpack(), vec![1.0, -1.0, 1.0]);
        assert_eq!(layer.scales, vec![1.0]);
    }

    #[test]
    fn identical_rows_identical_scales() {
        let w = Matrix::from_vec(2, 2, vec![0.4, -0.2, 0.4, -0.2]).unwrap();
        let layer = binarize_weights(&w, ScaleMode::Ordinary).unwrap();
        assert_eq!(layer.scales[0], layer.scales[1]);
    }

    #[test]
    fn ordinary_scale_minimizes_l2_residual() {
        // α = mean |w| is the least-squares optimum for ‖w − α·sign(w)‖²;
        // checked against a grid of candidate scales.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w: Vec<f64> = (0..32).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let bits = sign_binarize(&w).unwrap();
        let alpha = channel_scale(&w).unwrap();
        let resid = |a: f64| -> f64 {
            w.iter()
                .zip(&bits)
                .map(|(wi, bi)| (wi - a * bi).powi(2))
                .sum()
        };
        let best = resid(alpha);
        for k in 0..=200 {
            let a = k as f64 / 100.0;
            assert!(best <= resid(a) + 1e-12);
        }
    }

    #[test]
    fn idempotent_on_binary_scaled_input() {
        let alpha = 0.75;
        let w = Matrix::from_vec(1, 4, vec![alpha, -alpha, alpha, alpha]).unwrap();
        let layer = binarize_weights(&w, ScaleMode::Ordinary).unwrap();
        assert_eq!(layer.weight_bits.row(0).unpack(), vec![1.0, -1.0, 1.0, 1.0]);
        assert!((layer.scales[0] - alpha).abs() < 1e-15);
    }

    #[test]
    fn pws_gradient_hand_cases() {
        assert_eq!(
            pws_scale_gradient(&[1.0, 2.0], &[1.0, 1.0], 1.0).unwrap(),
            3.0
        );
        assert_eq!(
            pws_scale_gradient(&[1.0, 2.0], &[1.0, 1.0], 0.0).unwrap(),
            0.0
        );
        assert!(pws_scale_gradient(&[1.0], &[1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn pws_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..16).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let bits = sign_binarize(&x).unwrap();
        let alpha = 0.6;
        let forward = |a: f64| -> f64 {
            a * x.iter().zip(&bits).map(|(xi, bi)| xi * bi).sum::<f64>()
        };
        let h = 1e-6;
        let fd = (forward(alpha + h) - forward(alpha - h)) / (2.0 * h);
        let analytic = pws_scale_gradient(&x, &bits, 1.0).unwrap();
        assert!((fd - analytic).abs() / analytic.abs().max(1.0) < 1e-6);
    }

    #[test]
    fn parameterized_equals_ordinary_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = Matrix::from_rows(
            &(0..4)
                .map(|_| (0..8).map(|_| rng.gen::<f64>() - 0.5).collect())
                .collect::<Vec<Vec<f64>>>(),
        )
        .unwrap();
        let ord = binarize_weights(&w, ScaleMode::Ordinary).unwrap();
        let pws = binarize_weights(&w, ScaleMode::Parameterized).unwrap();
        let x = Matrix::from_rows(
            &(0..3)
                .map(|_| (0..8).map(|_| rng.gen::<f64>()).collect())
                .collect::<Vec<Vec<f64>>>(),
        )
        .unwrap();
        assert_eq!(
            ord.forward(&x, None).unwrap(),
            pws.forward(&x, None).unwrap()
        );
    }
}
