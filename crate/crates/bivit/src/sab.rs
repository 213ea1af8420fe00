//! Softmax-aware binarization of attention vectors: the coordinate-descent
//! solver, a brute-force global oracle, the max-based threshold approximation
//! and the regression that fits its coefficient.

use crate::binarizer::bool_binarize;
use crate::error::{BivitError, Result};

pub const DEFAULT_BETA: f64 = 0.25;
pub const DEFAULT_ITERS: usize = 5;

/// One row of a row-softmaxed attention matrix: nonnegative, sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionVector {
    values: Vec<f64>,
}

impl AttentionVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(BivitError::InvalidInput("empty attention vector".into()));
        }
        let mut sum = 0.0;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(BivitError::InvalidInput(format!(
                    "attention value {v} at index {i}"
                )));
            }
            sum += v;
        }
        if sum == 0.0 {
            return Err(BivitError::DegenerateInput(
                "all-zero attention vector".into(),
            ));
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(BivitError::InvalidInput(format!(
                "attention vector sums to {sum}, expected 1"
            )));
        }
        Ok(AttentionVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SabSolution {
    /// Basis scalar v of a_q = v·b.
    pub v: f64,
    /// Threshold that produced the final encoding (v/2 at the fixed point).
    pub t: f64,
    /// Binary encoding as 0/1 values.
    pub b: Vec<f64>,
    /// Squared ℓ2 error ‖v·b − a_s‖².
    pub error: f64,
    /// Number of v-updates performed before return.
    pub iterations: usize,
}

fn solution_error(a: &[f64], v: f64, b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(ai, bi)| (v * bi - ai).powi(2))
        .sum()
}

/// Alternating exact minimization of the basis scalar v and encoding b for
/// ‖v·b − a_s‖², starting from the all-active encoding. Early-exits once b is
/// a fixed point.
pub fn coordinate_descent(a_s: &AttentionVector, n_iters: usize) -> Result<SabSolution> {
    if n_iters == 0 {
        return Err(BivitError::InvalidInput("iteration count must be ≥ 1".into()));
    }
    let a = a_s.values();
    // b⁽⁰⁾ = Sign(a_s): all values are nonnegative, so every position starts active.
    let mut b: Vec<f64> = vec![1.0; a.len()];
    let mut v = 0.0;
    let mut t = 0.0;
    let mut iterations = 0;
    for _ in 0..n_iters {
        let active: f64 = b.iter().sum();
        if active == 0.0 {
            return Err(BivitError::DegenerateInput(
                "encoding vanished during descent".into(),
            ));
        }
        let dot: f64 = a.iter().zip(&b).map(|(ai, bi)| ai * bi).sum();
        v = dot / active;
        t = v / 2.0;
        let next = bool_binarize(a, t)?;
        iterations += 1;
        if next == b {
            break;
        }
        b = next;
    }
    let error = solution_error(a, v, &b);
    Ok(SabSolution {
        v,
        t,
        b,
        error,
        iterations,
    })
}

pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Enumerates all 2ⁿ encodings and returns the global minimizer of the
/// quantization error. Guarded to n ≤ 20.
pub fn brute_force_oracle(a_s: &AttentionVector) -> Result<SabSolution> {
    let a = a_s.values();
    let n = a.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(BivitError::TooLarge {
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let norm_sq: f64 = a.iter().map(|x| x * x).sum();
    let mut best: Option<(f64, u32)> = None; // (error, mask)
    for mask in 1u32..(1u32 << n) {
        let mut dot = 0.0;
        for (i, &ai) in a.iter().enumerate() {
            if (mask >> i) & 1 == 1 {
                dot += ai;
            }
        }
        let count = mask.count_ones() as f64;
        let err = norm_sq - dot * dot / count;
        if best.map_or(true, |(e, _)| err < e) {
            best = Some((err, mask));
        }
    }
    let (_, mask) = best.expect("at least one nonempty encoding");
    let b: Vec<f64> = (0..n)
        .map(|i| if (mask >> i) & 1 == 1 { 1.0 } else { 0.0 })
        .collect();
    let active: f64 = b.iter().sum();
    let dot: f64 = a.iter().zip(&b).map(|(ai, bi)| ai * bi).sum();
    let v = dot / active;
    Ok(SabSolution {
        v,
        t: v / 2.0,
        b: b.clone(),
        error: solution_error(a, v, &b),
        iterations: 0,
    })
}

/// T = β · max(a_s).
pub fn approx_threshold(a_s: &AttentionVector, beta: f64) -> Result<f64> {
    if beta <= 0.0 {
        return Err(BivitError::InvalidBeta(beta));
    }
    Ok(beta * a_s.max())
}

/// Thresholds a_s at β·max(a_s) into a {0,1} mask. The max is always active
/// for β < 1.
pub fn sab_binarize(a_s: &AttentionVector, beta: f64) -> Result<Vec<f64>> {
    if beta >= 1.0 {
        return Err(BivitError::InvalidBeta(beta));
    }
    let t = approx_threshold(a_s, beta)?;
    bool_binarize(a_s.values(), t)
}

/// Squared ℓ2 quantization error ‖a_q − a_s‖².
pub fn quant_error(a_q: &[f64], a_s: &AttentionVector) -> Result<f64> {
    if a_q.len() != a_s.len() {
        return Err(BivitError::DimensionMismatch {
            left: a_q.len(),
            right: a_s.len(),
            context: "quantization error lengths",
        });
    }
    Ok(a_q
        .iter()
        .zip(a_s.values())
        .map(|(q, s)| (q - s).powi(2))
        .sum())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BetaFit {
    pub beta: f64,
    pub samples: usize,
    /// Mean squared residual of the through-origin regression.
    pub residual: f64,
}

/// Regresses the solver's optimal thresholds on max(a_s) through the origin:
/// β = Σ T*·m / Σ m².
pub fn fit_beta(samples: &[AttentionVector], n_iters: usize) -> Result<BetaFit> {
    if samples.is_empty() {
        return Err(BivitError::InvalidInput("no samples".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut points = Vec::with_capacity(samples.len());
    for s in samples {
        let sol = coordinate_descent(s, n_iters)?;
        let m = s.max();
        num += sol.t * m;
        den += m * m;
        points.push((m, sol.t));
    }
    if den == 0.0 {
        return Err(BivitError::DegenerateInput(
            "all sample maxima are zero".into(),
        ));
    }
    let beta = num / den;
    let residual = points
        .iter()
        .map(|(m, t)| (t - beta * m).powi(2))
        .sum::<f64>()
        / points.len() as f64;
    Ok(BetaFit {
        beta,
        samples: samples.len(),
        residual,
    })
}
