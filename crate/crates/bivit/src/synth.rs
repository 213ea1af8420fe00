//! Seeded synthetic attention data: symmetric Dirichlet rows that mimic the
//! long-tailed softmax attention distribution, plus a pre-softmax logit view.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::Result;
use crate::sab::AttentionVector;

/// Default fixture: 14×14 tokens at concentration 0.05.
pub const DEFAULT_DIM: usize = 196;
pub const DEFAULT_CONCENTRATION: f64 = 0.05;

/// Samples `count` symmetric Dirichlet(concentration) vectors of length n.
/// Gamma draws are normalized to sum exactly (up to rounding) to 1.
pub fn dirichlet_samples(
    n: usize,
    count: usize,
    concentration: f64,
    seed: u64,
) -> Result<Vec<AttentionVector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| crate::error::BivitError::InvalidInput(format!("gamma: {e}")))?;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let raw: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            continue; // extreme underflow; resample
        }
        let values: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        match AttentionVector::new(values) {
            Ok(v) => out.push(v),
            Err(_) => continue,
        }
    }
    Ok(out)
}

/// Reconstructs a pre-softmax logit row from a softmax row. Softmax is shift
/// invariant, so the constant is pinned by centering at the median logit,
/// which mirrors the observation that roughly half of the pre-softmax scores
/// are nonnegative.
pub fn presoftmax_logits(a_s: &AttentionVector) -> Vec<f64> {
    let floor = f64::MIN_POSITIVE;
    let logs: Vec<f64> = a_s.values().iter().map(|v| v.max(floor).ln()).collect();
    let mut sorted = logs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    logs.into_iter().map(|l| l - median).collect()
}
