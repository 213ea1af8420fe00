//! Straight-through gradient rules and the softmax-aware backward pass, with a
//! finite-difference verification harness.

use crate::error::{BivitError, Result};
use crate::sab::AttentionVector;

/// Clipped straight-through estimator for Sign: passes g where |x| ≤ 1.
pub fn ste_sign_grad(x: &[f64], g_out: &[f64]) -> Result<Vec<f64>> {
    if x.len() != g_out.len() {
        return Err(BivitError::DimensionMismatch {
            left: x.len(),
            right: g_out.len(),
            context: "ste lengths",
        });
    }
    Ok(x.iter()
        .zip(g_out)
        .map(|(xi, gi)| if xi.abs() <= 1.0 { *gi } else { 0.0 })
        .collect())
}

/// Exact softmax vector-Jacobian product: r_j = s_j·(g_j − Σ_i g_i s_i).
pub fn softmax_vjp(s: &AttentionVector, g: &[f64]) -> Result<Vec<f64>> {
    let sv = s.values();
    if sv.len() != g.len() {
        return Err(BivitError::DimensionMismatch {
            left: sv.len(),
            right: g.len(),
            context: "softmax vjp lengths",
        });
    }
    let inner: f64 = g.iter().zip(sv).map(|(gi, si)| gi * si).sum();
    Ok(sv.iter().zip(g).map(|(si, gi)| si * (gi - inner)).collect())
}

/// Softmax-aware backward through the attention binarizer: STE passes the
/// upstream gradient through Bool unchanged, then the exact softmax Jacobian
/// is applied.
pub fn sab_backward(s: &AttentionVector, g_q: &[f64]) -> Result<Vec<f64>> {
    softmax_vjp(s, g_q)
}

/// Baseline backward that skips the softmax entirely (plain STE identity).
pub fn bibert_backward(g_q: &[f64]) -> Vec<f64> {
    g_q.to_vec()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub probe_count: usize,
    pub step: f64,
}

/// Central-difference check of an analytic VJP for f at x against directional
/// derivatives of gᵀf(x).
pub fn finite_diff_check<F>(
    f: F,
    x: &[f64],
    analytic_vjp: &[f64],
    g: &[f64],
    step: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if step <= 0.0 {
        return Err(BivitError::InvalidInput("step must be positive".into()));
    }
    if analytic_vjp.len() != x.len() {
        return Err(BivitError::DimensionMismatch {
            left: analytic_vjp.len(),
            right: x.len(),
            context: "vjp length",
        });
    }
    let scalar = |pt: &[f64]| -> Result<f64> {
        let y = f(pt);
        if y.len() != g.len() {
            return Err(BivitError::DimensionMismatch {
                left: y.len(),
                right: g.len(),
                context: "probe output length",
            });
        }
        let s: f64 = y.iter().zip(g).map(|(yi, gi)| yi * gi).sum();
        if !s.is_finite() {
            return Err(BivitError::NumericalFailure(
                "non-finite function evaluation".into(),
            ));
        }
        Ok(s)
    };
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut pt = x.to_vec();
    for i in 0..x.len() {
        pt[i] = x[i] + step;
        let fp = scalar(&pt)?;
        pt[i] = x[i] - step;
        let fm = scalar(&pt)?;
        pt[i] = x[i];
        let fd = (fp - fm) / (2.0 * step);
        let abs = (fd - analytic_vjp[i]).abs();
        let rel = abs / fd.abs().max(analytic_vjp[i].abs()).max(1e-12);
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport {
        max_abs_err: max_abs,
        max_rel_err: max_rel,
        probe_count: x.len(),
        step,
    })
}

/// Numerically stable row softmax, shared by the attention modules.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn av(values: &[f64]) -> AttentionVector {
        AttentionVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn ste_clip_rule() {
        assert_eq!(
            ste_sign_grad(&[0.5, 2.0], &[3.0, 3.0]).unwrap(),
            vec![3.0, 0.0]
        );
        assert_eq!(
            ste_sign_grad(&[0.1, -0.9], &[1.0, 2.0]).unwrap(),
            vec![1.0, 2.0]
        );
        // boundary is inclusive
        assert_eq!(
            ste_sign_grad(&[1.0, -1.0], &[5.0, 5.0]).unwrap(),
            vec![5.0, 5.0]
        );
    }

    #[test]
    fn ste_idempotent() {
        let x = [0.5, 2.0, -1.0];
        let g = [1.0, 1.0, 1.0];
        let once = ste_sign_grad(&x, &g).unwrap();
        let twice = ste_sign_grad(&x, &once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn softmax_vjp_hand_case() {
        let r = softmax_vjp(&av(&[0.5, 0.5]), &[1.0, 0.0]).unwrap();
        assert!((r[0] - 0.25).abs() < 1e-15);
        assert!((r[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_vjp_annihilates_constants() {
        let s = av(&[0.6, 0.3, 0.1]);
        let r = softmax_vjp(&s, &[4.0, 4.0, 4.0]).unwrap();
        for v in r {
            assert!(v.abs() < 1e-15);
        }
        let g = [1.0, -2.0, 0.5];
        let shifted: Vec<f64> = g.iter().map(|v| v + 7.0).collect();
        let r1 = softmax_vjp(&s, &g).unwrap();
        let r2 = softmax_vjp(&s, &shifted).unwrap();
        for (a, b) in r1.iter().zip(&r2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_vjp_sums_to_zero() {
        let s = av(&[0.2, 0.3, 0.5]);
        let r = softmax_vjp(&s, &[1.0, -3.0, 2.0]).unwrap();
        assert!(r.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn softmax_vjp_matches_finite_differences() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let logits: Vec<f64> = (0..32).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let s_vals = softmax(&logits);
        let s = av(&s_vals);
        let g: Vec<f64> = (0..32).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let vjp = softmax_vjp(&s, &g).unwrap();
        let report = finite_diff_check(|x| softmax(x), &logits, &vjp, &g, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn sab_vs_bibert_difference() {
        let s = av(&[0.6, 0.3, 0.1]);
        let g = [1.0, 0.0, -1.0];
        let ours = sab_backward(&s, &g).unwrap();
        let baseline = bibert_backward(&g);
        assert_ne!(ours, baseline);
        // constant upstream: ours vanishes, baseline does not
        let c = [2.0, 2.0, 2.0];
        assert!(sab_backward(&s, &c)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-15));
        assert_eq!(bibert_backward(&c), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn finite_diff_identity() {
        let x = [0.3, -0.5, 1.2];
        let g = [1.0, 2.0, 3.0];
        let report = finite_diff_check(|p| p.to_vec(), &x, &g, &g, 1e-5).unwrap();
        assert!(report.max_abs_err < 1e-9);
    }

    #[test]
    fn finite_diff_negative_control() {
        let x = [0.3, -0.5, 1.2];
        let g = [1.0, 2.0, 3.0];
        let wrong = [1.5, 2.0, 3.0];
        let report = finite_diff_check(|p| p.to_vec(), &x, &wrong, &g, 1e-5).unwrap();
        assert!(report.max_rel_err > 1e-2);
    }
}
