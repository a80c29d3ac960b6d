// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small numerically-stable helpers over `f64` slices.

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `KL(softmax(p_logits) ‖ softmax(q_logits))`, evaluated in log space so it
/// stays finite even when a probability underflows.
pub fn kl_from_logits(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let log_p = log_softmax(p_logits);
    let log_q = log_softmax(q_logits);
    let kl: f64 = log_p
        .iter()
        .zip(&log_q)
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum();
    // Rounding can leave a tiny negative residue when the distributions agree.
    kl.max(0.0)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_and_matches_log_form() {
        let z = [1.0, -2.0, 0.5, 700.0];
        let p = softmax(&z);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for (pi, lpi) in p.iter().zip(log_softmax(&z)) {
            assert!((pi - lpi.exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_is_zero_for_equal_and_positive_otherwise() {
        assert_eq!(kl_from_logits(&[0.3, 0.1], &[0.3, 0.1]), 0.0);
        let p = softmax(&[1.0, 0.0]);
        let q = softmax(&[0.0, 1.0]);
        let direct: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
        assert!((kl_from_logits(&[1.0, 0.0], &[0.0, 1.0]) - direct).abs() < 1e-14);
    }

    #[test]
    fn kl_finite_under_extreme_logits() {
        assert!(kl_from_logits(&[1000.0, -1000.0], &[-1000.0, 1000.0]).is_finite());
    }
}
