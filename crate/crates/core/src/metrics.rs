// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation metrics used by tests, the acceptance suite and run reports.

use std::collections::BTreeMap;

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len() as f64;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let pairs = |m: f64| m * (m - 1.0) / 2.0;
    let index: f64 = table.values().copied().map(pairs).sum();
    let sum_rows: f64 = rows.values().copied().map(pairs).sum();
    let sum_cols: f64 = cols.values().copied().map(pairs).sum();
    let expected = sum_rows * sum_cols / pairs(n);
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        // Both labelings trivial (single cluster or all singletons).
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Area under the ROC curve for scores where `positive` should rank higher.
/// Ties count one half (Mann-Whitney form).
pub fn roc_auc(negative: &[f64], positive: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in positive {
        for q in negative {
            if p > q {
                wins += 1.0;
            } else if p == q {
                wins += 0.5;
            }
        }
    }
    wins / (negative.len() as f64 * positive.len() as f64)
}

/// Nearest-rank empirical quantile: the `ceil(q·n)`-th smallest value.
/// `q` must lie in `(0, 1]` and `values` must be nonempty.
pub fn nearest_rank_quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty() && q > 0.0 && q <= 1.0);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_of_identical_partitions_is_one() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1, 2], &[5, 5, 3, 3, 9]), 1.0);
    }

    #[test]
    fn ari_hand_example() {
        // Contingency [[2,1],[0,2]]: index 1+0+1, row pairs 3+1, col pairs 1+3, C(5,2)=10.
        let a = [0, 0, 0, 1, 1];
        let b = [0, 0, 1, 1, 1];
        let expected = (2.0 - 4.0 * 4.0 / 10.0) / (4.0 - 1.6);
        assert!((adjusted_rand_index(&a, &b) - expected).abs() < 1e-15);
    }

    #[test]
    fn auc_extremes() {
        assert_eq!(roc_auc(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
        assert_eq!(roc_auc(&[2.0, 3.0], &[0.0, 1.0]), 0.0);
        assert_eq!(roc_auc(&[1.0], &[1.0]), 0.5);
    }

    #[test]
    fn quantile_nearest_rank() {
        let v = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(nearest_rank_quantile(&v, 1.0), 5.0);
        assert_eq!(nearest_rank_quantile(&v, 0.2), 1.0);
        assert_eq!(nearest_rank_quantile(&v, 0.21), 2.0);
        assert_eq!(nearest_rank_quantile(&v, 0.5), 3.0);
    }
}
