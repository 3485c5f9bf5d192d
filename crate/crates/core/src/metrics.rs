//! Rank-correlation and summary-overlap metrics.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// 1-based average ranks (ties share the mean of their positions).
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector<F> {
    pub ranks: Vec<F>,
}

/// Frame-level precision/recall/F1 for one summary.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryEval {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when either side was empty and the scores were defined as 0.
    pub degenerate: bool,
}

/// Average ranks of `values`, 1-based, ties averaged.
pub fn average_ranks<F: Scalar>(values: &[F]) -> RankVector<F> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![F::zero(); n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average of ranks i+1..=j+1.
        let avg = F::from_f64_c((i + j) as f64 / 2.0 + 1.0);
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    RankVector { ranks }
}

/// Spearman rank correlation: Pearson correlation of average ranks.
/// Reduces to `1 - 6 Σd² / (N(N²-1))` when there are no ties.
pub fn spearman_rc<F: Scalar>(pred: &[F], gt: &[F]) -> Result<F> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            op: "spearman_rc",
            lhs: vec![pred.len()],
            rhs: vec![gt.len()],
        });
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!(
            "spearman_rc needs at least 2 points, got {n}"
        )));
    }
    let constant = |v: &[F]| v.iter().all(|&x| x == v[0]);
    if constant(pred) || constant(gt) {
        return Err(Error::UndefinedMetric(
            "spearman_rc is undefined for constant input".into(),
        ));
    }
    let rp = average_ranks(pred).ranks;
    let rg = average_ranks(gt).ranks;
    let nf = F::from_f64_c(n as f64);
    let mean_p = rp.iter().copied().sum::<F>() / nf;
    let mean_g = rg.iter().copied().sum::<F>() / nf;
    let mut cov = F::zero();
    let mut var_p = F::zero();
    let mut var_g = F::zero();
    for i in 0..n {
        let dp = rp[i] - mean_p;
        let dg = rg[i] - mean_g;
        cov += dp * dg;
        var_p += dp * dp;
        var_g += dg * dg;
    }
    Ok(cov / (var_p * var_g).sqrt())
}

/// Frame-level precision/recall/F1 of a predicted summary against the
/// ground truth. Empty prediction or ground truth yields zeros, flagged.
pub fn summary_f1(
    pred_frames: &BTreeSet<usize>,
    gt_frames: &BTreeSet<usize>,
    total_frames: usize,
) -> Result<SummaryEval> {
    for &f in pred_frames.iter().chain(gt_frames.iter()) {
        if f >= total_frames {
            return Err(Error::Schema(format!(
                "frame index {f} outside [0, {total_frames})"
            )));
        }
    }
    if pred_frames.is_empty() || gt_frames.is_empty() {
        return Ok(SummaryEval {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            degenerate: true,
        });
    }
    let overlap = pred_frames.intersection(gt_frames).count() as f64;
    let precision = overlap / pred_frames.len() as f64;
    let recall = overlap / gt_frames.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SummaryEval {
        precision,
        recall,
        f1,
        degenerate: false,
    })
}

/// Dataset-level F1: mean of per-video F1 scores.
pub fn mean_f1(evals: &[SummaryEval]) -> f64 {
    if evals.is_empty() {
        return 0.0;
    }
    evals.iter().map(|e| e.f1).sum::<f64>() / evals.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle for tie-free vectors: ranks by pairwise counting,
    /// correlation via the rank-difference formula.
    fn spearman_oracle(pred: &[f64], gt: &[f64]) -> f64 {
        let n = pred.len();
        let rank = |v: &[f64], i: usize| 1 + v.iter().filter(|&&x| x < v[i]).count();
        let mut sum_d2 = 0.0;
        for i in 0..n {
            let d = rank(pred, i) as f64 - rank(gt, i) as f64;
            sum_d2 += d * d;
        }
        1.0 - 6.0 * sum_d2 / (n as f64 * ((n * n - 1) as f64))
    }

    #[test]
    fn identical_orderings_give_one() {
        let x: Vec<f64> = vec![0.1, 0.5, 0.9, 0.3];
        let y: Vec<f64> = vec![1.0, 2.0, 4.0, 1.5];
        assert!((spearman_rc(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_orderings_give_minus_one() {
        let x: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = vec![4.0, 3.0, 2.0, 1.0];
        assert!((spearman_rc(&x, &y).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn worked_example_is_exact() {
        // ranks (1,3,2,4) vs (1,2,3,4): Σd² = 2, ρ = 1 - 12/60 = 0.8
        let pred: Vec<f64> = vec![0.1, 0.4, 0.3, 0.9];
        let gt: Vec<f64> = vec![0.2, 0.3, 0.5, 0.6];
        assert_eq!(spearman_rc(&pred, &gt).unwrap(), 0.8);
    }

    #[test]
    fn matches_oracle_on_random_tie_free_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.gen_range(2..=64);
            // Tie-free with probability 1.
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let got = spearman_rc(&x, &y).unwrap();
            let want = spearman_oracle(&x, &y);
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn ties_use_average_ranks() {
        let r = average_ranks(&[2.0, 1.0, 2.0, 3.0]);
        assert_eq!(r.ranks, vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn invariant_under_monotone_transform() {
        let x: Vec<f64> = vec![0.3, 0.1, 0.9, 0.5, 0.2];
        let y: Vec<f64> = vec![1.0, 5.0, 2.0, 4.0, 3.0];
        let base = spearman_rc(&x, &y).unwrap();
        let tx: Vec<f64> = x.iter().map(|v| (3.0 * v).exp()).collect();
        let ty: Vec<f64> = y.iter().map(|v| v.powi(3) + 7.0).collect();
        assert!((spearman_rc(&tx, &ty).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn undefined_cases() {
        assert!(matches!(
            spearman_rc(&[1.0f64], &[1.0f64]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            spearman_rc(&[1.0f64, 1.0, 1.0], &[1.0f64, 2.0, 3.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn f1_exact_match_is_one() {
        let s = set(&[1, 2, 3]);
        let e = summary_f1(&s, &s, 10).unwrap();
        assert_eq!(e.f1, 1.0);
        assert!(!e.degenerate);
    }

    #[test]
    fn f1_disjoint_is_zero() {
        let e = summary_f1(&set(&[0, 1]), &set(&[2, 3]), 10).unwrap();
        assert_eq!(e.f1, 0.0);
    }

    #[test]
    fn f1_worked_example() {
        // |pred|=50, |gt|=40, overlap 20 -> p=0.4, r=0.5, f1=4/9
        let pred: BTreeSet<usize> = (0..50).collect();
        let gt: BTreeSet<usize> = (30..70).collect();
        let e = summary_f1(&pred, &gt, 100).unwrap();
        assert!((e.precision - 0.4).abs() < 1e-12);
        assert!((e.recall - 0.5).abs() < 1e-12);
        assert!((e.f1 - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn f1_empty_sides_are_degenerate_zero() {
        let e = summary_f1(&set(&[]), &set(&[1]), 10).unwrap();
        assert_eq!((e.precision, e.recall, e.f1), (0.0, 0.0, 0.0));
        assert!(e.degenerate);
        let e = summary_f1(&set(&[1]), &set(&[]), 10).unwrap();
        assert_eq!(e.f1, 0.0);
        assert!(e.degenerate);
    }

    #[test]
    fn f1_symmetric_when_sizes_equal() {
        let a = set(&[1, 2, 3, 4]);
        let b = set(&[3, 4, 5, 6]);
        let ab = summary_f1(&a, &b, 10).unwrap();
        let ba = summary_f1(&b, &a, 10).unwrap();
        assert_eq!(ab.f1, ba.f1);
    }

    #[test]
    fn f1_rejects_out_of_range_frames() {
        assert!(summary_f1(&set(&[10]), &set(&[1]), 10).is_err());
    }
}
