//! The two formulas everything else reports: per-question memory strength and
//! the memory/context/uncertain outcome ratios.
//!
//! Both are generic over the float type so they can be exercised at f32 and
//! f64; the rest of the crate works in [`crate::Score`] (f64).

use num_traits::Float;

/// Memory strength of a clustered answer multiset: `sum_i p_i * ln(p_i)` with
/// `p_i = sizes[i] / n`, the negative entropy of the cluster-size
/// distribution (natural log).
///
/// The score is 0 exactly when every answer landed in one cluster and falls
/// to `-ln(n)` when all `n` answers disagree, so with the default `n = 7` the
/// range is `[-ln 7, 0] ⊂ [-2, 0]`.
///
/// Callers must pass a valid partition: every size positive, at least one
/// cluster. See [`crate::strength::memory_strength`] for the checked entry
/// point.
pub fn consistency_score<F: Float>(sizes: &[usize]) -> F {
    debug_assert!(!sizes.is_empty());
    debug_assert!(sizes.iter().all(|&c| c > 0));
    let n = F::from(sizes.iter().sum::<usize>()).expect("cluster total fits in the float type");
    let mut score = F::zero();
    for &c in sizes {
        let p = F::from(c).expect("cluster size fits in the float type") / n;
        score = score + p * p.ln();
    }
    score
}

/// Memory/context/uncertain ratios for one group of evaluation outcomes:
/// each count divided by the group total. Returns `None` for an empty group.
///
/// The three ratios sum to 1 up to float rounding (within 1e-12 at f64).
pub fn outcome_ratios<F: Float>(memory: u64, context: u64, uncertain: u64) -> Option<(F, F, F)> {
    let total = memory + context + uncertain;
    if total == 0 {
        return None;
    }
    let t = F::from(total)?;
    Some((
        F::from(memory)? / t,
        F::from(context)? / t,
        F::from(uncertain)? / t,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unanimous_answers_score_exactly_zero() {
        assert_eq!(consistency_score::<f64>(&[7]), 0.0);
        assert_eq!(consistency_score::<f32>(&[7]), 0.0);
    }

    #[test]
    fn all_distinct_answers_hit_negative_log_n() {
        let s: f64 = consistency_score(&[1, 1, 1, 1, 1, 1, 1]);
        assert!((s - -(7f64).ln()).abs() < 1e-12);
        assert!((s - -1.945910).abs() < 1e-6);
    }

    #[test]
    fn frozen_mid_range_values() {
        let s: f64 = consistency_score(&[4, 3]);
        assert!((s - -0.6829).abs() < 1e-4, "got {s}");
        let s: f64 = consistency_score(&[3, 2, 2]);
        assert!((s - -1.0790).abs() < 1e-4, "got {s}");
    }

    #[test]
    fn f32_and_f64_agree_to_single_precision() {
        for sizes in [&[5, 2][..], &[2, 2, 3][..], &[1, 6][..]] {
            let wide: f64 = consistency_score(sizes);
            let narrow: f32 = consistency_score(sizes);
            assert!((wide - narrow as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn ratios_of_two_five_three() {
        let (m, c, u): (f64, f64, f64) = outcome_ratios(2, 5, 3).unwrap();
        assert_eq!((m, c, u), (0.2, 0.5, 0.3));
        assert!((m + c + u - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_group_has_no_ratios() {
        assert_eq!(outcome_ratios::<f64>(0, 0, 0), None);
    }
}
