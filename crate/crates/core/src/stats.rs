//! Chi-square(1) tails and quantiles, and the Holm step-down count.

use statrs::function::erf::{erfc, erfc_inv};

/// Upper tail `P(X >= x)` for `X ~ chi2(1)`.
pub fn chi2_1_upper_tail(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    erfc((x / 2.0).sqrt())
}

/// The `1 - c` quantile of chi2(1), i.e. the squared two-sided normal critical value.
pub fn chi2_1_quantile_upper(c: f64) -> f64 {
    assert!(c > 0.0 && c < 1.0, "level must lie in (0, 1), got {c}");
    let z = std::f64::consts::SQRT_2 * erfc_inv(c);
    z * z
}

/// Holm step-down at level `alpha`. Returns the rejection flag of every hypothesis.
/// Ties in p-values are ordered by index.
pub fn holm_rejections(pvalues: &[f64], alpha: f64) -> Vec<bool> {
    let k = pvalues.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    let mut rejected = vec![false; k];
    for (step, &idx) in order.iter().enumerate() {
        if pvalues[idx] <= alpha / (k - step) as f64 {
            rejected[idx] = true;
        } else {
            break;
        }
    }
    rejected
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_at_five_percent() {
        assert!((chi2_1_quantile_upper(0.05) - 3.841_458_820_694_124).abs() < 1e-9);
    }

    #[test]
    fn tail_inverts_quantile() {
        for &c in &[0.5, 0.05, 0.0125, 1e-4, 1e-8] {
            let q = chi2_1_quantile_upper(c);
            assert!((chi2_1_upper_tail(q) - c).abs() < 1e-12 * c.max(1e-3) * 1e3);
        }
    }

    #[test]
    fn holm_stops_at_first_failure() {
        let p = [0.001, 0.04, 0.02, 0.5];
        // 0.001 <= .0125, 0.02 <= .01667? no -> stop
        assert_eq!(holm_rejections(&p, 0.05), vec![true, false, false, false]);
        let p = [0.001, 0.03, 0.012, 0.5];
        assert_eq!(holm_rejections(&p, 0.05), vec![true, false, true, false]);
    }
}
