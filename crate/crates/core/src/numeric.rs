//! Small numeric helpers shared by every stage.

const PAIRWISE_BLOCK: usize = 8;

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// slice length, so results are reproducible for a given input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `f(i)` for `i in 0..n`.
pub fn pairwise_sum_by(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    let values: Vec<f64> = (0..n).map(f).collect();
    pairwise_sum(&values)
}

pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Relative difference, falling back to absolute when `expected` is zero.
pub fn relative_error(actual: f64, expected: f64) -> f64 {
    let diff = (actual - expected).abs();
    if expected == 0.0 {
        diff
    } else {
        diff / expected.abs()
    }
}

/// 1 + squared coefficient of variation (population form) of the weights.
pub fn design_effect(weights: &[f64]) -> f64 {
    if weights.is_empty() {
        return 1.0;
    }
    let m = mean(weights);
    let sq: Vec<f64> = weights.iter().map(|w| (w - m) * (w - m)).collect();
    let var = pairwise_sum(&sq) / weights.len() as f64;
    1.0 + var / (m * m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn pairwise_is_more_accurate_than_naive() {
        let v = vec![0.1; 1 << 20];
        let exact = 0.1 * (1u64 << 20) as f64;
        let naive: f64 = v.iter().sum();
        assert!(relative_error(pairwise_sum(&v), exact) <= relative_error(naive, exact));
        assert!(relative_error(pairwise_sum(&v), exact) < 1e-14);
    }

    #[test]
    fn logistic_is_symmetric_and_finite() {
        assert_eq!(logistic(0.0), 0.5);
        for x in [-800.0, -30.0, -1.0, 1.0, 30.0, 800.0] {
            let p = logistic(x);
            assert!(p.is_finite());
            assert!((p + logistic(-x) - 1.0).abs() < 1e-15);
        }
        assert!((log1p_exp(800.0) - 800.0).abs() < 1e-12);
        assert!((log1p_exp(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn design_effect_of_uniform_weights_is_one() {
        assert_eq!(design_effect(&[3.0; 10]), 1.0);
        // weights {1,3}: mean 2, var 1, cv^2 = 1/4
        assert!((design_effect(&[1.0, 3.0]) - 1.25).abs() < 1e-15);
    }
}
