//! Upper tail of the Poisson-binomial distribution.

use statrs::distribution::{ContinuousCDF, Normal};

/// Above this many trials [`TailMethod::Auto`] switches to the refined normal approximation.
pub const EXACT_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TailMethod {
    #[default]
    Auto,
    Exact,
    RefinedNormal,
}

/// `P(X >= observed)` for `X` a sum of independent Bernoulli(`probs[k]`).
pub fn poisson_binomial_upper_tail(probs: &[f64], observed: usize) -> f64 {
    upper_tail_with(probs, observed, TailMethod::Auto)
}

pub fn upper_tail_with(probs: &[f64], observed: usize, method: TailMethod) -> f64 {
    match method {
        TailMethod::Exact => exact_upper_tail(probs, observed),
        TailMethod::RefinedNormal => refined_normal_upper_tail(probs, observed),
        TailMethod::Auto if probs.len() > EXACT_LIMIT => refined_normal_upper_tail(probs, observed),
        TailMethod::Auto => exact_upper_tail(probs, observed),
    }
}

/// Dynamic-programming convolution over the trials. Outcomes at or above
/// `observed` are lumped into one absorbing state, so the tail is accumulated
/// directly rather than as `1 - cdf`.
pub fn exact_upper_tail(probs: &[f64], observed: usize) -> f64 {
    if observed == 0 {
        return 1.0;
    }
    if observed > probs.len() {
        return 0.0;
    }
    // pmf[s] = P(partial sum == s) for s < observed
    let mut pmf = vec![0.0f64; observed];
    pmf[0] = 1.0;
    let mut tail = 0.0f64;
    let mut top = 0usize; // highest reachable state below `observed`
    for &p in probs {
        let q = 1.0 - p;
        tail += pmf[observed - 1] * p;
        let hi = (top + 1).min(observed - 1);
        for s in (1..=hi).rev() {
            pmf[s] = pmf[s] * q + pmf[s - 1] * p;
        }
        pmf[0] *= q;
        top = hi;
    }
    tail.clamp(0.0, 1.0)
}

/// Refined normal approximation with a skewness correction and continuity
/// correction.
pub fn refined_normal_upper_tail(probs: &[f64], observed: usize) -> f64 {
    if observed == 0 {
        return 1.0;
    }
    let mu: f64 = probs.iter().sum();
    let var: f64 = probs.iter().map(|p| p * (1.0 - p)).sum();
    if var <= 0.0 {
        return if (observed as f64) <= mu + 1e-9 { 1.0 } else { 0.0 };
    }
    let sigma = var.sqrt();
    let gamma = probs.iter().map(|p| p * (1.0 - p) * (1.0 - 2.0 * p)).sum::<f64>() / sigma.powi(3);
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let x = (observed as f64 - 1.0 + 0.5 - mu) / sigma;
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = std.cdf(x) + gamma * (1.0 - x * x) * density / 6.0;
    (1.0 - cdf).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{Binomial, DiscreteCDF};

    // enumerates all 2^m outcomes
    fn brute_tail(probs: &[f64], observed: usize) -> f64 {
        let m = probs.len();
        let mut total = 0.0;
        for mask in 0u32..(1 << m) {
            if (mask.count_ones() as usize) < observed {
                continue;
            }
            let mut pr = 1.0;
            for (k, &p) in probs.iter().enumerate() {
                pr *= if mask >> k & 1 == 1 { p } else { 1.0 - p };
            }
            total += pr;
        }
        total
    }

    #[test]
    fn trivial_cases() {
        assert_eq!(exact_upper_tail(&[0.3, 0.2], 0), 1.0);
        assert_eq!(exact_upper_tail(&[], 0), 1.0);
        assert_eq!(exact_upper_tail(&[1.0, 1.0], 2), 1.0);
        assert_eq!(exact_upper_tail(&[0.4, 0.4], 3), 0.0);
        assert_eq!(exact_upper_tail(&[0.0, 0.0, 0.0], 1), 0.0);
    }

    #[test]
    fn equal_probs_match_binomial_survival() {
        for &(m, p) in &[(10u64, 0.3), (25, 0.05), (40, 0.5), (7, 0.9)] {
            let b = Binomial::new(p, m).unwrap();
            let probs = vec![p; m as usize];
            for k in 1..=m {
                let want = b.sf(k - 1);
                let got = exact_upper_tail(&probs, k as usize);
                assert!((got - want).abs() < 1e-12, "m={m} p={p} k={k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn refined_normal_is_close_for_many_trials() {
        let probs: Vec<f64> = (0..6000)
            .map(|k| 0.05 + 0.4 * ((k * 37 % 101) as f64 / 100.0))
            .collect();
        let mu: f64 = probs.iter().sum();
        for off in [-60.0, -20.0, 0.0, 20.0, 60.0] {
            let k = (mu + off).round() as usize;
            let exact = exact_upper_tail(&probs, k);
            let approx = poisson_binomial_upper_tail(&probs, k);
            assert!((exact - approx).abs() < 1e-3, "k={k}: {exact} vs {approx}");
        }
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(probs in prop::collection::vec(0.0f64..=1.0, 0..=12), k in 0usize..14) {
            let k = k.min(probs.len() + 1);
            let got = exact_upper_tail(&probs, k);
            prop_assert!((got - brute_tail(&probs, k)).abs() <= 1e-12);
        }

        #[test]
        fn tail_is_non_increasing(probs in prop::collection::vec(0.0f64..=1.0, 1..40)) {
            let mut prev = 1.0;
            for k in 0..=probs.len() + 1 {
                let t = exact_upper_tail(&probs, k);
                prop_assert!(t <= prev + 1e-15);
                prev = t;
            }
        }
    }
}
