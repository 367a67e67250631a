//! Binomial pmf and tail tables evaluated without factorials.
//!
//! The pmf is built from a log-space multiplicative recurrence started at
//! the mode and normalized afterwards, so neither end of the support
//! underflows before it has to.
//! Both cumulative directions are accumulated with compensated summation:
//! the lower sum is accurate when the failure probability is small, the
//! upper sum when the success probability is small.

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Pmf and cumulative tables of `Binomial(trials, p)`.
#[derive(Debug, Clone)]
pub struct BinomialSummary {
    trials: u32,
    p: f64,
    pmf: Vec<f64>,
    /// `upper[m] = Pr(n >= m)` for `m = 0..=trials + 1`.
    upper: Vec<f64>,
    /// `lower[m] = Pr(n < m)` for `m = 0..=trials + 1`.
    lower: Vec<f64>,
}

/// Builds the summary from `p` alone. See [`BinomialSummary::with_complement`]
/// when `1 - p` is available more accurately than by subtraction.
pub fn binomial_summary(trials: u32, p: f64) -> Result<BinomialSummary> {
    BinomialSummary::with_complement(trials, p, 1.0 - p)
}

impl BinomialSummary {
    pub fn with_complement(trials: u32, p: f64, one_minus_p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::ProbabilityDomain(p));
        }
        if !(0.0..=1.0).contains(&one_minus_p) {
            return Err(Error::ProbabilityDomain(1.0 - one_minus_p));
        }
        let n = trials as usize;
        let pmf = if p == 0.0 || one_minus_p == 0.0 {
            let mut v = vec![0.0; n + 1];
            v[if p == 0.0 { 0 } else { n }] = 1.0;
            v
        } else {
            log_recurrence_pmf(trials, p, one_minus_p)
        };

        let mut lower_sum = vec![0.0; n + 2];
        let mut acc = CompensatedSum::new();
        for m in 1..=n + 1 {
            acc.add(pmf[m - 1]);
            lower_sum[m] = acc.value();
        }
        let mut upper_sum = vec![0.0; n + 2];
        let mut acc = CompensatedSum::new();
        for m in (0..=n).rev() {
            acc.add(pmf[m]);
            upper_sum[m] = acc.value();
        }
        // take the smaller side from its own sum and the larger by complement
        let (lower, upper): (Vec<f64>, Vec<f64>) = lower_sum
            .iter()
            .zip(&upper_sum)
            .map(|(&lo, &up)| {
                if up <= 0.5 {
                    (1.0 - up, up)
                } else {
                    (lo, 1.0 - lo)
                }
            })
            .unzip();

        Ok(Self {
            trials,
            p,
            pmf,
            upper,
            lower,
        })
    }

    pub fn trials(&self) -> u32 {
        self.trials
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// `Pr(n >= m)`; one for `m = 0`, zero past the support.
    pub fn tail(&self, m: u32) -> f64 {
        self.upper.get(m as usize).copied().unwrap_or(0.0)
    }

    /// `Pr(n < m)`, the failure probability when `m` responders are required.
    pub fn below(&self, m: u32) -> f64 {
        self.lower.get(m as usize).copied().unwrap_or(1.0)
    }

    /// Compensated `sum_{n < m} f(n) p_n`.
    pub fn partial_expectation<F: Fn(u32) -> f64>(&self, m: u32, f: F) -> f64 {
        let end = (m as usize).min(self.pmf.len());
        self.pmf[..end]
            .iter()
            .enumerate()
            .map(|(n, &pn)| f(n as u32) * pn)
            .collect::<CompensatedSum>()
            .value()
    }

    /// Compensated `sum_{n >= m} f(n) p_n`.
    pub fn tail_expectation<F: Fn(u32) -> f64>(&self, m: u32, f: F) -> f64 {
        let start = (m as usize).min(self.pmf.len());
        self.pmf[start..]
            .iter()
            .enumerate()
            .map(|(i, &pn)| f((start + i) as u32) * pn)
            .collect::<CompensatedSum>()
            .value()
    }
}

fn log_recurrence_pmf(trials: u32, p: f64, one_minus_p: f64) -> Vec<f64> {
    let n = trials as usize;
    let nf = trials as f64;
    let log_odds = p.ln() - one_minus_p.ln();
    let mode = (((nf + 1.0) * p).floor() as usize).min(n);

    // log(p_k / p_mode); each step adds O(eps) relative error, so values
    // near the mode are accurate and only the far tails drift
    let mut logs = vec![0.0; n + 1];
    for k in mode..n {
        logs[k + 1] = logs[k] + ((nf - k as f64) / (k as f64 + 1.0)).ln() + log_odds;
    }
    for k in (1..=mode).rev() {
        logs[k - 1] = logs[k] - ((nf - (k - 1) as f64) / k as f64).ln() - log_odds;
    }
    let unnormalized: Vec<f64> = logs.into_iter().map(f64::exp).collect();
    let total = unnormalized
        .iter()
        .copied()
        .collect::<CompensatedSum>()
        .value();
    unnormalized.into_iter().map(|x| x / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::bigint::BigInt;
    use num::rational::BigRational;
    use num::ToPrimitive;
    use proptest::prelude::*;

    fn exact_pmf(trials: u32, p_num: i64, p_den: i64) -> Vec<f64> {
        let p = BigRational::new(BigInt::from(p_num), BigInt::from(p_den));
        let q = BigRational::from_integer(BigInt::from(1)) - p.clone();
        (0..=trials)
            .map(|k| {
                let mut c = BigInt::from(1);
                for i in 0..k {
                    c = c * BigInt::from(trials - i) / BigInt::from(i + 1);
                }
                let mut term = BigRational::from_integer(c);
                for _ in 0..k {
                    term *= p.clone();
                }
                for _ in k..trials {
                    term *= q.clone();
                }
                term.to_f64().unwrap()
            })
            .collect()
    }

    #[test]
    fn single_bernoulli() {
        let b = binomial_summary(1, 0.5).unwrap();
        assert_eq!(b.pmf(), &[0.5, 0.5]);
        assert_eq!(b.tail(1), 0.5);
        assert_eq!(b.below(1), 0.5);
    }

    #[test]
    fn degenerate_certain_success() {
        let b = binomial_summary(100, 1.0).unwrap();
        assert_eq!(b.pmf()[100], 1.0);
        assert!(b.pmf()[..100].iter().all(|&x| x == 0.0));
        for m in 0..=100 {
            assert_eq!(b.tail(m), 1.0);
        }
        assert_eq!(b.tail(101), 0.0);
    }

    #[test]
    fn matches_exact_rational_pmf() {
        let b = binomial_summary(10, 0.3935).unwrap();
        let exact = exact_pmf(10, 3935, 10000);
        for (got, want) in b.pmf().iter().zip(&exact) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn matches_exact_rational_pmf_at_hundred_trials() {
        let b = binomial_summary(100, 0.25).unwrap();
        let exact = exact_pmf(100, 1, 4);
        for (got, want) in b.pmf().iter().zip(&exact) {
            assert!((got - want).abs() <= 1e-13 * want.max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn zero_trials_is_a_point_mass() {
        let b = binomial_summary(0, 0.7).unwrap();
        assert_eq!(b.pmf(), &[1.0]);
        assert_eq!(b.tail(0), 1.0);
        assert_eq!(b.tail(1), 0.0);
    }

    #[test]
    fn rejects_out_of_domain_probability() {
        assert!(matches!(
            binomial_summary(5, 1.5),
            Err(Error::ProbabilityDomain(_))
        ));
        assert!(binomial_summary(5, -0.1).is_err());
        assert!(binomial_summary(5, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn pmf_sums_to_one_and_tail_is_monotone(trials in 0u32..400, p in 0.0f64..=1.0) {
            let b = binomial_summary(trials, p).unwrap();
            let total: f64 = crate::numeric::compensated_sum(b.pmf().iter().copied());
            prop_assert!((total - 1.0).abs() < 1e-12);
            for m in 0..=trials {
                prop_assert!(b.tail(m + 1) <= b.tail(m));
                prop_assert!((b.tail(m) + b.below(m) - 1.0).abs() < 1e-12);
            }
            if p > 0.0 && trials > 0 {
                prop_assert!(b.below(1) < 1.0);
            }
        }
    }
}
