//! Closed-form cost and age metrics of the deadline round process.
//!
//! Every client finishes its round by the deadline independently with
//! probability `p = 1 - exp(-rate * deadline)`. A round succeeds when at
//! least `min_learners` of the `n_clients` clients respond. The metrics
//! here are expectations over that process: the client time discarded per
//! successful update, the number of broadcasts per successful update, and
//! the time-averaged age of a client's contribution at the server.

use serde::{Deserialize, Serialize};

use crate::binomial::BinomialSummary;
use crate::error::{Error, Result};

/// The `(N, M, T, lambda)` tuple that defines the round process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_clients: u32,
    pub min_learners: u32,
    pub deadline: f64,
    pub rate: f64,
}

impl SystemConfig {
    pub fn new(n_clients: u32, min_learners: u32, deadline: f64, rate: f64) -> Result<Self> {
        let cfg = Self {
            n_clients,
            min_learners,
            deadline,
            rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::InvalidConfig("n_clients must be at least 1".into()));
        }
        if self.min_learners == 0 || self.min_learners > self.n_clients {
            return Err(Error::InvalidConfig(format!(
                "min_learners must lie in [1, {}], got {}",
                self.n_clients, self.min_learners
            )));
        }
        if !(self.deadline.is_finite() && self.deadline > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "deadline must be positive and finite, got {}",
                self.deadline
            )));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rate must be positive and finite, got {}",
                self.rate
            )));
        }
        Ok(())
    }

    /// Normalized deadline `x = rate * deadline`.
    pub fn load(&self) -> f64 {
        self.rate * self.deadline
    }

    /// Per-client probability of responding before the deadline.
    pub fn response_prob(&self) -> f64 {
        -(-self.load()).exp_m1()
    }

    /// `1 - p`, computed without cancellation.
    pub fn miss_prob(&self) -> f64 {
        (-self.load()).exp()
    }

    pub fn with_min_learners(&self, m: u32) -> Self {
        Self {
            min_learners: m,
            ..*self
        }
    }

    pub fn with_deadline(&self, t: f64) -> Self {
        Self {
            deadline: t,
            ..*self
        }
    }
}

/// Binomial tables for one configuration, shared by all metrics so they are
/// evaluated from the same `p`.
#[derive(Debug, Clone)]
pub struct RoundModel {
    cfg: SystemConfig,
    /// Responders among all N clients.
    all: BinomialSummary,
    /// Responders among the N - 1 clients other than a tagged one.
    others: BinomialSummary,
}

impl RoundModel {
    pub fn new(cfg: SystemConfig) -> Result<Self> {
        cfg.validate()?;
        let p = cfg.response_prob();
        let miss = cfg.miss_prob();
        Ok(Self {
            cfg,
            all: BinomialSummary::with_complement(cfg.n_clients, p, miss)?,
            others: BinomialSummary::with_complement(cfg.n_clients - 1, p, miss)?,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn p(&self) -> f64 {
        self.all.p()
    }

    pub fn responders(&self) -> &BinomialSummary {
        &self.all
    }

    pub fn other_responders(&self) -> &BinomialSummary {
        &self.others
    }

    /// Failure probability `q = Pr(n < M)`.
    pub fn fail_prob(&self) -> f64 {
        self.all.below(self.cfg.min_learners)
    }

    /// Success probability `1 - q = Pr(n >= M)`.
    pub fn success_prob(&self) -> f64 {
        self.all.tail(self.cfg.min_learners)
    }

    /// `Pr(n~ >= M - 1)`: the others fill the quorum given the tagged client responded.
    pub fn quorum_given_tagged(&self) -> f64 {
        self.others.tail(self.cfg.min_learners - 1)
    }

    /// `p * Pr(n~ >= M - 1)`, the probability that a given client
    /// contributes to a successful round.
    pub fn participation_prob(&self) -> f64 {
        self.p() * self.quorum_given_tagged()
    }

    pub fn expected_resource_wastage(&self) -> Result<f64> {
        let success = self.success_prob();
        if success <= 0.0 {
            return Err(Error::DivergentMetric {
                metric: "expected resource wastage",
            });
        }
        let n = self.cfg.n_clients as f64;
        let t = self.cfg.deadline;
        let partial = self
            .all
            .partial_expectation(self.cfg.min_learners, |k| k as f64);
        Ok((self.cfg.miss_prob() * n * t + t * partial) / success)
    }

    pub fn expected_comm_cost(&self) -> Result<f64> {
        let success = self.success_prob();
        if success <= 0.0 {
            return Err(Error::DivergentMetric {
                metric: "expected communication cost",
            });
        }
        Ok(1.0 / success)
    }

    pub fn expected_age(&self) -> Result<f64> {
        let part = self.participation_prob();
        if part <= 0.0 {
            return Err(Error::DivergentMetric {
                metric: "expected age",
            });
        }
        let t = self.cfg.deadline;
        Ok(t / 2.0 + t / part)
    }

    /// `E[1{k in S, |S| >= M} / |S|]`.
    pub fn s_tilde(&self) -> f64 {
        let m = self.cfg.min_learners - 1;
        self.p() * self.others.tail_expectation(m, |n| 1.0 / (n as f64 + 1.0))
    }

    /// `M * Pr(n~ >= M - 1)`.
    pub fn g_of_m(&self) -> f64 {
        self.cfg.min_learners as f64 * self.quorum_given_tagged()
    }
}

pub fn expected_resource_wastage(cfg: &SystemConfig) -> Result<f64> {
    RoundModel::new(*cfg)?.expected_resource_wastage()
}

pub fn expected_comm_cost(cfg: &SystemConfig) -> Result<f64> {
    RoundModel::new(*cfg)?.expected_comm_cost()
}

pub fn expected_age(cfg: &SystemConfig) -> Result<f64> {
    RoundModel::new(*cfg)?.expected_age()
}

pub fn s_tilde(cfg: &SystemConfig) -> Result<f64> {
    Ok(RoundModel::new(*cfg)?.s_tilde())
}

pub fn g_of_m(cfg: &SystemConfig) -> Result<f64> {
    Ok(RoundModel::new(*cfg)?.g_of_m())
}

/// Index of the smallest value; the earliest index wins ties.
pub fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v >= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Index of the largest value; the earliest index wins ties.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// `g(M)` for `M = 1..=N`; returns the maximizing `M` and the curve.
pub fn g_of_m_curve(n_clients: u32, deadline: f64, rate: f64) -> Result<(u32, Vec<f64>)> {
    let base = SystemConfig::new(n_clients, 1, deadline, rate)?;
    let model = RoundModel::new(base)?;
    let curve: Vec<f64> = (1..=n_clients)
        .map(|m| m as f64 * model.other_responders().tail(m - 1))
        .collect();
    let best = argmax_first(&curve).map(|i| i as u32 + 1).unwrap_or(1);
    Ok((best, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: u32, m: u32, t: f64, rate: f64) -> SystemConfig {
        SystemConfig::new(n, m, t, rate).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::new(0, 1, 1.0, 1.0).is_err());
        assert!(SystemConfig::new(5, 0, 1.0, 1.0).is_err());
        assert!(SystemConfig::new(5, 6, 1.0, 1.0).is_err());
        assert!(SystemConfig::new(5, 2, 0.0, 1.0).is_err());
        assert!(SystemConfig::new(5, 2, 1.0, -1.0).is_err());
        assert!(SystemConfig::new(5, 5, 1.0, 1.0).is_ok());
    }

    #[test]
    fn single_client_wastage_reduces() {
        for &t in &[0.1, 0.5, 2.0] {
            let c = cfg(1, 1, t, 1.0);
            let p = c.response_prob();
            let want = (1.0 - p) * t / p;
            assert!(close(expected_resource_wastage(&c).unwrap(), want, 1e-13));
            assert!(close(expected_comm_cost(&c).unwrap(), 1.0 / p, 1e-13));
        }
    }

    #[test]
    fn certain_response_wastes_nothing() {
        let c = cfg(1, 1, 50.0, 1.0);
        assert!(expected_resource_wastage(&c).unwrap() < 1e-20);
        let c = cfg(1, 1, 1000.0, 1.0);
        assert_eq!(expected_resource_wastage(&c).unwrap(), 0.0);
        assert_eq!(expected_age(&c).unwrap(), 1.5 * 1000.0);
    }

    #[test]
    fn divergent_when_nobody_can_respond() {
        // p underflows to zero
        let c = cfg(3, 1, 1e-320, 1e-10);
        assert_eq!(c.response_prob(), 0.0);
        assert!(matches!(
            expected_resource_wastage(&c),
            Err(Error::DivergentMetric { .. })
        ));
        assert!(expected_comm_cost(&c).is_err());
        assert!(expected_age(&c).is_err());
    }

    #[test]
    fn age_with_single_required_learner() {
        for &(n, t) in &[(1, 0.3), (10, 0.7), (100, 0.5)] {
            let c = cfg(n, 1, t, 1.0);
            let p = c.response_prob();
            assert!(close(expected_age(&c).unwrap(), t / 2.0 + t / p, 1e-13));
        }
    }

    #[test]
    fn comm_cost_near_one_for_large_pools() {
        let c = cfg(100, 1, 0.5, 1.0);
        assert!((expected_comm_cost(&c).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn s_tilde_single_learner_closed_form() {
        for n in (1..=200).step_by(7) {
            for &x in &[0.05, 0.3935, 1.0, 3.0] {
                let c = cfg(n, 1, x, 1.0);
                let p = c.response_prob();
                let want = (1.0 - (1.0 - p).powi(n as i32)) / n as f64;
                assert!((s_tilde(&c).unwrap() - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn s_tilde_full_response_is_reciprocal_pool() {
        for m in [1, 3, 7] {
            let c = cfg(7, m, 1000.0, 1.0);
            assert!((s_tilde(&c).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn s_tilde_matches_exhaustive_enumeration() {
        // N=10, M=4, p=0.5: enumerate every responder subset
        let (n, m, p) = (10u32, 4u32, 0.5f64);
        let mut want = 0.0;
        for mask in 0u32..(1 << n) {
            let size = mask.count_ones();
            let prob = p.powi(size as i32) * (1.0 - p).powi((n - size) as i32);
            if mask & 1 == 1 && size >= m {
                want += prob / size as f64;
            }
        }
        let c = cfg(n, m, std::f64::consts::LN_2, 1.0);
        assert!((c.response_prob() - 0.5).abs() < 1e-16);
        assert!((s_tilde(&c).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn g_of_m_basics() {
        assert_eq!(g_of_m(&cfg(100, 1, 0.5, 1.0)).unwrap(), 1.0);
        let (best, curve) = g_of_m_curve(100, 0.5, 1.0).unwrap();
        assert!((31..=35).contains(&best), "argmax {best}");
        assert!(curve[39] < curve[32]);
    }

    #[test]
    fn single_learner_argmins_are_one() {
        for &n in &[2u32, 5, 20, 100] {
            for &t in &[0.05, 0.3, 1.0, 3.0] {
                for &rate in &[0.5, 1.0, 2.0] {
                    let base = cfg(n, 1, t, rate);
                    let wastage: Vec<f64> = (1..=n)
                        .map(|m| {
                            expected_resource_wastage(&base.with_min_learners(m))
                                .unwrap_or(f64::INFINITY)
                        })
                        .collect();
                    let age: Vec<f64> = (1..=n)
                        .map(|m| expected_age(&base.with_min_learners(m)).unwrap_or(f64::INFINITY))
                        .collect();
                    assert_eq!(argmin_first(&wastage), Some(0));
                    assert_eq!(argmin_first(&age), Some(0));
                }
            }
        }
    }

    #[test]
    fn comm_cost_monotone_in_m_and_t() {
        let n = 30;
        for m in 1..n {
            let a = expected_comm_cost(&cfg(n, m, 0.4, 1.0)).unwrap();
            let b = expected_comm_cost(&cfg(n, m + 1, 0.4, 1.0)).unwrap();
            assert!(b >= a);
        }
        for i in 1..40 {
            let t = 0.05 * i as f64;
            let a = expected_comm_cost(&cfg(n, 10, t, 1.0)).unwrap();
            let b = expected_comm_cost(&cfg(n, 10, t + 0.05, 1.0)).unwrap();
            assert!(b <= a);
        }
    }

    #[test]
    fn participation_lower_bounds_s_tilde() {
        for n in [1u32, 2, 10, 57, 100] {
            for m in [1, n / 3 + 1, n] {
                for &t in &[0.1, 0.5, 2.0] {
                    let model = RoundModel::new(cfg(n, m, t, 1.0)).unwrap();
                    let lhs = n as f64 * model.s_tilde();
                    assert!(lhs >= model.participation_prob() * (1.0 - 1e-12));
                }
            }
        }
    }

    #[test]
    fn argmin_tie_takes_first() {
        assert_eq!(argmin_first(&[3.0, 1.0, 1.0]), Some(1));
        assert_eq!(argmax_first(&[1.0, 5.0, 5.0]), Some(1));
        assert_eq!(argmin_first(&[]), None);
    }
}
