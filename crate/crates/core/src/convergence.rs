//! Convergence bound for the M-client update and comparison against
//! seed-averaged training trajectories.

use crate::analytic::{RoundModel, SystemConfig};
use crate::engine::Trajectory;
use crate::error::{Error, Result};
use crate::numeric::RunningStats;
use crate::problem::ProblemSpec;

/// Minimum number of seeds for expectation checks.
pub const MIN_REPLICATIONS: usize = 30;

/// Constants entering the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub s_tilde: f64,
    /// `A = S~ N mu`.
    pub a: f64,
    /// `B = 2 S~ L N Gamma + sigma^2 S~ N / M`.
    pub b: f64,
    pub l: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub gamma_het: f64,
    /// `eps1 = |w_1 - w*|^2`.
    pub eps1: f64,
    pub m: u32,
    pub n: u32,
}

impl BoundParams {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        s_tilde: f64,
        l: f64,
        mu: f64,
        sigma2: f64,
        gamma_het: f64,
        eps1: f64,
        m: u32,
        n: u32,
    ) -> Result<Self> {
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !(finite_nonneg(sigma2) && finite_nonneg(gamma_het) && finite_nonneg(eps1)) {
            return Err(Error::InvalidBoundConstants(format!(
                "sigma2, Gamma and eps1 must be finite and >= 0 (got {sigma2}, {gamma_het}, {eps1})"
            )));
        }
        if !(mu.is_finite() && mu > 0.0 && l.is_finite() && l >= mu) {
            return Err(Error::InvalidBoundConstants(format!(
                "need 0 < mu <= L, got mu = {mu}, L = {l}"
            )));
        }
        if m == 0 || n == 0 || m > n {
            return Err(Error::InvalidBoundConstants(format!(
                "need 1 <= M <= N, got M = {m}, N = {n}"
            )));
        }
        let nf = n as f64;
        let a = s_tilde * nf * mu;
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidBoundConstants(format!(
                "A = {a} must be positive"
            )));
        }
        let b = 2.0 * s_tilde * l * nf * gamma_het + sigma2 * s_tilde * nf / m as f64;
        Ok(Self {
            s_tilde,
            a,
            b,
            l,
            mu,
            sigma2,
            gamma_het,
            eps1,
            m,
            n,
        })
    }

    /// Constants for training `spec` under `cfg` from the all-zero initial model.
    pub fn new(cfg: &SystemConfig, spec: &ProblemSpec) -> Result<Self> {
        if spec.n_clients() != cfg.n_clients as usize {
            return Err(Error::InvalidConfig(format!(
                "problem has {} clients but system has {}",
                spec.n_clients(),
                cfg.n_clients
            )));
        }
        let model = RoundModel::new(*cfg)?;
        Self::from_parts(
            model.s_tilde(),
            spec.smoothness(),
            spec.strong_convexity(),
            spec.noise_variance(),
            spec.heterogeneity(),
            spec.optimum().norm_squared(),
            cfg.min_learners,
            cfg.n_clients,
        )
    }

    fn bracket(&self) -> f64 {
        (4.0 * self.l * self.gamma_het + 2.0 * self.sigma2 / self.m as f64) / self.mu
            + (self.l + self.n as f64 * self.mu * self.s_tilde) * self.eps1
    }
}

/// `L / (2L + S~ N mu t) * ((4 L Gamma + 2 sigma^2 / M) / mu + (L + N mu S~) eps1)`.
pub fn gap_bound(params: &BoundParams, t: u64) -> f64 {
    let t = t as f64;
    params.l / (2.0 * params.l + params.s_tilde * params.n as f64 * params.mu * t)
        * params.bracket()
}

/// Large-`t` form of [`gap_bound`] with the `2L` dropped from the denominator.
pub fn large_t_reduction(params: &BoundParams, t: u64) -> f64 {
    params.l / (params.s_tilde * params.n as f64 * params.mu * t as f64) * params.bracket()
}

/// `max(L/mu, 1) (4 L Gamma + 2 sigma^2/M + L mu eps1) / (p Pr(n~ >= M-1) mu t) + L mu eps1 / (mu t)`.
///
/// Uses `S~ >= p Pr(n~ >= M-1) / N`, so it never falls below
/// [`large_t_reduction`]; that ordering is checked on every call.
pub fn gap_bound_rate(params: &BoundParams, cfg: &SystemConfig, t: u64) -> Result<f64> {
    if cfg.n_clients != params.n || cfg.min_learners != params.m {
        return Err(Error::InvalidBoundConstants(
            "system configuration does not match bound parameters".into(),
        ));
    }
    let model = RoundModel::new(*cfg)?;
    let participation = model.participation_prob();
    if participation <= 0.0 {
        return Err(Error::DivergentMetric {
            metric: "rate bound",
        });
    }
    let (l, mu, tf) = (params.l, params.mu, t as f64);
    let numer =
        4.0 * l * params.gamma_het + 2.0 * params.sigma2 / params.m as f64 + l * mu * params.eps1;
    let value =
        (l / mu).max(1.0) * numer / (participation * mu * tf) + l * mu * params.eps1 / (mu * tf);
    let reduced = large_t_reduction(params, t);
    if value < reduced * (1.0 - 1e-12) {
        return Err(Error::InvalidBoundConstants(format!(
            "rate bound {value} below large-t reduction {reduced}"
        )));
    }
    Ok(value)
}

/// `(E[Delta]/T - 1/2) / t`, equal to `1 / (t p Pr(n~ >= M-1))`.
pub fn age_bound_link(cfg: &SystemConfig, t: u64) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidConfig(
            "round index must be at least 1".into(),
        ));
    }
    let model = RoundModel::new(*cfg)?;
    let participation = model.participation_prob();
    if participation <= 0.0 {
        return Err(Error::DivergentMetric {
            metric: "age bound link",
        });
    }
    let via_age = (model.expected_age()? / cfg.deadline - 0.5) / t as f64;
    let direct = 1.0 / (t as f64 * participation);
    if (via_age - direct).abs() > 1e-9 * direct {
        return Err(Error::ContractViolation(format!(
            "age link {via_age} disagrees with 1/(t p Pr) = {direct}"
        )));
    }
    Ok(via_age)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub t: u64,
    pub mean_gap: f64,
    pub se_gap: f64,
    pub bound: f64,
    /// `bound / mean_gap`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    /// Round indices where `mean_gap > bound + 2 se_gap`.
    pub violations: Vec<u64>,
    pub replications: usize,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str = "t,mean_gap,se_gap,bound,ratio";

    /// Fraction of round indices where the mean gap sits within the allowance.
    pub fn fraction_within(&self) -> f64 {
        1.0 - self.violations.len() as f64 / self.rows.len() as f64
    }

    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn row(&self, t: u64) -> Option<&BoundRow> {
        self.rows.get(t.checked_sub(1)? as usize)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.t, r.mean_gap, r.se_gap, r.bound, r.ratio
            ));
        }
        out
    }
}

/// Seed-averaged gap per round index against the bound, with a
/// two-standard-error allowance.
pub fn empirical_vs_bound(
    trajectories: &[Trajectory],
    params: &BoundParams,
) -> Result<BoundReport> {
    if trajectories.len() < MIN_REPLICATIONS {
        return Err(Error::InsufficientReplications {
            required: MIN_REPLICATIONS,
            got: trajectories.len(),
        });
    }
    let len = trajectories[0].rows.len();
    if trajectories.iter().any(|tr| tr.rows.len() != len) {
        return Err(Error::ContractViolation(
            "trajectories differ in length".into(),
        ));
    }
    let mut rows = Vec::with_capacity(len + 1);
    let mut violations = Vec::new();
    for t in 1..=(len as u64 + 1) {
        let stats: RunningStats = trajectories
            .iter()
            .map(|tr| tr.gap_at(t).expect("length checked above"))
            .collect();
        let (mean_gap, se_gap) = (stats.mean(), stats.std_error());
        let bound = gap_bound(params, t);
        if mean_gap > bound + 2.0 * se_gap {
            violations.push(t);
        }
        rows.push(BoundRow {
            t,
            mean_gap,
            se_gap,
            bound,
            ratio: bound / mean_gap,
        });
    }
    Ok(BoundReport {
        rows,
        violations,
        replications: trajectories.len(),
    })
}
