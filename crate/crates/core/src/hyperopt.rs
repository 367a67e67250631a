//! Deadline selection for the single-learner scheme.
//!
//! With `M = 1` and `x = lambda T` the weighted design objective is
//!
//! `J(x) = a_w N x e^{-x} / (lambda (1 - e^{-Nx})) + a_b / (1 - e^{-Nx})
//!        + (x / lambda) (1/2 + 1 / (1 - e^{-x}))`
//!
//! which diverges at both ends of `(0, inf)` whenever `a_b > 0`. The first
//! term is bounded but not convex, so the minimizer scans a log-spaced grid
//! before refining with golden-section search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::x_over_one_minus_exp_neg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    /// Weight on expected resource wastage.
    pub alpha_w: f64,
    /// Weight on expected communication cost.
    pub alpha_b: f64,
}

impl CostWeights {
    pub fn new(alpha_w: f64, alpha_b: f64) -> Result<Self> {
        let w = Self { alpha_w, alpha_b };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_w", self.alpha_w), ("alpha_b", self.alpha_b)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `J(x)` and its three terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveEval {
    pub x: f64,
    pub j_value: f64,
    pub wastage: f64,
    pub comm: f64,
    pub age: f64,
}

fn check_system(n_clients: u32, rate: f64) -> Result<()> {
    if n_clients == 0 {
        return Err(Error::InvalidConfig("n_clients must be at least 1".into()));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "rate must be positive, got {rate}"
        )));
    }
    Ok(())
}

fn eval_unchecked(x: f64, n_clients: u32, rate: f64, w: &CostWeights) -> ObjectiveEval {
    let nx = n_clients as f64 * x;
    // every term is (lambda-free value) / lambda, except the comm term
    let wastage = if w.alpha_w == 0.0 {
        0.0
    } else {
        w.alpha_w * (-x).exp() * x_over_one_minus_exp_neg(nx) / rate
    };
    let comm = if w.alpha_b == 0.0 {
        0.0
    } else if nx == 0.0 {
        f64::INFINITY
    } else {
        w.alpha_b / -(-nx).exp_m1()
    };
    let age = (x / 2.0 + x_over_one_minus_exp_neg(x)) / rate;
    ObjectiveEval {
        x,
        j_value: wastage + comm + age,
        wastage,
        comm,
        age,
    }
}

/// Evaluates `J(x)`; `x = 0` returns the one-sided limit.
pub fn objective_j(
    x: f64,
    n_clients: u32,
    rate: f64,
    weights: &CostWeights,
) -> Result<ObjectiveEval> {
    check_system(n_clients, rate)?;
    weights.validate()?;
    if x.is_nan() || x < 0.0 {
        return Err(Error::InvalidConfig(format!("x must be >= 0, got {x}")));
    }
    Ok(eval_unchecked(x, n_clients, rate, weights))
}

/// Search interval and solver settings for [`minimize_j`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchBounds {
    pub lo: f64,
    pub hi: f64,
    /// Width in `x` at which golden-section refinement stops.
    pub tolerance: f64,
    pub grid_points: usize,
}

impl Default for SearchBounds {
    fn default() -> Self {
        Self {
            lo: 1e-4,
            hi: 20.0,
            tolerance: 1e-10,
            grid_points: 2000,
        }
    }
}

impl SearchBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.lo < self.hi) {
            return Err(Error::InvalidConfig(format!(
                "search bounds need 0 < lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.grid_points < 3 {
            return Err(Error::InvalidConfig(
                "grid_points must be at least 3".into(),
            ));
        }
        Ok(())
    }

    /// Log-spaced grid from `lo` to `hi` inclusive.
    pub fn grid(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        let last = self.grid_points - 1;
        (0..self.grid_points)
            .map(|i| match i {
                0 => self.lo,
                i if i == last => self.hi,
                i => (a + (b - a) * i as f64 / last as f64).exp(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x_star: f64,
    pub j_star: f64,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if c >= d {
            break;
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimizes `J` over `[lo, hi]`: grid scan (first index wins ties), then
/// golden-section refinement inside the neighbouring grid cells.
pub fn minimize_j(
    n_clients: u32,
    rate: f64,
    weights: &CostWeights,
    search: &SearchBounds,
) -> Result<Minimum> {
    check_system(n_clients, rate)?;
    weights.validate()?;
    search.validate()?;
    let f = |x: f64| eval_unchecked(x, n_clients, rate, weights).j_value;
    let grid = search.grid();
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let best = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .fold(None::<(usize, f64)>, |acc, (i, &v)| match acc {
            Some((_, bv)) if bv <= v => acc,
            _ => Some((i, v)),
        });
    let Some((i, grid_best)) = best else {
        return Err(Error::BracketFailure {
            lo: search.lo,
            hi: search.hi,
        });
    };
    let a = grid[i.saturating_sub(1)];
    let b = grid[(i + 1).min(grid.len() - 1)];
    let (x, fx) = golden_section(f, a, b, search.tolerance);
    Ok(if fx.is_finite() && fx < grid_best {
        Minimum {
            x_star: x,
            j_star: fx,
        }
    } else {
        Minimum {
            x_star: grid[i],
            j_star: grid_best,
        }
    })
}

/// Recommended deadline with the objective breakdown at the optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadlineRecommendation {
    pub x_star: f64,
    pub t_star: f64,
    pub at_optimum: ObjectiveEval,
}

pub fn recommend_deadline(
    n_clients: u32,
    rate: f64,
    weights: &CostWeights,
) -> Result<DeadlineRecommendation> {
    recommend_deadline_with(n_clients, rate, weights, &SearchBounds::default())
}

pub fn recommend_deadline_with(
    n_clients: u32,
    rate: f64,
    weights: &CostWeights,
    search: &SearchBounds,
) -> Result<DeadlineRecommendation> {
    let m = minimize_j(n_clients, rate, weights, search)?;
    Ok(DeadlineRecommendation {
        x_star: m.x_star,
        t_star: m.x_star / rate,
        at_optimum: eval_unchecked(m.x_star, n_clients, rate, weights),
    })
}

/// `J` sampled on `xs`.
pub fn j_curve(
    n_clients: u32,
    rate: f64,
    weights: &CostWeights,
    xs: &[f64],
) -> Result<Vec<ObjectiveEval>> {
    xs.iter()
        .map(|&x| objective_j(x, n_clients, rate, weights))
        .collect()
}
