//! Synthetic federated objectives with closed-form constants.
//!
//! Client `k` holds `F_k(w) = 1/2 (w - c_k)^T H_k (w - c_k) + b_k` with a
//! symmetric positive-definite `H_k`. For this family every constant the
//! convergence bound needs is exact: smoothness is the largest eigenvalue
//! over all `H_k`, strong convexity the smallest, the global optimum solves
//! `sum_k H_k (w - c_k) = 0`, and heterogeneity is
//! `F* - mean_k F_k*` with `F_k* = b_k`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticClient {
    pub hessian: DMatrix<f64>,
    pub center: DVector<f64>,
    pub offset: f64,
}

impl QuadraticClient {
    pub fn value(&self, w: &DVector<f64>) -> f64 {
        let d = w - &self.center;
        0.5 * d.dot(&(&self.hessian * &d)) + self.offset
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.hessian * (w - &self.center)
    }
}

/// A federated quadratic objective plus its derived constants.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    clients: Vec<QuadraticClient>,
    noise_std: f64,
    always_responding: Vec<bool>,
    optimum: DVector<f64>,
    optimal_value: f64,
    mean_hessian: DMatrix<f64>,
    smoothness: f64,
    convexity: f64,
    heterogeneity: f64,
}

impl ProblemSpec {
    pub fn new(clients: Vec<QuadraticClient>, noise_std: f64) -> Result<Self> {
        let Some(first) = clients.first() else {
            return Err(Error::InvalidConfig(
                "problem needs at least one client".into(),
            ));
        };
        let dim = first.center.len();
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_std must be >= 0, got {noise_std}"
            )));
        }

        let mut smoothness = f64::NEG_INFINITY;
        let mut convexity = f64::INFINITY;
        let mut h_sum = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for (k, c) in clients.iter().enumerate() {
            if c.center.len() != dim || c.hessian.shape() != (dim, dim) {
                return Err(Error::InvalidConfig(format!(
                    "client {k} has mismatched dimensions"
                )));
            }
            if !c
                .hessian
                .iter()
                .chain(c.center.iter())
                .all(|x| x.is_finite())
                || !c.offset.is_finite()
            {
                return Err(Error::InvalidConfig(format!(
                    "client {k} has non-finite entries"
                )));
            }
            let asym = (&c.hessian - c.hessian.transpose()).amax();
            if asym > 1e-12 * c.hessian.amax().max(1.0) {
                return Err(Error::InvalidConfig(format!(
                    "client {k} hessian is not symmetric"
                )));
            }
            let eig = c.hessian.clone().symmetric_eigenvalues();
            let lo = eig.min();
            if lo <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "client {k} hessian is not positive definite (min eigenvalue {lo})"
                )));
            }
            smoothness = smoothness.max(eig.max());
            convexity = convexity.min(lo);
            h_sum += &c.hessian;
            rhs += &c.hessian * &c.center;
        }

        let all_same_center = clients.iter().all(|c| c.center == first.center);
        let optimum = if all_same_center {
            first.center.clone()
        } else {
            h_sum
                .clone()
                .cholesky()
                .ok_or_else(|| {
                    Error::InvalidConfig("summed hessian is not positive definite".into())
                })?
                .solve(&rhs)
        };

        let n = clients.len();
        let mean_hessian = h_sum / n as f64;
        let mut spec = Self {
            always_responding: vec![false; n],
            clients,
            noise_std,
            optimum,
            optimal_value: 0.0,
            mean_hessian,
            smoothness,
            convexity,
            heterogeneity: 0.0,
        };
        spec.optimal_value = spec.global_value(&spec.optimum);
        let mean_client_opt = compensated_sum(spec.clients.iter().map(|c| c.offset)) / n as f64;
        spec.heterogeneity = (spec.optimal_value - mean_client_opt).max(0.0);
        Ok(spec)
    }

    /// Clients flagged here respond in every round regardless of the deadline.
    pub fn with_always_responding(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.clients.len() {
            return Err(Error::InvalidConfig(format!(
                "always-responding mask has {} entries for {} clients",
                mask.len(),
                self.clients.len()
            )));
        }
        self.always_responding = mask;
        Ok(self)
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    pub fn clients(&self) -> &[QuadraticClient] {
        &self.clients
    }

    pub fn client(&self, k: usize) -> &QuadraticClient {
        &self.clients[k]
    }

    pub fn always_responding(&self) -> &[bool] {
        &self.always_responding
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Variance bound of the stochastic gradient, `dim * noise_std^2`.
    pub fn noise_variance(&self) -> f64 {
        self.dim() as f64 * self.noise_std * self.noise_std
    }

    /// `w*`.
    pub fn optimum(&self) -> &DVector<f64> {
        &self.optimum
    }

    /// `F* = F(w*)`.
    pub fn optimal_value(&self) -> f64 {
        self.optimal_value
    }

    /// `F_k* = b_k`.
    pub fn client_optimal_value(&self, k: usize) -> f64 {
        self.clients[k].offset
    }

    /// `L`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// `mu`.
    pub fn strong_convexity(&self) -> f64 {
        self.convexity
    }

    /// `Gamma = F* - mean_k F_k*`.
    pub fn heterogeneity(&self) -> f64 {
        self.heterogeneity
    }

    /// `F(w) = mean_k F_k(w)` by direct evaluation.
    pub fn global_value(&self, w: &DVector<f64>) -> f64 {
        compensated_sum(self.clients.iter().map(|c| c.value(w))) / self.clients.len() as f64
    }

    /// `F(w) - F*`, evaluated as `1/2 (w - w*)^T Hbar (w - w*)` to avoid cancellation.
    pub fn optimality_gap(&self, w: &DVector<f64>) -> f64 {
        let d = w - &self.optimum;
        0.5 * d.dot(&(&self.mean_hessian * &d))
    }

    pub fn sq_dist(&self, w: &DVector<f64>) -> f64 {
        (w - &self.optimum).norm_squared()
    }

    pub fn true_gradient(&self, k: usize, w: &DVector<f64>) -> DVector<f64> {
        self.clients[k].gradient(w)
    }
}

/// Unbiased stochastic gradient of client `k`: the exact gradient plus
/// independent Gaussian noise with per-coordinate standard deviation
/// `noise_std`.
pub fn sgd_gradient<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    client: usize,
    weights: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let mut g = spec.true_gradient(client, weights);
    let s = spec.noise_std;
    if s > 0.0 {
        for x in g.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x += s * z;
        }
    }
    g
}

/// Random symmetric positive-definite matrix with spectrum in `[mu, l]`.
/// The extreme eigenvalues are exactly `mu` and `l` when `dim >= 2`.
pub fn random_spd<R: Rng + ?Sized>(dim: usize, mu: f64, l: f64, rng: &mut R) -> DMatrix<f64> {
    let gauss = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let q = gauss.qr().q();
    let eig = DVector::<f64>::from_fn(dim, |i, _| match i {
        0 => mu,
        i if i + 1 == dim => l,
        _ => mu + (l - mu) * rng.random::<f64>(),
    });
    let h = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    // exact symmetry
    (&h + h.transpose()) * 0.5
}
