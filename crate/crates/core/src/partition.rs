//! Client objective generators mimicking common data splits.
//!
//! Every client gets an independent random Hessian with spectrum pinned to
//! `[mu, L]`; the split only decides where the client optima `c_k` sit.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{random_spd, ProblemSpec, QuadraticClient};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Common optimum plus Gaussian jitter of scale `heterogeneity`.
    Iid,
    /// Optima grouped in `clusters` well-separated groups at radius
    /// `heterogeneity` from the origin.
    NoniidClasses,
    /// Like `NoniidClasses`, except that the first `biased_fraction` of
    /// clients share one far-off optimum and respond in every round.
    Biased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionParams {
    pub n_clients: usize,
    pub dim: usize,
    pub mu: f64,
    pub smoothness: f64,
    pub heterogeneity: f64,
    pub noise_std: f64,
    pub clusters: usize,
    pub biased_fraction: f64,
    /// Distance of the biased optimum from the origin.
    pub biased_offset: f64,
    /// Length of a common random displacement added to every optimum,
    /// which sets how far `w*` sits from the all-zero initial model.
    pub shift: f64,
}

impl Default for PartitionParams {
    fn default() -> Self {
        Self {
            n_clients: 100,
            dim: 5,
            mu: 1.0,
            smoothness: 4.0,
            heterogeneity: 1.0,
            noise_std: 0.5,
            clusters: 3,
            biased_fraction: 0.0,
            biased_offset: 5.0,
            shift: 0.0,
        }
    }
}

impl PartitionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_clients == 0 {
            return bad("n_clients must be at least 1".into());
        }
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.smoothness.is_finite() && self.smoothness >= self.mu) {
            return bad(format!(
                "smoothness must be finite and >= mu, got {}",
                self.smoothness
            ));
        }
        if !(self.heterogeneity.is_finite() && self.heterogeneity >= 0.0) {
            return bad(format!(
                "heterogeneity must be >= 0, got {}",
                self.heterogeneity
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if self.clusters == 0 {
            return bad("clusters must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.biased_fraction) {
            return bad(format!(
                "biased_fraction must lie in [0, 1], got {}",
                self.biased_fraction
            ));
        }
        if !(self.biased_offset.is_finite() && self.biased_offset >= 0.0) {
            return bad(format!(
                "biased_offset must be >= 0, got {}",
                self.biased_offset
            ));
        }
        if !(self.shift.is_finite() && self.shift >= 0.0) {
            return bad(format!("shift must be >= 0, got {}", self.shift));
        }
        Ok(())
    }

    /// Number of always-responding clients, `round(fraction * N)`.
    pub fn n_biased(&self) -> usize {
        (self.biased_fraction * self.n_clients as f64).round() as usize
    }
}

fn gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

fn unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = gaussian(dim, rng);
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

fn cluster_centers<R: Rng + ?Sized>(params: &PartitionParams, rng: &mut R) -> Vec<DVector<f64>> {
    (0..params.clusters)
        .map(|_| unit(params.dim, rng) * params.heterogeneity)
        .collect()
}

/// Builds the per-client objectives for `kind`.
pub fn partition_generator<R: Rng + ?Sized>(
    kind: PartitionKind,
    params: &PartitionParams,
    rng: &mut R,
) -> Result<ProblemSpec> {
    params.validate()?;
    let n = params.n_clients;
    let dim = params.dim;

    let mut always = vec![false; n];
    let centers: Vec<DVector<f64>> = match kind {
        PartitionKind::Iid => {
            let common = gaussian(dim, rng);
            (0..n)
                .map(|_| {
                    if params.heterogeneity > 0.0 {
                        &common + gaussian(dim, rng) * params.heterogeneity
                    } else {
                        common.clone()
                    }
                })
                .collect()
        }
        PartitionKind::NoniidClasses => {
            let groups = cluster_centers(params, rng);
            (0..n).map(|k| groups[k % groups.len()].clone()).collect()
        }
        PartitionKind::Biased => {
            let groups = cluster_centers(params, rng);
            let far = unit(dim, rng) * params.biased_offset;
            let n_biased = params.n_biased();
            always[..n_biased].iter_mut().for_each(|a| *a = true);
            (0..n)
                .map(|k| {
                    if k < n_biased {
                        far.clone()
                    } else {
                        groups[(k - n_biased) % groups.len()].clone()
                    }
                })
                .collect()
        }
    };

    let displacement = unit(dim, rng) * params.shift;
    let clients = centers
        .into_iter()
        .map(|c| {
            if params.shift > 0.0 {
                c + &displacement
            } else {
                c
            }
        })
        .map(|center| QuadraticClient {
            hessian: random_spd(dim, params.mu, params.smoothness, rng),
            center,
            offset: 0.0,
        })
        .collect();
    ProblemSpec::new(clients, params.noise_std)?.with_always_responding(always)
}
