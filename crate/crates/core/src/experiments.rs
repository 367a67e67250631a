//! Reusable experiment drivers on the synthetic quadratic problems.
//!
//! "Accuracy" in the federated setting is measured here by the final
//! optimality gap `F(w) - F*`; lower is better.

use crate::analytic::{RoundModel, SystemConfig};
use crate::convergence::{empirical_vs_bound, BoundParams, BoundReport};
use crate::engine::{
    lr_from_bound_params, run_training_replications, AgeWeighting, LearningRate, SchemeKind,
    TrainingOptions, Trajectory,
};
use crate::error::{Error, Result};
use crate::numeric::RunningStats;
use crate::partition::{partition_generator, PartitionKind, PartitionParams};
use crate::problem::ProblemSpec;
use crate::rng::{stream, StreamPurpose};
use crate::sim::{run_timing_sim_with, SimOptions, TimingReport};

/// `count` training seeds derived from `base`.
pub fn replication_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64)
        .map(|i| base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i))
        .collect()
}

/// Builds a problem from its own partition stream of `seed`.
pub fn build_problem(
    kind: PartitionKind,
    params: &PartitionParams,
    seed: u64,
) -> Result<ProblemSpec> {
    partition_generator(kind, params, &mut stream(seed, StreamPurpose::Partition, 0))
}

/// The reference non-i.i.d. problem: 100 clients, `d = 5`, `mu = 1`,
/// `L = 4`, three clusters of optima and noisy gradients.
pub fn standard_params() -> PartitionParams {
    PartitionParams::default()
}

pub fn standard_problem(seed: u64) -> Result<ProblemSpec> {
    build_problem(PartitionKind::NoniidClasses, &standard_params(), seed)
}

/// Decaying schedule `beta / (gamma + t)` derived from the bound constants.
pub fn bound_schedule(cfg: &SystemConfig, spec: &ProblemSpec) -> Result<TrainingOptions> {
    let bp = BoundParams::new(cfg, spec)?;
    let lr = lr_from_bound_params(bp.a, bp.l)?;
    Ok(TrainingOptions::new(LearningRate::Decaying(lr)))
}

/// Mean and standard error over replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub count: u64,
}

impl Estimate {
    pub fn from_stats(s: &RunningStats) -> Self {
        Self {
            mean: s.mean(),
            se: s.std_error(),
            count: s.count(),
        }
    }

    pub fn of<I: IntoIterator<Item = f64>>(values: I) -> Self {
        Self::from_stats(&values.into_iter().collect())
    }
}

pub fn final_gaps(trajectories: &[Trajectory]) -> Estimate {
    Estimate::of(trajectories.iter().map(|t| t.final_gap))
}

/// Final gaps of a baseline and a candidate scheme on the same seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub baseline: Estimate,
    pub candidate: Estimate,
}

impl Comparison {
    /// Candidate better by more than two standard errors of each mean,
    /// i.e. the two-standard-error intervals do not overlap.
    pub fn candidate_wins(&self) -> bool {
        self.candidate.mean + 2.0 * self.candidate.se < self.baseline.mean - 2.0 * self.baseline.se
    }
}

/// Seed-averaged gap against the bound on `spec` under `cfg`.
pub fn bound_experiment(
    spec: &ProblemSpec,
    cfg: &SystemConfig,
    rounds: u64,
    seeds: &[u64],
) -> Result<BoundReport> {
    let opts = bound_schedule(cfg, spec)?;
    let trajectories = run_training_replications(spec, cfg, SchemeKind::Mcu, rounds, seeds, &opts)?;
    empirical_vs_bound(&trajectories, &BoundParams::new(cfg, spec)?)
}

/// One point of a deadline sweep: closed-form normalized age and the
/// final gap of MCU with the bound schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub cfg: SystemConfig,
    pub normalized_age: f64,
    pub gap: Estimate,
}

pub fn deadline_sweep(
    spec: &ProblemSpec,
    base: &SystemConfig,
    deadlines: &[f64],
    rounds: u64,
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    deadlines
        .iter()
        .map(|&t| {
            let cfg = base.with_deadline(t);
            cfg.validate()?;
            let opts = bound_schedule(&cfg, spec)?;
            let tr = run_training_replications(spec, &cfg, SchemeKind::Mcu, rounds, seeds, &opts)?;
            Ok(SweepPoint {
                cfg,
                normalized_age: RoundModel::new(cfg)?.expected_age()? / t,
                gap: final_gaps(&tr),
            })
        })
        .collect()
}

/// MCU (baseline) against AWU (candidate) with `M = 1` on a biased problem.
pub fn biased_comparison(
    params: &PartitionParams,
    problem_seed: u64,
    cfg: &SystemConfig,
    rounds: u64,
    seeds: &[u64],
    weighting: AgeWeighting,
) -> Result<Comparison> {
    if cfg.min_learners != 1 {
        return Err(Error::InvalidConfig(
            "biased comparison runs with min_learners = 1".into(),
        ));
    }
    let spec = build_problem(PartitionKind::Biased, params, problem_seed)?;
    let opts = bound_schedule(cfg, &spec)?;
    let mcu = run_training_replications(&spec, cfg, SchemeKind::Mcu, rounds, seeds, &opts)?;
    let awu =
        run_training_replications(&spec, cfg, SchemeKind::Awu(weighting), rounds, seeds, &opts)?;
    Ok(Comparison {
        baseline: final_gaps(&mcu),
        candidate: final_gaps(&awu),
    })
}

/// Quorum whose per-round success probability is closest to `target`
/// (smallest `M` on ties).
pub fn quorum_for_success(n_clients: u32, deadline: f64, rate: f64, target: f64) -> Result<u32> {
    let mut best = (1, f64::INFINITY);
    for m in 1..=n_clients {
        let cfg = SystemConfig::new(n_clients, m, deadline, rate)?;
        let d = (RoundModel::new(cfg)?.success_prob() - target).abs();
        if d < best.1 {
            best = (m, d);
        }
    }
    Ok(best.0)
}

/// MCU (baseline) against AGU (candidate) with the same fixed step.
pub fn agu_comparison(
    spec: &ProblemSpec,
    cfg: &SystemConfig,
    eta: f64,
    rounds: u64,
    seeds: &[u64],
) -> Result<Comparison> {
    let opts = TrainingOptions::new(LearningRate::Fixed(eta));
    let mcu = run_training_replications(spec, cfg, SchemeKind::Mcu, rounds, seeds, &opts)?;
    let agu = run_training_replications(spec, cfg, SchemeKind::Agu, rounds, seeds, &opts)?;
    Ok(Comparison {
        baseline: final_gaps(&mcu),
        candidate: final_gaps(&agu),
    })
}

/// Problem used for scheme comparisons in the transient regime: optima
/// displaced far from the initial model.
pub fn transient_params() -> PartitionParams {
    PartitionParams {
        shift: 10.0,
        ..PartitionParams::default()
    }
}

/// Closed-form value, Monte Carlo estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricCheck {
    pub name: &'static str,
    pub analytic: f64,
    pub estimate: f64,
    pub se: f64,
}

impl MetricCheck {
    pub fn z_score(&self) -> f64 {
        let diff = self.estimate - self.analytic;
        if diff == 0.0 {
            0.0
        } else {
            diff / self.se
        }
    }

    pub fn within(&self, k: f64) -> bool {
        self.z_score().abs() <= k
    }
}

/// Expected successful cycles in `rounds` rounds, `rounds * Pr(n >= M)`.
pub fn expected_cycles(cfg: &SystemConfig, rounds: u64) -> Result<f64> {
    Ok(rounds as f64 * RoundModel::new(*cfg)?.success_prob())
}

/// Simulates `rounds` rounds and compares wastage, rounds per update and
/// age with their closed forms. `wastage_scale` multiplies the
/// closed-form wastage and exists for mutation testing only.
pub fn closed_form_check(
    cfg: &SystemConfig,
    rounds: u64,
    seed: u64,
    wastage_scale: f64,
) -> Result<(TimingReport, [MetricCheck; 3])> {
    let model = RoundModel::new(*cfg)?;
    let rep = run_timing_sim_with(cfg, rounds, seed, &SimOptions::default())?;
    // when every sampled cycle lasted one round the sample spread is zero;
    // fall back to the geometric standard deviation sqrt(q) / (1 - q)
    let se_k = if rep.se_k > 0.0 {
        rep.se_k
    } else {
        model.fail_prob().sqrt() / model.success_prob() / (rep.success_cycles.max(1) as f64).sqrt()
    };
    let checks = [
        MetricCheck {
            name: "resource_wastage",
            analytic: model.expected_resource_wastage()? * wastage_scale,
            estimate: rep.mean_cw,
            se: rep.se_cw,
        },
        MetricCheck {
            name: "comm_cost",
            analytic: model.expected_comm_cost()?,
            estimate: rep.mean_k,
            se: se_k,
        },
        MetricCheck {
            name: "age",
            analytic: model.expected_age()?,
            estimate: rep.mean_age,
            se: rep.se_age,
        },
    ];
    Ok((rep, checks))
}

/// Configurations `N in {5, 20, 100}`, `M in {1, N/4, N/2}`,
/// `lambda T in {0.3, 1}` with `lambda = 1`, duplicates removed.
pub fn closed_form_grid() -> Vec<SystemConfig> {
    let mut out: Vec<SystemConfig> = Vec::new();
    for n in [5u32, 20, 100] {
        for m in [1, n / 4, n / 2] {
            for x in [0.3, 1.0] {
                let cfg = SystemConfig::new(n, m.max(1), x, 1.0).expect("grid point is valid");
                if !out.contains(&cfg) {
                    out.push(cfg);
                }
            }
        }
    }
    out
}
