//! One-shot end-to-end validation of every closed form and ordering.
//!
//! The check list is fixed; each entry reports pass/fail with a short
//! detail string. Output depends only on the seed and scale.

use rayon::prelude::*;

use crate::analytic::{argmax_first, argmin_first, g_of_m_curve, RoundModel, SystemConfig};
use crate::convergence::age_bound_link;
use crate::engine::{run_training, AgeWeighting, LearningRate, SchemeKind, TrainingOptions};
use crate::error::Result;
use crate::experiments::{
    agu_comparison, biased_comparison, bound_experiment, build_problem, closed_form_check,
    closed_form_grid, deadline_sweep, expected_cycles, quorum_for_success, replication_seeds,
    standard_params, standard_problem, transient_params, Comparison,
};
use crate::hyperopt::{minimize_j, objective_j, CostWeights, SearchBounds};
use crate::partition::{PartitionKind, PartitionParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Sizes used for the published checks.
    Full,
    /// Shorter runs for smoke testing.
    Quick,
}

impl Scale {
    fn mc_rounds(self) -> u64 {
        match self {
            Scale::Full => 1_000_000,
            Scale::Quick => 100_000,
        }
    }

    fn train_rounds(self) -> u64 {
        match self {
            Scale::Full => 2000,
            Scale::Quick => 400,
        }
    }

    fn brute_force_points(self) -> usize {
        match self {
            Scale::Full => 1_000_000,
            Scale::Quick => 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    pub scale: Scale,
    /// Inflate the closed-form wastage by 1% so the Monte Carlo check must fail.
    pub mutate_wastage: bool,
}

impl ValidateOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            scale: Scale::Full,
            mutate_wastage: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub const CSV_HEADER: &'static str = "check,passed,detail";

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for c in &self.checks {
            out.push_str(&format!(
                "{},{},{}\n",
                c.name,
                c.passed,
                c.detail.replace(',', ";")
            ));
        }
        out
    }
}

/// Names of all checks in run order.
pub const CHECKS: [&str; 12] = [
    "closed_forms_monte_carlo",
    "single_learner_argmins",
    "g_of_m_peak",
    "bound_holds",
    "inverse_t_decay",
    "age_convergence_link",
    "age_link_identity",
    "hyperopt_oracle",
    "hyperopt_identity",
    "scheme_equivalences",
    "awu_beats_mcu_biased",
    "agu_beats_mcu",
];

type Check = fn(&ValidateOptions) -> Result<(bool, String)>;

fn check_fn(name: &str) -> Check {
    match name {
        "closed_forms_monte_carlo" => closed_forms_monte_carlo,
        "single_learner_argmins" => single_learner_argmins,
        "g_of_m_peak" => g_of_m_peak,
        "bound_holds" => bound_holds,
        "inverse_t_decay" => inverse_t_decay,
        "age_convergence_link" => age_convergence_link,
        "age_link_identity" => age_link_identity,
        "hyperopt_oracle" => hyperopt_oracle,
        "hyperopt_identity" => hyperopt_identity,
        "scheme_equivalences" => scheme_equivalences,
        "awu_beats_mcu_biased" => awu_beats_mcu_biased,
        "agu_beats_mcu" => agu_beats_mcu,
        _ => unreachable!("unregistered check {name}"),
    }
}

pub fn validate_all(opts: &ValidateOptions) -> ValidationReport {
    let checks = CHECKS
        .iter()
        .map(|&name| {
            let (passed, detail) = match check_fn(name)(opts) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult {
                name,
                passed,
                detail,
            }
        })
        .collect();
    ValidationReport { checks }
}

/// Minimum successful cycles for a grid point to enter the Monte Carlo check.
pub const MIN_CYCLES: f64 = 1000.0;

fn closed_forms_monte_carlo(o: &ValidateOptions) -> Result<(bool, String)> {
    let rounds = o.scale.mc_rounds();
    let scale = if o.mutate_wastage { 1.01 } else { 1.0 };
    let mut feasible = Vec::new();
    for cfg in closed_form_grid() {
        if expected_cycles(&cfg, rounds)? >= MIN_CYCLES {
            feasible.push(cfg);
        }
    }
    let results: Vec<_> = feasible
        .par_iter()
        .map(|c| closed_form_check(c, rounds, o.seed, scale))
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (cfg, (_, checks)) in feasible.iter().zip(&results) {
        for m in checks {
            worst = worst.max(m.z_score().abs());
            if !m.within(3.0) {
                failures.push(format!(
                    "{} at N={} M={} T={} z={:.2}",
                    m.name,
                    cfg.n_clients,
                    cfg.min_learners,
                    cfg.deadline,
                    m.z_score()
                ));
            }
        }
    }
    let passed = feasible.len() >= 12 && failures.is_empty();
    let mut detail = format!("{} points; max |z| {:.3}", feasible.len(), worst);
    if !failures.is_empty() {
        detail.push_str("; ");
        detail.push_str(&failures.join("; "));
    }
    Ok((passed, detail))
}

fn single_learner_argmins(_: &ValidateOptions) -> Result<(bool, String)> {
    let mut bad = Vec::new();
    let mut points = 0;
    for n in [5u32, 20, 100] {
        for x in [0.3, 1.0] {
            let metric = |f: fn(&RoundModel) -> Result<f64>| -> Result<Vec<f64>> {
                (1..=n)
                    .map(|m| {
                        let model = RoundModel::new(SystemConfig::new(n, m, x, 1.0)?)?;
                        Ok(f(&model).unwrap_or(f64::INFINITY))
                    })
                    .collect()
            };
            let cw = metric(RoundModel::expected_resource_wastage)?;
            let age = metric(RoundModel::expected_age)?;
            points += 1;
            if argmin_first(&cw) != Some(0) || argmin_first(&age) != Some(0) {
                bad.push(format!("N={n} T={x}"));
            }
        }
    }
    Ok((
        bad.is_empty(),
        format!("{points} points; mismatches [{}]", bad.join(" ")),
    ))
}

fn g_of_m_peak(_: &ValidateOptions) -> Result<(bool, String)> {
    let (best, curve) = g_of_m_curve(100, 0.5, 1.0)?;
    let again = argmax_first(&curve).map(|i| i as u32 + 1);
    Ok((
        (31..=35).contains(&best) && again == Some(best),
        format!("argmax M = {best}"),
    ))
}

fn bound_setup(o: &ValidateOptions) -> Result<crate::convergence::BoundReport> {
    let spec = standard_problem(o.seed)?;
    let cfg = SystemConfig::new(100, 1, 0.5, 1.0)?;
    bound_experiment(
        &spec,
        &cfg,
        o.scale.train_rounds(),
        &replication_seeds(o.seed, 30),
    )
}

fn bound_holds(o: &ValidateOptions) -> Result<(bool, String)> {
    let rep = bound_setup(o)?;
    let min_ratio = rep
        .rows
        .iter()
        .map(|r| r.ratio)
        .fold(f64::INFINITY, f64::min);
    Ok((
        rep.holds(),
        format!(
            "t = 1..={}; violations {}; min bound/gap {:.3}",
            rep.rows.last().map_or(0, |r| r.t),
            rep.violations.len(),
            min_ratio
        ),
    ))
}

fn inverse_t_decay(o: &ValidateOptions) -> Result<(bool, String)> {
    let rep = bound_setup(o)?;
    let t = o.scale.train_rounds();
    let late = rep.row(t).map(|r| r.mean_gap).unwrap_or(f64::NAN);
    let early = rep.row(t / 2).map(|r| r.mean_gap).unwrap_or(f64::NAN);
    let ratio = late / early;
    Ok((
        (0.35..=0.75).contains(&ratio),
        format!("gap({t})/gap({}) = {ratio:.4}", t / 2),
    ))
}

fn age_convergence_link(o: &ValidateOptions) -> Result<(bool, String)> {
    let spec = standard_problem(o.seed)?;
    let base = SystemConfig::new(100, 1, 0.5, 1.0)?;
    let pts = deadline_sweep(
        &spec,
        &base,
        &[0.2, 0.5, 1.0],
        o.scale.train_rounds(),
        &replication_seeds(o.seed, 30),
    )?;
    let gaps_down = pts.windows(2).all(|w| w[1].gap.mean < w[0].gap.mean);
    let ages_down = pts
        .windows(2)
        .all(|w| w[1].normalized_age < w[0].normalized_age);
    let detail = pts
        .iter()
        .map(|p| {
            format!(
                "T={} gap {:.4e} age/T {:.4}",
                p.cfg.deadline, p.gap.mean, p.normalized_age
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Ok((gaps_down && ages_down, detail))
}

/// `p Pr(Bin(N-1, p) >= M-1)` summed term by term in log space.
fn participation_direct(n: u32, m: u32, x: f64) -> f64 {
    let p = -(-x).exp_m1();
    let (lp, lq) = (p.ln(), -x);
    let trials = n - 1;
    let mut ln_choose = 0.0;
    let mut tail = 0.0;
    for k in 0..=trials {
        if k > 0 {
            ln_choose += ((trials - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k + 1 >= m {
            tail += (ln_choose + k as f64 * lp + (trials - k) as f64 * lq).exp();
        }
    }
    p * tail
}

fn age_link_identity(o: &ValidateOptions) -> Result<(bool, String)> {
    use rand::Rng;
    let mut rng = crate::rng::stream(o.seed, crate::rng::StreamPurpose::Partition, 1 << 20);
    let mut worst = 0.0f64;
    let mut used = 0;
    while used < 200 {
        let n = rng.random_range(1..=120u32);
        let m = rng.random_range(1..=n);
        let x: f64 = rng.random_range(0.05..3.0);
        let direct = participation_direct(n, m, x);
        if direct < 1e-100 {
            continue;
        }
        used += 1;
        let t = rng.random_range(1..=5000u64);
        let link = age_bound_link(&SystemConfig::new(n, m, x, 1.0)?, t)?;
        let want = 1.0 / (t as f64 * direct);
        worst = worst.max(((link - want) / want).abs());
    }
    Ok((
        worst <= 1e-9,
        format!("{used} configs; max relative error {worst:.3e}"),
    ))
}

fn hyperopt_oracle(o: &ValidateOptions) -> Result<(bool, String)> {
    let w = CostWeights::new(20.0, 100.0)?;
    let found = minimize_j(50, 1.0, &w, &SearchBounds::default())?;
    let points = o.scale.brute_force_points();
    let (lo, hi) = (1e-4, 20.0);
    let (best_x, _) = (0..points)
        .into_par_iter()
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            (
                x,
                objective_j(x, 50, 1.0, &w)
                    .map(|e| e.j_value)
                    .unwrap_or(f64::INFINITY),
            )
        })
        .reduce(
            || (f64::NAN, f64::INFINITY),
            |a, b| {
                if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            },
        );
    let err = (found.x_star - best_x).abs();
    Ok((
        err <= 1e-3,
        format!(
            "x* = {:.6}; scan {:.6}; |diff| {err:.2e}",
            found.x_star, best_x
        ),
    ))
}

fn hyperopt_identity(_: &ValidateOptions) -> Result<(bool, String)> {
    let w = CostWeights::new(20.0, 100.0)?;
    let (n, rate) = (50u32, 1.0);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let x = 0.05 + 0.25 * i as f64;
        let j = objective_j(x, n, rate, &w)?.j_value;
        let model = RoundModel::new(SystemConfig::new(n, 1, x / rate, rate)?)?;
        let sum = w.alpha_w * model.expected_resource_wastage()?
            + w.alpha_b * model.expected_comm_cost()?
            + model.expected_age()?;
        worst = worst.max((j - sum).abs() / sum.abs().max(1.0));
    }
    Ok((worst <= 1e-10, format!("max scaled difference {worst:.3e}")))
}

fn scheme_equivalences(o: &ValidateOptions) -> Result<(bool, String)> {
    let spec = standard_problem(o.seed)?;
    let seeds = replication_seeds(o.seed, 5);
    let lr = TrainingOptions::new(LearningRate::Fixed(0.05));
    let mut awu_same = true;
    let mut agu_same = true;
    // deadline long enough that every client responds every round: equal
    // ages and no failed rounds
    let certain = SystemConfig::new(100, 1, 50.0, 1.0)?;
    // finite deadline with a weighting that saturates at the smallest age
    let saturated = SystemConfig::new(100, 1, 0.5, 1.0)?;
    let flat = AgeWeighting {
        cap: 0.5,
        exponent: 2.0,
    };
    for &s in &seeds {
        let mcu = run_training(&spec, &certain, SchemeKind::Mcu, 200, s, &lr)?;
        let awu = run_training(
            &spec,
            &certain,
            SchemeKind::Awu(AgeWeighting::default()),
            200,
            s,
            &lr,
        )?;
        let agu = run_training(&spec, &certain, SchemeKind::Agu, 200, s, &lr)?;
        awu_same &= mcu == awu;
        agu_same &= mcu == agu;
        let mcu = run_training(&spec, &saturated, SchemeKind::Mcu, 200, s, &lr)?;
        let awu = run_training(&spec, &saturated, SchemeKind::Awu(flat), 200, s, &lr)?;
        awu_same &= mcu == awu;
    }
    Ok((
        awu_same && agu_same,
        format!("awu==mcu {awu_same}; agu==mcu {agu_same}"),
    ))
}

fn comparison_detail(c: &Comparison, a: &str, b: &str) -> String {
    format!(
        "{a} {:.4e} +- {:.1e}; {b} {:.4e} +- {:.1e}",
        c.baseline.mean, c.baseline.se, c.candidate.mean, c.candidate.se
    )
}

/// Biased-client problem: 30% of clients always respond and share a far-off optimum.
pub fn biased_params() -> PartitionParams {
    PartitionParams {
        biased_fraction: 0.3,
        ..standard_params()
    }
}

fn awu_beats_mcu_biased(o: &ValidateOptions) -> Result<(bool, String)> {
    let cfg = SystemConfig::new(100, 1, 0.5, 1.0)?;
    let c = biased_comparison(
        &biased_params(),
        o.seed,
        &cfg,
        o.scale.train_rounds(),
        &replication_seeds(o.seed, 30),
        AgeWeighting::default(),
    )?;
    Ok((c.candidate_wins(), comparison_detail(&c, "mcu", "awu")))
}

/// Fixed step for the AGU comparison.
pub const AGU_STEP: f64 = 0.002;

fn agu_beats_mcu(o: &ValidateOptions) -> Result<(bool, String)> {
    let spec = build_problem(PartitionKind::NoniidClasses, &transient_params(), o.seed)?;
    let m = quorum_for_success(100, 0.5, 1.0, 0.5)?;
    let cfg = SystemConfig::new(100, m, 0.5, 1.0)?;
    let c = agu_comparison(
        &spec,
        &cfg,
        AGU_STEP,
        o.scale.train_rounds(),
        &replication_seeds(o.seed, 30),
    )?;
    let success = RoundModel::new(cfg)?.success_prob();
    Ok((
        c.candidate_wins(),
        format!(
            "M={m} success {success:.3}; {}",
            comparison_detail(&c, "mcu", "agu")
        ),
    ))
}
