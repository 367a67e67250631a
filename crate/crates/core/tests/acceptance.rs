//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Runs with `harness = false` so the lines always reach stdout.

use std::process::ExitCode;
use std::time::Instant;

use rayon::prelude::*;

use deadline_fl::analytic::argmin_first;
use deadline_fl::convergence::gap_bound;
use deadline_fl::engine::{run_training, AgeWeighting, LearningRate, SchemeKind, TrainingOptions};
use deadline_fl::experiments::{
    agu_comparison, biased_comparison, bound_experiment, build_problem, closed_form_check,
    closed_form_grid, deadline_sweep, expected_cycles, quorum_for_success, replication_seeds,
    standard_params, standard_problem, transient_params,
};
use deadline_fl::hyperopt::{minimize_j, objective_j, CostWeights, SearchBounds};
use deadline_fl::partition::{PartitionKind, PartitionParams};
use deadline_fl::validate::{validate_all, Scale, ValidateOptions};
use deadline_fl::{RoundModel, SystemConfig};

const SEED: u64 = 1;

type Outcome = Result<(bool, String), String>;

/// Binomial(n, p) pmf from a log-space product, independent of the library.
fn pmf(n: u32, x: f64) -> Vec<f64> {
    let p = -(-x).exp_m1();
    let (lp, lq) = (p.ln(), -x);
    let mut ln_choose = 0.0;
    (0..=n)
        .map(|k| {
            if k > 0 {
                ln_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
            }
            (ln_choose + k as f64 * lp + (n - k) as f64 * lq).exp()
        })
        .collect()
}

/// Wastage, rounds per update and age from direct pmf sums (`lambda = 1`).
fn oracle_metrics(n: u32, m: u32, t: f64) -> [f64; 3] {
    let all = pmf(n, t);
    let others = pmf(n - 1, t);
    let success: f64 = all[m as usize..].iter().sum();
    let per_round: f64 = all
        .iter()
        .enumerate()
        .map(|(k, pk)| {
            let wasted = if (k as u32) < m {
                n as f64
            } else {
                (n as usize - k) as f64
            };
            pk * wasted * t
        })
        .sum();
    let p = -(-t).exp_m1();
    let part = p * others[(m - 1) as usize..].iter().sum::<f64>();
    [per_round / success, 1.0 / success, t / 2.0 + t / part]
}

fn c1_closed_forms() -> Outcome {
    let rounds = 1_000_000;
    let grid: Vec<SystemConfig> = closed_form_grid()
        .into_iter()
        .filter(|c| expected_cycles(c, rounds).unwrap() >= 1000.0)
        .collect();
    let rows: Vec<_> = grid
        .par_iter()
        .map(|c| closed_form_check(c, rounds, SEED, 1.0).map(|(_, ch)| (*c, ch)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut worst_z = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for (c, checks) in &rows {
        let want = oracle_metrics(c.n_clients, c.min_learners, c.deadline);
        for (m, w) in checks.iter().zip(want) {
            worst_z = worst_z.max(m.z_score().abs());
            worst_oracle = worst_oracle.max(((m.analytic - w) / w).abs());
        }
    }
    // a 1% error in the wastage formula must be caught somewhere on the grid
    let mutant_caught = grid.par_iter().any(|c| {
        let (_, ch) = closed_form_check(c, rounds, SEED, 1.01).unwrap();
        !ch[0].within(3.0)
    });
    Ok((
        rows.len() >= 12 && worst_z <= 3.0 && worst_oracle <= 1e-10 && mutant_caught,
        format!(
            "{} configs; max |z| {worst_z:.3}; closed form vs pmf oracle {worst_oracle:.1e}; mutant caught {mutant_caught}",
            rows.len()
        ),
    ))
}

fn c2_single_learner_argmins() -> Outcome {
    let mut bad = Vec::new();
    for n in [5u32, 20, 100] {
        for x in [0.3, 1.0] {
            let mut cw = Vec::new();
            let mut age = Vec::new();
            for m in 1..=n {
                let model = RoundModel::new(SystemConfig::new(n, m, x, 1.0).unwrap()).unwrap();
                cw.push(model.expected_resource_wastage().unwrap_or(f64::INFINITY));
                age.push(model.expected_age().unwrap_or(f64::INFINITY));
            }
            if argmin_first(&cw) != Some(0) || argmin_first(&age) != Some(0) {
                bad.push(format!("N={n} x={x}"));
            }
        }
    }
    Ok((
        bad.is_empty(),
        format!("6 points; mismatches [{}]", bad.join(" ")),
    ))
}

fn c3_g_peak() -> Outcome {
    let start = Instant::now();
    let others = pmf(99, 0.5);
    let g: Vec<f64> = (1..=100u32)
        .map(|m| m as f64 * others[(m - 1) as usize..].iter().sum::<f64>())
        .collect();
    let oracle = g
        .iter()
        .enumerate()
        .fold(
            (0, f64::MIN),
            |b, (i, &v)| if v > b.1 { (i + 1, v) } else { b },
        )
        .0 as u32;
    let (lib, _) = deadline_fl::analytic::g_of_m_curve(100, 0.5, 1.0).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        (31..=35).contains(&lib) && lib == oracle && secs < 1.0,
        format!("argmax M {lib}; oracle {oracle}; {secs:.3}s"),
    ))
}

fn standard_cfg() -> SystemConfig {
    SystemConfig::new(100, 1, 0.5, 1.0).unwrap()
}

fn c4_c5_bound() -> Result<(Outcome, Outcome), String> {
    let spec = standard_problem(SEED).map_err(|e| e.to_string())?;
    let cfg = standard_cfg();
    let rep = bound_experiment(&spec, &cfg, 2000, &replication_seeds(SEED, 30))
        .map_err(|e| e.to_string())?;
    // recompute the bound column from scratch
    let params =
        deadline_fl::convergence::BoundParams::new(&cfg, &spec).map_err(|e| e.to_string())?;
    let mut violations = 0;
    let mut min_ratio = f64::INFINITY;
    for r in &rep.rows {
        let bound = gap_bound(&params, r.t);
        if r.mean_gap > bound + 2.0 * r.se_gap {
            violations += 1;
        }
        min_ratio = min_ratio.min(bound / r.mean_gap);
    }
    let c4 = Ok((
        violations == 0 && rep.holds() && spec.smoothness() <= 5.0 && spec.noise_variance() > 0.0,
        format!(
            "L {:.3}; mu {:.3}; t = 1..={}; violations {violations}; min bound/gap {min_ratio:.2}",
            spec.smoothness(),
            spec.strong_convexity(),
            rep.rows.last().map_or(0, |r| r.t)
        ),
    ));
    let ratio = rep.row(2000).unwrap().mean_gap / rep.row(1000).unwrap().mean_gap;
    let c5 = Ok((
        (0.35..=0.75).contains(&ratio),
        format!("gap(2000)/gap(1000) {ratio:.4}"),
    ));
    Ok((c4, c5))
}

fn c6_age_link() -> Outcome {
    let spec = standard_problem(SEED).map_err(|e| e.to_string())?;
    let pts = deadline_sweep(
        &spec,
        &standard_cfg(),
        &[0.2, 0.5, 1.0],
        2000,
        &replication_seeds(SEED, 30),
    )
    .map_err(|e| e.to_string())?;
    let gaps: Vec<f64> = pts.iter().map(|p| p.gap.mean).collect();
    let ages: Vec<f64> = pts
        .iter()
        .map(|p| RoundModel::new(p.cfg).unwrap().expected_age().unwrap() / p.cfg.deadline)
        .collect();
    let down = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    Ok((
        down(&gaps) && down(&ages),
        format!(
            "gaps {}; E[age]/T {ages:.4?}",
            gaps.iter()
                .map(|g| format!("{g:.3e}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    ))
}

fn c7_hyperopt() -> Outcome {
    let w = CostWeights::new(20.0, 100.0).unwrap();
    let search = SearchBounds::default();
    let found = minimize_j(50, 1.0, &w, &search).map_err(|e| e.to_string())?;
    let points = 1_000_000;
    let (scan_x, _) = (0..points)
        .into_par_iter()
        .map(|i| {
            let x = search.lo + (search.hi - search.lo) * i as f64 / (points - 1) as f64;
            (x, objective_j(x, 50, 1.0, &w).unwrap().j_value)
        })
        .reduce(
            || (f64::NAN, f64::INFINITY),
            |a, b| if b.1 < a.1 { b } else { a },
        );
    let mut worst = 0.0f64;
    for i in 0..20 {
        let x = 0.1 + 0.5 * i as f64;
        let [cw, cb, age] = oracle_metrics(50, 1, x);
        let sum = 20.0 * cw + 100.0 * cb + age;
        let j = objective_j(x, 50, 1.0, &w).unwrap().j_value;
        worst = worst.max((j - sum).abs() / sum);
    }
    let err = (found.x_star - scan_x).abs();
    Ok((
        err <= 1e-3 && worst <= 1e-10,
        format!(
            "x* {:.6}; scan {scan_x:.6}; |diff| {err:.1e}; identity {worst:.1e}",
            found.x_star
        ),
    ))
}

fn c8_equivalences() -> Outcome {
    let spec = standard_problem(SEED).map_err(|e| e.to_string())?;
    let opts = TrainingOptions::new(LearningRate::Fixed(0.05));
    // every client answers within T = 50 with probability 1 - e^-50
    let cfg = SystemConfig::new(100, 1, 50.0, 1.0).unwrap();
    let mut awu_same = true;
    let mut agu_same = true;
    let mut failed = 0;
    for s in replication_seeds(SEED, 10) {
        let run = |k| run_training(&spec, &cfg, k, 300, s, &opts).unwrap();
        let mcu = run(SchemeKind::Mcu);
        failed += mcu.failed_rounds();
        awu_same &= mcu == run(SchemeKind::Awu(AgeWeighting::default()));
        agu_same &= mcu == run(SchemeKind::Agu);
    }
    Ok((
        awu_same && agu_same && failed == 0,
        format!("awu==mcu {awu_same}; agu==mcu {agu_same}; failed rounds {failed}"),
    ))
}

fn c9_biased() -> Outcome {
    let params = PartitionParams {
        biased_fraction: 0.3,
        ..standard_params()
    };
    let c = biased_comparison(
        &params,
        SEED,
        &standard_cfg(),
        2000,
        &replication_seeds(SEED, 30),
        AgeWeighting::default(),
    )
    .map_err(|e| e.to_string())?;
    let sep = c.baseline.mean - 2.0 * c.baseline.se - (c.candidate.mean + 2.0 * c.candidate.se);
    Ok((
        sep > 0.0 && c.candidate_wins(),
        format!(
            "mcu {:.4e} se {:.1e}; awu {:.4e} se {:.1e}",
            c.baseline.mean, c.baseline.se, c.candidate.mean, c.candidate.se
        ),
    ))
}

fn c10_agu() -> Outcome {
    let spec = build_problem(PartitionKind::NoniidClasses, &transient_params(), SEED)
        .map_err(|e| e.to_string())?;
    let m = quorum_for_success(100, 0.5, 1.0, 0.5).map_err(|e| e.to_string())?;
    let cfg = SystemConfig::new(100, m, 0.5, 1.0).unwrap();
    let success: f64 = pmf(100, 0.5)[m as usize..].iter().sum();
    let c = agu_comparison(&spec, &cfg, 0.002, 2000, &replication_seeds(SEED, 30))
        .map_err(|e| e.to_string())?;
    let sep = c.baseline.mean - 2.0 * c.baseline.se - (c.candidate.mean + 2.0 * c.candidate.se);
    Ok((
        sep > 0.0 && (success - 0.5).abs() < 0.05,
        format!(
            "M {m}; success {success:.3}; mcu {:.4e} se {:.1e}; agu {:.4e} se {:.1e}",
            c.baseline.mean, c.baseline.se, c.candidate.mean, c.candidate.se
        ),
    ))
}

fn c11_determinism() -> Outcome {
    let opts = ValidateOptions {
        seed: SEED,
        scale: Scale::Full,
        mutate_wastage: false,
    };
    let a = validate_all(&opts).to_csv();
    let b = validate_all(&opts).to_csv();
    Ok((
        a == b && !a.is_empty(),
        format!("{} bytes; identical {}", a.len(), a == b),
    ))
}

fn report(id: &str, name: &str, outcome: Outcome, started: Instant) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!(
        "{id} {name}: {} ({detail}; {secs:.1}s)",
        if passed { "PASS" } else { "FAIL" }
    );
    passed
}

fn main() -> ExitCode {
    let mut all = true;
    let t = Instant::now();
    all &= report("C1", "closed forms vs Monte Carlo", c1_closed_forms(), t);
    let t = Instant::now();
    all &= report("C2", "argmin over M is 1", c2_single_learner_argmins(), t);
    let t = Instant::now();
    all &= report("C3", "g(M) peak", c3_g_peak(), t);
    let t = Instant::now();
    match c4_c5_bound() {
        Ok((c4, c5)) => {
            all &= report("C4", "convergence bound holds", c4, t);
            all &= report("C5", "1/t decay", c5, t);
        }
        Err(e) => {
            all &= report("C4", "convergence bound holds", Err(e.clone()), t);
            all &= report("C5", "1/t decay", Err(e), t);
        }
    }
    let t = Instant::now();
    all &= report("C6", "age and gap co-monotone in T", c6_age_link(), t);
    let t = Instant::now();
    all &= report("C7", "hyperopt correctness", c7_hyperopt(), t);
    let t = Instant::now();
    all &= report("C8", "scheme equivalences", c8_equivalences(), t);
    let t = Instant::now();
    all &= report("C9", "AWU beats MCU on biased clients", c9_biased(), t);
    let t = Instant::now();
    all &= report("C10", "AGU beats MCU near 50% success", c10_agu(), t);
    let t = Instant::now();
    all &= report("C11", "validate is deterministic", c11_determinism(), t);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
