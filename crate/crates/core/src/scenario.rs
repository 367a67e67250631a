//! Batch experiment configs and their CSV reports.
//!
//! A scenario is a small TOML file:
//!
//! ```toml
//! kind = "t_sweep"
//! seed = 7
//! rounds = 2000
//! replications = 30
//!
//! [system]
//! n_clients = 100
//! min_learners = 1
//! deadline = 0.5
//! rate = 1.0
//!
//! [problem]
//! partition = "noniid_classes"
//! noise_std = 0.5
//!
//! [sweep]
//! deadlines = [0.2, 0.5, 1.0]
//! ```
//!
//! Unknown keys are rejected and every error carries the line it refers to.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::{RoundModel, SystemConfig};
use crate::engine::{
    run_training_replications, AgeWeighting, LearningRate, SchemeKind, StepIndex, TrainingOptions,
};
use crate::error::{Error, Result};
use crate::experiments::{bound_schedule, build_problem, final_gaps, replication_seeds, Estimate};
use crate::hyperopt::{j_curve, recommend_deadline_with, CostWeights, SearchBounds};
use crate::partition::{PartitionKind, PartitionParams};
use crate::problem::ProblemSpec;
use crate::sim::{run_timing_replications, SimOptions, TimingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    MetricSweep,
    MSweep,
    TSweep,
    BiasedAwu,
    AguCompare,
    HyperoptRun,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::MetricSweep => "metric_sweep",
            ScenarioKind::MSweep => "m_sweep",
            ScenarioKind::TSweep => "t_sweep",
            ScenarioKind::BiasedAwu => "biased_awu",
            ScenarioKind::AguCompare => "agu_compare",
            ScenarioKind::HyperoptRun => "hyperopt_run",
        }
    }
}

/// Problem generator settings; the client count comes from `[system]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    pub partition: PartitionKind,
    pub dim: usize,
    pub mu: f64,
    pub smoothness: f64,
    pub heterogeneity: f64,
    pub noise_std: f64,
    pub clusters: usize,
    pub biased_fraction: f64,
    pub biased_offset: f64,
    pub shift: f64,
}

impl Default for ProblemSection {
    fn default() -> Self {
        let p = PartitionParams::default();
        Self {
            partition: PartitionKind::NoniidClasses,
            dim: p.dim,
            mu: p.mu,
            smoothness: p.smoothness,
            heterogeneity: p.heterogeneity,
            noise_std: p.noise_std,
            clusters: p.clusters,
            biased_fraction: p.biased_fraction,
            biased_offset: p.biased_offset,
            shift: p.shift,
        }
    }
}

impl ProblemSection {
    pub fn params(&self, n_clients: u32) -> PartitionParams {
        PartitionParams {
            n_clients: n_clients as usize,
            dim: self.dim,
            mu: self.mu,
            smoothness: self.smoothness,
            heterogeneity: self.heterogeneity,
            noise_std: self.noise_std,
            clusters: self.clusters,
            biased_fraction: self.biased_fraction,
            biased_offset: self.biased_offset,
            shift: self.shift,
        }
    }
}

/// Swept values; an empty list means "the single value from `[system]`".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub deadlines: Vec<f64>,
    pub min_learners: Vec<u32>,
    pub biased_fractions: Vec<f64>,
    /// Fixed step size; the decaying bound schedule is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    pub step_index: StepIndex,
    pub timing: TimingMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_exponent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperoptSection {
    pub alpha_w: f64,
    pub alpha_b: f64,
    pub lo: f64,
    pub hi: f64,
    pub tolerance: f64,
    pub grid_points: usize,
    /// Number of log-spaced `J(x)` samples to emit alongside the optimum.
    pub curve_points: usize,
}

impl Default for HyperoptSection {
    fn default() -> Self {
        let s = SearchBounds::default();
        Self {
            alpha_w: 20.0,
            alpha_b: 100.0,
            lo: s.lo,
            hi: s.hi,
            tolerance: s.tolerance,
            grid_points: s.grid_points,
            curve_points: 0,
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_rounds() -> u64 {
    2000
}

fn default_replications() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_rounds")]
    pub rounds: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub system: SystemConfig,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub hyperopt: HyperoptSection,
}

/// 1-based line of `section.key` in `source`, falling back to the section
/// header, then to line 1.
pub fn locate_key(source: &str, section: Option<&str>, key: &str) -> usize {
    let mut current: Option<String> = None;
    let mut header_line = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.trim_end_matches(']').trim().to_string();
            if section == Some(name.as_str()) {
                header_line = Some(i + 1);
            }
            current = Some(name);
            continue;
        }
        if current.as_deref() == section {
            let lhs = line.split('=').next().unwrap_or("").trim();
            if lhs == key {
                return i + 1;
            }
        }
    }
    header_line.unwrap_or(1)
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

impl ScenarioConfig {
    /// Parses and validates a scenario, reporting the offending line.
    pub fn parse(source: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(source).map_err(|e| Error::Parse {
            line: e
                .span()
                .map(|s| line_of_offset(source, s.start))
                .unwrap_or(1),
            message: e.message().trim().to_string(),
        })?;
        cfg.validate()
            .map_err(|(section, key, message)| Error::Parse {
                line: locate_key(source, section, key),
                message,
            })?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Semantic checks; errors name the section and key at fault.
    fn validate(&self) -> std::result::Result<(), (Option<&'static str>, &'static str, String)> {
        let sys = Some("system");
        let sweep = Some("sweep");
        let msg = |e: Error| e.to_string();
        self.system.validate().map_err(|e| {
            let key = if self.system.n_clients == 0 {
                "n_clients"
            } else if self.system.min_learners == 0
                || self.system.min_learners > self.system.n_clients
            {
                "min_learners"
            } else if !(self.system.deadline.is_finite() && self.system.deadline > 0.0) {
                "deadline"
            } else {
                "rate"
            };
            (sys, key, msg(e))
        })?;
        if self.replications == 0 {
            return Err((
                None,
                "replications",
                "replications must be at least 1".into(),
            ));
        }
        if self.rounds == 0 {
            return Err((None, "rounds", "rounds must be at least 1".into()));
        }
        self.problem
            .params(self.system.n_clients)
            .validate()
            .map_err(|e| {
                let text = e.to_string();
                let key = [
                    "dim",
                    "mu",
                    "smoothness",
                    "heterogeneity",
                    "noise_std",
                    "clusters",
                    "biased_fraction",
                    "biased_offset",
                    "shift",
                ]
                .into_iter()
                .find(|k| text.contains(&format!("{k} ")))
                .unwrap_or("partition");
                (Some("problem"), key, text)
            })?;
        for &t in &self.sweep.deadlines {
            if !(t.is_finite() && t > 0.0) {
                return Err((sweep, "deadlines", format!("deadline {t} must be positive")));
            }
        }
        for &m in &self.sweep.min_learners {
            if m == 0 || m > self.system.n_clients {
                return Err((
                    sweep,
                    "min_learners",
                    format!(
                        "min_learners {m} must lie in [1, {}]",
                        self.system.n_clients
                    ),
                ));
            }
        }
        for &f in &self.sweep.biased_fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err((
                    sweep,
                    "biased_fractions",
                    format!("biased fraction {f} outside [0, 1]"),
                ));
            }
        }
        if let Some(eta) = self.sweep.learning_rate {
            if !(eta.is_finite() && eta > 0.0) {
                return Err((
                    sweep,
                    "learning_rate",
                    format!("learning rate {eta} must be positive"),
                ));
            }
        }
        self.weighting()
            .validate()
            .map_err(|e| (sweep, "weight_cap", msg(e)))?;
        match self.kind {
            ScenarioKind::BiasedAwu => {
                if self.system.min_learners != 1 {
                    return Err((
                        sys,
                        "min_learners",
                        "biased_awu requires min_learners = 1".into(),
                    ));
                }
            }
            ScenarioKind::AguCompare => {
                if self.sweep.learning_rate.is_none() {
                    return Err((
                        None,
                        "kind",
                        "agu_compare requires a fixed [sweep] learning_rate".into(),
                    ));
                }
            }
            ScenarioKind::HyperoptRun => {
                let h = Some("hyperopt");
                CostWeights::new(self.hyperopt.alpha_w, self.hyperopt.alpha_b).map_err(|e| {
                    (
                        h,
                        if self.hyperopt.alpha_w >= 0.0 {
                            "alpha_b"
                        } else {
                            "alpha_w"
                        },
                        msg(e),
                    )
                })?;
                self.search().validate().map_err(|e| (h, "lo", msg(e)))?;
            }
            _ => {}
        }
        Ok(())
    }

    fn weighting(&self) -> AgeWeighting {
        let d = AgeWeighting::default();
        AgeWeighting {
            cap: self.sweep.weight_cap.unwrap_or(d.cap),
            exponent: self.sweep.weight_exponent.unwrap_or(d.exponent),
        }
    }

    fn search(&self) -> SearchBounds {
        SearchBounds {
            lo: self.hyperopt.lo,
            hi: self.hyperopt.hi,
            tolerance: self.hyperopt.tolerance,
            grid_points: self.hyperopt.grid_points,
        }
    }

    /// SHA-256 of the resolved config in canonical TOML form.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("scenario config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn deadlines(&self) -> Vec<f64> {
        if self.sweep.deadlines.is_empty() {
            vec![self.system.deadline]
        } else {
            self.sweep.deadlines.clone()
        }
    }

    fn quorums(&self) -> Vec<u32> {
        if self.sweep.min_learners.is_empty() {
            vec![self.system.min_learners]
        } else {
            self.sweep.min_learners.clone()
        }
    }

    fn training_options(&self, cfg: &SystemConfig, spec: &ProblemSpec) -> Result<TrainingOptions> {
        let mut opts = match self.sweep.learning_rate {
            Some(eta) => TrainingOptions::new(LearningRate::Fixed(eta)),
            None => bound_schedule(cfg, spec)?,
        };
        opts.step_index = self.sweep.step_index;
        opts.timing = self.sweep.timing;
        Ok(opts)
    }
}

/// One CSV line of a scenario report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: &'static str,
    /// Parameter point as `key=value` pairs joined by `;`.
    pub point: String,
    pub metric: &'static str,
    pub value: f64,
    /// Present for every stochastic metric.
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
}

impl ScenarioReport {
    pub const CSV_HEADER: &'static str = "scenario,point,metric,value,std_error,config_hash";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let se = r.std_error.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.scenario, r.point, r.metric, r.value, se, self.config_hash
            );
        }
        out
    }

    pub fn find(&self, point: &str, metric: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.point == point && r.metric == metric)
    }
}

fn point(cfg: &SystemConfig) -> String {
    format!(
        "N={};M={};T={};lambda={}",
        cfg.n_clients, cfg.min_learners, cfg.deadline, cfg.rate
    )
}

struct Rows {
    scenario: &'static str,
    rows: Vec<ReportRow>,
}

impl Rows {
    fn exact(&mut self, point: &str, metric: &'static str, value: f64) {
        self.rows.push(ReportRow {
            scenario: self.scenario,
            point: point.to_string(),
            metric,
            value,
            std_error: None,
        });
    }

    fn estimate(&mut self, point: &str, metric: &'static str, e: Estimate) {
        self.rows.push(ReportRow {
            scenario: self.scenario,
            point: point.to_string(),
            metric,
            value: e.mean,
            std_error: Some(e.se),
        });
    }

    /// Closed-form metrics; divergent ones are reported as infinite.
    fn closed_forms(&mut self, cfg: &SystemConfig) -> Result<()> {
        let m = RoundModel::new(*cfg)?;
        let p = point(cfg);
        let or_inf = |r: Result<f64>| r.unwrap_or(f64::INFINITY);
        let age = or_inf(m.expected_age());
        self.exact(&p, "success_prob", m.success_prob());
        self.exact(
            &p,
            "resource_wastage",
            or_inf(m.expected_resource_wastage()),
        );
        self.exact(&p, "comm_cost", or_inf(m.expected_comm_cost()));
        self.exact(&p, "age", age);
        self.exact(&p, "normalized_age", age / cfg.deadline);
        self.exact(&p, "s_tilde", m.s_tilde());
        self.exact(&p, "g_of_m", m.g_of_m());
        Ok(())
    }
}

/// Runs a scenario; the report depends only on the config.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    let mut out = Rows {
        scenario: cfg.kind.name(),
        rows: Vec::new(),
    };
    let seeds = replication_seeds(cfg.seed, cfg.replications);
    let params = cfg.problem.params(cfg.system.n_clients);
    let grid: Vec<SystemConfig> = cfg
        .quorums()
        .into_iter()
        .flat_map(|m| cfg.deadlines().into_iter().map(move |t| (m, t)))
        .map(|(m, t)| cfg.system.with_min_learners(m).with_deadline(t))
        .collect();

    match cfg.kind {
        ScenarioKind::MetricSweep => {
            let opts = SimOptions {
                mode: cfg.sweep.timing,
                ..SimOptions::default()
            };
            let reports: Vec<_> = grid
                .par_iter()
                .map(|c| run_timing_replications(c, cfg.rounds, &seeds, &opts))
                .collect::<Result<_>>()?;
            for (c, reps) in grid.iter().zip(reports) {
                out.closed_forms(c)?;
                let p = point(c);
                let combine = |f: &dyn Fn(&crate::sim::TimingReport) -> (f64, f64)| {
                    if reps.len() == 1 {
                        let (mean, se) = f(&reps[0]);
                        Estimate { mean, se, count: 1 }
                    } else {
                        Estimate::of(reps.iter().map(|r| f(r).0))
                    }
                };
                out.estimate(
                    &p,
                    "mc_resource_wastage",
                    combine(&|r| (r.mean_cw, r.se_cw)),
                );
                out.estimate(&p, "mc_comm_cost", combine(&|r| (r.mean_k, r.se_k)));
                out.estimate(&p, "mc_age", combine(&|r| (r.mean_age, r.se_age)));
            }
        }
        ScenarioKind::MSweep | ScenarioKind::TSweep => {
            let spec = build_problem(cfg.problem.partition, &params, cfg.seed)?;
            for c in &grid {
                out.closed_forms(c)?;
                let opts = cfg.training_options(c, &spec)?;
                let tr = run_training_replications(
                    &spec,
                    c,
                    SchemeKind::Mcu,
                    cfg.rounds,
                    &seeds,
                    &opts,
                )?;
                out.estimate(&point(c), "final_gap", final_gaps(&tr));
            }
        }
        ScenarioKind::BiasedAwu => {
            let fractions = if cfg.sweep.biased_fractions.is_empty() {
                vec![params.biased_fraction]
            } else {
                cfg.sweep.biased_fractions.clone()
            };
            for c in &grid {
                for &f in &fractions {
                    let spec = build_problem(
                        PartitionKind::Biased,
                        &PartitionParams {
                            biased_fraction: f,
                            ..params
                        },
                        cfg.seed,
                    )?;
                    let opts = cfg.training_options(c, &spec)?;
                    let mcu = run_training_replications(
                        &spec,
                        c,
                        SchemeKind::Mcu,
                        cfg.rounds,
                        &seeds,
                        &opts,
                    )?;
                    let awu = run_training_replications(
                        &spec,
                        c,
                        SchemeKind::Awu(cfg.weighting()),
                        cfg.rounds,
                        &seeds,
                        &opts,
                    )?;
                    let p = format!("{};biased_fraction={f}", point(c));
                    out.estimate(&p, "mcu_final_gap", final_gaps(&mcu));
                    out.estimate(&p, "awu_final_gap", final_gaps(&awu));
                }
            }
        }
        ScenarioKind::AguCompare => {
            let spec = build_problem(cfg.problem.partition, &params, cfg.seed)?;
            for c in &grid {
                let opts = cfg.training_options(c, &spec)?;
                let mcu = run_training_replications(
                    &spec,
                    c,
                    SchemeKind::Mcu,
                    cfg.rounds,
                    &seeds,
                    &opts,
                )?;
                let agu = run_training_replications(
                    &spec,
                    c,
                    SchemeKind::Agu,
                    cfg.rounds,
                    &seeds,
                    &opts,
                )?;
                let p = point(c);
                out.exact(&p, "success_prob", RoundModel::new(*c)?.success_prob());
                out.estimate(&p, "mcu_final_gap", final_gaps(&mcu));
                out.estimate(&p, "agu_final_gap", final_gaps(&agu));
            }
        }
        ScenarioKind::HyperoptRun => {
            let weights = CostWeights::new(cfg.hyperopt.alpha_w, cfg.hyperopt.alpha_b)?;
            let search = cfg.search();
            let n = cfg.system.n_clients;
            let rate = cfg.system.rate;
            let rec = recommend_deadline_with(n, rate, &weights, &search)?;
            let p = format!(
                "N={n};lambda={rate};alpha_w={};alpha_b={}",
                weights.alpha_w, weights.alpha_b
            );
            out.exact(&p, "x_star", rec.x_star);
            out.exact(&p, "t_star", rec.t_star);
            out.exact(&p, "j_star", rec.at_optimum.j_value);
            out.exact(&p, "wastage_term", rec.at_optimum.wastage);
            out.exact(&p, "comm_term", rec.at_optimum.comm);
            out.exact(&p, "age_term", rec.at_optimum.age);
            if cfg.hyperopt.curve_points >= 3 {
                let xs = SearchBounds {
                    grid_points: cfg.hyperopt.curve_points,
                    ..search
                }
                .grid();
                for e in j_curve(n, rate, &weights, &xs)? {
                    out.exact(&format!("{p};x={}", e.x), "j", e.j_value);
                }
            }
        }
    }

    Ok(ScenarioReport {
        config_hash: cfg.hash(),
        rows: out.rows,
    })
}
