//! Monte Carlo simulation of the round/timing process (no learning).
//!
//! Each round every client responds before the deadline independently with
//! probability `p`. A round with fewer than `min_learners` responders fails
//! and is restarted; every round lasts exactly one deadline. The simulator
//! tracks per-client age, discarded client time, and the number of rounds
//! needed per successful update.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::SystemConfig;
use crate::error::{Error, Result};
use crate::numeric::RunningStats;
use crate::rng::{client_streams, StreamPurpose, StreamRng};

/// Responders and success flag of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// Ids of clients that responded by the deadline, ascending.
    pub responders: Vec<usize>,
    pub success: bool,
    pub duration: f64,
}

impl RoundOutcome {
    pub fn empty(duration: f64) -> Self {
        Self {
            responders: Vec::new(),
            success: false,
            duration,
        }
    }
}

/// How a client's response event is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    /// Bernoulli(p) thinning; only the event `X_k <= T` matters.
    #[default]
    Bernoulli,
    /// Draw `X_k ~ Exp(rate)` and compare against the deadline.
    Exponential,
}

enum Draw {
    Bernoulli(Bernoulli),
    Exponential(Exp<f64>),
}

/// Draws rounds from one timing stream per client.
pub struct RoundSampler {
    cfg: SystemConfig,
    draw: Draw,
    streams: Vec<StreamRng>,
    forced: Vec<bool>,
}

impl RoundSampler {
    pub fn new(cfg: SystemConfig, seed: u64, mode: TimingMode) -> Result<Self> {
        cfg.validate()?;
        let draw = match mode {
            TimingMode::Bernoulli => Draw::Bernoulli(
                Bernoulli::new(cfg.response_prob())
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?,
            ),
            TimingMode::Exponential => Draw::Exponential(
                Exp::new(cfg.rate).map_err(|e| Error::InvalidConfig(e.to_string()))?,
            ),
        };
        let n = cfg.n_clients as usize;
        Ok(Self {
            cfg,
            draw,
            streams: client_streams(seed, StreamPurpose::Timing, n),
            forced: vec![false; n],
        })
    }

    /// Marks clients that respond in every round regardless of their draw.
    /// Their streams are still advanced so other clients are unaffected.
    pub fn with_always_responding(mut self, forced: &[bool]) -> Result<Self> {
        if forced.len() != self.forced.len() {
            return Err(Error::InvalidConfig(format!(
                "always-responding mask has {} entries for {} clients",
                forced.len(),
                self.forced.len()
            )));
        }
        self.forced = forced.to_vec();
        Ok(self)
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn draw(&mut self) -> RoundOutcome {
        let mut out = RoundOutcome::empty(self.cfg.deadline);
        self.draw_into(&mut out);
        out
    }

    /// Reuses `out`'s allocation.
    pub fn draw_into(&mut self, out: &mut RoundOutcome) {
        out.responders.clear();
        let deadline = self.cfg.deadline;
        for (k, rng) in self.streams.iter_mut().enumerate() {
            let responded = match &self.draw {
                Draw::Bernoulli(b) => b.sample(rng),
                Draw::Exponential(e) => e.sample(rng) <= deadline,
            };
            if responded || self.forced[k] {
                out.responders.push(k);
            }
        }
        out.success = out.responders.len() >= self.cfg.min_learners as usize;
        out.duration = deadline;
    }
}

/// Draws one round by Bernoulli thinning from caller-owned per-client streams.
pub fn draw_round<R: Rng>(cfg: &SystemConfig, streams: &mut [R]) -> RoundOutcome {
    let p = cfg.response_prob();
    let responders: Vec<usize> = streams
        .iter_mut()
        .take(cfg.n_clients as usize)
        .enumerate()
        .filter_map(|(k, rng)| rng.random_bool(p).then_some(k))
        .collect();
    RoundOutcome {
        success: responders.len() >= cfg.min_learners as usize,
        responders,
        duration: cfg.deadline,
    }
}

/// Per-client age at the server.
///
/// Ages are stored as whole rounds since the client's last contribution
/// (counting the round that delivered it), so every age is an exact
/// multiple of the deadline and the area under the sawtooth is an integer
/// multiple of `T^2 / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeLedger {
    deadline: f64,
    rounds_since: Vec<u64>,
    area_units: Vec<u64>,
    rounds: u64,
}

impl AgeLedger {
    /// Every client starts at age `T`, as if a successful round had just
    /// completed with everyone in it.
    pub fn new(n_clients: usize, deadline: f64) -> Self {
        Self {
            deadline,
            rounds_since: vec![1; n_clients],
            area_units: vec![0; n_clients],
            rounds: 0,
        }
    }

    pub fn n_clients(&self) -> usize {
        self.rounds_since.len()
    }

    pub fn age(&self, k: usize) -> f64 {
        self.rounds_since[k] as f64 * self.deadline
    }

    pub fn ages(&self) -> Vec<f64> {
        (0..self.n_clients()).map(|k| self.age(k)).collect()
    }

    /// Age in whole deadlines.
    pub fn age_rounds(&self, k: usize) -> u64 {
        self.rounds_since[k]
    }

    /// Age client `k` reaches at the end of the current round, before any
    /// reset; this is the staleness of the gradient it delivers this round.
    pub fn pending_age(&self, k: usize) -> f64 {
        (self.rounds_since[k] + 1) as f64 * self.deadline
    }

    pub fn area(&self, k: usize) -> f64 {
        self.area_units[k] as f64 * self.deadline * self.deadline / 2.0
    }

    pub fn elapsed(&self) -> f64 {
        self.rounds as f64 * self.deadline
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Time-averaged age of client `k`; `NaN` before any round.
    pub fn time_average(&self, k: usize) -> f64 {
        self.area_units[k] as f64 * self.deadline / (2.0 * self.rounds as f64)
    }

    fn total_area_units(&self) -> u64 {
        self.area_units.iter().sum()
    }

    pub fn advance(&mut self, outcome: &RoundOutcome) {
        for (since, area) in self.rounds_since.iter_mut().zip(self.area_units.iter_mut()) {
            *area += 2 * *since + 1;
            *since += 1;
        }
        self.rounds += 1;
        if outcome.success {
            for &k in &outcome.responders {
                self.rounds_since[k] = 1;
            }
        }
    }

    fn clear_area(&mut self) {
        self.area_units.iter_mut().for_each(|a| *a = 0);
        self.rounds = 0;
    }
}

pub fn advance_age(mut ledger: AgeLedger, outcome: &RoundOutcome) -> AgeLedger {
    ledger.advance(outcome);
    ledger
}

/// Running cost counters. A success cycle is the run of rounds up to and
/// including a successful one.
#[derive(Debug, Clone, Default)]
pub struct CostAccumulator {
    /// Discarded client-rounds; wasted time is this times the deadline.
    wasted_client_rounds: u64,
    pub rounds_total: u64,
    pub rounds_failed: u64,
    pub success_cycles: u64,
    cycle_wasted: u64,
    cycle_rounds: u64,
    per_cycle_wastage: RunningStats,
    per_cycle_rounds: RunningStats,
}

impl CostAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, n_clients: usize, deadline: f64, outcome: &RoundOutcome) {
        let wasted = if outcome.success {
            (n_clients - outcome.responders.len()) as u64
        } else {
            n_clients as u64
        };
        self.wasted_client_rounds += wasted;
        self.cycle_wasted += wasted;
        self.cycle_rounds += 1;
        self.rounds_total += 1;
        if outcome.success {
            self.success_cycles += 1;
            self.per_cycle_wastage
                .push(self.cycle_wasted as f64 * deadline);
            self.per_cycle_rounds.push(self.cycle_rounds as f64);
            self.cycle_wasted = 0;
            self.cycle_rounds = 0;
        } else {
            self.rounds_failed += 1;
        }
    }

    pub fn wasted_time(&self, deadline: f64) -> f64 {
        self.wasted_client_rounds as f64 * deadline
    }

    pub fn cycle_wastage(&self) -> &RunningStats {
        &self.per_cycle_wastage
    }

    pub fn cycle_rounds(&self) -> &RunningStats {
        &self.per_cycle_rounds
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub mode: TimingMode,
    /// Rounds simulated before any statistic is collected.
    pub warmup_rounds: u64,
    /// Batches for the batch-means standard error of the age.
    pub age_batches: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            mode: TimingMode::Bernoulli,
            warmup_rounds: 0,
            age_batches: 32,
        }
    }
}

/// Point estimates with standard errors from one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub cfg: SystemConfig,
    pub seed: u64,
    pub rounds: u64,
    /// Discarded client time per success cycle.
    pub mean_cw: f64,
    pub se_cw: f64,
    /// Rounds per success cycle.
    pub mean_k: f64,
    pub se_k: f64,
    /// Time-averaged age, averaged over clients.
    pub mean_age: f64,
    pub se_age: f64,
    pub per_client_age: Vec<f64>,
    pub failure_freq: f64,
    pub success_cycles: u64,
}

impl TimingReport {
    pub const CSV_HEADER: &'static str =
        "N,M,T,lambda,seed,rounds,mean_cw,se_cw,mean_k,se_k,mean_age,se_age";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.cfg.n_clients,
            self.cfg.min_learners,
            self.cfg.deadline,
            self.cfg.rate,
            self.seed,
            self.rounds,
            self.mean_cw,
            self.se_cw,
            self.mean_k,
            self.se_k,
            self.mean_age,
            self.se_age
        )
    }
}

pub fn run_timing_sim(cfg: &SystemConfig, n_rounds: u64, seed: u64) -> Result<TimingReport> {
    run_timing_sim_with(cfg, n_rounds, seed, &SimOptions::default())
}

pub fn run_timing_sim_with(
    cfg: &SystemConfig,
    n_rounds: u64,
    seed: u64,
    opts: &SimOptions,
) -> Result<TimingReport> {
    if n_rounds == 0 {
        return Err(Error::InvalidConfig("n_rounds must be at least 1".into()));
    }
    let n = cfg.n_clients as usize;
    let t = cfg.deadline;
    let mut sampler = RoundSampler::new(*cfg, seed, opts.mode)?;
    let mut ledger = AgeLedger::new(n, t);
    let mut outcome = RoundOutcome::empty(t);

    for _ in 0..opts.warmup_rounds {
        sampler.draw_into(&mut outcome);
        ledger.advance(&outcome);
    }
    ledger.clear_area();
    // after warm-up, cycles are counted from the first success onward
    let mut in_cycle = opts.warmup_rounds == 0;

    let mut costs = CostAccumulator::new();
    let batches = opts.age_batches.clamp(1, n_rounds);
    let mut batch_means = RunningStats::new();
    let mut batch_start_units = 0u64;
    let mut next_batch = 1u64;
    let mut batch_first_round = 0u64;

    for round in 0..n_rounds {
        sampler.draw_into(&mut outcome);
        ledger.advance(&outcome);
        if in_cycle {
            costs.record(n, t, &outcome);
        } else if outcome.success {
            in_cycle = true;
        }
        let done = round + 1;
        if done == next_batch * n_rounds / batches {
            let units = ledger.total_area_units();
            let len = done - batch_first_round;
            batch_means
                .push((units - batch_start_units) as f64 * t / (2.0 * n as f64 * len as f64));
            batch_start_units = units;
            batch_first_round = done;
            next_batch += 1;
        }
    }

    let per_client_age: Vec<f64> = (0..n).map(|k| ledger.time_average(k)).collect();
    let mean_age = ledger.total_area_units() as f64 * t / (2.0 * n as f64 * n_rounds as f64);
    let se_age = if batches >= 2 {
        batch_means.std_error()
    } else {
        f64::NAN
    };

    Ok(TimingReport {
        cfg: *cfg,
        seed,
        rounds: n_rounds,
        mean_cw: costs.cycle_wastage().mean(),
        se_cw: costs.cycle_wastage().std_error(),
        mean_k: costs.cycle_rounds().mean(),
        se_k: costs.cycle_rounds().std_error(),
        mean_age,
        se_age,
        per_client_age,
        failure_freq: costs.rounds_failed as f64 / costs.rounds_total.max(1) as f64,
        success_cycles: costs.success_cycles,
    })
}

/// Independent replications in parallel, returned in seed order.
pub fn run_timing_replications(
    cfg: &SystemConfig,
    n_rounds: u64,
    seeds: &[u64],
    opts: &SimOptions,
) -> Result<Vec<TimingReport>> {
    seeds
        .par_iter()
        .map(|&s| run_timing_sim_with(cfg, n_rounds, s, opts))
        .collect()
}
