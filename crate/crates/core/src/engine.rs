//! Global update schemes and the training loop.
//!
//! * MCU: average the responders' gradients when at least `M` respond,
//!   otherwise discard them.
//! * AWU: with `M = 1`, weight each responder's gradient by a bounded
//!   increasing function of its age.
//! * AGU: responders of failed rounds keep stepping their local copy and
//!   accumulate gradients; the accumulated sums are applied at the next
//!   successful round, after which every local copy is resynchronized.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::SystemConfig;
use crate::error::{Error, Result};
use crate::problem::{sgd_gradient, ProblemSpec};
use crate::rng::{client_streams, StreamPurpose, StreamRng};
use crate::sim::{AgeLedger, RoundOutcome, RoundSampler, TimingMode};

/// Global model and round index `t` (starting at 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub weights: DVector<f64>,
    pub round: u64,
}

impl ModelState {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: DVector::zeros(dim),
            round: 1,
        }
    }
}

/// `Q(x) = min(x, cap)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgeWeighting {
    pub cap: f64,
    pub exponent: f64,
}

impl Default for AgeWeighting {
    fn default() -> Self {
        Self {
            cap: 10.0,
            exponent: 2.0,
        }
    }
}

impl AgeWeighting {
    pub fn validate(&self) -> Result<()> {
        if !(self.cap.is_finite() && self.cap > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight cap must be positive, got {}",
                self.cap
            )));
        }
        if !(self.exponent.is_finite() && self.exponent >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight exponent must be non-negative, got {}",
                self.exponent
            )));
        }
        Ok(())
    }

    pub fn weight(&self, age: f64) -> f64 {
        age.min(self.cap).powf(self.exponent)
    }

    /// Normalized weights `Q(a_k) / sum_j Q(a_j)`.
    pub fn normalized(&self, ages: &[f64]) -> Result<Vec<f64>> {
        let q: Vec<f64> = ages.iter().map(|&a| self.weight(a)).collect();
        let total: f64 = q.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::DegenerateWeights(total));
        }
        Ok(q.into_iter().map(|x| x / total).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchemeKind {
    Mcu,
    Awu(AgeWeighting),
    Agu,
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Mcu => "mcu",
            SchemeKind::Awu(_) => "awu",
            SchemeKind::Agu => "agu",
        }
    }
}

/// `eta_t = beta / (gamma + t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub beta: f64,
    pub gamma: f64,
}

impl LrSchedule {
    pub fn eta(&self, t: u64) -> f64 {
        self.beta / (self.gamma + t as f64)
    }
}

/// `beta = 2 / A`, `gamma = 2L / A + 1`, checked against `eta_1 <= min(1/A, 1/L)`.
pub fn lr_from_bound_params(a: f64, l: f64) -> Result<LrSchedule> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::InvalidBoundConstants(format!(
            "A must be positive and finite, got {a}"
        )));
    }
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::InvalidBoundConstants(format!(
            "L must be positive and finite, got {l}"
        )));
    }
    let schedule = LrSchedule {
        beta: 2.0 / a,
        gamma: 2.0 * l / a + 1.0,
    };
    if !(schedule.beta.is_finite() && schedule.gamma.is_finite()) {
        return Err(Error::InvalidBoundConstants(format!(
            "schedule diverges for A = {a}"
        )));
    }
    let eta1 = schedule.eta(1);
    let limit = (1.0 / a).min(1.0 / l);
    if eta1 > limit * (1.0 + 1e-12) {
        return Err(Error::InvalidBoundConstants(format!(
            "eta_1 = {eta1} exceeds min(1/A, 1/L) = {limit}"
        )));
    }
    Ok(schedule)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Decaying(LrSchedule),
    Fixed(f64),
}

impl LearningRate {
    pub fn eta(&self, t: u64) -> f64 {
        match self {
            LearningRate::Decaying(s) => s.eta(t),
            LearningRate::Fixed(eta) => *eta,
        }
    }
}

/// Which counter indexes the decaying step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepIndex {
    /// `t` advances on every round, failed or not.
    #[default]
    EveryRound,
    /// `t` advances only on successful updates.
    SuccessfulUpdates,
}

/// Per-client accumulated gradient and local model for AGU.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatorBank {
    local: Vec<DVector<f64>>,
    accumulated: Vec<DVector<f64>>,
}

impl AccumulatorBank {
    pub fn new(n_clients: usize, weights: &DVector<f64>) -> Self {
        Self {
            local: vec![weights.clone(); n_clients],
            accumulated: vec![DVector::zeros(weights.len()); n_clients],
        }
    }

    pub fn n_clients(&self) -> usize {
        self.local.len()
    }

    pub fn local_model(&self, k: usize) -> &DVector<f64> {
        &self.local[k]
    }

    pub fn accumulated(&self, k: usize) -> &DVector<f64> {
        &self.accumulated[k]
    }

    fn resync(&mut self, weights: &DVector<f64>) {
        for (local, acc) in self.local.iter_mut().zip(self.accumulated.iter_mut()) {
            local.copy_from(weights);
            acc.fill(0.0);
        }
    }
}

/// `w - eta * sum_k r_k g_k / sum_k r_k`. Every scheme funnels through
/// here so that equal relative weights give bit-identical updates.
fn weighted_descent<'a, I>(weights: &DVector<f64>, eta: f64, terms: I) -> Result<DVector<f64>>
where
    I: IntoIterator<Item = (f64, &'a DVector<f64>)>,
{
    let mut direction = DVector::zeros(weights.len());
    let mut total = 0.0;
    for (r, g) in terms {
        direction.axpy(r, g, 1.0);
        total += r;
    }
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::DegenerateWeights(total));
    }
    let factor = eta / total;
    Ok(weights.zip_map(&direction, |w, d| w - factor * d))
}

fn check_keys(outcome: &RoundOutcome, grads: &BTreeMap<usize, DVector<f64>>) -> Result<()> {
    if grads.is_empty() {
        return Err(Error::ContractViolation(
            "successful round with no gradients".into(),
        ));
    }
    if !grads.keys().copied().eq(outcome.responders.iter().copied()) {
        return Err(Error::ContractViolation(format!(
            "gradients for clients {:?} but responders {:?}",
            grads.keys().collect::<Vec<_>>(),
            outcome.responders
        )));
    }
    Ok(())
}

fn next_state(state: &ModelState, weights: DVector<f64>) -> ModelState {
    ModelState {
        weights,
        round: state.round + 1,
    }
}

/// `w_{t+1} = w_t - eta/|S| sum_{k in S} g_k` on success; unchanged otherwise.
pub fn mcu_update(
    state: &ModelState,
    outcome: &RoundOutcome,
    grads: &BTreeMap<usize, DVector<f64>>,
    eta: f64,
) -> Result<ModelState> {
    if !outcome.success {
        return Ok(next_state(state, state.weights.clone()));
    }
    check_keys(outcome, grads)?;
    let w = weighted_descent(&state.weights, eta, grads.values().map(|g| (1.0, g)))?;
    Ok(next_state(state, w))
}

/// Age-weighted update. Ages are the ones each responder reaches at the end
/// of this round, before the post-round reset.
pub fn awu_update(
    state: &ModelState,
    outcome: &RoundOutcome,
    grads: &BTreeMap<usize, DVector<f64>>,
    ledger: &AgeLedger,
    eta: f64,
    weighting: &AgeWeighting,
) -> Result<ModelState> {
    if !outcome.success {
        return Ok(next_state(state, state.weights.clone()));
    }
    check_keys(outcome, grads)?;
    let q: Vec<f64> = grads
        .keys()
        .map(|&k| weighting.weight(ledger.pending_age(k)))
        .collect();
    let q_max = q.iter().copied().fold(0.0, f64::max);
    if !(q_max.is_finite() && q_max > 0.0) {
        return Err(Error::DegenerateWeights(q.iter().sum()));
    }
    // relative to the largest so that equal ages give weights of exactly 1
    let w = weighted_descent(
        &state.weights,
        eta,
        q.iter().map(|&x| x / q_max).zip(grads.values()),
    )?;
    Ok(next_state(state, w))
}

/// Aggregated-gradient update. Responders draw a fresh gradient at their
/// local model from their own noise stream.
pub fn agu_update(
    state: &ModelState,
    outcome: &RoundOutcome,
    bank: &mut AccumulatorBank,
    spec: &ProblemSpec,
    eta: f64,
    noise: &mut [StreamRng],
) -> Result<ModelState> {
    let n = spec.n_clients();
    if bank.n_clients() != n || noise.len() != n {
        return Err(Error::ContractViolation(format!(
            "bank has {} clients, noise {} streams, problem {} clients",
            bank.n_clients(),
            noise.len(),
            n
        )));
    }
    for &k in &outcome.responders {
        let g = sgd_gradient(spec, k, &bank.local[k], &mut noise[k]);
        bank.accumulated[k] += &g;
        if !outcome.success {
            bank.local[k].axpy(-eta, &g, 1.0);
        }
    }
    if !outcome.success {
        return Ok(next_state(state, state.weights.clone()));
    }
    let w = weighted_descent(
        &state.weights,
        eta,
        outcome
            .responders
            .iter()
            .map(|&k| (1.0, &bank.accumulated[k])),
    )?;
    bank.resync(&w);
    Ok(next_state(state, w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingOptions {
    pub learning_rate: LearningRate,
    pub step_index: StepIndex,
    pub timing: TimingMode,
}

impl TrainingOptions {
    pub fn new(learning_rate: LearningRate) -> Self {
        Self {
            learning_rate,
            step_index: StepIndex::default(),
            timing: TimingMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    /// Round index; the row describes `w_t` at the start of round `t`.
    pub t: u64,
    pub gap: f64,
    pub sq_dist: f64,
    pub round_success: bool,
    pub num_responders: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub final_weights: DVector<f64>,
    pub final_gap: f64,
}

impl Trajectory {
    pub const CSV_HEADER: &'static str = "t,gap,sq_dist,round_success,num_responders";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.t, r.gap, r.sq_dist, r.round_success as u8, r.num_responders
            ));
        }
        out
    }

    pub fn failed_rounds(&self) -> usize {
        self.rows.iter().filter(|r| !r.round_success).count()
    }

    /// `F(w_t) - F*` for `t = 1..=rounds + 1`.
    pub fn gap_at(&self, t: u64) -> Option<f64> {
        let i = t.checked_sub(1)? as usize;
        match i.cmp(&self.rows.len()) {
            std::cmp::Ordering::Less => Some(self.rows[i].gap),
            std::cmp::Ordering::Equal => Some(self.final_gap),
            std::cmp::Ordering::Greater => None,
        }
    }
}

/// Drives `n_rounds` rounds of the given scheme from `w_1 = 0`.
///
/// Responders compute a gradient in every round, including failed ones, so
/// noise streams advance identically across schemes.
pub fn run_training(
    spec: &ProblemSpec,
    cfg: &SystemConfig,
    scheme: SchemeKind,
    n_rounds: u64,
    seed: u64,
    opts: &TrainingOptions,
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = spec.n_clients();
    if n != cfg.n_clients as usize {
        return Err(Error::InvalidConfig(format!(
            "problem has {n} clients but system has {}",
            cfg.n_clients
        )));
    }
    match (scheme, opts.learning_rate) {
        (SchemeKind::Awu(w), _) => {
            w.validate()?;
            if cfg.min_learners != 1 {
                return Err(Error::InvalidConfig(
                    "age-weighted update requires min_learners = 1".into(),
                ));
            }
        }
        (SchemeKind::Agu, LearningRate::Decaying(_)) => {
            return Err(Error::InvalidConfig(
                "aggregated-gradient update requires a fixed learning rate".into(),
            ));
        }
        _ => {}
    }
    if let LearningRate::Fixed(eta) = opts.learning_rate {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {eta}"
            )));
        }
    }

    let mut sampler = RoundSampler::new(*cfg, seed, opts.timing)?
        .with_always_responding(spec.always_responding())?;
    let mut noise = client_streams(seed, StreamPurpose::GradientNoise, n);
    let mut ledger = AgeLedger::new(n, cfg.deadline);
    let mut state = ModelState::zeros(spec.dim());
    let mut bank = match scheme {
        SchemeKind::Agu => Some(AccumulatorBank::new(n, &state.weights)),
        _ => None,
    };
    let mut updates = 0u64;
    let mut rows = Vec::with_capacity(n_rounds as usize);
    let mut outcome = RoundOutcome::empty(cfg.deadline);

    for _ in 0..n_rounds {
        sampler.draw_into(&mut outcome);
        rows.push(TrajectoryRow {
            t: state.round,
            gap: spec.optimality_gap(&state.weights),
            sq_dist: spec.sq_dist(&state.weights),
            round_success: outcome.success,
            num_responders: outcome.responders.len(),
        });
        let index = match opts.step_index {
            StepIndex::EveryRound => state.round,
            StepIndex::SuccessfulUpdates => updates + 1,
        };
        let eta = opts.learning_rate.eta(index);

        state = match (scheme, bank.as_mut()) {
            (SchemeKind::Agu, Some(bank)) => {
                agu_update(&state, &outcome, bank, spec, eta, &mut noise)?
            }
            _ => {
                let grads: BTreeMap<usize, DVector<f64>> = outcome
                    .responders
                    .iter()
                    .map(|&k| (k, sgd_gradient(spec, k, &state.weights, &mut noise[k])))
                    .collect();
                match scheme {
                    SchemeKind::Awu(weighting) => {
                        awu_update(&state, &outcome, &grads, &ledger, eta, &weighting)?
                    }
                    _ => mcu_update(&state, &outcome, &grads, eta)?,
                }
            }
        };
        if !state.weights.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "training diverged at round {}",
                state.round - 1
            )));
        }
        ledger.advance(&outcome);
        if outcome.success {
            updates += 1;
        }
    }

    Ok(Trajectory {
        final_gap: spec.optimality_gap(&state.weights),
        final_weights: state.weights,
        rows,
    })
}

/// Independent training runs in parallel, returned in seed order.
pub fn run_training_replications(
    spec: &ProblemSpec,
    cfg: &SystemConfig,
    scheme: SchemeKind,
    n_rounds: u64,
    seeds: &[u64],
    opts: &TrainingOptions,
) -> Result<Vec<Trajectory>> {
    seeds
        .par_iter()
        .map(|&s| run_training(spec, cfg, scheme, n_rounds, s, opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{random_spd, QuadraticClient};
    use crate::rng::stream;
    use nalgebra::DMatrix;

    fn spec(n: usize, dim: usize, noise: f64, seed: u64) -> ProblemSpec {
        let mut rng = stream(seed, StreamPurpose::Partition, 0);
        let clients = (0..n)
            .map(|k| QuadraticClient {
                hessian: random_spd(dim, 1.0, 3.0, &mut rng),
                center: DVector::from_fn(dim, |i, _| ((k + i) % 5) as f64 - 2.0),
                offset: 0.0,
            })
            .collect();
        ProblemSpec::new(clients, noise).unwrap()
    }

    fn success(responders: Vec<usize>) -> RoundOutcome {
        RoundOutcome {
            responders,
            success: true,
            duration: 1.0,
        }
    }

    fn grads_at(
        spec: &ProblemSpec,
        w: &DVector<f64>,
        ks: &[usize],
    ) -> BTreeMap<usize, DVector<f64>> {
        ks.iter().map(|&k| (k, spec.true_gradient(k, w))).collect()
    }

    #[test]
    fn failed_round_leaves_weights_untouched() {
        let s = spec(3, 2, 0.0, 1);
        let state = ModelState {
            weights: DVector::from_vec(vec![0.1, 0.2]),
            round: 4,
        };
        let fail = RoundOutcome {
            responders: vec![0],
            success: false,
            duration: 1.0,
        };
        let next = mcu_update(&state, &fail, &grads_at(&s, &state.weights, &[0]), 0.3).unwrap();
        assert_eq!(next.weights, state.weights);
        assert_eq!(next.round, 5);
    }

    #[test]
    fn single_responder_is_plain_sgd() {
        let s = spec(3, 2, 0.0, 1);
        let state = ModelState::zeros(2);
        let g = s.true_gradient(2, &state.weights);
        let next = mcu_update(
            &state,
            &success(vec![2]),
            &grads_at(&s, &state.weights, &[2]),
            0.25,
        )
        .unwrap();
        let want = &state.weights - 0.25 * g;
        assert!((next.weights - want).amax() < 1e-15);
    }

    #[test]
    fn full_participation_is_gradient_descent_on_global_objective() {
        let s = spec(4, 3, 0.0, 2);
        let state = ModelState {
            weights: DVector::from_vec(vec![0.5, -0.3, 1.2]),
            round: 1,
        };
        // grad F(w) = Hbar w - mean(H_k c_k)
        let hbar: DMatrix<f64> = s
            .clients()
            .iter()
            .map(|c| c.hessian.clone())
            .sum::<DMatrix<f64>>()
            / 4.0;
        let hc: DVector<f64> = s
            .clients()
            .iter()
            .map(|c| &c.hessian * &c.center)
            .sum::<DVector<f64>>()
            / 4.0;
        let grad = &hbar * &state.weights - hc;
        let want = &state.weights - 0.1 * grad;
        let next = mcu_update(
            &state,
            &success(vec![0, 1, 2, 3]),
            &grads_at(&s, &state.weights, &[0, 1, 2, 3]),
            0.1,
        )
        .unwrap();
        assert!((next.weights - want).amax() < 1e-12);
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let s = spec(3, 2, 0.0, 1);
        let state = ModelState::zeros(2);
        let err = mcu_update(
            &state,
            &success(vec![0, 1]),
            &grads_at(&s, &state.weights, &[0]),
            0.1,
        );
        assert!(matches!(err, Err(Error::ContractViolation(_))));
        let err = mcu_update(&state, &success(vec![0]), &BTreeMap::new(), 0.1);
        assert!(matches!(err, Err(Error::ContractViolation(_))));
    }

    #[test]
    fn age_weights_follow_q() {
        let q = AgeWeighting::default();
        let w = q.normalized(&[2.0, 4.0]).unwrap();
        assert!((w[0] - 4.0 / 20.0).abs() < 1e-15);
        assert!((w[1] - 16.0 / 20.0).abs() < 1e-15);
        let sat = q.normalized(&[12.0, 40.0, 1e6]).unwrap();
        assert!(sat.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!(AgeWeighting {
            cap: 0.0,
            exponent: 2.0
        }
        .validate()
        .is_err());
        assert!(AgeWeighting {
            cap: 1.0,
            exponent: 2.0
        }
        .normalized(&[0.0])
        .is_err());
    }

    #[test]
    fn awu_weights_stale_responders_more() {
        let s = spec(2, 2, 0.0, 3);
        let mut ledger = AgeLedger::new(2, 1.0);
        // client 1 misses a round: pending ages become 2 and 3
        ledger.advance(&success(vec![0]));
        let state = ModelState::zeros(2);
        let grads = grads_at(&s, &state.weights, &[0, 1]);
        let next = awu_update(
            &state,
            &success(vec![0, 1]),
            &grads,
            &ledger,
            0.5,
            &AgeWeighting::default(),
        )
        .unwrap();
        let want = &state.weights
            - 0.5 * (grads[&0].clone() * (4.0 / 13.0) + grads[&1].clone() * (9.0 / 13.0));
        assert!((next.weights - want).amax() < 1e-14);
    }

    #[test]
    fn awu_equal_ages_is_bitwise_mcu() {
        let s = spec(5, 3, 0.0, 4);
        let ledger = AgeLedger::new(5, 0.7);
        let state = ModelState {
            weights: DVector::from_vec(vec![0.3, 0.1, -0.4]),
            round: 3,
        };
        let out = success(vec![0, 2, 3]);
        let grads = grads_at(&s, &state.weights, &out.responders);
        let a = awu_update(&state, &out, &grads, &ledger, 0.3, &AgeWeighting::default()).unwrap();
        let m = mcu_update(&state, &out, &grads, 0.3).unwrap();
        assert_eq!(a, m);
    }

    #[test]
    fn agu_without_failures_matches_mcu() {
        let s = spec(4, 2, 0.0, 5);
        let state = ModelState::zeros(2);
        let mut bank = AccumulatorBank::new(4, &state.weights);
        let mut noise = client_streams(0, StreamPurpose::GradientNoise, 4);
        let out = success(vec![1, 3]);
        let a = agu_update(&state, &out, &mut bank, &s, 0.2, &mut noise).unwrap();
        let m = mcu_update(&state, &out, &grads_at(&s, &state.weights, &[1, 3]), 0.2).unwrap();
        assert_eq!(a, m);
        assert!(bank.accumulated(1).iter().all(|&x| x == 0.0));
        assert_eq!(bank.local_model(0), &a.weights);
    }

    #[test]
    fn agu_accumulates_two_step_local_trajectory() {
        let s = spec(3, 2, 0.0, 6);
        let eta = 0.15;
        let state = ModelState::zeros(2);
        let mut bank = AccumulatorBank::new(3, &state.weights);
        let mut noise = client_streams(0, StreamPurpose::GradientNoise, 3);
        let fail = RoundOutcome {
            responders: vec![0],
            success: false,
            duration: 1.0,
        };
        let s1 = agu_update(&state, &fail, &mut bank, &s, eta, &mut noise).unwrap();
        assert_eq!(s1.weights, state.weights);
        let s2 = agu_update(&s1, &success(vec![0, 2]), &mut bank, &s, eta, &mut noise).unwrap();

        // hand-rolled: client 0 takes one local step then delivers g1 + g2;
        // client 2 only delivers its fresh gradient
        let w = &state.weights;
        let g1 = s.true_gradient(0, w);
        let local = w - eta * &g1;
        let g2 = s.true_gradient(0, &local);
        let fresh = s.true_gradient(2, w);
        let want = w - (eta / 2.0) * (g1 + g2 + fresh);
        assert!((&s2.weights - want).amax() < 1e-14);
        assert_eq!(bank.local_model(0), &s2.weights);
        assert!(bank.accumulated(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn agu_discards_accumulator_of_absent_responder() {
        let s = spec(3, 2, 0.0, 7);
        let state = ModelState::zeros(2);
        let mut bank = AccumulatorBank::new(3, &state.weights);
        let mut noise = client_streams(0, StreamPurpose::GradientNoise, 3);
        let fail = RoundOutcome {
            responders: vec![1],
            success: false,
            duration: 1.0,
        };
        let s1 = agu_update(&state, &fail, &mut bank, &s, 0.1, &mut noise).unwrap();
        let s2 = agu_update(&s1, &success(vec![0]), &mut bank, &s, 0.1, &mut noise).unwrap();
        let want = &state.weights - 0.1 * s.true_gradient(0, &state.weights);
        assert!((s2.weights.clone() - want).amax() < 1e-15);
        assert_eq!(bank.local_model(1), &s2.weights);
        assert!(bank.accumulated(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn agu_rejects_mismatched_bank() {
        let s = spec(3, 2, 0.0, 7);
        let state = ModelState::zeros(2);
        let mut bank = AccumulatorBank::new(2, &state.weights);
        let mut noise = client_streams(0, StreamPurpose::GradientNoise, 3);
        assert!(agu_update(&state, &success(vec![0]), &mut bank, &s, 0.1, &mut noise).is_err());
    }

    #[test]
    fn schedule_from_bound_constants() {
        let s = lr_from_bound_params(1.0, 1.0).unwrap();
        assert_eq!(s.beta, 2.0);
        assert_eq!(s.gamma, 3.0);
        assert_eq!(s.eta(1), 0.5);
        assert!(lr_from_bound_params(0.0, 1.0).is_err());
        assert!(lr_from_bound_params(1e-320, 1.0).is_err());
        assert!(lr_from_bound_params(1.0, -2.0).is_err());
    }

    #[test]
    fn noiseless_single_client_converges() {
        let s = spec(1, 3, 0.0, 8);
        let cfg = SystemConfig::new(1, 1, 100.0, 1.0).unwrap();
        let sched = lr_from_bound_params(s.strong_convexity(), s.smoothness()).unwrap();
        let traj = run_training(
            &s,
            &cfg,
            SchemeKind::Mcu,
            500,
            1,
            &TrainingOptions::new(LearningRate::Decaying(sched)),
        )
        .unwrap();
        assert!(traj.final_gap < 1e-6 * traj.rows[0].gap);
        assert!(traj.rows.windows(2).all(|w| w[1].gap <= w[0].gap));
    }

    #[test]
    fn higher_quorum_fails_more_rounds() {
        let s = spec(100, 3, 0.1, 9);
        let lr = TrainingOptions::new(LearningRate::Fixed(0.05));
        let lo = run_training(
            &s,
            &SystemConfig::new(100, 1, 0.5, 1.0).unwrap(),
            SchemeKind::Mcu,
            300,
            3,
            &lr,
        )
        .unwrap();
        let hi = run_training(
            &s,
            &SystemConfig::new(100, 90, 0.5, 1.0).unwrap(),
            SchemeKind::Mcu,
            300,
            3,
            &lr,
        )
        .unwrap();
        assert!(hi.failed_rounds() > lo.failed_rounds());
    }

    #[test]
    fn training_is_deterministic_and_checks_preconditions() {
        let s = spec(10, 2, 0.3, 10);
        let cfg = SystemConfig::new(10, 2, 0.5, 1.0).unwrap();
        let lr = TrainingOptions::new(LearningRate::Fixed(0.05));
        let a = run_training(&s, &cfg, SchemeKind::Mcu, 200, 5, &lr).unwrap();
        let b = run_training(&s, &cfg, SchemeKind::Mcu, 200, 5, &lr).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(run_training(
            &s,
            &cfg,
            SchemeKind::Awu(AgeWeighting::default()),
            10,
            5,
            &lr
        )
        .is_err());
        let dec = TrainingOptions::new(LearningRate::Decaying(LrSchedule {
            beta: 1.0,
            gamma: 1.0,
        }));
        assert!(run_training(&s, &cfg, SchemeKind::Agu, 10, 5, &dec).is_err());
        let wrong_n = SystemConfig::new(11, 1, 0.5, 1.0).unwrap();
        assert!(run_training(&s, &wrong_n, SchemeKind::Mcu, 10, 5, &lr).is_err());
    }

    #[test]
    fn saturated_weighting_reproduces_mcu_run() {
        let s = spec(20, 3, 0.2, 11);
        let cfg = SystemConfig::new(20, 1, 0.5, 1.0).unwrap();
        let lr = TrainingOptions::new(LearningRate::Fixed(0.05));
        let flat = AgeWeighting {
            cap: 0.5,
            exponent: 2.0,
        };
        let a = run_training(&s, &cfg, SchemeKind::Awu(flat), 300, 2, &lr).unwrap();
        let m = run_training(&s, &cfg, SchemeKind::Mcu, 300, 2, &lr).unwrap();
        assert_eq!(a, m);
    }

    #[test]
    fn frozen_step_index_changes_only_failure_runs() {
        let s = spec(10, 2, 0.1, 12);
        let sched = LrSchedule {
            beta: 1.0,
            gamma: 4.0,
        };
        let mut frozen = TrainingOptions::new(LearningRate::Decaying(sched));
        frozen.step_index = StepIndex::SuccessfulUpdates;
        let every = TrainingOptions::new(LearningRate::Decaying(sched));
        let always = SystemConfig::new(10, 1, 100.0, 1.0).unwrap();
        assert_eq!(
            run_training(&s, &always, SchemeKind::Mcu, 100, 1, &frozen).unwrap(),
            run_training(&s, &always, SchemeKind::Mcu, 100, 1, &every).unwrap()
        );
        let flaky = SystemConfig::new(10, 5, 0.5, 1.0).unwrap();
        assert_ne!(
            run_training(&s, &flaky, SchemeKind::Mcu, 100, 1, &frozen).unwrap(),
            run_training(&s, &flaky, SchemeKind::Mcu, 100, 1, &every).unwrap()
        );
    }
}
