//! Delayed responses.
//!
//! Subjects enter at the epochs of a Poisson process with rate `lambda0`.
//! The response of a subject on arm `k` becomes visible an exponential
//! time with rate `lambda[k]` after entry. Visible responses are handed to
//! the design in batches at entry epochs, just before the allocation made
//! at that epoch, ordered by visibility time and then by subject index.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::designs::Design;
use crate::error::{Error, Result};
use crate::rng::{RandomStream, LANE_TIMING};
use crate::trial::{Assignment, BernoulliArms, Outcome, TrialState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    /// Entry rate.
    pub lambda0: f64,
    /// Response rate per arm; `f64::INFINITY` means no delay.
    pub lambda: Vec<f64>,
}

impl DelayModel {
    pub fn new(lambda0: f64, lambda: Vec<f64>) -> Result<Self> {
        let m = DelayModel { lambda0, lambda };
        m.validate()?;
        Ok(m)
    }

    /// Same response rate on every arm.
    pub fn shared(lambda0: f64, rate: f64, arms: usize) -> Result<Self> {
        Self::new(lambda0, vec![rate; arms])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::invalid("delay.entry_rate", "must be a finite rate > 0"));
        }
        if self.lambda.is_empty() {
            return Err(Error::invalid("delay.response_rates", "at least one rate is required"));
        }
        if let Some(bad) = self.lambda.iter().find(|r| !(**r > 0.0)) {
            return Err(Error::invalid("delay.response_rates", format!("rate {bad} is not > 0")));
        }
        Ok(())
    }

    pub fn arms(&self) -> usize {
        self.lambda.len()
    }

    /// Probability that a response on arm `k` is still unseen after `l`
    /// further entries: `(lambda0 / (lambda0 + lambda_k))^l`.
    pub fn mu_kl(&self, k: usize, l: u32) -> Result<f64> {
        let rate = *self.lambda.get(k).ok_or(Error::ArmOutOfRange {
            arm: k,
            arms: self.arms(),
        })?;
        if l == 0 {
            return Ok(1.0);
        }
        if rate.is_infinite() {
            return Ok(0.0);
        }
        Ok((self.lambda0 / (self.lambda0 + rate)).powi(l as i32))
    }

    /// Steady-state mean number of unseen responses at an entry epoch
    /// when every subject goes to arm `k`.
    pub fn steady_pending(&self, k: usize) -> Result<f64> {
        let rate = *self.lambda.get(k).ok_or(Error::ArmOutOfRange {
            arm: k,
            arms: self.arms(),
        })?;
        Ok(self.lambda0 / rate)
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingEvent {
    due: f64,
    subject: u64,
    arm: Assignment,
    outcome: Outcome,
}

impl PartialEq for PendingEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for PendingEvent {}

impl PartialOrd for PendingEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PendingEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.due
            .total_cmp(&other.due)
            .then(self.subject.cmp(&other.subject))
    }
}

/// Responses scheduled but not yet delivered, earliest first.
#[derive(Debug, Default)]
pub struct PendingQueue {
    heap: BinaryHeap<Reverse<PendingEvent>>,
}

impl PendingQueue {
    fn push(&mut self, ev: PendingEvent) {
        self.heap.push(Reverse(ev));
    }

    fn pop_due(&mut self, t: f64) -> Option<PendingEvent> {
        match self.heap.peek() {
            Some(Reverse(ev)) if ev.due <= t => self.heap.pop().map(|r| r.0),
            _ => None,
        }
    }

    fn next_due(&self) -> Option<f64> {
        self.heap.peek().map(|r| r.0.due)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DelayAudit {
    pub deliveries: u64,
    /// Decisions taken while a visible response was still undelivered, or
    /// responses delivered before they were visible.
    pub causality_violations: u64,
    /// Epochs where `observed + pending != assigned` on some arm.
    pub conservation_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    /// Unseen responses at each allocation instant.
    pub pending_trace: Vec<u32>,
    /// `N_k - N_k^obs` at the entry epoch following the last subject.
    pub terminal_pending: Vec<u64>,
    /// `S_k - S_k^obs` at the same epoch, with `S_k` counting all responses.
    pub terminal_success_gap: Vec<u64>,
    pub total_successes: Vec<u64>,
    /// Entry time of the last subject.
    pub horizon_time: f64,
    pub audit: DelayAudit,
}

impl DelayStats {
    pub fn terminal_pending_total(&self) -> u64 {
        self.terminal_pending.iter().sum()
    }

    pub fn terminal_success_gap_total(&self) -> u64 {
        self.terminal_success_gap.iter().sum()
    }

    pub fn mean_pending(&self) -> f64 {
        if self.pending_trace.is_empty() {
            return 0.0;
        }
        self.pending_trace.iter().map(|&x| x as f64).sum::<f64>() / self.pending_trace.len() as f64
    }
}

/// Runs `n` subjects under `model`.
///
/// Assignment and response draws use `rng` in the same order as
/// [`crate::designs::run_trial`]; entry and delay times come from the
/// timing lane of the same replicate.
pub fn run_delayed_trial(
    design: &mut dyn Design,
    arms: &BernoulliArms,
    model: &DelayModel,
    n: u64,
    rng: &mut RandomStream,
) -> Result<(TrialState, DelayStats)> {
    model.validate()?;
    let k = arms.len();
    if model.arms() != k || design.arms() != k {
        return Err(Error::invalid(
            "delay.response_rates",
            format!("expected {k} rates, got {}", model.arms()),
        ));
    }
    let mut timing = rng.lane(LANE_TIMING);
    let entry = Exp::new(model.lambda0).map_err(|e| Error::invalid("delay.entry_rate", e.to_string()))?;
    let delays = model
        .lambda
        .iter()
        .map(|&r| {
            if r.is_infinite() {
                Ok(None)
            } else {
                Exp::new(r)
                    .map(Some)
                    .map_err(|e| Error::invalid("delay.response_rates", e.to_string()))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut state = TrialState::with_capacity(k, n as usize);
    let mut queue = PendingQueue::default();
    let mut pending = vec![0u64; k];
    let mut total_successes = vec![0u64; k];
    let mut audit = DelayAudit::default();
    let mut trace = Vec::with_capacity(n as usize);
    let mut t = 0.0;
    let mut horizon_time = 0.0;

    for m in 0..=n {
        t += entry.sample(&mut timing);
        while let Some(ev) = queue.pop_due(t) {
            if ev.due > t {
                audit.causality_violations += 1;
            }
            design.observe(&state, ev.arm, ev.outcome)?;
            state.resolve(ev.subject, ev.outcome)?;
            pending[ev.arm.index()] -= 1;
            audit.deliveries += 1;
        }
        if queue.next_due().is_some_and(|d| d <= t) {
            audit.causality_violations += 1;
        }
        let conserved = (0..k).all(|j| state.observed()[j] + pending[j] == state.assigned()[j]);
        if !conserved {
            audit.conservation_violations += 1;
        }
        if m == n {
            break;
        }
        trace.push(queue.len() as u32);
        let arm = design.allocate(&state, rng)?;
        let outcome = arms.draw(arm, rng)?;
        let subject = state.enroll(arm)?;
        if outcome.success {
            total_successes[arm.index()] += 1;
        }
        let wait = match &delays[arm.index()] {
            Some(d) => d.sample(&mut timing),
            None => 0.0,
        };
        queue.push(PendingEvent {
            due: t + wait,
            subject,
            arm,
            outcome,
        });
        pending[arm.index()] += 1;
        horizon_time = t;
    }

    let terminal_pending: Vec<u64> = (0..k).map(|j| state.assigned()[j] - state.observed()[j]).collect();
    let terminal_success_gap = (0..k).map(|j| total_successes[j] - state.successes()[j]).collect();
    debug_assert_eq!(terminal_pending, pending);
    Ok((
        state,
        DelayStats {
            pending_trace: trace,
            terminal_pending,
            terminal_success_gap,
            total_successes,
            horizon_time,
            audit,
        },
    ))
}
