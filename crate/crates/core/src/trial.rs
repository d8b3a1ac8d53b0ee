//! Arms, assignments, outcomes and the running trial state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Largest number of arms any design or calculator accepts.
pub const MAX_ARMS: usize = 8;

/// Per-arm success probabilities of a binary response model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BernoulliArms {
    p: Vec<f64>,
}

impl BernoulliArms {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() < 2 || p.len() > MAX_ARMS {
            return Err(Error::invalid(
                "arms.p",
                format!("need between 2 and {MAX_ARMS} arms, got {}", p.len()),
            ));
        }
        for (k, &pk) in p.iter().enumerate() {
            if !(pk > 0.0 && pk < 1.0) {
                return Err(Error::invalid(
                    "arms.p",
                    format!("p[{k}] = {pk} is not inside (0, 1)"),
                ));
            }
        }
        Ok(BernoulliArms { p })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> Vec<f64> {
        self.p.iter().map(|p| 1.0 - p).collect()
    }

    pub fn p_of(&self, arm: Assignment) -> f64 {
        self.p[arm.index()]
    }

    pub fn check(&self, arm: Assignment) -> Result<()> {
        if arm.index() < self.len() {
            Ok(())
        } else {
            Err(Error::ArmOutOfRange {
                arm: arm.index(),
                arms: self.len(),
            })
        }
    }

    /// Draws the response of a subject on `arm`, consuming exactly one uniform.
    pub fn draw(&self, arm: Assignment, rng: &mut RandomStream) -> Result<Outcome> {
        self.check(arm)?;
        Ok(draw_bernoulli(self.p_of(arm), rng))
    }
}

impl TryFrom<Vec<f64>> for BernoulliArms {
    type Error = Error;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        BernoulliArms::new(p)
    }
}

impl From<BernoulliArms> for Vec<f64> {
    fn from(a: BernoulliArms) -> Vec<f64> {
        a.p
    }
}

/// Success with probability `p`, one uniform draw.
#[inline]
pub fn draw_bernoulli(p: f64, rng: &mut RandomStream) -> Outcome {
    Outcome {
        success: rng.uniform() < p,
    }
}

/// The treatment given to one subject; the one-hot vector with a 1 at `arm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(pub usize);

impl Assignment {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }

    pub fn one_hot(self, arms: usize) -> Vec<u8> {
        let mut x = vec![0u8; arms];
        x[self.0] = 1;
        x
    }

    /// The other arm of a two-arm trial.
    #[inline]
    pub fn other(self) -> Assignment {
        Assignment(1 - self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
}

impl Outcome {
    pub const SUCCESS: Outcome = Outcome { success: true };
    pub const FAILURE: Outcome = Outcome { success: false };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub arm: Assignment,
    /// `None` while the response is pending.
    pub outcome: Option<Outcome>,
}

/// Counts and history of a running trial.
///
/// `assigned` counts every enrolled subject; `successes` and `observed`
/// count only responses that have been recorded, so a trial with pending
/// outcomes has `observed[k] <= assigned[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialState {
    n: u64,
    assigned: Vec<u64>,
    successes: Vec<u64>,
    observed: Vec<u64>,
    history: Vec<HistoryEntry>,
}

impl TrialState {
    pub fn new(arms: usize) -> Self {
        TrialState {
            n: 0,
            assigned: vec![0; arms],
            successes: vec![0; arms],
            observed: vec![0; arms],
            history: Vec::new(),
        }
    }

    pub fn with_capacity(arms: usize, n: usize) -> Self {
        let mut s = Self::new(arms);
        s.history.reserve(n);
        s
    }

    pub fn arms(&self) -> usize {
        self.assigned.len()
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// `N_n`: subjects assigned to each arm.
    pub fn assigned(&self) -> &[u64] {
        &self.assigned
    }

    /// `S_n`: observed successes on each arm.
    pub fn successes(&self) -> &[u64] {
        &self.successes
    }

    /// Responses observed on each arm.
    pub fn observed(&self) -> &[u64] {
        &self.observed
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn pending(&self) -> u64 {
        self.n - self.observed.iter().sum::<u64>()
    }

    pub fn pending_subjects(&self) -> impl Iterator<Item = (u64, Assignment)> + '_ {
        self.history
            .iter()
            .enumerate()
            .filter(|(_, h)| h.outcome.is_none())
            .map(|(i, h)| (i as u64, h.arm))
    }

    /// `N_n / n`, zero vector before the first enrollment.
    pub fn proportions(&self) -> Vec<f64> {
        if self.n == 0 {
            return vec![0.0; self.arms()];
        }
        self.assigned
            .iter()
            .map(|&c| c as f64 / self.n as f64)
            .collect()
    }

    fn check(&self, arm: Assignment) -> Result<()> {
        if arm.index() < self.arms() {
            Ok(())
        } else {
            Err(Error::ArmOutOfRange {
                arm: arm.index(),
                arms: self.arms(),
            })
        }
    }

    /// Enrolls a subject on `arm` with a pending response; returns its index.
    pub fn enroll(&mut self, arm: Assignment) -> Result<u64> {
        self.check(arm)?;
        self.assigned[arm.index()] += 1;
        self.history.push(HistoryEntry { arm, outcome: None });
        self.n += 1;
        Ok(self.n - 1)
    }

    /// Attaches the response of an enrolled subject.
    pub fn resolve(&mut self, subject: u64, outcome: Outcome) -> Result<Assignment> {
        let entry = self
            .history
            .get_mut(subject as usize)
            .ok_or(Error::UnknownSubject(subject))?;
        if entry.outcome.is_some() {
            return Err(Error::DuplicateOutcome(subject));
        }
        entry.outcome = Some(outcome);
        let k = entry.arm.index();
        self.observed[k] += 1;
        if outcome.success {
            self.successes[k] += 1;
        }
        Ok(entry.arm)
    }

    /// Enrolls and immediately resolves one subject.
    pub fn record(&mut self, arm: Assignment, outcome: Outcome) -> Result<()> {
        let m = self.enroll(arm)?;
        self.resolve(m, outcome).map(|_| ())
    }

    /// Total recorded failures, `sum_k (observed_k - S_k)`.
    pub fn failures(&self) -> u64 {
        self.observed
            .iter()
            .zip(&self.successes)
            .map(|(o, s)| o - s)
            .sum()
    }

    pub fn estimate(&self, scheme: EstimatorScheme) -> ParamEstimate {
        estimate(self, scheme)
    }
}

/// Shrinkage estimator `(S_k + a) / (N_k + b)` over observed responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorScheme {
    pub a: f64,
    pub b: f64,
}

impl EstimatorScheme {
    pub const RAW: EstimatorScheme = EstimatorScheme { a: 0.0, b: 0.0 };
    /// `(S + 1) / (N + 1)`, the estimator of the sequential estimation-adjusted urn.
    pub const PLUS_ONE: EstimatorScheme = EstimatorScheme { a: 1.0, b: 1.0 };

    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::invalid("estimator.a", "must be a finite value >= 0"));
        }
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::invalid("estimator.b", "must be a finite value >= 0"));
        }
        Ok(EstimatorScheme { a, b })
    }
}

impl EstimatorScheme {
    /// Estimate for arm `k` of `state`.
    #[inline]
    pub fn apply(self, state: &TrialState, k: usize) -> f64 {
        let den = state.observed()[k] as f64 + self.b;
        if den > 0.0 {
            (state.successes()[k] as f64 + self.a) / den
        } else {
            // raw scheme with no data: no information, report the midpoint
            0.5
        }
    }
}

impl Default for EstimatorScheme {
    fn default() -> Self {
        EstimatorScheme { a: 1.0, b: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub p_hat: Vec<f64>,
    pub scheme: EstimatorScheme,
}

pub fn estimate(state: &TrialState, scheme: EstimatorScheme) -> ParamEstimate {
    let p_hat = (0..state.arms()).map(|k| scheme.apply(state, k)).collect();
    ParamEstimate { p_hat, scheme }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(s: &[u64], n: &[u64]) -> TrialState {
        let mut st = TrialState::new(s.len());
        for k in 0..s.len() {
            for i in 0..n[k] {
                st.record(Assignment(k), Outcome { success: i < s[k] }).unwrap();
            }
        }
        st
    }

    #[test]
    fn record_single_success() {
        let mut st = TrialState::new(2);
        st.record(Assignment(0), Outcome::SUCCESS).unwrap();
        assert_eq!(st.n(), 1);
        assert_eq!(st.assigned(), &[1, 0]);
        assert_eq!(st.successes(), &[1, 0]);
    }

    #[test]
    fn record_azt_counts() {
        // 20 failures of 239 on one arm and 60 of 238 on the other
        let st = state_with(&[219, 178], &[239, 238]);
        assert_eq!(st.successes(), &[219, 178]);
        assert_eq!(st.assigned(), &[239, 238]);
        assert_eq!(st.failures(), 80);
        assert_eq!(st.history().len(), 477);
    }

    #[test]
    fn failures_do_not_add_successes() {
        let mut st = TrialState::new(2);
        st.record(Assignment(1), Outcome::FAILURE).unwrap();
        st.record(Assignment(1), Outcome::FAILURE).unwrap();
        assert_eq!(st.assigned(), &[0, 2]);
        assert_eq!(st.successes(), &[0, 0]);
    }

    #[test]
    fn out_of_range_arm_rejected() {
        let mut st = TrialState::new(2);
        assert_eq!(
            st.record(Assignment(2), Outcome::SUCCESS),
            Err(Error::ArmOutOfRange { arm: 2, arms: 2 })
        );
        assert_eq!(st.n(), 0);
    }

    #[test]
    fn pending_then_resolve() {
        let mut st = TrialState::new(2);
        let m = st.enroll(Assignment(1)).unwrap();
        assert_eq!(st.pending(), 1);
        assert_eq!(st.observed(), &[0, 0]);
        st.resolve(m, Outcome::SUCCESS).unwrap();
        assert_eq!(st.pending(), 0);
        assert_eq!(st.resolve(m, Outcome::SUCCESS), Err(Error::DuplicateOutcome(0)));
        assert_eq!(st.resolve(5, Outcome::SUCCESS), Err(Error::UnknownSubject(5)));
    }

    #[test]
    fn estimate_examples() {
        let st = TrialState::new(2);
        assert_eq!(st.estimate(EstimatorScheme::default()).p_hat, vec![0.5, 0.5]);

        let st = state_with(&[7, 0], &[10, 0]);
        let e = st.estimate(EstimatorScheme::PLUS_ONE);
        assert_eq!(e.p_hat, vec![8.0 / 11.0, 1.0]);

        let st = state_with(&[5, 3], &[10, 10]);
        let e = st.estimate(EstimatorScheme::RAW);
        assert_eq!(e.p_hat, vec![0.5, 0.3]);
    }

    #[test]
    fn arms_validation() {
        assert!(BernoulliArms::new(vec![0.5]).is_err());
        assert!(BernoulliArms::new(vec![0.5, 1.0]).is_err());
        assert!(BernoulliArms::new(vec![0.0, 0.5]).is_err());
        assert!(BernoulliArms::new(vec![0.5; 9]).is_err());
        assert!(BernoulliArms::new(vec![0.7, 0.5]).is_ok());
    }

    #[test]
    fn draw_is_deterministic_per_stream() {
        let arms = BernoulliArms::new(vec![0.7, 0.5]).unwrap();
        let seq = |seed| {
            let mut r = RandomStream::new(seed, 3);
            (0..200)
                .map(|i| arms.draw(Assignment(i % 2), &mut r).unwrap().success)
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(9), seq(9));
        assert_ne!(seq(9), seq(10));
    }

    #[test]
    fn draw_mean_matches_binomial() {
        let arms = BernoulliArms::new(vec![0.7, 0.5]).unwrap();
        let mut r = RandomStream::new(2024, 0);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| arms.draw(Assignment(1), &mut r).unwrap().success)
            .count();
        let mean = hits as f64 / n as f64;
        // binomial standard error sqrt(0.25 / 1e6) = 5e-4
        assert!((mean - 0.5).abs() < 0.0015, "mean {mean}");
    }

    #[test]
    fn draw_near_one() {
        let eps = 1e-4;
        let arms = BernoulliArms::new(vec![1.0 - eps, 0.5]).unwrap();
        let mut r = RandomStream::new(5, 0);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| arms.draw(Assignment(0), &mut r).unwrap().success)
            .count();
        let p = 1.0 - eps;
        let mean = hits as f64 / n as f64;
        assert!((mean - p).abs() <= 3.0 * (p * eps / n as f64).sqrt() + 1e-12);
    }
}
