//! Drop-the-loser urn with an immigration ball type.
//!
//! Type 0 is the immigration ball; types `1..=K` correspond to arms
//! `0..K`. Drawing type 0 treats nobody: the ball goes back together with
//! one ball of every treatment type and the draw is repeated. Drawing a
//! treatment ball assigns that arm; the ball is set aside until the
//! response is known and then replaced on success or dropped on failure.

use serde::{Deserialize, Serialize};

use super::urn::MAX_INITIAL_BALLS;
use super::Design;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::trial::{Assignment, BernoulliArms, Outcome, TrialState};

/// Upper bound on consecutive immigration draws for one assignment.
pub const MAX_IMMIGRATION_DRAWS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DLUrnState {
    /// `z[0]` immigration balls, `z[k + 1]` balls of arm `k` in the urn.
    pub z: Vec<u64>,
    /// Treatment balls drawn whose response is still pending.
    pub set_aside: Vec<u64>,
    /// Immigration draws so far.
    pub immigrations: u64,
}

impl DLUrnState {
    pub fn new(z: Vec<u64>) -> Result<Self> {
        if z.len() < 3 {
            return Err(Error::invalid("dl.initial", "need the immigration type and at least two arms"));
        }
        if z[0] == 0 {
            return Err(Error::invalid("dl.initial", "at least one immigration ball is required"));
        }
        if z.iter().any(|&c| c as f64 > MAX_INITIAL_BALLS) {
            return Err(Error::invalid("dl.initial", "ball counts must be at most 1e12"));
        }
        let arms = z.len() - 1;
        Ok(DLUrnState {
            z,
            set_aside: vec![0; arms],
            immigrations: 0,
        })
    }

    /// One immigration ball plus one ball per arm.
    pub fn initial(arms: usize) -> Self {
        DLUrnState {
            z: vec![1; arms + 1],
            set_aside: vec![0; arms],
            immigrations: 0,
        }
    }

    pub fn arms(&self) -> usize {
        self.z.len() - 1
    }

    pub fn immigration_balls(&self) -> u64 {
        self.z[0]
    }

    /// Draws until a treatment ball comes out; that ball is set aside.
    pub fn draw_treatment(&mut self, rng: &mut RandomStream) -> Result<Assignment> {
        for _ in 0..MAX_IMMIGRATION_DRAWS {
            let total: u64 = self.z.iter().sum();
            let u = (rng.uniform() * total as f64) as u64;
            let ball = pick(&self.z, u.min(total - 1));
            if ball == 0 {
                self.immigrations += 1;
                for c in &mut self.z[1..] {
                    *c += 1;
                }
                continue;
            }
            self.z[ball] -= 1;
            self.set_aside[ball - 1] += 1;
            return Ok(Assignment(ball - 1));
        }
        Err(Error::ImmigrationLoop(MAX_IMMIGRATION_DRAWS))
    }

    /// Returns a set-aside ball on success, drops it on failure.
    pub fn settle(&mut self, arm: Assignment, outcome: Outcome) -> Result<()> {
        let k = arm.index();
        if k >= self.arms() || self.set_aside[k] == 0 {
            return Err(Error::Domain(format!("no pending drop-the-loser ball for arm {k}")));
        }
        self.set_aside[k] -= 1;
        if outcome.success {
            self.z[k + 1] += 1;
        }
        Ok(())
    }
}

fn pick(z: &[u64], u: u64) -> usize {
    let mut acc = 0;
    for (i, &c) in z.iter().enumerate() {
        acc += c;
        if u < acc {
            return i;
        }
    }
    z.len() - 1
}

/// One complete drop-the-loser step with an immediate response.
pub fn dl_next(
    mut state: DLUrnState,
    arms: &BernoulliArms,
    rng: &mut RandomStream,
) -> Result<(Assignment, Outcome, DLUrnState)> {
    let arm = state.draw_treatment(rng)?;
    let outcome = arms.draw(arm, rng)?;
    state.settle(arm, outcome)?;
    Ok((arm, outcome, state))
}

#[derive(Debug, Clone)]
pub struct DropTheLoser {
    urn: DLUrnState,
}

impl DropTheLoser {
    pub fn new(urn: DLUrnState) -> Self {
        DropTheLoser { urn }
    }

    pub fn urn(&self) -> &DLUrnState {
        &self.urn
    }
}

impl Design for DropTheLoser {
    fn arms(&self) -> usize {
        self.urn.arms()
    }

    fn allocate(&mut self, _state: &TrialState, rng: &mut RandomStream) -> Result<Assignment> {
        let z0 = self.urn.z[0];
        let arm = self.urn.draw_treatment(rng)?;
        debug_assert_eq!(self.urn.z[0], z0, "immigration balls must be conserved");
        Ok(arm)
    }

    fn observe(&mut self, _state: &TrialState, arm: Assignment, outcome: Outcome) -> Result<()> {
        self.urn.settle(arm, outcome)
    }

    fn next_probabilities(&self, _state: &TrialState) -> Option<Vec<f64>> {
        // conditional on a treatment ball being drawn; with an empty
        // treatment section the next immigration restores one of each
        let treat = &self.urn.z[1..];
        let total: u64 = treat.iter().sum();
        if total == 0 {
            let k = treat.len();
            return Some(vec![1.0 / k as f64; k]);
        }
        Some(treat.iter().map(|&c| c as f64 / total as f64).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic stream: finds a seed whose first uniform lands in `[lo, hi)`.
    fn stream_with_first_uniform(lo: f64, hi: f64) -> RandomStream {
        for seed in 0.. {
            let mut r = RandomStream::new(seed, 0);
            let u = r.uniform();
            if u >= lo && u < hi {
                return RandomStream::new(seed, 0);
            }
        }
        unreachable!()
    }

    #[test]
    fn success_leaves_urn_unchanged() {
        let mut urn = DLUrnState::initial(2);
        // total 3: u in [1/3, 2/3) picks type 1 (arm 0)
        let mut rng = stream_with_first_uniform(0.34, 0.66);
        let arm = urn.draw_treatment(&mut rng).unwrap();
        assert_eq!(arm, Assignment(0));
        urn.settle(arm, Outcome::SUCCESS).unwrap();
        assert_eq!(urn.z, vec![1, 1, 1]);
    }

    #[test]
    fn failure_drops_ball() {
        let mut urn = DLUrnState::initial(2);
        let mut rng = stream_with_first_uniform(0.34, 0.66);
        let arm = urn.draw_treatment(&mut rng).unwrap();
        urn.settle(arm, Outcome::FAILURE).unwrap();
        assert_eq!(urn.z, vec![1, 0, 1]);
    }

    #[test]
    fn immigration_replenishes_before_assignment() {
        let mut urn = DLUrnState::new(vec![1, 0, 0]).unwrap();
        let mut rng = RandomStream::new(4, 0);
        let arm = urn.draw_treatment(&mut rng).unwrap();
        assert_eq!(urn.immigrations, 1);
        // one of each was added, then the drawn one was set aside
        let mut expect = vec![1, 1, 1];
        expect[arm.index() + 1] -= 1;
        assert_eq!(urn.z, expect);
        urn.settle(arm, Outcome::SUCCESS).unwrap();
        assert_eq!(urn.z, vec![1, 1, 1]);
    }

    #[test]
    fn invalid_initial_urns() {
        assert!(DLUrnState::new(vec![0, 1, 1]).is_err());
        assert!(DLUrnState::new(vec![1, 1]).is_err());
    }

    #[test]
    fn settle_without_draw_is_error() {
        let mut urn = DLUrnState::initial(2);
        assert!(urn.settle(Assignment(0), Outcome::SUCCESS).is_err());
    }

    #[test]
    fn long_run_invariants() {
        let arms = BernoulliArms::new(vec![0.7, 0.5, 0.4]).unwrap();
        let mut rng = RandomStream::new(99, 0);
        let mut urn = DLUrnState::initial(3);
        for _ in 0..20_000 {
            let before = urn.clone();
            let (arm, _, next) = dl_next(urn, &arms, &mut rng).unwrap();
            assert_eq!(next.z[0], 1);
            let grew = next.immigrations - before.immigrations;
            for k in 0..3 {
                let delta = next.z[k + 1] as i64 - before.z[k + 1] as i64 - grew as i64;
                if k == arm.index() {
                    assert!(delta == 0 || delta == -1);
                } else {
                    assert_eq!(delta, 0);
                }
            }
            urn = next;
        }
    }

    #[test]
    fn proportion_tends_to_urn_proportion() {
        let arms = BernoulliArms::new(vec![0.7, 0.5]).unwrap();
        let mut rng = RandomStream::new(5, 0);
        let mut urn = DLUrnState::initial(2);
        let n = 200_000;
        let mut first = 0u64;
        for _ in 0..n {
            let (arm, _, next) = dl_next(urn, &arms, &mut rng).unwrap();
            if arm.index() == 0 {
                first += 1;
            }
            urn = next;
        }
        // sd of N_1/n is about sqrt(0.3516 / n) = 0.0013
        assert!((first as f64 / n as f64 - 0.625).abs() < 0.005);
    }
}
