//! Play-the-winner and the two-arm Markov chain adaptive design.

use serde::{Deserialize, Serialize};

use super::Design;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::trial::{Assignment, Outcome, TrialState};

/// Stay probabilities of the Markov chain design.
///
/// `alpha_s` / `alpha_f`: probability that the next subject gets arm 0 after
/// a success / failure on arm 0. `beta_s` / `beta_f`: the same for arm 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCADParams {
    pub alpha_s: f64,
    pub alpha_f: f64,
    pub beta_s: f64,
    pub beta_f: f64,
}

impl MCADParams {
    /// Zelen's play-the-winner rule.
    pub const PLAY_THE_WINNER: MCADParams = MCADParams {
        alpha_s: 1.0,
        alpha_f: 0.0,
        beta_s: 1.0,
        beta_f: 0.0,
    };

    /// Complete randomization.
    pub const COMPLETE_RANDOMIZATION: MCADParams = MCADParams {
        alpha_s: 0.5,
        alpha_f: 0.5,
        beta_s: 0.5,
        beta_f: 0.5,
    };

    pub fn new(alpha_s: f64, alpha_f: f64, beta_s: f64, beta_f: f64) -> Result<Self> {
        let p = MCADParams {
            alpha_s,
            alpha_f,
            beta_s,
            beta_f,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("mcad.alpha_s", self.alpha_s),
            ("mcad.alpha_f", self.alpha_f),
            ("mcad.beta_s", self.beta_s),
            ("mcad.beta_f", self.beta_f),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(key, format!("{v} is not in [0, 1]")));
            }
        }
        Ok(())
    }

    fn stay_probability(&self, prev_arm: Assignment, prev: Outcome) -> f64 {
        match (prev_arm.index(), prev.success) {
            (0, true) => self.alpha_s,
            (0, false) => self.alpha_f,
            (_, true) => self.beta_s,
            (_, false) => self.beta_f,
        }
    }
}

/// Transition entries of the two-state chain on the assigned arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainCoefficients {
    pub alpha: f64,
    pub beta: f64,
}

impl ChainCoefficients {
    /// `alpha = p1 alpha_s + q1 alpha_f`, `beta = p2 beta_s + q2 beta_f`.
    pub fn compose(p1: f64, p2: f64, params: &MCADParams) -> Self {
        ChainCoefficients {
            alpha: p1 * params.alpha_s + (1.0 - p1) * params.alpha_f,
            beta: p2 * params.beta_s + (1.0 - p2) * params.beta_f,
        }
    }

    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Domain(format!(
                "chain coefficients ({}, {}) outside [0, 1]",
                self.alpha, self.beta
            )));
        }
        if self.alpha + self.beta >= 2.0 {
            return Err(Error::DegenerateChain);
        }
        Ok(())
    }
}

/// Same arm after a success, the other arm after a failure.
pub fn pw_next(prev_arm: Assignment, prev: Outcome) -> Assignment {
    if prev.success {
        prev_arm
    } else {
        prev_arm.other()
    }
}

/// One step of the Markov chain design; consumes one uniform.
pub fn mcad_next(
    prev_arm: Assignment,
    prev: Outcome,
    params: &MCADParams,
    rng: &mut RandomStream,
) -> Assignment {
    if rng.uniform() < params.stay_probability(prev_arm, prev) {
        prev_arm
    } else {
        prev_arm.other()
    }
}

/// Stationary probability of arm 0, `(1 - beta) / (2 - alpha - beta)`.
pub fn mcad_stationary(c: &ChainCoefficients) -> Result<f64> {
    c.check()?;
    Ok((1.0 - c.beta) / (2.0 - c.alpha - c.beta))
}

/// Asymptotic variance of `sqrt(n) (N_{n,1}/n - mu)`:
/// `(1 - alpha)(1 - beta)(alpha + beta) / (2 - alpha - beta)^3`.
pub fn mcad_variance(c: &ChainCoefficients) -> Result<f64> {
    c.check()?;
    let s = 2.0 - c.alpha - c.beta;
    Ok((1.0 - c.alpha) * (1.0 - c.beta) * (c.alpha + c.beta) / (s * s * s))
}

/// Two-arm Markov chain design driven by the most recently observed response.
///
/// Without delay the most recent observation is the previous subject's.
/// With no observation yet (the first subject) the arm is a fair coin.
#[derive(Debug, Clone)]
pub struct MarkovDesign {
    params: MCADParams,
    deterministic: bool,
    last: Option<(Assignment, Outcome)>,
}

impl MarkovDesign {
    pub fn new(params: MCADParams) -> Result<Self> {
        params.validate()?;
        Ok(MarkovDesign {
            params,
            deterministic: false,
            last: None,
        })
    }

    pub fn play_the_winner() -> Self {
        MarkovDesign {
            params: MCADParams::PLAY_THE_WINNER,
            deterministic: true,
            last: None,
        }
    }

    pub fn params(&self) -> &MCADParams {
        &self.params
    }
}

impl Design for MarkovDesign {
    fn arms(&self) -> usize {
        2
    }

    fn allocate(&mut self, _state: &TrialState, rng: &mut RandomStream) -> Result<Assignment> {
        Ok(match self.last {
            None => {
                if rng.uniform() < 0.5 {
                    Assignment(0)
                } else {
                    Assignment(1)
                }
            }
            Some((arm, outcome)) if self.deterministic => pw_next(arm, outcome),
            Some((arm, outcome)) => mcad_next(arm, outcome, &self.params, rng),
        })
    }

    fn observe(&mut self, _state: &TrialState, arm: Assignment, outcome: Outcome) -> Result<()> {
        self.last = Some((arm, outcome));
        Ok(())
    }

    fn next_probabilities(&self, _state: &TrialState) -> Option<Vec<f64>> {
        Some(match self.last {
            None => vec![0.5, 0.5],
            Some((arm, outcome)) => {
                let stay = self.params.stay_probability(arm, outcome);
                let mut p = vec![1.0 - stay; 2];
                p[arm.index()] = stay;
                p
            }
        })
    }
}
