//! Allocation procedures.
//!
//! Every design sees the trial through a [`TrialState`]: assignment counts
//! cover every enrolled subject, success counts only observed responses.
//! Responses reach the design through [`Design::observe`], which is called
//! before the response is recorded into the state, so the state passed
//! there reflects what was known just before this observation.

pub mod dbcd;
pub mod dl;
pub mod markov;
pub mod urn;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::targets::TargetAllocation;
use crate::trial::{Assignment, BernoulliArms, EstimatorScheme, Outcome, TrialState, MAX_ARMS};

pub use dbcd::{DBCDConfig, Dbcd, RBCDConfig, Rbcd};
pub use dl::{DLUrnState, DropTheLoser};
pub use markov::{MCADParams, MarkovDesign};
pub use urn::{UrnDesign, UrnRule, UrnState};

pub trait Design: Send {
    fn arms(&self) -> usize;

    /// Chooses the arm of the next subject.
    fn allocate(&mut self, state: &TrialState, rng: &mut RandomStream) -> Result<Assignment>;

    /// Feeds an observed response back into the design.
    fn observe(&mut self, state: &TrialState, arm: Assignment, outcome: Outcome) -> Result<()>;

    /// Probability of each arm for the next subject.
    fn next_probabilities(&self, state: &TrialState) -> Option<Vec<f64>>;

    /// Current estimate of the target proportion, for target-driven designs.
    fn estimated_target(&self, _state: &TrialState) -> Option<Vec<f64>> {
        None
    }

    /// Number of deterministic burn-in assignments.
    fn burn_in(&self) -> Option<u64> {
        None
    }
}

/// Runs `n` subjects with immediate responses: allocate, draw the
/// response, enroll, feed the response back, record it.
pub fn run_trial(
    design: &mut dyn Design,
    arms: &BernoulliArms,
    n: u64,
    rng: &mut RandomStream,
) -> Result<TrialState> {
    if design.arms() != arms.len() {
        return Err(Error::invalid(
            "arms.p",
            format!("design has {} arms, parameters give {}", design.arms(), arms.len()),
        ));
    }
    let mut state = TrialState::with_capacity(arms.len(), n as usize);
    for _ in 0..n {
        let arm = design.allocate(&state, rng)?;
        let outcome = arms.draw(arm, rng)?;
        let m = state.enroll(arm)?;
        design.observe(&state, arm, outcome)?;
        state.resolve(m, outcome)?;
    }
    Ok(state)
}

/// Serializable description of a design and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DesignSpec {
    /// Play-the-winner.
    Pw,
    /// Complete randomization.
    Cr,
    Mcad {
        params: MCADParams,
    },
    Rpw {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<Vec<f64>>,
    },
    Wei {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<Vec<f64>>,
    },
    Seu {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<Vec<f64>>,
    },
    Dl {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<Vec<u64>>,
    },
    Dbcd {
        target: TargetAllocation,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_burn_in")]
        m: u64,
        #[serde(default)]
        scheme: EstimatorScheme,
    },
    Rbcd {
        target: TargetAllocation,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        scheme: EstimatorScheme,
    },
}

fn default_gamma() -> f64 {
    DBCDConfig::default().gamma
}

fn default_burn_in() -> u64 {
    DBCDConfig::default().m
}

fn default_alpha() -> f64 {
    RBCDConfig::default().alpha
}

impl DesignSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            DesignSpec::Pw => "pw",
            DesignSpec::Cr => "cr",
            DesignSpec::Mcad { .. } => "mcad",
            DesignSpec::Rpw { .. } => "rpw",
            DesignSpec::Wei { .. } => "wei",
            DesignSpec::Seu { .. } => "seu",
            DesignSpec::Dl { .. } => "dl",
            DesignSpec::Dbcd { .. } => "dbcd",
            DesignSpec::Rbcd { .. } => "rbcd",
        }
    }

    /// Short label including the main parameters, e.g. `dbcd(rsihr,g=2)`.
    pub fn label(&self) -> String {
        match self {
            DesignSpec::Mcad { params } => format!(
                "mcad({},{},{},{})",
                params.alpha_s, params.alpha_f, params.beta_s, params.beta_f
            ),
            DesignSpec::Dbcd { target, gamma, .. } => format!("dbcd({target},g={gamma})"),
            DesignSpec::Rbcd { target, alpha, .. } => format!("rbcd({target},a={alpha:.4})"),
            other => other.kind().to_string(),
        }
    }

    pub fn target(&self) -> Option<TargetAllocation> {
        match self {
            DesignSpec::Dbcd { target, .. } | DesignSpec::Rbcd { target, .. } => Some(*target),
            _ => None,
        }
    }

    /// Validates the parameters against `arms` and builds a fresh design.
    pub fn build(&self, arms: usize) -> Result<Box<dyn Design>> {
        if !(2..=MAX_ARMS).contains(&arms) {
            return Err(Error::invalid("arms.p", format!("need between 2 and {MAX_ARMS} arms, got {arms}")));
        }
        let two_arms = |what: &'static str| {
            if arms == 2 {
                Ok(())
            } else {
                Err(Error::UnsupportedArity {
                    what,
                    expected: "exactly 2",
                    got: arms,
                })
            }
        };
        let urn = |initial: &Option<Vec<f64>>| -> Result<UrnState> {
            match initial {
                None => Ok(UrnState::uniform(arms)),
                Some(y) if y.len() != arms => Err(Error::invalid(
                    "urn.initial",
                    format!("expected {arms} counts, got {}", y.len()),
                )),
                Some(y) => UrnState::new(y.clone()),
            }
        };
        Ok(match self {
            DesignSpec::Pw => {
                two_arms("play-the-winner")?;
                Box::new(MarkovDesign::play_the_winner())
            }
            DesignSpec::Cr => {
                two_arms("complete randomization")?;
                Box::new(MarkovDesign::new(MCADParams::COMPLETE_RANDOMIZATION)?)
            }
            DesignSpec::Mcad { params } => {
                two_arms("Markov chain design")?;
                Box::new(MarkovDesign::new(*params)?)
            }
            DesignSpec::Rpw { initial } => {
                two_arms("randomized play-the-winner")?;
                Box::new(UrnDesign::new(UrnRule::Rpw, urn(initial)?)?)
            }
            DesignSpec::Wei { initial } => Box::new(UrnDesign::new(UrnRule::Wei, urn(initial)?)?),
            DesignSpec::Seu { initial } => Box::new(UrnDesign::new(UrnRule::Seu, urn(initial)?)?),
            DesignSpec::Dl { initial } => {
                let state = match initial {
                    None => DLUrnState::initial(arms),
                    Some(z) if z.len() != arms + 1 => {
                        return Err(Error::invalid(
                            "dl.initial",
                            format!("expected {} counts (immigration first), got {}", arms + 1, z.len()),
                        ))
                    }
                    Some(z) => DLUrnState::new(z.clone())?,
                };
                Box::new(DropTheLoser::new(state))
            }
            DesignSpec::Dbcd {
                target,
                gamma,
                m,
                scheme,
            } => Box::new(Dbcd::new(arms, *target, DBCDConfig::new(*gamma, *m, *scheme)?)?),
            DesignSpec::Rbcd {
                target,
                alpha,
                scheme,
            } => Box::new(Rbcd::new(arms, *target, RBCDConfig::new(*alpha, *scheme)?)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_round_trip() {
        let spec = DesignSpec::Dbcd {
            target: TargetAllocation::Rsihr,
            gamma: 2.0,
            m: 2,
            scheme: EstimatorScheme::default(),
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<DesignSpec>(&json).unwrap(), spec);
        let parsed: DesignSpec = serde_json::from_str(r#"{"kind":"dbcd","target":"neyman"}"#).unwrap();
        assert_eq!(parsed.label(), "dbcd(neyman,g=2)");
    }

    #[test]
    fn arity_checks() {
        assert!(DesignSpec::Pw.build(3).is_err());
        assert!(DesignSpec::Rpw { initial: None }.build(3).is_err());
        assert!(DesignSpec::Wei { initial: None }.build(3).is_ok());
        assert!(DesignSpec::Dl { initial: Some(vec![1, 1]) }.build(2).is_err());
        assert!(DesignSpec::Dbcd {
            target: TargetAllocation::Rsihr,
            gamma: 2.0,
            m: 2,
            scheme: EstimatorScheme::default()
        }
        .build(3)
        .is_err());
    }
}
