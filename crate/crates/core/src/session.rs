//! Live allocation sessions.
//!
//! A session allocates subjects one at a time while a human operator
//! reports responses as they arrive; nothing is simulated. Every mutation
//! is written to an append-only event log, one JSON object per line of
//! the form `{"ts": <ms>, "kind": <kind>, "payload": <object>}`, and the
//! session can be rebuilt by replaying that log. Replay re-runs every
//! allocation from the stored seed and checks it against the logged arm.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::designs::{Design, DesignSpec};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::trial::{Assignment, Outcome, TrialState, MAX_ARMS};

pub const MAX_ID_LEN: usize = 64;

/// Body of a session creation request; also the payload of `create` events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub design: DesignSpec,
    /// Number of arms; success probabilities are unknown in a live session.
    pub arms: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl CreateSession {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_ARMS).contains(&self.arms) {
            return Err(Error::invalid("arms", format!("need between 2 and {MAX_ARMS} arms")));
        }
        self.design.build(self.arms).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRequest {
    pub success: bool,
}

fn decode<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| Error::Parse {
        line: e.line(),
        reason: e.to_string(),
    })
}

/// Parses and validates a creation request body.
pub fn parse_create_request(body: &[u8]) -> Result<CreateSession> {
    let req: CreateSession = decode(body)?;
    req.validate()?;
    Ok(req)
}

pub fn parse_outcome_request(body: &[u8]) -> Result<OutcomeRequest> {
    decode(body)
}

/// Session ids double as file names: ASCII letters, digits, `-` and `_`.
pub fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= MAX_ID_LEN
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("id", "use 1 to 64 ASCII letters, digits, `-` or `_`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventBody {
    Create { id: String, config: CreateSession },
    Enroll { subject: u64, arm: usize },
    Outcome { subject: u64, success: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEvent {
    /// Wall-clock milliseconds; informational only, replay ignores it.
    pub ts: u64,
    pub body: EventBody,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogLine {
    ts: u64,
    kind: String,
    payload: Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreatePayload {
    id: String,
    config: CreateSession,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnrollPayload {
    subject: u64,
    arm: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutcomePayload {
    subject: u64,
    success: bool,
}

impl LogEvent {
    pub fn kind(&self) -> &'static str {
        match self.body {
            EventBody::Create { .. } => "create",
            EventBody::Enroll { .. } => "enroll",
            EventBody::Outcome { .. } => "outcome",
        }
    }

    /// One log line, without the trailing newline.
    pub fn encode(&self) -> String {
        let payload = match &self.body {
            EventBody::Create { id, config } => serde_json::to_value(CreatePayload {
                id: id.clone(),
                config: config.clone(),
            }),
            EventBody::Enroll { subject, arm } => serde_json::to_value(EnrollPayload {
                subject: *subject,
                arm: *arm,
            }),
            EventBody::Outcome { subject, success } => serde_json::to_value(OutcomePayload {
                subject: *subject,
                success: *success,
            }),
        }
        .expect("payloads serialize");
        serde_json::to_string(&LogLine {
            ts: self.ts,
            kind: self.kind().to_string(),
            payload,
        })
        .expect("log lines serialize")
    }
}

/// Parses one log line; `line` is only used in error messages.
pub fn parse_log_line(text: &str, line: usize) -> Result<LogEvent> {
    let err = |reason: String| Error::Parse { line, reason };
    let raw: LogLine = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
    let body = match raw.kind.as_str() {
        "create" => {
            let p: CreatePayload = serde_json::from_value(raw.payload).map_err(|e| err(e.to_string()))?;
            EventBody::Create { id: p.id, config: p.config }
        }
        "enroll" => {
            let p: EnrollPayload = serde_json::from_value(raw.payload).map_err(|e| err(e.to_string()))?;
            EventBody::Enroll {
                subject: p.subject,
                arm: p.arm,
            }
        }
        "outcome" => {
            let p: OutcomePayload = serde_json::from_value(raw.payload).map_err(|e| err(e.to_string()))?;
            EventBody::Outcome {
                subject: p.subject,
                success: p.success,
            }
        }
        other => return Err(err(format!("unknown event kind `{other}`"))),
    };
    Ok(LogEvent { ts: raw.ts, body })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enrollment {
    pub subject_index: u64,
    pub assignment: usize,
    /// Whether this assignment was part of the deterministic burn-in.
    pub burn_in: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectView {
    pub subject: u64,
    pub arm: usize,
    pub outcome: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurnIn {
    pub required: u64,
    pub completed: u64,
}

/// The state document served to the console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub design: DesignSpec,
    pub label: String,
    pub arms: usize,
    pub seed: u64,
    pub n: u64,
    pub assigned: Vec<u64>,
    pub observed: Vec<u64>,
    pub successes: Vec<u64>,
    pub proportions: Vec<f64>,
    /// `S / N` over observed responses, `null` for an arm with none.
    pub p_hat: Vec<Option<f64>>,
    /// Current estimate of the target proportion, for target-driven designs.
    pub rho_hat: Option<Vec<f64>>,
    pub next_probabilities: Option<Vec<f64>>,
    pub burn_in: Option<BurnIn>,
    pub pending: Vec<SubjectView>,
    pub history: Vec<SubjectView>,
}

pub struct Session {
    id: String,
    config: CreateSession,
    design: Box<dyn Design>,
    state: TrialState,
    rng: RandomStream,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("config", &self.config)
            .field("n", &self.state.n())
            .finish()
    }
}

impl Session {
    /// A fresh session together with its `create` event.
    pub fn create(id: &str, config: CreateSession, ts: u64) -> Result<(Session, LogEvent)> {
        validate_id(id)?;
        config.validate()?;
        let design = config.design.build(config.arms)?;
        let session = Session {
            id: id.to_string(),
            state: TrialState::new(config.arms),
            rng: RandomStream::new(config.seed, 0),
            design,
            config: config.clone(),
        };
        let event = LogEvent {
            ts,
            body: EventBody::Create {
                id: id.to_string(),
                config,
            },
        };
        Ok((session, event))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> &TrialState {
        &self.state
    }

    pub fn config(&self) -> &CreateSession {
        &self.config
    }

    pub fn enroll(&mut self, ts: u64) -> Result<(Enrollment, LogEvent)> {
        let burn_in = self.design.burn_in().is_some_and(|b| self.state.n() < b);
        let arm = self.design.allocate(&self.state, &mut self.rng)?;
        let subject = self.state.enroll(arm)?;
        let event = LogEvent {
            ts,
            body: EventBody::Enroll {
                subject,
                arm: arm.index(),
            },
        };
        Ok((
            Enrollment {
                subject_index: subject,
                assignment: arm.index(),
                burn_in,
            },
            event,
        ))
    }

    pub fn record_outcome(&mut self, subject: u64, success: bool, ts: u64) -> Result<LogEvent> {
        let entry = *self
            .state
            .history()
            .get(subject as usize)
            .ok_or(Error::UnknownSubject(subject))?;
        if entry.outcome.is_some() {
            return Err(Error::DuplicateOutcome(subject));
        }
        let outcome = Outcome { success };
        self.design.observe(&self.state, entry.arm, outcome)?;
        self.state.resolve(subject, outcome)?;
        Ok(LogEvent {
            ts,
            body: EventBody::Outcome { subject, success },
        })
    }

    pub fn view(&self) -> SessionView {
        let s = &self.state;
        let history: Vec<SubjectView> = s
            .history()
            .iter()
            .enumerate()
            .map(|(i, h)| SubjectView {
                subject: i as u64,
                arm: h.arm.index(),
                outcome: h.outcome.map(|o| o.success),
            })
            .collect();
        SessionView {
            id: self.id.clone(),
            name: self.config.name.clone(),
            design: self.config.design.clone(),
            label: self.config.design.label(),
            arms: self.config.arms,
            seed: self.config.seed,
            n: s.n(),
            assigned: s.assigned().to_vec(),
            observed: s.observed().to_vec(),
            successes: s.successes().to_vec(),
            proportions: s.proportions(),
            p_hat: s
                .successes()
                .iter()
                .zip(s.observed())
                .map(|(&x, &n)| (n > 0).then(|| x as f64 / n as f64))
                .collect(),
            rho_hat: self.design.estimated_target(s),
            next_probabilities: self.design.next_probabilities(s),
            burn_in: self.design.burn_in().map(|required| BurnIn {
                required,
                completed: s.n().min(required),
            }),
            pending: history.iter().filter(|h| h.outcome.is_none()).cloned().collect(),
            history,
        }
    }

    /// Rebuilds a session from its events.
    pub fn replay<I>(events: I) -> Result<Session>
    where
        I: IntoIterator<Item = LogEvent>,
    {
        let mut it = events.into_iter();
        let mut session = match it.next() {
            Some(LogEvent {
                ts,
                body: EventBody::Create { id, config },
            }) => Session::create(&id, config, ts)?.0,
            _ => {
                return Err(Error::ReplayMismatch {
                    index: 0,
                    reason: "log must start with a create event".into(),
                })
            }
        };
        for (i, ev) in it.enumerate() {
            let index = i + 1;
            match ev.body {
                EventBody::Create { .. } => {
                    return Err(Error::ReplayMismatch {
                        index,
                        reason: "second create event".into(),
                    })
                }
                EventBody::Enroll { subject, arm } => {
                    let (e, _) = session.enroll(ev.ts)?;
                    if e.subject_index != subject || e.assignment != arm {
                        return Err(Error::ReplayMismatch {
                            index,
                            reason: format!(
                                "logged subject {subject} on arm {arm}, replay gave subject {} on arm {}",
                                e.subject_index, e.assignment
                            ),
                        });
                    }
                }
                EventBody::Outcome { subject, success } => {
                    session
                        .record_outcome(subject, success, ev.ts)
                        .map_err(|e| Error::ReplayMismatch {
                            index,
                            reason: e.to_string(),
                        })?;
                }
            }
        }
        Ok(session)
    }

    /// Parses and replays a whole log file.
    pub fn replay_log(text: &str) -> Result<Session> {
        let events = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| parse_log_line(l, i + 1))
            .collect::<Result<Vec<_>>>()?;
        Session::replay(events)
    }
}

/// Convenience for tests and tools: the arm of an enrolled subject.
pub fn arm_of(state: &TrialState, subject: u64) -> Option<Assignment> {
    state.history().get(subject as usize).map(|h| h.arm)
}
