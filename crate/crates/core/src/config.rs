//! Scenario files.
//!
//! The native format is one `key = value` pair per line; blank lines and
//! lines starting with `#` are ignored. Lists are comma separated. A file
//! whose first non-blank character is `{` is read as JSON instead: nested
//! objects are flattened into dotted keys and arrays of numbers into
//! lists, so `{"dbcd": {"gamma": 2}}` and `dbcd.gamma = 2` are the same.
//!
//! | key | value |
//! |---|---|
//! | `name` | free text |
//! | `design.kind` | `pw`, `cr`, `mcad`, `rpw`, `wei`, `seu`, `dl`, `dbcd`, `rbcd` |
//! | `arms.p` | success probabilities, 2 to 8 entries |
//! | `sim.n`, `sim.replicates`, `sim.seed` | integers (defaults 2000, 1000, 1) |
//! | `test.level` | Wald test level (default 0.05) |
//! | `target.kind` | `urn`, `neyman`, `rsihr` (dbcd and rbcd only) |
//! | `dbcd.gamma`, `dbcd.m` | exponent (default 2), burn-in per arm (default 2) |
//! | `rbcd.alpha` | coin bias (default 2/3) |
//! | `estimator.a`, `estimator.b` | shrinkage offsets for dbcd/rbcd (default 1, 2) |
//! | `mcad.alpha_s`, `mcad.alpha_f`, `mcad.beta_s`, `mcad.beta_f` | stay probabilities |
//! | `urn.initial` | initial ball counts (rpw, wei, seu) |
//! | `dl.initial` | initial counts, immigration type first |
//! | `delay.entry_rate` | entry rate (default 1) |
//! | `delay.response_rates` | one rate shared by all arms, or one per arm; `inf` means no delay |
//! | `delay.enabled` | `false` ignores the other `delay.*` keys |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::delay::DelayModel;
use crate::designs::{DBCDConfig, DesignSpec, MCADParams, RBCDConfig};
use crate::error::{Error, Result};
use crate::montecarlo::{SimConfig, DEFAULT_TEST_LEVEL};
use crate::targets::TargetAllocation;
use crate::trial::{BernoulliArms, EstimatorScheme};

pub const KEYS: [&str; 23] = [
    "name",
    "design.kind",
    "arms.p",
    "sim.n",
    "sim.replicates",
    "sim.seed",
    "test.level",
    "target.kind",
    "dbcd.gamma",
    "dbcd.m",
    "rbcd.alpha",
    "estimator.a",
    "estimator.b",
    "mcad.alpha_s",
    "mcad.alpha_f",
    "mcad.beta_s",
    "mcad.beta_f",
    "urn.initial",
    "dl.initial",
    "delay.entry_rate",
    "delay.response_rates",
    // accepted for symmetry with the CLI flag name
    "delay.response_rate",
    "delay.enabled",
];

pub const DEFAULT_N: u64 = 2000;
pub const DEFAULT_REPLICATES: u64 = 1000;
pub const DEFAULT_SEED: u64 = 1;

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub design: DesignSpec,
    pub arms: BernoulliArms,
    pub n: u64,
    pub replicates: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelayModel>,
    pub test_level: f64,
}

impl Scenario {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            design: self.design.clone(),
            arms: self.arms.clone(),
            n: self.n,
            replicates: self.replicates,
            master_seed: self.seed,
            delay: self.delay.clone(),
            test_level: self.test_level,
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.design.label())
    }

    /// Serializes to the `key = value` format; [`parse`] reads it back to an
    /// equal scenario.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(name) = &self.name {
            put("name", name.clone());
        }
        put("design.kind", self.design.kind().to_string());
        put("arms.p", join(self.arms.p()));
        put("sim.n", self.n.to_string());
        put("sim.replicates", self.replicates.to_string());
        put("sim.seed", self.seed.to_string());
        put("test.level", self.test_level.to_string());
        match &self.design {
            DesignSpec::Pw | DesignSpec::Cr => {}
            DesignSpec::Mcad { params } => {
                put("mcad.alpha_s", params.alpha_s.to_string());
                put("mcad.alpha_f", params.alpha_f.to_string());
                put("mcad.beta_s", params.beta_s.to_string());
                put("mcad.beta_f", params.beta_f.to_string());
            }
            DesignSpec::Rpw { initial } | DesignSpec::Wei { initial } | DesignSpec::Seu { initial } => {
                if let Some(y) = initial {
                    put("urn.initial", join(y));
                }
            }
            DesignSpec::Dl { initial } => {
                if let Some(z) = initial {
                    put("dl.initial", join(z));
                }
            }
            DesignSpec::Dbcd {
                target,
                gamma,
                m,
                scheme,
            } => {
                put("target.kind", target.name().to_string());
                put("dbcd.gamma", gamma.to_string());
                put("dbcd.m", m.to_string());
                put("estimator.a", scheme.a.to_string());
                put("estimator.b", scheme.b.to_string());
            }
            DesignSpec::Rbcd { target, alpha, scheme } => {
                put("target.kind", target.name().to_string());
                put("rbcd.alpha", alpha.to_string());
                put("estimator.a", scheme.a.to_string());
                put("estimator.b", scheme.b.to_string());
            }
        }
        if let Some(d) = &self.delay {
            put("delay.entry_rate", d.lambda0.to_string());
            put("delay.response_rates", join(&d.lambda));
        }
        out
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Raw key/value pairs with the line each came from (0 for JSON input).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Sets `key`, replacing any previous value (used for CLI overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        check_key(key)?;
        self.entries.insert(key.to_string(), (value.into(), 0));
        Ok(())
    }

    fn insert(&mut self, key: String, value: String, line: usize) -> Result<()> {
        check_key(&key)?;
        if self.entries.contains_key(&key) {
            return Err(Error::Parse {
                line,
                reason: format!("duplicate key `{key}`"),
            });
        }
        self.entries.insert(key, (value, line));
        Ok(())
    }
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::Unknown {
            what: "config key",
            name: key.to_string(),
        })
    }
}

/// Reads `key = value` lines.
pub fn parse_key_values(text: &str) -> Result<RawConfig> {
    let mut raw = RawConfig::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            reason: "expected `key = value`".into(),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                reason: "empty key".into(),
            });
        }
        raw.insert(k.to_string(), v.trim().to_string(), i + 1)?;
    }
    Ok(raw)
}

/// Reads a JSON object, flattening nested objects into dotted keys.
pub fn parse_json(text: &str) -> Result<RawConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        reason: e.to_string(),
    })?;
    let Value::Object(map) = value else {
        return Err(Error::Parse {
            line: 1,
            reason: "expected a JSON object".into(),
        });
    };
    let mut raw = RawConfig::default();
    flatten("", &map, &mut raw)?;
    Ok(raw)
}

fn flatten(prefix: &str, map: &serde_json::Map<String, Value>, raw: &mut RawConfig) -> Result<()> {
    for (k, v) in map {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let text = match v {
            Value::Object(inner) => {
                flatten(&key, inner, raw)?;
                continue;
            }
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Array(items) => items
                .iter()
                .map(|x| match x {
                    Value::Number(n) => Ok(n.to_string()),
                    _ => Err(Error::invalid(key.clone(), "arrays may only hold numbers")),
                })
                .collect::<Result<Vec<_>>>()?
                .join(","),
            Value::Null => return Err(Error::invalid(key, "null is not a value")),
        };
        raw.insert(key, text, 0)?;
    }
    Ok(())
}

/// Parses either format, picking JSON when the text starts with `{`.
pub fn parse_raw(text: &str) -> Result<RawConfig> {
    if text.trim_start().starts_with('{') {
        parse_json(text)
    } else {
        parse_key_values(text)
    }
}

pub fn parse(text: &str) -> Result<Scenario> {
    scenario_from_raw(&parse_raw(text)?)
}

fn value<T: FromStr>(raw: &RawConfig, key: &str) -> Result<Option<T>> {
    raw.get(key)
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| Error::invalid(key, format!("cannot parse `{v}`")))
        })
        .transpose()
}

fn real(raw: &RawConfig, key: &str) -> Result<Option<f64>> {
    match value::<f64>(raw, key)? {
        Some(x) if !x.is_finite() && !(key.starts_with("delay.") && x == f64::INFINITY) => {
            Err(Error::invalid(key, "must be finite"))
        }
        other => Ok(other),
    }
}

fn list<T: FromStr>(raw: &RawConfig, key: &str) -> Result<Option<Vec<T>>> {
    raw.get(key)
        .map(|v| {
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<T>()
                        .map_err(|_| Error::invalid(key, format!("cannot parse list entry `{}`", x.trim())))
                })
                .collect::<Result<Vec<T>>>()
        })
        .transpose()
}

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::invalid(key, "is required"))
}

/// Keys that only make sense for the given design kinds.
const DESIGN_KEYS: [(&str, &[&str]); 12] = [
    ("target.kind", &["dbcd", "rbcd"]),
    ("dbcd.gamma", &["dbcd"]),
    ("dbcd.m", &["dbcd"]),
    ("rbcd.alpha", &["rbcd"]),
    ("estimator.a", &["dbcd", "rbcd"]),
    ("estimator.b", &["dbcd", "rbcd"]),
    ("mcad.alpha_s", &["mcad"]),
    ("mcad.alpha_f", &["mcad"]),
    ("mcad.beta_s", &["mcad"]),
    ("mcad.beta_f", &["mcad"]),
    ("urn.initial", &["rpw", "wei", "seu"]),
    ("dl.initial", &["dl"]),
];

pub fn scenario_from_raw(raw: &RawConfig) -> Result<Scenario> {
    let kind = required(raw.get("design.kind"), "design.kind")?.trim().to_ascii_lowercase();
    for (key, kinds) in DESIGN_KEYS {
        if raw.get(key).is_some() && !kinds.contains(&kind.as_str()) {
            return Err(Error::invalid(key, format!("does not apply to design `{kind}`")));
        }
    }
    let arms = BernoulliArms::new(required(list::<f64>(raw, "arms.p")?, "arms.p")?)?;
    let scheme = || -> Result<EstimatorScheme> {
        let d = EstimatorScheme::default();
        EstimatorScheme::new(
            real(raw, "estimator.a")?.unwrap_or(d.a),
            real(raw, "estimator.b")?.unwrap_or(d.b),
        )
    };
    let target = || -> Result<TargetAllocation> { required(raw.get("target.kind"), "target.kind")?.parse() };
    let design = match kind.as_str() {
        "pw" => DesignSpec::Pw,
        "cr" => DesignSpec::Cr,
        "mcad" => DesignSpec::Mcad {
            params: MCADParams::new(
                required(real(raw, "mcad.alpha_s")?, "mcad.alpha_s")?,
                required(real(raw, "mcad.alpha_f")?, "mcad.alpha_f")?,
                required(real(raw, "mcad.beta_s")?, "mcad.beta_s")?,
                required(real(raw, "mcad.beta_f")?, "mcad.beta_f")?,
            )?,
        },
        "rpw" => DesignSpec::Rpw {
            initial: list(raw, "urn.initial")?,
        },
        "wei" => DesignSpec::Wei {
            initial: list(raw, "urn.initial")?,
        },
        "seu" => DesignSpec::Seu {
            initial: list(raw, "urn.initial")?,
        },
        "dl" => DesignSpec::Dl {
            initial: list(raw, "dl.initial")?,
        },
        "dbcd" => {
            let d = DBCDConfig::default();
            DesignSpec::Dbcd {
                target: target()?,
                gamma: real(raw, "dbcd.gamma")?.unwrap_or(d.gamma),
                m: value(raw, "dbcd.m")?.unwrap_or(d.m),
                scheme: scheme()?,
            }
        }
        "rbcd" => DesignSpec::Rbcd {
            target: target()?,
            alpha: real(raw, "rbcd.alpha")?.unwrap_or(RBCDConfig::default().alpha),
            scheme: scheme()?,
        },
        other => {
            return Err(Error::Unknown {
                what: "design kind",
                name: other.to_string(),
            })
        }
    };

    let delay = delay_model(raw, arms.len())?;
    let scenario = Scenario {
        name: raw.get("name").map(str::to_string),
        design,
        arms,
        n: value(raw, "sim.n")?.unwrap_or(DEFAULT_N),
        replicates: value(raw, "sim.replicates")?.unwrap_or(DEFAULT_REPLICATES),
        seed: value(raw, "sim.seed")?.unwrap_or(DEFAULT_SEED),
        delay,
        test_level: real(raw, "test.level")?.unwrap_or(DEFAULT_TEST_LEVEL),
    };
    scenario.sim_config().validate()?;
    Ok(scenario)
}

fn delay_model(raw: &RawConfig, arms: usize) -> Result<Option<DelayModel>> {
    if raw.get("delay.response_rates").is_some() && raw.get("delay.response_rate").is_some() {
        return Err(Error::invalid("delay.response_rate", "give either response_rate or response_rates"));
    }
    let rates_key = if raw.get("delay.response_rate").is_some() {
        "delay.response_rate"
    } else {
        "delay.response_rates"
    };
    let enabled: Option<bool> = value(raw, "delay.enabled")?;
    let entry = real(raw, "delay.entry_rate")?;
    let rates = list::<f64>(raw, rates_key)?;
    if enabled == Some(false) || (entry.is_none() && rates.is_none()) {
        return Ok(None);
    }
    let rates = required(rates, "delay.response_rates")?;
    let lambda = match rates.len() {
        1 => vec![rates[0]; arms],
        k if k == arms => rates,
        k => {
            return Err(Error::invalid(
                rates_key,
                format!("expected 1 or {arms} rates, got {k}"),
            ))
        }
    };
    DelayModel::new(entry.unwrap_or(1.0), lambda).map(Some)
}
