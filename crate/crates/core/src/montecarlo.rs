//! Replicated simulation and comparison with the analytic references.
//!
//! Replicate `r` of a study uses stream `r` of the master seed, so any
//! subset of replicates can be run anywhere and merged. Aggregates are
//! always computed from the per-replicate results in stream order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::asymptotics::{analytic_reference, lower_bound, lower_bound_target, AsymptoticSummary, LowerBound};
use crate::delay::{run_delayed_trial, DelayModel};
use crate::designs::{run_trial, DesignSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RandomStream;
use crate::trial::BernoulliArms;

pub const MIN_HORIZON: u64 = 10;
pub const DEFAULT_TEST_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub design: DesignSpec,
    pub arms: BernoulliArms,
    pub n: u64,
    pub replicates: u64,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelayModel>,
    #[serde(default = "default_level")]
    pub test_level: f64,
}

fn default_level() -> f64 {
    DEFAULT_TEST_LEVEL
}

impl SimConfig {
    pub fn new(design: DesignSpec, arms: BernoulliArms, n: u64, replicates: u64, master_seed: u64) -> Self {
        SimConfig {
            design,
            arms,
            n,
            replicates,
            master_seed,
            delay: None,
            test_level: DEFAULT_TEST_LEVEL,
        }
    }

    pub fn with_delay(mut self, delay: DelayModel) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_HORIZON {
            return Err(Error::invalid("sim.n", format!("must be >= {MIN_HORIZON}")));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("sim.replicates", "must be >= 1"));
        }
        if !(self.test_level > 0.0 && self.test_level < 1.0) {
            return Err(Error::invalid("test.level", "must lie strictly between 0 and 1"));
        }
        if let Some(d) = &self.delay {
            d.validate()?;
            if d.arms() != self.arms.len() {
                return Err(Error::invalid(
                    "delay.response_rates",
                    format!("expected {} rates, got {}", self.arms.len(), d.arms()),
                ));
            }
        }
        self.design.build(self.arms.len()).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateDelay {
    pub terminal_pending: u64,
    pub success_gap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub stream: u64,
    pub assigned: Vec<u64>,
    /// Successes over all responses, including any still unseen at the end.
    pub successes: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<ReplicateDelay>,
}

pub fn run_replicate(cfg: &SimConfig, stream: u64) -> Result<ReplicateResult> {
    let mut design = cfg.design.build(cfg.arms.len())?;
    let mut rng = RandomStream::new(cfg.master_seed, stream);
    match &cfg.delay {
        None => {
            let state = run_trial(design.as_mut(), &cfg.arms, cfg.n, &mut rng)?;
            Ok(ReplicateResult {
                stream,
                assigned: state.assigned().to_vec(),
                successes: state.successes().to_vec(),
                delay: None,
            })
        }
        Some(model) => {
            let (state, stats) = run_delayed_trial(design.as_mut(), &cfg.arms, model, cfg.n, &mut rng)?;
            if stats.audit.causality_violations + stats.audit.conservation_violations > 0 {
                return Err(Error::Domain(format!("delay audit failed on stream {stream}: {:?}", stats.audit)));
            }
            Ok(ReplicateResult {
                stream,
                assigned: state.assigned().to_vec(),
                successes: stats.total_successes.clone(),
                delay: Some(ReplicateDelay {
                    terminal_pending: stats.terminal_pending_total(),
                    success_gap: stats.terminal_success_gap_total(),
                }),
            })
        }
    }
}

/// Replicates for streams `streams`, in parallel, returned in stream order.
pub fn run_replicates(cfg: &SimConfig, streams: std::ops::Range<u64>) -> Result<Vec<ReplicateResult>> {
    cfg.validate()?;
    streams.into_par_iter().map(|s| run_replicate(cfg, s)).collect()
}

/// Per-replicate results of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub config: SimConfig,
    pub replicates: Vec<ReplicateResult>,
}

impl Study {
    pub fn run(cfg: &SimConfig) -> Result<Study> {
        Self::run_streams(cfg, 0..cfg.replicates)
    }

    pub fn run_streams(cfg: &SimConfig, streams: std::ops::Range<u64>) -> Result<Study> {
        Ok(Study {
            config: cfg.clone(),
            replicates: run_replicates(cfg, streams)?,
        })
    }

    /// Combines two partial studies of the same configuration.
    pub fn merge(mut self, other: Study) -> Result<Study> {
        let mut a = self.config.clone();
        let mut b = other.config.clone();
        a.replicates = 0;
        b.replicates = 0;
        if a != b {
            return Err(Error::Domain("cannot merge studies of different configurations".into()));
        }
        self.replicates.extend(other.replicates);
        self.replicates.sort_by_key(|r| r.stream);
        if self.replicates.windows(2).any(|w| w[0].stream == w[1].stream) {
            return Err(Error::Domain("cannot merge studies sharing a stream".into()));
        }
        self.config.replicates = self.replicates.len() as u64;
        Ok(self)
    }

    pub fn report(&self) -> Result<StudyReport> {
        StudyReport::build(&self.config, &self.replicates)
    }
}

pub fn run_study(cfg: &SimConfig) -> Result<StudyReport> {
    Study::run(cfg)?.report()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.c
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut s = CompensatedSum::default();
    let mut n = 0;
    for x in xs {
        s.add(x);
        n += 1;
    }
    (if n == 0 { 0.0 } else { s.value() / n as f64 }, n)
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

fn mean_with_se(xs: &[f64]) -> Estimate {
    let (m, n) = mean(xs.iter().copied());
    if n < 2 {
        return Estimate { value: m, se: 0.0 };
    }
    let (ss, _) = mean(xs.iter().map(|x| (x - m) * (x - m)));
    let var = ss * n as f64 / (n - 1) as f64;
    Estimate {
        value: m,
        se: (var / n as f64).sqrt(),
    }
}

/// Sample covariance (denominator `R - 1`) of the rows of `xs`.
fn sample_covariance(xs: &[Vec<f64>], k: usize) -> (Vec<f64>, Matrix) {
    let r = xs.len();
    let means: Vec<f64> = (0..k).map(|j| mean(xs.iter().map(|x| x[j])).0).collect();
    let mut cov = Matrix::zeros(k, k);
    if r < 2 {
        return (means, cov);
    }
    for i in 0..k {
        for j in i..k {
            let mut s = CompensatedSum::default();
            for x in xs {
                s.add((x[i] - means[i]) * (x[j] - means[j]));
            }
            let c = s.value() / (r - 1) as f64;
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    (means, cov)
}

/// Monte Carlo standard error of a sample variance of normal data.
pub fn variance_se(sigma2: f64, replicates: u64) -> f64 {
    if replicates < 2 {
        return f64::INFINITY;
    }
    sigma2 * (2.0 / (replicates - 1) as f64).sqrt()
}

/// Two-sided Wald test of `p_1 = p_2`; fraction of replicates rejecting.
///
/// The variance uses `(S + 0.5) / (N + 1)`; the difference uses `S / N`
/// (or the corrected estimate on an arm with no subjects).
pub fn wald_power(replicates: &[ReplicateResult], level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("test.level", "must lie strictly between 0 and 1"));
    }
    if replicates.is_empty() {
        return Ok(0.0);
    }
    let z = Normal::standard().inverse_cdf(1.0 - level / 2.0);
    let mut rejected = 0u64;
    for r in replicates {
        if r.assigned.len() != 2 {
            return Err(Error::UnsupportedArity {
                what: "Wald test",
                expected: "exactly 2",
                got: r.assigned.len(),
            });
        }
        if wald_statistic(&r.assigned, &r.successes).abs() > z {
            rejected += 1;
        }
    }
    Ok(rejected as f64 / replicates.len() as f64)
}

pub fn wald_statistic(assigned: &[u64], successes: &[u64]) -> f64 {
    let corrected = |k: usize| (successes[k] as f64 + 0.5) / (assigned[k] as f64 + 1.0);
    let point = |k: usize| {
        if assigned[k] > 0 {
            successes[k] as f64 / assigned[k] as f64
        } else {
            corrected(k)
        }
    };
    let var: f64 = (0..2)
        .map(|k| {
            let p = corrected(k);
            p * (1.0 - p) / (assigned[k].max(1)) as f64
        })
        .sum();
    (point(0) - point(1)) / var.sqrt()
}

/// Mean number of failures `n - sum_k S_k` over replicates.
pub fn expected_failures(replicates: &[ReplicateResult]) -> Estimate {
    let f: Vec<f64> = replicates
        .iter()
        .map(|r| (r.assigned.iter().sum::<u64>() - r.successes.iter().sum::<u64>()) as f64)
        .collect();
    mean_with_se(&f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySummary {
    pub terminal_pending: Estimate,
    /// Mean of `|S - S^obs| / sqrt(n)` summed over arms.
    pub scaled_success_gap: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub label: String,
    pub config: SimConfig,
    pub mean_proportions: Vec<f64>,
    pub proportions_se: Vec<f64>,
    /// `n` times the sample covariance of `N_n / n`.
    pub scaled_variance: Matrix,
    /// Standard error of each diagonal entry of `scaled_variance`.
    pub scaled_variance_se: Vec<f64>,
    pub analytic: Option<AsymptoticSummary>,
    pub lower_bound: Option<LowerBound>,
    /// Empirical over analytic variance of the first arm's proportion.
    pub variance_ratio: Option<f64>,
    pub power: Option<Estimate>,
    pub expected_failures: Estimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelaySummary>,
}

impl StudyReport {
    pub fn build(cfg: &SimConfig, replicates: &[ReplicateResult]) -> Result<Self> {
        if replicates.is_empty() {
            return Err(Error::invalid("sim.replicates", "must be >= 1"));
        }
        let k = cfg.arms.len();
        let n = cfg.n as f64;
        let props: Vec<Vec<f64>> = replicates
            .iter()
            .map(|r| r.assigned.iter().map(|&c| c as f64 / n).collect())
            .collect();
        let (mean_proportions, cov) = sample_covariance(&props, k);
        let rcount = replicates.len() as u64;
        let proportions_se = cov.diagonal().iter().map(|v| (v / rcount as f64).sqrt()).collect();
        let scaled_variance = cov.scale(n);
        let scaled_variance_se = scaled_variance
            .diagonal()
            .iter()
            .map(|&s| variance_se(s, rcount))
            .collect();

        let analytic = analytic_reference(&cfg.design, &cfg.arms)?;
        let lb_target = lower_bound_target(&cfg.design);
        let lower_bound = lb_target.map(|t| lower_bound(t, cfg.arms.p())).transpose()?;
        let variance_ratio = analytic
            .as_ref()
            .and_then(|a| a.scalar())
            .filter(|s| *s > 0.0)
            .map(|s| scaled_variance[(0, 0)] / s);

        let power = if k == 2 {
            let p = wald_power(replicates, cfg.test_level)?;
            Some(Estimate {
                value: p,
                se: (p * (1.0 - p) / rcount as f64).sqrt(),
            })
        } else {
            None
        };

        let delay = if cfg.delay.is_some() {
            let pending: Vec<f64> = replicates
                .iter()
                .map(|r| r.delay.as_ref().map_or(0.0, |d| d.terminal_pending as f64))
                .collect();
            let gap: Vec<f64> = replicates
                .iter()
                .map(|r| r.delay.as_ref().map_or(0.0, |d| d.success_gap as f64 / n.sqrt()))
                .collect();
            Some(DelaySummary {
                terminal_pending: mean_with_se(&pending),
                scaled_success_gap: mean_with_se(&gap),
            })
        } else {
            None
        };

        Ok(StudyReport {
            label: cfg.design.label(),
            config: cfg.clone(),
            mean_proportions,
            proportions_se,
            scaled_variance,
            scaled_variance_se,
            analytic,
            lower_bound,
            variance_ratio,
            power,
            expected_failures: expected_failures(replicates),
            delay,
        })
    }

    pub fn csv_row(&self) -> CsvRow {
        CsvRow {
            label: self.label.clone(),
            kind: self.config.design.kind().to_string(),
            p: self
                .config
                .arms
                .p()
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            n: self.config.n,
            replicates: self.config.replicates,
            seed: self.config.master_seed,
            v_hat: self.mean_proportions[0],
            v_hat_se: self.proportions_se[0],
            v_analytic: self.analytic.as_ref().map(|a| a.v[0]),
            sigma2_hat: self.scaled_variance[(0, 0)],
            sigma2_hat_se: self.scaled_variance_se[0],
            sigma2_analytic: self.analytic.as_ref().and_then(|a| a.scalar()),
            ratio: self.variance_ratio,
            lower_bound: self.lower_bound.as_ref().map(|l| l.scalar()),
            power: self.power.map(|p| p.value),
            power_se: self.power.map(|p| p.se),
            failures: self.expected_failures.value,
            failures_se: self.expected_failures.se,
        }
    }
}

/// One CSV line per study; columns refer to the first arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub label: String,
    pub kind: String,
    pub p: String,
    pub n: u64,
    pub replicates: u64,
    pub seed: u64,
    pub v_hat: f64,
    pub v_hat_se: f64,
    pub v_analytic: Option<f64>,
    pub sigma2_hat: f64,
    pub sigma2_hat_se: f64,
    pub sigma2_analytic: Option<f64>,
    pub ratio: Option<f64>,
    pub lower_bound: Option<f64>,
    pub power: Option<f64>,
    pub power_se: Option<f64>,
    pub failures: f64,
    pub failures_se: f64,
}

pub const CSV_COLUMNS: [&str; 18] = [
    "label",
    "kind",
    "p",
    "n",
    "replicates",
    "seed",
    "v_hat",
    "v_hat_se",
    "v_analytic",
    "sigma2_hat",
    "sigma2_hat_se",
    "sigma2_analytic",
    "ratio",
    "lower_bound",
    "power",
    "power_se",
    "failures",
    "failures_se",
];
