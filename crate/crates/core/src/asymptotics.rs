//! Closed-form limiting proportions and asymptotic (co)variances of
//! `sqrt(n) (N_n / n - v)`.

use serde::{Deserialize, Serialize};

use crate::designs::dbcd::dbcd_variance;
use crate::designs::markov::{mcad_stationary, mcad_variance, ChainCoefficients, MCADParams};
use crate::designs::urn::{seu_design_matrix, spectral, wei_design_matrix};
use crate::designs::DesignSpec;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::targets::{fisher_bernoulli, TargetAllocation};
use crate::trial::{BernoulliArms, MAX_ARMS};

pub use crate::designs::dbcd::dbcd_variance as var_dbcd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Normal,
    DegenerateOrUnknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticSummary {
    pub v: Vec<f64>,
    /// Covariance matrix; `None` when no closed form is available.
    pub sigma2: Option<Matrix>,
    pub regime: Regime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AsymptoticSummary {
    fn normal(v: Vec<f64>, sigma2: Matrix) -> Self {
        AsymptoticSummary {
            v,
            sigma2: Some(sigma2),
            regime: Regime::Normal,
            note: None,
        }
    }

    /// Variance of the first arm's proportion.
    pub fn scalar(&self) -> Option<f64> {
        self.sigma2.as_ref().map(|m| m[(0, 0)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub sigma: Matrix,
}

impl LowerBound {
    pub fn scalar(&self) -> f64 {
        self.sigma[(0, 0)]
    }
}

fn two_arm(p: &[f64], what: &'static str) -> Result<(f64, f64)> {
    if p.len() != 2 {
        return Err(Error::UnsupportedArity {
            what,
            expected: "exactly 2",
            got: p.len(),
        });
    }
    interior(p)?;
    Ok((p[0], p[1]))
}

fn interior(p: &[f64]) -> Result<()> {
    if p.len() < 2 || p.len() > MAX_ARMS {
        return Err(Error::invalid("arms.p", format!("need between 2 and {MAX_ARMS} arms")));
    }
    match p.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
        Some(bad) => Err(Error::Domain(format!("success probability {bad} is not inside (0, 1)"))),
        None => Ok(()),
    }
}

/// Two-arm covariance from the variance of the first proportion.
fn two_arm_matrix(s: f64) -> Matrix {
    Matrix::from_rows(&[vec![s, -s], vec![-s, s]])
}

/// Play-the-winner: `v_1 = q_2 / (q_1 + q_2)`,
/// `sigma^2 = q_1 q_2 (p_1 + p_2) / (q_1 + q_2)^3`.
pub fn var_pw(p: &[f64]) -> Result<AsymptoticSummary> {
    let (p1, p2) = two_arm(p, "play-the-winner")?;
    let (q1, q2) = (1.0 - p1, 1.0 - p2);
    let s = q1 + q2;
    let sigma2 = q1 * q2 * (p1 + p2) / (s * s * s);
    Ok(AsymptoticSummary::normal(vec![q2 / s, q1 / s], two_arm_matrix(sigma2)))
}

/// Randomized play-the-winner; asymptotically normal only when `q_1 + q_2 > 1/2`.
pub fn var_rpw(p: &[f64]) -> Result<AsymptoticSummary> {
    let (p1, p2) = two_arm(p, "randomized play-the-winner")?;
    let (q1, q2) = (1.0 - p1, 1.0 - p2);
    let s = q1 + q2;
    let v = vec![q2 / s, q1 / s];
    if s > 0.5 {
        let sigma2 = q1 * q2 * (5.0 - 2.0 * s) / ((2.0 * s - 1.0) * s * s);
        Ok(AsymptoticSummary::normal(v, two_arm_matrix(sigma2)))
    } else {
        Ok(AsymptoticSummary {
            v,
            sigma2: None,
            regime: Regime::DegenerateOrUnknown,
            note: Some("unknown: q1+q2<1/2".to_string()),
        })
    }
}

/// Drop-the-loser:
/// `(I - v^T 1) diag(v_k p_k / q_k) (I - 1^T v)` with `v_k ∝ 1 / q_k`.
pub fn var_dl(p: &[f64]) -> Result<AsymptoticSummary> {
    interior(p)?;
    let v = TargetAllocation::UrnProportion.rho(p)?;
    let k = p.len();
    let d: Vec<f64> = v.iter().zip(p).map(|(vk, pk)| vk * pk / (1.0 - pk)).collect();
    let mut a = Matrix::identity(k);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] -= v[j];
        }
    }
    let sigma = a.transpose().matmul(&Matrix::diag(&d)).matmul(&a);
    Ok(AsymptoticSummary::normal(v, sigma))
}

/// Two-arm Markov chain design composed from `p` and the stay probabilities.
pub fn var_mcad(p: &[f64], params: &MCADParams) -> Result<AsymptoticSummary> {
    let (p1, p2) = two_arm(p, "Markov chain design")?;
    let c = ChainCoefficients::compose(p1, p2, params);
    let mu = mcad_stationary(&c)?;
    let s = mcad_variance(&c)?;
    Ok(AsymptoticSummary::normal(vec![mu, 1.0 - mu], two_arm_matrix(s)))
}

/// Information lower bound
/// `Sigma_LB = (d rho/d theta)^T diag(1 / (rho_k I_k)) (d rho/d theta)`.
pub fn lower_bound(target: TargetAllocation, p: &[f64]) -> Result<LowerBound> {
    interior(p)?;
    let rho = target.rho(p)?;
    let grad = target.grad_rho(p)?;
    let inv_info: Vec<f64> = p
        .iter()
        .zip(&rho)
        .map(|(&pk, &rk)| fisher_bernoulli(pk).map(|i| 1.0 / (rk * i)))
        .collect::<Result<_>>()?;
    let d = grad.matrix();
    let sigma = d.transpose().matmul(&Matrix::diag(&inv_info)).matmul(d);
    Ok(LowerBound { sigma })
}

/// Two-arm closed forms of the lower bound for the three built-in targets.
pub fn table1_closed_form(target: TargetAllocation, p: &[f64]) -> Result<f64> {
    let (p1, p2) = two_arm(p, "closed-form lower bound")?;
    let (q1, q2) = (1.0 - p1, 1.0 - p2);
    Ok(match target {
        TargetAllocation::UrnProportion => q1 * q2 * (p1 + p2) / (q1 + q2).powi(3),
        TargetAllocation::Rsihr => {
            let s = p1.sqrt() + p2.sqrt();
            (p2 * q1 / p1.sqrt() + p1 * q2 / p2.sqrt()) / (4.0 * s.powi(3))
        }
        TargetAllocation::Neyman => {
            let (a, b) = ((p1 * q1).sqrt(), (p2 * q2).sqrt());
            let s = a + b;
            (p2 * q2 * (1.0 - 2.0 * p1).powi(2) / a + p1 * q1 * (1.0 - 2.0 * p2).powi(2) / b)
                / (4.0 * s.powi(3))
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariabilityModel {
    Seu,
    Gdl,
    Dbcd,
}

/// Asymptotic variability of targeting designs that share the limit `rho`:
/// SEU `diag(rho) - rho^T rho + 6 Sigma_LB`, GDL `2 Sigma_LB`,
/// DBCD `(diag(rho) - rho^T rho) / (1 + 2g) + (2 + 2g) / (1 + 2g) Sigma_LB`.
pub fn table2_variability(
    model: VariabilityModel,
    target: TargetAllocation,
    p: &[f64],
    gamma: Option<f64>,
) -> Result<Matrix> {
    let rho = target.rho(p)?;
    let lb = lower_bound(target, p)?.sigma;
    let multinomial = Matrix::diag(&rho).sub(&Matrix::outer(&rho, &rho));
    Ok(match model {
        VariabilityModel::Seu => multinomial.add(&lb.scale(6.0)),
        VariabilityModel::Gdl => lb.scale(2.0),
        VariabilityModel::Dbcd => {
            let g = gamma.ok_or_else(|| Error::invalid("dbcd.gamma", "required for the DBCD variability"))?;
            if !(g >= 0.0) {
                return Err(Error::invalid("dbcd.gamma", "must be >= 0"));
            }
            if g.is_infinite() {
                lb
            } else {
                multinomial
                    .scale(1.0 / (1.0 + 2.0 * g))
                    .add(&lb.scale((2.0 + 2.0 * g) / (1.0 + 2.0 * g)))
            }
        }
    })
}

/// Two-arm closed forms of the DBCD variance for the three built-in targets.
pub fn dbcd_closed_form(target: TargetAllocation, p: &[f64], gamma: f64) -> Result<f64> {
    let (p1, p2) = two_arm(p, "closed-form DBCD variance")?;
    let (q1, q2) = (1.0 - p1, 1.0 - p2);
    let g = 1.0 + 2.0 * gamma;
    Ok(match target {
        TargetAllocation::UrnProportion => {
            let s = (q1 + q2).powi(3);
            q1 * q2 * (p1 + p2) / s + 2.0 * q1 * q2 / (g * s)
        }
        TargetAllocation::Neyman => {
            let (a, b) = ((p1 * q1).sqrt(), (p2 * q2).sqrt());
            let s = a + b;
            (a * b) / (g * s * s)
                + (1.0 + gamma) / (2.0 * g * s.powi(3))
                    * (p2 * q2 * (q1 - p1).powi(2) / a + p1 * q1 * (q2 - p2).powi(2) / b)
        }
        TargetAllocation::Rsihr => {
            let s = p1.sqrt() + p2.sqrt();
            (p1 * p2).sqrt() / (g * s * s)
                + (1.0 + gamma) / (2.0 * g * s.powi(3)) * (p2 * q1 / p1.sqrt() + p1 * q2 / p2.sqrt())
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkedExample {
    pub target: TargetAllocation,
    pub gamma: f64,
    pub closed_form: f64,
    pub general: f64,
    pub abs_diff: f64,
}

/// Evaluates the two-arm DBCD closed forms next to the general matrix formula.
pub fn worked_examples(p: &[f64], gamma: f64) -> Result<Vec<WorkedExample>> {
    TargetAllocation::ALL
        .iter()
        .map(|&target| {
            let closed_form = dbcd_closed_form(target, p, gamma)?;
            let general = dbcd_variance(target, p, gamma)?[(0, 0)];
            Ok(WorkedExample {
                target,
                gamma,
                closed_form,
                general,
                abs_diff: (closed_form - general).abs(),
            })
        })
        .collect()
}

/// The target whose lower bound a design is measured against: its own
/// target for DBCD and RBCD, the urn proportion for PW and the urn designs
/// that converge to it.
pub fn lower_bound_target(spec: &DesignSpec) -> Option<TargetAllocation> {
    match spec {
        DesignSpec::Dbcd { target, .. } | DesignSpec::Rbcd { target, .. } => Some(*target),
        DesignSpec::Pw | DesignSpec::Rpw { .. } | DesignSpec::Wei { .. } | DesignSpec::Dl { .. } => {
            Some(TargetAllocation::UrnProportion)
        }
        _ => None,
    }
}

/// The analytic reference a simulated design should be compared against.
///
/// `Ok(None)` for designs without a known limit at these parameters.
pub fn analytic_reference(spec: &DesignSpec, arms: &BernoulliArms) -> Result<Option<AsymptoticSummary>> {
    let p = arms.p();
    Ok(Some(match spec {
        DesignSpec::Pw => var_pw(p)?,
        DesignSpec::Cr => var_mcad(p, &MCADParams::COMPLETE_RANDOMIZATION)?,
        DesignSpec::Mcad { params } => var_mcad(p, params)?,
        DesignSpec::Rpw { .. } => var_rpw(p)?,
        DesignSpec::Wei { .. } => {
            if p.len() == 2 {
                var_rpw(p)?
            } else {
                let s = spectral(&wei_design_matrix(p)?)?;
                spectral_summary(s.v, s.normality_regime, s.lambda)
            }
        }
        DesignSpec::Seu { .. } => {
            let s = spectral(&seu_design_matrix(p, p)?)?;
            spectral_summary(s.v, s.normality_regime, s.lambda)
        }
        DesignSpec::Dl { .. } => var_dl(p)?,
        DesignSpec::Dbcd { target, gamma, .. } => {
            AsymptoticSummary::normal(target.rho(p)?, dbcd_variance(*target, p, *gamma)?)
        }
        DesignSpec::Rbcd { target, .. } => {
            AsymptoticSummary::normal(target.rho(p)?, lower_bound(*target, p)?.sigma)
        }
    }))
}

fn spectral_summary(v: Vec<f64>, normal: bool, lambda: f64) -> AsymptoticSummary {
    AsymptoticSummary {
        v,
        sigma2: None,
        regime: if normal { Regime::Normal } else { Regime::DegenerateOrUnknown },
        note: Some(format!("lambda={lambda:.6}; no closed-form covariance")),
    }
}
