//! Target allocation proportions for binary arms.
//!
//! Each built-in target is a normalized per-arm weight
//! `rho_k = w(p_k) / sum_j w(p_j)`, so the gradient has the closed form
//! `d rho_j / d p_k = w'(p_k) / W * (delta_jk - rho_j)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetAllocation {
    /// `(1/q_k) / sum_j (1/q_j)`, the limit shared by PW, RPW, Wei's urn and DL.
    #[serde(rename = "urn")]
    UrnProportion,
    /// `sqrt(p_k q_k) / sum_j sqrt(p_j q_j)`.
    Neyman,
    /// `sqrt(p_1) / (sqrt(p_1) + sqrt(p_2))`, two arms only.
    Rsihr,
}

impl TargetAllocation {
    pub const ALL: [TargetAllocation; 3] = [
        TargetAllocation::UrnProportion,
        TargetAllocation::Neyman,
        TargetAllocation::Rsihr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TargetAllocation::UrnProportion => "urn",
            TargetAllocation::Neyman => "neyman",
            TargetAllocation::Rsihr => "rsihr",
        }
    }

    pub fn supports(self, arms: usize) -> bool {
        match self {
            TargetAllocation::Rsihr => arms == 2,
            _ => arms >= 2,
        }
    }

    fn check(self, p: &[f64]) -> Result<()> {
        if !self.supports(p.len()) {
            return Err(Error::UnsupportedArity {
                what: "rsihr target",
                expected: "exactly 2",
                got: p.len(),
            });
        }
        if let Some(bad) = p.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
            return Err(Error::Domain(format!(
                "success probability {bad} is not inside (0, 1)"
            )));
        }
        Ok(())
    }

    pub(crate) fn weight(self, p: f64) -> f64 {
        match self {
            TargetAllocation::UrnProportion => 1.0 / (1.0 - p),
            TargetAllocation::Neyman => (p * (1.0 - p)).sqrt(),
            TargetAllocation::Rsihr => p.sqrt(),
        }
    }

    fn weight_derivative(self, p: f64) -> f64 {
        match self {
            TargetAllocation::UrnProportion => 1.0 / ((1.0 - p) * (1.0 - p)),
            TargetAllocation::Neyman => (1.0 - 2.0 * p) / (2.0 * (p * (1.0 - p)).sqrt()),
            TargetAllocation::Rsihr => 0.5 / p.sqrt(),
        }
    }

    /// The proportion vector `rho(p)`.
    pub fn rho(self, p: &[f64]) -> Result<Vec<f64>> {
        self.check(p)?;
        let w: Vec<f64> = p.iter().map(|&x| self.weight(x)).collect();
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| x / total).collect())
    }

    /// Analytic gradient, see [`TargetGradient`].
    pub fn grad_rho(self, p: &[f64]) -> Result<TargetGradient> {
        let rho = self.rho(p)?;
        let total: f64 = p.iter().map(|&x| self.weight(x)).sum();
        let k = p.len();
        let mut d = Matrix::zeros(k, k);
        for (param, &pk) in p.iter().enumerate() {
            let scale = self.weight_derivative(pk) / total;
            for (comp, &rj) in rho.iter().enumerate() {
                let delta = if comp == param { 1.0 } else { 0.0 };
                d[(param, comp)] = scale * (delta - rj);
            }
        }
        Ok(TargetGradient(d))
    }
}

impl fmt::Display for TargetAllocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetAllocation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "urn" => Ok(TargetAllocation::UrnProportion),
            "neyman" => Ok(TargetAllocation::Neyman),
            "rsihr" => Ok(TargetAllocation::Rsihr),
            other => Err(Error::Unknown {
                what: "target",
                name: other.to_string(),
            }),
        }
    }
}

/// `d rho / d theta` with rows indexed by parameter and columns by
/// proportion component: entry `(k, j)` is `d rho_j / d p_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGradient(pub Matrix);

impl TargetGradient {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn get(&self, component: usize, param: usize) -> f64 {
        self.0[(param, component)]
    }
}

/// Fisher information `1 / (p q)` of one Bernoulli observation.
pub fn fisher_bernoulli(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "Fisher information undefined at p = {p}"
        )));
    }
    Ok(1.0 / (p * (1.0 - p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finite_difference(t: TargetAllocation, p: &[f64], comp: usize, param: usize) -> f64 {
        let h = 1e-6;
        let mut up = p.to_vec();
        let mut dn = p.to_vec();
        up[param] += h;
        dn[param] -= h;
        (t.rho(&up).unwrap()[comp] - t.rho(&dn).unwrap()[comp]) / (2.0 * h)
    }

    #[test]
    fn rho_examples() {
        let n = TargetAllocation::Neyman.rho(&[0.3, 0.3]).unwrap();
        assert_eq!(n, vec![0.5, 0.5]);
        let u = TargetAllocation::UrnProportion.rho(&[0.7, 0.5]).unwrap();
        assert!((u[0] - 0.625).abs() < 1e-15 && (u[1] - 0.375).abs() < 1e-15);
        let r = TargetAllocation::Rsihr.rho(&[0.64, 0.36]).unwrap();
        assert!((r[0] - 0.8 / 1.4).abs() < 1e-15);
        assert!((r[1] - 0.6 / 1.4).abs() < 1e-15);
    }

    #[test]
    fn rsihr_rejects_three_arms() {
        assert!(matches!(
            TargetAllocation::Rsihr.rho(&[0.5, 0.5, 0.5]),
            Err(Error::UnsupportedArity { .. })
        ));
    }

    #[test]
    fn urn_gradient_example() {
        let g = TargetAllocation::UrnProportion.grad_rho(&[0.7, 0.5]).unwrap();
        assert!((g.get(0, 0) - 0.78125).abs() < 1e-12);
        assert!((g.get(0, 1) + 0.46875).abs() < 1e-12);
        let fd = finite_difference(TargetAllocation::UrnProportion, &[0.7, 0.5], 0, 0);
        assert!((fd - 0.78125).abs() < 1e-6);
    }

    #[test]
    fn neyman_gradient_vanishes_at_half() {
        let g = TargetAllocation::Neyman.grad_rho(&[0.5, 0.5]).unwrap();
        assert_eq!(g.get(0, 0), 0.0);
    }

    #[test]
    fn fisher_examples() {
        assert_eq!(fisher_bernoulli(0.5).unwrap(), 4.0);
        assert!((fisher_bernoulli(0.7).unwrap() - 1.0 / 0.21).abs() < 1e-12);
        assert!((fisher_bernoulli(0.3).unwrap() - fisher_bernoulli(0.7).unwrap()).abs() < 1e-12);
        assert!(fisher_bernoulli(0.0).is_err());
        assert!(fisher_bernoulli(1.0).is_err());
    }

    #[test]
    fn names_parse_case_insensitively() {
        assert_eq!("NEYMAN".parse::<TargetAllocation>().unwrap(), TargetAllocation::Neyman);
        assert_eq!("Urn".parse::<TargetAllocation>().unwrap(), TargetAllocation::UrnProportion);
        assert!("bogus".parse::<TargetAllocation>().is_err());
    }

    fn interior() -> impl Strategy<Value = f64> {
        0.02f64..0.98
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rho_sums_to_one(p in proptest::collection::vec(interior(), 2..6)) {
            for t in TargetAllocation::ALL {
                if !t.supports(p.len()) { continue; }
                let r = t.rho(&p).unwrap();
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                prop_assert!(r.iter().all(|&x| x > 0.0 && x < 1.0));
            }
        }

        #[test]
        fn gradient_matches_finite_differences(p in proptest::collection::vec(interior(), 2..5)) {
            for t in TargetAllocation::ALL {
                if !t.supports(p.len()) { continue; }
                let g = t.grad_rho(&p).unwrap();
                for param in 0..p.len() {
                    let mut col = 0.0;
                    for comp in 0..p.len() {
                        let a = g.get(comp, param);
                        let fd = finite_difference(t, &p, comp, param);
                        prop_assert!((a - fd).abs() <= 1e-6 * a.abs().max(1.0),
                            "{} comp {} param {}: {} vs {}", t, comp, param, a, fd);
                        col += a;
                    }
                    prop_assert!(col.abs() < 1e-12);
                }
            }
        }

        #[test]
        fn rsihr_and_neyman_agree_on_equal_arms(p in interior()) {
            let a = TargetAllocation::Rsihr.rho(&[p, p]).unwrap();
            let b = TargetAllocation::Neyman.rho(&[p, p]).unwrap();
            prop_assert!((a[0] - b[0]).abs() < 1e-14);
            prop_assert!((a[0] - 0.5).abs() < 1e-14);
        }

        #[test]
        fn neyman_favours_arm_with_larger_variance(a in interior(), b in interior()) {
            // reflect into the region p1 > p2, p1 + p2 > 1
            let (hi, lo) = (a.max(b), a.min(b));
            let (p1, p2) = if hi + lo > 1.0 { (hi, lo) } else { (1.0 - lo, 1.0 - hi) };
            prop_assume!(p1 > p2 && p1 + p2 > 1.0);
            let r = TargetAllocation::Neyman.rho(&[p1, p2]).unwrap();
            let v1 = p1 * (1.0 - p1);
            let v2 = p2 * (1.0 - p2);
            prop_assume!((v1 - v2).abs() > 1e-9);
            prop_assert_eq!(r[0] < 0.5, v1 < v2);
        }
    }
}
