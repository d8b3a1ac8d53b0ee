//! Doubly adaptive biased coin design and the two-arm fully randomized
//! biased coin design (RBCD).

use serde::{Deserialize, Serialize};

use super::Design;
use crate::asymptotics::lower_bound;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RandomStream;
use crate::targets::TargetAllocation;
use crate::trial::{Assignment, EstimatorScheme, Outcome, TrialState, MAX_ARMS};

/// Estimated targets are clamped into this band before use.
pub const TARGET_CLAMP: f64 = 1e-6;
/// Tolerance for the equality branch of the RBCD rule.
pub const RBCD_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DBCDConfig {
    pub gamma: f64,
    /// Burn-in subjects per arm.
    pub m: u64,
    pub scheme: EstimatorScheme,
}

impl DBCDConfig {
    pub fn new(gamma: f64, m: u64, scheme: EstimatorScheme) -> Result<Self> {
        let cfg = DBCDConfig { gamma, m, scheme };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("dbcd.gamma", format!("{} is not a finite value >= 0", self.gamma)));
        }
        if self.m < 1 {
            return Err(Error::invalid("dbcd.m", "burn-in must allocate at least one subject per arm"));
        }
        Ok(())
    }
}

impl Default for DBCDConfig {
    fn default() -> Self {
        DBCDConfig {
            gamma: 2.0,
            m: 2,
            scheme: EstimatorScheme::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RBCDConfig {
    pub alpha: f64,
    pub scheme: EstimatorScheme,
}

impl RBCDConfig {
    pub fn new(alpha: f64, scheme: EstimatorScheme) -> Result<Self> {
        let cfg = RBCDConfig { alpha, scheme };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("rbcd.alpha", format!("{} is not inside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

impl Default for RBCDConfig {
    fn default() -> Self {
        RBCDConfig {
            alpha: 2.0 / 3.0,
            scheme: EstimatorScheme::default(),
        }
    }
}

/// Allocation function
/// `g_k(x, y) = y_k (y_k/x_k)^gamma / sum_j y_j (y_j/x_j)^gamma`.
pub fn g_alloc(x: &[f64], y: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::Domain("allocation and target vectors differ in length".into()));
    }
    if y.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("target proportions must be positive".into()));
    }
    if gamma > 0.0 && x.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("allocation proportions must be positive when gamma > 0".into()));
    }
    let mut w: Vec<f64> = if gamma == 0.0 {
        y.to_vec()
    } else {
        x.iter()
            .zip(y)
            .map(|(&xk, &yk)| yk * pow_gamma(yk / xk, gamma))
            .collect()
    };
    let mut total: f64 = w.iter().sum();
    if total.is_infinite() {
        total = log_weights(x, y, gamma, &mut w);
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Domain("allocation function normalizer is not finite".into()));
    }
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// The weights of [`g_alloc`] divided by the largest one, computed in logs.
/// Only needed once `(y/x)^gamma` overflows. Returns their sum.
fn log_weights(x: &[f64], y: &[f64], gamma: f64, w: &mut [f64]) -> f64 {
    for ((wk, &xk), &yk) in w.iter_mut().zip(x).zip(y) {
        *wk = yk.ln() + gamma * (yk / xk).ln();
    }
    let top = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for wk in w.iter_mut() {
        *wk = (*wk - top).exp();
        total += *wk;
    }
    total
}

#[inline]
fn pow_gamma(base: f64, gamma: f64) -> f64 {
    if gamma.fract() == 0.0 && gamma <= 16.0 {
        base.powi(gamma as i32)
    } else {
        base.powf(gamma)
    }
}

/// Clamps each component into `[c, 1 - c]` and renormalizes.
pub fn clamp_target(rho: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = rho
        .iter()
        .map(|r| r.clamp(TARGET_CLAMP, 1.0 - TARGET_CLAMP))
        .collect();
    let total: f64 = clamped.iter().sum();
    clamped.into_iter().map(|r| r / total).collect()
}

/// Estimated target `rho(theta_hat)` from the observed responses in `state`.
pub fn estimated_target(state: &TrialState, target: TargetAllocation, scheme: EstimatorScheme) -> Result<Vec<f64>> {
    if !target.supports(state.arms()) {
        return Err(Error::UnsupportedArity {
            what: "rsihr target",
            expected: "exactly 2",
            got: state.arms(),
        });
    }
    let mut rho = [0.0; MAX_ARMS];
    target_into(state, target, scheme, &mut rho);
    Ok(rho[..state.arms()].to_vec())
}

/// Allocation-free version of [`estimated_target`] for arities the target
/// supports; the arithmetic is the same as `clamp_target(rho(p_hat))`.
fn target_into(state: &TrialState, target: TargetAllocation, scheme: EstimatorScheme, out: &mut [f64; MAX_ARMS]) {
    let k = state.arms();
    let mut total = 0.0;
    for (j, o) in out.iter_mut().enumerate().take(k) {
        // the estimator may sit on the boundary (raw scheme); keep it interior
        let p = scheme.apply(state, j).clamp(TARGET_CLAMP, 1.0 - TARGET_CLAMP);
        *o = target.weight(p);
        total += *o;
    }
    let mut clamped_total = 0.0;
    for o in out.iter_mut().take(k) {
        *o = (*o / total).clamp(TARGET_CLAMP, 1.0 - TARGET_CLAMP);
        clamped_total += *o;
    }
    for o in out.iter_mut().take(k) {
        *o /= clamped_total;
    }
}

/// RBCD probability of assigning arm 0 given `x = N_0 / (m - 1)` and the
/// estimated target `rho`.
pub fn rbcd_probability(x: f64, rho: f64, alpha: f64) -> f64 {
    if (x - rho).abs() <= RBCD_TIE_TOLERANCE {
        rho
    } else if x > rho {
        alpha * rho
    } else {
        1.0 - alpha * (1.0 - rho)
    }
}

/// Asymptotic covariance of `sqrt(n) (N_n/n - v)` under the DBCD:
/// `Sigma_rho + (diag(v) - v^T v + Sigma_rho) / (1 + 2 gamma)`.
pub fn dbcd_variance(target: TargetAllocation, p: &[f64], gamma: f64) -> Result<Matrix> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid("dbcd.gamma", "must be >= 0"));
    }
    let v = target.rho(p)?;
    let sigma_rho = lower_bound(target, p)?.sigma;
    let multinomial = Matrix::diag(&v).sub(&Matrix::outer(&v, &v));
    let scale = if gamma.is_infinite() { 0.0 } else { 1.0 / (1.0 + 2.0 * gamma) };
    Ok(sigma_rho.add(&multinomial.add(&sigma_rho).scale(scale)))
}

fn round_robin(state: &TrialState, per_arm: u64) -> Option<Assignment> {
    let k = state.arms() as u64;
    (state.n() < per_arm.saturating_mul(k)).then(|| Assignment((state.n() % k) as usize))
}

#[derive(Debug, Clone)]
pub struct Dbcd {
    arms: usize,
    target: TargetAllocation,
    cfg: DBCDConfig,
}

impl Dbcd {
    pub fn new(arms: usize, target: TargetAllocation, cfg: DBCDConfig) -> Result<Self> {
        cfg.validate()?;
        if !target.supports(arms) {
            return Err(Error::UnsupportedArity {
                what: "rsihr target",
                expected: "exactly 2",
                got: arms,
            });
        }
        Ok(Dbcd { arms, target, cfg })
    }

    pub fn config(&self) -> &DBCDConfig {
        &self.cfg
    }

    /// Allocation probabilities for the next subject once burn-in is over.
    pub fn probabilities(&self, state: &TrialState) -> Result<Vec<f64>> {
        let mut w = [0.0; MAX_ARMS];
        self.weights_into(state, &mut w)?;
        Ok(w[..self.arms].to_vec())
    }

    fn weights_into(&self, state: &TrialState, w: &mut [f64; MAX_ARMS]) -> Result<()> {
        let k = self.arms;
        let mut rho = [0.0; MAX_ARMS];
        target_into(state, self.target, self.cfg.scheme, &mut rho);
        let n = state.n() as f64;
        let gamma = self.cfg.gamma;
        let mut total = 0.0;
        for j in 0..k {
            w[j] = if gamma == 0.0 {
                rho[j]
            } else {
                let x = if n > 0.0 { state.assigned()[j] as f64 / n } else { 0.0 };
                if !(x > 0.0) {
                    return Err(Error::Domain("allocation proportions must be positive when gamma > 0".into()));
                }
                rho[j] * pow_gamma(rho[j] / x, gamma)
            };
            total += w[j];
        }
        if total.is_infinite() {
            let mut x = [0.0; MAX_ARMS];
            for (xj, &c) in x.iter_mut().zip(state.assigned()) {
                *xj = c as f64 / n;
            }
            total = log_weights(&x[..k], &rho[..k], gamma, &mut w[..k]);
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Domain("allocation function normalizer is not finite".into()));
        }
        for x in w.iter_mut().take(k) {
            *x /= total;
        }
        Ok(())
    }
}

impl Design for Dbcd {
    fn arms(&self) -> usize {
        self.arms
    }

    fn allocate(&mut self, state: &TrialState, rng: &mut RandomStream) -> Result<Assignment> {
        if let Some(a) = round_robin(state, self.cfg.m) {
            return Ok(a);
        }
        let mut w = [0.0; MAX_ARMS];
        self.weights_into(state, &mut w)?;
        rng.weighted_index(&w[..self.arms])
            .map(Assignment)
            .ok_or_else(|| Error::Domain("allocation probabilities have no mass".into()))
    }

    fn observe(&mut self, _state: &TrialState, _arm: Assignment, _outcome: Outcome) -> Result<()> {
        Ok(())
    }

    fn next_probabilities(&self, state: &TrialState) -> Option<Vec<f64>> {
        if let Some(a) = round_robin(state, self.cfg.m) {
            return Some(a.one_hot(self.arms).into_iter().map(f64::from).collect());
        }
        self.probabilities(state).ok()
    }

    fn estimated_target(&self, state: &TrialState) -> Option<Vec<f64>> {
        estimated_target(state, self.target, self.cfg.scheme).ok()
    }

    fn burn_in(&self) -> Option<u64> {
        Some(self.cfg.m.saturating_mul(self.arms as u64))
    }
}

/// Two-arm RBCD with a one-per-arm burn-in.
#[derive(Debug, Clone)]
pub struct Rbcd {
    target: TargetAllocation,
    cfg: RBCDConfig,
}

impl Rbcd {
    pub fn new(arms: usize, target: TargetAllocation, cfg: RBCDConfig) -> Result<Self> {
        cfg.validate()?;
        if arms != 2 {
            return Err(Error::UnsupportedArity {
                what: "randomized biased coin design",
                expected: "exactly 2",
                got: arms,
            });
        }
        Ok(Rbcd { target, cfg })
    }

    pub fn probability_first(&self, state: &TrialState) -> Result<f64> {
        let mut rho = [0.0; MAX_ARMS];
        target_into(state, self.target, self.cfg.scheme, &mut rho);
        let x = state.assigned()[0] as f64 / state.n() as f64;
        Ok(rbcd_probability(x, rho[0], self.cfg.alpha))
    }
}

impl Design for Rbcd {
    fn arms(&self) -> usize {
        2
    }

    fn allocate(&mut self, state: &TrialState, rng: &mut RandomStream) -> Result<Assignment> {
        if let Some(a) = round_robin(state, 1) {
            return Ok(a);
        }
        let p = self.probability_first(state)?;
        Ok(if rng.uniform() < p { Assignment(0) } else { Assignment(1) })
    }

    fn observe(&mut self, _state: &TrialState, _arm: Assignment, _outcome: Outcome) -> Result<()> {
        Ok(())
    }

    fn next_probabilities(&self, state: &TrialState) -> Option<Vec<f64>> {
        if let Some(a) = round_robin(state, 1) {
            return Some(a.one_hot(2).into_iter().map(f64::from).collect());
        }
        self.probability_first(state).ok().map(|p| vec![p, 1.0 - p])
    }

    fn estimated_target(&self, state: &TrialState) -> Option<Vec<f64>> {
        estimated_target(state, self.target, self.cfg.scheme).ok()
    }

    fn burn_in(&self) -> Option<u64> {
        Some(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::var_pw;
    use proptest::prelude::*;

    #[test]
    fn probabilities_agree_with_g_alloc() {
        let arms = crate::trial::BernoulliArms::new(vec![0.7, 0.5, 0.3]).unwrap();
        let mut rng = RandomStream::new(8, 0);
        for gamma in [0.0, 1.0, 2.0, 5.5, 1e4, 1e300] {
            let cfg = DBCDConfig::new(gamma, 2, EstimatorScheme::default()).unwrap();
            let mut d = Dbcd::new(3, TargetAllocation::Neyman, cfg).unwrap();
            let mut state = TrialState::new(3);
            for _ in 0..300 {
                if state.n() >= 6 {
                    let rho = estimated_target(&state, TargetAllocation::Neyman, cfg.scheme).unwrap();
                    let g = g_alloc(&state.proportions(), &rho, gamma).unwrap();
                    assert_eq!(d.probabilities(&state).unwrap(), g);
                }
                let a = d.allocate(&state, &mut rng).unwrap();
                let o = arms.draw(a, &mut rng).unwrap();
                state.record(a, o).unwrap();
            }
        }
    }

    #[test]
    fn overflowing_powers_fall_back_to_logs() {
        let y = [0.6, 0.4];
        let g = g_alloc(&[0.5, 0.5], &y, 1e300).unwrap();
        assert_eq!(g, vec![1.0, 0.0]);
        // both leading weights overflow at this gamma; their ratio is e^{-0.6}
        let x = [0.4, 0.4, 0.2];
        let y = [0.48, 0.48 * (1.0 - 1e-4), 0.2 - 0.48 * (2.0 - 1e-4) + 0.8];
        let gamma = 6000.0;
        let g = g_alloc(&x, &y, gamma).unwrap();
        let rel = |j: usize| (y[j] / y[0]) * ((y[j] / x[j]) / (y[0] / x[0])).powf(gamma);
        let g0 = 1.0 / (1.0 + rel(1) + rel(2));
        assert!((g[0] - g0).abs() < 1e-12 && (g[1] - g0 * rel(1)).abs() < 1e-12, "{g:?}");
        assert!(g[1] > 0.5 * g[0]);
        let y = [0.6, 0.4];
        let g = g_alloc(&[0.2, 0.8], &y, 1e6).unwrap();
        assert_eq!(g, vec![1.0, 0.0]);
    }

    #[test]
    fn g_examples() {
        let y = [0.6, 0.4];
        assert_eq!(g_alloc(&y, &y, 3.0).unwrap(), vec![0.6, 0.4]);
        assert_eq!(g_alloc(&[0.9, 0.1], &y, 0.0).unwrap(), vec![0.6, 0.4]);
        let g = g_alloc(&[0.7, 0.3], &y, 2.0).unwrap();
        // unnormalized 0.6 (6/7)^2 = 0.440816..., 0.4 (4/3)^2 = 0.711111...
        let a = 0.6 * (6.0f64 / 7.0).powi(2);
        let b = 0.4 * (4.0f64 / 3.0).powi(2);
        assert!((g[0] - a / (a + b)).abs() < 1e-15);
        assert!((g[0] - 0.38268).abs() < 1e-5);
        assert!((g[1] - 0.61732).abs() < 1e-5);
    }

    #[test]
    fn g_rejects_empty_arm() {
        assert!(g_alloc(&[0.0, 1.0], &[0.5, 0.5], 2.0).is_err());
        assert!(g_alloc(&[0.0, 1.0], &[0.5, 0.5], 0.0).is_ok());
    }

    #[test]
    fn burn_in_round_robin() {
        let mut d = Dbcd::new(2, TargetAllocation::Rsihr, DBCDConfig::default()).unwrap();
        let mut st = TrialState::new(2);
        let mut rng = RandomStream::new(0, 0);
        let mut seq = Vec::new();
        for _ in 0..4 {
            let a = d.allocate(&st, &mut rng).unwrap();
            seq.push(a.index());
            st.record(a, Outcome::SUCCESS).unwrap();
        }
        assert_eq!(seq, vec![0, 1, 0, 1]);
    }

    #[test]
    fn gamma_zero_follows_estimated_target() {
        let cfg = DBCDConfig::new(0.0, 2, EstimatorScheme::default()).unwrap();
        let d = Dbcd::new(2, TargetAllocation::Neyman, cfg).unwrap();
        let mut st = TrialState::new(2);
        for i in 0..10 {
            st.record(Assignment(0), Outcome { success: i < 7 }).unwrap();
        }
        for i in 0..4 {
            st.record(Assignment(1), Outcome { success: i < 1 }).unwrap();
        }
        let rho = estimated_target(&st, TargetAllocation::Neyman, cfg.scheme).unwrap();
        assert_eq!(d.next_probabilities(&st).unwrap(), rho);
    }

    #[test]
    fn overrepresented_arm_is_underweighted() {
        let d = Dbcd::new(2, TargetAllocation::UrnProportion, DBCDConfig::default()).unwrap();
        let mut st = TrialState::new(2);
        for _ in 0..30 {
            st.record(Assignment(0), Outcome::SUCCESS).unwrap();
        }
        for _ in 0..5 {
            st.record(Assignment(1), Outcome::SUCCESS).unwrap();
        }
        let rho = d.estimated_target(&st).unwrap();
        let x = st.proportions();
        let p = d.next_probabilities(&st).unwrap();
        for k in 0..2 {
            if x[k] > rho[k] {
                assert!(p[k] < rho[k]);
            }
        }
    }

    #[test]
    fn rbcd_branches() {
        let rho = 0.5;
        let alpha = 2.0 / 3.0;
        assert_eq!(rbcd_probability(0.5, rho, alpha), 0.5);
        assert!((rbcd_probability(0.6, rho, alpha) - 1.0 / 3.0).abs() < 1e-15);
        assert!((rbcd_probability(0.4, rho, alpha) - 2.0 / 3.0).abs() < 1e-15);
        let near_one = 1.0 - 1e-9;
        assert!((rbcd_probability(0.9, 0.3, near_one) - 0.3).abs() < 1e-8);
        assert!((rbcd_probability(0.1, 0.3, near_one) - 0.3).abs() < 1e-8);
    }

    #[test]
    fn rbcd_requires_two_arms() {
        assert!(Rbcd::new(3, TargetAllocation::Neyman, RBCDConfig::default()).is_err());
        assert!(RBCDConfig::new(1.0, EstimatorScheme::default()).is_err());
    }

    #[test]
    fn dbcd_variance_urn_example() {
        let v = dbcd_variance(TargetAllocation::UrnProportion, &[0.7, 0.5], 2.0).unwrap();
        let (q1, q2): (f64, f64) = (0.3, 0.5);
        let closed = q1 * q2 * 1.2 / (q1 + q2).powi(3) + 2.0 * q1 * q2 / (5.0 * (q1 + q2).powi(3));
        assert!((v[(0, 0)] - closed).abs() < 1e-12);
        assert!((v[(0, 0)] - 0.46875).abs() < 1e-12);
        let at_zero = dbcd_variance(TargetAllocation::UrnProportion, &[0.7, 0.5], 0.0).unwrap();
        assert!((at_zero[(0, 0)] - 0.9375).abs() < 1e-12);
        let inf = dbcd_variance(TargetAllocation::UrnProportion, &[0.7, 0.5], f64::INFINITY).unwrap();
        assert!((inf[(0, 0)] - var_pw(&[0.7, 0.5]).unwrap().scalar().unwrap()).abs() < 1e-12);
    }

    fn interior() -> impl Strategy<Value = f64> {
        0.02f64..0.98
    }

    proptest! {
        #[test]
        fn g_sums_to_one_and_is_permutation_equivariant(
            raw_x in proptest::collection::vec(0.05f64..1.0, 3),
            raw_y in proptest::collection::vec(0.05f64..1.0, 3),
            gamma in 0.0f64..8.0,
            shift in 1usize..3,
        ) {
            let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
            let x = norm(&raw_x);
            let y = norm(&raw_y);
            let g = g_alloc(&x, &y, gamma).unwrap();
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let rot = |v: &[f64]| (0..3).map(|i| v[(i + shift) % 3]).collect::<Vec<_>>();
            let gp = g_alloc(&rot(&x), &rot(&y), gamma).unwrap();
            for (a, b) in gp.iter().zip(rot(&g)) {
                prop_assert!((a - b).abs() < 1e-14);
            }
        }

        #[test]
        fn variance_non_increasing_in_gamma(p1 in interior(), p2 in interior(), p3 in interior()) {
            for (target, p) in [
                (TargetAllocation::UrnProportion, vec![p1, p2, p3]),
                (TargetAllocation::Neyman, vec![p1, p2, p3]),
                (TargetAllocation::Rsihr, vec![p1, p2]),
            ] {
                let mut prev: Option<Vec<f64>> = None;
                for gamma in [0.0, 0.5, 1.0, 2.0, 4.0, 16.0] {
                    let d = dbcd_variance(target, &p, gamma).unwrap().diagonal();
                    if let Some(prev) = &prev {
                        for (a, b) in d.iter().zip(prev) {
                            prop_assert!(*a <= *b + 1e-15);
                        }
                    }
                    prev = Some(d);
                }
            }
        }

        #[test]
        fn huge_gamma_reaches_lower_bound(p1 in interior(), p2 in interior()) {
            for target in TargetAllocation::ALL {
                let lb = lower_bound(target, &[p1, p2]).unwrap().sigma;
                let v = dbcd_variance(target, &[p1, p2], 1e6).unwrap();
                // the gap is exactly (rho(1 - rho) + sigma_rho^2) / (1 + 2 gamma)
                let rho = target.rho(&[p1, p2]).unwrap();
                let gap = (rho[0] * rho[1] + lb[(0, 0)]) / (1.0 + 2e6);
                prop_assert!((v[(0, 0)] - lb[(0, 0)] - gap).abs() < 1e-12);
                prop_assert!(v.max_abs_diff(&lb) <= (0.25 + lb[(0, 0)]) / (1.0 + 2e6) + 1e-15);
                let limit = dbcd_variance(target, &[p1, p2], f64::INFINITY).unwrap();
                prop_assert!(limit.max_abs_diff(&lb) < 1e-12);
            }
        }
    }
}
