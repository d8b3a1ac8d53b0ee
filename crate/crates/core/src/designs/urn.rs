//! Generalized Pólya urn designs: randomized play-the-winner, Wei's
//! K-treatment urn and the sequential estimation-adjusted (SEU) urn.

use serde::{Deserialize, Serialize};

use super::Design;
use crate::error::{Error, Result};
use crate::linalg::{stationary_vector, Matrix};
use crate::rng::RandomStream;
use crate::trial::{Assignment, EstimatorScheme, Outcome, ParamEstimate, TrialState};

/// Largest initial ball count of any type; keeps `+1` updates exact in f64.
pub const MAX_INITIAL_BALLS: f64 = 1e12;

/// Ball counts by type; fractional counts are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrnState {
    pub y: Vec<f64>,
}

impl UrnState {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::invalid("urn.initial", "need at least two ball types"));
        }
        if y.iter().any(|&c| !(0.0..=MAX_INITIAL_BALLS).contains(&c)) {
            return Err(Error::invalid("urn.initial", "ball counts must lie in [0, 1e12]"));
        }
        if y.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("urn.initial", "urn must contain at least one ball"));
        }
        Ok(UrnState { y })
    }

    pub fn uniform(arms: usize) -> Self {
        UrnState { y: vec![1.0; arms] }
    }

    pub fn total(&self) -> f64 {
        self.y.iter().sum()
    }

    pub fn proportions(&self) -> Vec<f64> {
        let t = self.total();
        self.y.iter().map(|c| c / t).collect()
    }
}

/// Draws a ball with replacement: arm `k` with probability `Y_k / |Y|`.
pub fn draw_arm(urn: &UrnState, rng: &mut RandomStream) -> Result<Assignment> {
    rng.weighted_index(&urn.y)
        .map(Assignment)
        .ok_or(Error::ExtinctUrn)
}

/// Randomized play-the-winner: a success on `k` or a failure on the other
/// arm adds a type-`k` ball.
pub fn rpw_update(urn: &mut UrnState, arm: Assignment, outcome: Outcome) {
    let k = if outcome.success { arm } else { arm.other() };
    urn.y[k.index()] += 1.0;
}

/// Wei's urn: success adds one ball of the treated type, failure adds
/// `1/(K-1)` balls of every other type.
pub fn wei_update(urn: &mut UrnState, arm: Assignment, outcome: Outcome) {
    let k = urn.y.len();
    if outcome.success {
        urn.y[arm.index()] += 1.0;
    } else {
        let share = 1.0 / (k - 1) as f64;
        for (j, c) in urn.y.iter_mut().enumerate() {
            if j != arm.index() {
                *c += share;
            }
        }
    }
}

/// SEU urn: success adds one ball of the treated type; failure on `k` adds
/// `p_j / sum_{i != k} p_i` balls of each type `j != k`.
pub fn seu_update(urn: &mut UrnState, arm: Assignment, outcome: Outcome, estimate: &ParamEstimate) {
    if outcome.success {
        urn.y[arm.index()] += 1.0;
        return;
    }
    let others: f64 = estimate
        .p_hat
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != arm.index())
        .map(|(_, p)| p)
        .sum();
    for (j, c) in urn.y.iter_mut().enumerate() {
        if j != arm.index() {
            *c += estimate.p_hat[j] / others;
        }
    }
}

/// Expected ball-addition matrix; every row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix(Matrix);

impl DesignMatrix {
    pub fn new(h: Matrix) -> Result<Self> {
        if h.rows() != h.cols() || h.rows() < 2 {
            return Err(Error::Domain("design matrix must be square with K >= 2".into()));
        }
        for i in 0..h.rows() {
            if h.row(i).iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::Domain(format!("design matrix row {i} has a negative entry")));
            }
            let sum: f64 = h.row(i).iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::NotStochastic { row: i, sum });
            }
        }
        Ok(DesignMatrix(h))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// `h_kk = p_k`, `h_kj = q_k / (K-1)`. Accepts the closed interval `[0, 1]`.
pub fn wei_design_matrix(p: &[f64]) -> Result<DesignMatrix> {
    let k = p.len();
    let mut h = Matrix::zeros(k, k);
    for (i, &pi) in p.iter().enumerate() {
        for j in 0..k {
            h[(i, j)] = if i == j { pi } else { (1.0 - pi) / (k - 1) as f64 };
        }
    }
    DesignMatrix::new(h)
}

/// Design matrix of the SEU urn evaluated at `x`:
/// `h_kk = p_k`, `h_kj = q_k x_j / sum_{i != k} x_i`.
pub fn seu_design_matrix(p: &[f64], x: &[f64]) -> Result<DesignMatrix> {
    let k = p.len();
    let mut h = Matrix::zeros(k, k);
    for (i, &pi) in p.iter().enumerate() {
        let others: f64 = x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
        for j in 0..k {
            h[(i, j)] = if i == j { pi } else { (1.0 - pi) * x[j] / others };
        }
    }
    DesignMatrix::new(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralInfo {
    /// Left principal eigenvector, summing to one.
    pub v: Vec<f64>,
    /// Largest real part among the non-principal eigenvalues.
    pub lambda: f64,
    /// `lambda < 1/2`; the boundary `lambda = 1/2` is treated as outside.
    pub normality_regime: bool,
}

pub fn spectral(h: &DesignMatrix) -> Result<SpectralInfo> {
    let m = h.matrix();
    let k = m.rows();
    let (v, lambda) = if k == 2 {
        let (a, b) = (m[(0, 0)], m[(1, 1)]);
        let lambda = a + b - 1.0;
        let s = 2.0 - a - b;
        if s <= 0.0 {
            return Err(Error::DegenerateChain);
        }
        (vec![(1.0 - b) / s, (1.0 - a) / s], lambda)
    } else {
        let mut eig = m.eigenvalues();
        let principal = eig
            .iter()
            .enumerate()
            .min_by(|(_, x), (_, y)| (**x - 1.0).norm().total_cmp(&(**y - 1.0).norm()))
            .map(|(i, _)| i)
            .expect("K >= 2 eigenvalues");
        eig.swap_remove(principal);
        let lambda = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        if lambda > 1.0 - 1e-10 {
            return Err(Error::DegenerateChain);
        }
        let v = stationary_vector(m).ok_or(Error::DegenerateChain)?;
        (v, lambda)
    };
    Ok(SpectralInfo {
        v,
        lambda,
        normality_regime: lambda < 0.5,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UrnRule {
    Rpw,
    Wei,
    Seu,
}

/// An urn design that draws with replacement and adds balls once the
/// response is observed.
#[derive(Debug, Clone)]
pub struct UrnDesign {
    rule: UrnRule,
    urn: UrnState,
}

impl UrnDesign {
    pub fn new(rule: UrnRule, urn: UrnState) -> Result<Self> {
        if rule == UrnRule::Rpw && urn.y.len() != 2 {
            return Err(Error::UnsupportedArity {
                what: "randomized play-the-winner",
                expected: "exactly 2",
                got: urn.y.len(),
            });
        }
        Ok(UrnDesign { rule, urn })
    }

    pub fn urn(&self) -> &UrnState {
        &self.urn
    }
}

impl Design for UrnDesign {
    fn arms(&self) -> usize {
        self.urn.y.len()
    }

    fn allocate(&mut self, _state: &TrialState, rng: &mut RandomStream) -> Result<Assignment> {
        draw_arm(&self.urn, rng)
    }

    fn observe(&mut self, state: &TrialState, arm: Assignment, outcome: Outcome) -> Result<()> {
        match self.rule {
            UrnRule::Rpw => rpw_update(&mut self.urn, arm, outcome),
            UrnRule::Wei => wei_update(&mut self.urn, arm, outcome),
            UrnRule::Seu => {
                let est = state.estimate(EstimatorScheme::PLUS_ONE);
                seu_update(&mut self.urn, arm, outcome, &est)
            }
        }
        Ok(())
    }

    fn next_probabilities(&self, _state: &TrialState) -> Option<Vec<f64>> {
        Some(self.urn.proportions())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frequency(y: Vec<f64>, arm: usize) -> f64 {
        let urn = UrnState::new(y).unwrap();
        let mut rng = RandomStream::new(77, 0);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| draw_arm(&urn, &mut rng).unwrap().index() == arm)
            .count();
        hits as f64 / n as f64
    }

    #[test]
    fn draw_proportional_to_counts() {
        let se = |p: f64| 3.0 * (p * (1.0 - p) / 200_000.0).sqrt();
        assert!((frequency(vec![1.0, 1.0], 0) - 0.5).abs() < se(0.5));
        assert!((frequency(vec![3.0, 1.0], 0) - 0.75).abs() < se(0.75));
        assert!((frequency(vec![0.5, 1.5], 1) - 0.75).abs() < se(0.75));
    }

    #[test]
    fn extinct_urn_rejected() {
        let urn = UrnState { y: vec![0.0, 0.0] };
        let mut rng = RandomStream::new(1, 0);
        assert_eq!(draw_arm(&urn, &mut rng), Err(Error::ExtinctUrn));
        assert!(UrnState::new(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn rpw_rule() {
        let mut u = UrnState::uniform(2);
        rpw_update(&mut u, Assignment(0), Outcome::SUCCESS);
        assert_eq!(u.y, vec![2.0, 1.0]);
        let mut u = UrnState::uniform(2);
        rpw_update(&mut u, Assignment(0), Outcome::FAILURE);
        assert_eq!(u.y, vec![1.0, 2.0]);
    }

    #[test]
    fn wei_rule() {
        let mut u = UrnState::uniform(3);
        wei_update(&mut u, Assignment(0), Outcome::FAILURE);
        assert_eq!(u.y, vec![1.0, 1.5, 1.5]);
        assert_eq!(u.total(), 4.0);
    }

    #[test]
    fn seu_rule() {
        let est = ParamEstimate {
            p_hat: vec![0.9, 0.5],
            scheme: EstimatorScheme::PLUS_ONE,
        };
        let mut u = UrnState::uniform(2);
        seu_update(&mut u, Assignment(0), Outcome::FAILURE, &est);
        assert_eq!(u.y, vec![1.0, 2.0]);

        let est = ParamEstimate {
            p_hat: vec![0.1, 0.5, 0.25],
            scheme: EstimatorScheme::PLUS_ONE,
        };
        let mut u = UrnState { y: vec![0.0; 3] };
        seu_update(&mut u, Assignment(0), Outcome::FAILURE, &est);
        assert!((u.y[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((u.y[2] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(u.y[0], 0.0);
        assert!((u.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wei_matrix_examples() {
        let h = wei_design_matrix(&[0.7, 0.5]).unwrap();
        assert_eq!(h.matrix().to_rows(), vec![vec![0.7, 0.30000000000000004], vec![0.5, 0.5]]);
        let h = wei_design_matrix(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(*h.matrix(), Matrix::identity(3));
        let h = wei_design_matrix(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(h.matrix()[(0, 1)], 0.25);
        assert_eq!(h.matrix()[(2, 1)], 0.25);
    }

    #[test]
    fn non_stochastic_rejected() {
        let m = Matrix::from_rows(&[vec![0.5, 0.4], vec![0.5, 0.5]]);
        assert!(matches!(DesignMatrix::new(m), Err(Error::NotStochastic { row: 0, .. })));
    }

    #[test]
    fn rpw_spectral_example() {
        let s = spectral(&wei_design_matrix(&[0.7, 0.5]).unwrap()).unwrap();
        assert!((s.v[0] - 0.625).abs() < 1e-12 && (s.v[1] - 0.375).abs() < 1e-12);
        assert!((s.lambda - 0.2).abs() < 1e-12);
        assert!(s.normality_regime);
        let s = spectral(&wei_design_matrix(&[0.9, 0.9]).unwrap()).unwrap();
        assert!((s.lambda - 0.8).abs() < 1e-12);
        assert!(!s.normality_regime);
    }

    #[test]
    fn wei_three_arm_symmetric() {
        let s = spectral(&wei_design_matrix(&[0.5, 0.5, 0.5]).unwrap()).unwrap();
        for x in &s.v {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        // eigenvalues 1, p - q/2, p - q/2
        assert!((s.lambda - 0.25).abs() < 1e-9);
    }

    #[test]
    fn identity_matrix_is_degenerate() {
        assert_eq!(
            spectral(&wei_design_matrix(&[1.0, 1.0, 1.0]).unwrap()),
            Err(Error::DegenerateChain)
        );
    }

    fn check_stationary(h: &DesignMatrix, s: &SpectralInfo) {
        let vh = h.matrix().left_mul(&s.v);
        for (a, b) in vh.iter().zip(&s.v) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s.v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s.v.iter().all(|&x| x >= 0.0));
    }

    proptest! {
        #[test]
        fn wei_spectral_matches_closed_form(p in proptest::collection::vec(0.01f64..0.99, 2..8)) {
            let h = wei_design_matrix(&p).unwrap();
            let s = spectral(&h).unwrap();
            let total: f64 = p.iter().map(|x| 1.0 / (1.0 - x)).sum();
            for (k, &pk) in p.iter().enumerate() {
                let expect = (1.0 / (1.0 - pk)) / total;
                prop_assert!((s.v[k] - expect).abs() < 1e-12, "{} vs {}", s.v[k], expect);
            }
            check_stationary(&h, &s);
            prop_assert_eq!(s.normality_regime, s.lambda < 0.5);
        }

        #[test]
        fn seu_spectral_is_stationary(p in proptest::collection::vec(0.05f64..0.95, 3..6)) {
            let h = seu_design_matrix(&p, &p).unwrap();
            let s = spectral(&h).unwrap();
            check_stationary(&h, &s);
        }

        #[test]
        fn wei_two_arms_is_rpw(y0 in 0.1f64..5.0, y1 in 0.1f64..5.0, arm in 0usize..2, success: bool) {
            let mut a = UrnState::new(vec![y0, y1]).unwrap();
            let mut b = a.clone();
            let o = Outcome { success };
            rpw_update(&mut a, Assignment(arm), o);
            wei_update(&mut b, Assignment(arm), o);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn every_update_adds_unit_mass(k in 2usize..6, arm_seed in 0usize..100, success: bool) {
            let arm = Assignment(arm_seed % k);
            let o = Outcome { success };
            let mut u = UrnState::uniform(k);
            wei_update(&mut u, arm, o);
            prop_assert!((u.total() - (k as f64 + 1.0)).abs() < 1e-12);
            let est = ParamEstimate { p_hat: (0..k).map(|j| 0.1 + 0.1 * j as f64).collect(), scheme: EstimatorScheme::PLUS_ONE };
            let mut u = UrnState::uniform(k);
            seu_update(&mut u, arm, o, &est);
            prop_assert!((u.total() - (k as f64 + 1.0)).abs() < 1e-12);
        }
    }
}
