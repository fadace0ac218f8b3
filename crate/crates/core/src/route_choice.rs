//! Cost-memory utilities, logit route choice, and route-flow covariances.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::network::RouteSet;

/// Smallest OD flow level used when a covariance is built from an estimate.
pub const FLOW_LEVEL_FLOOR: f64 = 1.0;

/// Default probability that a trip uses none of the enumerated routes.
pub const DEFAULT_NON_CHOICE: f64 = 0.01;

/// Sensitivities `φ_1..φ_r` to the route costs of the last `r` days.
///
/// Sign and ordering are not enforced: the sampler explores all of `ℝ^r`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiVector(Vec<f64>);

impl PhiVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("phi needs at least one component".into()));
        }
        Ok(Self(values))
    }

    /// Memory length `r`.
    pub fn memory(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<&DVector<f64>> for PhiVector {
    fn from(v: &DVector<f64>) -> Self {
        Self(v.iter().copied().collect())
    }
}

/// Observed route costs for days `first_day ..= last_day`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostHistory {
    first_day: i64,
    costs: Vec<DVector<f64>>,
}

impl CostHistory {
    /// `costs[i]` holds the cost vector of day `first_day + i`.
    pub fn new(first_day: i64, costs: Vec<DVector<f64>>) -> Result<Self> {
        if let Some(first) = costs.first() {
            for (i, c) in costs.iter().enumerate() {
                check_dim("cost history route count", first.len(), c.len())?;
                if c.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(Error::Config(format!(
                        "route costs must be positive and finite (day {})",
                        first_day + i as i64
                    )));
                }
            }
        }
        Ok(Self { first_day, costs })
    }

    pub fn first_day(&self) -> i64 {
        self.first_day
    }

    pub fn last_day(&self) -> i64 {
        self.first_day + self.costs.len() as i64 - 1
    }

    pub fn num_routes(&self) -> usize {
        self.costs.first().map_or(0, |c| c.len())
    }

    pub fn days(&self) -> impl Iterator<Item = (i64, &DVector<f64>)> {
        self.costs.iter().enumerate().map(|(i, c)| (self.first_day + i as i64, c))
    }

    pub fn get(&self, day: i64) -> Result<&DVector<f64>> {
        let idx = day - self.first_day;
        if idx < 0 {
            return Err(Error::MissingCost(day));
        }
        self.costs.get(idx as usize).ok_or(Error::MissingCost(day))
    }
}

/// `u_kt = −Σ_s φ_s · c_{k,t−s}` for every route.
pub fn utilities(phi: &PhiVector, history: &CostHistory, t: i64) -> Result<DVector<f64>> {
    let mut u = DVector::zeros(history.num_routes());
    for (s, &weight) in phi.as_slice().iter().enumerate() {
        let c = history.get(t - 1 - s as i64)?;
        u.axpy(-weight, c, 1.0);
    }
    Ok(u)
}

/// Logit probabilities for the routes of one OD pair, scaled to `1 − π`.
pub fn logit_probabilities(utilities: &[f64], non_choice: f64) -> Vec<f64> {
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = utilities.iter().map(|u| (u - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (1.0 - non_choice) * w / total).collect()
}

/// Route choice probabilities of every OD pair on one day.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceStructure {
    probabilities: DVector<f64>,
    matrix: DMatrix<f64>,
    non_choice: f64,
}

impl ChoiceStructure {
    /// Assembles the block-diagonal `P_t` (`K × n`) from global route probabilities.
    pub fn from_probabilities(probabilities: DVector<f64>, route_set: &RouteSet, non_choice: f64) -> Result<Self> {
        check_dim("route probabilities", route_set.len(), probabilities.len())?;
        let mut matrix = DMatrix::zeros(route_set.len(), route_set.num_pairs());
        for j in 0..route_set.num_pairs() {
            for k in route_set.pair_range(j) {
                matrix[(k, j)] = probabilities[k];
            }
        }
        Ok(Self {
            probabilities,
            matrix,
            non_choice,
        })
    }

    /// Global route probability vector (length `K`).
    pub fn probabilities(&self) -> &DVector<f64> {
        &self.probabilities
    }

    /// Probabilities for the routes of OD pair `j`.
    pub fn pair<'a>(&'a self, route_set: &RouteSet, j: usize) -> &'a [f64] {
        &self.probabilities.as_slice()[route_set.pair_range(j)]
    }

    /// Block-diagonal route choice matrix `P_t`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn non_choice(&self) -> f64 {
        self.non_choice
    }
}

/// Route choice on day `t` from the cost history and sensitivities.
pub fn choice_structure(
    phi: &PhiVector,
    history: &CostHistory,
    non_choice: f64,
    route_set: &RouteSet,
    t: i64,
) -> Result<ChoiceStructure> {
    check_dim("cost history routes", route_set.len(), history.num_routes())?;
    let u = utilities(phi, history, t)?;
    let mut probs = DVector::zeros(route_set.len());
    for j in 0..route_set.num_pairs() {
        let range = route_set.pair_range(j);
        let p = logit_probabilities(&u.as_slice()[range.clone()], non_choice);
        probs.as_mut_slice()[range].copy_from_slice(&p);
    }
    ChoiceStructure::from_probabilities(probs, route_set, non_choice)
}

/// `level · (diag(p) − p pᵀ)` for one OD pair.
pub fn route_flow_covariance(level: f64, p: &[f64]) -> DMatrix<f64> {
    let n = p.len();
    DMatrix::from_fn(n, n, |a, b| {
        let diag = if a == b { p[a] } else { 0.0 };
        level * (diag - p[a] * p[b])
    })
}

/// Block-diagonal `Σ^y` (`K × K`) for the given per-pair flow levels.
pub fn route_flow_covariance_blocks(levels: &DVector<f64>, choice: &ChoiceStructure, route_set: &RouteSet) -> DMatrix<f64> {
    let k = route_set.len();
    let mut cov = DMatrix::zeros(k, k);
    for j in 0..route_set.num_pairs() {
        let range = route_set.pair_range(j);
        let block = route_flow_covariance(levels[j], choice.pair(route_set, j));
        cov.view_mut((range.start, range.start), (range.len(), range.len()))
            .copy_from(&block);
    }
    cov
}

/// Flow levels with the [`FLOW_LEVEL_FLOOR`] applied.
pub fn floored_levels(flows: &DVector<f64>) -> DVector<f64> {
    flows.map(|v| v.max(FLOW_LEVEL_FLOOR))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::canonical_network;
    use crate::stochastics::min_eigenvalue;
    use approx::assert_relative_eq;

    fn history(first_day: i64, rows: &[&[f64]]) -> CostHistory {
        CostHistory::new(first_day, rows.iter().map(|r| DVector::from_column_slice(r)).collect()).unwrap()
    }

    #[test]
    fn two_day_memory_utility() {
        let phi = PhiVector::new(vec![0.5, 0.3]).unwrap();
        let h = history(-1, &[&[3.0], &[2.0]]);
        let u = utilities(&phi, &h, 1).unwrap();
        assert_relative_eq!(u[0], -1.9, epsilon = 1e-15);
    }

    #[test]
    fn zero_phi_and_equal_histories() {
        let h = history(-1, &[&[3.0, 3.0, 1.0], &[2.0, 2.0, 5.0]]);
        let u = utilities(&PhiVector::new(vec![0.0, 0.0]).unwrap(), &h, 1).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
        let u = utilities(&PhiVector::new(vec![0.7, 0.2]).unwrap(), &h, 1).unwrap();
        assert_eq!(u[0], u[1]);
    }

    #[test]
    fn missing_history_names_day() {
        let h = history(0, &[&[1.0], &[1.0]]);
        let phi = PhiVector::new(vec![0.5, 0.3]).unwrap();
        assert!(matches!(utilities(&phi, &h, 1), Err(Error::MissingCost(-1))));
        assert!(utilities(&phi, &h, 2).is_ok());
    }

    #[test]
    fn equal_utilities_split_evenly() {
        let p = logit_probabilities(&[-2.0, -2.0, -2.0], 0.01);
        for v in &p {
            assert_relative_eq!(*v, 0.33, epsilon = 1e-15);
        }
    }

    #[test]
    fn extreme_utilities_do_not_overflow() {
        let p = logit_probabilities(&[1000.0, 999.0, -1e6], 0.01);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 0.99).abs() < 1e-12);
    }

    #[test]
    fn canonical_choice_matrix_shape() {
        let (_, routes) = canonical_network();
        let h = CostHistory::new(-1, vec![DVector::from_element(12, 3.0); 3]).unwrap();
        let phi = PhiVector::new(vec![0.5, 0.3]).unwrap();
        let cs = choice_structure(&phi, &h, 0.01, &routes, 1).unwrap();
        let p = cs.matrix();
        assert_eq!(p.shape(), (12, 4));
        for j in 0..4 {
            let col = p.column(j);
            assert_eq!(col.iter().filter(|&&v| v != 0.0).count(), 3);
            assert_relative_eq!(col.sum(), 0.99, epsilon = 1e-12);
            for &v in col.iter().filter(|&&v| v != 0.0) {
                assert_relative_eq!(v, 0.33, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_hand_values() {
        let c = route_flow_covariance(1.0, &[0.5, 0.49]);
        assert_relative_eq!(c[(0, 0)], 0.25, epsilon = 1e-15);
        assert_relative_eq!(c[(0, 1)], -0.245, epsilon = 1e-15);
        assert_relative_eq!(c[(1, 0)], -0.245, epsilon = 1e-15);
        assert_relative_eq!(c[(1, 1)], 0.2499, epsilon = 1e-15);
        assert_eq!(route_flow_covariance(0.0, &[0.5, 0.49]), DMatrix::zeros(2, 2));
    }

    #[test]
    fn covariance_singular_without_non_choice() {
        let p = logit_probabilities(&[-1.0, -2.0, -1.5], 0.0);
        let c = route_flow_covariance(1.0, &p);
        assert!(min_eigenvalue(&c) <= 1e-10 * c.trace());
        let p = logit_probabilities(&[-1.0, -2.0, -1.5], 0.01);
        let c = route_flow_covariance(1.0, &p);
        assert!(min_eigenvalue(&c) > 1e-12);
    }

    #[test]
    fn block_covariance_layout() {
        let (_, routes) = canonical_network();
        let h = CostHistory::new(-1, vec![DVector::from_fn(12, |k, _| 3.0 + k as f64 * 0.1); 3]).unwrap();
        let cs = choice_structure(&PhiVector::new(vec![0.5, 0.3]).unwrap(), &h, 0.01, &routes, 1).unwrap();
        let levels = DVector::from_vec(vec![10.0, 20.0, 30.0, 40.0]);
        let cov = route_flow_covariance_blocks(&levels, &cs, &routes);
        for a in 0..12 {
            for b in 0..12 {
                if routes.pair_of(a) != routes.pair_of(b) {
                    assert_eq!(cov[(a, b)], 0.0);
                }
            }
        }
        let block = route_flow_covariance(30.0, cs.pair(&routes, 2));
        assert_eq!(cov.view((6, 6), (3, 3)), block);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn probabilities_sum_to_one_minus_pi(u in proptest::collection::vec(-50.0..50.0f64, 1..8),
                                                  pi in 0.0001..0.5f64, shift in -100.0..100.0f64) {
                let p = logit_probabilities(&u, pi);
                prop_assert!((p.iter().sum::<f64>() - (1.0 - pi)).abs() < 1e-12);
                prop_assert!(p.iter().all(|&v| v > 0.0));
                let shifted: Vec<f64> = u.iter().map(|v| v + shift).collect();
                let q = logit_probabilities(&shifted, pi);
                for (a, b) in p.iter().zip(&q) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn covariance_is_psd(u in proptest::collection::vec(-10.0..10.0f64, 1..6),
                                 pi in 0.01..0.5f64, level in 0.0..500.0f64) {
                let p = logit_probabilities(&u, pi);
                let c = route_flow_covariance(level, &p);
                prop_assert!(min_eigenvalue(&c) >= -1e-10 * (1.0 + c.trace()));
                let unit = route_flow_covariance(1.0, &p);
                prop_assert!(min_eigenvalue(&unit) > 1e-12);
            }

            #[test]
            fn utilities_linear_in_phi(a in -3.0..3.0f64, b in -3.0..3.0f64,
                                       p1 in proptest::collection::vec(-2.0..2.0f64, 2),
                                       p2 in proptest::collection::vec(-2.0..2.0f64, 2)) {
                let h = CostHistory::new(-1, vec![
                    DVector::from_vec(vec![1.5, 2.5, 4.0]),
                    DVector::from_vec(vec![2.0, 1.0, 3.0]),
                    DVector::from_vec(vec![1.0, 1.0, 1.0]),
                ]).unwrap();
                let combo = PhiVector::new(vec![a * p1[0] + b * p2[0], a * p1[1] + b * p2[1]]).unwrap();
                let lhs = utilities(&combo, &h, 1).unwrap();
                let rhs = utilities(&PhiVector::new(p1).unwrap(), &h, 1).unwrap() * a
                    + utilities(&PhiVector::new(p2).unwrap(), &h, 1).unwrap() * b;
                prop_assert!((lhs - rhs).abs().max() < 1e-12);
            }
        }
    }
}
