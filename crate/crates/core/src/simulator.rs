//! Synthetic day-to-day traffic with congestion feedback.
//!
//! Each day: the mean OD flows take a random-walk step (clamped to the
//! demand bounds), realized OD flows scatter around them, trips split over
//! routes by a logit on the last `r` days of route costs, route flows load
//! the links, BPR costs are recomputed from the full link loads, and counts
//! are observed with measurement noise. Negative flow draws are clamped to 0.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::network::{free_flow_costs, route_costs, Network, RouteSet};
use crate::route_choice::{choice_structure, route_flow_covariance, CostHistory, PhiVector, DEFAULT_NON_CHOICE};
use crate::stochastics::{mvn_sample, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub theta0: Vec<f64>,
    /// Evolution covariance `W` (`n × n`).
    pub evolution: DMatrix<f64>,
    pub sigma_x: DMatrix<f64>,
    /// Measurement covariance over all links (`|L| × |L|`).
    pub sigma_z: DMatrix<f64>,
    pub phi: Vec<f64>,
    pub non_choice: f64,
    pub periods: usize,
    /// Mean OD flows are clamped into `[lo, hi]` after every step.
    pub demand_bounds: (f64, f64),
    pub seed: u64,
}

impl SimulationConfig {
    /// `θ_0 = 50·1`, `W = 10 I`, `Σ^x = Σ^z = I`, `φ = (0.5, 0.3)`,
    /// `π = 0.01`, `T = 100`, bounds `[10, 100]`.
    pub fn reference_defaults(network: &Network, seed: u64) -> Self {
        let n = network.num_od_pairs();
        let links = network.num_links();
        Self {
            theta0: vec![50.0; n],
            evolution: DMatrix::identity(n, n) * 10.0,
            sigma_x: DMatrix::identity(n, n),
            sigma_z: DMatrix::identity(links, links),
            phi: vec![0.5, 0.3],
            non_choice: DEFAULT_NON_CHOICE,
            periods: 100,
            demand_bounds: (10.0, 100.0),
            seed,
        }
    }

    pub fn memory(&self) -> usize {
        self.phi.len()
    }

    pub fn validate(&self, network: &Network) -> Result<()> {
        let n = network.num_od_pairs();
        let links = network.num_links();
        check_dim("theta0", n, self.theta0.len())?;
        for (name, m, d) in [
            ("evolution", &self.evolution, n),
            ("sigma_x", &self.sigma_x, n),
            ("sigma_z", &self.sigma_z, links),
        ] {
            check_dim(name, d, m.nrows())?;
            check_dim(name, d, m.ncols())?;
        }
        let (lo, hi) = self.demand_bounds;
        if !(lo < hi) {
            return Err(Error::Config(format!("demand bounds [{lo}, {hi}] need lo < hi")));
        }
        if self.periods == 0 {
            return Err(Error::Config("periods must be at least 1".into()));
        }
        if self.phi.is_empty() {
            return Err(Error::Config("phi needs at least one component".into()));
        }
        if !(self.non_choice > 0.0 && self.non_choice < 1.0) {
            return Err(Error::Config(format!("non-choice probability {} outside (0, 1)", self.non_choice)));
        }
        Ok(())
    }
}

/// How often each variable had to be clamped during generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClampCounts {
    /// Components of `θ_t` moved onto a demand bound.
    pub theta: usize,
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// Mean OD flows `θ_1..θ_T`.
    pub theta: Vec<DVector<f64>>,
    /// Realized OD flows.
    pub x: Vec<DVector<f64>>,
    /// Route flows (length `K`).
    pub y: Vec<DVector<f64>>,
    /// Counts on every link (length `|L|`).
    pub z: Vec<DVector<f64>>,
    /// Route costs for days `1−r..T`; days `1−r..0` are free-flow costs.
    pub costs: CostHistory,
    pub clamps: ClampCounts,
}

impl SyntheticDataset {
    pub fn periods(&self) -> usize {
        self.theta.len()
    }

    /// `Δ y_t` on every link.
    pub fn link_loads(&self, incidence_full: &DMatrix<f64>) -> Vec<DVector<f64>> {
        self.y.iter().map(|y| incidence_full * y).collect()
    }
}

fn clamp_nonnegative(v: &mut DVector<f64>) -> usize {
    let mut hits = 0;
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
            hits += 1;
        }
    }
    hits
}

pub fn generate(
    config: &SimulationConfig,
    network: &Network,
    route_set: &RouteSet,
    rng: &mut RngStream,
) -> Result<SyntheticDataset> {
    config.validate(network)?;
    let n = network.num_od_pairs();
    check_dim("route set pairs", n, route_set.num_pairs())?;
    let memory = config.memory() as i64;
    let periods = config.periods;
    let phi = PhiVector::new(config.phi.clone())?;
    let (lo, hi) = config.demand_bounds;

    let incidence = crate::network::incidence_matrix(route_set, network, &network.link_ids())?;
    let delta = incidence.full();

    let free = free_flow_costs(network, route_set)?;
    let mut cost_days: Vec<DVector<f64>> = vec![free; config.memory()];
    let mut clamps = ClampCounts::default();
    let mut theta_prev = DVector::from_vec(config.theta0.clone());
    let mut out_theta = Vec::with_capacity(periods);
    let mut out_x = Vec::with_capacity(periods);
    let mut out_y = Vec::with_capacity(periods);
    let mut out_z = Vec::with_capacity(periods);

    for t in 1..=periods {
        let annotate = |e: Error| e.at_time(t);

        let mut theta = mvn_sample(&theta_prev, &config.evolution, rng).map_err(annotate)?;
        for v in theta.iter_mut() {
            let c = v.clamp(lo, hi);
            if c != *v {
                clamps.theta += 1;
                *v = c;
            }
        }

        let mut x = mvn_sample(&theta, &config.sigma_x, rng).map_err(annotate)?;
        clamps.x += clamp_nonnegative(&mut x);

        let history = CostHistory::new(1 - memory, cost_days.clone())?;
        let choice = choice_structure(&phi, &history, config.non_choice, route_set, t as i64).map_err(annotate)?;

        let mut y = DVector::zeros(route_set.len());
        for j in 0..n {
            let p = choice.pair(route_set, j);
            let range = route_set.pair_range(j);
            let mean = DVector::from_iterator(p.len(), p.iter().map(|pk| pk * x[j]));
            let cov = route_flow_covariance(x[j], p);
            let draw = mvn_sample(&mean, &cov, rng).map_err(annotate)?;
            y.as_mut_slice()[range].copy_from_slice(draw.as_slice());
        }
        clamps.y += clamp_nonnegative(&mut y);

        let loads = delta * &y;
        let costs = route_costs(network, route_set, &loads).map_err(annotate)?;

        let mut z = mvn_sample(&loads, &config.sigma_z, rng).map_err(annotate)?;
        clamps.z += clamp_nonnegative(&mut z);

        cost_days.push(costs);
        out_theta.push(theta.clone());
        out_x.push(x);
        out_y.push(y);
        out_z.push(z);
        theta_prev = theta;
    }

    Ok(SyntheticDataset {
        theta: out_theta,
        x: out_x,
        y: out_y,
        z: out_z,
        costs: CostHistory::new(1 - memory, cost_days)?,
        clamps,
    })
}

/// Cost history handed to the estimator: days `1−r..T`.
pub fn replay_costs(dataset: &SyntheticDataset) -> CostHistory {
    dataset.costs.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{canonical_network, incidence_matrix, Link, OdPair};

    #[test]
    fn pre_sample_costs_are_free_flow() {
        let (net, routes) = canonical_network();
        let cfg = SimulationConfig::reference_defaults(&net, 4);
        let data = generate(&cfg, &net, &routes, &mut RngStream::new(4, 0)).unwrap();
        for day in [-1, 0] {
            let c = data.costs.get(day).unwrap();
            for (k, route) in routes.routes().iter().enumerate() {
                assert_eq!(c[k], route.len() as f64);
            }
        }
        assert_eq!(data.costs.first_day(), -1);
        assert_eq!(data.costs.last_day(), 100);
        assert_eq!(replay_costs(&data).days().count(), 102);
        assert_eq!(data.z[0].len(), 10);
    }

    #[test]
    fn noise_free_single_route_is_deterministic() {
        let links = vec![Link::bpr(1, 1, 3, 1.0, 130.0), Link::bpr(2, 2, 3, 1.0, 130.0)];
        let net = Network::new([1, 2, 3], links, vec![OdPair::new(1, 3), OdPair::new(2, 3)]).unwrap();
        let routes = crate::network::enumerate_routes(&net).unwrap();
        let cfg = SimulationConfig {
            theta0: vec![40.0, 60.0],
            evolution: DMatrix::zeros(2, 2),
            sigma_x: DMatrix::zeros(2, 2),
            sigma_z: DMatrix::zeros(2, 2),
            phi: vec![0.5, 0.3],
            non_choice: 1e-12,
            periods: 5,
            demand_bounds: (0.0, 1000.0),
            seed: 0,
        };
        let data = generate(&cfg, &net, &routes, &mut RngStream::new(0, 0)).unwrap();
        let delta = incidence_matrix(&routes, &net, &[1, 2]).unwrap();
        for t in 0..5 {
            assert_eq!(data.theta[t].as_slice(), &[40.0, 60.0]);
            let expected = delta.full() * &data.x[t] * (1.0 - 1e-12);
            assert!((&data.z[t] - &expected).abs().max() < 1e-4);
            assert_eq!(data.z[t], delta.full() * &data.y[t]);
        }
    }

    #[test]
    fn route_flows_conserve_demand() {
        let (net, routes) = canonical_network();
        let mut cfg = SimulationConfig::reference_defaults(&net, 8);
        cfg.evolution = DMatrix::zeros(4, 4);
        cfg.sigma_x = DMatrix::zeros(4, 4);
        cfg.sigma_z = DMatrix::zeros(10, 10);
        let data = generate(&cfg, &net, &routes, &mut RngStream::new(8, 0)).unwrap();
        let pi = cfg.non_choice;
        for t in 0..cfg.periods {
            for j in 0..4 {
                let total: f64 = routes.pair_range(j).map(|k| data.y[t][k]).sum();
                let x = data.x[t][j];
                let sd = (x * (1.0 - pi) * pi).sqrt();
                assert!((total - (1.0 - pi) * x).abs() < 5.0 * sd, "t={t} j={j}");
            }
        }
    }

    #[test]
    fn measurement_noise_variance() {
        let (net, routes) = canonical_network();
        let mut cfg = SimulationConfig::reference_defaults(&net, 10);
        cfg.periods = 10_000;
        cfg.sigma_z = DMatrix::from_diagonal(&DVector::from_fn(10, |i, _| 0.5 + 0.25 * i as f64));
        let data = generate(&cfg, &net, &routes, &mut RngStream::new(10, 0)).unwrap();
        assert_eq!(data.clamps.z, 0);
        let inc = incidence_matrix(&routes, &net, &net.link_ids()).unwrap();
        let loads = data.link_loads(inc.full());
        let t = cfg.periods as f64;
        for i in 0..10 {
            let resid: Vec<f64> = data.z.iter().zip(&loads).map(|(z, l)| z[i] - l[i]).collect();
            let mean = resid.iter().sum::<f64>() / t;
            let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (t - 1.0);
            let target = cfg.sigma_z[(i, i)];
            let se = target * (2.0 / (t - 1.0)).sqrt();
            assert!((var - target).abs() < 3.0 * se, "link {}: {var} vs {target}", i + 1);
        }
    }

    #[test]
    fn reference_defaults_hit_demand_bounds() {
        let (net, routes) = canonical_network();
        let mut hits = 0;
        for seed in 0..5 {
            let cfg = SimulationConfig::reference_defaults(&net, seed);
            hits += generate(&cfg, &net, &routes, &mut RngStream::new(seed, 0)).unwrap().clamps.theta;
        }
        assert!(hits > 0);
    }

    #[test]
    fn same_seed_same_data() {
        let (net, routes) = canonical_network();
        let cfg = SimulationConfig::reference_defaults(&net, 77);
        let a = generate(&cfg, &net, &routes, &mut RngStream::new(77, 0)).unwrap();
        let b = generate(&cfg, &net, &routes, &mut RngStream::new(77, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_bounds() {
        let (net, routes) = canonical_network();
        let mut cfg = SimulationConfig::reference_defaults(&net, 1);
        cfg.demand_bounds = (100.0, 10.0);
        assert!(matches!(
            generate(&cfg, &net, &routes, &mut RngStream::new(1, 0)),
            Err(Error::Config(_))
        ));
    }
}
