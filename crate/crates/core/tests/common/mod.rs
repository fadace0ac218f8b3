//! Shared fixtures: a small state-space instance and a brute-force oracle
//! that conditions the joint Gaussian of all states and observations.
#![allow(dead_code)]

use dlm_od::dlm::{filter_with, Dlm, Evolution, FilterStep, ModelParams};
use dlm_od::network::{canonical_network, LinkId, Network, RouteSet};
use dlm_od::simulator::{generate, replay_costs, SimulationConfig, SyntheticDataset};
use dlm_od::stochastics::RngStream;
use nalgebra::{DMatrix, DVector};

/// T = 3 days, n = 2 states, 3 observations per day with fixed `F_t`, `V_t`.
pub struct Toy {
    pub m0: DVector<f64>,
    pub c0: DMatrix<f64>,
    pub f: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
    pub z: Vec<DVector<f64>>,
}

pub fn toy() -> Toy {
    let f = vec![
        DMatrix::from_row_slice(3, 2, &[0.7, 0.0, 0.3, 0.6, 0.0, 0.4]),
        DMatrix::from_row_slice(3, 2, &[0.5, 0.2, 0.5, 0.5, 0.0, 0.3]),
        DMatrix::from_row_slice(3, 2, &[0.9, 0.1, 0.1, 0.8, 0.2, 0.2]),
    ];
    let v = vec![
        DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, -0.5, 0.0, -0.5, 2.0]),
        DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 5.0, 0.2, 0.1, 0.2, 1.5]),
        DMatrix::from_row_slice(3, 3, &[3.0, -0.4, 0.0, -0.4, 2.5, 0.6, 0.0, 0.6, 4.0]),
    ];
    let z = vec![
        DVector::from_vec(vec![38.0, 52.0, 21.0]),
        DVector::from_vec(vec![41.0, 60.5, 17.0]),
        DVector::from_vec(vec![55.0, 49.0, 23.5]),
    ];
    Toy {
        m0: DVector::from_vec(vec![100.0, 80.0]),
        c0: DMatrix::from_row_slice(2, 2, &[1000.0, 50.0, 50.0, 800.0]),
        f,
        v,
        z,
    }
}

pub fn run_filter(toy: &Toy, evolution: &Evolution) -> Vec<FilterStep> {
    filter_with(&toy.z, &toy.m0, &toy.c0, evolution, |t, _| {
        Ok((toy.f[t - 1].clone(), toy.v[t - 1].clone()))
    })
    .unwrap()
}

/// Moments of the stacked states `(θ_1, …, θ_T)` given `z_1..z_k`.
pub struct Conditional {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Conditional {
    pub fn block_mean(&self, t: usize, n: usize) -> DVector<f64> {
        self.mean.rows(t * n, n).into_owned()
    }

    pub fn block_cov(&self, t: usize, n: usize) -> DMatrix<f64> {
        self.cov.view((t * n, t * n), (n, n)).into_owned()
    }
}

/// Conditions the joint prior of `θ_{1:T}` (random walk with innovation
/// covariances `w[0..T]`) on the first `k` observations, using an explicit
/// inverse of the stacked observation covariance.
pub fn condition(toy: &Toy, w: &[DMatrix<f64>], k: usize) -> Conditional {
    let n = toy.m0.len();
    let periods = toy.z.len();
    let big_n = n * periods;
    let mut prior_cov = DMatrix::zeros(big_n, big_n);
    for s in 0..periods {
        for t in 0..periods {
            let mut block = toy.c0.clone();
            for wu in &w[..=s.min(t)] {
                block += wu;
            }
            prior_cov.view_mut((s * n, t * n), (n, n)).copy_from(&block);
        }
    }
    let prior_mean = DVector::from_fn(big_n, |i, _| toy.m0[i % n]);
    if k == 0 {
        return Conditional {
            mean: prior_mean,
            cov: prior_cov,
        };
    }
    let m: usize = toy.f[..k].iter().map(|f| f.nrows()).sum();
    let mut h = DMatrix::zeros(m, big_n);
    let mut v = DMatrix::zeros(m, m);
    let mut z = DVector::zeros(m);
    let mut row = 0;
    for t in 0..k {
        let r = toy.f[t].nrows();
        h.view_mut((row, t * n), (r, n)).copy_from(&toy.f[t]);
        v.view_mut((row, row), (r, r)).copy_from(&toy.v[t]);
        z.rows_mut(row, r).copy_from(&toy.z[t]);
        row += r;
    }
    let s = &h * &prior_cov * h.transpose() + v;
    let s_inv = s.try_inverse().expect("observation covariance invertible");
    let gain = &prior_cov * h.transpose() * s_inv;
    let mean = &prior_mean + &gain * (z - &h * &prior_mean);
    let cov = &prior_cov - &gain * &h * &prior_cov;
    Conditional { mean, cov }
}

/// Innovation covariances implied by `evolution`, with discounting applied
/// to the oracle's own filtered covariances.
pub fn innovations(toy: &Toy, evolution: &Evolution) -> Vec<DMatrix<f64>> {
    let n = toy.m0.len();
    let periods = toy.z.len();
    match evolution {
        Evolution::Explicit(w) => vec![w.clone(); periods],
        Evolution::Discount(delta) => {
            let mut w: Vec<DMatrix<f64>> = Vec::new();
            let mut prev = toy.c0.clone();
            for t in 0..periods {
                w.push(&prev * ((1.0 - delta) / delta));
                let mut padded = w.clone();
                padded.resize(periods, DMatrix::zeros(n, n));
                prev = condition(toy, &padded, t + 1).block_cov(t, n);
            }
            w
        }
    }
}

/// Filtering moments `(m_t, C_t)` for `t = 1..T`.
pub fn oracle_filter(toy: &Toy, evolution: &Evolution) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let n = toy.m0.len();
    let w = innovations(toy, evolution);
    (0..toy.z.len())
        .map(|t| {
            let c = condition(toy, &w, t + 1);
            (c.block_mean(t, n), c.block_cov(t, n))
        })
        .collect()
}

/// Joint smoothing moments of `θ_{1:T}` given every observation.
pub fn oracle_smoother(toy: &Toy, evolution: &Evolution) -> Conditional {
    let w = innovations(toy, evolution);
    condition(toy, &w, toy.z.len())
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Model parameters matching the reference experiment for `observed` links.
pub fn reference_params(n: usize, observed: &[LinkId], evolution: Evolution) -> ModelParams {
    let m = observed.len();
    ModelParams {
        sigma_x: DMatrix::identity(n, n),
        sigma_z: DMatrix::identity(m, m),
        evolution,
        non_choice: 0.01,
        observed_links: observed.to_vec(),
        m0: DVector::from_element(n, 100.0),
        c0: DMatrix::identity(n, n) * 1000.0,
    }
}

/// Simulates the canonical network with reference settings and `periods`
/// days, then builds the estimation model on `observed` links.
pub fn canonical_model(seed: u64, periods: usize, observed: &[LinkId]) -> (Network, RouteSet, SyntheticDataset, Dlm) {
    let (network, routes) = canonical_network();
    let mut config = SimulationConfig::reference_defaults(&network, seed);
    config.periods = periods;
    let mut rng = RngStream::new(seed, 1);
    let data = generate(&config, &network, &routes, &mut rng).unwrap();
    let dlm = build_model(&network, &routes, &data, observed, Evolution::Explicit(DMatrix::identity(4, 4) * 10.0));
    (network, routes, data, dlm)
}

pub fn build_model(
    network: &Network,
    routes: &RouteSet,
    data: &SyntheticDataset,
    observed: &[LinkId],
    evolution: Evolution,
) -> Dlm {
    let positions: Vec<usize> = observed.iter().map(|&id| network.link_position(id).unwrap()).collect();
    let z = data
        .z
        .iter()
        .map(|z| DVector::from_iterator(positions.len(), positions.iter().map(|&p| z[p])))
        .collect();
    let params = reference_params(network.num_od_pairs(), observed, evolution);
    Dlm::new(network, routes.clone(), params, replay_costs(data), z).unwrap()
}
