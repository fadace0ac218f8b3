//! Run configuration read from TOML.
//!
//! Every field has a default, so an empty file reproduces the reference
//! experiment: canonical network, `T = 100`, 10 000 iterations with 2 000
//! burn-in and a `0.04 I` random-walk proposal.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dlm::{Evolution, ModelParams};
use crate::error::{Error, Result};
use crate::network::{LinkId, Network};
use crate::route_choice::DEFAULT_NON_CHOICE;
use crate::sampler::{McmcConfig, PhiPrior};
use crate::simulator::SimulationConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Network definition file. The canonical test network is used when absent.
    pub network: Option<PathBuf>,
    pub simulation: SimulationSection,
    pub estimation: EstimationSection,
    pub experiment: ExperimentSection,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. A relative `network` path is resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config = Self::from_toml_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if let (Some(net), Some(dir)) = (&config.network, path.parent()) {
            if net.is_relative() {
                config.network = Some(dir.join(net));
            }
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub seed: u64,
    pub periods: usize,
    /// Initial mean OD flow, one value per pair or a single value for all.
    pub theta0: Vec<f64>,
    /// `W = evolution_var · I`.
    pub evolution_var: f64,
    pub sigma_x_var: f64,
    pub sigma_z_var: f64,
    pub phi: Vec<f64>,
    pub non_choice: f64,
    pub demand_bounds: [f64; 2],
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            seed: 1,
            periods: 100,
            theta0: vec![50.0],
            evolution_var: 10.0,
            sigma_x_var: 1.0,
            sigma_z_var: 1.0,
            phi: vec![0.5, 0.3],
            non_choice: DEFAULT_NON_CHOICE,
            demand_bounds: [10.0, 100.0],
        }
    }
}

impl SimulationSection {
    pub fn to_config(&self, network: &Network) -> Result<SimulationConfig> {
        let n = network.num_od_pairs();
        let links = network.num_links();
        for (name, v) in [
            ("evolution_var", self.evolution_var),
            ("sigma_x_var", self.sigma_x_var),
            ("sigma_z_var", self.sigma_z_var),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("simulation.{name} must be a finite non-negative number")));
            }
        }
        Ok(SimulationConfig {
            theta0: broadcast("simulation.theta0", &self.theta0, n)?,
            evolution: DMatrix::identity(n, n) * self.evolution_var,
            sigma_x: DMatrix::identity(n, n) * self.sigma_x_var,
            sigma_z: DMatrix::identity(links, links) * self.sigma_z_var,
            phi: self.phi.clone(),
            non_choice: self.non_choice,
            periods: self.periods,
            demand_bounds: (self.demand_bounds[0], self.demand_bounds[1]),
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Keep the full `θ` trajectory of every `theta_thin`-th kept draw for
    /// interval estimates.
    pub theta_thin: usize,
    /// Random-walk proposal covariance `proposal_var · I`.
    pub proposal_var: f64,
    /// Starting value of `φ`; its length sets the memory `r`.
    pub phi_init: Vec<f64>,
    pub phi_prior: PhiPrior,
    pub theta_init_mean: f64,
    pub theta_init_var: f64,
    /// Prior mean `m_0`, one value per pair or a single value for all.
    pub m0: Vec<f64>,
    /// `C_0 = c0_var · I`.
    pub c0_var: f64,
    /// Known evolution covariance `W = evolution_var · I`. Ignored when
    /// `discount` is set.
    pub evolution_var: f64,
    pub discount: Option<f64>,
    pub sigma_x_var: f64,
    pub sigma_z_var: f64,
    pub non_choice: f64,
    /// Links whose counts are used. Empty means every link.
    pub observed_links: Vec<LinkId>,
}

impl Default for EstimationSection {
    fn default() -> Self {
        Self {
            seed: 1,
            iterations: 10_000,
            burn_in: 2_000,
            thin: 1,
            theta_thin: 10,
            proposal_var: 0.04,
            phi_init: vec![1.0, 1.0],
            phi_prior: PhiPrior::Flat,
            theta_init_mean: 100.0,
            theta_init_var: 100.0,
            m0: vec![100.0],
            c0_var: 1000.0,
            evolution_var: 10.0,
            discount: None,
            sigma_x_var: 1.0,
            sigma_z_var: 1.0,
            non_choice: DEFAULT_NON_CHOICE,
            observed_links: Vec::new(),
        }
    }
}

impl EstimationSection {
    pub fn memory(&self) -> usize {
        self.phi_init.len()
    }

    pub fn mcmc(&self) -> Result<McmcConfig> {
        let r = self.memory();
        if r == 0 {
            return Err(Error::Config("estimation.phi_init must not be empty".into()));
        }
        if !(self.proposal_var > 0.0 && self.proposal_var.is_finite()) {
            return Err(Error::Config("estimation.proposal_var must be positive".into()));
        }
        let config = McmcConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            theta_thin: self.theta_thin,
            proposal_cov: DMatrix::identity(r, r) * self.proposal_var,
            phi_init: self.phi_init.clone(),
            theta_init_mean: self.theta_init_mean,
            theta_init_var: self.theta_init_var,
            phi_prior: self.phi_prior,
            seed: self.seed,
            stream: ESTIMATION_STREAM,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn evolution(&self, n: usize) -> Evolution {
        match self.discount {
            Some(delta) => Evolution::Discount(delta),
            None => Evolution::Explicit(DMatrix::identity(n, n) * self.evolution_var),
        }
    }

    /// Observed links in file order, or every link of the network.
    pub fn observed(&self, network: &Network) -> Vec<LinkId> {
        if self.observed_links.is_empty() {
            network.link_ids()
        } else {
            self.observed_links.clone()
        }
    }

    pub fn model_params(&self, network: &Network) -> Result<ModelParams> {
        let n = network.num_od_pairs();
        let observed = self.observed(network);
        for &id in &observed {
            network.link_position(id)?;
        }
        let m = observed.len();
        Ok(ModelParams {
            sigma_x: DMatrix::identity(n, n) * self.sigma_x_var,
            sigma_z: DMatrix::identity(m, m) * self.sigma_z_var,
            evolution: self.evolution(n),
            non_choice: self.non_choice,
            observed_links: observed,
            m0: DVector::from_vec(broadcast("estimation.m0", &self.m0, n)?),
            c0: DMatrix::identity(n, n) * self.c0_var,
        })
    }
}

/// Stream ids keep the simulator and the sampler independent when they share
/// a seed.
pub const SIMULATION_STREAM: u64 = 1;
pub const ESTIMATION_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    FullObservation,
    DiscountGrid,
    PartialLinks,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FullObservation => "full-observation",
            ScenarioKind::DiscountGrid => "discount-grid",
            ScenarioKind::PartialLinks => "partial-links",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ScenarioKind,
    /// Each seed drives one simulated dataset and one estimation run.
    pub seeds: Vec<u64>,
    pub discounts: Vec<f64>,
    pub link_sets: Vec<Vec<LinkId>>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::FullObservation,
            seeds: (1..=10).collect(),
            discounts: vec![0.7, 0.8, 0.9],
            link_sets: vec![
                vec![1],
                vec![2],
                vec![9],
                vec![2, 5],
                vec![1, 9],
                vec![2, 5, 9],
                vec![1, 7, 9],
            ],
        }
    }
}

/// One column of an experiment: a label plus the estimation settings that
/// differ from the base section.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentCell {
    pub label: String,
    pub estimation: EstimationSection,
}

impl ExperimentSection {
    pub fn cells(&self, base: &EstimationSection, network: &Network) -> Result<Vec<ExperimentCell>> {
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds must not be empty".into()));
        }
        match self.kind {
            ScenarioKind::FullObservation => Ok(vec![ExperimentCell {
                label: "all".into(),
                estimation: EstimationSection {
                    observed_links: Vec::new(),
                    ..base.clone()
                },
            }]),
            ScenarioKind::DiscountGrid => {
                if self.discounts.is_empty() {
                    return Err(Error::Config("experiment.discounts must not be empty".into()));
                }
                self.discounts
                    .iter()
                    .map(|&delta| {
                        if !(delta > 0.0 && delta <= 1.0) {
                            return Err(Error::Config(format!("discount factor {delta} outside (0, 1]")));
                        }
                        Ok(ExperimentCell {
                            label: format!("delta={delta}"),
                            estimation: EstimationSection {
                                discount: Some(delta),
                                observed_links: Vec::new(),
                                ..base.clone()
                            },
                        })
                    })
                    .collect()
            }
            ScenarioKind::PartialLinks => {
                if self.link_sets.is_empty() {
                    return Err(Error::Config("experiment.link_sets must not be empty".into()));
                }
                self.link_sets
                    .iter()
                    .map(|set| {
                        if set.is_empty() {
                            return Err(Error::Config("observed link sets must be nonempty".into()));
                        }
                        for &id in set {
                            network.link_position(id)?;
                        }
                        let label = set.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("+");
                        Ok(ExperimentCell {
                            label: format!("links={label}"),
                            estimation: EstimationSection {
                                observed_links: set.clone(),
                                ..base.clone()
                            },
                        })
                    })
                    .collect()
            }
        }
    }
}

fn broadcast(name: &str, values: &[f64], n: usize) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        len if len == n => Ok(values.to_vec()),
        len => Err(Error::Config(format!("{name} has {len} values; expected 1 or {n}"))),
    }
}
