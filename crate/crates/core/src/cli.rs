//! Command implementations behind the `dlm-od` binary.
//!
//! Each command reads a [`Config`], writes CSV files into an output
//! directory and returns an error whose kind decides the exit code. Wall
//! times go to `runtime.log` only, so CSV outputs depend on nothing but the
//! configuration and the seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::{Config, EstimationSection, ExperimentCell, SIMULATION_STREAM};
use crate::dlm::Dlm;
use crate::error::{Error, Result};
use crate::formats::{self, ExperimentRow, LoadedDataset, RunStats, ThetaEstimate};
use crate::network::{canonical_network, congestion_levels, enumerate_routes, Network, RouteSet};
use crate::route_choice::CostHistory;
use crate::sampler::{gibbs_run, hpd_interval, mean_squared_error, posterior_summary, PosteriorSummary, Trace, HPD_PROBABILITY};
use crate::simulator::{generate, replay_costs, SyntheticDataset};
use crate::stochastics::RngStream;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(error: &Error) -> i32 {
    if error.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

#[derive(Debug, Parser)]
#[command(name = "dlm-od", version, about = "Day-to-day OD flow estimation from link counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Simulate(CommonArgs),
    /// Run the Gibbs sampler on a dataset directory.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset directory written by `simulate`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Simulate and estimate over a grid of cells and seeds.
    Experiment(CommonArgs),
    /// Print a summary of a dataset, estimate or experiment directory.
    Summarize {
        /// Directory to summarize.
        #[arg(long)]
        data: PathBuf,
        /// Also write the summary as CSV into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file. Defaults reproduce the reference experiment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for experiments.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl CommonArgs {
    pub fn load_config(&self) -> Result<Config> {
        match &self.config {
            Some(path) => Config::load(path),
            None => Ok(Config::default()),
        }
    }
}

/// Runs a parsed command line and returns what should go to stdout.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate(args) => {
            let config = args.load_config()?;
            let dataset = cmd_simulate(&config, &args.out, args.seed)?;
            Ok(format!(
                "wrote {} days to {} (theta clamps: {})\n",
                dataset.periods(),
                args.out.display(),
                dataset.clamps.theta
            ))
        }
        Command::Estimate { common, data } => {
            let config = common.load_config()?;
            let summary = cmd_estimate(&config, &data, &common.out, common.seed)?;
            Ok(describe_summary(&summary))
        }
        Command::Experiment(args) => {
            let config = args.load_config()?;
            let rows = cmd_experiment(&config, &args.out, args.seed, args.threads)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            Ok(format!(
                "{} runs written to {} ({failed} failed)\n",
                rows.len(),
                args.out.join(formats::RESULTS).display()
            ))
        }
        Command::Summarize { data, out } => cmd_summarize(&data, out.as_deref()),
    }
}

fn describe_summary(summary: &PosteriorSummary) -> String {
    let mut s = String::new();
    for (c, (m, (lo, hi))) in summary.phi_mean.iter().zip(&summary.phi_hpd).enumerate() {
        let _ = writeln!(s, "phi_{}: mean {m:.4}, 95% HPD [{lo:.4}, {hi:.4}]", c + 1);
    }
    let _ = writeln!(s, "acceptance rate: {:.3}", summary.acceptance_rate);
    if let Some(mse) = summary.mse {
        let _ = writeln!(s, "MSE(OD): {mse:.4}");
    }
    s
}

pub fn load_network(config: &Config) -> Result<(Network, RouteSet)> {
    match &config.network {
        Some(path) => {
            let network = formats::read_network(path)?;
            let routes = enumerate_routes(&network)?;
            Ok((network, routes))
        }
        None => Ok(canonical_network()),
    }
}

fn simulate_dataset(config: &Config, network: &Network, route_set: &RouteSet, seed: u64) -> Result<SyntheticDataset> {
    let mut section = config.simulation.clone();
    section.seed = seed;
    let sim = section.to_config(network)?;
    let mut rng = RngStream::new(seed, SIMULATION_STREAM);
    generate(&sim, network, route_set, &mut rng)
}

pub fn cmd_simulate(config: &Config, out: &Path, seed: Option<u64>) -> Result<SyntheticDataset> {
    let (network, route_set) = load_network(config)?;
    let mut section = config.simulation.clone();
    if let Some(seed) = seed {
        section.seed = seed;
    }
    let dataset = simulate_dataset(config, &network, &route_set, section.seed)?;
    formats::write_dataset(out, &network, &route_set, &section, &dataset)?;
    Ok(dataset)
}

/// Everything produced by one estimation run.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub trace: Trace,
    pub summary: PosteriorSummary,
    pub theta_hat: Vec<ThetaEstimate>,
}

/// Builds the model for `section` and runs the sampler. `z_all` holds counts
/// on every link in network order.
pub fn estimate(
    network: &Network,
    route_set: &RouteSet,
    costs: CostHistory,
    z_all: &[DVector<f64>],
    truth: Option<&[DVector<f64>]>,
    section: &EstimationSection,
) -> Result<Estimate> {
    let mcmc = section.mcmc()?;
    let params = section.model_params(network)?;
    let positions = params
        .observed_links
        .iter()
        .map(|&id| network.link_position(id))
        .collect::<Result<Vec<_>>>()?;
    let observations: Vec<DVector<f64>> = z_all
        .iter()
        .map(|z| DVector::from_iterator(positions.len(), positions.iter().map(|&p| z[p])))
        .collect();
    let dlm = Dlm::new(network, route_set.clone(), params, costs, observations)?;
    let trace = gibbs_run(&mcmc, &dlm)?;
    let summary = posterior_summary(&trace, truth)?;
    let theta_hat = theta_estimates(network, &trace, truth)?;
    Ok(Estimate {
        trace,
        summary,
        theta_hat,
    })
}

fn theta_estimates(network: &Network, trace: &Trace, truth: Option<&[DVector<f64>]>) -> Result<Vec<ThetaEstimate>> {
    let mut rows = Vec::new();
    for (t, mean) in trace.theta_mean.iter().enumerate() {
        for (j, od) in network.od_pairs().iter().enumerate() {
            let draws: Vec<f64> = trace.theta_samples.iter().map(|(_, traj)| traj[t][j]).collect();
            rows.push(ThetaEstimate {
                t: t + 1,
                od_pair: j + 1,
                origin: od.origin,
                destination: od.destination,
                mean: mean[j],
                hpd: hpd_interval(&draws, HPD_PROBABILITY)?,
                truth: truth.map(|th| th[t][j]),
            });
        }
    }
    Ok(rows)
}

/// MSE between the `mean` and `truth` columns of `theta_hat.csv` rows.
pub fn mse_from_theta_hat(rows: &[ThetaEstimate]) -> Option<f64> {
    let periods = rows.iter().map(|r| r.t).max()?;
    let pairs = rows.iter().map(|r| r.od_pair).max()?;
    let mut est = vec![DVector::zeros(pairs); periods];
    let mut truth = vec![DVector::zeros(pairs); periods];
    for r in rows {
        est[r.t - 1][r.od_pair - 1] = r.mean;
        truth[r.t - 1][r.od_pair - 1] = r.truth?;
    }
    mean_squared_error(&est, &truth).ok()
}

pub fn cmd_estimate(config: &Config, data: &Path, out: &Path, seed: Option<u64>) -> Result<PosteriorSummary> {
    let LoadedDataset {
        network,
        route_set,
        costs,
        z,
        theta,
    } = formats::read_dataset(data)?;
    let mut section = config.estimation.clone();
    if let Some(seed) = seed {
        section.seed = seed;
    }
    let started = Instant::now();
    let result = estimate(&network, &route_set, costs, &z, theta.as_deref(), &section)?;
    let elapsed = started.elapsed();
    fs::create_dir_all(out)?;
    formats::write_atomic(&out.join(formats::TRACE), &formats::trace_csv(&result.trace)?)?;
    formats::write_atomic(&out.join(formats::THETA_HAT), &formats::theta_hat_csv(&result.theta_hat)?)?;
    formats::write_atomic(
        &out.join(formats::SUMMARY),
        &formats::summary_csv(&result.trace, &result.summary)?,
    )?;
    let log = format!(
        "command = estimate\ndata = {}\nseed = {}\niterations = {}\nwall_seconds = {:.3}\n",
        data.display(),
        section.seed,
        result.trace.iterations(),
        elapsed.as_secs_f64()
    );
    fs::write(out.join(formats::RUNTIME_LOG), log)?;
    Ok(result.summary)
}

struct Job<'a> {
    cell: &'a ExperimentCell,
    seed_index: usize,
}

pub fn cmd_experiment(config: &Config, out: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<Vec<ExperimentRow>> {
    let (network, route_set) = load_network(config)?;
    let mut grid = config.experiment.clone();
    if let Some(seed) = seed {
        grid.seeds = vec![seed];
    }
    let cells = grid.cells(&config.estimation, &network)?;
    // Validate the shared settings up front so bad input fails fast with a
    // config error instead of one failed row per run.
    config.simulation.to_config(&network)?.validate(&network)?;
    for cell in &cells {
        cell.estimation.mcmc()?;
        cell.estimation.model_params(&network)?.validate(network.num_od_pairs())?;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    let scenario = grid.kind.name().to_string();

    let results: Vec<(ExperimentRow, f64)> = pool.install(|| {
        let datasets: Vec<Result<SyntheticDataset>> = grid
            .seeds
            .par_iter()
            .map(|&s| simulate_dataset(config, &network, &route_set, s))
            .collect();
        let jobs: Vec<Job> = cells
            .iter()
            .flat_map(|cell| (0..grid.seeds.len()).map(move |seed_index| Job { cell, seed_index }))
            .collect();
        jobs.par_iter()
            .map(|job| {
                let seed = grid.seeds[job.seed_index];
                let started = Instant::now();
                let outcome = datasets[job.seed_index]
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|data| {
                        let mut section = job.cell.estimation.clone();
                        section.seed = seed;
                        estimate(&network, &route_set, replay_costs(data), &data.z, Some(&data.theta), &section)
                            .map_err(|e| e.to_string())
                    })
                    .map(|est| RunStats {
                        phi_mean: est.summary.phi_mean,
                        phi_hpd: est.summary.phi_hpd,
                        mse: est.summary.mse.unwrap_or(f64::NAN),
                        acceptance_rate: est.summary.acceptance_rate,
                    });
                let row = ExperimentRow {
                    scenario: scenario.clone(),
                    cell: job.cell.label.clone(),
                    seed,
                    outcome,
                };
                (row, started.elapsed().as_secs_f64())
            })
            .collect()
    });

    fs::create_dir_all(out)?;
    let rows: Vec<ExperimentRow> = results.iter().map(|(r, _)| r.clone()).collect();
    let memory = config.estimation.memory();
    formats::write_atomic(&out.join(formats::RESULTS), &formats::results_csv(&rows, memory)?)?;
    let mut log = String::from("scenario,cell,seed,wall_seconds\n");
    for (r, secs) in &results {
        let _ = writeln!(log, "{},{},{},{secs:.3}", r.scenario, r.cell, r.seed);
    }
    fs::write(out.join(formats::RUNTIME_LOG), log)?;
    Ok(rows)
}

/// Summarizes a dataset (congestion levels), an estimate (posterior summary
/// with MSE recomputed from `theta_hat.csv`) or an experiment (median rows).
pub fn cmd_summarize(data: &Path, out: Option<&Path>) -> Result<String> {
    let (name, text) = if data.join(formats::RESULTS).exists() {
        let text = fs::read_to_string(data.join(formats::RESULTS))?;
        let mut lines = text.lines();
        let mut s = String::new();
        if let Some(header) = lines.next() {
            s.push_str(header);
            s.push('\n');
        }
        for line in lines.filter(|l| l.split(',').nth(2) == Some("median")) {
            s.push_str(line);
            s.push('\n');
        }
        ("experiment_summary.csv", s)
    } else if data.join(formats::SUMMARY).exists() {
        let fields = formats::read_summary(&data.join(formats::SUMMARY))?;
        let theta_hat = formats::read_theta_hat(&data.join(formats::THETA_HAT))?;
        let mut s = String::from("field,value\n");
        for (k, v) in &fields {
            let _ = writeln!(s, "{k},{v}");
        }
        if let Some(mse) = mse_from_theta_hat(&theta_hat) {
            let _ = writeln!(s, "mse_from_theta_hat,{mse}");
        }
        ("estimate_summary.csv", s)
    } else if data.join(formats::MANIFEST).exists() {
        let loaded = formats::read_dataset(data)?;
        let cl = congestion_levels(&loaded.z, &loaded.network)?;
        let mut s = String::from("link,congestion_level\n");
        for (link, c) in loaded.network.links().iter().zip(cl) {
            let _ = writeln!(s, "{},{c}", link.id);
        }
        ("congestion.csv", s)
    } else {
        return Err(Error::Format {
            path: data.display().to_string(),
            message: "not a dataset, estimate or experiment directory".into(),
        });
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        formats::write_atomic(&dir.join(name), text.as_bytes())?;
    }
    Ok(text)
}
