//! On-disk formats: network TOML, dataset directories and result CSVs.
//!
//! Floats are written with Rust's shortest round-trip representation, so
//! reading a file back reproduces the in-memory values bit for bit and
//! repeated runs produce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::SimulationSection;
use crate::error::{Error, Result};
use crate::network::{enumerate_routes, Link, LinkId, Network, NodeId, OdPair, RouteSet};
use crate::route_choice::CostHistory;
use crate::sampler::{PosteriorSummary, Trace};
use crate::simulator::{ClampCounts, SyntheticDataset};

pub const MANIFEST: &str = "manifest.toml";
pub const NETWORK: &str = "network.toml";
pub const ROUTES: &str = "routes.csv";
pub const THETA: &str = "theta.csv";
pub const X: &str = "x.csv";
pub const Y: &str = "y.csv";
pub const Z: &str = "z.csv";
pub const COSTS: &str = "costs.csv";
pub const TRACE: &str = "trace.csv";
pub const THETA_HAT: &str = "theta_hat.csv";
pub const SUMMARY: &str = "summary.csv";
pub const RESULTS: &str = "results.csv";
pub const RUNTIME_LOG: &str = "runtime.log";

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| format_error(path, e.to_string()))
}

// ---------------------------------------------------------------- network

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    nodes: Vec<NodeId>,
    links: Vec<LinkEntry>,
    od_pairs: Vec<OdEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkEntry {
    id: LinkId,
    from: NodeId,
    to: NodeId,
    tau0: f64,
    zmax: f64,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_beta")]
    beta: f64,
}

fn default_alpha() -> f64 {
    0.15
}

fn default_beta() -> f64 {
    4.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OdEntry {
    origin: NodeId,
    destination: NodeId,
}

pub fn network_from_toml(text: &str) -> Result<Network> {
    let file: NetworkFile = toml::from_str(text).map_err(|e| Error::InvalidNetwork(e.to_string()))?;
    let links = file
        .links
        .into_iter()
        .map(|l| Link {
            id: l.id,
            from: l.from,
            to: l.to,
            tau0: l.tau0,
            zmax: l.zmax,
            alpha: l.alpha,
            beta: l.beta,
        })
        .collect();
    let od_pairs = file
        .od_pairs
        .into_iter()
        .map(|o| OdPair::new(o.origin, o.destination))
        .collect();
    Network::new(file.nodes, links, od_pairs)
}

pub fn network_to_toml(network: &Network) -> String {
    let file = NetworkFile {
        nodes: network.nodes().collect(),
        links: network
            .links()
            .iter()
            .map(|l| LinkEntry {
                id: l.id,
                from: l.from,
                to: l.to,
                tau0: l.tau0,
                zmax: l.zmax,
                alpha: l.alpha,
                beta: l.beta,
            })
            .collect(),
        od_pairs: network
            .od_pairs()
            .iter()
            .map(|o| OdEntry {
                origin: o.origin,
                destination: o.destination,
            })
            .collect(),
    };
    toml::to_string(&file).expect("network serializes")
}

pub fn read_network(path: &Path) -> Result<Network> {
    network_from_toml(&read_text(path)?).map_err(|e| format_error(path, e.to_string()))
}

// ---------------------------------------------------------------- series

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Time series with a leading `t` column.
pub fn series_csv(labels: &[String], first_day: i64, rows: &[DVector<f64>]) -> Result<Vec<u8>> {
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().cloned());
    csv_bytes(
        &header,
        rows.iter().enumerate().map(|(i, v)| {
            let mut r = vec![(first_day + i as i64).to_string()];
            r.extend(v.iter().map(|x| x.to_string()));
            r
        }),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub labels: Vec<String>,
    pub first_day: i64,
    pub rows: Vec<DVector<f64>>,
}

pub fn read_series(path: &Path) -> Result<Series> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format_error(path, e.to_string()))?;
    let header = reader.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(format_error(path, "first column must be `t`"));
    }
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut days = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let day: i64 = parse_field(path, &record[0])?;
        if let Some(&prev) = days.last() {
            if day != prev + 1 {
                return Err(format_error(path, format!("day {day} does not follow day {prev}")));
            }
        }
        days.push(day);
        let values = record
            .iter()
            .skip(1)
            .map(|f| parse_field(path, f))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != labels.len() {
            return Err(format_error(path, format!("row for day {day} has {} values", values.len())));
        }
        rows.push(DVector::from_vec(values));
    }
    Ok(Series {
        labels,
        first_day: days.first().copied().unwrap_or(1),
        rows,
    })
}

fn parse_field<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| format_error(path, format!("cannot parse `{field}`")))
}

pub fn od_labels(network: &Network) -> Vec<String> {
    network
        .od_pairs()
        .iter()
        .map(|o| format!("od_{}_{}", o.origin, o.destination))
        .collect()
}

pub fn route_labels(route_set: &RouteSet) -> Vec<String> {
    (1..=route_set.len()).map(|k| format!("route_{k}")).collect()
}

pub fn link_labels(ids: &[LinkId]) -> Vec<String> {
    ids.iter().map(|id| id.to_string()).collect()
}

// ---------------------------------------------------------------- dataset

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub periods: usize,
    pub memory: usize,
    /// Dataset files relative to the manifest.
    pub files: Vec<String>,
    pub clamps: ClampRecord,
    pub simulation: SimulationSection,
}

/// Number of components moved onto a bound, per variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampRecord {
    pub theta: usize,
    pub x: usize,
    pub y: usize,
    pub z: usize,
    /// How `θ` is kept inside the demand bounds.
    pub theta_rule: ThetaRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaRule {
    Clamp,
}

impl From<ClampCounts> for ClampRecord {
    fn from(c: ClampCounts) -> Self {
        Self {
            theta: c.theta,
            x: c.x,
            y: c.y,
            z: c.z,
            theta_rule: ThetaRule::Clamp,
        }
    }
}

fn routes_csv(network: &Network, route_set: &RouteSet) -> Result<Vec<u8>> {
    let header: Vec<String> = ["route", "od_pair", "origin", "destination", "links"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    csv_bytes(
        &header,
        (0..route_set.len()).map(|k| {
            let j = route_set.pair_of(k);
            let od = network.od_pairs()[j];
            let links = route_set.route(k).iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ");
            vec![
                (k + 1).to_string(),
                (j + 1).to_string(),
                od.origin.to_string(),
                od.destination.to_string(),
                links,
            ]
        }),
    )
}

fn read_routes(path: &Path) -> Result<Vec<Vec<LinkId>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format_error(path, e.to_string()))?;
    let mut routes = Vec::new();
    for record in reader.records() {
        let record = record?;
        let links = record
            .get(4)
            .ok_or_else(|| format_error(path, "missing links column"))?
            .split_whitespace()
            .map(|f| parse_field(path, f))
            .collect::<Result<Vec<LinkId>>>()?;
        routes.push(links);
    }
    Ok(routes)
}

/// Writes a dataset directory. The manifest is written last, so its presence
/// marks a complete dataset.
pub fn write_dataset(
    dir: &Path,
    network: &Network,
    route_set: &RouteSet,
    simulation: &SimulationSection,
    dataset: &SyntheticDataset,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path)?;
    }
    let ids = network.link_ids();
    write_atomic(&dir.join(NETWORK), network_to_toml(network).as_bytes())?;
    write_atomic(&dir.join(ROUTES), &routes_csv(network, route_set)?)?;
    write_atomic(&dir.join(THETA), &series_csv(&od_labels(network), 1, &dataset.theta)?)?;
    write_atomic(&dir.join(X), &series_csv(&od_labels(network), 1, &dataset.x)?)?;
    write_atomic(&dir.join(Y), &series_csv(&route_labels(route_set), 1, &dataset.y)?)?;
    write_atomic(&dir.join(Z), &series_csv(&link_labels(&ids), 1, &dataset.z)?)?;
    let costs: Vec<DVector<f64>> = dataset.costs.days().map(|(_, c)| c.clone()).collect();
    write_atomic(
        &dir.join(COSTS),
        &series_csv(&route_labels(route_set), dataset.costs.first_day(), &costs)?,
    )?;
    let manifest = Manifest {
        periods: dataset.periods(),
        memory: simulation.phi.len(),
        files: [NETWORK, ROUTES, THETA, X, Y, Z, COSTS].iter().map(|s| s.to_string()).collect(),
        clamps: dataset.clamps.into(),
        simulation: simulation.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&manifest_path, text.as_bytes())
}

/// What the estimator needs from a dataset directory.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub network: Network,
    pub route_set: RouteSet,
    pub costs: CostHistory,
    /// Counts on every link, in network link order.
    pub z: Vec<DVector<f64>>,
    /// True mean OD flows when the directory holds them.
    pub theta: Option<Vec<DVector<f64>>>,
}

pub fn read_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(format_error(&manifest_path, "missing dataset manifest"));
    }
    let network = read_network(&dir.join(NETWORK))?;
    let route_set = enumerate_routes(&network)?;
    let routes_path = dir.join(ROUTES);
    if routes_path.exists() && read_routes(&routes_path)? != route_set.routes() {
        return Err(format_error(&routes_path, "routes differ from enumeration of the network"));
    }
    let z_path = dir.join(Z);
    let z = read_series(&z_path)?;
    if z.labels != link_labels(&network.link_ids()) {
        return Err(format_error(&z_path, "columns must be the network links in order"));
    }
    if z.first_day != 1 {
        return Err(format_error(&z_path, "counts must start at t = 1"));
    }
    let costs_path = dir.join(COSTS);
    let costs = read_series(&costs_path)?;
    if costs.labels.len() != route_set.len() {
        return Err(format_error(&costs_path, "one column per route expected"));
    }
    let costs = CostHistory::new(costs.first_day, costs.rows).map_err(|e| format_error(&costs_path, e.to_string()))?;
    let theta_path = dir.join(THETA);
    let theta = if theta_path.exists() {
        let s = read_series(&theta_path)?;
        if s.labels.len() != network.num_od_pairs() || s.rows.len() != z.rows.len() {
            return Err(format_error(&theta_path, "shape does not match the counts"));
        }
        Some(s.rows)
    } else {
        None
    };
    Ok(LoadedDataset {
        network,
        route_set,
        costs,
        z: z.rows,
        theta,
    })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    toml::from_str(&read_text(&path)?).map_err(|e| format_error(&path, e.to_string()))
}

// ---------------------------------------------------------------- estimates

pub fn trace_csv(trace: &Trace) -> Result<Vec<u8>> {
    let r = trace.memory();
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=r).map(|c| format!("phi_{c}")));
    header.extend(["log_posterior", "accepted", "kept"].iter().map(|s| s.to_string()));
    let mut kept = vec![false; trace.iterations()];
    for &i in &trace.kept {
        kept[i] = true;
    }
    csv_bytes(
        &header,
        (0..trace.iterations()).map(|i| {
            let mut row = vec![(i + 1).to_string()];
            row.extend(trace.phi_chain[i].iter().map(|v| v.to_string()));
            row.push(trace.log_posterior[i].to_string());
            row.push(u8::from(trace.accepted[i]).to_string());
            row.push(u8::from(kept[i]).to_string());
            row
        }),
    )
}

/// One row of `theta_hat.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    pub t: usize,
    pub od_pair: usize,
    pub origin: NodeId,
    pub destination: NodeId,
    pub mean: f64,
    pub hpd: (f64, f64),
    pub truth: Option<f64>,
}

pub fn theta_hat_csv(rows: &[ThetaEstimate]) -> Result<Vec<u8>> {
    let header: Vec<String> = ["t", "od_pair", "origin", "destination", "mean", "hpd_lo", "hpd_hi", "truth"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    csv_bytes(
        &header,
        rows.iter().map(|e| {
            vec![
                e.t.to_string(),
                e.od_pair.to_string(),
                e.origin.to_string(),
                e.destination.to_string(),
                e.mean.to_string(),
                e.hpd.0.to_string(),
                e.hpd.1.to_string(),
                e.truth.map(|v| v.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

pub fn read_theta_hat(path: &Path) -> Result<Vec<ThetaEstimate>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format_error(path, e.to_string()))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record?;
        if r.len() != 8 {
            return Err(format_error(path, "expected 8 columns"));
        }
        out.push(ThetaEstimate {
            t: parse_field(path, &r[0])?,
            od_pair: parse_field(path, &r[1])?,
            origin: parse_field(path, &r[2])?,
            destination: parse_field(path, &r[3])?,
            mean: parse_field(path, &r[4])?,
            hpd: (parse_field(path, &r[5])?, parse_field(path, &r[6])?),
            truth: if r[7].trim().is_empty() {
                None
            } else {
                Some(parse_field(path, &r[7])?)
            },
        });
    }
    Ok(out)
}

fn phi_header(memory: usize) -> Vec<String> {
    (1..=memory)
        .flat_map(|c| [format!("phi_{c}_mean"), format!("phi_{c}_hpd_lo"), format!("phi_{c}_hpd_hi")])
        .collect()
}

fn phi_fields(summary: &PosteriorSummary) -> Vec<String> {
    summary
        .phi_mean
        .iter()
        .zip(&summary.phi_hpd)
        .flat_map(|(m, (lo, hi))| [m.to_string(), lo.to_string(), hi.to_string()])
        .collect()
}

pub fn summary_csv(trace: &Trace, summary: &PosteriorSummary) -> Result<Vec<u8>> {
    let mut header: Vec<String> = ["iterations", "burn_in", "thin", "samples", "accepted", "acceptance_rate"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(phi_header(summary.phi_mean.len()));
    header.push("mse".into());
    let mut row = vec![
        trace.iterations().to_string(),
        trace.burn_in.to_string(),
        trace.thin.to_string(),
        summary.samples.to_string(),
        trace.accepted_count().to_string(),
        summary.acceptance_rate.to_string(),
    ];
    row.extend(phi_fields(summary));
    row.push(summary.mse.map(|v| v.to_string()).unwrap_or_default());
    csv_bytes(&header, [row])
}

/// Reads the single data row of `summary.csv` as `(column, value)` pairs.
pub fn read_summary(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format_error(path, e.to_string()))?;
    let header = reader.headers()?.clone();
    let row = reader
        .records()
        .next()
        .ok_or_else(|| format_error(path, "no data row"))??;
    Ok(header.iter().zip(row.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
}

// ---------------------------------------------------------------- experiments

/// Outcome of one (cell, seed) run of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub scenario: String,
    pub cell: String,
    pub seed: u64,
    pub outcome: std::result::Result<RunStats, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub phi_mean: Vec<f64>,
    pub phi_hpd: Vec<(f64, f64)>,
    pub mse: f64,
    pub acceptance_rate: f64,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Per-run rows followed by one `median` row per cell, in cell order.
pub fn results_csv(rows: &[ExperimentRow], memory: usize) -> Result<Vec<u8>> {
    let mut header: Vec<String> = ["scenario", "cell", "seed"].iter().map(|s| s.to_string()).collect();
    header.extend(phi_header(memory));
    header.extend(["mse", "acceptance_rate", "status"].iter().map(|s| s.to_string()));
    let width = header.len();
    let mut out: Vec<Vec<String>> = Vec::new();
    for r in rows {
        let mut row = vec![r.scenario.clone(), r.cell.clone(), r.seed.to_string()];
        match &r.outcome {
            Ok(s) => {
                for (m, (lo, hi)) in s.phi_mean.iter().zip(&s.phi_hpd) {
                    row.extend([m.to_string(), lo.to_string(), hi.to_string()]);
                }
                row.extend([s.mse.to_string(), s.acceptance_rate.to_string(), "ok".to_string()]);
            }
            Err(msg) => {
                row.resize(width - 1, String::new());
                row.push(format!("error: {msg}"));
            }
        }
        out.push(row);
    }
    let mut cells: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        if !cells.contains(&(r.scenario.as_str(), r.cell.as_str())) {
            cells.push((&r.scenario, &r.cell));
        }
    }
    for (scenario, cell) in cells {
        let ok: Vec<&RunStats> = rows
            .iter()
            .filter(|r| r.scenario == scenario && r.cell == cell)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect();
        let mut row = vec![scenario.to_string(), cell.to_string(), "median".to_string()];
        let col = |f: &dyn Fn(&RunStats) -> f64| {
            let mut v: Vec<f64> = ok.iter().map(|s| f(s)).collect();
            median(&mut v).map(|m| m.to_string()).unwrap_or_default()
        };
        for c in 0..memory {
            row.push(col(&|s| s.phi_mean[c]));
            row.push(col(&|s| s.phi_hpd[c].0));
            row.push(col(&|s| s.phi_hpd[c].1));
        }
        row.push(col(&|s| s.mse));
        row.push(col(&|s| s.acceptance_rate));
        row.push(format!("{} of {} ok", ok.len(), rows.iter().filter(|r| r.cell == cell && r.scenario == scenario).count()));
        out.push(row);
    }
    csv_bytes(&header, out)
}
