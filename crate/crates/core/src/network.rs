//! Road network, route enumeration, link-route incidence and BPR link costs.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

pub type NodeId = u32;
pub type LinkId = u32;

/// Directed link with a BPR volume-delay function.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    /// Free-flow travel time.
    pub tau0: f64,
    /// Capacity in vehicles per period. Not a hard limit.
    pub zmax: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Link {
    /// Link with the usual BPR shape parameters `alpha = 0.15`, `beta = 4`.
    pub fn bpr(id: LinkId, from: NodeId, to: NodeId, tau0: f64, zmax: f64) -> Self {
        Self {
            id,
            from,
            to,
            tau0,
            zmax,
            alpha: 0.15,
            beta: 4.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidNetwork(format!("link {}: {what}", self.id)));
        if self.id == 0 {
            return bad("ids are 1-based");
        }
        if self.from == self.to {
            return bad("self loop");
        }
        if !(self.tau0 > 0.0) {
            return bad("tau0 must be positive");
        }
        if !(self.zmax > 0.0) {
            return bad("zmax must be positive");
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return bad("alpha and beta must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OdPair {
    pub origin: NodeId,
    pub destination: NodeId,
}

impl OdPair {
    pub fn new(origin: NodeId, destination: NodeId) -> Self {
        Self { origin, destination }
    }
}

impl std::fmt::Display for OdPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.origin, self.destination)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: BTreeSet<NodeId>,
    links: Vec<Link>,
    od_pairs: Vec<OdPair>,
    link_index: HashMap<LinkId, usize>,
}

impl Network {
    pub fn new(
        nodes: impl IntoIterator<Item = NodeId>,
        links: Vec<Link>,
        od_pairs: Vec<OdPair>,
    ) -> Result<Self> {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().collect();
        let mut link_index = HashMap::with_capacity(links.len());
        for (i, link) in links.iter().enumerate() {
            link.validate()?;
            if !nodes.contains(&link.from) || !nodes.contains(&link.to) {
                return Err(Error::InvalidNetwork(format!(
                    "link {} references an unknown node",
                    link.id
                )));
            }
            if link_index.insert(link.id, i).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate link id {}", link.id)));
            }
        }
        let mut seen = BTreeSet::new();
        for od in &od_pairs {
            if !nodes.contains(&od.origin) || !nodes.contains(&od.destination) {
                return Err(Error::InvalidNetwork(format!("OD pair {od} references an unknown node")));
            }
            if od.origin == od.destination {
                return Err(Error::InvalidNetwork(format!("OD pair {od} has origin = destination")));
            }
            if !seen.insert(*od) {
                return Err(Error::InvalidNetwork(format!("duplicate OD pair {od}")));
            }
        }
        Ok(Self {
            nodes,
            links,
            od_pairs,
            link_index,
        })
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn od_pairs(&self) -> &[OdPair] {
        &self.od_pairs
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_od_pairs(&self) -> usize {
        self.od_pairs.len()
    }

    /// Position of a link id in `links()`.
    pub fn link_position(&self, id: LinkId) -> Result<usize> {
        self.link_index.get(&id).copied().ok_or(Error::UnknownLink(id))
    }

    pub fn link(&self, id: LinkId) -> Result<&Link> {
        Ok(&self.links[self.link_position(id)?])
    }

    pub fn link_ids(&self) -> Vec<LinkId> {
        self.links.iter().map(|l| l.id).collect()
    }
}

/// Enumerated routes, grouped by OD pair in network order.
///
/// The global route index runs over OD pairs in order and then over routes
/// within a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteSet {
    routes: Vec<Vec<LinkId>>,
    pair_offsets: Vec<usize>,
}

impl RouteSet {
    /// Builds a route set from per-pair route lists, as given.
    pub fn from_pairs(per_pair: Vec<Vec<Vec<LinkId>>>) -> Result<Self> {
        let mut routes = Vec::new();
        let mut pair_offsets = vec![0];
        for (j, pair) in per_pair.into_iter().enumerate() {
            if pair.is_empty() {
                return Err(Error::InvalidNetwork(format!("OD pair index {j} has no routes")));
            }
            routes.extend(pair);
            pair_offsets.push(routes.len());
        }
        Ok(Self { routes, pair_offsets })
    }

    /// Total number of routes `K`.
    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_offsets.len() - 1
    }

    /// Global route indices of OD pair `j`.
    pub fn pair_range(&self, j: usize) -> Range<usize> {
        self.pair_offsets[j]..self.pair_offsets[j + 1]
    }

    pub fn pair_len(&self, j: usize) -> usize {
        self.pair_offsets[j + 1] - self.pair_offsets[j]
    }

    pub fn route(&self, k: usize) -> &[LinkId] {
        &self.routes[k]
    }

    pub fn routes(&self) -> &[Vec<LinkId>] {
        &self.routes
    }

    pub fn pair_routes(&self, j: usize) -> &[Vec<LinkId>] {
        &self.routes[self.pair_range(j)]
    }

    /// OD pair index owning global route `k`.
    pub fn pair_of(&self, k: usize) -> usize {
        self.pair_offsets.partition_point(|&o| o <= k) - 1
    }
}

/// All simple directed paths for every OD pair, sorted by link-id sequence.
pub fn enumerate_routes(network: &Network) -> Result<RouteSet> {
    let mut out_links: HashMap<NodeId, Vec<&Link>> = HashMap::new();
    for link in network.links() {
        out_links.entry(link.from).or_default().push(link);
    }
    for v in out_links.values_mut() {
        v.sort_by_key(|l| l.id);
    }

    let mut per_pair = Vec::with_capacity(network.num_od_pairs());
    for od in network.od_pairs() {
        let mut found = Vec::new();
        let mut visited = BTreeSet::from([od.origin]);
        let mut path = Vec::new();
        simple_paths(od.origin, od.destination, &out_links, &mut visited, &mut path, &mut found);
        if found.is_empty() {
            return Err(Error::NoRoute {
                origin: od.origin,
                destination: od.destination,
            });
        }
        found.sort();
        per_pair.push(found);
    }
    RouteSet::from_pairs(per_pair)
}

fn simple_paths(
    at: NodeId,
    target: NodeId,
    out_links: &HashMap<NodeId, Vec<&Link>>,
    visited: &mut BTreeSet<NodeId>,
    path: &mut Vec<LinkId>,
    found: &mut Vec<Vec<LinkId>>,
) {
    if at == target {
        found.push(path.clone());
        return;
    }
    let Some(links) = out_links.get(&at) else {
        return;
    };
    for link in links {
        if visited.insert(link.to) {
            path.push(link.id);
            simple_paths(link.to, target, out_links, visited, path, found);
            path.pop();
            visited.remove(&link.to);
        }
    }
}

/// Dense 0/1 link-route incidence, with a row view for observed links.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    full: DMatrix<f64>,
    observed: Vec<LinkId>,
    selected: DMatrix<f64>,
}

impl IncidenceMatrix {
    /// `|L| × K`, rows in network link order.
    pub fn full(&self) -> &DMatrix<f64> {
        &self.full
    }

    /// `|I| × K`, rows in the order of `observed_links()`.
    pub fn selected(&self) -> &DMatrix<f64> {
        &self.selected
    }

    pub fn observed_links(&self) -> &[LinkId] {
        &self.observed
    }
}

/// Builds the incidence matrix and the row selection for `observed_links`.
pub fn incidence_matrix(
    route_set: &RouteSet,
    network: &Network,
    observed_links: &[LinkId],
) -> Result<IncidenceMatrix> {
    let mut full = DMatrix::zeros(network.num_links(), route_set.len());
    for (k, route) in route_set.routes().iter().enumerate() {
        for &id in route {
            full[(network.link_position(id)?, k)] = 1.0;
        }
    }
    let rows = observed_links
        .iter()
        .map(|&id| network.link_position(id))
        .collect::<Result<Vec<_>>>()?;
    let selected = full.select_rows(rows.iter());
    Ok(IncidenceMatrix {
        full,
        observed: observed_links.to_vec(),
        selected,
    })
}

/// BPR travel time `tau0 · (1 + alpha · (z / zmax)^beta)`.
pub fn bpr_cost(link: &Link, volume: f64) -> Result<f64> {
    if volume < 0.0 || volume.is_nan() {
        return Err(Error::NegativeVolume(volume));
    }
    if volume == 0.0 {
        return Ok(link.tau0);
    }
    Ok(link.tau0 * (1.0 + link.alpha * (volume / link.zmax).powf(link.beta)))
}

/// Route costs `Δᵀ g(z)` for volumes on every link.
pub fn route_costs(network: &Network, route_set: &RouteSet, link_volumes: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("route_costs link volumes", network.num_links(), link_volumes.len())?;
    let link_costs = network
        .links()
        .iter()
        .zip(link_volumes.iter())
        .map(|(link, &z)| bpr_cost(link, z))
        .collect::<Result<Vec<_>>>()?;
    let mut costs = DVector::zeros(route_set.len());
    for (k, route) in route_set.routes().iter().enumerate() {
        for &id in route {
            costs[k] += link_costs[network.link_position(id)?];
        }
    }
    Ok(costs)
}

/// Free-flow route costs (all volumes zero).
pub fn free_flow_costs(network: &Network, route_set: &RouteSet) -> Result<DVector<f64>> {
    route_costs(network, route_set, &DVector::zeros(network.num_links()))
}

/// Time-averaged volume-to-capacity ratio per link.
pub fn congestion_levels(volumes: &[DVector<f64>], network: &Network) -> Result<Vec<f64>> {
    if volumes.is_empty() {
        return Err(Error::Dimension {
            context: "congestion_levels periods",
            expected: 1,
            actual: 0,
        });
    }
    let mut sums = vec![0.0; network.num_links()];
    for z in volumes {
        check_dim("congestion_levels link volumes", network.num_links(), z.len())?;
        for (s, v) in sums.iter_mut().zip(z.iter()) {
            *s += v;
        }
    }
    let periods = volumes.len() as f64;
    Ok(network
        .links()
        .iter()
        .zip(sums)
        .map(|(link, s)| s / (periods * link.zmax))
        .collect())
}

/// The 8-node, 10-link test network with origins 1, 2 and destinations 7, 8.
///
/// The topology is a stand-in chosen to match the published route counts
/// (three routes per OD pair, twelve in total) and the fact that link 1 lies
/// on no route leaving node 2. All links use `tau0 = 1`, `zmax = 130`.
pub fn canonical_network() -> (Network, RouteSet) {
    const LINKS: [(LinkId, NodeId, NodeId); 10] = [
        (1, 1, 3),
        (2, 3, 4),
        (3, 4, 7),
        (4, 6, 7),
        (5, 4, 6),
        (6, 5, 6),
        (7, 6, 8),
        (8, 5, 8),
        (9, 3, 5),
        (10, 2, 3),
    ];
    let links = LINKS
        .iter()
        .map(|&(id, from, to)| Link::bpr(id, from, to, 1.0, 130.0))
        .collect();
    let od_pairs = vec![
        OdPair::new(1, 7),
        OdPair::new(1, 8),
        OdPair::new(2, 7),
        OdPair::new(2, 8),
    ];
    let network = Network::new(1..=8, links, od_pairs).expect("canonical network is valid");
    let routes = enumerate_routes(&network).expect("canonical network is connected");
    (network, routes)
}
