use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{load_graph, InterferenceGraph};
use crate::io::read_edge_records;
use crate::rng::Rng;

/// How to obtain the simulation network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// Ring lattice with `k` nearest neighbors, each edge rewired with
    /// probability `beta`.
    WattsStrogatz { n: usize, k: usize, beta: f64 },
    /// Every pair joined independently with probability `p`.
    ErdosRenyi { n: usize, p: f64 },
    /// Edge list on disk (CSV `src,dst[,weight]` or whitespace pairs).
    File { path: PathBuf },
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec::WattsStrogatz {
            n: 800,
            k: 20,
            beta: 0.1,
        }
    }
}

/// A generated or loaded network, restricted to its largest component.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: InterferenceGraph,
    /// Vertex labels (file ids, or generator indices) of the kept vertices.
    pub labels: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn gen_network(spec: &NetworkSpec, rng: &mut Rng) -> Result<Network> {
    let (graph, labels) = match spec {
        NetworkSpec::WattsStrogatz { n, k, beta } => {
            let g = watts_strogatz(*n, *k, *beta, rng)?;
            (g, (0..*n).map(|i| i.to_string()).collect::<Vec<_>>())
        }
        NetworkSpec::ErdosRenyi { n, p } => {
            let g = erdos_renyi(*n, *p, rng)?;
            (g, (0..*n).map(|i| i.to_string()).collect())
        }
        NetworkSpec::File { path } => load_edge_file(path)?,
    };
    let (lcc, kept) = graph.largest_component();
    let mut warnings = Vec::new();
    if lcc.n() < graph.n() {
        warnings.push(format!(
            "largest connected component has {} of {} vertices; continuing with n = {}",
            lcc.n(),
            graph.n(),
            lcc.n()
        ));
    }
    Ok(Network {
        labels: kept.iter().map(|&v| labels[v].clone()).collect(),
        graph: lcc,
        warnings,
    })
}

/// Loads an edge list whose vertices are named by the ids it mentions, in
/// order of first appearance.
pub fn load_edge_file(path: &Path) -> Result<(InterferenceGraph, Vec<String>)> {
    let records = read_edge_records(path)?;
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for r in &records {
        for id in [&r.src, &r.dst] {
            if !index.contains_key(id) {
                index.insert(id.clone(), ids.len());
                ids.push(id.clone());
            }
        }
    }
    let lookup: HashMap<&str, usize> = index.iter().map(|(k, &v)| (k.as_str(), v)).collect();
    let weighted = records.iter().any(|r| r.weight.is_some());
    let (g, _) = load_graph(&records, &lookup, weighted)?;
    Ok((g, ids))
}

pub fn watts_strogatz(n: usize, k: usize, beta: f64, rng: &mut Rng) -> Result<InterferenceGraph> {
    if k < 2 || k >= n {
        return Err(Error::input(format!(
            "Watts-Strogatz needs 2 <= k < n (k = {k}, n = {n})"
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::input(format!("rewiring probability {beta} outside [0, 1]")));
    }
    let half = k / 2;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for u in 0..n {
        for j in 1..=half {
            let v = (u + j) % n;
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    for j in 1..=half {
        for u in 0..n {
            let v = (u + j) % n;
            if !adj[u].contains(&v) || rng.random::<f64>() >= beta || adj[u].len() >= n - 1 {
                continue;
            }
            let mut w = rng.random_range(0..n);
            while w == u || adj[u].contains(&w) {
                w = rng.random_range(0..n);
            }
            adj[u].remove(&v);
            adj[v].remove(&u);
            adj[u].insert(w);
            adj[w].insert(u);
        }
    }
    Ok(InterferenceGraph::from_adjacency(
        adj.into_iter().map(|s| s.into_iter().collect()).collect(),
    ))
}

pub fn erdos_renyi(n: usize, p: f64, rng: &mut Rng) -> Result<InterferenceGraph> {
    if n == 0 {
        return Err(Error::input("Erdos-Renyi graph needs at least one vertex"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::input(format!("edge probability {p} outside [0, 1]")));
    }
    let mut adj = vec![Vec::new(); n];
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
    }
    Ok(InterferenceGraph::from_adjacency(adj))
}
