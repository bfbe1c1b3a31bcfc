//! Interference graphs and candidate exposures.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};

/// Undirected graph in compressed neighbor-list form.
///
/// Neighbor lists are sorted by vertex id and symmetric; there are no
/// self-loops. When weights are present there is one per stored arc.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Option<Vec<f64>>,
}

/// An edge as supplied by a caller, before symmetrization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphSummary {
    pub n: usize,
    pub m: usize,
    pub degree_min: usize,
    pub degree_mean: f64,
    pub degree_max: usize,
}

/// Distance diagnostics over reachable vertex pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceDiagnostics {
    pub diameter: usize,
    pub average_distance: f64,
    pub components: usize,
}

impl InterferenceGraph {
    /// Builds a symmetric graph; duplicates collapse keeping the largest
    /// weight and self-loops are dropped (reported in the returned warnings).
    pub fn from_edges(
        n: usize,
        edges: &[Edge],
        weighted: bool,
    ) -> Result<(InterferenceGraph, Vec<String>)> {
        let mut warnings = Vec::new();
        let mut self_loops = 0usize;
        let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for (row, e) in edges.iter().enumerate() {
            if e.src >= n || e.dst >= n {
                return Err(Error::input(format!(
                    "edge {} references vertex {} but the graph has {n} vertices",
                    row + 1,
                    e.src.max(e.dst)
                )));
            }
            let w = match (weighted, e.weight) {
                (false, _) => 0.0,
                (true, Some(w)) if w.is_finite() && w >= 0.0 => w,
                (true, Some(w)) => {
                    return Err(Error::input(format!(
                        "edge {} has invalid weight {w}; weights must be finite and nonnegative",
                        row + 1
                    )))
                }
                (true, None) => {
                    return Err(Error::input(format!("edge {} is missing a weight", row + 1)))
                }
            };
            if e.src == e.dst {
                self_loops += 1;
                continue;
            }
            for (a, b) in [(e.src, e.dst), (e.dst, e.src)] {
                let slot = adj[a].entry(b).or_insert(w);
                if w > *slot {
                    *slot = w;
                }
            }
        }
        if self_loops > 0 {
            warnings.push(format!("dropped {self_loops} self-loop(s)"));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        for row in &adj {
            for (&j, &w) in row {
                neighbors.push(j);
                weights.push(w);
            }
            offsets.push(neighbors.len());
        }
        Ok((
            InterferenceGraph {
                offsets,
                neighbors,
                weights: weighted.then_some(weights),
            },
            warnings,
        ))
    }

    /// Builds from already-symmetric sorted neighbor lists.
    pub(crate) fn from_adjacency(lists: Vec<Vec<usize>>) -> InterferenceGraph {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            neighbors.extend(l);
            offsets.push(neighbors.len());
        }
        InterferenceGraph {
            offsets,
            neighbors,
            weights: None,
        }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn neighbor_weights(&self, i: usize) -> Option<&[f64]> {
        self.weights
            .as_ref()
            .map(|w| &w[self.offsets[i]..self.offsets[i + 1]])
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Undirected edges `(i, j, weight)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, Option<f64>)> + '_ {
        (0..self.n()).flat_map(move |i| {
            let w = self.neighbor_weights(i);
            self.neighbors(i)
                .iter()
                .enumerate()
                .filter(move |(_, &j)| j > i)
                .map(move |(t, &j)| (i, j, w.map(|w| w[t])))
        })
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.degree(i) as f64).collect()
    }

    pub fn summary(&self) -> GraphSummary {
        let n = self.n();
        let degs = (0..n).map(|i| self.degree(i));
        GraphSummary {
            n,
            m: self.edge_count(),
            degree_min: degs.clone().min().unwrap_or(0),
            degree_mean: if n == 0 {
                0.0
            } else {
                self.neighbors.len() as f64 / n as f64
            },
            degree_max: degs.max().unwrap_or(0),
        }
    }

    /// Component label for every vertex, labels in order of first vertex.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            queue.push_back(s);
            while let Some(v) = queue.pop_front() {
                for &u in self.neighbors(v) {
                    if label[u] == usize::MAX {
                        label[u] = next;
                        queue.push_back(u);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// The largest connected component (ties go to the one containing the
    /// smallest vertex) and the original index of each kept vertex.
    pub fn largest_component(&self) -> (InterferenceGraph, Vec<usize>) {
        let label = self.components();
        let mut sizes: HashMap<usize, usize> = HashMap::new();
        for &l in &label {
            *sizes.entry(l).or_default() += 1;
        }
        let best = (0..sizes.len())
            .max_by(|a, b| sizes[a].cmp(&sizes[b]).then(b.cmp(a)))
            .unwrap_or(0);
        let kept: Vec<usize> = (0..self.n()).filter(|&v| label[v] == best).collect();
        (self.induced(&kept), kept)
    }

    /// Subgraph on `vertices` (sorted), relabelled densely.
    pub fn induced(&self, vertices: &[usize]) -> InterferenceGraph {
        let mut new_id = vec![usize::MAX; self.n()];
        for (t, &v) in vertices.iter().enumerate() {
            new_id[v] = t;
        }
        let mut offsets = vec![0];
        let mut neighbors = Vec::new();
        let mut weights = self.weights.as_ref().map(|_| Vec::new());
        for &v in vertices {
            let w = self.neighbor_weights(v);
            for (t, &u) in self.neighbors(v).iter().enumerate() {
                if new_id[u] != usize::MAX {
                    neighbors.push(new_id[u]);
                    if let (Some(ws), Some(w)) = (weights.as_mut(), w) {
                        ws.push(w[t]);
                    }
                }
            }
            offsets.push(neighbors.len());
        }
        InterferenceGraph {
            offsets,
            neighbors,
            weights,
        }
    }

    /// All-pairs BFS distances; quadratic in `n`, meant for diagnostics.
    pub fn distance_diagnostics(&self) -> DistanceDiagnostics {
        let n = self.n();
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        let (mut diameter, mut total, mut pairs) = (0usize, 0u128, 0u128);
        for s in 0..n {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[s] = 0;
            queue.push_back(s);
            while let Some(v) = queue.pop_front() {
                let dv = dist[v];
                if dv > 0 {
                    diameter = diameter.max(dv);
                    total += dv as u128;
                    pairs += 1;
                }
                for &u in self.neighbors(v) {
                    if dist[u] == usize::MAX {
                        dist[u] = dv + 1;
                        queue.push_back(u);
                    }
                }
            }
        }
        let components = self.components().into_iter().max().map_or(0, |m| m + 1);
        DistanceDiagnostics {
            diameter,
            average_distance: if pairs == 0 {
                0.0
            } else {
                total as f64 / pairs as f64
            },
            components,
        }
    }
}

/// An edge as read from a file, with vertex ids still unresolved.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub src: String,
    pub dst: String,
    pub weight: Option<f64>,
}

/// Resolves edge endpoints against unit ids and builds the graph.
pub fn load_graph(
    records: &[EdgeRecord],
    ids: &HashMap<&str, usize>,
    weighted: bool,
) -> Result<(InterferenceGraph, Vec<String>)> {
    let mut edges = Vec::with_capacity(records.len());
    for (row, r) in records.iter().enumerate() {
        let resolve = |id: &str| {
            ids.get(id).copied().ok_or_else(|| {
                Error::input(format!("edge row {}: unknown unit id {id:?}", row + 1))
            })
        };
        edges.push(Edge {
            src: resolve(&r.src)?,
            dst: resolve(&r.dst)?,
            weight: r.weight,
        });
    }
    InterferenceGraph::from_edges(ids.len(), &edges, weighted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMetric {
    NegativeEuclidean,
    Cosine,
}

impl SimilarityMetric {
    pub fn similarity(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            SimilarityMetric::NegativeEuclidean => {
                -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            }
            SimilarityMetric::Cosine => {
                let (na, nb) = (norm(a), norm(b));
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    dot(a, b) / (na * nb)
                }
            }
        }
    }
}

/// Connects every pair whose covariate similarity reaches `epsilon`.
/// Edge weights are the similarity clamped at 0.
pub fn build_similarity_graph(
    x: &Matrix,
    metric: SimilarityMetric,
    epsilon: f64,
) -> Result<InterferenceGraph> {
    if x.cols() == 0 {
        return Err(Error::input("similarity graph needs at least one covariate"));
    }
    if epsilon.is_nan() {
        return Err(Error::input("similarity threshold is NaN"));
    }
    let n = x.rows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let s = metric.similarity(&rows[i], &rows[j]);
            if s >= epsilon {
                edges.push(Edge {
                    src: i,
                    dst: j,
                    weight: Some(s.max(0.0)),
                });
            }
        }
    }
    InterferenceGraph::from_edges(n, &edges, true).map(|(g, _)| g)
}

/// Which summary of other units' treatments to use as the exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum ExposureKind {
    /// Number of treated neighbors.
    #[serde(rename = "numFrds")]
    NumFrds,
    /// Fraction of neighbors treated; 0 for isolated vertices.
    #[serde(rename = "fracFrds")]
    #[default]
    FracFrds,
    /// Number of treated vertices at distance exactly two.
    #[serde(rename = "num2Frds")]
    Num2Frds,
    /// Similarity-weighted sum of treated neighbors.
    #[serde(rename = "wAvgCpt")]
    WAvgCpt,
}

impl ExposureKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExposureKind::NumFrds => "numFrds",
            ExposureKind::FracFrds => "fracFrds",
            ExposureKind::Num2Frds => "num2Frds",
            ExposureKind::WAvgCpt => "wAvgCpt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExposureSpec {
    pub kind: ExposureKind,
}

/// Per-unit exposures for one treatment vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Exposure {
    pub values: Vec<f64>,
    /// Units with no neighbors (their `fracFrds` is defined as 0).
    pub isolated: Vec<usize>,
}

/// Precomputed exposure evaluator for a fixed set of units.
///
/// Vertical tests evaluate exposures for the same focal units under
/// hundreds of permuted treatment vectors; two-hop sets are built once here.
#[derive(Debug, Clone)]
pub struct ExposurePlan<'g> {
    graph: &'g InterferenceGraph,
    kind: ExposureKind,
    units: Vec<usize>,
    two_hop: Vec<Vec<usize>>,
}

impl<'g> ExposurePlan<'g> {
    pub fn new(graph: &'g InterferenceGraph, spec: ExposureSpec, units: &[usize]) -> Result<Self> {
        if spec.kind == ExposureKind::WAvgCpt && !graph.is_weighted() {
            return Err(Error::input(
                "wAvgCpt exposure requires a weighted graph (edges.csv with a weight column)",
            ));
        }
        if let Some(&u) = units.iter().find(|&&u| u >= graph.n()) {
            return Err(Error::input(format!(
                "unit {u} is outside the graph ({} vertices)",
                graph.n()
            )));
        }
        let two_hop = if spec.kind == ExposureKind::Num2Frds {
            let mut stamp = vec![usize::MAX; graph.n()];
            units
                .iter()
                .map(|&i| {
                    stamp[i] = i;
                    for &j in graph.neighbors(i) {
                        stamp[j] = i;
                    }
                    let mut set = Vec::new();
                    for &j in graph.neighbors(i) {
                        for &l in graph.neighbors(j) {
                            if stamp[l] != i {
                                stamp[l] = i;
                                set.push(l);
                            }
                        }
                    }
                    set.sort_unstable();
                    set
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(ExposurePlan {
            graph,
            kind: spec.kind,
            units: units.to_vec(),
            two_hop,
        })
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    /// Writes one exposure per planned unit into `out`.
    pub fn eval(&self, w: &[u8], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.units.len());
        let g = self.graph;
        for (t, &i) in self.units.iter().enumerate() {
            let nb = g.neighbors(i);
            out[t] = match self.kind {
                ExposureKind::NumFrds => count(nb, w),
                ExposureKind::FracFrds => {
                    if nb.is_empty() {
                        0.0
                    } else {
                        count(nb, w) / nb.len() as f64
                    }
                }
                ExposureKind::Num2Frds => count(&self.two_hop[t], w),
                ExposureKind::WAvgCpt => {
                    let ws = g.neighbor_weights(i).unwrap_or(&[]);
                    nb.iter()
                        .zip(ws)
                        .map(|(&j, &s)| if w[j] == 1 { s } else { 0.0 })
                        .sum()
                }
            };
        }
    }
}

#[inline]
fn count(idx: &[usize], w: &[u8]) -> f64 {
    idx.iter().map(|&j| u32::from(w[j])).sum::<u32>() as f64
}

/// Exposure of every unit to the treatment vector `w`.
pub fn compute_exposure(
    graph: &InterferenceGraph,
    w: &[u8],
    spec: ExposureSpec,
) -> Result<Exposure> {
    if w.len() != graph.n() {
        return Err(Error::input(format!(
            "treatment vector has {} entries, graph has {} vertices",
            w.len(),
            graph.n()
        )));
    }
    let units: Vec<usize> = (0..graph.n()).collect();
    let plan = ExposurePlan::new(graph, spec, &units)?;
    let mut values = vec![0.0; units.len()];
    plan.eval(w, &mut values);
    let isolated = units.into_iter().filter(|&i| graph.degree(i) == 0).collect();
    Ok(Exposure { values, isolated })
}
