//! Treated-to-control matching for the horizontal tests.
//!
//! Matching only ever sees index sets and features `(X, N)`; outcomes are
//! not a parameter of anything in this module.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::InterferenceGraph;
use crate::linalg::{cholesky, solve_lower_in_place, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMethod {
    Random,
    #[default]
    Mahalanobis,
}

impl MatchingMethod {
    pub fn tag(self) -> &'static str {
        match self {
            MatchingMethod::Random => "random",
            MatchingMethod::Mahalanobis => "mahalanobis",
        }
    }
}

/// Injective pairing of treated units with controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(treated, control)` unit indices, sorted by treated unit.
    pub pairs: Vec<(usize, usize)>,
    /// Cost of each pair, when the matching was built from a cost matrix.
    pub costs: Option<Vec<f64>>,
    pub method: MatchingMethod,
    pub total_cost: Option<f64>,
    /// Treated units left without a control (only when controls run out).
    pub unmatched_treated: Vec<usize>,
}

impl Matching {
    pub fn control_of(&self, treated: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&treated, |p| p.0)
            .ok()
            .map(|t| self.pairs[t].1)
    }
}

/// Uniformly random injective matching.
///
/// With at least as many controls as treated units every treated unit gets a
/// distinct control; otherwise every control is given a distinct treated
/// unit and the remaining treated units are reported unmatched.
pub fn match_random(treated: &[usize], control: &[usize], rng: &mut Rng) -> Result<Matching> {
    if treated.is_empty() || control.is_empty() {
        return Err(Error::infeasible(format!(
            "random matching needs treated and control units ({} treated, {} control)",
            treated.len(),
            control.len()
        )));
    }
    let (mut pairs, unmatched) = if treated.len() <= control.len() {
        let mut c = control.to_vec();
        c.shuffle(rng);
        (
            treated.iter().copied().zip(c).collect::<Vec<_>>(),
            Vec::new(),
        )
    } else {
        let mut t = treated.to_vec();
        t.shuffle(rng);
        let rest: Vec<usize> = t[control.len()..].to_vec();
        (
            t.into_iter().zip(control.iter().copied()).collect(),
            rest,
        )
    };
    pairs.sort_unstable();
    let mut unmatched_treated = unmatched;
    unmatched_treated.sort_unstable();
    Ok(Matching {
        pairs,
        costs: None,
        method: MatchingMethod::Random,
        total_cost: None,
        unmatched_treated,
    })
}

/// Dense treated-by-control costs; `+inf` marks a forbidden pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    treated: Vec<usize>,
    control: Vec<usize>,
    data: Vec<f64>,
}

impl CostMatrix {
    /// Row `r` belongs to `treated[r]`, column `c` to `control[c]`.
    pub fn new(treated: Vec<usize>, control: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if data.len() != treated.len() * control.len() {
            return Err(Error::input("cost matrix has the wrong number of entries"));
        }
        if let Some(v) = data.iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(Error::input(format!("cost entries must be >= 0 or +inf, found {v}")));
        }
        Ok(CostMatrix {
            treated,
            control,
            data,
        })
    }

    /// Convenience for tests and small fixtures: row/column ids are `0..`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::input("ragged cost matrix"));
        }
        CostMatrix::new((0..r).collect(), (0..c).collect(), rows.concat())
    }

    pub fn treated(&self) -> &[usize] {
        &self.treated
    }

    pub fn control(&self) -> &[usize] {
        &self.control
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.control.len() + c]
    }
}

/// Stacks covariates and (optionally) neighbor counts into matching features.
pub fn matching_features(x: &Matrix, neighbor_counts: Option<&[f64]>) -> Result<Matrix> {
    let mut cols: Vec<&[f64]> = x.columns().collect();
    if let Some(n) = neighbor_counts {
        cols.push(n);
    }
    Matrix::from_columns(x.rows(), &cols)
}

/// Mahalanobis distances between treated and control feature rows, using the
/// covariance pooled over both groups. Pairs without a caliper edge get
/// `+inf`.
pub fn mahalanobis_costs(
    features: &Matrix,
    treated: &[usize],
    control: &[usize],
    caliper: Option<&InterferenceGraph>,
) -> Result<CostMatrix> {
    let dim = features.cols();
    if dim == 0 {
        return Err(Error::input("Mahalanobis matching needs at least one feature"));
    }
    if let Some(g) = caliper {
        if g.n() != features.rows() {
            return Err(Error::input("caliper graph size differs from the number of units"));
        }
    }
    let pooled: Vec<usize> = treated.iter().chain(control).copied().collect();
    if pooled.len() < 2 {
        return Err(Error::infeasible("Mahalanobis matching needs at least two units"));
    }
    let cov = pooled_covariance(features, &pooled);
    let l = match cholesky(&cov, dim) {
        Some(l) => l,
        None => {
            let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
            let ridge = 1e-8 * trace / dim as f64;
            let mut reg = cov.clone();
            for i in 0..dim {
                reg[i * dim + i] += ridge;
            }
            cholesky(&reg, dim).filter(|_| ridge > 0.0).ok_or_else(|| {
                Error::Numerical(
                    "feature covariance is singular even after ridge regularization".into(),
                )
            })?
        }
    };
    let whiten = |u: usize| {
        let mut z = features.row(u);
        solve_lower_in_place(&l, dim, &mut z);
        z
    };
    let wt: Vec<Vec<f64>> = treated.iter().map(|&u| whiten(u)).collect();
    let wc: Vec<Vec<f64>> = control.iter().map(|&u| whiten(u)).collect();
    let mut data = Vec::with_capacity(treated.len() * control.len());
    for (r, &t) in treated.iter().enumerate() {
        for (c, &u) in control.iter().enumerate() {
            if caliper.is_some_and(|g| !g.has_edge(t, u)) {
                data.push(f64::INFINITY);
                continue;
            }
            let d2: f64 = wt[r].iter().zip(&wc[c]).map(|(a, b)| (a - b) * (a - b)).sum();
            data.push(d2.sqrt());
        }
    }
    CostMatrix::new(treated.to_vec(), control.to_vec(), data)
}

/// Sample covariance (row-major `dim x dim`) of the selected feature rows.
fn pooled_covariance(features: &Matrix, rows: &[usize]) -> Vec<f64> {
    let dim = features.cols();
    let m = rows.len() as f64;
    let means: Vec<f64> = (0..dim)
        .map(|j| rows.iter().map(|&r| features.get(r, j)).sum::<f64>() / m)
        .collect();
    let mut cov = vec![0.0; dim * dim];
    for a in 0..dim {
        for b in 0..=a {
            let s: f64 = rows
                .iter()
                .map(|&r| (features.get(r, a) - means[a]) * (features.get(r, b) - means[b]))
                .sum();
            cov[a * dim + b] = s / (m - 1.0);
            cov[b * dim + a] = cov[a * dim + b];
        }
    }
    cov
}

/// Minimum-cost injective assignment.
///
/// The smaller side is matched completely. Among optimal assignments the
/// lexicographically smallest sequence of partners (in row order of the
/// fully matched side) is returned.
pub fn match_optimal(costs: &CostMatrix) -> Result<Matching> {
    let (nt, nc) = (costs.treated.len(), costs.control.len());
    if nt == 0 || nc == 0 {
        return Err(Error::infeasible(format!(
            "optimal matching needs treated and control units ({nt} treated, {nc} control)"
        )));
    }
    let swapped = nt > nc;
    let (rows, cols) = if swapped { (nc, nt) } else { (nt, nc) };
    let cost = |r: usize, c: usize| {
        if swapped {
            costs.get(c, r)
        } else {
            costs.get(r, c)
        }
    };
    let assignment = match assign(rows, cols, &cost) {
        Some(a) => a,
        None => {
            let unmatched = unmatchable_rows(rows, cols, &cost);
            let ids: Vec<usize> = if swapped {
                unmatched.iter().map(|&r| costs.control[r]).collect()
            } else {
                unmatched.iter().map(|&r| costs.treated[r]).collect()
            };
            let side = if swapped { "control" } else { "treated" };
            return Err(Error::infeasible(format!(
                "no feasible matching under the caliper; unmatchable {side} units: {ids:?}"
            )));
        }
    };
    let mut triples: Vec<(usize, usize, f64)> = assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| {
            let (tr, co) = if swapped { (c, r) } else { (r, c) };
            (costs.treated[tr], costs.control[co], costs.get(tr, co))
        })
        .collect();
    triples.sort_by_key(|t| t.0);
    let total = triples.iter().map(|t| t.2).sum();
    let unmatched_treated = if swapped {
        let mut used = vec![false; nt];
        for &c in &assignment {
            used[c] = true;
        }
        (0..nt).filter(|&t| !used[t]).map(|t| costs.treated[t]).collect()
    } else {
        Vec::new()
    };
    Ok(Matching {
        pairs: triples.iter().map(|t| (t.0, t.1)).collect(),
        costs: Some(triples.iter().map(|t| t.2).collect()),
        method: MatchingMethod::Mahalanobis,
        total_cost: Some(total),
        unmatched_treated,
    })
}

/// Successive shortest paths (Hungarian) for `rows <= cols`, followed by a
/// lexicographic tie-break over the optimal face. Returns the column of each
/// row, or `None` if no finite-cost assignment exists.
fn assign(rows: usize, cols: usize, cost: &dyn Fn(usize, usize) -> f64) -> Option<Vec<usize>> {
    debug_assert!(rows <= cols);
    // 1-based with slot 0 as the virtual source column.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    let mut minv = vec![0.0f64; cols + 1];
    let mut used = vec![false; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let c = cost(i0 - 1, j - 1);
                if c.is_finite() {
                    let cur = c - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return None;
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; rows];
    let mut row_of_col: Vec<Option<usize>> = vec![None; cols];
    for j in 1..=cols {
        if p[j] > 0 {
            col_of_row[p[j] - 1] = j - 1;
            row_of_col[j - 1] = Some(p[j] - 1);
        }
    }
    let duals = Duals {
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
        tol: {
            let mut max = 0.0f64;
            for r in 0..rows {
                for c in 0..cols {
                    let x = cost(r, c);
                    if x.is_finite() {
                        max = max.max(x.abs());
                    }
                }
            }
            1e-9 * (1.0 + max)
        },
    };
    lexicographic_tiebreak(cost, &duals, &mut col_of_row, &mut row_of_col);
    Some(col_of_row)
}

struct Duals {
    u: Vec<f64>,
    v: Vec<f64>,
    tol: f64,
}

impl Duals {
    fn tight(&self, cost: &dyn Fn(usize, usize) -> f64, r: usize, c: usize) -> bool {
        let x = cost(r, c);
        x.is_finite() && x - self.u[r] - self.v[c] <= self.tol
    }

    /// Whether an implicit zero-cost dummy row may hold column `c`.
    fn free_ok(&self, c: usize) -> bool {
        self.v[c] >= -self.tol
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Holder {
    Row(usize),
    Dummy(usize),
}

/// Walks rows in order and moves each to the smallest column that still
/// admits an optimal completion. Optimal assignments are exactly the perfect
/// matchings of the tight subgraph (with dummy rows padding the instance to
/// square), so each move is an alternating cycle found by BFS.
fn lexicographic_tiebreak(
    cost: &dyn Fn(usize, usize) -> f64,
    duals: &Duals,
    col_of_row: &mut [usize],
    row_of_col: &mut [Option<usize>],
) {
    let rows = col_of_row.len();
    let cols = row_of_col.len();
    let mut locked = vec![false; cols];
    let mut seen = vec![false; cols];
    let mut parent: Vec<Option<usize>> = vec![None; cols];
    let mut queue = std::collections::VecDeque::new();
    for i in 0..rows {
        let target = col_of_row[i];
        for j in 0..target {
            if locked[j] || !duals.tight(cost, i, j) {
                continue;
            }
            // BFS over columns: reaching column c means its holder must move.
            seen.iter_mut().for_each(|s| *s = false);
            parent.iter_mut().for_each(|p| *p = None);
            queue.clear();
            seen[j] = true;
            queue.push_back(j);
            let mut found = None;
            'bfs: while let Some(c) = queue.pop_front() {
                let holder = match row_of_col[c] {
                    Some(r) => Holder::Row(r),
                    None => Holder::Dummy(c),
                };
                for next in 0..cols {
                    if seen[next] || locked[next] {
                        continue;
                    }
                    let ok = match holder {
                        Holder::Row(r) => r != i && duals.tight(cost, r, next),
                        Holder::Dummy(_) => duals.free_ok(next),
                    };
                    if !ok {
                        continue;
                    }
                    seen[next] = true;
                    parent[next] = Some(c);
                    if next == target {
                        found = Some(next);
                        break 'bfs;
                    }
                    queue.push_back(next);
                }
            }
            let Some(end) = found else { continue };
            // Shift holders along the path: holder of parent[c] takes c.
            let mut c = end;
            let mut moves = Vec::new();
            while let Some(prev) = parent[c] {
                moves.push((row_of_col[prev], c));
                c = prev;
            }
            for (h, to) in moves {
                row_of_col[to] = h;
                if let Some(r) = h {
                    col_of_row[r] = to;
                }
            }
            row_of_col[j] = Some(i);
            col_of_row[i] = j;
            break;
        }
        locked[col_of_row[i]] = true;
    }
}

/// Rows left out of a maximum-cardinality matching on finite-cost pairs.
fn unmatchable_rows(rows: usize, cols: usize, cost: &dyn Fn(usize, usize) -> f64) -> Vec<usize> {
    fn augment(
        r: usize,
        cols: usize,
        cost: &dyn Fn(usize, usize) -> f64,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for c in 0..cols {
            if seen[c] || !cost(r, c).is_finite() {
                continue;
            }
            seen[c] = true;
            if owner[c].is_none_or(|o| augment(o, cols, cost, seen, owner)) {
                owner[c] = Some(r);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; cols];
    let mut out = Vec::new();
    for r in 0..rows {
        let mut seen = vec![false; cols];
        if !augment(r, cols, cost, &mut seen, &mut owner) {
            out.push(r);
        }
    }
    out
}
