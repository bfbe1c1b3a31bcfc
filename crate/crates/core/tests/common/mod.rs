//! Independent reference implementations and fixtures shared by the
//! integration tests.
#![allow(dead_code)]

use ifs_core::graph::{Edge, InterferenceGraph};
use ifs_core::linalg::Matrix;
use ifs_core::panel::{PanelDataset, TreatmentMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}

/// Least squares through the normal equations `(X'X) b = X'y`.
pub fn normal_equations(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * x;
    let xty = x.transpose() * yv;
    xtx.cholesky().expect("full rank").solve(&xty).iter().copied().collect()
}

/// Residual sum of squares of the SVD least-squares fit.
pub fn svd_rss(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let yv = DVector::from_column_slice(y);
    let b = x.clone().svd(true, true).solve(&yv, 1e-12).expect("svd solve");
    (yv - x * b).norm_squared()
}

/// F statistic computed directly from the two residual sums of squares.
pub fn anova_f_direct(x: &DMatrix<f64>, full: &[usize], reduced: &[usize], y: &[f64]) -> f64 {
    let xf = x.select_columns(full);
    let xr = x.select_columns(reduced);
    let (rf, rr) = (svd_rss(&xf, y), svd_rss(&xr, y));
    let df_num = (full.len() - reduced.len()) as f64;
    let df_den = (x.nrows() - full.len()) as f64;
    ((rr - rf) / df_num) / (rf / df_den)
}

/// Minimum total cost over every injection of the smaller side into the
/// larger one.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    let r = cost.len();
    let c = cost[0].len();
    let transposed;
    let (m, rows, cols) = if r <= c {
        (cost, r, c)
    } else {
        transposed = (0..c).map(|j| (0..r).map(|i| cost[i][j]).collect()).collect::<Vec<Vec<f64>>>();
        (transposed.as_slice(), c, r)
    };
    let mut used = vec![false; cols];
    fn go(m: &[Vec<f64>], row: usize, rows: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if row == rows {
            *best = acc;
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(m, row + 1, rows, used, acc + m[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(m, 0, rows, &mut used, 0.0, &mut best);
    best
}

/// Random simple graph as an adjacency matrix plus a weight per edge.
pub struct DenseGraph {
    pub n: usize,
    pub adj: Vec<Vec<bool>>,
    pub weight: Vec<Vec<f64>>,
}

impl DenseGraph {
    pub fn random(n: usize, p: f64, r: &mut impl Rng) -> Self {
        let mut adj = vec![vec![false; n]; n];
        let mut weight = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                if r.random::<f64>() < p {
                    let w = r.random_range(0.1..2.0);
                    adj[i][j] = true;
                    adj[j][i] = true;
                    weight[i][j] = w;
                    weight[j][i] = w;
                }
            }
        }
        DenseGraph { n, adj, weight }
    }

    pub fn to_graph(&self, weighted: bool) -> InterferenceGraph {
        let mut edges = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.adj[i][j] {
                    edges.push(Edge {
                        src: i,
                        dst: j,
                        weight: weighted.then_some(self.weight[i][j]),
                    });
                }
            }
        }
        InterferenceGraph::from_edges(self.n, &edges, weighted).unwrap().0
    }

    pub fn num_frds(&self, i: usize, w: &[u8]) -> f64 {
        (0..self.n).filter(|&j| self.adj[i][j] && w[j] == 1).count() as f64
    }

    pub fn frac_frds(&self, i: usize, w: &[u8]) -> f64 {
        let deg = (0..self.n).filter(|&j| self.adj[i][j]).count();
        if deg == 0 {
            0.0
        } else {
            self.num_frds(i, w) / deg as f64
        }
    }

    /// Treated vertices at shortest-path distance exactly two.
    pub fn num_2frds(&self, i: usize, w: &[u8]) -> f64 {
        (0..self.n)
            .filter(|&j| {
                j != i
                    && !self.adj[i][j]
                    && w[j] == 1
                    && (0..self.n).any(|l| self.adj[i][l] && self.adj[l][j])
            })
            .count() as f64
    }

    pub fn w_avg(&self, i: usize, w: &[u8]) -> f64 {
        (0..self.n)
            .filter(|&j| self.adj[i][j] && w[j] == 1)
            .map(|j| self.weight[i][j])
            .sum()
    }
}

pub fn ring(n: usize, reach: usize) -> InterferenceGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for s in 1..=reach {
            edges.push(Edge {
                src: i,
                dst: (i + s) % n,
                weight: None,
            });
        }
    }
    InterferenceGraph::from_edges(n, &edges, false).unwrap().0
}

/// Panel from treatment rows with outcomes drawn from `outcome(unit, exp)`.
pub fn panel(rows: &[Vec<u8>], pi: &[f64], d: usize, mut outcome: impl FnMut(usize, usize) -> f64) -> PanelDataset {
    let n = rows.len();
    let k = rows[0].len();
    let y: Vec<f64> = (0..n).flat_map(|i| (0..k).map(move |e| (i, e))).map(|(i, e)| outcome(i, e)).collect();
    let x: Vec<f64> = (0..n * d).map(|t| ((t * 7919) % 13) as f64 / 3.0 + (t % d.max(1)) as f64).collect();
    PanelDataset::new(
        (0..n).map(|i| format!("u{i}")).collect(),
        TreatmentMatrix::from_rows(rows).unwrap(),
        Matrix::from_row_major(n, k, &y).unwrap(),
        Matrix::from_row_major(n, d, &x).unwrap(),
        pi.to_vec(),
    )
    .unwrap()
}
