//! Dense column-major matrices and a rank-revealing least-squares solver.

use crate::error::{Error, Result};

/// Column-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally long columns.
    pub fn from_columns<C: AsRef<[f64]>>(rows: usize, columns: &[C]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, c) in columns.iter().enumerate() {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(Error::input(format!(
                    "column {j} has {} rows, expected {rows}",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        Ok(Matrix {
            rows,
            cols: columns.len(),
            data,
        })
    }

    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::input(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )));
        }
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[j * rows + i] = values[i * cols + j];
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.cols).map(move |j| self.col(j))
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for j in 0..self.cols {
            let src = self.col(j);
            for (dst, &i) in out.col_mut(j).iter_mut().zip(idx) {
                *dst = src[i];
            }
        }
        out
    }

    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Result of a least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// One entry per design column; dropped columns carry 0.
    pub coefficients: Vec<f64>,
    pub residual_sum_squares: f64,
    pub rank: usize,
    pub dof: usize,
    /// Columns found linearly dependent on earlier columns.
    pub dropped: Vec<usize>,
}

impl OlsFit {
    pub fn is_rank_deficient(&self) -> bool {
        !self.dropped.is_empty()
    }
}

/// Relative residual norm below which a column counts as dependent.
const RANK_TOL: f64 = 1e-9;

/// Householder QR of a design matrix, reusable across many responses.
///
/// Columns are processed left to right; a column whose component outside
/// the span of the columns kept so far is negligible is dropped, so within
/// a dependent set the rightmost column goes.
#[derive(Debug, Clone)]
pub struct QrFactor {
    rows: usize,
    cols: usize,
    /// Householder vectors; reflector `r` acts on rows `r..`.
    vs: Vec<Vec<f64>>,
    betas: Vec<f64>,
    /// Upper-triangular factor for the kept columns, column-major `rank x rank`.
    r: Vec<f64>,
    kept: Vec<usize>,
    dropped: Vec<usize>,
}

impl QrFactor {
    pub fn new(design: &Matrix) -> Result<Self> {
        let (n, p) = (design.rows, design.cols);
        if n < p {
            return Err(Error::input(format!(
                "least squares needs at least as many rows as columns ({n} < {p})"
            )));
        }
        let mut a = design.clone();
        let norms: Vec<f64> = a.columns().map(norm).collect();
        let mut vs = Vec::new();
        let mut betas = Vec::new();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..p {
            let r = vs.len();
            let x = &a.col(j)[r..];
            let xn = norm(x);
            if norms[j] == 0.0 || xn <= RANK_TOL * norms[j] || !xn.is_finite() {
                if !xn.is_finite() {
                    return Err(Error::Numerical(format!("design column {j} is not finite")));
                }
                dropped.push(j);
                continue;
            }
            let alpha = if x[0] >= 0.0 { -xn } else { xn };
            let mut v = x.to_vec();
            v[0] -= alpha;
            let vtv: f64 = v.iter().map(|t| t * t).sum();
            let beta = 2.0 / vtv;
            for jj in j..p {
                let c = &mut a.col_mut(jj)[r..];
                let s = beta * dot(&v, c);
                for (ci, vi) in c.iter_mut().zip(&v) {
                    *ci -= s * vi;
                }
            }
            vs.push(v);
            betas.push(beta);
            kept.push(j);
        }
        let rank = kept.len();
        let mut rmat = vec![0.0; rank * rank];
        for (b, &j) in kept.iter().enumerate() {
            for a_i in 0..=b {
                rmat[b * rank + a_i] = a.get(a_i, j);
            }
        }
        Ok(QrFactor {
            rows: n,
            cols: p,
            vs,
            betas,
            r: rmat,
            kept,
            dropped,
        })
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    fn apply_qt(&self, y: &mut [f64]) {
        for (r, (v, beta)) in self.vs.iter().zip(&self.betas).enumerate() {
            let tail = &mut y[r..];
            let s = beta * dot(v, tail);
            for (t, vi) in tail.iter_mut().zip(v) {
                *t -= s * vi;
            }
        }
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.rows {
            return Err(Error::input(format!(
                "response has {} rows, design has {}",
                y.len(),
                self.rows
            )));
        }
        Ok(())
    }

    /// Residual sum of squares only; skips the back-substitution.
    pub fn rss(&self, y: &[f64]) -> Result<f64> {
        self.check_len(y)?;
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        Ok(qty[self.rank()..].iter().map(|t| t * t).sum())
    }

    pub fn fit(&self, y: &[f64]) -> Result<OlsFit> {
        self.check_len(y)?;
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        let rank = self.rank();
        let rss = qty[rank..].iter().map(|t| t * t).sum();
        let mut beta = qty[..rank].to_vec();
        for b in (0..rank).rev() {
            let mut s = beta[b];
            for c in b + 1..rank {
                s -= self.r[c * rank + b] * beta[c];
            }
            beta[b] = s / self.r[b * rank + b];
        }
        let mut coefficients = vec![0.0; self.cols];
        for (&j, v) in self.kept.iter().zip(beta) {
            coefficients[j] = v;
        }
        Ok(OlsFit {
            coefficients,
            residual_sum_squares: rss,
            rank,
            dof: self.rows - rank,
            dropped: self.dropped.clone(),
        })
    }
}

/// Least-squares fit of `response` on `design` (include an intercept column
/// yourself if one is wanted).
pub fn ols_fit(design: &Matrix, response: &[f64]) -> Result<OlsFit> {
    QrFactor::new(design)?.fit(response)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    // Scaled to avoid overflow on large covariates.
    let m = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * a.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt()
}

/// Lower Cholesky factor of a symmetric positive-definite row-major matrix.
pub(crate) fn cholesky(a: &[f64], dim: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * dim + i] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    // Reject factors too ill-conditioned to trust.
    let diag: Vec<f64> = (0..dim).map(|i| l[i * dim + i]).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if dim > 0 && min <= 1e-12 * max {
        return None;
    }
    Some(l)
}

/// Solves `L x = b` in place for lower-triangular row-major `L`.
pub(crate) fn solve_lower_in_place(l: &[f64], dim: usize, b: &mut [f64]) {
    for i in 0..dim {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * dim + k] * b[k];
        }
        b[i] = s / l[i * dim + i];
    }
}
