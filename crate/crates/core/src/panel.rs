//! Experimental panels: treatments, outcomes and covariates for `n` units
//! observed over `K` experiments with increasing treatment allocation.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{Error, Result, ValidationReport, Violation};
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Binary `n x K` treatment matrix, stored column by column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreatmentMatrix {
    n: usize,
    k: usize,
    data: Vec<u8>,
}

impl TreatmentMatrix {
    pub fn from_columns(n: usize, columns: Vec<Vec<u8>>) -> Result<Self> {
        let k = columns.len();
        let mut data = Vec::with_capacity(n * k);
        for (c, col) in columns.into_iter().enumerate() {
            if col.len() != n {
                return Err(Error::input(format!(
                    "treatment column {} has {} entries, expected {n}",
                    c + 1,
                    col.len()
                )));
            }
            data.extend(col);
        }
        Ok(TreatmentMatrix { n, k, data })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        let mut data = vec![0u8; n * k];
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(Error::input(format!(
                    "treatment row {} has {} entries, expected {k}",
                    i + 1,
                    r.len()
                )));
            }
            for (c, &v) in r.iter().enumerate() {
                data[c * n + i] = v;
            }
        }
        Ok(TreatmentMatrix { n, k, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, unit: usize, exp: usize) -> u8 {
        self.data[exp * self.n + unit]
    }

    pub fn column(&self, exp: usize) -> &[u8] {
        &self.data[exp * self.n..(exp + 1) * self.n]
    }

    pub fn row(&self, unit: usize) -> Vec<u8> {
        (0..self.k).map(|c| self.get(unit, c)).collect()
    }

    pub fn select_experiments(&self, exps: &[usize]) -> TreatmentMatrix {
        let mut data = Vec::with_capacity(self.n * exps.len());
        for &e in exps {
            data.extend_from_slice(self.column(e));
        }
        TreatmentMatrix {
            n: self.n,
            k: exps.len(),
            data,
        }
    }
}

/// Unvalidated panel contents, as read from files or produced by a caller.
///
/// Matrices are row-major here (the natural layout of a CSV row).
#[derive(Debug, Clone, Default)]
pub struct RawPanel {
    pub unit_ids: Vec<String>,
    pub k: usize,
    pub d: usize,
    /// `n * k` treatments, row-major.
    pub w: Vec<u8>,
    /// `n * k` outcomes, row-major.
    pub y: Vec<f64>,
    /// `n * d` covariates, row-major.
    pub x: Vec<f64>,
    pub pi: Vec<f64>,
}

/// Checks every panel invariant and reports all violations at once.
pub fn validate_panel(raw: &RawPanel) -> Result<()> {
    let mut report = ValidationReport::default();
    let n = raw.unit_ids.len();
    let k = raw.k;
    let mut dims_ok = true;
    for (what, expected, found) in [
        ("treatment cells", n * k, raw.w.len()),
        ("outcome cells", n * k, raw.y.len()),
        ("covariate cells", n * raw.d, raw.x.len()),
        ("treatment probabilities", k, raw.pi.len()),
    ] {
        if expected != found {
            dims_ok = false;
            report.push(Violation::DimensionMismatch {
                what: what.to_string(),
                expected,
                found,
            });
        }
    }
    if n == 0 {
        report.push(Violation::DimensionMismatch {
            what: "units".into(),
            expected: 1,
            found: 0,
        });
    }
    if k == 0 {
        report.push(Violation::DimensionMismatch {
            what: "experiments".into(),
            expected: 1,
            found: 0,
        });
    }
    let mut seen = HashMap::with_capacity(n);
    for (i, id) in raw.unit_ids.iter().enumerate() {
        if seen.insert(id.as_str(), i).is_some() {
            report.push(Violation::DuplicateUnitId {
                row: i,
                unit_id: id.clone(),
            });
        }
    }
    if raw.pi.len() == k {
        check_pi(&raw.pi, &mut report);
    }
    if !dims_ok {
        return report.into_result();
    }
    for i in 0..n {
        let row = &raw.w[i * k..(i + 1) * k];
        for (c, &v) in row.iter().enumerate() {
            if v > 1 {
                report.push(Violation::NonBinaryTreatment {
                    row: i,
                    col: c,
                    value: v,
                });
            } else if c > 0 && v < row[c - 1] {
                report.push(Violation::NonMonotoneTreatment {
                    row: i,
                    col: c,
                    unit_id: raw.unit_ids[i].clone(),
                });
            }
        }
        for c in 0..k {
            if !raw.y[i * k + c].is_finite() {
                report.push(Violation::NonFinite {
                    matrix: 'Y',
                    row: i,
                    col: c,
                });
            }
        }
        for c in 0..raw.d {
            if !raw.x[i * raw.d + c].is_finite() {
                report.push(Violation::NonFinite {
                    matrix: 'X',
                    row: i,
                    col: c,
                });
            }
        }
    }
    report.into_result()
}

fn check_pi(pi: &[f64], report: &mut ValidationReport) {
    for (i, &p) in pi.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            report.push(Violation::ProbabilityOutOfRange { index: i, value: p });
        }
        if i > 0 && p <= pi[i - 1] {
            report.push(Violation::ProbabilityNotIncreasing { index: i });
        }
    }
}

/// Validates an allocation schedule on its own.
pub fn validate_pi(pi: &[f64]) -> Result<()> {
    let mut report = ValidationReport::default();
    if pi.is_empty() {
        report.push(Violation::DimensionMismatch {
            what: "treatment probabilities".into(),
            expected: 1,
            found: 0,
        });
    }
    check_pi(pi, &mut report);
    report.into_result()
}

/// A validated experimental panel. Immutable once built.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    w: TreatmentMatrix,
    y: Matrix,
    x: Matrix,
    pi: Vec<f64>,
}

impl TryFrom<RawPanel> for PanelDataset {
    type Error = Error;

    fn try_from(raw: RawPanel) -> Result<Self> {
        validate_panel(&raw)?;
        let n = raw.unit_ids.len();
        let rows: Vec<Vec<u8>> = raw.w.chunks(raw.k).map(<[u8]>::to_vec).collect();
        Ok(PanelDataset {
            w: TreatmentMatrix::from_rows(&rows)?,
            y: Matrix::from_row_major(n, raw.k, &raw.y)?,
            x: Matrix::from_row_major(n, raw.d, &raw.x)?,
            pi: raw.pi,
            unit_ids: raw.unit_ids,
        })
    }
}

impl PanelDataset {
    /// Assembles a panel from already-shaped parts, validating invariants.
    pub fn new(
        unit_ids: Vec<String>,
        w: TreatmentMatrix,
        y: Matrix,
        x: Matrix,
        pi: Vec<f64>,
    ) -> Result<Self> {
        let n = unit_ids.len();
        let raw = RawPanel {
            k: w.k(),
            d: x.cols(),
            w: (0..w.n()).flat_map(|i| w.row(i)).collect(),
            y: (0..y.rows()).flat_map(|i| y.row(i)).collect(),
            x: (0..x.rows()).flat_map(|i| x.row(i)).collect(),
            pi,
            unit_ids,
        };
        if w.n() != n || y.rows() != n || x.rows() != n || y.cols() != w.k() {
            let mut report = ValidationReport::default();
            report.push(Violation::DimensionMismatch {
                what: "matrix rows vs unit ids".into(),
                expected: n,
                found: w.n().max(y.rows()).max(x.rows()),
            });
            return Err(Error::Validation(report));
        }
        PanelDataset::try_from(raw)
    }

    pub fn n(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn k(&self) -> usize {
        self.w.k()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn treatments(&self) -> &TreatmentMatrix {
        &self.w
    }

    pub fn outcomes(&self) -> &Matrix {
        &self.y
    }

    pub fn covariates(&self) -> &Matrix {
        &self.x
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Map from unit id to dense index.
    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.unit_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect()
    }

    /// Restricts the panel to a subset of experiments (0-based, strictly
    /// increasing).
    pub fn select_experiments(&self, exps: &[usize]) -> Result<PanelDataset> {
        if exps.is_empty() {
            return Err(Error::input("experiment selection is empty"));
        }
        for (i, &e) in exps.iter().enumerate() {
            if e >= self.k() {
                return Err(Error::input(format!(
                    "experiment {} does not exist (panel has {})",
                    e + 1,
                    self.k()
                )));
            }
            if i > 0 && e <= exps[i - 1] {
                return Err(Error::input("experiment selection must be strictly increasing"));
            }
        }
        Ok(PanelDataset {
            unit_ids: self.unit_ids.clone(),
            w: self.w.select_experiments(exps),
            y: self.y.select_cols(exps),
            x: self.x.clone(),
            pi: exps.iter().map(|&e| self.pi[e]).collect(),
        })
    }
}

/// Draws an `n x K` increasing-allocation treatment matrix.
///
/// Experiment 1 is Bernoulli(pi[0]); afterwards a still-untreated unit
/// switches with probability `(pi[k] - pi[k-1]) / (1 - pi[k-1])` and a
/// treated unit stays treated, so column `k` is marginally Bernoulli(pi[k]).
pub fn generate_allocation(n: usize, pi: &[f64], rng: &mut Rng) -> Result<TreatmentMatrix> {
    if n == 0 {
        return Err(Error::input("allocation needs at least one unit"));
    }
    validate_pi(pi)?;
    let probs = switch_probabilities(pi);
    let k = pi.len();
    let mut cols = vec![vec![0u8; n]; k];
    for i in 0..n {
        let mut treated = false;
        for (c, &p) in probs.iter().enumerate() {
            if !treated && rng.random::<f64>() < p {
                treated = true;
            }
            cols[c][i] = u8::from(treated);
        }
    }
    TreatmentMatrix::from_columns(n, cols)
}

/// Per-experiment probability that a not-yet-treated unit becomes treated.
pub fn switch_probabilities(pi: &[f64]) -> Vec<f64> {
    pi.iter()
        .enumerate()
        .map(|(c, &p)| {
            if c == 0 {
                p
            } else {
                (p - pi[c - 1]) / (1.0 - pi[c - 1])
            }
        })
        .collect()
}

/// Index sets derived from a treatment matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitClassification {
    pub n: usize,
    /// Units whose treatment never changes.
    pub constant: Vec<usize>,
    /// Units in control for every experiment.
    pub always_control: Vec<usize>,
    /// Units treated in the last two experiments (the last one when K = 1).
    pub treated_late: Vec<usize>,
    /// For each unit, the 0-based experiments in which it is treated.
    pub treated_sets: Vec<Vec<usize>>,
}

pub fn classify_units(w: &TreatmentMatrix) -> UnitClassification {
    let (n, k) = (w.n(), w.k());
    let mut out = UnitClassification {
        n,
        constant: Vec::new(),
        always_control: Vec::new(),
        treated_late: Vec::new(),
        treated_sets: Vec::with_capacity(n),
    };
    for i in 0..n {
        let row = w.row(i);
        let set: Vec<usize> = (0..k).filter(|&c| row[c] == 1).collect();
        if row.iter().all(|&v| v == row[0]) {
            out.constant.push(i);
            if row.first() == Some(&0) {
                out.always_control.push(i);
            }
        }
        let late = k > 0 && row[k - 1] == 1 && (k == 1 || row[k - 2] == 1);
        if late {
            out.treated_late.push(i);
        }
        out.treated_sets.push(set);
    }
    out
}

/// Focal/auxiliary partition of the units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitResult {
    pub focal: Vec<usize>,
    pub auxiliary: Vec<usize>,
    pub warnings: Vec<String>,
}

impl SplitResult {
    fn from_focal(n: usize, mut focal: Vec<usize>, warnings: Vec<String>) -> Self {
        focal.sort_unstable();
        let mut is_focal = vec![false; n];
        for &i in &focal {
            is_focal[i] = true;
        }
        let auxiliary = (0..n).filter(|&i| !is_focal[i]).collect();
        SplitResult {
            focal,
            auxiliary,
            warnings,
        }
    }
}

/// Samples focal units uniformly from the constant-treatment units.
///
/// The focal set has size `min(target_size, |constant|)`; clamping records a
/// warning. Everything else, including the unsampled constant units, is
/// auxiliary.
pub fn sample_focal_split(
    classification: &UnitClassification,
    target_size: usize,
    rng: &mut Rng,
) -> Result<SplitResult> {
    if target_size == 0 {
        return Err(Error::input("focal target size must be at least 1"));
    }
    let pool = &classification.constant;
    if pool.is_empty() {
        return Err(Error::infeasible(
            "no constant-treatment units; vertical test inapplicable",
        ));
    }
    let mut warnings = Vec::new();
    let size = if target_size > pool.len() {
        warnings.push(format!(
            "focal target {target_size} exceeds the {} constant-treatment units; using all of them",
            pool.len()
        ));
        pool.len()
    } else {
        target_size
    };
    let focal = sample(rng, pool.len(), size)
        .into_iter()
        .map(|t| pool[t])
        .collect();
    Ok(SplitResult::from_focal(classification.n, focal, warnings))
}

/// Splits all units uniformly at random, ignoring treatments.
pub fn sample_uniform_split(n: usize, target_size: usize, rng: &mut Rng) -> Result<SplitResult> {
    if target_size == 0 || target_size >= n {
        return Err(Error::input(format!(
            "focal size must be between 1 and {} for {n} units",
            n.saturating_sub(1)
        )));
    }
    let focal = sample(rng, n, target_size).into_vec();
    Ok(SplitResult::from_focal(n, focal, Vec::new()))
}
