//! Test statistics: regression coefficients, correlations,
//! difference-in-differences and nested-model F statistics.
//!
//! All statistics are nonnegative and degrade to 0 (with `degenerate` set)
//! instead of producing NaN, so a permutation replicate with a constant
//! exposure never aborts a run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, QrFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// |coefficient of the exposure| in a linear regression.
    #[default]
    RegCoef,
    /// |Pearson correlation| between outcome and exposure changes.
    CorrDiff,
    /// |difference of mean outcome contrasts| between two experiments.
    Did,
    /// Sum over ordered experiment pairs of |correlation of differences|.
    PairwiseCorrSum,
    /// F statistic comparing a model with exposures and experiment
    /// indicators against one without.
    AnovaF,
}

impl StatisticKind {
    pub fn tag(self) -> &'static str {
        match self {
            StatisticKind::RegCoef => "reg_coef",
            StatisticKind::CorrDiff => "corr_diff",
            StatisticKind::Did => "did",
            StatisticKind::PairwiseCorrSum => "pairwise_corr_sum",
            StatisticKind::AnovaF => "anova_f",
        }
    }

    /// Whether the statistic consumes exposures (and hence needs a graph).
    pub fn needs_exposure(self) -> bool {
        !matches!(self, StatisticKind::Did)
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatisticSpec {
    #[serde(default)]
    pub kind: StatisticKind,
    /// Include covariates X as regressors.
    #[serde(default = "yes")]
    pub use_covariates: bool,
    /// Include neighbor counts N as regressors.
    #[serde(default = "yes")]
    pub use_neighbor_count: bool,
}

impl Default for StatisticSpec {
    fn default() -> Self {
        StatisticSpec {
            kind: StatisticKind::default(),
            use_covariates: true,
            use_neighbor_count: true,
        }
    }
}

impl StatisticSpec {
    pub fn of(kind: StatisticKind) -> Self {
        StatisticSpec {
            kind,
            ..Default::default()
        }
    }
}

/// A statistic value with a flag for degenerate inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Statistic {
    pub value: f64,
    pub degenerate: bool,
}

impl Statistic {
    fn ok(value: f64) -> Self {
        Statistic {
            value,
            degenerate: false,
        }
    }

    fn degenerate() -> Self {
        Statistic {
            value: 0.0,
            degenerate: true,
        }
    }
}

/// Signed Pearson correlation; degenerate (0) when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Statistic> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "correlation inputs differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::input(format!(
            "correlation needs at least 3 observations, got {}",
            a.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb, mut raa, mut rbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
        raa += x * x;
        rbb += y * y;
    }
    const REL: f64 = 1e-20;
    if saa <= REL * raa || sbb <= REL * rbb || saa == 0.0 || sbb == 0.0 {
        return Ok(Statistic::degenerate());
    }
    let r = sab / (saa.sqrt() * sbb.sqrt());
    Ok(Statistic::ok(r.clamp(-1.0, 1.0)))
}

/// `|Corr(y_diff, h_delta)|`.
pub fn stat_corr_diff(y_diff: &[f64], h_delta: &[f64]) -> Result<Statistic> {
    pearson(y_diff, h_delta).map(|s| Statistic {
        value: s.value.abs(),
        ..s
    })
}

/// `|mean(second) - mean(first)|`.
pub fn stat_did(first: &[f64], second: &[f64]) -> Result<Statistic> {
    if first.is_empty() || second.is_empty() {
        return Err(Error::input("difference-in-differences needs nonempty vectors"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(Statistic::ok((mean(second) - mean(first)).abs()))
}

/// `sum_{k != l} |Corr(y_k - y_l, h_k - h_l)|` over ordered pairs.
pub fn stat_pairwise_corr_sum(y_cols: &[&[f64]], h_cols: &[&[f64]]) -> Result<Statistic> {
    let k = y_cols.len();
    if k < 2 {
        return Err(Error::input("pairwise correlation sum needs at least 2 experiments"));
    }
    if h_cols.len() != k {
        return Err(Error::input(format!(
            "{k} outcome columns but {} exposure columns",
            h_cols.len()
        )));
    }
    let len = y_cols[0].len();
    if y_cols.iter().chain(h_cols).any(|c| c.len() != len) {
        return Err(Error::input("pairwise correlation sum inputs differ in length"));
    }
    let mut total = 0.0;
    let mut degenerate = false;
    let mut yd = vec![0.0; len];
    let mut hd = vec![0.0; len];
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            for t in 0..len {
                yd[t] = y_cols[a][t] - y_cols[b][t];
                hd[t] = h_cols[a][t] - h_cols[b][t];
            }
            let s = stat_corr_diff(&yd, &hd)?;
            total += s.value;
            degenerate |= s.degenerate;
        }
    }
    Ok(Statistic {
        value: total,
        degenerate,
    })
}

/// Builds `[1, controls..., target]` as a design matrix.
pub fn design_with_intercept(controls: &[&[f64]], target: &[f64]) -> Result<Matrix> {
    let n = target.len();
    let mut cols: Vec<&[f64]> = Vec::with_capacity(controls.len() + 2);
    let ones = vec![1.0; n];
    cols.push(&ones);
    cols.extend_from_slice(controls);
    cols.push(target);
    Matrix::from_columns(n, &cols)
}

/// `|coefficient of target|` from OLS of `response` on an intercept, the
/// `controls`, and `target`. A target column absorbed by the others gives 0
/// with the degenerate flag.
pub fn stat_reg_coef(response: &[f64], controls: &[&[f64]], target: &[f64]) -> Result<Statistic> {
    if response.len() != target.len() {
        return Err(Error::input("regression response and exposure differ in length"));
    }
    let design = design_with_intercept(controls, target)?;
    let fit = QrFactor::new(&design)?.fit(response)?;
    let j = design.cols() - 1;
    if fit.dropped.contains(&j) {
        return Ok(Statistic::degenerate());
    }
    Ok(Statistic {
        value: fit.coefficients[j].abs(),
        degenerate: fit.is_rank_deficient(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnovaF {
    pub f: f64,
    pub rss_full: f64,
    pub rss_reduced: f64,
    pub df_num: usize,
    pub df_den: usize,
}

/// Nested-model comparison with both factorizations kept, so that many
/// responses can be scored against the same designs.
#[derive(Debug, Clone)]
pub struct AnovaPlan {
    full: QrFactor,
    reduced: QrFactor,
    rows: usize,
}

impl AnovaPlan {
    /// `full` and `reduced` index columns of `columns`; the reduced model
    /// must be a subset of the full one.
    pub fn new(columns: &Matrix, full: &[usize], reduced: &[usize]) -> Result<Self> {
        if let Some(c) = reduced.iter().find(|c| !full.contains(c)) {
            return Err(Error::input(format!(
                "models are not nested: reduced-model column {c} is absent from the full model"
            )));
        }
        if let Some(c) = full.iter().find(|&&c| c >= columns.cols()) {
            return Err(Error::input(format!("column {c} out of range")));
        }
        let plan = AnovaPlan {
            full: QrFactor::new(&columns.select_cols(full))?,
            reduced: QrFactor::new(&columns.select_cols(reduced))?,
            rows: columns.rows(),
        };
        plan.dofs()?;
        Ok(plan)
    }

    fn dofs(&self) -> Result<(usize, usize)> {
        let (r1, r2) = (self.full.rank(), self.reduced.rank());
        if r1 <= r2 {
            return Err(Error::input(
                "full model adds no independent columns over the reduced model",
            ));
        }
        if self.rows <= r1 {
            return Err(Error::input(format!(
                "no residual degrees of freedom ({} rows, rank {r1})",
                self.rows
            )));
        }
        Ok((r1 - r2, self.rows - r1))
    }

    pub fn evaluate(&self, y: &[f64]) -> Result<AnovaF> {
        let (df_num, df_den) = self.dofs()?;
        let rss_full = self.full.rss(y)?;
        let rss_reduced = self.reduced.rss(y)?;
        let gain = (rss_reduced - rss_full).max(0.0);
        // Gains at rounding level count as no gain.
        let f = if gain <= 1e-13 * rss_reduced {
            0.0
        } else if rss_full <= 0.0 {
            f64::MAX
        } else {
            (gain / df_num as f64) / (rss_full / df_den as f64)
        };
        Ok(AnovaF {
            f,
            rss_full,
            rss_reduced,
            df_num,
            df_den,
        })
    }
}

/// F statistic of the full model against the nested reduced model.
pub fn stat_anova_f(y: &[f64], columns: &Matrix, full: &[usize], reduced: &[usize]) -> Result<AnovaF> {
    AnovaPlan::new(columns, full, reduced)?.evaluate(y)
}
