//! Permutation tests for interference across a sequence of experiments.
//!
//! Three families are exposed through [`run_test`]:
//! - `single_vertical`: one experiment, auxiliary treatments regenerated;
//! - `vertical`: several experiments, auxiliary treatment rows permuted;
//! - `horizontal`: matched pairs, outcomes permuted across each treated
//!   unit's treated experiments.

mod horizontal;
mod vertical;

pub use horizontal::{horizontal_matching, test_horizontal};
pub use vertical::{test_single_vertical, test_vertical, test_vertical_multigraph};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ExposureKind, ExposureSpec, InterferenceGraph};
use crate::matching::MatchingMethod;
use crate::panel::PanelDataset;
use crate::stats::{StatisticKind, StatisticSpec};

/// Largest permutation group that exhaustive mode will enumerate.
pub const MAX_EXHAUSTIVE_GROUP: usize = 5040;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    SingleVertical,
    Vertical,
    Horizontal,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::SingleVertical => "single_vertical",
            Algorithm::Vertical => "vertical",
            Algorithm::Horizontal => "horizontal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MatchingConfig {
    #[serde(default)]
    pub method: MatchingMethod,
    /// Forbid pairs that are not adjacent in the interference graph.
    #[serde(default)]
    pub caliper: bool,
}

fn default_b() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub algorithm: Algorithm,
    #[serde(default = "default_b", alias = "B")]
    pub b: usize,
    #[serde(default)]
    pub exposure: ExposureSpec,
    #[serde(default)]
    pub statistic: StatisticSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matching: Option<MatchingConfig>,
    /// Focal set size for vertical tests; defaults to half the units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_target: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// 1-based experiments to use; defaults to all (the last one for
    /// `single_vertical`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiments: Option<Vec<usize>>,
    /// Enumerate the whole permutation group instead of sampling.
    #[serde(default)]
    pub exhaustive: bool,
    /// Label used in power tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl TestConfig {
    pub fn new(algorithm: Algorithm, statistic: StatisticKind) -> Self {
        TestConfig {
            algorithm,
            b: default_b(),
            exposure: ExposureSpec::default(),
            statistic: StatisticSpec::of(statistic),
            matching: (algorithm == Algorithm::Horizontal).then(MatchingConfig::default),
            focal_target: None,
            seed: 0,
            experiments: None,
            exhaustive: false,
            name: None,
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let mut s = self.algorithm.tag().to_string();
            if let Some(m) = self.matching.filter(|_| self.algorithm == Algorithm::Horizontal) {
                s.push('_');
                s.push_str(m.method.tag());
            }
            s
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 && !self.exhaustive {
            return Err(Error::input("B must be at least 1"));
        }
        if self.algorithm == Algorithm::Horizontal && self.matching.is_none() {
            return Err(Error::input("horizontal test requires a matching method"));
        }
        if self.focal_target == Some(0) {
            return Err(Error::input("focal target must be at least 1"));
        }
        let allowed: &[StatisticKind] = match self.algorithm {
            Algorithm::SingleVertical => &[StatisticKind::RegCoef, StatisticKind::CorrDiff],
            Algorithm::Vertical => &[
                StatisticKind::RegCoef,
                StatisticKind::CorrDiff,
                StatisticKind::PairwiseCorrSum,
            ],
            Algorithm::Horizontal => &[
                StatisticKind::Did,
                StatisticKind::CorrDiff,
                StatisticKind::AnovaF,
            ],
        };
        if !allowed.contains(&self.statistic.kind) {
            return Err(Error::input(format!(
                "statistic {} is not available for the {} test",
                self.statistic.kind.tag(),
                self.algorithm.tag()
            )));
        }
        Ok(())
    }

    /// Whether the configured test reads the interference graph.
    pub fn needs_graph(&self) -> bool {
        self.statistic.kind.needs_exposure()
            || self.matching.is_some_and(|m| m.caliper)
                && self.algorithm == Algorithm::Horizontal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TestMode {
    #[default]
    MonteCarlo,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub algorithm: Algorithm,
    pub statistic_kind: StatisticKind,
    pub exposure_kind: ExposureKind,
    /// Replicates drawn, or the group size in exhaustive mode.
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: TestMode,
    pub t_observed: f64,
    pub p_value: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t_replicates: Vec<f64>,
}

impl PermutationTestResult {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self.rejected = Some(self.p_value <= alpha);
        self
    }
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} statistic is {v}")))
    }
}

/// `(1 + #{b : t0 <= t_b}) / (B + 1)`.
pub fn pvalue(t_observed: f64, t_replicates: &[f64]) -> Result<f64> {
    if t_replicates.is_empty() {
        return Err(Error::input("p-value needs at least one replicate"));
    }
    check_finite("observed", t_observed)?;
    let mut ge = 0usize;
    for &t in t_replicates {
        check_finite("replicate", t)?;
        if t_observed <= t {
            ge += 1;
        }
    }
    Ok((1 + ge) as f64 / (t_replicates.len() + 1) as f64)
}

/// Exact p-value over an enumerated group: `#{g : t0 <= T(g)} / |G|`, with
/// optional per-element probabilities.
pub fn exact_pvalue(t_observed: f64, group: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::input("exact p-value needs a nonempty group"));
    }
    check_finite("observed", t_observed)?;
    let mut hit = 0.0;
    let mut total = 0.0;
    for (g, &t) in group.iter().enumerate() {
        check_finite("replicate", t)?;
        let w = weights.map_or(1.0, |w| w[g]);
        total += w;
        if t_observed <= t {
            hit += w;
        }
    }
    Ok((hit / total).min(1.0))
}

/// `min(1, 2 * mean(ps))`; valid for arbitrarily dependent p-values.
pub fn aggregate_pvalues(ps: &[f64]) -> Result<f64> {
    if ps.is_empty() {
        return Err(Error::input("no p-values to aggregate"));
    }
    if let Some(p) = ps.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::input(format!("p-value {p} is outside (0, 1]")));
    }
    Ok((2.0 * ps.iter().sum::<f64>() / ps.len() as f64).min(1.0))
}

/// Runs the configured test on `panel`.
pub fn run_test(
    panel: &PanelDataset,
    graph: Option<&InterferenceGraph>,
    config: &TestConfig,
) -> Result<PermutationTestResult> {
    config.validate()?;
    if let Some(g) = graph {
        if g.n() != panel.n() {
            return Err(Error::input(format!(
                "graph has {} vertices but the panel has {} units",
                g.n(),
                panel.n()
            )));
        }
    }
    let view = match &config.experiments {
        Some(exps) => {
            let zero: Vec<usize> = exps
                .iter()
                .map(|&e| {
                    if e == 0 || e > panel.k() {
                        Err(Error::input(format!(
                            "experiment {e} out of range 1..={}",
                            panel.k()
                        )))
                    } else {
                        Ok(e - 1)
                    }
                })
                .collect::<Result<_>>()?;
            Some(panel.select_experiments(&zero)?)
        }
        None if config.algorithm == Algorithm::SingleVertical && panel.k() > 1 => {
            Some(panel.select_experiments(&[panel.k() - 1])?)
        }
        None => None,
    };
    let panel = view.as_ref().unwrap_or(panel);
    match config.algorithm {
        Algorithm::SingleVertical => test_single_vertical(panel, require_graph(graph, config)?, config),
        Algorithm::Vertical => test_vertical(panel, require_graph(graph, config)?, config),
        Algorithm::Horizontal => test_horizontal(panel, graph, config),
    }
}

pub(crate) fn require_graph<'g>(
    graph: Option<&'g InterferenceGraph>,
    config: &TestConfig,
) -> Result<&'g InterferenceGraph> {
    graph.ok_or_else(|| {
        Error::input(format!(
            "graph required for exposure kind {}",
            config.exposure.kind.tag()
        ))
    })
}

/// Runs `f` on a rayon pool with `threads` workers (0 means one per core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub(crate) fn factorial_capped(n: usize, cap: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |acc, v| acc.checked_mul(v).filter(|&x| x <= cap))
}

/// The `index`-th permutation of `0..len` in lexicographic order.
pub(crate) fn nth_permutation(len: usize, mut index: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..len).collect();
    let mut radix: Vec<usize> = vec![1; len];
    for i in (0..len.saturating_sub(1)).rev() {
        radix[i] = radix[i + 1] * (len - 1 - i);
    }
    let mut out = Vec::with_capacity(len);
    for r in radix {
        let q = index / r;
        index %= r;
        out.push(pool.remove(q));
    }
    out
}

pub(crate) fn result(
    config: &TestConfig,
    t_observed: f64,
    t_replicates: Vec<f64>,
    p_value: f64,
    mode: TestMode,
    warnings: Vec<String>,
) -> PermutationTestResult {
    PermutationTestResult {
        algorithm: config.algorithm,
        statistic_kind: config.statistic.kind,
        exposure_kind: config.exposure.kind,
        b: t_replicates.len(),
        seed: config.seed,
        mode,
        t_observed,
        p_value,
        warnings,
        alpha: None,
        rejected: None,
        t_replicates,
    }
}
