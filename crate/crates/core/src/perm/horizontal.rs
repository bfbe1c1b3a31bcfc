use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{exact_pvalue, factorial_capped, nth_permutation, pvalue, require_graph, result, PermutationTestResult, TestConfig, TestMode, MAX_EXHAUSTIVE_GROUP};
use crate::error::{Error, Result};
use crate::graph::{ExposurePlan, InterferenceGraph};
use crate::linalg::Matrix;
use crate::matching::{mahalanobis_costs, match_optimal, match_random, matching_features, Matching, MatchingMethod};
use crate::panel::{classify_units, PanelDataset};
use crate::rng::SeedTree;
use crate::stats::{stat_corr_diff, stat_did, AnovaPlan, StatisticKind};

/// Builds the treated-to-control matching used by the horizontal test.
///
/// Treated units are those treated in the last two experiments, controls
/// those never treated. Features are the covariates plus neighbor counts
/// when a graph is available.
pub fn horizontal_matching(
    panel: &PanelDataset,
    graph: Option<&InterferenceGraph>,
    config: &TestConfig,
) -> Result<Matching> {
    let cls = classify_units(panel.treatments());
    let (treated, control) = (&cls.treated_late, &cls.always_control);
    if treated.is_empty() || control.is_empty() {
        return Err(Error::infeasible(format!(
            "horizontal test needs units treated in the last two experiments and never-treated units (found {} and {})",
            treated.len(),
            control.len()
        )));
    }
    let mc = config
        .matching
        .ok_or_else(|| Error::input("horizontal test requires a matching method"))?;
    match mc.method {
        MatchingMethod::Random => {
            match_random(treated, control, &mut SeedTree::new(config.seed).rng("matching", 0))
        }
        MatchingMethod::Mahalanobis => {
            let degrees = graph.map(InterferenceGraph::degrees);
            let features = matching_features(panel.covariates(), degrees.as_deref())?;
            let caliper = if mc.caliper {
                Some(require_graph(graph, config)?)
            } else {
                None
            };
            match_optimal(&mahalanobis_costs(&features, treated, control, caliper)?)
        }
    }
}

enum Kernel {
    Did,
    Corr { h_delta: Vec<f64> },
    Anova { plan: Box<AnovaPlan>, rows: Vec<(usize, usize)> },
}

/// Horizontal test: outcomes of each matched pair are permuted jointly
/// across the treated unit's treated experiments.
pub fn test_horizontal(
    panel: &PanelDataset,
    graph: Option<&InterferenceGraph>,
    config: &TestConfig,
) -> Result<PermutationTestResult> {
    config.validate()?;
    let k = panel.k();
    if k < 2 {
        return Err(Error::input("horizontal test needs at least 2 experiments"));
    }
    if let Some(g) = graph {
        if g.n() != panel.n() {
            return Err(Error::input(format!(
                "graph has {} vertices but the panel has {} units",
                g.n(),
                panel.n()
            )));
        }
    }
    let graph = if config.needs_graph() {
        Some(require_graph(graph, config)?)
    } else {
        graph
    };
    let matching = horizontal_matching(panel, graph, config)?;
    let mut warnings = Vec::new();
    if !matching.unmatched_treated.is_empty() {
        warnings.push(format!(
            "{} treated units left unmatched (fewer controls than treated units)",
            matching.unmatched_treated.len()
        ));
    }
    let pairs = &matching.pairs;
    let cls = classify_units(panel.treatments());
    let sets: Vec<&[usize]> = pairs.iter().map(|&(t, _)| cls.treated_sets[t].as_slice()).collect();
    if sets.iter().all(|s| s.len() <= 1) {
        warnings.push("permutation group trivial, p = 1".into());
    }
    let y = panel.outcomes();
    let y_diff: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(t, m)| (0..k).map(|e| y.get(t, e) - y.get(m, e)).collect())
        .collect();

    let kernel = build_kernel(panel, graph, config, pairs)?;
    let (last, prev) = (k - 1, k - 2);
    let statistic = |yd: &[Vec<f64>]| -> Result<f64> {
        match &kernel {
            Kernel::Did => {
                let a: Vec<f64> = yd.iter().map(|r| r[prev]).collect();
                let b: Vec<f64> = yd.iter().map(|r| r[last]).collect();
                Ok(stat_did(&a, &b)?.value)
            }
            Kernel::Corr { h_delta } => {
                let d: Vec<f64> = yd.iter().map(|r| r[last] - r[prev]).collect();
                Ok(stat_corr_diff(&d, h_delta)?.value)
            }
            Kernel::Anova { plan, rows } => {
                let resp: Vec<f64> = rows.iter().map(|&(p, e)| yd[p][e]).collect();
                Ok(plan.evaluate(&resp)?.f)
            }
        }
    };
    // Moves each pair's treated-experiment outcomes by one permutation per pair.
    let permuted = |perms: &[Vec<usize>]| -> Vec<Vec<f64>> {
        y_diff
            .iter()
            .zip(&sets)
            .zip(perms)
            .map(|((row, set), perm)| {
                let mut out = row.clone();
                for (j, &e) in set.iter().enumerate() {
                    out[e] = row[set[perm[j]]];
                }
                out
            })
            .collect()
    };

    let t0 = statistic(&y_diff)?;
    if config.exhaustive {
        let radices: Vec<usize> = sets
            .iter()
            .map(|s| factorial_capped(s.len(), MAX_EXHAUSTIVE_GROUP))
            .collect::<Option<_>>()
            .ok_or_else(too_large)?;
        let size = radices
            .iter()
            .try_fold(1usize, |acc, &r| acc.checked_mul(r).filter(|&x| x <= MAX_EXHAUSTIVE_GROUP))
            .ok_or_else(too_large)?;
        let ts: Vec<f64> = (0..size)
            .into_par_iter()
            .map(|g| {
                let mut rest = g;
                let perms: Vec<Vec<usize>> = sets
                    .iter()
                    .zip(&radices)
                    .map(|(s, &r)| {
                        let idx = rest % r;
                        rest /= r;
                        nth_permutation(s.len(), idx)
                    })
                    .collect();
                statistic(&permuted(&perms))
            })
            .collect::<Result<_>>()?;
        let p = exact_pvalue(t0, &ts, None)?;
        return Ok(result(config, t0, ts, p, TestMode::Exhaustive, warnings));
    }
    let tree = SeedTree::new(config.seed);
    let reps: Vec<f64> = (0..config.b)
        .into_par_iter()
        .map(|b| {
            let mut rng = tree.rng("replicate", b as u64);
            let perms: Vec<Vec<usize>> = sets
                .iter()
                .map(|s| {
                    let mut p: Vec<usize> = (0..s.len()).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect();
            statistic(&permuted(&perms))
        })
        .collect::<Result<_>>()?;
    let p = pvalue(t0, &reps)?;
    Ok(result(config, t0, reps, p, TestMode::MonteCarlo, warnings))
}

fn too_large() -> Error {
    Error::input(format!(
        "permutation group exceeds {MAX_EXHAUSTIVE_GROUP} elements; exhaustive mode unavailable"
    ))
}

fn build_kernel(
    panel: &PanelDataset,
    graph: Option<&InterferenceGraph>,
    config: &TestConfig,
    pairs: &[(usize, usize)],
) -> Result<Kernel> {
    let k = panel.k();
    let kind = config.statistic.kind;
    if kind == StatisticKind::Did {
        return Ok(Kernel::Did);
    }
    let graph = require_graph(graph, config)?;
    // Exposures of treated units first, then of their matched controls.
    let units: Vec<usize> = pairs.iter().map(|p| p.0).chain(pairs.iter().map(|p| p.1)).collect();
    let plan = ExposurePlan::new(graph, config.exposure, &units)?;
    let np = pairs.len();
    let h: Vec<Vec<f64>> = (0..k)
        .map(|e| {
            let mut out = vec![0.0; units.len()];
            plan.eval(panel.treatments().column(e), &mut out);
            out
        })
        .collect();
    let h_diff = |e: usize, p: usize| h[e][p] - h[e][np + p];
    if kind == StatisticKind::CorrDiff {
        let h_delta = (0..np).map(|p| h_diff(k - 1, p) - h_diff(k - 2, p)).collect();
        return Ok(Kernel::Corr { h_delta });
    }

    let w = panel.treatments();
    let rows: Vec<(usize, usize)> = (0..k)
        .flat_map(|e| (0..np).filter(move |&p| w.get(pairs[p].0, e) == 1).map(move |p| (p, e)))
        .collect();
    let x = panel.covariates();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; rows.len()]];
    if config.statistic.use_covariates {
        for j in 0..x.cols() {
            cols.push(rows.iter().map(|&(p, _)| x.get(pairs[p].0, j)).collect());
            cols.push(rows.iter().map(|&(p, _)| x.get(pairs[p].1, j)).collect());
        }
    }
    if config.statistic.use_neighbor_count {
        cols.push(rows.iter().map(|&(p, _)| graph.degree(pairs[p].0) as f64).collect());
        cols.push(rows.iter().map(|&(p, _)| graph.degree(pairs[p].1) as f64).collect());
    }
    let reduced: Vec<usize> = (0..cols.len()).collect();
    cols.push(rows.iter().map(|&(p, e)| h[e][p]).collect());
    cols.push(rows.iter().map(|&(p, e)| h[e][np + p]).collect());
    for ind in 1..k {
        cols.push(rows.iter().map(|&(_, e)| f64::from(u8::from(e == ind))).collect());
    }
    let full: Vec<usize> = (0..cols.len()).collect();
    let design = Matrix::from_columns(rows.len(), &cols)?;
    Ok(Kernel::Anova {
        plan: Box::new(AnovaPlan::new(&design, &full, &reduced)?),
        rows,
    })
}
