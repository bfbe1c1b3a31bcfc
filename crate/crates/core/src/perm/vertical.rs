use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use super::{exact_pvalue, factorial_capped, nth_permutation, pvalue, result, PermutationTestResult, TestConfig, TestMode, MAX_EXHAUSTIVE_GROUP};
use crate::error::{Error, Result};
use crate::graph::{ExposurePlan, InterferenceGraph};
use crate::panel::{classify_units, sample_focal_split, sample_uniform_split, PanelDataset};
use crate::rng::SeedTree;
use crate::stats::{pearson, stat_corr_diff, stat_pairwise_corr_sum, stat_reg_coef, StatisticKind};

/// Largest auxiliary set for which exhaustive single-experiment mode
/// enumerates every regenerated treatment vector.
const MAX_EXHAUSTIVE_AUX_BITS: usize = 12;

/// Per-graph inputs evaluated on the focal units.
struct GraphView<'g> {
    plan: ExposurePlan<'g>,
    degree: Vec<f64>,
}

impl<'g> GraphView<'g> {
    fn new(graph: &'g InterferenceGraph, config: &TestConfig, focal: &[usize]) -> Result<Self> {
        Ok(GraphView {
            plan: ExposurePlan::new(graph, config.exposure, focal)?,
            degree: focal.iter().map(|&i| graph.degree(i) as f64).collect(),
        })
    }
}

fn focal_covariates(panel: &PanelDataset, focal: &[usize], use_covariates: bool) -> Vec<Vec<f64>> {
    if !use_covariates {
        return Vec::new();
    }
    panel
        .covariates()
        .columns()
        .map(|c| focal.iter().map(|&i| c[i]).collect())
        .collect()
}

/// Single-experiment test: focal units drawn uniformly, auxiliary
/// treatments regenerated as independent Bernoulli draws.
pub fn test_single_vertical(
    panel: &PanelDataset,
    graph: &InterferenceGraph,
    config: &TestConfig,
) -> Result<PermutationTestResult> {
    config.validate()?;
    if panel.k() != 1 {
        return Err(Error::input(format!(
            "single-experiment test expects one experiment, the panel has {}; select one with `experiments`",
            panel.k()
        )));
    }
    let pi = *panel
        .pi()
        .first()
        .ok_or_else(|| Error::input("treatment probability missing"))?;
    let n = panel.n();
    let tree = SeedTree::new(config.seed);
    let target = config.focal_target.unwrap_or(n / 2);
    let split = sample_uniform_split(n, target, &mut tree.rng("split", 0))?;
    let (focal, aux) = (&split.focal, &split.auxiliary);
    if focal.len() < 3 {
        return Err(Error::infeasible(format!(
            "focal set has {} units; at least 3 are needed",
            focal.len()
        )));
    }
    let view = GraphView::new(graph, config, focal)?;
    let w_obs = panel.treatments().column(0).to_vec();
    let y: Vec<f64> = focal.iter().map(|&i| panel.outcomes().get(i, 0)).collect();
    let w_focal: Vec<f64> = focal.iter().map(|&i| f64::from(w_obs[i])).collect();
    let xs = focal_covariates(panel, focal, config.statistic.use_covariates);
    let mut controls: Vec<&[f64]> = vec![&w_focal];
    controls.extend(xs.iter().map(Vec::as_slice));
    if config.statistic.use_neighbor_count {
        controls.push(&view.degree);
    }
    let statistic = |w: &[u8]| -> Result<f64> {
        let mut h = vec![0.0; focal.len()];
        view.plan.eval(w, &mut h);
        Ok(match config.statistic.kind {
            StatisticKind::CorrDiff => pearson(&y, &h)?.value.abs(),
            _ => stat_reg_coef(&y, &controls, &h)?.value,
        })
    };
    let t0 = statistic(&w_obs)?;
    let mut warnings = split.warnings.clone();

    if config.exhaustive {
        if aux.len() > MAX_EXHAUSTIVE_AUX_BITS {
            return Err(Error::input(format!(
                "exhaustive mode supports at most {MAX_EXHAUSTIVE_AUX_BITS} auxiliary units, found {}",
                aux.len()
            )));
        }
        let size = 1usize << aux.len();
        let evaluated: Vec<(f64, f64)> = (0..size)
            .into_par_iter()
            .map(|mask| {
                let mut w = w_obs.clone();
                let mut weight = 1.0;
                for (j, &a) in aux.iter().enumerate() {
                    let bit = (mask >> j) & 1 == 1;
                    w[a] = u8::from(bit);
                    weight *= if bit { pi } else { 1.0 - pi };
                }
                statistic(&w).map(|t| (t, weight))
            })
            .collect::<Result<_>>()?;
        let (ts, ws): (Vec<f64>, Vec<f64>) = evaluated.into_iter().unzip();
        let p = exact_pvalue(t0, &ts, Some(&ws))?;
        return Ok(result(config, t0, ts, p, TestMode::Exhaustive, warnings));
    }

    if aux.is_empty() {
        warnings.push("no auxiliary units; permutation group trivial, p = 1".into());
    }
    let reps: Vec<f64> = (0..config.b)
        .into_par_iter()
        .map(|b| {
            let mut rng = tree.rng("replicate", b as u64);
            let mut w = w_obs.clone();
            for &a in aux {
                w[a] = u8::from(rng.random_bool(pi));
            }
            statistic(&w)
        })
        .collect::<Result<_>>()?;
    let p = pvalue(t0, &reps)?;
    Ok(result(config, t0, reps, p, TestMode::MonteCarlo, warnings))
}

/// Multi-experiment vertical test on a single graph.
pub fn test_vertical(
    panel: &PanelDataset,
    graph: &InterferenceGraph,
    config: &TestConfig,
) -> Result<PermutationTestResult> {
    test_vertical_multigraph(panel, &[graph], config)
}

/// Multi-experiment vertical test whose statistic is summed over several
/// candidate graphs, all sharing the focal split and the permutations.
pub fn test_vertical_multigraph(
    panel: &PanelDataset,
    graphs: &[&InterferenceGraph],
    config: &TestConfig,
) -> Result<PermutationTestResult> {
    config.validate()?;
    if graphs.is_empty() {
        return Err(Error::input("at least one graph is required"));
    }
    let n = panel.n();
    if let Some(g) = graphs.iter().find(|g| g.n() != n) {
        return Err(Error::input(format!(
            "graph has {} vertices but the panel has {n} units",
            g.n()
        )));
    }
    let k = panel.k();
    if k < 2 {
        return Err(Error::input(
            "vertical test needs at least 2 experiments; use single_vertical for one",
        ));
    }
    let tree = SeedTree::new(config.seed);
    let cls = classify_units(panel.treatments());
    let target = config.focal_target.unwrap_or(n / 2).max(1);
    let split = sample_focal_split(&cls, target, &mut tree.rng("split", 0))?;
    let (focal, aux) = (&split.focal, &split.auxiliary);
    if focal.len() < 3 {
        return Err(Error::infeasible(format!(
            "only {} constant-treatment units; the vertical test needs at least 3",
            focal.len()
        )));
    }
    let views: Vec<GraphView> = graphs
        .iter()
        .map(|g| GraphView::new(g, config, focal))
        .collect::<Result<_>>()?;
    let w = panel.treatments();
    let y: Vec<Vec<f64>> = (0..k)
        .map(|e| focal.iter().map(|&i| panel.outcomes().get(i, e)).collect())
        .collect();
    let xs = focal_covariates(panel, focal, config.statistic.use_covariates);
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
    let y_diff: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(a, b)| y[b].iter().zip(&y[a]).map(|(l, r)| l - r).collect())
        .collect();

    let statistic = |perm: Option<&[usize]>| -> Result<f64> {
        let mut cols: Vec<Vec<u8>> = (0..k).map(|e| w.column(e).to_vec()).collect();
        if let Some(perm) = perm {
            for (e, col) in cols.iter_mut().enumerate() {
                for (j, &a) in aux.iter().enumerate() {
                    col[a] = w.get(aux[perm[j]], e);
                }
            }
        }
        let mut total = 0.0;
        for view in &views {
            let h: Vec<Vec<f64>> = cols
                .iter()
                .map(|c| {
                    let mut out = vec![0.0; focal.len()];
                    view.plan.eval(c, &mut out);
                    out
                })
                .collect();
            total += match config.statistic.kind {
                StatisticKind::PairwiseCorrSum => {
                    let yc: Vec<&[f64]> = y.iter().map(Vec::as_slice).collect();
                    let hc: Vec<&[f64]> = h.iter().map(Vec::as_slice).collect();
                    stat_pairwise_corr_sum(&yc, &hc)?.value
                }
                kind => {
                    let mut s = 0.0;
                    for (&(a, b), yd) in pairs.iter().zip(&y_diff) {
                        let hd: Vec<f64> = h[b].iter().zip(&h[a]).map(|(l, r)| l - r).collect();
                        s += if kind == StatisticKind::CorrDiff {
                            stat_corr_diff(yd, &hd)?.value
                        } else {
                            let mut controls: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
                            if config.statistic.use_neighbor_count {
                                controls.push(&view.degree);
                            }
                            controls.push(&h[a]);
                            stat_reg_coef(yd, &controls, &hd)?.value
                        };
                    }
                    s
                }
            };
        }
        Ok(total)
    };

    let t0 = statistic(None)?;
    let mut warnings = split.warnings.clone();
    if config.exhaustive {
        let size = factorial_capped(aux.len(), MAX_EXHAUSTIVE_GROUP).ok_or_else(|| {
            Error::input(format!(
                "permutation group of {} auxiliary units exceeds {MAX_EXHAUSTIVE_GROUP} elements",
                aux.len()
            ))
        })?;
        let ts: Vec<f64> = (0..size)
            .into_par_iter()
            .map(|g| statistic(Some(&nth_permutation(aux.len(), g))))
            .collect::<Result<_>>()?;
        let p = exact_pvalue(t0, &ts, None)?;
        return Ok(result(config, t0, ts, p, TestMode::Exhaustive, warnings));
    }
    if aux.len() < 2 {
        warnings.push("fewer than 2 auxiliary units; permutation group trivial, p = 1".into());
    }
    let reps: Vec<f64> = (0..config.b)
        .into_par_iter()
        .map(|b| {
            let mut rng = tree.rng("replicate", b as u64);
            let mut perm: Vec<usize> = (0..aux.len()).collect();
            perm.shuffle(&mut rng);
            statistic(Some(&perm))
        })
        .collect::<Result<_>>()?;
    let p = pvalue(t0, &reps)?;
    Ok(result(config, t0, reps, p, TestMode::MonteCarlo, warnings))
}
