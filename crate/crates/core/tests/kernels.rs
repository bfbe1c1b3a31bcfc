mod common;

use common::*;
use ifs_core::graph::{compute_exposure, ExposureKind, ExposureSpec};
use ifs_core::linalg::{ols_fit, Matrix};
use ifs_core::matching::{mahalanobis_costs, match_optimal, CostMatrix};
use ifs_core::stats::stat_anova_f;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(r: &mut impl Rng) -> f64 {
    StandardNormal.sample(r)
}

fn random_design(r: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let vals: Vec<f64> = (0..rows * cols).map(|t| if t % cols == 0 { 1.0 } else { normal(r) }).collect();
    Matrix::from_row_major(rows, cols, &vals).unwrap()
}

#[test]
fn ols_matches_normal_equations() {
    let mut r = rng(11);
    for case in 0..100 {
        let rows = r.random_range(12..60);
        let cols = r.random_range(1..8.min(rows - 4));
        let x = random_design(&mut r, rows, cols);
        let y: Vec<f64> = (0..rows).map(|_| 3.0 * normal(&mut r) + 1.0).collect();
        let fit = ols_fit(&x, &y).unwrap();
        let oracle = normal_equations(&to_na(&x), &y);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            let rel = (a - b).abs() / b.abs().max(1.0);
            assert!(rel <= 1e-8, "case {case}: {a} vs {b}");
        }
        assert_eq!(fit.rank, cols);
        assert_eq!(fit.dof, rows - cols);
    }
}

#[test]
fn anova_f_matches_rss_ratio() {
    let mut r = rng(12);
    for case in 0..60 {
        let rows = r.random_range(15..80);
        let cols = r.random_range(3..7);
        let x = random_design(&mut r, rows, cols);
        let beta: Vec<f64> = (0..cols).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..rows)
            .map(|i| (0..cols).map(|j| x.get(i, j) * beta[j]).sum::<f64>() + normal(&mut r))
            .collect();
        let full: Vec<usize> = (0..cols).collect();
        let split = r.random_range(1..cols);
        let reduced: Vec<usize> = (0..split).collect();
        let got = stat_anova_f(&y, &x, &full, &reduced).unwrap();
        let want = anova_f_direct(&to_na(&x), &full, &reduced, &y);
        assert!((got.f - want).abs() <= 1e-10 * want.max(1.0), "case {case}: {} vs {want}", got.f);
        assert_eq!(got.df_num, cols - split);
        assert_eq!(got.df_den, rows - cols);
    }
}

#[test]
fn assignment_matches_brute_force() {
    let mut r = rng(13);
    for case in 0..50 {
        let rows = r.random_range(1..=7);
        let cols = r.random_range(1..=9);
        let (rows, cols) = if case % 5 == 0 { (cols.min(7), rows) } else { (rows, cols) };
        // Integer costs make ties frequent.
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| f64::from(r.random_range(0..6u8))).collect())
            .collect();
        let m = match_optimal(&CostMatrix::from_rows(&cost).unwrap()).unwrap();
        let want = brute_force_assignment(&cost);
        let got = m.total_cost.unwrap();
        assert!((got - want).abs() < 1e-9, "case {case}: {got} vs {want}");
        let recomputed: f64 = m.pairs.iter().map(|&(t, c)| cost[t][c]).sum();
        assert!((recomputed - got).abs() < 1e-9);
        assert_eq!(m.pairs.len(), rows.min(cols));
        let mut used: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), m.pairs.len());
    }
}

#[test]
fn assignment_with_forbidden_entries() {
    let inf = f64::INFINITY;
    let cost = vec![vec![1.0, inf, 5.0], vec![inf, 2.0, inf], vec![4.0, inf, 1.0]];
    let m = match_optimal(&CostMatrix::from_rows(&cost).unwrap()).unwrap();
    assert_eq!(m.pairs, vec![(0, 0), (1, 1), (2, 2)]);
    assert_eq!(m.total_cost, Some(4.0));

    let blocked = vec![vec![1.0, inf], vec![2.0, inf]];
    let err = match_optimal(&CostMatrix::from_rows(&blocked).unwrap()).unwrap_err();
    assert_eq!(err.kind(), "infeasible");
}

#[test]
fn exposures_match_brute_force() {
    let mut r = rng(14);
    for case in 0..100 {
        let n = r.random_range(1..=12);
        let g = DenseGraph::random(n, r.random_range(0.1..0.7), &mut r);
        let w: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.4))).collect();
        let plain = g.to_graph(false);
        let weighted = g.to_graph(true);
        let check = |kind, graph, oracle: &dyn Fn(usize) -> f64| {
            let got = compute_exposure(graph, &w, ExposureSpec { kind }).unwrap().values;
            for (i, v) in got.iter().enumerate() {
                assert!((v - oracle(i)).abs() < 1e-12, "case {case} {kind:?} unit {i}");
            }
        };
        check(ExposureKind::NumFrds, &plain, &|i| g.num_frds(i, &w));
        check(ExposureKind::FracFrds, &plain, &|i| g.frac_frds(i, &w));
        check(ExposureKind::Num2Frds, &plain, &|i| g.num_2frds(i, &w));
        check(ExposureKind::WAvgCpt, &weighted, &|i| g.w_avg(i, &w));
    }
}

#[test]
fn mahalanobis_hand_fixture() {
    let feats = [[1.0, 2.0], [2.0, 1.0], [3.0, 4.0], [0.0, 0.5], [2.5, 2.0], [4.0, 3.0]];
    let flat: Vec<f64> = feats.concat();
    let x = Matrix::from_row_major(6, 2, &flat).unwrap();
    let (treated, control) = ([0, 1, 2], [3, 4, 5]);
    let costs = mahalanobis_costs(&x, &treated, &control, None).unwrap();

    let mean = |j: usize| feats.iter().map(|f| f[j]).sum::<f64>() / 6.0;
    let (m0, m1) = (mean(0), mean(1));
    let s = |a: usize, b: usize| {
        feats.iter().map(|f| (f[a] - [m0, m1][a]) * (f[b] - [m0, m1][b])).sum::<f64>() / 5.0
    };
    let (a, b, c) = (s(0, 0), s(0, 1), s(1, 1));
    let det = a * c - b * b;
    for (r, &t) in treated.iter().enumerate() {
        for (q, &u) in control.iter().enumerate() {
            let (dx, dy) = (feats[t][0] - feats[u][0], feats[t][1] - feats[u][1]);
            let d2 = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
            assert!((costs.get(r, q) - d2.sqrt()).abs() < 1e-12);
        }
    }
    let m = match_optimal(&costs).unwrap();
    let rows: Vec<Vec<f64>> = (0..3).map(|r| (0..3).map(|q| costs.get(r, q)).collect()).collect();
    assert!((m.total_cost.unwrap() - brute_force_assignment(&rows)).abs() < 1e-12);
}
