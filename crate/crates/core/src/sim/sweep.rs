use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{gen_network, NetworkSpec};
use super::outcomes::{gen_covariates, outcomes_with_errors, ErrorDraws, OutcomeFamily, OutcomeModelConfig};
use crate::error::{Error, Result};
use crate::panel::{generate_allocation, validate_pi, PanelDataset};
use crate::perm::{run_test, TestConfig};
use crate::rng::SeedTree;

fn default_pi() -> Vec<f64> {
    vec![0.1, 0.25, 0.5]
}

fn default_replications() -> usize {
    200
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub network: NetworkSpec,
    /// Treatment probability of each experiment.
    #[serde(default = "default_pi")]
    pub pi: Vec<f64>,
    #[serde(default)]
    pub model: OutcomeFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_effects: Option<Vec<f64>>,
    pub signal_grid: Vec<f64>,
    pub variance_fractions: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub tests: Vec<TestConfig>,
    /// Master seed; the command line may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::input("replications must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::input(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.signal_grid.is_empty() || self.variance_fractions.is_empty() {
            return Err(Error::input("signal and variance-fraction grids must be nonempty"));
        }
        if let Some(r) = self.variance_fractions.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::input(format!(
                "common variance fraction {r} outside [0, 1)"
            )));
        }
        if let Some(s) = self.signal_grid.iter().find(|s| !s.is_finite()) {
            return Err(Error::input(format!("signal strength {s} is not finite")));
        }
        validate_pi(&self.pi)?;
        if let Some(u) = &self.time_effects {
            if u.len() != self.pi.len() {
                return Err(Error::input(format!(
                    "{} time effects for {} experiments",
                    u.len(),
                    self.pi.len()
                )));
            }
        }
        if self.tests.is_empty() {
            return Err(Error::input("sweep lists no tests"));
        }
        self.tests.iter().try_for_each(TestConfig::validate)
    }
}

/// Rejection rate for one (test, signal, variance fraction) combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerCell {
    pub test: String,
    pub statistic: String,
    pub signal: f64,
    pub rho: f64,
    pub power: f64,
    pub se: f64,
    /// Replications that produced a p-value.
    pub replications: usize,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_error: Option<String>,
}

impl PowerCell {
    pub fn is_complete(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerTable {
    pub cells: Vec<PowerCell>,
    pub warnings: Vec<String>,
}

impl PowerTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("test,statistic,signal,rho,power,se,replications\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                c.test, c.statistic, c.signal, c.rho, c.power, c.se, c.replications
            );
        }
        s
    }

    pub fn cell(&self, test: &str, signal: f64, rho: f64) -> Option<&PowerCell> {
        self.cells
            .iter()
            .find(|c| c.test == test && c.signal == signal && c.rho == rho)
    }
}

/// Runs every test on freshly simulated data for each replication and grid
/// point. Data draws are shared across signals and variance fractions within
/// a replication, so differences between cells are not masked by sampling
/// noise in the data.
pub fn run_power_sweep(sweep: &SweepConfig, seed: u64) -> Result<PowerTable> {
    sweep.validate()?;
    let tree = SeedTree::new(seed);
    let net = gen_network(&sweep.network, &mut tree.rng("network", 0))?;
    let graph = &net.graph;
    let n = graph.n();
    let ids: Vec<String> = net.labels.clone();
    let (ns, nr, nt) = (
        sweep.signal_grid.len(),
        sweep.variance_fractions.len(),
        sweep.tests.len(),
    );
    let k = sweep.pi.len();

    // outcome[rep][test][signal][rho] = p-value or error message
    let outcomes: Vec<Vec<std::result::Result<f64, String>>> = (0..sweep.replications)
        .into_par_iter()
        .map(|rep| {
            let data = tree.child("data", rep as u64);
            let prepared = (|| -> Result<_> {
                let w = generate_allocation(n, &sweep.pi, &mut data.rng("allocation", 0))?;
                let x = gen_covariates(n, &mut data.rng("covariates", 0))?;
                let draws = ErrorDraws::draw(n, k, &mut data.rng("errors", 0));
                Ok((w, x, draws))
            })();
            let (w, x, draws) = match prepared {
                Ok(v) => v,
                Err(e) => return vec![Err(e.to_string()); nt * ns * nr],
            };
            let mut out = Vec::with_capacity(nt * ns * nr);
            let mut panels = Vec::with_capacity(ns * nr);
            for &signal in &sweep.signal_grid {
                for &rho in &sweep.variance_fractions {
                    let model = OutcomeModelConfig {
                        family: sweep.model,
                        signal_strength: signal,
                        common_variance_fraction: rho,
                        time_effects: sweep.time_effects.clone(),
                    };
                    let panel = draws.combine(rho).and_then(|eps| {
                        let y = outcomes_with_errors(graph, &w, &x, &model, &eps)?;
                        PanelDataset::new(ids.clone(), w.clone(), y, x.clone(), sweep.pi.clone())
                    });
                    panels.push(panel);
                }
            }
            for (t, test) in sweep.tests.iter().enumerate() {
                let mut cfg = test.clone();
                cfg.seed = data.child("test", t as u64).master();
                for panel in &panels {
                    out.push(match panel {
                        Ok(p) => run_test(p, Some(graph), &cfg)
                            .map(|r| r.p_value)
                            .map_err(|e| e.to_string()),
                        Err(e) => Err(e.to_string()),
                    });
                }
            }
            out
        })
        .collect();

    let mut cells = Vec::with_capacity(nt * ns * nr);
    for (t, test) in sweep.tests.iter().enumerate() {
        for (si, &signal) in sweep.signal_grid.iter().enumerate() {
            for (ri, &rho) in sweep.variance_fractions.iter().enumerate() {
                let idx = t * ns * nr + si * nr + ri;
                let mut ok = 0usize;
                let mut hits = 0usize;
                let mut failures = 0usize;
                let mut first_error = None;
                for rep in &outcomes {
                    match &rep[idx] {
                        Ok(p) => {
                            ok += 1;
                            if *p <= sweep.alpha {
                                hits += 1;
                            }
                        }
                        Err(e) => {
                            failures += 1;
                            first_error.get_or_insert_with(|| e.clone());
                        }
                    }
                }
                let power = if ok > 0 { hits as f64 / ok as f64 } else { 0.0 };
                let se = if ok > 0 {
                    (power * (1.0 - power) / ok as f64).sqrt()
                } else {
                    0.0
                };
                cells.push(PowerCell {
                    test: test.label(),
                    statistic: test.statistic.kind.tag().to_string(),
                    signal,
                    rho,
                    power,
                    se,
                    replications: ok,
                    failures,
                    first_error,
                });
            }
        }
    }
    let mut warnings = net.warnings;
    for c in cells.iter().filter(|c| !c.is_complete()) {
        warnings.push(format!(
            "cell test={} signal={} rho={} incomplete: {} of {} replications failed ({})",
            c.test,
            c.signal,
            c.rho,
            c.failures,
            c.failures + c.replications,
            c.first_error.as_deref().unwrap_or("")
        ));
    }
    Ok(PowerTable { cells, warnings })
}
