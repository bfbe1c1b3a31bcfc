//! The `ifs` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{load_graph, InterferenceGraph};
use crate::io::{finish_panel, read_edge_records, read_panel_csv, read_panel_split};
use crate::manifest::{sha256_file, RunManifest};
use crate::panel::{generate_allocation, PanelDataset};
use crate::perm::{horizontal_matching, run_test, with_threads, Algorithm, PermutationTestResult, TestConfig};
use crate::rng::SeedTree;
use crate::sim::{
    gen_covariates, gen_network, load_edge_file, run_power_sweep, simulate_outcomes, NetworkSpec, OutcomeFamily,
    OutcomeModelConfig, SweepConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "ifs", version, about = "Permutation tests for interference in sequential experiments")]
struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, env = "IFS_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one permutation test on a panel.
    Test(TestArgs),
    /// Run a power sweep on simulated data and write power.csv.
    Simulate(SimulateArgs),
    /// Combine p-values from several result files.
    Aggregate(AggregateArgs),
    /// Summarize an edge list.
    GraphStats(GraphStatsArgs),
    /// Write a simulated panel and its network as CSV files.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct PanelArgs {
    /// Single panel file with columns unit_id,w1..wK,y1..yK,x1..xd.
    #[arg(long, conflicts_with_all = ["treatments", "outcomes", "covariates"])]
    panel: Option<PathBuf>,
    #[arg(long, requires_all = ["outcomes", "covariates"])]
    treatments: Option<PathBuf>,
    #[arg(long)]
    outcomes: Option<PathBuf>,
    #[arg(long)]
    covariates: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Edge list with header src,dst[,weight].
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Test configuration (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of permutation replicates.
    #[arg(long = "b")]
    b: Option<usize>,
    /// Record a reject/accept decision at this level.
    #[arg(long)]
    alpha: Option<f64>,
    /// Include replicate statistics in the result.
    #[arg(long)]
    emit_replicates: bool,
    /// Write the horizontal matching as CSV treated_id,control_id,cost.
    #[arg(long, value_name = "PATH")]
    emit_matching: Option<PathBuf>,
    /// Result JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Manifest path (defaults to the result path with .manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Sweep configuration (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of replications.
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Override B for every test in the sweep.
    #[arg(long = "b")]
    b: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    /// Result JSON files.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GraphStatsArgs {
    #[arg(long)]
    edges: PathBuf,
    /// Restrict to the largest connected component first.
    #[arg(long)]
    largest_component: bool,
    /// Also report diameter and average distance (all-pairs BFS).
    #[arg(long)]
    distances: bool,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Mean degree of the Watts-Strogatz network.
    #[arg(long, default_value_t = 10)]
    degree: usize,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5")]
    pi: Vec<f64>,
    #[arg(long, value_enum, default_value = "linear-general")]
    model: FamilyArg,
    #[arg(long, default_value_t = 0.0)]
    signal: f64,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, value_delimiter = ',')]
    time_effects: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum FamilyArg {
    LinearGeneral,
    NonlinearGeneral,
    LinearTfe,
    NonlinearTfe,
}

impl From<FamilyArg> for OutcomeFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::LinearGeneral => OutcomeFamily::LinearGeneral,
            FamilyArg::NonlinearGeneral => OutcomeFamily::NonlinearGeneral,
            FamilyArg::LinearTfe => OutcomeFamily::LinearTfe,
            FamilyArg::NonlinearTfe => OutcomeFamily::NonlinearTfe,
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_) | Error::Input(_) | Error::Io { .. } | Error::Csv { .. } => EXIT_INPUT,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Numerical(_) => EXIT_INTERNAL,
    }
}

/// Structured error report printed on stderr.
pub fn error_json(err: &Error) -> String {
    let mut v = serde_json::json!({
        "error": {
            "kind": err.kind(),
            "exit_code": exit_code(err),
            "message": err.to_string(),
        }
    });
    if let Error::Validation(report) = err {
        v["error"]["violations"] = serde_json::to_value(&report.violations).unwrap_or_default();
    }
    v.to_string()
}

/// Parses arguments and runs a command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli.threads;
    let outcome = std::panic::catch_unwind(|| {
        with_threads(threads, || match cli.command {
            Command::Test(a) => cmd_test(a, threads),
            Command::Simulate(a) => cmd_simulate(a, threads),
            Command::Aggregate(a) => cmd_aggregate(a, threads),
            Command::GraphStats(a) => cmd_graph_stats(a),
            Command::Synth(a) => cmd_synth(a),
        })
        .and_then(|r| r)
    });
    match outcome {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
        Err(_) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": "internal", "exit_code": EXIT_INTERNAL, "message": "internal error"}})
            );
            EXIT_INTERNAL
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a TOML or JSON (by extension) document as a JSON value.
fn read_config_value(path: &Path) -> Result<serde_json::Value> {
    let text = read_text(path)?;
    let bad = |e: String| Error::input(format!("cannot parse {}: {e}", path.display()));
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
    } else {
        let v: toml::Value = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        serde_json::to_value(v).map_err(|e| bad(e.to_string()))
    }
}

fn from_value<T: serde::de::DeserializeOwned>(path: &Path, v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v)
        .map_err(|e| Error::input(format!("invalid configuration in {}: {e}", path.display())))
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable output") + "\n"
}

fn sidecar(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "result".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn load_panel(args: &PanelArgs, pi: Option<Vec<f64>>, manifest: &mut RunManifest) -> Result<(PanelDataset, Vec<String>)> {
    let raw = match (&args.panel, &args.treatments, &args.outcomes, &args.covariates) {
        (Some(p), ..) => {
            manifest.add_input(p)?;
            read_panel_csv(p)?
        }
        (None, Some(t), Some(o), Some(c)) => {
            for p in [t, o, c] {
                manifest.add_input(p)?;
            }
            read_panel_split(t, o, c)?
        }
        _ => {
            return Err(Error::input(
                "give either --panel or all of --treatments, --outcomes, --covariates",
            ))
        }
    };
    finish_panel(raw, pi)
}

fn load_edges(path: &Path, panel: &PanelDataset) -> Result<(InterferenceGraph, Vec<String>)> {
    let records = read_edge_records(path)?;
    let weighted = records.iter().any(|r| r.weight.is_some());
    load_graph(&records, &panel.index_of(), weighted)
}

fn cmd_test(a: TestArgs, threads: usize) -> Result<()> {
    let mut manifest = RunManifest::start("test", threads);
    manifest.config_digest = Some(sha256_file(&a.config)?);
    let mut value = read_config_value(&a.config)?;
    let pi = match value.as_object_mut().and_then(|o| o.remove("pi")) {
        Some(p) => Some(from_value::<Vec<f64>>(&a.config, p)?),
        None => None,
    };
    let mut config: TestConfig = from_value(&a.config, value)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(b) = a.b {
        config.b = b;
    }
    if let Some(alpha) = a.alpha {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::input(format!("alpha {alpha} outside (0, 1)")));
        }
    }
    config.validate()?;
    manifest.master_seed = Some(config.seed);
    let (panel, mut warnings) = load_panel(&a.panel, pi, &mut manifest)?;
    let graph = match &a.edges {
        Some(p) => {
            manifest.add_input(p)?;
            let (g, w) = load_edges(p, &panel)?;
            warnings.extend(w);
            Some(g)
        }
        None => None,
    };
    let mut result: PermutationTestResult = run_test(&panel, graph.as_ref(), &config)?;
    if let Some(alpha) = a.alpha {
        result = result.with_alpha(alpha);
    }
    if !a.emit_replicates {
        result.t_replicates.clear();
    }
    warnings.append(&mut result.warnings);
    result.warnings = warnings;
    write_file(&a.out, &pretty(&result))?;
    manifest.outputs.push(a.out.display().to_string());

    if let Some(path) = &a.emit_matching {
        if config.algorithm != Algorithm::Horizontal {
            return Err(Error::input("--emit-matching applies only to the horizontal test"));
        }
        let view;
        let p = match &config.experiments {
            Some(e) => {
                view = panel.select_experiments(&e.iter().map(|&x| x.saturating_sub(1)).collect::<Vec<_>>())?;
                &view
            }
            None => &panel,
        };
        let m = horizontal_matching(p, graph.as_ref(), &config)?;
        let ids = panel.unit_ids();
        let mut csv = String::from("treated_id,control_id,cost\n");
        for (t, &(tr, co)) in m.pairs.iter().enumerate() {
            let cost = m.costs.as_ref().map(|c| c[t].to_string()).unwrap_or_default();
            let _ = writeln!(csv, "{},{},{}", ids[tr], ids[co], cost);
        }
        write_file(path, &csv)?;
        manifest.outputs.push(path.display().to_string());
    }
    manifest.warnings = result.warnings.clone();
    manifest.finish();
    manifest.write(&a.manifest.unwrap_or_else(|| sidecar(&a.out)))
}

fn cmd_simulate(a: SimulateArgs, threads: usize) -> Result<()> {
    let mut manifest = RunManifest::start("simulate", threads);
    manifest.config_digest = Some(sha256_file(&a.config)?);
    let mut sweep: SweepConfig = from_value(&a.config, read_config_value(&a.config)?)?;
    if let Some(r) = a.replications {
        sweep.replications = r;
    }
    if let Some(alpha) = a.alpha {
        sweep.alpha = alpha;
    }
    if let Some(b) = a.b {
        sweep.tests.iter_mut().for_each(|t| t.b = b);
    }
    if let NetworkSpec::File { path } = &mut sweep.network {
        if path.is_relative() {
            if let Some(dir) = a.config.parent() {
                *path = dir.join(&*path);
            }
        }
        manifest.add_input(path)?;
    }
    let seed = a.seed.or(sweep.seed).unwrap_or(0);
    manifest.master_seed = Some(seed);
    let table = run_power_sweep(&sweep, seed)?;
    let csv_path = a.out_dir.join("power.csv");
    write_file(&csv_path, &table.to_csv())?;
    let json_path = a.out_dir.join("power.json");
    write_file(&json_path, &pretty(&table))?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    manifest.outputs = vec![csv_path.display().to_string(), json_path.display().to_string()];
    manifest.warnings = table.warnings.clone();
    manifest.finish();
    manifest.write(&a.out_dir.join("manifest.json"))
}

#[derive(Serialize)]
struct AggregateInput {
    path: String,
    digest: String,
    algorithm: Algorithm,
    statistic_kind: String,
    p_value: f64,
}

#[derive(Serialize)]
struct AggregateOutput {
    p_value: f64,
    count: usize,
    algorithms: Vec<Algorithm>,
    mixed_algorithms: bool,
    inputs: Vec<AggregateInput>,
}

fn cmd_aggregate(a: AggregateArgs, threads: usize) -> Result<()> {
    let mut manifest = RunManifest::start("aggregate", threads);
    let mut inputs = Vec::with_capacity(a.results.len());
    for path in &a.results {
        manifest.add_input(path)?;
        let r: PermutationTestResult = serde_json::from_str(&read_text(path)?)
            .map_err(|e| Error::input(format!("malformed result file {}: {e}", path.display())))?;
        inputs.push(AggregateInput {
            path: path.display().to_string(),
            digest: sha256_file(path)?,
            algorithm: r.algorithm,
            statistic_kind: r.statistic_kind.tag().to_string(),
            p_value: r.p_value,
        });
    }
    let ps: Vec<f64> = inputs.iter().map(|i| i.p_value).collect();
    let p = crate::perm::aggregate_pvalues(&ps)?;
    let mut algorithms: Vec<Algorithm> = Vec::new();
    for i in &inputs {
        if !algorithms.contains(&i.algorithm) {
            algorithms.push(i.algorithm);
        }
    }
    let out = AggregateOutput {
        p_value: p,
        count: inputs.len(),
        mixed_algorithms: algorithms.len() > 1,
        algorithms,
        inputs,
    };
    write_file(&a.out, &pretty(&out))?;
    manifest.outputs.push(a.out.display().to_string());
    manifest.finish();
    manifest.write(&a.manifest.unwrap_or_else(|| sidecar(&a.out)))
}

#[derive(Serialize)]
struct GraphStatsOutput {
    n: usize,
    m: usize,
    degree_min: usize,
    degree_mean: f64,
    degree_max: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    components: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diameter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    average_distance: Option<f64>,
}

fn cmd_graph_stats(a: GraphStatsArgs) -> Result<()> {
    let (mut g, _) = load_edge_file(&a.edges)?;
    if a.largest_component {
        g = g.largest_component().0;
    }
    let g = &g;
    let s = g.summary();
    let comps = g.components().into_iter().max().map_or(0, |c| c + 1);
    let diag = a.distances.then(|| g.distance_diagnostics());
    let out = GraphStatsOutput {
        n: s.n,
        m: s.m,
        degree_min: s.degree_min,
        degree_mean: s.degree_mean,
        degree_max: s.degree_max,
        components: Some(comps),
        diameter: diag.map(|d| d.diameter),
        average_distance: diag.map(|d| d.average_distance),
    };
    match &a.out {
        Some(p) => write_file(p, &pretty(&out)),
        None => {
            print!("{}", pretty(&out));
            Ok(())
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let tree = SeedTree::new(a.seed);
    let net = gen_network(
        &NetworkSpec::WattsStrogatz {
            n: a.n,
            k: a.degree,
            beta: a.beta,
        },
        &mut tree.rng("network", 0),
    )?;
    let g = &net.graph;
    let n = g.n();
    let w = generate_allocation(n, &a.pi, &mut tree.rng("allocation", 0))?;
    let x = gen_covariates(n, &mut tree.rng("covariates", 0))?;
    let model = OutcomeModelConfig {
        family: a.model.into(),
        signal_strength: a.signal,
        common_variance_fraction: a.rho,
        time_effects: a.time_effects.clone(),
    };
    let y = simulate_outcomes(g, &w, &x, &model, &mut tree.rng("errors", 0))?;
    let k = w.k();
    let mut panel = String::from("unit_id");
    for prefix in ["w", "y"] {
        for e in 1..=k {
            let _ = write!(panel, ",{prefix}{e}");
        }
    }
    for j in 1..=x.cols() {
        let _ = write!(panel, ",x{j}");
    }
    panel.push('\n');
    for i in 0..n {
        panel.push_str(&net.labels[i]);
        for e in 0..k {
            let _ = write!(panel, ",{}", w.get(i, e));
        }
        for e in 0..k {
            let _ = write!(panel, ",{}", y.get(i, e));
        }
        for j in 0..x.cols() {
            let _ = write!(panel, ",{}", x.get(i, j));
        }
        panel.push('\n');
    }
    let mut edges = String::from("src,dst\n");
    for (u, v, _) in g.edges() {
        let _ = writeln!(edges, "{},{}", net.labels[u], net.labels[v]);
    }
    write_file(&a.out_dir.join("panel.csv"), &panel)?;
    write_file(&a.out_dir.join("edges.csv"), &edges)?;
    let pi: Vec<String> = a.pi.iter().map(f64::to_string).collect();
    write_file(&a.out_dir.join("pi.txt"), &(pi.join(",") + "\n"))
}
