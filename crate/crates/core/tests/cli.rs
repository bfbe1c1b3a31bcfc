use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use tempfile::TempDir;

fn ifs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifs"))
        .args(args)
        .env_remove("IFS_THREADS")
        .output()
        .expect("spawn ifs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

/// Ten units over three experiments on a ring.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let rows = [
        "a,1,1,1,2.1,3.0,4.2,0.5,1",
        "b,1,1,1,1.7,2.9,3.1,1.5,0",
        "c,0,1,1,0.4,2.2,2.8,0.1,3",
        "d,0,0,1,0.9,1.0,2.5,2.2,2",
        "e,0,0,0,0.3,0.6,0.2,0.7,4",
        "f,0,0,0,1.1,0.8,1.3,1.9,1",
        "g,0,0,0,0.2,0.1,0.9,0.3,2",
        "h,0,0,0,0.8,1.4,0.6,1.1,5",
        "i,0,0,0,1.3,0.7,1.0,0.9,3",
        "j,0,0,0,0.5,0.9,0.4,2.4,1",
    ];
    let panel = dir.join("panel.csv");
    fs::write(&panel, format!("unit_id,w1,w2,w3,y1,y2,y3,x1,x2\n{}\n", rows.join("\n"))).unwrap();
    let ids = "abcdefghij".as_bytes();
    let mut edges = String::from("src,dst\n");
    for i in 0..10 {
        edges.push_str(&format!("{},{}\n", ids[i] as char, ids[(i + 1) % 10] as char));
        edges.push_str(&format!("{},{}\n", ids[i] as char, ids[(i + 3) % 10] as char));
    }
    let edge_path = dir.join("edges.csv");
    fs::write(&edge_path, edges).unwrap();
    (panel, edge_path)
}

fn config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

const HORIZONTAL: &str = "algorithm = \"horizontal\"\nb = 50\npi = [0.2, 0.3, 0.4]\n[statistic]\nkind = \"corr_diff\"\n[matching]\nmethod = \"mahalanobis\"\n";

#[test]
fn horizontal_test_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let (panel, edges) = fixture(dir.path());
    let cfg = config(dir.path(), "h.toml", HORIZONTAL);
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("r{run}.json"));
        let m = dir.path().join(format!("m{run}.csv"));
        let o = ifs(&[
            "test", "--panel", p(&panel), "--edges", p(&edges), "--config", p(&cfg), "--seed", "7",
            "--out", p(&out), "--emit-replicates", "--emit-matching", p(&m), "--alpha", "0.05",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((fs::read(&out).unwrap(), fs::read(&m).unwrap()));
        assert!(dir.path().join(format!("r{run}.manifest.json")).exists());
    }
    assert_eq!(outputs[0], outputs[1]);
    let v: Value = serde_json::from_slice(&outputs[0].0).unwrap();
    assert_eq!(v["algorithm"], "horizontal");
    assert_eq!(v["B"], 50);
    assert_eq!(v["seed"], 7);
    assert_eq!(v["t_replicates"].as_array().unwrap().len(), 50);
    let pv = v["p_value"].as_f64().unwrap();
    assert_eq!(v["rejected"].as_bool().unwrap(), pv <= 0.05);
    let matching = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(matching.starts_with("treated_id,control_id,cost\n"));
    assert_eq!(matching.lines().count(), 1 + 3);

    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("r0.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "test");
    assert_eq!(manifest["master_seed"], 7);
    let digest = manifest["input_digests"].as_object().unwrap();
    assert_eq!(digest.len(), 2);
    assert!(digest.values().all(|d| d.as_str().unwrap().len() == 64));
}

#[test]
fn decreasing_treatment_row_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let panel = dir.path().join("bad.csv");
    fs::write(&panel, "unit_id,w1,w2,y1,y2\nu1,0,0,1,2\nu2,1,0,1,2\nu3,0,1,3,4\n").unwrap();
    let before = fs::read(&panel).unwrap();
    let cfg = config(dir.path(), "t.toml", "algorithm = \"horizontal\"\n[statistic]\nkind = \"did\"\n[matching]\nmethod = \"random\"\n");
    let o = ifs(&["test", "--panel", p(&panel), "--config", p(&cfg), "--out", p(&dir.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["error"]["kind"], "validation");
    let msg = err["error"]["message"].as_str().unwrap();
    assert!(msg.contains("row 2") && msg.contains("u2"), "{msg}");
    let v = err["error"]["violations"].as_array().unwrap();
    let row = v.iter().find(|x| x["violation"] == "non_monotone_treatment").unwrap();
    assert_eq!(row["row"], 1);
    assert_eq!(row["unit_id"], "u2");
    assert_eq!(fs::read(&panel).unwrap(), before);
}

#[test]
fn missing_graph_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let (panel, _) = fixture(dir.path());
    let cfg = config(dir.path(), "v.toml", "algorithm = \"vertical\"\n[statistic]\nkind = \"reg_coef\"\n");
    let o = ifs(&["test", "--panel", p(&panel), "--config", p(&cfg), "--out", p(&dir.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr_json(&o)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("graph required for exposure kind"), "{msg}");

    let o = ifs(&[
        "test", "--panel", p(&panel), "--edges", p(&dir.path().join("absent.csv")), "--config", p(&cfg),
        "--out", p(&dir.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infeasible_test_exits_3() {
    let dir = TempDir::new().unwrap();
    // Every unit switches at some point: no constant-treatment units.
    let panel = dir.path().join("p.csv");
    fs::write(&panel, "unit_id,w1,w2,y1,y2\na,0,1,1,2\nb,0,1,2,1\nc,0,1,3,3\nd,1,1,0,1\n").unwrap();
    let edges = dir.path().join("e.csv");
    fs::write(&edges, "src,dst\na,b\nb,c\nc,d\n").unwrap();
    let cfg = config(dir.path(), "v.toml", "algorithm = \"vertical\"\npi = [0.2, 0.9]\n");
    let o = ifs(&["test", "--panel", p(&panel), "--edges", p(&edges), "--config", p(&cfg), "--out", p(&dir.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stderr_json(&o)["error"]["kind"], "infeasible");
}

fn result_with(dir: &Path, name: &str, algorithm: &str, pv: f64) -> PathBuf {
    let v = serde_json::json!({
        "algorithm": algorithm,
        "statistic_kind": "corr_diff",
        "exposure_kind": "fracFrds",
        "B": 99,
        "seed": 1,
        "mode": "monte_carlo",
        "t_observed": 0.5,
        "p_value": pv,
        "warnings": [],
    });
    let path = dir.join(name);
    fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn aggregate_combines_pvalues() {
    let dir = TempDir::new().unwrap();
    let a = result_with(dir.path(), "a.json", "vertical", 0.01);
    let b = result_with(dir.path(), "b.json", "horizontal", 0.03);
    let out = dir.path().join("agg.json");
    let o = ifs(&["aggregate", p(&a), p(&b), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert!((v["p_value"].as_f64().unwrap() - 0.04).abs() < 1e-15);
    assert_eq!(v["count"], 2);
    assert_eq!(v["mixed_algorithms"], true);
    assert_eq!(v["inputs"][0]["digest"].as_str().unwrap().len(), 64);

    let c = result_with(dir.path(), "c.json", "vertical", 0.6);
    let o = ifs(&["aggregate", p(&c), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["p_value"].as_f64().unwrap(), 1.0);
    assert_eq!(v["mixed_algorithms"], false);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"p_value\": 0.1}").unwrap();
    let o = ifs(&["aggregate", p(&bad), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

fn repro(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../repro").join(name)
}

#[test]
fn simulate_smoke_mode_is_fast() {
    let dir = TempDir::new().unwrap();
    for cfg in ["figure_vertical.toml", "figure_horizontal.toml"] {
        let start = Instant::now();
        let o = ifs(&["simulate", "--config", p(&repro(cfg)), "--replications", "1", "--out-dir", p(dir.path())]);
        let took = start.elapsed();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(took.as_secs_f64() < 10.0, "{cfg} took {took:?}");
        let csv = fs::read_to_string(dir.path().join("power.csv")).unwrap();
        assert!(csv.starts_with("test,statistic,signal,rho,power,se,replications\n"));
        assert!(dir.path().join("manifest.json").exists());
        assert!(dir.path().join("power.json").exists());
    }
}

#[test]
fn simulate_rejects_rho_one() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        "s.toml",
        "signal_grid = [0.0]\nvariance_fractions = [1.0]\nreplications = 2\n[[tests]]\nalgorithm = \"vertical\"\nb = 9\n",
    );
    let o = ifs(&["simulate", "--config", p(&cfg), "--out-dir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["error"]["message"].as_str().unwrap().contains("outside [0, 1)"));
    assert!(!dir.path().join("power.csv").exists());
}

#[test]
fn graph_stats_on_largest_component() {
    let dir = TempDir::new().unwrap();
    let edges = dir.path().join("e.txt");
    fs::write(&edges, "# comment\n1 2\n2 3\n3 1\n3 4\n7 8\n").unwrap();
    let out = dir.path().join("g.json");
    let o = ifs(&["graph-stats", "--edges", p(&edges), "--largest-component", "--distances", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["n"], 4);
    assert_eq!(v["m"], 4);
    assert_eq!(v["diameter"], 2);
    assert!((v["average_distance"].as_f64().unwrap() - 8.0 / 6.0).abs() < 1e-12);
}

#[test]
fn synth_then_test_round_trip() {
    let dir = TempDir::new().unwrap();
    let o = ifs(&["synth", "--n", "120", "--degree", "6", "--seed", "3", "--out-dir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = config(dir.path(), "v.toml", "algorithm = \"vertical\"\nb = 19\n[statistic]\nkind = \"pairwise_corr_sum\"\n");
    let out = dir.path().join("r.json");
    let o = ifs(&[
        "test", "--panel", p(&dir.path().join("panel.csv")), "--edges", p(&dir.path().join("edges.csv")),
        "--config", p(&cfg), "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert!(v.get("t_replicates").is_none());
}

#[test]
fn bad_arguments_exit_2() {
    let o = ifs(&["test", "--config"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ifs(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}
