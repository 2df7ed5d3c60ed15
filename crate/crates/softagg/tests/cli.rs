use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn softagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softagg")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = softagg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> (i32, String) {
    let out = softagg(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// File name -> SHA-256 for every file under `dir`.
fn hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                let digest = Sha256::digest(fs::read(&path).unwrap());
                out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_and_estimate_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let sim = tmp.path().join(format!("sim{tag}"));
        let est = tmp.path().join(format!("est{tag}"));
        ok(&["simulate", "--p", "200", "--r", "4", "--anchors", "10", "--n", "100000", "--seed", "7", "--out", s(&sim)]);
        let counts = sim.join("counts.txt");
        ok(&["estimate", "--counts", s(&counts), "--r", "4", "--drop-unvisited", "--seed", "7", "--out", s(&est)]);
        (hashes(&sim), hashes(&est))
    };
    let (sim_a, est_a) = run("a");
    let (sim_b, est_b) = run("b");
    assert_eq!(sim_a, sim_b);
    // The manifest records the input path, which differs between the runs.
    let strip = |mut m: BTreeMap<String, String>| {
        m.remove("run_manifest.json");
        m
    };
    assert_eq!(strip(est_a.clone()), strip(est_b));
    assert!(est_a.contains_key("V_hat.csv") && est_a.contains_key("anchors.json"));
    assert!(!est_a.contains_key("timings.json"));
}

#[test]
fn same_command_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let sim = ["simulate", "--p", "40", "--r", "3", "--anchors", "2", "--n", "5000", "--seed", "3", "--out", s(&out)];
    ok(&sim);
    let first = hashes(&out);
    ok(&sim);
    assert_eq!(first, hashes(&out));

    let est_dir = tmp.path().join("e");
    let counts = out.join("counts.txt");
    let est = ["estimate", "--counts", s(&counts), "--r", "3", "--drop-unvisited", "--hunter", "cluster-sp", "--seed", "5", "--out", s(&est_dir)];
    ok(&est);
    let first = hashes(&est_dir);
    ok(&est);
    assert_eq!(first, hashes(&est_dir));
    let manifest = json(est_dir.join("run_manifest.json"));
    assert_eq!(manifest["options"]["hunter"]["name"], "cluster-sp");
    assert_eq!(manifest["options"]["hunter"]["seed"], 5);
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["stage_hashes"].as_array().unwrap().len(), 8);
}

#[test]
fn rank_one_simulation_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (c, _) = code(&["simulate", "--p", "10", "--r", "1", "--anchors", "1", "--n", "10", "--out", s(tmp.path())]);
    assert_eq!(c, 1);
    let (c, _) = code(&["simulate", "--bogus"]);
    assert_eq!(c, 1);
    let (c, _) = code(&["estimate", "--r", "2", "--out", s(tmp.path())]);
    assert_eq!(c, 1);
}

#[test]
fn unvisited_state_without_policy_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let counts = tmp.path().join("counts.txt");
    fs::write(&counts, "4 6\n0 1 2\n1 0 2\n0 0 1\n1 1 1\n").unwrap();
    let (c, err) = code(&["estimate", "--counts", s(&counts), "--r", "2", "--out", s(&tmp.path().join("e"))]);
    assert_eq!(c, 2, "{err}");
    assert!(err.contains('2') && err.contains('3'), "{err}");
    assert!(err.to_lowercase().contains("column"), "{err}");
}

#[test]
fn oracle_estimate_scores_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--p", "60", "--r", "3", "--anchors", "3", "--n", "20000", "--seed", "11", "--out", s(&sim)]);
    let model = sim.join("model");
    let est = tmp.path().join("est");
    ok(&["estimate", "--oracle", s(&model), "--out", s(&est)]);
    let ev = tmp.path().join("ev");
    ok(&["evaluate", "--estimate", s(&est), "--model", s(&model), "--counts", s(&sim.join("counts.txt")), "--out", s(&ev)]);
    let e = json(ev.join("errors.json"));
    for key in ["tv_V_mean", "tv_V_max", "tv_U_mean", "tv_U_max", "tv_P_mean"] {
        assert!(e[key].as_f64().unwrap() < 1e-8, "{key}: {}", e[key]);
    }
    assert_eq!(e["anchor_recall_strict"], 1.0);
    assert!(e["p_comparison"]["tv_empirical"].as_f64().unwrap() > 0.0);

    let dg = tmp.path().join("dg");
    ok(&["diagnose", "--model", s(&model), "--estimate", s(&est), "--out", s(&dg)]);
    let d = json(dg.join("diagnostics.json"));
    assert!(d["mixing_time"].as_u64().unwrap() >= 1);
    assert!(d["singular"]["h1_max_error"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn mismatched_dimensions_are_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["simulate", "--p", "30", "--r", "2", "--anchors", "2", "--n", "100", "--seed", "1", "--out", s(&a)]);
    ok(&["simulate", "--p", "40", "--r", "2", "--anchors", "2", "--n", "100", "--seed", "1", "--out", s(&b)]);
    let est = tmp.path().join("est");
    ok(&["estimate", "--oracle", s(&a.join("model")), "--out", s(&est)]);
    let (c, err) = code(&["evaluate", "--estimate", s(&est), "--model", s(&b.join("model")), "--out", s(&tmp.path().join("ev"))]);
    assert_eq!(c, 2, "{err}");
}

#[test]
fn labeled_trips_become_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let trips = tmp.path().join("trips.csv");
    fs::write(&trips, "from,to\na,b\nb,a\na,b\n").unwrap();
    let out = tmp.path().join("i");
    ok(&["ingest", "--input", s(&trips), "--origin-col", "from", "--dest-col", "to", "--out", s(&out)]);
    assert_eq!(fs::read_to_string(out.join("counts.txt")).unwrap(), "2 3\n0 1 2\n1 0 1\n");
    assert_eq!(json(out.join("dictionary.json"))["labels"], serde_json::json!(["a", "b"]));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    let out = tmp.path().join("o");
    fs::write(&cfg, format!(r#"{{"p": 30, "r": 2, "anchors": 2, "n": 1000, "seed": 4, "out": "{}"}}"#, s(&out))).unwrap();
    ok(&["simulate", "--config", s(&cfg), "--n", "500"]);
    let m = json(out.join("run_manifest.json"));
    assert_eq!(m["n"], 500);
    assert_eq!(m["config"]["seed"], 4);
    fs::write(&cfg, r#"{"p": 30, "colour": 1}"#).unwrap();
    let (c, _) = code(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(c, 1);
}

#[test]
fn sweep_resumes_after_interruption() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sw");
    let args = |extra: &[&'static str]| {
        let mut v: Vec<String> = ["sweep", "--mode", "fixed_p", "--p", "30", "--r", "2", "--anchors", "3", "--n", "1e3,1e3.5,...,1e4", "--reps", "2", "--seed", "5", "--workers", "2", "--out"]
            .iter()
            .map(|x| x.to_string())
            .collect();
        v.push(s(&out).to_string());
        v.extend(extra.iter().map(|x| x.to_string()));
        v
    };
    let run = |extra: &[&'static str]| {
        let a = args(extra);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        ok(&refs);
    };
    run(&["--max-cells", "2"]);
    assert!(out.join("cells.partial.csv").exists());
    assert!(!out.join("ratefit.json").exists());
    run(&[]);
    let resumed = fs::read_to_string(out.join("sweep_results.csv")).unwrap();
    let fit = json(out.join("ratefit.json"));
    assert!(fit["slope"].as_f64().unwrap().is_finite());
    assert_eq!(fit["points"].as_array().unwrap().len(), 3);

    let fresh = tmp.path().join("fresh");
    let mut a = args(&[]);
    let last = a.len() - 1;
    a[last] = s(&fresh).to_string();
    let refs: Vec<&str> = a.iter().map(String::as_str).collect();
    ok(&refs);
    let strip_runtime = |text: &str| -> Vec<String> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().unwrap().clone();
        let rt = headers.iter().position(|h| h == "runtime_ms").unwrap();
        rdr.records()
            .map(|r| r.unwrap().iter().enumerate().filter(|(i, _)| *i != rt).map(|(_, x)| x.to_string()).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(
        resumed.lines().next().unwrap(),
        "p,r,n,rep,seed,tv_V,tv_U,tv_P_lowrank,tv_P_empirical,anchors_prec,anchors_rec,runtime_ms"
    );
    assert_eq!(resumed.lines().count(), 7);
    assert_eq!(strip_runtime(&resumed), strip_runtime(&fs::read_to_string(fresh.join("sweep_results.csv")).unwrap()));
}
