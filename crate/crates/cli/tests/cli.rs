use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn designlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_designlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn arg(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const WORKED: &str = "unit_id,y1,y0\n1,1,0\n2,2,0\n3,3,0\n4,4,0\n";

#[test]
fn summarize_worked_example() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "pop.csv", WORKED);
    let v = stdout_json(&designlab(&["summarize", "--input", arg(&input)]));
    assert_eq!(v["summary"]["tau_S"]["exact"], "5/2");
    assert_eq!(v["summary"]["Stausq"]["exact"], "5/3");
    assert_eq!(v["exact"], true);

    let csv = designlab(&["summarize", "--input", arg(&input), "--format", "csv"]);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("n,ybar1,ybar0,tau_S,S1sq,S0sq,Stausq,S10\n4,5/2,0,5/2,5/3,0,5/3,0"), "{text}");
}

#[test]
fn bad_population_files_exit_2() {
    let dir = TempDir::new().unwrap();
    let empty = write(&dir, "empty.csv", "");
    let out = designlab(&["summarize", "--input", arg(&empty)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("population requires n ≥ 2"), "{}", stderr(&out));

    let nan = write(&dir, "nan.csv", "unit_id,y1,y0\na,1,0\nb,NaN,0\n");
    let out = designlab(&["summarize", "--input", arg(&nan)]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("line 3") && msg.contains("\"b\"") && msg.contains("y1"), "{msg}");

    let missing = dir.path().join("absent.csv");
    assert_eq!(designlab(&["summarize", "--input", arg(&missing)]).status.code(), Some(2));
}

#[test]
fn enumerate_worked_example() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "pop.csv", WORKED);
    let out = designlab(&["enumerate", "--input", arg(&input), "--design", "complete", "--n1", "2"]);
    let v = stdout_json(&out);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(v["report"]["var_tau_hat"]["exact"], "5/12");
    assert_eq!(v["report"]["f_S"]["exact"], "0");
    assert_eq!(v["report"]["support_size"], 6);
    assert_eq!(v["residual_identity"], true);
    assert_eq!(v["pass"], true);
    assert_eq!(v["config"]["design"]["n1"], 2);
}

#[test]
fn enumerate_refuses_large_support() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("unit_id,y1,y0\n");
    for i in 0..30 {
        text.push_str(&format!("{i},{},{}\n", i % 7, i % 3));
    }
    let input = write(&dir, "pop30.csv", &text);
    let out = designlab(&["enumerate", "--input", arg(&input), "--n1", "15", "--cap", "1000000"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("155117520") && msg.contains("C(30,15)"), "{msg}");
}

#[test]
fn stratified_design_from_config() {
    let dir = TempDir::new().unwrap();
    write(
        &dir,
        "strata.csv",
        "unit_id,y1,y0,stratum\na,1,0,s0\nb,2,0,s0\nc,3,0,s0\nd,4,0,s0\ne,1,0,s1\nf,2,0,s1\ng,3,0,s1\nh,4,0,s1\n",
    );
    let config = write(
        &dir,
        "run.toml",
        "version = 1\n[population]\nfile = \"strata.csv\"\n[design]\nkind = \"stratified\"\n[design.treated]\ns0 = 2\ns1 = 2\n",
    );
    let v = stdout_json(&designlab(&["enumerate", "--config", arg(&config)]));
    assert_eq!(v["report"]["var_tau_hat"]["exact"], "5/24");
    assert_eq!(v["report"]["support_size"], 36);
    assert_eq!(v["pass"], true);
    assert_eq!(v["residual_identity"], Value::Null);

    // The same design from flags.
    let pop = dir.path().join("strata.csv");
    let flags = stdout_json(&designlab(&[
        "enumerate", "--input", arg(&pop), "--design", "stratified", "--treated", "s0=2,s1=2",
    ]));
    assert_eq!(flags["report"], v["report"]);
}

const STUDY: &str = r#"version = 1
[population.model]
kind = "bivariate-gaussian"
var1 = 1.0
var0 = 1.0
rho = 0.5

[design]
kind = "complete"
n1 = 3

[study]
mode = "decomposition"
n = 6
replications = 200
"#;

#[test]
fn study_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "study.toml", STUDY);
    let run = |threads: &str| {
        let out = designlab(&["study", "--config", arg(&config), "--seed", "7", "--threads", threads]);
        assert!(out.status.code() == Some(0) || out.status.code() == Some(1), "{}", stderr(&out));
        out.stdout
    };
    let first = run("1");
    assert_eq!(first, run("1"));
    assert_eq!(first, run("4"));
    let v: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(v["config"]["master_seed"], 7);
    assert_eq!(v["config"]["replications"], 200);

    let records = dir.path().join("records.csv");
    let out = designlab(&["study", "--config", arg(&config), "--seed", "7", "--records", arg(&records)]);
    assert_eq!(out.stdout, first);
    let text = std::fs::read_to_string(&records).unwrap();
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn study_without_seed_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "study.toml", STUDY);
    let out = designlab(&["study", "--config", arg(&config)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("seed"));
}

#[test]
fn frt_exact_and_sampled() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "obs.csv", "unit_id,z,yobs\n1,0,1\n2,0,2\n3,1,3\n4,1,4\n");
    let v = stdout_json(&designlab(&["frt", "--input", arg(&input), "--n1", "2"]));
    assert_eq!(v["result"]["method"], "exact");
    assert_eq!(v["result"]["p_value"], "1/3");
    assert!(v["result"]["p_value_approx"].to_string().starts_with("0.333333"));

    let out = designlab(&["frt", "--input", arg(&input), "--n1", "2", "--cap", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--seed"));
    let mc = stdout_json(&designlab(&[
        "frt", "--input", arg(&input), "--n1", "2", "--cap", "2", "--seed", "1", "--draws", "2000",
    ]));
    assert_eq!(mc["result"]["method"], "monte-carlo");
    let p = mc["result"]["p_value"].as_f64().unwrap();
    let se = mc["result"]["se"].as_f64().unwrap();
    assert!((p - 1.0 / 3.0).abs() < 4.0 * se, "p={p} se={se}");
}

#[test]
fn bound_from_marginals() {
    let dir = TempDir::new().unwrap();
    let y1 = write(&dir, "y1.csv", "y1\n0\n10\n");
    let y0 = write(&dir, "y0.csv", "y0\n1\n2\n");
    let v = stdout_json(&designlab(&["bound", "--y1", arg(&y1), "--y0", arg(&y0)]));
    assert_eq!(v["stausq_lower_bound"]["value"], "40.5");
    assert_eq!(v["stausq_lower_bound"]["approx"], 40.5);

    let short = write(&dir, "short.csv", "5\n");
    assert_eq!(designlab(&["bound", "--y1", arg(&y1), "--y0", arg(&short)]).status.code(), Some(2));
}

#[test]
fn estimate_reports_intervals_or_unavailable_variance() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "obs.csv", "unit_id,z,yobs\n1,0,1\n2,0,2\n3,1,3\n4,1,4\n");
    let v = stdout_json(&designlab(&["estimate", "--input", arg(&input), "--n1", "2"]));
    assert_eq!(v["estimate"]["tau_hat"], 2.0);
    assert_eq!(v["estimate"]["vhat_neyman"], 0.5);
    assert!(v["estimate"]["ci_lo"].as_f64().unwrap() < 2.0);

    let single = write(&dir, "single.csv", "unit_id,z,yobs\n1,0,1\n2,0,2\n3,1,3\n");
    let v = stdout_json(&designlab(&["estimate", "--input", arg(&single), "--n1", "1"]));
    assert_eq!(v["estimate"]["tau_hat"], 1.5);
    assert_eq!(v["estimate"]["vhat_neyman"], Value::Null);
    assert!(v["estimate"]["variance_unavailable"].is_string());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(designlab(&["summarize"]).status.code(), Some(2));
    assert_eq!(designlab(&["nonsense"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "pop.csv", WORKED);
    let out = designlab(&["enumerate", "--input", arg(&input)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no design"));
    let out = designlab(&["enumerate", "--input", arg(&input), "--design", "cluster"]);
    assert!(stderr(&out).contains("--m1"));
}
