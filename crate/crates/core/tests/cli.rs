//! End-to-end runs of the `predmdp` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn predmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_predmdp"))
        .args(args)
        .env_remove("PREDMDP_OUT")
        .env_remove("PREDMDP_THREADS")
        .output()
        .expect("binary runs")
}

fn run_ok(command: &str, config: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let output = predmdp(&args);
    assert!(
        output.status.success(),
        "{command} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap()
}

fn error_json(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap()
}

#[test]
fn solve_reproduces_the_golden_files() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("solve");
    run_ok("solve", &manifest_dir().join("configs/solve.toml"), &out, &[]);
    for (produced, golden) in [
        ("values.csv", "data/two_state.values.csv"),
        ("policy.csv", "data/two_state.policy.csv"),
    ] {
        assert_eq!(
            fs::read(out.join(produced)).unwrap(),
            fs::read(manifest_dir().join(golden)).unwrap(),
            "{produced}"
        );
    }
}

#[test]
fn manifest_checksums_match_the_files() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bayes");
    let config = write_config(
        tmp.path(),
        "bayes.toml",
        "scenarios = 20\nseed = 3\n[mdp.random]\nnum_states = 4\nnum_actions = 2\n[prediction]\nhorizon = 2\n",
    );
    run_ok("bayes", &config, &out, &[]);
    let m = manifest(&out);
    assert_eq!(m["command"], "bayes");
    assert_eq!(m["master_seed"], 3);
    assert!(m["seeds"].as_object().unwrap().contains_key("mdp"));
    let files = m["files"].as_array().unwrap();
    assert!(files.len() >= 3);
    for entry in files {
        let bytes = fs::read(out.join(entry["path"].as_str().unwrap())).unwrap();
        assert_eq!(entry["bytes"].as_u64().unwrap(), bytes.len() as u64);
        assert_eq!(entry["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
}

#[test]
fn same_seed_gives_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "gap.toml",
        "k = 8\nrealizations = 200\nseed = 11\n[mdp.random]\nnum_states = 5\nnum_actions = 3\n",
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_ok("gap", &config, &a, &[]);
    run_ok("gap", &config, &b, &["--threads", "1"]);
    assert_eq!(fs::read(a.join("gap.csv")).unwrap(), fs::read(b.join("gap.csv")).unwrap());
    let c = tmp.path().join("c");
    run_ok("gap", &config, &c, &["--seed", "12"]);
    assert_ne!(fs::read(a.join("gap.csv")).unwrap(), fs::read(c.join("gap.csv")).unwrap());
    assert_eq!(manifest(&c)["master_seed"], 12);
}

#[test]
fn out_of_range_alpha_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "bola.toml",
        "[mdp.random]\nnum_states = 3\nnum_actions = 2\n[prediction]\nhorizon = 1\n\
         [budget]\ndelta = 0.1\nepsilon = 0.5\nalpha = 1.5\n",
    );
    let out = tmp.path().join("bola");
    let output = predmdp(&["bola", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    let record = error_json(&out);
    assert_eq!(record["field"], "budget.alpha");
    assert_eq!(record["exit_code"], 2);
    let stderr: Value = serde_json::from_slice(&output.stderr).unwrap();
    assert_eq!(stderr, record);
}

#[test]
fn missing_mdp_file_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "solve.toml", "[mdp.file]\npath = \"nowhere.txt\"\n");
    let out = tmp.path().join("solve");
    let output = predmdp(&["solve", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "io");
}

#[test]
fn malformed_mdp_reports_the_line() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("bad.txt"), "2 1 0.9\n0.0 1.0 0.0\n0.0 oops 1.0\n").unwrap();
    let config = write_config(tmp.path(), "solve.toml", "[mdp.file]\npath = \"bad.txt\"\n");
    let out = tmp.path().join("solve");
    let output = predmdp(&["solve", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    let record = error_json(&out);
    assert_eq!(record["error"], "parse");
    assert_eq!(record["line"], 3);
}

#[test]
fn enumeration_cap_breach_has_its_own_status() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "bayes.toml",
        "scenarios = 2\nenumeration_cap = 100\n[mdp.random]\nnum_states = 3\nnum_actions = 5\n\
         [prediction]\nhorizon = 3\nnoise = { kind = \"uniform_mix\", eta = 0.1 }\n",
    );
    let out = tmp.path().join("bayes");
    let output = predmdp(&["bayes", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"], "enumeration_budget");
}

#[test]
fn inputs_are_left_untouched() {
    let tmp = TempDir::new().unwrap();
    let mdp = tmp.path().join("two_state.txt");
    fs::copy(manifest_dir().join("data/two_state.txt"), &mdp).unwrap();
    let config = write_config(tmp.path(), "solve.toml", "[mdp.file]\npath = \"two_state.txt\"\n");
    let before = (fs::read(&mdp).unwrap(), fs::read(&config).unwrap());
    run_ok("solve", &config, &tmp.path().join("out"), &[]);
    assert_eq!(before, (fs::read(&mdp).unwrap(), fs::read(&config).unwrap()));
}

#[test]
fn output_directory_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("from-env");
    let status = Command::new(env!("CARGO_BIN_EXE_predmdp"))
        .args(["bound", "--config", manifest_dir().join("configs/bound.toml").to_str().unwrap()])
        .env("PREDMDP_OUT", &out)
        .status()
        .unwrap();
    assert!(status.success());
    for file in ["bound.csv", "bound.json", "budget.json", "run_manifest.json", "config.resolved.json"] {
        assert!(out.join(file).is_file(), "{file}");
    }
}

#[test]
fn offline_bundle_feeds_the_online_stage() {
    let tmp = TempDir::new().unwrap();
    let common = "seed = 5\nepisodes = 30\nepisode_length = 40\n[mdp.random]\nnum_states = 4\nnum_actions = 3\n\
                  [prediction]\nhorizon = 2\npredictable_actions = [0]\n[budget]\nn1 = 50\nn2 = 40\n";
    let offline = write_config(tmp.path(), "offline.toml", &format!("stage = \"offline\"\n{common}"));
    run_ok("bola", &offline, &tmp.path().join("offline"), &[]);
    assert!(tmp.path().join("offline/bundle.json").is_file());
    assert!(!tmp.path().join("offline/returns.csv").exists());

    let online = write_config(
        tmp.path(),
        "online.toml",
        &format!("stage = \"online\"\nbundle = \"offline/bundle.json\"\n{common}"),
    );
    run_ok("bola", &online, &tmp.path().join("online"), &[]);
    let both = write_config(tmp.path(), "both.toml", common);
    run_ok("bola", &both, &tmp.path().join("both"), &[]);

    let returns = fs::read_to_string(tmp.path().join("online/returns.csv")).unwrap();
    assert_eq!(returns.lines().count(), 31);
    assert_eq!(
        fs::read(tmp.path().join("online/learned_value.csv")).unwrap(),
        fs::read(tmp.path().join("both/learned_value.csv")).unwrap()
    );
}

#[test]
fn gen_mdp_writes_loadable_instances() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("gen");
    run_ok("gen-mdp", &manifest_dir().join("configs/gen_mdp.toml"), &out, &[]);
    let index = fs::read_to_string(out.join("mdps.csv")).unwrap();
    assert_eq!(index.lines().count(), 4);
    for i in 0..3 {
        let mdp = predmdp::mdp::text::load_mdp(&out.join(format!("mdp_{i}.txt"))).unwrap();
        assert_eq!((mdp.num_states(), mdp.num_actions()), (10, 5));
    }
}

#[test]
fn sweep_improvement_grows_with_horizon() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "sweep.toml",
        "count = 3\nhorizons = [1, 2, 3]\nscenarios = 100\ntol = 1e-6\nseed = 7\n\
         [mdp]\nnum_states = 6\nnum_actions = 3\n",
    );
    let out = tmp.path().join("sweep");
    run_ok("sweep", &config, &out, &[]);
    let mut reader = csv::Reader::from_path(out.join("curve.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "mean_improvement").unwrap();
    let curve: Vec<f64> = reader.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(curve.len(), 3);
    assert!(curve[0] > 0.0);
    assert!(curve.windows(2).all(|w| w[0] <= w[1]), "{curve:?}");
}

#[test]
fn gen_wind_output_is_ingestible() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("gw");
    run_ok("gen-wind", &manifest_dir().join("configs/gen_wind.toml"), &out, &[]);
    let ds = predmdp::envs::ingest_timeseries(&out.join("wind.csv"), &Default::default()).unwrap();
    assert!(!ds.rows.is_empty());
}
