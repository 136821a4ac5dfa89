use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_rposterior");
const ENV: &str = "RPOSTERIOR_OUTPUT_DIR";

const SMALL: &str = "seed = 4\nalphas = [0.2]\n\n[model]\ntheta_g = [2.0]\n\n[design]\nn = 12\ncovariates = 0\n\n\
                     [sampler]\nchain_length = 500\nburn_in = 50\n";

fn run(args: &[&str], env: Option<&Path>) -> Output {
    let mut c = Command::new(BIN);
    c.args(args).env_remove(ENV);
    if let Some(d) = env {
        c.env(ENV, d);
    }
    c.output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("c.toml");
    std::fs::write(&p, format!("{extra}{SMALL}")).unwrap();
    p.to_string_lossy().into_owned()
}

fn has_output(dir: &Path) -> bool {
    dir.is_dir() && std::fs::read_dir(dir).unwrap().next().is_some()
}

#[test]
fn output_dir_precedence_is_flag_then_env_then_file() {
    let t = tempfile::tempdir().unwrap();
    let (file, env, flag) = (t.path().join("file"), t.path().join("env"), t.path().join("flag"));
    let cfg = write_config(t.path(), &format!("output_dir = {:?}\n", file.to_str().unwrap()));

    assert!(run(&["sample", "--config", &cfg], None).status.success());
    assert!(has_output(&file));

    assert!(run(&["sample", "--config", &cfg], Some(&env)).status.success());
    assert!(has_output(&env));

    let out = run(&["sample", "--config", &cfg, "--output-dir", flag.to_str().unwrap()], Some(&env));
    assert!(out.status.success());
    assert!(has_output(&flag));
}

#[test]
fn config_errors_exit_with_one() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "bogus_key = 1\n");
    let out = run(&["sample", "--config", &cfg], None);
    assert_eq!(out.status.code(), Some(1));

    let missing_seed = t.path().join("m.toml");
    std::fs::write(&missing_seed, "alphas = [0.1]\n").unwrap();
    let out = run(&["erpe", "--config", missing_seed.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn missing_data_file_exits_with_one() {
    let out = run(&["fit", "/definitely/not/here.csv"], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn efficiency_check_succeeds() {
    let out = run(&["are-table", "--check"], None);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn json_output_carries_provenance() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "");
    let dir = t.path().join("out");
    let out = run(
        &["erpe", "--config", &cfg, "--laplace", "--format", "json", "--output-dir", dir.to_str().unwrap()],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let file = std::fs::read_dir(&dir).unwrap().next().unwrap().unwrap().path();
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(file).unwrap()).unwrap();
    let first = &rows[0];
    assert_eq!(first["seed"], 4);
    assert_eq!(first["alpha"], 0.2);
    assert_eq!(first["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_writes_requested_rows() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "");
    let dest = t.path().join("d.csv");
    let out = run(&["simulate", "--config", &cfg, "--out", dest.to_str().unwrap()], None);
    assert!(out.status.success());
    let mut r = csv::Reader::from_path(&dest).unwrap();
    assert_eq!(r.records().count(), 12);
}
