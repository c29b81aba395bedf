use std::path::Path;
use std::process::{Command, Output};

const DECOUPLED: &str = r#"
seed = 2

[model]
system_energies = [-0.4, 0.4]
h_is = [[0.3, 0.4], [0.4, -0.3]]
coupling = 0.0
system_state = [0.8, 0.6]

[model.environment]
type = "goe"
dim = 128

[analysis]
env_width = 0.6

[dynamics]
t_end = 2.0
output_dt = 0.25
"#;

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ethbranch")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

#[test]
fn report_passes_without_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DECOUPLED);
    let out = dir.path().join("out");
    let o = run(&["report", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("passed=true"));
    for f in ["meta.json", "exact_rdm.csv", "ledger.csv", "me_rdm.csv", "report.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn tolerance_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let body = DECOUPLED.replace("coupling = 0.0", "coupling = 0.4") + "\n[tolerances]\ntrace_distance = 1e-9\n";
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = run(&["report", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("tau_scan"));
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &DECOUPLED.replace("t_end", "t_finish"));
    let o = run(&["evolve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let o = run(&["evolve", "--config", "/nonexistent.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DECOUPLED);
    let out = dir.path().join("out");
    let o = run(&["evolve", "--config", cfg.to_str().unwrap(), "--seed", "77", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("exact_rdm.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with("seed=77"));
}

#[test]
fn subcommands_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &DECOUPLED.replace("coupling = 0.0", "coupling = 0.2"));
    let c = cfg.to_str().unwrap();
    for (cmd, file) in [("eth-stats", "f_table.csv"), ("gterms", "ledger.csv"), ("master", "me_rdm.csv")] {
        let out = dir.path().join(cmd);
        let o = run(&[cmd, "--config", c, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(file).exists(), "{cmd} did not write {file}");
    }
}

#[test]
fn sweep_requires_a_sweep_section() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DECOUPLED);
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let body = format!("{DECOUPLED}\n[sweep]\nparameter = \"seed\"\nvalues = [1, 2]\n");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("sweep");
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("sweep_summary.json").exists());
}
