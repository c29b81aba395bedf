use ethbranch::harness::persist::{read_json, read_rdm_csv, SCHEMA_VERSION};
use ethbranch::harness::pipeline::run_pipeline;
use ethbranch::harness::{sweep, ComparisonReport, ExperimentConfig, SweepKey};
use ethbranch::{Error, Stage};

const SMALL: &str = r#"
seed = 3

[model]
system_energies = [-0.4, 0.4]
h_is = [[0.3, 0.4], [0.4, -0.3]]
coupling = 0.3
system_state = [0.8, 0.6]

[model.environment]
type = "goe"
dim = 128

[analysis]
env_width = 0.6

[dynamics]
t_end = 4.0
output_dt = 0.25
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(SMALL).unwrap()
}

#[test]
fn decoupled_run_matches_exactly() {
    let mut c = small();
    c.model.coupling = 0.0;
    let out = run_pipeline(&c, None).unwrap();
    assert!(out.report.max_trace_distance <= 1e-8, "{}", out.report.max_trace_distance);
    assert!(out.report.passed);
    assert!(out.report.tau_scan.is_empty());
}

#[test]
fn runs_are_deterministic() {
    let c = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&c, Some(a.path())).unwrap();
    run_pipeline(&c, Some(b.path())).unwrap();
    for f in ["meta.json", "eth_stats.json", "f_table.csv", "exact_rdm.csv", "ledger.csv", "me_rdm.csv", "report.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
}

#[test]
fn artifacts_carry_metadata_and_round_trip() {
    let c = small();
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&c, Some(dir.path())).unwrap();
    let (meta, report): (_, ComparisonReport) = read_json(&dir.path().join("report.json")).unwrap();
    assert_eq!(meta.config_hash, c.hash());
    assert_eq!(meta.seed, c.seed);
    assert_eq!(report, out.report);
    let (m, times, rho) = read_rdm_csv(&dir.path().join("exact_rdm.csv")).unwrap();
    assert_eq!(m, meta);
    assert_eq!(times, out.exact.times);
    assert_eq!(rho, out.exact.rho);
    let ledger = std::fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
    assert!(ledger.starts_with(&format!("# schema_version={SCHEMA_VERSION} config_hash={}", c.hash())));
}

#[test]
fn future_schema_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&small(), Some(dir.path())).unwrap();
    let p = dir.path().join("report.json");
    let s = std::fs::read_to_string(&p).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 99");
    std::fs::write(&p, s).unwrap();
    assert!(matches!(read_json::<ComparisonReport>(&p), Err(Error::SchemaVersion { found: 99, .. })));
}

#[test]
fn single_point_sweep_equals_pipeline() {
    let c = small();
    let direct = run_pipeline(&c, None).unwrap().report;
    let s = sweep(&c, SweepKey::Coupling, &[c.model.coupling], &[], 1, None).unwrap();
    assert_eq!(s.rows.len(), 1);
    assert_eq!(s.rows[0].max_trace_distance, direct.max_trace_distance);
    assert_eq!(s.rows[0].config_hash, direct.config_hash);
    assert!(s.lambda_initial.is_none());
}

#[test]
fn sweep_points_get_their_own_directories() {
    let c = small();
    let dir = tempfile::tempdir().unwrap();
    let s = sweep(&c, SweepKey::Seed, &[3.0, 4.0], &[], 2, Some(dir.path())).unwrap();
    assert_eq!(s.rows.len(), 2);
    assert_ne!(s.rows[0].config_hash, s.rows[1].config_hash);
    for r in &s.rows {
        assert!(r.output.as_ref().unwrap().join("report.json").exists());
    }
}

#[test]
fn errors_name_the_failing_stage() {
    let mut c = small();
    c.model.environment = ethbranch::harness::config::EnvironmentConfig::MatrixFiles {
        h_e: "/nonexistent/h_e.bin".into(),
        h_ie: "/nonexistent/h_ie.bin".into(),
    };
    match run_pipeline(&c, None) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, Stage::Build),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("missing matrix files must fail"),
    }
}
