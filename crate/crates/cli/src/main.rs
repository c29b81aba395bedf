use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ethbranch::harness::persist::{f_table_csv, ledger_csv, write_json, write_rdm_csv};
use ethbranch::harness::pipeline::{prepare, run_dephasing, run_pipeline};
use ethbranch::harness::sweep::{sweep, SweepKey};
use ethbranch::harness::ExperimentConfig;
use ethbranch::expansion::fluctuation_report;

#[derive(Parser)]
#[command(name = "ethbranch", version, about = "Environmental-branch master-equation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// ETH statistics of the interaction operator.
    EthStats(Common),
    /// Exact RDM trajectory.
    Evolve(Common),
    /// Slice ledgers of the G terms and the fluctuation report.
    Gterms(Common),
    /// Master-equation trajectory.
    Master(Common),
    /// Pure-dephasing rate against the random-matrix prediction.
    Dephasing(Common),
    /// Parameter sweep declared in the [sweep] section.
    Sweep(Common),
    /// Full pipeline with the exact-vs-master-equation comparison.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to output.dir from the config, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let out = self.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok((cfg, out))
    }
}

/// Whether every configured tolerance was met.
enum Outcome {
    Pass,
    Fail,
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::EthStats(c) => {
            let (cfg, out) = c.load()?;
            let prep = prepare(&cfg)?;
            write_json(&out.join("eth_stats.json"), &prep.meta, &prep.analysis.stats)?;
            std::fs::write(out.join("f_table.csv"), f_table_csv(&prep.meta, &prep.analysis.stats.f_table))?;
            print_json(&prep.eth_summary())?;
            Ok(Outcome::Pass)
        }
        Command::Evolve(c) => {
            let (cfg, out) = c.load()?;
            let prep = prepare(&cfg)?;
            let prop = prep.propagator()?;
            let exact = prep.exact_trajectory(&prop, &prep.output_times()?)?;
            write_rdm_csv(&out.join("exact_rdm.csv"), &prep.meta, &exact.times, &exact.rho)?;
            log::info!("norm drift {:.3e}", exact.norm_drift);
            Ok(if exact.norm_drift <= 1e-10 { Outcome::Pass } else { Outcome::Fail })
        }
        Command::Gterms(c) => {
            let (cfg, out) = c.load()?;
            let prep = prepare(&cfg)?;
            let prop = prep.propagator()?;
            let tau = prep.tau();
            let run = prep.ledgers(&prop, tau, prep.slices_for(tau).max(1))?;
            std::fs::write(out.join("ledger.csv"), ledger_csv(&prep.meta, &run.ledgers))?;
            if run.ledgers.len() >= 16 {
                let rep = fluctuation_report(&run.ledgers, tau, cfg.analysis.ratio_threshold)?;
                write_json(&out.join("fluctuation.json"), &prep.meta, &rep)?;
                print_json(&rep)?;
            } else {
                log::warn!("{} slices are too few for the fluctuation report", run.ledgers.len());
            }
            Ok(Outcome::Pass)
        }
        Command::Master(c) => {
            let (cfg, out) = c.load()?;
            let prep = prepare(&cfg)?;
            let weights = prep.weight_table()?;
            let rho0 = ethbranch::branch::rdm_from_branches(&prep.b0);
            let me = prep.master_trajectory(&weights, prep.tau(), &prep.output_times()?, &rho0)?;
            write_rdm_csv(&out.join("me_rdm.csv"), &prep.meta, &me.times, &me.rho)?;
            write_json(&out.join("weights.json"), &prep.meta, &weights)?;
            log::info!("trace drift {:.3e}, min eigenvalue {:.3e}", me.trace_drift, me.min_eigenvalue);
            Ok(if me.trace_drift <= 1e-9 { Outcome::Pass } else { Outcome::Fail })
        }
        Command::Dephasing(c) => {
            let (cfg, out) = c.load()?;
            let rep = run_dephasing(&cfg, Some(&out))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "pair": rep.pair,
                    "fitted_rate": rep.fitted.rate,
                    "predicted_rate": rep.predicted_rate,
                    "ratio": rep.ratio,
                    "me_analytic_deviation": rep.me_analytic_deviation,
                    "passed": rep.passed,
                }))?
            );
            Ok(if rep.passed { Outcome::Pass } else { Outcome::Fail })
        }
        Command::Sweep(c) => {
            let (cfg, out) = c.load()?;
            let Some(sw) = cfg.sweep.clone() else { bail!("the config has no [sweep] section") };
            let key = SweepKey::parse(&sw.parameter)?;
            let workers = c
                .workers
                .or(sw.workers)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let summary = sweep(&cfg, key, &sw.values, &sw.seeds, workers, Some(&out))?;
            let meta = ethbranch::harness::ArtifactMeta { config_hash: cfg.hash(), seed: cfg.seed };
            write_json(&out.join("sweep_summary.json"), &meta, &summary)?;
            for r in &summary.rows {
                println!("{}={} seed={} max_trace_distance={:.4} passed={}", summary.parameter, r.value, r.seed, r.max_trace_distance, r.passed);
            }
            for (name, fit) in [("initial", &summary.lambda_initial), ("evolved", &summary.lambda_evolved)] {
                if let Some(f) = fit {
                    println!("lambda_{name} = {:.3} ± {:.3}", f.lambda, f.stderr);
                }
            }
            Ok(if summary.all_passed() { Outcome::Pass } else { Outcome::Fail })
        }
        Command::Report(c) => {
            let (cfg, out) = c.load()?;
            let run = run_pipeline(&cfg, Some(Path::new(&out)))?;
            let r = &run.report;
            println!(
                "max_trace_distance={:.4} tolerance={} horizon={:.3} passed={}",
                r.max_trace_distance, r.tolerance, r.horizon, r.passed
            );
            for e in &r.tau_scan {
                println!("tau_scan factor={:.3} tau={:.4} max_trace_distance={:.4}", e.factor, e.tau, e.max_trace_distance);
            }
            Ok(if r.passed { Outcome::Pass } else { Outcome::Fail })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
