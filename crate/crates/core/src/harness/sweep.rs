//! Parameter sweeps over independent pipeline runs.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EnvironmentConfig, ExperimentConfig, MAX_SWEEP_DIM};
use super::pipeline::run_pipeline;
use crate::branch::{measure_lambda_scaling, LambdaFit, LambdaMode, LambdaScalingSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKey {
    #[serde(rename = "d_E")]
    EnvDim,
    Coupling,
    Tau,
    Seed,
}

impl SweepKey {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "d_E" | "d_e" | "dim" => Ok(SweepKey::EnvDim),
            "coupling" => Ok(SweepKey::Coupling),
            "tau" => Ok(SweepKey::Tau),
            "seed" => Ok(SweepKey::Seed),
            other => Err(Error::Config(format!("unknown sweep parameter `{other}` (expected d_E, coupling, tau or seed)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepKey::EnvDim => "d_E",
            SweepKey::Coupling => "coupling",
            SweepKey::Tau => "tau",
            SweepKey::Seed => "seed",
        }
    }

    /// Config for one sweep point.
    pub fn apply(&self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        c.sweep = None;
        match self {
            SweepKey::EnvDim => {
                let d = as_count(value)?;
                if d > MAX_SWEEP_DIM {
                    return Err(Error::Config(format!("sweep d_E = {d} exceeds the cap {MAX_SWEEP_DIM}")));
                }
                match &mut c.model.environment {
                    EnvironmentConfig::Goe { dim, .. } => *dim = d,
                    EnvironmentConfig::SpinChain { sites, .. } => {
                        if !d.is_power_of_two() {
                            return Err(Error::Config(format!("spin-chain d_E must be a power of two, got {d}")));
                        }
                        *sites = d.trailing_zeros();
                    }
                    EnvironmentConfig::MatrixFiles { .. } => {
                        return Err(Error::Config("cannot sweep d_E for matrix-file environments".into()))
                    }
                }
            }
            SweepKey::Coupling => c.model.coupling = value,
            SweepKey::Tau => {
                c.dynamics.tau = Some(value);
                c.dynamics.slices = None;
            }
            SweepKey::Seed => c.seed = as_count(value)? as u64,
        }
        c.validate()?;
        Ok(c)
    }
}

fn as_count(v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53) {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("expected a nonnegative integer, got {v}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub config_hash: String,
    pub d_e: usize,
    pub tau: f64,
    pub w_f: f64,
    pub f0: f64,
    pub max_trace_distance: f64,
    pub passed: bool,
    pub exact_rate: Option<f64>,
    pub me_rate: Option<f64>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub parameter: String,
    pub rows: Vec<SweepRow>,
    /// λ at t = 0 and after evolution, for d_E sweeps of GOE environments.
    pub lambda_initial: Option<LambdaFit>,
    pub lambda_evolved: Option<LambdaFit>,
}

impl SweepSummary {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

/// Runs every (value, seed) point on a pool of `workers` threads. Each point
/// writes into its own subdirectory of `out`.
pub fn sweep(config: &ExperimentConfig, key: SweepKey, values: &[f64], seeds: &[u64], workers: usize, out: Option<&Path>) -> Result<SweepSummary> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let seeds: Vec<u64> = if seeds.is_empty() || key == SweepKey::Seed { vec![config.seed] } else { seeds.to_vec() };
    let mut points = Vec::new();
    for &v in values {
        for &s in &seeds {
            let mut base = config.clone();
            base.seed = s;
            points.push((v, key.apply(&base, v)?));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let rows = pool.install(|| {
        points
            .par_iter()
            .map(|(v, c)| {
                let dir = out.map(|o| o.join(format!("{}={}", key.name(), v)).join(format!("seed={}", c.seed)));
                let run = run_pipeline(c, dir.as_deref())?;
                let r = &run.report;
                Ok(SweepRow {
                    value: *v,
                    seed: c.seed,
                    config_hash: r.config_hash.clone(),
                    d_e: r.eth.d_e,
                    tau: r.tau,
                    w_f: r.eth.w_f,
                    f0: r.eth.f0,
                    max_trace_distance: r.max_trace_distance,
                    passed: r.passed,
                    exact_rate: r.exact_rate.as_ref().map(|f| f.rate),
                    me_rate: r.me_rate.as_ref().map(|f| f.rate),
                    output: dir,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let (lambda_initial, lambda_evolved) = match (&config.model.environment, key) {
        (EnvironmentConfig::Goe { .. }, SweepKey::EnvDim) if values.len() >= 3 && seeds.len() >= 5 => {
            let spec = lambda_spec(config, values, &seeds)?;
            let i = pool.install(|| measure_lambda_scaling(&spec, LambdaMode::Initial))?;
            let e = pool.install(|| measure_lambda_scaling(&spec, LambdaMode::Evolved))?;
            (Some(i), Some(e))
        }
        _ => (None, None),
    };
    Ok(SweepSummary { parameter: key.name().to_string(), rows, lambda_initial, lambda_evolved })
}

fn lambda_spec(config: &ExperimentConfig, values: &[f64], seeds: &[u64]) -> Result<LambdaScalingSpec> {
    let m = &config.model;
    let state = config.system_state()?;
    if state.iter().any(|z| z.im != 0.0) || m.h_is_imag.is_some() {
        return Err(Error::Config("λ measurement supports real system data only".into()));
    }
    Ok(LambdaScalingSpec {
        sizes: values.iter().map(|&v| as_count(v)).collect::<Result<_>>()?,
        seeds: seeds.to_vec(),
        e_s: m.system_energies.clone(),
        h_is: m.h_is.clone(),
        coupling: m.coupling,
        system_state: state.iter().map(|z| z.re).collect(),
        center: config.analysis.env_center.unwrap_or(0.0),
        time: config.dynamics.t_end,
        mass: config.analysis.window_mass,
        ..LambdaScalingSpec::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_parse() {
        assert_eq!(SweepKey::parse("d_E").unwrap(), SweepKey::EnvDim);
        assert_eq!(SweepKey::parse("tau").unwrap(), SweepKey::Tau);
        assert!(matches!(SweepKey::parse("temperature"), Err(Error::Config(_))));
    }

    #[test]
    fn counts_must_be_integers() {
        assert_eq!(as_count(256.0).unwrap(), 256);
        assert!(as_count(2.5).is_err());
        assert!(as_count(-1.0).is_err());
    }
}
