//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eth::EthParams;
use crate::linalg::{c64, CMat};
use crate::model::ChainParams;

/// Largest environment for a single pipeline run.
pub const MAX_PIPELINE_DIM: usize = 4096;
/// Largest environment inside a sweep.
pub const MAX_SWEEP_DIM: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub dephasing: DephasingConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub system_energies: Vec<f64>,
    /// Real part of H^IS, row-major.
    pub h_is: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_is_imag: Option<Vec<Vec<f64>>>,
    pub coupling: f64,
    /// Initial system amplitudes (normalized on load).
    pub system_state: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_state_imag: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub renormalize: bool,
    pub environment: EnvironmentConfig,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    SpinChain {
        sites: u32,
        #[serde(default = "chain_j")]
        j: f64,
        #[serde(default = "chain_g")]
        g: f64,
        #[serde(default = "chain_h")]
        h: f64,
        #[serde(default = "chain_edge")]
        edge_field: f64,
        #[serde(default)]
        probe_site: Option<usize>,
    },
    Goe {
        dim: usize,
        #[serde(default)]
        variance: Option<f64>,
    },
    /// H^E and H^IE read from binary matrix containers.
    MatrixFiles { h_e: PathBuf, h_ie: PathBuf },
}

fn chain_j() -> f64 {
    ChainParams::default().j
}
fn chain_g() -> f64 {
    ChainParams::default().g
}
fn chain_h() -> f64 {
    ChainParams::default().h
}
fn chain_edge() -> f64 {
    ChainParams::default().edge_field
}

impl EnvironmentConfig {
    /// Dimension when known without reading files.
    pub fn dim(&self) -> Option<usize> {
        match self {
            EnvironmentConfig::SpinChain { sites, .. } => 1usize.checked_shl(*sites),
            EnvironmentConfig::Goe { dim, .. } => Some(*dim),
            EnvironmentConfig::MatrixFiles { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub eth: EthParams,
    /// Probability mass defining each branch energy window.
    pub window_mass: f64,
    /// Threshold standing in for "≫" in the τ condition.
    pub ratio_threshold: f64,
    /// Microcanonical center; defaults to the analysis window center.
    pub env_center: Option<f64>,
    /// Microcanonical width; defaults to a tenth of the analysis window.
    pub env_width: Option<f64>,
    /// System pair whose coherence defines the decay horizon.
    pub pair: [usize; 2],
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            eth: EthParams::default(),
            window_mass: 0.99,
            ratio_threshold: 10.0,
            env_center: None,
            env_width: None,
            pair: [0, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Horizon T.
    pub t_end: f64,
    /// Spacing of the recorded trajectories.
    pub output_dt: f64,
    /// Slice length; defaults to 1/w_f.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Number of slices M; defaults to floor(T/τ).
    #[serde(default)]
    pub slices: Option<usize>,
    /// Master-equation RK4 step.
    #[serde(default = "me_dt")]
    pub me_dt: f64,
    /// Multiples of 1/w_f tried when the comparison fails.
    #[serde(default = "tau_scan")]
    pub tau_scan: Vec<f64>,
}

fn me_dt() -> f64 {
    0.01
}

fn tau_scan() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0, 2.0 * std::f64::consts::PI]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DephasingConfig {
    /// Random-phase environment states averaged in the echo.
    pub draws: usize,
    /// Fit only samples below this fraction of the initial coherence.
    pub fit_upper: f64,
    /// Fit floor in units of |ρ_01(0)|/√M_Γ.
    pub floor_factor: f64,
}

impl Default for DephasingConfig {
    fn default() -> Self {
        DephasingConfig { draws: 4, fit_upper: 0.8, floor_factor: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub trace_distance: f64,
    /// Relative deviation of the fitted dephasing rate from π Δ² f0².
    pub dephasing_rate: f64,
    /// Master equation vs. closed-form dephasing solution.
    pub me_analytic: f64,
    pub partition: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { trace_distance: 0.08, dephasing_rate: 0.25, me_analytic: 1e-8, partition: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: String,
    pub values: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative matrix-file paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        if let EnvironmentConfig::MatrixFiles { h_e, h_ie } = &mut cfg.model.environment {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [h_e, h_ie] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let d = m.system_energies.len();
        if d == 0 {
            return cfg_err("model.system_energies is empty");
        }
        if m.h_is.len() != d || m.h_is.iter().any(|r| r.len() != d) {
            return cfg_err(format!("model.h_is must be {d}x{d}"));
        }
        if let Some(im) = &m.h_is_imag {
            if im.len() != d || im.iter().any(|r| r.len() != d) {
                return cfg_err(format!("model.h_is_imag must be {d}x{d}"));
            }
        }
        if m.system_state.len() != d || m.system_state_imag.as_ref().is_some_and(|v| v.len() != d) {
            return cfg_err(format!("model.system_state must have {d} entries"));
        }
        if self.system_state().is_err() {
            return cfg_err("model.system_state has zero norm");
        }
        if !m.coupling.is_finite() {
            return cfg_err("model.coupling must be finite");
        }
        match &m.environment {
            EnvironmentConfig::SpinChain { sites, .. } => {
                if !(1..=12).contains(sites) {
                    return cfg_err("spin chains need 1 to 12 sites");
                }
            }
            EnvironmentConfig::Goe { dim, variance } => {
                if *dim < 2 {
                    return cfg_err("GOE dimension must be at least 2");
                }
                if variance.is_some_and(|v| !(v > 0.0)) {
                    return cfg_err("GOE variance must be positive");
                }
            }
            EnvironmentConfig::MatrixFiles { .. } => {}
        }
        if let Some(de) = m.environment.dim() {
            if de > MAX_PIPELINE_DIM {
                return cfg_err(format!("d_E = {de} exceeds the cap {MAX_PIPELINE_DIM}"));
            }
        }
        let a = &self.analysis;
        if !(a.window_mass > 0.0 && a.window_mass <= 1.0) {
            return cfg_err("analysis.window_mass must lie in (0, 1]");
        }
        if !(a.ratio_threshold > 0.0) {
            return cfg_err("analysis.ratio_threshold must be positive");
        }
        if a.env_width.is_some_and(|w| !(w > 0.0)) {
            return cfg_err("analysis.env_width must be positive");
        }
        if a.pair[0] >= d || a.pair[1] >= d || a.pair[0] == a.pair[1] {
            return cfg_err("analysis.pair must name two distinct system levels");
        }
        let dy = &self.dynamics;
        if !(dy.t_end > 0.0) || !(dy.output_dt > 0.0) || dy.output_dt > dy.t_end || !(dy.me_dt > 0.0) {
            return cfg_err("dynamics needs 0 < output_dt <= t_end and me_dt > 0");
        }
        if dy.tau.is_some_and(|t| !(t > 0.0)) {
            return cfg_err("dynamics.tau must be positive");
        }
        if let (Some(tau), Some(m)) = (dy.tau, dy.slices) {
            if (m as f64 * tau - dy.t_end).abs() > 1e-12 * dy.t_end.max(1.0) {
                return cfg_err(format!("t_end = {} differs from slices * tau = {}", dy.t_end, m as f64 * tau));
            }
        }
        if dy.tau_scan.iter().any(|x| !(*x > 0.0)) {
            return cfg_err("dynamics.tau_scan entries must be positive");
        }
        let t = &self.tolerances;
        if [t.trace_distance, t.dephasing_rate, t.me_analytic, t.partition].iter().any(|x| !(*x > 0.0)) {
            return cfg_err("all tolerances must be positive");
        }
        let dp = &self.dephasing;
        if dp.draws == 0 || !(dp.fit_upper > 0.0 && dp.fit_upper <= 1.0) || !(dp.floor_factor >= 0.0) {
            return cfg_err("dephasing needs draws >= 1, 0 < fit_upper <= 1, floor_factor >= 0");
        }
        if let Some(s) = &self.sweep {
            super::sweep::SweepKey::parse(&s.parameter)?;
            if s.values.is_empty() {
                return cfg_err("sweep.values is empty");
            }
            if s.workers == Some(0) {
                return cfg_err("sweep.workers must be positive");
            }
        }
        Ok(())
    }

    pub fn h_is(&self) -> CMat {
        let m = &self.model;
        let d = m.system_energies.len();
        CMat::from_fn(d, d, |a, b| c64::new(m.h_is[a][b], m.h_is_imag.as_ref().map_or(0.0, |im| im[a][b])))
    }

    /// Normalized system amplitudes.
    pub fn system_state(&self) -> Result<Vec<c64>> {
        let m = &self.model;
        let v: Vec<c64> = (0..m.system_state.len())
            .map(|k| c64::new(m.system_state[k], m.system_state_imag.as_ref().map_or(0.0, |im| im[k])))
            .collect();
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(n > 0.0) {
            return cfg_err("zero system state");
        }
        Ok(v.into_iter().map(|z| z / n).collect())
    }
}
