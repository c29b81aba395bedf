//! Seeded experiment pipeline: build → diagonalize → ETH statistics →
//! initial state → exact trajectory → slice ledgers → weight table →
//! master equation → comparison.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compare::{compare_trajectories, decay_horizon};
use super::config::{EnvironmentConfig, ExperimentConfig};
use super::persist::{f_table_csv, ledger_csv, write_json, write_rdm_csv, ArtifactMeta};
use crate::branch::{
    branch_energy_window, initial_branches, microcanonical_env_state, rdm_from_branches, BranchModel, BranchSet,
    Propagator,
};
use crate::error::{Error, Result, Stage};
use crate::eth::{analyze_operator, default_half_width, matrix_elements_in_eigenbasis, ElementTable, EthAnalysis, EthStatistics};
use crate::expansion::{build_y_operators, fluctuation_report, split_g_terms, FluctuationReport, GTermLedger, YSplits};
use crate::linalg::{self, c64, diagonalize, max_abs_diff, read_matrix, CMat, SpectralData};
use crate::master::{
    build_weight_table, dephasing_rate, dephasing_solution, fit_decay_rate, integrate_master_equation,
    loschmidt_echo, rmt_rate, tau_rmt, uniform_grid, DecayFit, DephasingSpec, LindbladSpec, MeTrajectory,
    WeightTable,
};
use crate::model::{build_environment, renormalize, ChainParams, EnvironmentKind, EnvironmentSpec, SystemSpec, TotalModel};
use crate::stats::moving_average;

/// Independent seed streams derived from the global seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

const STREAM_ENV_STATE: u64 = 1;
const STREAM_ECHO_DRAWS: u64 = 2;

/// Everything up to and including the initial state.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub meta: ArtifactMeta,
    pub model: TotalModel,
    pub env: SpectralData,
    /// Diagonal function of H^IE at the window center before renormalization.
    pub h0: f64,
    /// Analysis of the (renormalized) H^IE.
    pub analysis: EthAnalysis,
    pub branch_model: BranchModel,
    pub half_width: usize,
    /// Initial amplitudes in the current system basis.
    pub system_state: Vec<c64>,
    pub chi: Vec<c64>,
    pub env_center: f64,
    pub env_width: f64,
    pub b0: BranchSet,
}

fn environment_spec(cfg: &ExperimentConfig) -> Result<EnvironmentSpec> {
    Ok(match &cfg.model.environment {
        EnvironmentConfig::SpinChain { sites, j, g, h, edge_field, probe_site } => EnvironmentSpec {
            kind: EnvironmentKind::SpinChain(ChainParams {
                j: *j,
                g: *g,
                h: *h,
                edge_field: *edge_field,
                probe_site: *probe_site,
            }),
            dim: 1usize << sites,
            seed: cfg.seed,
        },
        EnvironmentConfig::Goe { dim, variance } => {
            EnvironmentSpec { kind: EnvironmentKind::Goe { variance: *variance }, dim: *dim, seed: cfg.seed }
        }
        EnvironmentConfig::MatrixFiles { h_e, h_ie } => {
            let he = read_matrix(std::io::BufReader::new(std::fs::File::open(h_e)?))?;
            let hie = read_matrix(std::io::BufReader::new(std::fs::File::open(h_ie)?))?;
            EnvironmentSpec { dim: he.nrows(), kind: EnvironmentKind::Explicit { h_e: he, h_ie: hie }, seed: cfg.seed }
        }
    })
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let meta = ArtifactMeta { config_hash: config.hash(), seed: config.seed };

    let (system, h_e, h_ie) = (|| {
        let system = SystemSpec::new(config.model.system_energies.clone(), config.h_is())?;
        let (h_e, h_ie) = build_environment(&environment_spec(config)?)?;
        if h_e.nrows() > super::config::MAX_PIPELINE_DIM {
            return Err(Error::Config(format!("d_E = {} exceeds the pipeline cap", h_e.nrows())));
        }
        Ok((system, h_e, h_ie))
    })()
    .map_err(|e| e.at(Stage::Build))?;
    let model = TotalModel::new(system, h_e, h_ie, config.model.coupling).map_err(|e| e.at(Stage::Build))?;

    let env = diagonalize(&model.h_e).map_err(|e| e.at(Stage::Diagonalize))?;

    let (model, h0, analysis, v) = (|| {
        let params = &config.analysis.eth;
        let table = matrix_elements_in_eigenbasis(&model.h_ie, &env)?;
        let (h0, table) = if config.model.renormalize {
            let mut quick = params.clone();
            quick.h2_from_f = false;
            let h0 = analyze_operator(&table, &quick)?.stats.o0;
            let mut o = table.o_eig;
            for i in 0..o.nrows() {
                o[(i, i)] -= c64::new(h0, 0.0);
            }
            (h0, ElementTable { energies: table.energies, o_eig: o })
        } else {
            (0.0, table)
        };
        let analysis = analyze_operator(&table, params)?;
        let model = if config.model.renormalize { renormalize(&model, h0)? } else { model.clone() };
        Ok((model, h0, analysis, table.o_eig))
    })()
    .map_err(|e: Error| e.at(Stage::EthStats))?;

    let half_width = config.analysis.eth.half_width.unwrap_or_else(|| default_half_width(env.dim()));
    let branch_model = BranchModel::from_parts(
        model.system.energies.clone(),
        linalg::scale(&model.system.h_is, c64::new(model.coupling, 0.0)),
        env.eigenvalues.clone(),
        v,
    )
    .map_err(|e| e.at(Stage::Build))?;

    let w = &analysis.stats.window;
    let env_center = config.analysis.env_center.unwrap_or_else(|| w.center());
    let env_width = config.analysis.env_width.unwrap_or(0.1 * (w.e_max - w.e_min));
    let (system_state, chi, b0) = (|| {
        let user = config.system_state()?;
        let f = &model.system.frame;
        let d = user.len();
        let sys: Vec<c64> = (0..d).map(|a| (0..d).map(|k| f[(k, a)].conj() * user[k]).sum()).collect();
        let chi = microcanonical_env_state(&env.eigenvalues, env_center, env_width, derive_seed(config.seed, STREAM_ENV_STATE))?;
        let b0 = initial_branches(&sys, &chi)?;
        Ok((sys, chi, b0))
    })()
    .map_err(|e: Error| e.at(Stage::InitialState))?;

    Ok(Prepared {
        config: config.clone(),
        meta,
        model,
        env,
        h0,
        analysis,
        branch_model,
        half_width,
        system_state,
        chi,
        env_center,
        env_width,
        b0,
    })
}

#[derive(Debug, Clone)]
pub struct ExactTrajectory {
    pub times: Vec<f64>,
    pub rho: Vec<CMat>,
    /// max |‖Ψ(t)‖² − 1|.
    pub norm_drift: f64,
}

impl Prepared {
    pub fn output_times(&self) -> Result<Vec<f64>> {
        let d = &self.config.dynamics;
        uniform_grid(d.t_end, d.output_dt)
    }

    pub fn propagator(&self) -> Result<Propagator> {
        Propagator::new(&self.branch_model).map_err(|e| e.at(Stage::ExactDynamics))
    }

    pub fn exact_trajectory(&self, prop: &Propagator, times: &[f64]) -> Result<ExactTrajectory> {
        let sets = prop.propagate_many(&self.b0, times).map_err(|e| e.at(Stage::ExactDynamics))?;
        let norm_drift = sets.iter().map(|b| (b.global_norm() - 1.0).abs()).fold(0.0, f64::max);
        Ok(ExactTrajectory { times: times.to_vec(), rho: sets.iter().map(rdm_from_branches).collect(), norm_drift })
    }

    /// Slice length: configured, or 1/w_f.
    pub fn tau(&self) -> f64 {
        self.config.dynamics.tau.unwrap_or(1.0 / self.analysis.stats.w_f)
    }

    pub fn slices_for(&self, tau: f64) -> usize {
        match (self.config.dynamics.slices, self.config.dynamics.tau) {
            (Some(m), Some(t)) if t == tau => m,
            _ => (self.config.dynamics.t_end / tau + 1e-9).floor() as usize,
        }
    }

    /// Ledgers at t_m = mτ, m = 0..slices, with every partition identity
    /// checked against the configured tolerance.
    pub fn ledgers(&self, prop: &Propagator, tau: f64, slices: usize) -> Result<LedgerRun> {
        (|| {
            let bm = &self.branch_model;
            let ys = build_y_operators(bm);
            let splits = YSplits::fit(&ys, &bm.env, &self.analysis.stats.window, self.half_width)?;
            let times: Vec<f64> = (0..slices).map(|m| m as f64 * tau).collect();
            let sets = prop.propagate_many(&self.b0, &times)?;
            let tol = self.config.tolerances.partition;
            let ledgers: Vec<GTermLedger> =
                sets.par_iter().map(|b| split_g_terms(b, bm, &ys, &splits)).collect::<Result<_>>()?;
            let mut max_defect: f64 = 0.0;
            let mut split_defect: f64 = 0.0;
            for led in &ledgers {
                split_defect = split_defect.max(led.split_defect);
                max_defect = max_defect.max(led.eta_defect).max(led.l_defect).max(led.structural_residual);
                if max_defect > tol || split_defect > tol {
                    return Err(Error::Numerical(format!(
                        "partition identity violated at t = {}: ledger {max_defect:.3e}, ETH split {split_defect:.3e}",
                        led.t
                    )));
                }
            }
            Ok(LedgerRun { tau, ledgers, max_defect, split_defect, y3_defect: ys.y3_defect })
        })()
        .map_err(|e: Error| e.at(Stage::Ledger))
    }

    /// h^IE2 at energy e: the moving-averaged diagonal of (H^IE)².
    pub fn h2_at(&self, e: f64) -> f64 {
        match &self.analysis.stats.h_ie2 {
            Some(p) => p.direct_at(e),
            None => {
                let v = &self.branch_model.v;
                let n = v.nrows();
                let rows: Vec<f64> = (0..n).map(|i| (0..n).map(|j| v[(i, j)].norm_sqr()).sum()).collect();
                crate::stats::interp(&self.env.eigenvalues, &moving_average(&rows, self.half_width), e)
            }
        }
    }

    pub fn weight_table(&self) -> Result<WeightTable> {
        let w = branch_energy_window(&self.b0, &self.env.eigenvalues, self.config.analysis.window_mass)
            .map_err(|e| e.at(Stage::WeightTable))?;
        let profile = self.h2_profile();
        Ok(build_weight_table(|e| crate::stats::interp(&self.env.eigenvalues, &profile, e), &w))
    }

    fn h2_profile(&self) -> Vec<f64> {
        match &self.analysis.stats.h_ie2 {
            Some(p) => p.level_direct.clone(),
            None => self.env.eigenvalues.iter().map(|&e| self.h2_at(e)).collect(),
        }
    }

    pub fn master_trajectory(&self, weights: &WeightTable, tau: f64, times: &[f64], rho0: &CMat) -> Result<MeTrajectory> {
        (|| {
            let bm = &self.branch_model;
            let spec = LindbladSpec::new(bm.e_s.clone(), bm.h.clone(), weights.values.clone(), tau)?;
            integrate_master_equation(&spec, rho0, times, self.config.dynamics.me_dt)
        })()
        .map_err(|e: Error| e.at(Stage::MasterEquation))
    }
}

pub struct LedgerRun {
    pub tau: f64,
    pub ledgers: Vec<GTermLedger>,
    pub max_defect: f64,
    pub split_defect: f64,
    pub y3_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EthSummary {
    pub d_e: usize,
    pub h0: f64,
    pub o0: f64,
    pub w_f: f64,
    pub f0: f64,
    pub w_f_no_decay: bool,
    pub beta: f64,
    pub spectral_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauScanEntry {
    /// τ in units of 1/w_f.
    pub factor: f64,
    pub tau: f64,
    pub max_trace_distance: f64,
    pub me_rate: Option<f64>,
    pub fluctuation: Option<FluctuationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub seed: u64,
    pub eth: EthSummary,
    pub tau: f64,
    pub slices: usize,
    pub times: Vec<f64>,
    pub trace_distance: Vec<f64>,
    /// Time at which the exact coherence fell to 1/e of its start value.
    pub horizon: f64,
    pub horizon_reached: bool,
    pub max_trace_distance: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub exact_rate: Option<DecayFit>,
    pub me_rate: Option<DecayFit>,
    /// (τ w/2) Δ² for a nondissipative coupling.
    pub predicted_rate: Option<f64>,
    pub weight_table: WeightTable,
    pub fluctuation: Option<FluctuationReport>,
    pub tau_scan: Vec<TauScanEntry>,
    pub norm_drift: f64,
    pub ledger_defect: f64,
    pub split_defect: f64,
    pub me_trace_drift: f64,
    pub me_min_eigenvalue: f64,
}

impl Prepared {
    pub fn eth_summary(&self) -> EthSummary {
        let s = &self.analysis.stats;
        EthSummary {
            d_e: self.env.dim(),
            h0: self.h0,
            o0: s.o0,
            w_f: s.w_f,
            f0: s.f0,
            w_f_no_decay: s.w_f_no_decay,
            beta: s.beta,
            spectral_range: self.env.spectral_range(),
        }
    }
}

fn coherence(times: &[f64], rho: &[CMat], pair: [usize; 2], horizon: f64) -> Option<DecayFit> {
    let mags: Vec<f64> = rho.iter().map(|r| r[(pair[0], pair[1])].norm()).collect();
    let n = times.iter().take_while(|&&t| t <= horizon).count();
    fit_decay_rate(&times[..n], &mags[..n], 1.0, 0.0).ok()
}

fn max_until(td: &[f64], times: &[f64], horizon: f64) -> f64 {
    td.iter().zip(times).filter(|(_, &t)| t <= horizon).map(|(d, _)| *d).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: ExperimentConfig,
    pub d_s: usize,
    pub d_e: usize,
    pub version: String,
}

/// Artifacts of one pipeline run.
pub struct PipelineOutput {
    pub prepared: Prepared,
    pub exact: ExactTrajectory,
    pub ledgers: LedgerRun,
    pub me: MeTrajectory,
    pub report: ComparisonReport,
}

fn persist<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at(Stage::Persist))
}

/// Runs every stage; when `out` is given each artifact is written as soon as
/// it exists, so a failure leaves the earlier ones in place.
pub fn run_pipeline(config: &ExperimentConfig, out: Option<&Path>) -> Result<PipelineOutput> {
    if let Some(dir) = out {
        persist(std::fs::create_dir_all(dir).map_err(Error::from))?;
    }
    let prep = prepare(config)?;
    let meta = prep.meta.clone();
    if let Some(dir) = out {
        let rm = RunMeta {
            config: config.clone(),
            d_s: prep.branch_model.d_s(),
            d_e: prep.env.dim(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        persist(write_json(&dir.join("meta.json"), &meta, &rm))?;
        persist(write_json(&dir.join("eth_stats.json"), &meta, &prep.analysis.stats))?;
        persist(std::fs::write(dir.join("f_table.csv"), f_table_csv(&meta, &prep.analysis.stats.f_table)).map_err(Error::from))?;
    }

    let times = prep.output_times().map_err(|e| e.at(Stage::ExactDynamics))?;
    let prop = prep.propagator()?;
    let exact = prep.exact_trajectory(&prop, &times)?;
    if let Some(dir) = out {
        persist(write_rdm_csv(&dir.join("exact_rdm.csv"), &meta, &exact.times, &exact.rho))?;
    }

    let tau = prep.tau();
    let slices = prep.slices_for(tau).max(1);
    let ledgers = prep.ledgers(&prop, tau, slices)?;
    if let Some(dir) = out {
        persist(std::fs::write(dir.join("ledger.csv"), ledger_csv(&meta, &ledgers.ledgers)).map_err(Error::from))?;
    }
    let threshold = config.analysis.ratio_threshold;
    let fluctuation = (slices >= 16)
        .then(|| fluctuation_report(&ledgers.ledgers, tau, threshold))
        .transpose()
        .map_err(|e| e.at(Stage::Ledger))?;

    let weights = prep.weight_table()?;
    let me = prep.master_trajectory(&weights, tau, &times, &exact.rho[0])?;
    if let Some(dir) = out {
        persist(write_rdm_csv(&dir.join("me_rdm.csv"), &meta, &me.times, &me.rho))?;
    }

    let report = (|| {
        let pair = config.analysis.pair;
        let td = compare_trajectories(&exact.times, &exact.rho, &me.times, &me.rho)?;
        let h = decay_horizon(&exact.times, &exact.rho, pair[0], pair[1]);
        let horizon = h.unwrap_or(config.dynamics.t_end);
        let max_td = max_until(&td, &times, horizon);
        let tol = config.tolerances.trace_distance;
        let passed = max_td <= tol;
        let bm = &prep.branch_model;
        let predicted_rate = bm.is_dephasing().then(|| {
            let delta = bm.h[(pair[1], pair[1])].re - bm.h[(pair[0], pair[0])].re;
            0.5 * tau * weights.values[pair[0]][pair[1]] * delta * delta
        });
        let tau_scan = if passed { Vec::new() } else { tau_scan(&prep, &prop, &weights, &exact, horizon)? };
        Ok(ComparisonReport {
            config_hash: meta.config_hash.clone(),
            seed: meta.seed,
            eth: prep.eth_summary(),
            tau,
            slices,
            times: times.clone(),
            trace_distance: td,
            horizon,
            horizon_reached: h.is_some(),
            max_trace_distance: max_td,
            tolerance: tol,
            passed,
            exact_rate: coherence(&exact.times, &exact.rho, pair, horizon),
            me_rate: coherence(&me.times, &me.rho, pair, horizon),
            predicted_rate,
            weight_table: weights.clone(),
            fluctuation,
            tau_scan,
            norm_drift: exact.norm_drift,
            ledger_defect: ledgers.max_defect,
            split_defect: ledgers.split_defect,
            me_trace_drift: me.trace_drift,
            me_min_eigenvalue: me.min_eigenvalue,
        })
    })()
    .map_err(|e: Error| e.at(Stage::Compare))?;
    if let Some(dir) = out {
        persist(write_json(&dir.join("report.json"), &meta, &report))?;
    }
    Ok(PipelineOutput { prepared: prep, exact, ledgers, me, report })
}

/// Re-runs the master equation and the slice statistics for each configured
/// multiple of 1/w_f.
fn tau_scan(
    prep: &Prepared,
    prop: &Propagator,
    weights: &WeightTable,
    exact: &ExactTrajectory,
    horizon: f64,
) -> Result<Vec<TauScanEntry>> {
    let w_f = prep.analysis.stats.w_f;
    let pair = prep.config.analysis.pair;
    prep.config
        .dynamics
        .tau_scan
        .iter()
        .map(|&factor| {
            let tau = factor / w_f;
            let me = prep.master_trajectory(weights, tau, &exact.times, &exact.rho[0])?;
            let td = compare_trajectories(&exact.times, &exact.rho, &me.times, &me.rho)?;
            let slices = (prep.config.dynamics.t_end / tau + 1e-9).floor() as usize;
            let fluctuation = if slices >= 16 {
                let run = prep.ledgers(prop, tau, slices)?;
                Some(fluctuation_report(&run.ledgers, tau, prep.config.analysis.ratio_threshold)?)
            } else {
                None
            };
            Ok(TauScanEntry {
                factor,
                tau,
                max_trace_distance: max_until(&td, &exact.times, horizon),
                me_rate: coherence(&me.times, &me.rho, pair, horizon).map(|f| f.rate),
                fluctuation,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DephasingReport {
    pub config_hash: String,
    pub seed: u64,
    pub pair: [usize; 2],
    pub delta: f64,
    pub f0: f64,
    /// ΔE, the environment spectral range, used as w_f.
    pub delta_e: f64,
    pub tau_rmt: f64,
    pub m_gamma: usize,
    pub times: Vec<f64>,
    /// |ρ_ab(t)| averaged over the random-phase draws.
    pub coherence: Vec<f64>,
    pub fit_floor: f64,
    pub fitted: DecayFit,
    /// π Δ² f0².
    pub predicted_rate: f64,
    /// (g/2) Δ² with g = ΔE f0² τ_RMT.
    pub me_rate: f64,
    pub ratio: f64,
    pub rate_tolerance: f64,
    pub rate_passed: bool,
    /// max over the grid of |ρ_ME − closed form|.
    pub me_analytic_deviation: f64,
    pub me_tolerance: f64,
    pub me_passed: bool,
    pub passed: bool,
}

/// Exact Loschmidt-echo decay against π Δ² f0², plus the master equation
/// with τ = 2π/ΔE and w_f = ΔE against its closed form.
pub fn run_dephasing(config: &ExperimentConfig, out: Option<&Path>) -> Result<DephasingReport> {
    if let Some(dir) = out {
        persist(std::fs::create_dir_all(dir).map_err(Error::from))?;
    }
    let prep = prepare(config)?;
    let bm = &prep.branch_model;
    if !bm.is_dephasing() {
        return Err(Error::Config("the dephasing run needs a diagonal H_IS".into()).at(Stage::Build));
    }
    let pair = config.analysis.pair;
    let (a, b) = (pair[0], pair[1]);
    let times = prep.output_times().map_err(|e| e.at(Stage::ExactDynamics))?;

    let (coh, m_gamma) = (|| {
        let mut acc = vec![0.0; times.len()];
        let draws = config.dephasing.draws;
        for k in 0..draws {
            let chi = if k == 0 {
                prep.chi.clone()
            } else {
                let s = derive_seed(config.seed, STREAM_ECHO_DRAWS).wrapping_add(k as u64);
                microcanonical_env_state(&prep.env.eigenvalues, prep.env_center, prep.env_width, s)?
            };
            let series = loschmidt_echo(bm, &prep.system_state, &chi, &times)?;
            for (x, r) in acc.iter_mut().zip(&series) {
                *x += r[(a, b)].norm() / draws as f64;
            }
        }
        let w = branch_energy_window(&prep.b0, &prep.env.eigenvalues, config.analysis.window_mass)?;
        Ok((acc, w.m_gamma))
    })()
    .map_err(|e: Error| e.at(Stage::ExactDynamics))?;
    if let Some(dir) = out {
        let exact = (|| {
            let series = loschmidt_echo(bm, &prep.system_state, &prep.chi, &times)?;
            write_rdm_csv(&dir.join("exact_rdm.csv"), &prep.meta, &times, &series)
        })();
        persist(exact)?;
    }

    let s = &prep.analysis.stats;
    let delta = bm.h[(b, b)].re - bm.h[(a, a)].re;
    let delta_e = prep.env.spectral_range();
    let tau = tau_rmt(delta_e).map_err(|e| e.at(Stage::MasterEquation))?;
    let fit_floor = config.dephasing.floor_factor * coh[0] / (m_gamma as f64).sqrt();
    let fitted =
        fit_decay_rate(&times, &coh, config.dephasing.fit_upper, fit_floor).map_err(|e| e.at(Stage::Compare))?;
    let predicted_rate = rmt_rate(delta, s.f0);

    let (me_rate, dev) = (|| {
        let w = delta_e * s.f0 * s.f0;
        let spec = LindbladSpec::uniform(bm.e_s.clone(), bm.h.clone(), w, tau)?;
        let rho0 = rdm_from_branches(&prep.b0);
        let me = integrate_master_equation(&spec, &rho0, &times, config.dynamics.me_dt)?;
        let hd: Vec<f64> = (0..bm.d_s()).map(|k| bm.h[(k, k)].re).collect();
        let ds = DephasingSpec::from_eth(&hd, delta_e, s.f0, tau)?;
        let dev = times
            .iter()
            .zip(&me.rho)
            .map(|(&t, r)| max_abs_diff(r, &dephasing_solution(&bm.e_s, &rho0, &ds, t)))
            .fold(0.0, f64::max);
        if let Some(dir) = out {
            write_rdm_csv(&dir.join("me_rdm.csv"), &prep.meta, &me.times, &me.rho)?;
        }
        Ok((dephasing_rate(&ds, a, b)?, dev))
    })()
    .map_err(|e: Error| e.at(Stage::MasterEquation))?;

    let ratio = fitted.rate / predicted_rate;
    let rate_passed = (ratio - 1.0).abs() <= config.tolerances.dephasing_rate;
    let me_passed = dev <= config.tolerances.me_analytic;
    let report = DephasingReport {
        config_hash: prep.meta.config_hash.clone(),
        seed: config.seed,
        pair,
        delta,
        f0: s.f0,
        delta_e,
        tau_rmt: tau,
        m_gamma,
        times,
        coherence: coh,
        fit_floor,
        fitted,
        predicted_rate,
        me_rate,
        ratio,
        rate_tolerance: config.tolerances.dephasing_rate,
        rate_passed,
        me_analytic_deviation: dev,
        me_tolerance: config.tolerances.me_analytic,
        me_passed,
        passed: rate_passed && me_passed,
    };
    if let Some(dir) = out {
        persist(write_json(&dir.join("report.json"), &prep.meta, &report))?;
    }
    Ok(report)
}

/// ETH statistics only.
pub fn run_eth_stats(config: &ExperimentConfig) -> Result<(Prepared, EthStatistics)> {
    let prep = prepare(config)?;
    let stats = prep.analysis.stats.clone();
    Ok((prep, stats))
}
