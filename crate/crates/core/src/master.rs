//! Weighted Lindblad equation, its pure-dephasing solution and the
//! Loschmidt-echo reference.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::branch::{BranchModel, EnergyWindow};
use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::{self, c64, diagonalize, hermitian_defect, trace, CMat, SpectralData, I};
use crate::stats::linear_fit;

/// Generator data: system energies, jump operator (coupling included),
/// h^IE2 weight table and slice length.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladSpec {
    pub e_s: Vec<f64>,
    pub h: CMat,
    pub weights: Vec<Vec<f64>>,
    pub tau: f64,
}

impl LindbladSpec {
    pub fn new(e_s: Vec<f64>, h: CMat, weights: Vec<Vec<f64>>, tau: f64) -> Result<Self> {
        let d = e_s.len();
        if h.nrows() != d || h.ncols() != d || weights.len() != d || weights.iter().any(|r| r.len() != d) {
            return dim_err("Lindblad data dimensions disagree");
        }
        if hermitian_defect(&h) > 1e-12 {
            return invalid("jump operator is not Hermitian");
        }
        for a in 0..d {
            for b in 0..d {
                if weights[a][b] != weights[b][a] || !(weights[a][b] >= 0.0) {
                    return invalid("weight table must be symmetric and nonnegative");
                }
            }
        }
        if !(tau >= 0.0) || !tau.is_finite() {
            return invalid(format!("τ must be finite and nonnegative, got {tau}"));
        }
        Ok(LindbladSpec { e_s, h, weights, tau })
    }

    pub fn uniform(e_s: Vec<f64>, h: CMat, weight: f64, tau: f64) -> Result<Self> {
        let d = e_s.len();
        Self::new(e_s, h, vec![vec![weight; d]; d], tau)
    }

    pub fn dim(&self) -> usize {
        self.e_s.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub values: Vec<Vec<f64>>,
    /// Pairs whose windows do not overlap; their entry uses the union center.
    pub flagged: Vec<(usize, usize)>,
}

/// Entry (α, β) = h^IE2 at the center of Γ_α ∩ Γ_β.
pub fn build_weight_table(h2: impl Fn(f64) -> f64, windows: &EnergyWindow) -> WeightTable {
    let d = windows.per_branch.len();
    let mut values = vec![vec![0.0; d]; d];
    let mut flagged = Vec::new();
    for a in 0..d {
        for b in a..d {
            let e = match windows.pair_interval(a, b) {
                Some((lo, hi)) => 0.5 * (lo + hi),
                None => {
                    log::warn!("branch windows {a} and {b} do not overlap; using the union center");
                    flagged.push((a, b));
                    windows.center()
                }
            };
            let w = h2(e);
            values[a][b] = w;
            values[b][a] = w;
        }
    }
    WeightTable { values, flagged }
}

/// ρ̃_αβ = τ w_αβ ρ_αβ.
pub fn weighted_rdm(rho: &CMat, spec: &LindbladSpec) -> Result<CMat> {
    let d = spec.dim();
    if rho.nrows() != d || rho.ncols() != d {
        return dim_err("ρ does not match the Lindblad spec");
    }
    Ok(CMat::from_fn(d, d, |a, b| rho[(a, b)] * (spec.tau * spec.weights[a][b])))
}

/// i[ρ, H_S] + h ρ̃ h − ½{ρ̃, h²}.
pub fn lindblad_rhs(rho: &CMat, spec: &LindbladSpec) -> Result<CMat> {
    let rt = weighted_rdm(rho, spec)?;
    let h = &spec.h;
    let h2 = h * h;
    let diss = h * &rt * h - linalg::scale(&(&rt * &h2 + &h2 * &rt), c64::new(0.5, 0.0));
    let e = &spec.e_s;
    Ok(CMat::from_fn(spec.dim(), spec.dim(), |a, b| I * (e[b] - e[a]) * rho[(a, b)] + diss[(a, b)]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeTrajectory {
    pub times: Vec<f64>,
    pub rho: Vec<CMat>,
    /// max |tr ρ(t) − tr ρ(0)|.
    pub trace_drift: f64,
    /// Largest anti-Hermitian part removed by re-symmetrization.
    pub hermiticity_drift: f64,
    /// Smallest eigenvalue seen at the recorded times.
    pub min_eigenvalue: f64,
}

fn rk4_step(rho: &CMat, spec: &LindbladSpec, dt: f64) -> Result<CMat> {
    let sc = |m: &CMat, s: f64| linalg::scale(m, c64::new(s, 0.0));
    let k1 = lindblad_rhs(rho, spec)?;
    let k2 = lindblad_rhs(&(rho + sc(&k1, 0.5 * dt)), spec)?;
    let k3 = lindblad_rhs(&(rho + sc(&k2, 0.5 * dt)), spec)?;
    let k4 = lindblad_rhs(&(rho + sc(&k3, dt)), spec)?;
    Ok(rho + sc(&(k1 + sc(&k2, 2.0) + sc(&k3, 2.0) + k4), dt / 6.0))
}

/// Fixed-step RK4 from t = 0, recording ρ at each time in `times`
/// (ascending, nonnegative). Each gap is covered by equal substeps no longer
/// than `dt`.
pub fn integrate_master_equation(spec: &LindbladSpec, rho0: &CMat, times: &[f64], dt: f64) -> Result<MeTrajectory> {
    if !(dt > 0.0) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return invalid("output times must be ascending and nonnegative");
    }
    if hermitian_defect(rho0) > 1e-10 {
        return invalid("initial ρ is not Hermitian");
    }
    let tr0 = trace(rho0);
    let mut rho = rho0.clone();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    let (mut trace_drift, mut herm, mut min_eig): (f64, f64, f64) = (0.0, 0.0, f64::INFINITY);
    for &target in times {
        let gap = target - t;
        if gap > 0.0 {
            let n = (gap / dt - 1e-9).ceil().max(1.0) as usize;
            let h = gap / n as f64;
            for step in 0..n {
                rho = rk4_step(&rho, spec, h)?;
                herm = herm.max(linalg::symmetrize(&mut rho));
                if rho.col_iter().any(|c| c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
                    return Err(Error::Numerical(format!(
                        "non-finite ρ at t = {} (substep {step} of {n}, dt = {h})",
                        t + (step + 1) as f64 * h
                    )));
                }
            }
        }
        t = target;
        trace_drift = trace_drift.max((trace(&rho) - tr0).norm());
        min_eig = min_eig.min(diagonalize(&rho)?.eigenvalues[0]);
        out.push(rho.clone());
    }
    if min_eig < -1e-10 {
        log::warn!("master-equation trajectory lost positivity: min eigenvalue {min_eig:.3e}");
    }
    Ok(MeTrajectory { times: times.to_vec(), rho: out, trace_drift, hermiticity_drift: herm, min_eigenvalue: min_eig })
}

/// Uniform grid 0, dt, …, n·dt ≈ t_end.
pub fn uniform_grid(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(t_end >= dt) {
        return invalid(format!("need 0 < dt <= T, got dt = {dt}, T = {t_end}"));
    }
    let n = (t_end / dt + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| k as f64 * dt).collect())
}

/// Nondissipative coupling: Δ_αβ = h_ββ − h_αα and g = w_f f0² τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DephasingSpec {
    pub delta: Vec<Vec<f64>>,
    pub g: f64,
}

impl DephasingSpec {
    pub fn new(h_diag: &[f64], g: f64) -> Result<Self> {
        if !(g >= 0.0) {
            return invalid(format!("g must be nonnegative, got {g}"));
        }
        let delta = h_diag.iter().map(|ha| h_diag.iter().map(|hb| hb - ha).collect()).collect();
        Ok(DephasingSpec { delta, g })
    }

    pub fn from_eth(h_diag: &[f64], w_f: f64, f0: f64, tau: f64) -> Result<Self> {
        Self::new(h_diag, w_f * f0 * f0 * tau)
    }
}

/// (g/2) Δ²_αβ.
pub fn dephasing_rate(spec: &DephasingSpec, a: usize, b: usize) -> Result<f64> {
    let d = spec.delta.len();
    if a >= d || b >= d {
        return dim_err("pair index out of range");
    }
    if a == b {
        return invalid("the dephasing rate is defined for α ≠ β only");
    }
    Ok(0.5 * spec.g * spec.delta[a][b].powi(2))
}

/// π Δ² f0².
pub fn rmt_rate(delta: f64, f0: f64) -> f64 {
    PI * delta * delta * f0 * f0
}

/// 2π / ΔE.
pub fn tau_rmt(delta_e: f64) -> Result<f64> {
    if !(delta_e > 0.0) {
        return invalid(format!("ΔE must be positive, got {delta_e}"));
    }
    Ok(2.0 * PI / delta_e)
}

/// ρ_αβ(t) = ρ_αβ(0) e^{i(e_β − e_α)t} e^{−(g/2)Δ²t}.
pub fn dephasing_solution(e_s: &[f64], rho0: &CMat, spec: &DephasingSpec, t: f64) -> CMat {
    let d = e_s.len();
    CMat::from_fn(d, d, |a, b| {
        let ph = (e_s[b] - e_s[a]) * t;
        let decay = (-0.5 * spec.g * spec.delta[a][b].powi(2) * t).exp();
        rho0[(a, b)] * c64::new(ph.cos(), ph.sin()) * decay
    })
}

/// ρ^S(t) from ⟨χ|e^{iH_β t} e^{−iH_α t}|χ⟩ with H_α = e_α + H^E + h_αα H^IE.
pub fn loschmidt_echo(model: &BranchModel, system: &[c64], chi: &[c64], times: &[f64]) -> Result<Vec<CMat>> {
    if !model.is_dephasing() {
        return invalid("the echo form needs a diagonal system coupling");
    }
    let (ds, de) = (model.d_s(), model.d_e());
    if system.len() != ds || chi.len() != de {
        return dim_err("state dimensions do not match the model");
    }
    let spectra: Vec<SpectralData> = (0..ds).map(|a| diagonalize(&model.effective_hamiltonian(a))).collect::<Result<_>>()?;
    let coeffs: Vec<Vec<c64>> = spectra.iter().map(|s| s.to_eigenbasis(chi)).collect();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let evolved: Vec<CMat> = spectra
            .iter()
            .zip(&coeffs)
            .map(|(s, c)| {
                let w = CMat::from_fn(de, 1, |n, _| {
                    let ph = -s.eigenvalues[n] * t;
                    c[n] * c64::new(ph.cos(), ph.sin())
                });
                &s.eigenvectors * &w
            })
            .collect();
        out.push(CMat::from_fn(ds, ds, |a, b| {
            let echo: c64 = (0..de).map(|i| evolved[b][(i, 0)].conj() * evolved[a][(i, 0)]).sum();
            system[a] * system[b].conj() * echo
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub stderr: f64,
    /// ln |x(0)| implied by the fit.
    pub intercept: f64,
    pub points_used: usize,
}

/// Fits |x(t)| = A e^{−rt} using samples with floor ≤ |x| ≤ upper·|x(0)|,
/// stopping at the first sample below the floor.
pub fn fit_decay_rate(times: &[f64], mags: &[f64], upper: f64, floor: f64) -> Result<DecayFit> {
    if times.len() != mags.len() || times.is_empty() {
        return dim_err("times and magnitudes differ in length");
    }
    let m0 = mags[0];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &m) in times.iter().zip(mags) {
        if m < floor {
            break;
        }
        if m <= upper * m0 {
            xs.push(t);
            ys.push(m.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::Numerical(format!("only {} samples in the decay fit range", xs.len())));
    }
    let f = linear_fit(&xs, &ys);
    Ok(DecayFit { rate: -f.slope, stderr: f.slope_stderr, intercept: f.intercept, points_used: xs.len() })
}
