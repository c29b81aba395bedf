//! Environmental branches φ_α = ⟨α|Ψ⟩: exact propagation, reduced density
//! matrices, branch-operator matrices and energy-window bookkeeping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};
use crate::eth::{fit_diagonal_function, matrix_elements_in_eigenbasis, AnalysisWindow, DiagonalFit};
use crate::linalg::{self, c64, conjugate_by, diagonalize, CMat, SpectralData, ZERO};
use crate::model::{build_goe_environment, renormalize, EnvironmentKind, EnvironmentSpec, SystemSpec, TotalModel};
use crate::random::random_phase;
use crate::stats::{linear_fit, LineFit};

/// The model in the working basis: system eigenbasis ⊗ H^E eigenbasis.
#[derive(Debug, Clone)]
pub struct BranchModel {
    pub e_s: Vec<f64>,
    /// coupling · H^IS.
    pub h: CMat,
    pub env: Vec<f64>,
    /// H^IE in the H^E eigenbasis.
    pub v: CMat,
}

impl BranchModel {
    pub fn from_model(model: &TotalModel, env: &SpectralData) -> Result<Self> {
        if env.dim() != model.d_e() {
            return dim_err("environment spectrum does not match the model");
        }
        let v = conjugate_by(&env.eigenvectors, &model.h_ie)?;
        Self::from_parts(
            model.system.energies.clone(),
            linalg::scale(&model.system.h_is, c64::new(model.coupling, 0.0)),
            env.eigenvalues.clone(),
            v,
        )
    }

    pub fn from_parts(e_s: Vec<f64>, h: CMat, env: Vec<f64>, v: CMat) -> Result<Self> {
        let (ds, de) = (e_s.len(), env.len());
        if h.nrows() != ds || h.ncols() != ds || v.nrows() != de || v.ncols() != de {
            return dim_err("inconsistent branch-model dimensions");
        }
        Ok(BranchModel { e_s, h, env, v })
    }

    pub fn d_s(&self) -> usize {
        self.e_s.len()
    }

    pub fn d_e(&self) -> usize {
        self.env.len()
    }

    /// True when H^IS has no off-diagonal entries (nondissipative coupling).
    pub fn is_dephasing(&self) -> bool {
        let d = self.d_s();
        (0..d).all(|a| (0..d).all(|b| a == b || self.h[(a, b)] == ZERO))
    }

    /// Total Hamiltonian in the (α, i) basis, α slow.
    pub fn total_hamiltonian(&self) -> CMat {
        let (ds, de) = (self.d_s(), self.d_e());
        CMat::from_fn(ds * de, ds * de, |r, c| {
            let (a, i) = (r / de, r % de);
            let (b, j) = (c / de, c % de);
            let mut z = self.h[(a, b)] * self.v[(i, j)];
            if a == b && i == j {
                z += c64::new(self.e_s[a] + self.env[i], 0.0);
            }
            z
        })
    }

    /// Block Hamiltonian e_α + H^E + h_αα H^IE for a nondissipative coupling.
    pub fn effective_hamiltonian(&self, alpha: usize) -> CMat {
        let haa = self.h[(alpha, alpha)];
        let de = self.d_e();
        CMat::from_fn(de, de, |i, j| {
            let mut z = haa * self.v[(i, j)];
            if i == j {
                z += c64::new(self.e_s[alpha] + self.env[i], 0.0);
            }
            z
        })
    }

    /// Applies the branch generator M to an α-matrix whose columns are branches:
    /// (MΦ)_α = (e_α + H^E) φ_α + H^IE Σ_γ h_αγ φ_γ.
    pub fn apply_generator(&self, phi: &CMat) -> CMat {
        let mixed = phi * self.h.transpose();
        let vm = &self.v * &mixed;
        CMat::from_fn(phi.nrows(), phi.ncols(), |i, a| phi[(i, a)] * (self.e_s[a] + self.env[i]) + vm[(i, a)])
    }
}

/// Branch coefficients C_αi at time `t`, one column per α.
#[derive(Debug, Clone)]
pub struct BranchSet {
    pub t: f64,
    pub phi: CMat,
}

impl BranchSet {
    pub fn d_s(&self) -> usize {
        self.phi.ncols()
    }

    pub fn d_e(&self) -> usize {
        self.phi.nrows()
    }

    pub fn branch(&self, alpha: usize) -> &[c64] {
        self.phi.col_as_slice(alpha)
    }

    pub fn norm_sqr(&self, alpha: usize) -> f64 {
        self.branch(alpha).iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        (0..self.d_s()).map(|a| self.norm_sqr(a)).sum()
    }

    /// Ψ in the (α, i) basis.
    pub fn to_state(&self) -> Vec<c64> {
        (0..self.d_s()).flat_map(|a| self.branch(a).to_vec()).collect()
    }

    pub fn from_state(psi: &[c64], d_s: usize, t: f64) -> Result<Self> {
        if d_s == 0 || psi.len() % d_s != 0 {
            return dim_err("state length is not a multiple of d_S");
        }
        let de = psi.len() / d_s;
        Ok(BranchSet { t, phi: CMat::from_fn(de, d_s, |i, a| psi[a * de + i]) })
    }
}

fn check_normalized(v: &[c64], what: &str) -> Result<()> {
    let n: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    if (n - 1.0).abs() > 1e-10 {
        return invalid(format!("{what} is not normalized (norm² = {n})"));
    }
    Ok(())
}

/// Product state: φ_α = a_α χ.
pub fn initial_branches(system: &[c64], env: &[c64]) -> Result<BranchSet> {
    check_normalized(system, "system state")?;
    check_normalized(env, "environment state")?;
    Ok(BranchSet { t: 0.0, phi: CMat::from_fn(env.len(), system.len(), |i, a| system[a] * env[i]) })
}

/// Equal-weight, random-phase superposition of the eigenstates with energy in
/// `[center − width/2, center + width/2]`, as coefficients in the H^E eigenbasis.
pub fn microcanonical_env_state(energies: &[f64], center: f64, width: f64, seed: u64) -> Result<Vec<c64>> {
    let (lo, hi) = (center - 0.5 * width, center + 0.5 * width);
    let a = energies.partition_point(|&e| e < lo);
    let b = energies.partition_point(|&e| e <= hi);
    if b <= a {
        return invalid(format!("no levels in the microcanonical window [{lo}, {hi}]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = 1.0 / ((b - a) as f64).sqrt();
    let mut v = vec![ZERO; energies.len()];
    for z in &mut v[a..b] {
        *z = random_phase(&mut rng) * amp;
    }
    Ok(v)
}

#[derive(Debug, Clone)]
enum PropagatorKind {
    Full(SpectralData),
    /// One spectrum per α when the coupling is nondissipative.
    Blocks(Vec<SpectralData>),
}

/// Exact evolution from a stored spectral decomposition.
#[derive(Debug, Clone)]
pub struct Propagator {
    kind: PropagatorKind,
    d_s: usize,
    d_e: usize,
}

impl Propagator {
    pub fn new(model: &BranchModel) -> Result<Self> {
        let (d_s, d_e) = (model.d_s(), model.d_e());
        let kind = if model.is_dephasing() {
            let blocks = (0..d_s)
                .into_par_iter()
                .map(|a| diagonalize(&model.effective_hamiltonian(a)))
                .collect::<Result<Vec<_>>>()?;
            PropagatorKind::Blocks(blocks)
        } else {
            PropagatorKind::Full(diagonalize(&model.total_hamiltonian())?)
        };
        Ok(Propagator { kind, d_s, d_e })
    }

    /// Wraps a decomposition of the total Hamiltonian in the (α, i) basis.
    pub fn from_spectral(model: &BranchModel, total: SpectralData) -> Result<Self> {
        if total.dim() != model.d_s() * model.d_e() {
            return dim_err("spectral data does not match d_S * d_E");
        }
        Ok(Propagator { kind: PropagatorKind::Full(total), d_s: model.d_s(), d_e: model.d_e() })
    }

    pub fn is_block_diagonal(&self) -> bool {
        matches!(self.kind, PropagatorKind::Blocks(_))
    }

    pub fn propagate(&self, b: &BranchSet, t1: f64) -> Result<BranchSet> {
        Ok(self.propagate_many(b, &[t1])?.pop().unwrap())
    }

    /// Evolves to every time in `times` with one basis change per block.
    pub fn propagate_many(&self, b: &BranchSet, times: &[f64]) -> Result<Vec<BranchSet>> {
        if b.d_s() != self.d_s || b.d_e() != self.d_e {
            return dim_err("branch set does not match the propagator");
        }
        let evolve = |s: &SpectralData, psi: &[c64]| -> CMat {
            let c = s.to_eigenbasis(psi);
            let w = CMat::from_fn(c.len(), times.len(), |n, k| {
                let ph = -s.eigenvalues[n] * (times[k] - b.t);
                c[n] * c64::new(ph.cos(), ph.sin())
            });
            &s.eigenvectors * &w
        };
        match &self.kind {
            PropagatorKind::Full(s) => {
                let out = evolve(s, &b.to_state());
                times
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| BranchSet::from_state(out.col_as_slice(k), self.d_s, t))
                    .collect()
            }
            PropagatorKind::Blocks(blocks) => {
                let outs: Vec<CMat> = blocks.iter().enumerate().map(|(a, s)| evolve(s, b.branch(a))).collect();
                Ok(times
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| BranchSet { t, phi: CMat::from_fn(self.d_e, self.d_s, |i, a| outs[a][(i, k)]) })
                    .collect())
            }
        }
    }
}

/// ρ_αβ = ⟨φ_β|φ_α⟩.
pub fn rdm_from_branches(b: &BranchSet) -> CMat {
    let g = b.phi.adjoint() * &b.phi;
    let mut rho = g.transpose().to_owned();
    linalg::symmetrize(&mut rho);
    rho
}

/// Entry (α, β) = ⟨φ_β|O|φ_α⟩ for O in the H^E eigenbasis.
pub fn operator_phi_matrix(b: &BranchSet, o_eig: &CMat) -> Result<CMat> {
    if o_eig.nrows() != b.d_e() || o_eig.ncols() != b.d_e() {
        return dim_err("operator does not match the branch dimension");
    }
    let w = o_eig * &b.phi;
    Ok(pair_products(&b.phi, &w))
}

/// Entry (α, β) = Σ_i conj(C_βi) d_i C_αi.
pub fn diagonal_phi_matrix(b: &BranchSet, d: &[f64]) -> CMat {
    let w = CMat::from_fn(b.d_e(), b.d_s(), |i, a| b.phi[(i, a)] * d[i]);
    pair_products(&b.phi, &w)
}

fn pair_products(phi: &CMat, w: &CMat) -> CMat {
    let ds = phi.ncols();
    CMat::from_fn(ds, ds, |a, bb| {
        phi.col_as_slice(bb).iter().zip(w.col_as_slice(a)).map(|(x, y)| x.conj() * y).sum()
    })
}

/// Diagonal-function data used to split ⟨φ_β|O|φ_α⟩ into four parts.
#[derive(Debug, Clone, PartialEq)]
pub struct EthSplit {
    /// O(e) at the window center.
    pub o0: f64,
    /// O(e_i) at each level.
    pub smooth: Vec<f64>,
}

impl EthSplit {
    pub fn from_fit(fit: &DiagonalFit) -> Self {
        EthSplit { o0: fit.o0, smooth: fit.smooth.clone() }
    }

    pub fn constant(value: f64, d_e: usize) -> Self {
        EthSplit { o0: value, smooth: vec![value; d_e] }
    }

    /// Fits the diagonal function of `o_eig` on the given window.
    pub fn fit(energies: &[f64], o_eig: &CMat, window: &AnalysisWindow, half_width: usize) -> Result<Self> {
        let table = crate::eth::ElementTable { energies: energies.to_vec(), o_eig: o_eig.clone() };
        Ok(Self::from_fit(&fit_diagonal_function(&table, window, half_width)?))
    }
}

/// Parts l = 1..4 of ⟨φ_β|O|φ_α⟩: window-center value times ρ, deviation of
/// the diagonal function, diagonal residuals and off-diagonal elements.
pub fn split_by_eth_parts(b: &BranchSet, o_eig: &CMat, split: &EthSplit) -> Result<[CMat; 4]> {
    if o_eig.nrows() != b.d_e() || o_eig.ncols() != b.d_e() {
        return dim_err("operator does not match the branch dimension");
    }
    let diag: Vec<f64> = (0..b.d_e()).map(|i| o_eig[(i, i)].re).collect();
    split_with_product(b, &diag, o_eig * &b.phi, split)
}

/// As `split_by_eth_parts`, given the diagonal of O and the product O·Φ.
pub fn split_with_product(b: &BranchSet, o_diag: &[f64], mut o_phi: CMat, split: &EthSplit) -> Result<[CMat; 4]> {
    let de = b.d_e();
    if o_diag.len() != de || split.smooth.len() != de || o_phi.nrows() != de || o_phi.ncols() != b.d_s() {
        return dim_err("split data does not match the branch dimension");
    }
    let rho = rdm_from_branches(b);
    let l1 = linalg::scale(&rho, c64::new(split.o0, 0.0));
    let dev: Vec<f64> = split.smooth.iter().map(|s| s - split.o0).collect();
    let res: Vec<f64> = (0..de).map(|i| o_diag[i] - split.smooth[i]).collect();
    let l2 = diagonal_phi_matrix(b, &dev);
    let l3 = diagonal_phi_matrix(b, &res);
    for a in 0..b.d_s() {
        for i in 0..de {
            o_phi[(i, a)] -= b.phi[(i, a)] * o_diag[i];
        }
    }
    let l4 = pair_products(&b.phi, &o_phi);
    Ok([l1, l2, l3, l4])
}

/// Entry (α, β) = ⟨φ_β|w_α⟩ for the columns w_α of `w`.
pub fn branch_overlaps(b: &BranchSet, w: &CMat) -> CMat {
    pair_products(&b.phi, w)
}

/// Level interval holding a branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchWindow {
    pub first: usize,
    pub last: usize,
    pub e_lo: f64,
    pub e_hi: f64,
}

impl BranchWindow {
    pub fn width(&self) -> f64 {
        self.e_hi - self.e_lo
    }

    pub fn levels(&self) -> usize {
        self.last - self.first + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyWindow {
    /// `None` marks a zero-norm branch.
    pub per_branch: Vec<Option<BranchWindow>>,
    pub union_lo: f64,
    pub union_hi: f64,
    pub width: f64,
    /// Number of levels inside the union.
    pub m_gamma: usize,
    /// max/min of the per-branch widths; `None` if undefined.
    pub width_ratio: Option<f64>,
    pub mass: f64,
}

impl EnergyWindow {
    pub fn center(&self) -> f64 {
        0.5 * (self.union_lo + self.union_hi)
    }

    /// Γ_α ∩ Γ_β, or `None` when they are disjoint or undefined.
    pub fn pair_interval(&self, a: usize, b: usize) -> Option<(f64, f64)> {
        let (wa, wb) = (self.per_branch[a]?, self.per_branch[b]?);
        let (lo, hi) = (wa.e_lo.max(wb.e_lo), wa.e_hi.min(wb.e_hi));
        (lo <= hi).then_some((lo, hi))
    }
}

const ZERO_NORM: f64 = 1e-28;

/// Smallest contiguous level interval holding at least `mass` of each branch.
pub fn branch_energy_window(b: &BranchSet, energies: &[f64], mass: f64) -> Result<EnergyWindow> {
    if !(mass > 0.0 && mass <= 1.0) {
        return invalid(format!("mass must lie in (0, 1], got {mass}"));
    }
    if energies.len() != b.d_e() {
        return dim_err("energies do not match the branch dimension");
    }
    let per_branch: Vec<Option<BranchWindow>> = (0..b.d_s())
        .map(|a| {
            let p: Vec<f64> = b.branch(a).iter().map(|z| z.norm_sqr()).collect();
            let total: f64 = p.iter().sum();
            if total <= ZERO_NORM {
                return None;
            }
            let (first, last) = if mass >= 1.0 {
                let f = p.iter().position(|&x| x > 0.0)?;
                let l = p.iter().rposition(|&x| x > 0.0)?;
                (f, l)
            } else {
                shortest_interval(&p, energies, mass * total * (1.0 - 1e-12))
            };
            Some(BranchWindow { first, last, e_lo: energies[first], e_hi: energies[last] })
        })
        .collect();
    let defined: Vec<&BranchWindow> = per_branch.iter().flatten().collect();
    if defined.is_empty() {
        return Err(Error::Numerical("all branches have zero norm".into()));
    }
    let union_lo = defined.iter().map(|w| w.e_lo).fold(f64::INFINITY, f64::min);
    let union_hi = defined.iter().map(|w| w.e_hi).fold(f64::NEG_INFINITY, f64::max);
    let m_gamma = energies.partition_point(|&e| e <= union_hi) - energies.partition_point(|&e| e < union_lo);
    let wmax = defined.iter().map(|w| w.width()).fold(0.0, f64::max);
    let wmin = defined.iter().map(|w| w.width()).fold(f64::INFINITY, f64::min);
    let width_ratio = (wmin > 0.0).then_some(wmax / wmin);
    Ok(EnergyWindow { per_branch, union_lo, union_hi, width: union_hi - union_lo, m_gamma, width_ratio, mass })
}

fn shortest_interval(p: &[f64], e: &[f64], target: f64) -> (usize, usize) {
    let n = p.len();
    let mut best = (0, n - 1);
    let mut best_w = f64::INFINITY;
    let mut sum = 0.0;
    let mut hi = 0;
    for lo in 0..n {
        while hi < n && sum < target {
            sum += p[hi];
            hi += 1;
        }
        if sum < target {
            break;
        }
        let w = e[hi - 1] - e[lo];
        if w < best_w {
            best_w = w;
            best = (lo, hi - 1);
        }
        sum -= p[lo];
    }
    best
}

/// One (size, seed) sample for the λ fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub d_e: usize,
    pub seed: u64,
    pub m_gamma: f64,
    /// RMS of |H^IE(4)_φ,αβ| over α ≠ β and phase draws.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub lambda: f64,
    pub stderr: f64,
    pub fit: LineFit,
    pub points: Vec<LambdaPoint>,
}

/// Fits ln|H^IE(4)| = (λ − 1.5) ln M_Γ + const.
pub fn fit_lambda(points: &[LambdaPoint]) -> Result<LambdaFit> {
    let mut sizes: Vec<usize> = points.iter().map(|p| p.d_e).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 3 {
        return invalid(format!("λ fit needs at least 3 environment sizes, got {}", sizes.len()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.m_gamma.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.amplitude.ln()).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(LambdaFit { lambda: fit.slope + 1.5, stderr: fit.slope_stderr, fit, points: points.to_vec() })
}

/// Which branch configuration the λ measurement uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Product state with a microcanonical environment, at t = 0.
    Initial,
    /// The same state evolved to the configured time.
    Evolved,
    /// φ_1 ∝ H^IE φ_0, built by hand to maximize correlations.
    Correlated,
}

/// GOE-environment λ measurement over sizes and seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaScalingSpec {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub time: f64,
    pub e_s: Vec<f64>,
    /// H^IS as a real matrix, row-major.
    pub h_is: Vec<Vec<f64>>,
    pub coupling: f64,
    pub system_state: Vec<f64>,
    pub center: f64,
    pub width: f64,
    /// Independent random-phase environment states per (size, seed).
    pub draws: usize,
    pub mass: f64,
}

impl Default for LambdaScalingSpec {
    fn default() -> Self {
        LambdaScalingSpec {
            sizes: vec![256, 512, 1024, 2048],
            seeds: (1..=8).collect(),
            time: 2.0,
            e_s: vec![-0.5, 0.5],
            h_is: vec![vec![-0.5, 0.0], vec![0.0, 0.5]],
            coupling: 0.5,
            system_state: vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            center: 0.0,
            width: 0.5,
            draws: 16,
            mass: 0.99,
        }
    }
}

pub fn measure_lambda_scaling(spec: &LambdaScalingSpec, mode: LambdaMode) -> Result<LambdaFit> {
    let jobs: Vec<(usize, u64)> = spec.sizes.iter().flat_map(|&d| spec.seeds.iter().map(move |&s| (d, s))).collect();
    if spec.seeds.len() < 5 {
        return invalid("λ measurement needs at least 5 seeds per size");
    }
    let points = jobs
        .par_iter()
        .map(|&(d, seed)| lambda_point(spec, mode, d, seed))
        .collect::<Result<Vec<_>>>()?;
    fit_lambda(&points)
}

fn lambda_point(spec: &LambdaScalingSpec, mode: LambdaMode, d_e: usize, seed: u64) -> Result<LambdaPoint> {
    let ds = spec.e_s.len();
    let env_spec = EnvironmentSpec { kind: EnvironmentKind::Goe { variance: None }, dim: d_e, seed };
    let (h_e, h_ie) = build_goe_environment(&env_spec)?;
    let env = diagonalize(&h_e)?;
    let table = matrix_elements_in_eigenbasis(&h_ie, &env)?;
    let window = AnalysisWindow::central(&env.eigenvalues, 0.6)?;
    let hw = crate::eth::default_half_width(d_e);
    let fit = fit_diagonal_function(&table, &window, hw)?;
    let his = CMat::from_fn(ds, ds, |a, b| c64::new(spec.h_is[a][b], 0.0));
    let system = SystemSpec::new(spec.e_s.clone(), his)?;
    let model = renormalize(&TotalModel::new(system, h_e, h_ie, spec.coupling)?, fit.o0)?;
    let mut v = table.o_eig;
    for i in 0..d_e {
        v[(i, i)] -= c64::new(fit.o0, 0.0);
    }
    let bm = BranchModel::from_parts(
        model.system.energies.clone(),
        linalg::scale(&model.system.h_is, c64::new(spec.coupling, 0.0)),
        env.eigenvalues.clone(),
        v,
    )?;
    let split = EthSplit::fit(&bm.env, &bm.v, &window, hw)?;
    let sys_norm = spec.system_state.iter().map(|x| x * x).sum::<f64>().sqrt();
    let amps: Vec<c64> = spec.system_state.iter().map(|x| c64::new(x / sys_norm, 0.0)).collect();
    let prop = if mode == LambdaMode::Evolved { Some(Propagator::new(&bm)?) } else { None };

    let (mut sq, mut count, mut mg) = (0.0, 0usize, 0.0);
    for draw in 0..spec.draws.max(1) {
        let draw_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(draw as u64 + 1);
        let chi = microcanonical_env_state(&bm.env, spec.center, spec.width, draw_seed)?;
        let b = match mode {
            LambdaMode::Initial => initial_branches(&amps, &chi)?,
            LambdaMode::Evolved => prop.as_ref().unwrap().propagate(&initial_branches(&amps, &chi)?, spec.time)?,
            LambdaMode::Correlated => correlated_branches(&bm.v, &chi, ds)?,
        };
        let w = branch_energy_window(&b, &bm.env, spec.mass)?;
        mg += w.m_gamma as f64;
        let parts = split_by_eth_parts(&b, &bm.v, &split)?;
        for a in 0..ds {
            for c in 0..ds {
                if a != c {
                    sq += parts[3][(a, c)].norm_sqr();
                    count += 1;
                }
            }
        }
    }
    let draws = spec.draws.max(1) as f64;
    Ok(LambdaPoint { d_e, seed, m_gamma: mg / draws, amplitude: (sq / count as f64).sqrt() })
}

/// φ_0 = χ/√2 and φ_1 = Vχ/(√2‖Vχ‖); other branches empty.
pub fn correlated_branches(v: &CMat, chi: &[c64], d_s: usize) -> Result<BranchSet> {
    if d_s < 2 {
        return dim_err("correlated branches need d_S >= 2");
    }
    let de = chi.len();
    let x = CMat::from_fn(de, 1, |i, _| chi[i]);
    let vx = v * &x;
    let n = (0..de).map(|i| vx[(i, 0)].norm_sqr()).sum::<f64>().sqrt();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Ok(BranchSet {
        t: 0.0,
        phi: CMat::from_fn(de, d_s, |i, a| match a {
            0 => chi[i] * s,
            1 => vx[(i, 0)] * (s / n),
            _ => ZERO,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, max_abs_diff};
    use crate::random::{random_hermitian, random_state};

    fn random_model(ds: usize, de: usize, coupling: f64, seed: u64) -> BranchModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let he = random_hermitian(de, 1.0 / (de as f64).sqrt(), &mut rng);
        let env = diagonalize(&he).unwrap();
        let v = conjugate_by(&env.eigenvectors, &random_hermitian(de, 1.0 / (de as f64).sqrt(), &mut rng)).unwrap();
        let mut e_s: Vec<f64> = (0..ds).map(|_| crate::random::gaussian(&mut rng)).collect();
        e_s.sort_by(f64::total_cmp);
        let h = linalg::scale(&random_hermitian(ds, 1.0, &mut rng), c64::new(coupling, 0.0));
        BranchModel::from_parts(e_s, h, env.eigenvalues, v).unwrap()
    }

    fn random_branches(ds: usize, de: usize, seed: u64) -> BranchSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BranchSet::from_state(&random_state(ds * de, &mut rng), ds, 0.0).unwrap()
    }

    /// e^{-iHt} by scaling and squaring a Taylor series.
    fn taylor_propagator(h: &CMat, t: f64) -> CMat {
        let n = h.nrows();
        let norm = max_abs(h) * n as f64 * t.abs();
        let s = (norm.max(1.0)).log2().ceil() as i32 + 4;
        let dt = t / 2f64.powi(s);
        let a = linalg::scale(h, c64::new(0.0, -dt));
        let mut term = linalg::identity(n);
        let mut sum = linalg::identity(n);
        for k in 1..30 {
            term = linalg::scale(&(&term * &a), c64::new(1.0 / k as f64, 0.0));
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn product_state_branches() {
        let chi = vec![c64::new(0.6, 0.0), c64::new(0.0, 0.8)];
        let b = initial_branches(&[linalg::ONE, ZERO], &chi).unwrap();
        assert_eq!(b.branch(0), &chi[..]);
        assert!(b.branch(1).iter().all(|z| *z == ZERO));
        assert!((b.global_norm() - 1.0).abs() < 1e-15);
        let rho = rdm_from_branches(&b);
        assert!(max_abs_diff(&rho, &linalg::diag_matrix(&[1.0, 0.0])) < 1e-15);
        assert!(initial_branches(&[linalg::ONE, linalg::ONE], &chi).is_err());
    }

    #[test]
    fn equal_branches_rdm() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let chi = [c64::new(0.6, 0.0), c64::new(0.0, 0.8)];
        let phi = CMat::from_fn(2, 2, |i, _| chi[i] * s);
        let rho = rdm_from_branches(&BranchSet { t: 0.0, phi });
        let half = CMat::from_fn(2, 2, |_, _| c64::new(0.5, 0.0));
        assert!(max_abs_diff(&rho, &half) < 1e-15);
    }

    #[test]
    fn rdm_matches_partial_trace() {
        for seed in 0..10 {
            let (ds, de) = (3, 7);
            let b = random_branches(ds, de, seed);
            let psi = b.to_state();
            let rho = rdm_from_branches(&b);
            for a in 0..ds {
                for c in 0..ds {
                    let pt: c64 = (0..de).map(|i| psi[a * de + i] * psi[c * de + i].conj()).sum();
                    assert!((pt - rho[(a, c)]).norm() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn phi_matrix_matches_double_sum() {
        let m = random_model(3, 9, 0.4, 1);
        let b = random_branches(3, 9, 2);
        let o = operator_phi_matrix(&b, &m.v).unwrap();
        for a in 0..3 {
            for c in 0..3 {
                let mut s = ZERO;
                for i in 0..9 {
                    for j in 0..9 {
                        s += b.phi[(j, c)].conj() * b.phi[(i, a)] * m.v[(j, i)];
                    }
                }
                assert!((s - o[(a, c)]).norm() <= 1e-10);
            }
        }
        let id = operator_phi_matrix(&b, &linalg::identity(9)).unwrap();
        assert!(max_abs_diff(&id, &rdm_from_branches(&b)) < 1e-14);
    }

    #[test]
    fn propagation_agrees_with_series_oracle() {
        let m = random_model(2, 8, 0.7, 3);
        let b = random_branches(2, 8, 4);
        let p = Propagator::new(&m).unwrap();
        let t = 1.3;
        let got = p.propagate(&b, t).unwrap();
        let u = taylor_propagator(&m.total_hamiltonian(), t);
        let psi = b.to_state();
        let x = CMat::from_fn(16, 1, |i, _| psi[i]);
        let y = &u * &x;
        let want = BranchSet::from_state(&(0..16).map(|i| y[(i, 0)]).collect::<Vec<_>>(), 2, t).unwrap();
        assert!(max_abs_diff(&got.phi, &want.phi) <= 1e-8);
        assert!((got.global_norm() - 1.0).abs() < 1e-10);
        let same = p.propagate(&b, 0.0).unwrap();
        assert!(max_abs_diff(&same.phi, &b.phi) < 1e-12);
    }

    #[test]
    fn block_propagator_matches_full() {
        let mut m = random_model(3, 10, 0.8, 5);
        for a in 0..3 {
            for c in 0..3 {
                if a != c {
                    m.h[(a, c)] = ZERO;
                }
            }
        }
        let b = random_branches(3, 10, 6);
        let blocks = Propagator::new(&m).unwrap();
        assert!(blocks.is_block_diagonal());
        let full = Propagator::from_spectral(&m, diagonalize(&m.total_hamiltonian()).unwrap()).unwrap();
        for &t in &[0.4, 2.5] {
            let x = blocks.propagate(&b, t).unwrap();
            let y = full.propagate(&b, t).unwrap();
            assert!(max_abs_diff(&x.phi, &y.phi) < 1e-10);
        }
    }

    #[test]
    fn decoupled_phase_rotation() {
        let m = random_model(3, 6, 0.0, 7);
        let b = random_branches(3, 6, 8);
        let p = Propagator::new(&m).unwrap();
        let t = 3.7;
        let bt = p.propagate(&b, t).unwrap();
        let (r0, r1) = (rdm_from_branches(&b), rdm_from_branches(&bt));
        for a in 0..3 {
            assert!((b.norm_sqr(a) - bt.norm_sqr(a)).abs() < 1e-10);
            for c in 0..3 {
                let ph = (m.e_s[c] - m.e_s[a]) * t;
                let want = r0[(a, c)] * c64::new(ph.cos(), ph.sin());
                assert!((r1[(a, c)] - want).norm() < 1e-9);
            }
        }
        let e0 = operator_phi_matrix(&b, &linalg::diag_matrix(&m.env)).unwrap();
        let e1 = operator_phi_matrix(&bt, &linalg::diag_matrix(&m.env)).unwrap();
        for a in 0..3 {
            assert!((e0[(a, a)] - e1[(a, a)]).norm() < 1e-9);
        }
    }

    #[test]
    fn rdm_derivative_matches_branch_equation() {
        let m = random_model(2, 12, 0.6, 9);
        let b = random_branches(2, 12, 10);
        let p = Propagator::new(&m).unwrap();
        let h = 1e-4;
        let plus = rdm_from_branches(&p.propagate(&b, h).unwrap());
        let minus = rdm_from_branches(&p.propagate(&b, -h).unwrap());
        let fd = linalg::scale(&(plus - minus), c64::new(0.5 / h, 0.0));
        // i dρ/dt = [H_S, ρ] + [h, V_φ] in α-matrix form, i.e.
        // dρ_αβ/dt = i(e_β − e_α)ρ_αβ + i(V_φ h − h V_φ)_αβ.
        let rho = rdm_from_branches(&b);
        let vphi = operator_phi_matrix(&b, &m.v).unwrap();
        let comm = &vphi * &m.h - &m.h * &vphi;
        let rhs = CMat::from_fn(2, 2, |a, c| linalg::I * ((m.e_s[c] - m.e_s[a]) * rho[(a, c)] + comm[(a, c)]));
        let rel = max_abs_diff(&fd, &rhs) / max_abs(&rhs);
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn microcanonical_state_properties() {
        let e: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let v = microcanonical_env_state(&e, 5.0, 2.0, 1).unwrap();
        let n: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        assert!((n - 1.0).abs() < 1e-12);
        let mean_e: f64 = v.iter().zip(&e).map(|(z, x)| z.norm_sqr() * x).sum();
        assert!((mean_e - 5.0).abs() <= 1.0);
        let one = microcanonical_env_state(&e, 3.0, 0.05, 2).unwrap();
        assert_eq!(one.iter().filter(|z| z.norm() > 0.0).count(), 1);
        assert!((one[30].norm() - 1.0).abs() < 1e-12);
        assert!(microcanonical_env_state(&e, 50.0, 1.0, 3).is_err());
    }

    #[test]
    fn split_of_identity_and_partition_identity() {
        let m = random_model(3, 20, 0.5, 11);
        let b = random_branches(3, 20, 12);
        let parts = split_by_eth_parts(&b, &linalg::identity(20), &EthSplit::constant(1.0, 20)).unwrap();
        let full = rdm_from_branches(&b);
        assert!(max_abs_diff(&parts[0], &full) < 1e-14);
        for p in &parts[1..] {
            assert!(max_abs(p) <= 1e-12);
        }
        let split = EthSplit { o0: 0.3, smooth: (0..20).map(|i| 0.01 * i as f64).collect() };
        let parts = split_by_eth_parts(&b, &m.v, &split).unwrap();
        let sum = &parts[0] + &parts[1] + &parts[2] + &parts[3];
        assert!(max_abs_diff(&sum, &operator_phi_matrix(&b, &m.v).unwrap()) <= 1e-12);
    }

    #[test]
    fn energy_window_cases() {
        let e: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let mut phi = CMat::zeros(50, 2);
        phi[(7, 0)] = linalg::ONE;
        let w = branch_energy_window(&BranchSet { t: 0.0, phi: phi.clone() }, &e, 0.99).unwrap();
        let bw = w.per_branch[0].unwrap();
        assert_eq!((bw.e_lo, bw.e_hi, bw.levels()), (7.0, 7.0, 1));
        assert!(w.per_branch[1].is_none());
        assert_eq!(w.m_gamma, 1);

        phi[(3, 1)] = c64::new(1e-3, 0.0);
        phi[(40, 1)] = c64::new(0.5, 0.0);
        phi[(20, 1)] = c64::new(0.5, 0.0);
        let w = branch_energy_window(&BranchSet { t: 0.0, phi }, &e, 1.0).unwrap();
        let bw = w.per_branch[1].unwrap();
        assert_eq!((bw.first, bw.last), (3, 40));
        assert_eq!(w.m_gamma, 38);
        assert!(branch_energy_window(&random_branches(2, 50, 1), &e, 0.0).is_err());
    }

    #[test]
    fn decoupled_window_stays_inside_initial_support() {
        let m = random_model(2, 60, 0.0, 13);
        let width = 0.5;
        let chi = microcanonical_env_state(&m.env, 0.0, width, 4).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let b = initial_branches(&[c64::new(s, 0.0), c64::new(s, 0.0)], &chi).unwrap();
        let p = Propagator::new(&m).unwrap();
        for &t in &[0.0, 1.0, 10.0, 100.0] {
            let w = branch_energy_window(&p.propagate(&b, t).unwrap(), &m.env, 0.99).unwrap();
            assert!(w.width <= width);
        }
    }

    #[test]
    fn lambda_fit_needs_three_sizes() {
        let pts: Vec<LambdaPoint> = [64, 128]
            .iter()
            .map(|&d| LambdaPoint { d_e: d, seed: 0, m_gamma: d as f64, amplitude: 1.0 })
            .collect();
        assert!(fit_lambda(&pts).is_err());
        let pts: Vec<LambdaPoint> = [64usize, 128, 256]
            .iter()
            .map(|&d| LambdaPoint { d_e: d, seed: 0, m_gamma: d as f64, amplitude: (d as f64).powf(-0.5) })
            .collect();
        assert!((fit_lambda(&pts).unwrap().lambda - 1.0).abs() < 1e-12);
    }
}
