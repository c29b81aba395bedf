//! Second-order expansion of the RDM within a time slice.
//!
//! Every G component is linear in one of the four matrices ⟨φ_β|Y_η|φ_α⟩, so
//! routing each through the four-part ETH split gives the (k, η, l) ledger.

use serde::{Deserialize, Serialize};

use crate::branch::{branch_overlaps, rdm_from_branches, split_with_product, BranchModel, BranchSet, EthSplit};
use crate::error::{dim_err, invalid, Error, Result};
use crate::eth::AnalysisWindow;
use crate::linalg::{self, c64, max_abs, max_abs_diff, CMat, I};
use crate::stats::linear_fit;

/// Tolerance for the partition identities and structural zeros, relative to
/// max(1, |G|).
pub const PARTITION_TOL: f64 = 1e-10;

/// Y_1 = I, Y_2 = H^IE, Y_3 = [H^IE, H^E], Y_4 = (H^IE)², in the H^E eigenbasis.
#[derive(Debug, Clone)]
pub struct YOperatorSet {
    pub y: [CMat; 4],
    /// max |Y_3 − (V D − D V)| with D = diag(H^E).
    pub y3_defect: f64,
}

pub fn build_y_operators(model: &BranchModel) -> YOperatorSet {
    let de = model.d_e();
    let v = &model.v;
    let e = &model.env;
    let y3 = CMat::from_fn(de, de, |i, j| v[(i, j)] * (e[j] - e[i]));
    let d = linalg::diag_matrix(e);
    let y3_defect = max_abs_diff(&y3, &linalg::commutator(v, &d));
    YOperatorSet { y: [linalg::identity(de), v.clone(), y3, v * v], y3_defect }
}

/// Diagonal-function data for each Y operator. Y_1 and Y_3 have exact
/// constant diagonals (1 and 0) and need no fit.
#[derive(Debug, Clone)]
pub struct YSplits {
    pub splits: [EthSplit; 4],
}

impl YSplits {
    pub fn fit(ys: &YOperatorSet, energies: &[f64], window: &AnalysisWindow, half_width: usize) -> Result<Self> {
        let de = energies.len();
        Ok(YSplits {
            splits: [
                EthSplit::constant(1.0, de),
                EthSplit::fit(energies, &ys.y[1], window, half_width)?,
                EthSplit::constant(0.0, de),
                EthSplit::fit(energies, &ys.y[3], window, half_width)?,
            ],
        })
    }
}

/// Y_η Φ for η = 2..4. Y_1 Φ is Φ itself.
fn y_products(b: &BranchSet, ys: &YOperatorSet) -> Result<[CMat; 3]> {
    if ys.y[1].nrows() != b.d_e() {
        return dim_err("Y operators do not match the branch dimension");
    }
    Ok(std::array::from_fn(|n| &ys.y[n + 1] * &b.phi))
}

fn y_phi_from(b: &BranchSet, w: &[CMat; 3]) -> [CMat; 4] {
    [rdm_from_branches(b), branch_overlaps(b, &w[0]), branch_overlaps(b, &w[1]), branch_overlaps(b, &w[2])]
}

/// ⟨φ_β|Y_η|φ_α⟩ for η = 1..4.
pub fn y_phi_matrices(b: &BranchSet, ys: &YOperatorSet) -> Result<[CMat; 4]> {
    Ok(y_phi_from(b, &y_products(b, ys)?))
}

/// G^(k)_η as a linear function of the Y_η branch matrix. Zero for the pairs
/// (k = 1, η ≥ 3), which do not occur.
pub fn g_component(k: usize, eta: usize, y: &CMat, model: &BranchModel) -> CMat {
    let ds = model.d_s();
    let e = &model.e_s;
    let h = &model.h;
    match (k, eta) {
        (1, 1) => CMat::from_fn(ds, ds, |a, b| I * (e[b] - e[a]) * y[(a, b)]),
        (1, 2) => linalg::scale(&(y * h - h * y), I),
        (2, 1) => CMat::from_fn(ds, ds, |a, b| y[(a, b)] * (-0.5 * (e[b] - e[a]).powi(2))),
        (2, 2) => CMat::from_fn(ds, ds, |a, b| {
            (0..ds)
                .map(|g| {
                    h[(a, g)] * y[(g, b)] * (e[b] - 0.5 * (e[a] + e[g]))
                        + y[(a, g)] * h[(g, b)] * (e[a] - 0.5 * (e[b] + e[g]))
                })
                .sum()
        }),
        (2, 3) => linalg::scale(&(y * h - h * y), c64::new(0.5, 0.0)),
        (2, 4) => {
            let h2 = h * h;
            let hyh = h * y * h;
            let anti = y * &h2 + &h2 * y;
            hyh - linalg::scale(&anti, c64::new(0.5, 0.0))
        }
        _ => CMat::zeros(ds, ds),
    }
}

/// A G term together with its η components.
#[derive(Debug, Clone)]
pub struct GTerm {
    pub total: CMat,
    pub eta: [CMat; 4],
}

fn eta_components(k: usize, yphi: &[CMat; 4], model: &BranchModel) -> [CMat; 4] {
    std::array::from_fn(|n| g_component(k, n + 1, &yphi[n], model))
}

fn sum_all(ms: &[CMat]) -> CMat {
    let mut s = ms[0].clone();
    for m in &ms[1..] {
        s += m;
    }
    s
}

fn check_dims(b: &BranchSet, model: &BranchModel) -> Result<()> {
    if b.d_s() != model.d_s() || b.d_e() != model.d_e() {
        return dim_err("branch set does not match the model");
    }
    Ok(())
}

fn g1_total(b: &BranchSet, psi1: &CMat) -> CMat {
    let cross = psi1.adjoint() * &b.phi;
    // ⟨ψ1_β|φ_α⟩ sits at (β, α) of Ψ1†Φ.
    CMat::from_fn(b.d_s(), b.d_s(), |a, c| I * (cross[(c, a)] - cross[(a, c)].conj()))
}

fn g2_from(b: &BranchSet, psi1: &CMat, psi2: &CMat) -> CMat {
    let p11 = psi1.adjoint() * psi1;
    let p02 = b.phi.adjoint() * psi2;
    let ds = b.d_s();
    CMat::from_fn(ds, ds, |a, c| p11[(c, a)] - 0.5 * p02[(c, a)] - 0.5 * p02[(a, c)].conj())
}

/// dρ/dt at the snapshot time. `total` comes from the generator applied to
/// the branches; `eta` from the Y decomposition.
pub fn g1_term(b: &BranchSet, model: &BranchModel, ys: &YOperatorSet) -> Result<GTerm> {
    check_dims(b, model)?;
    let total = g1_total(b, &model.apply_generator(&b.phi));
    let yphi = y_phi_matrices(b, ys)?;
    Ok(GTerm { total, eta: eta_components(1, &yphi, model) })
}

/// Both assemblies of ½ d²ρ/dt².
#[derive(Debug, Clone)]
pub struct G2Term {
    /// From ψ1 = MΦ and ψ2 = M²Φ.
    pub direct: CMat,
    pub decomposed: GTerm,
}

impl G2Term {
    pub fn route_defect(&self) -> f64 {
        max_abs_diff(&self.direct, &self.decomposed.total)
    }
}

pub fn g2_direct(b: &BranchSet, model: &BranchModel) -> Result<CMat> {
    check_dims(b, model)?;
    let psi1 = model.apply_generator(&b.phi);
    let psi2 = model.apply_generator(&psi1);
    Ok(g2_from(b, &psi1, &psi2))
}

pub fn g2_term(b: &BranchSet, model: &BranchModel, ys: &YOperatorSet) -> Result<G2Term> {
    let direct = g2_direct(b, model)?;
    let yphi = y_phi_matrices(b, ys)?;
    let eta = eta_components(2, &yphi, model);
    Ok(G2Term { direct, decomposed: GTerm { total: sum_all(&eta), eta } })
}

/// (k, η, l) decomposition at one slice start time.
#[derive(Debug, Clone)]
pub struct GTermLedger {
    pub t: f64,
    /// parts[k−1][η−1][l−1].
    pub parts: [[[CMat; 4]; 4]; 2],
    pub g1: CMat,
    pub g2: CMat,
    /// max over k of |Σ_η G_η − G|, relative to max(1, |G|).
    pub eta_defect: f64,
    /// max over (k, η) of |Σ_l G_η^l − G_η|, relative.
    pub l_defect: f64,
    /// Largest magnitude found at a structurally zero entry before zeroing.
    pub structural_residual: f64,
    /// max over η of |Σ_l Y_η^l − ⟨φ_β|Y_η|φ_α⟩|, relative.
    pub split_defect: f64,
    /// max |·| of the H^IE l = 1, 2 entries, which vanish only in the
    /// renormalized, weakly varying limit.
    pub approx_zero: [[f64; 2]; 2],
}

/// Entries that vanish identically: every l ≠ 1 part of Y_1 and the
/// diagonal parts of Y_3.
pub fn is_structural_zero(k: usize, eta: usize, l: usize) -> bool {
    match eta {
        1 => l != 1,
        3 => k == 1 || l <= 3,
        2 => false,
        _ => k == 1,
    }
}

impl GTermLedger {
    pub fn get(&self, k: usize, eta: usize, l: usize) -> &CMat {
        &self.parts[k - 1][eta - 1][l - 1]
    }

    pub fn eta_part(&self, k: usize, eta: usize) -> CMat {
        sum_all(&self.parts[k - 1][eta - 1])
    }

    /// Flattened rows (t, k, l, η, α, β, Re, Im).
    pub fn rows(&self) -> Vec<LedgerRow> {
        let mut out = Vec::new();
        for k in 1..=2 {
            for l in 1..=4 {
                for eta in 1..=4 {
                    let m = self.get(k, eta, l);
                    for a in 0..m.nrows() {
                        for b in 0..m.ncols() {
                            let z = m[(a, b)];
                            out.push(LedgerRow { t: self.t, k, l, eta, alpha: a, beta: b, re: z.re, im: z.im });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let worst = self.eta_defect.max(self.l_defect).max(self.structural_residual).max(self.split_defect);
        if worst > PARTITION_TOL {
            return Err(Error::Numerical(format!(
                "ledger partition defect at t = {}: eta {:.3e}, l {:.3e}, structural {:.3e}, split {:.3e}",
                self.t, self.eta_defect, self.l_defect, self.structural_residual, self.split_defect
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: f64,
    pub k: usize,
    pub l: usize,
    pub eta: usize,
    pub alpha: usize,
    pub beta: usize,
    pub re: f64,
    pub im: f64,
}

fn rel(defect: f64, scale: f64) -> f64 {
    defect / scale.max(1.0)
}

pub fn split_g_terms(b: &BranchSet, model: &BranchModel, ys: &YOperatorSet, splits: &YSplits) -> Result<GTermLedger> {
    check_dims(b, model)?;
    if splits.splits.iter().any(|s| s.smooth.len() != b.d_e()) {
        return dim_err("diagonal-function data does not match the environment");
    }
    let w = y_products(b, ys)?;
    let yphi = y_phi_from(b, &w);
    let psi1 = model.apply_generator(&b.phi);
    let psi2 = model.apply_generator(&psi1);
    let g1 = GTerm { total: g1_total(b, &psi1), eta: eta_components(1, &yphi, model) };
    let g2_eta = eta_components(2, &yphi, model);
    let g2 = G2Term { direct: g2_from(b, &psi1, &psi2), decomposed: GTerm { total: sum_all(&g2_eta), eta: g2_eta } };
    let mut yparts: Vec<[CMat; 4]> = Vec::with_capacity(4);
    for n in 0..4 {
        let o_diag: Vec<f64> = (0..b.d_e()).map(|i| ys.y[n][(i, i)].re).collect();
        let prod = if n == 0 { b.phi.clone() } else { w[n - 1].clone() };
        yparts.push(split_with_product(b, &o_diag, prod, &splits.splits[n])?);
    }
    let split_defect = yparts
        .iter()
        .zip(&yphi)
        .map(|(p, y)| rel(max_abs_diff(&sum_all(p), y), max_abs(y)))
        .fold(0.0, f64::max);

    let mut structural_residual: f64 = 0.0;
    let mut eta_defect: f64 = 0.0;
    let mut l_defect: f64 = 0.0;
    let mut approx_zero = [[0.0; 2]; 2];
    let parts: [[[CMat; 4]; 4]; 2] = std::array::from_fn(|kk| {
        let k = kk + 1;
        let etas = if k == 1 { &g1.eta } else { &g2.decomposed.eta };
        std::array::from_fn(|n| {
            let eta = n + 1;
            let mut ls: [CMat; 4] = std::array::from_fn(|m| g_component(k, eta, &yparts[n][m], model));
            l_defect = l_defect.max(rel(max_abs_diff(&sum_all(&ls), &etas[n]), max_abs(&etas[n])));
            for (m, part) in ls.iter_mut().enumerate() {
                if is_structural_zero(k, eta, m + 1) {
                    structural_residual = structural_residual.max(rel(max_abs(part), max_abs(&etas[n])));
                    *part = CMat::zeros(b.d_s(), b.d_s());
                } else if eta == 2 && m < 2 {
                    approx_zero[kk][m] = max_abs(part);
                }
            }
            ls
        })
    });
    let g1_sum = sum_all(&g1.eta);
    eta_defect = eta_defect.max(rel(max_abs_diff(&g1_sum, &g1.total), max_abs(&g1.total)));
    eta_defect = eta_defect.max(rel(max_abs_diff(&g2.decomposed.total, &g2.direct), max_abs(&g2.direct)));
    Ok(GTermLedger {
        t: b.t,
        parts,
        g1: g1.total,
        g2: g2.direct,
        eta_defect,
        l_defect,
        structural_residual,
        split_defect,
        approx_zero,
    })
}

/// Δρ = G^(1) τ + G^(2) τ².
pub fn taylor_rdm_step(ledger: &GTermLedger, tau: f64) -> Result<CMat> {
    if tau < 0.0 || !tau.is_finite() {
        return invalid(format!("slice length must be nonnegative, got {tau}"));
    }
    Ok(&linalg::scale(&ledger.g1, c64::new(tau, 0.0)) + &linalg::scale(&ledger.g2, c64::new(tau * tau, 0.0)))
}

/// Accumulation exponent of a slice sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiFit {
    pub xi: f64,
    /// Raw slope before clamping to [0, 1.1].
    pub raw: f64,
    pub clamped: bool,
}

/// Fits RMS|Σ_{block} G| ∝ M'^ξ over block lengths M' = M/32, ..., M/2, M,
/// pooling non-overlapping blocks of every sequence. The mean is kept, so a
/// coherent drift gives ξ = 1 and zero-mean noise gives ξ = ½.
pub fn fit_xi(sequences: &[&[c64]]) -> Result<XiFit> {
    let m = sequences.first().map_or(0, |s| s.len());
    if m < 16 || sequences.iter().any(|s| s.len() != m) {
        return invalid(format!("ξ fit needs equal-length sequences of at least 16 slices, got {m}"));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for div in [32, 16, 8, 4, 2, 1] {
        let len = m / div;
        if len == 0 {
            continue;
        }
        let mut sq = 0.0;
        let mut n = 0usize;
        for s in sequences {
            for block in s.chunks_exact(len) {
                sq += block.iter().sum::<c64>().norm_sqr();
                n += 1;
            }
        }
        let rms = (sq / n as f64).sqrt();
        if rms <= 0.0 {
            return Ok(XiFit { xi: 0.0, raw: f64::NAN, clamped: true });
        }
        xs.push((len as f64).ln());
        ys.push(rms.ln());
    }
    let raw = linear_fit(&xs, &ys).slope;
    let xi = raw.clamp(0.0, 1.1);
    Ok(XiFit { xi, raw, clamped: xi != raw })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFluctuation {
    pub alpha: usize,
    pub beta: usize,
    /// Slice-wise standard deviation of G^(1,4)_2.
    pub sigma: f64,
    /// |slice-wise mean of G^(2,1)_4|.
    pub kappa: f64,
    pub xi: XiFit,
    /// τ^ξ κ T^(1−ξ) / σ; `None` when σ = 0.
    pub tau_ratio: Option<f64>,
    pub tau_condition_satisfied: bool,
    /// σ = κ = 0, so the condition holds trivially.
    pub vacuous: bool,
    /// |Σ G^(2,1)_4| / |Σ G^(2,2)_4|; `None` when the denominator vanishes.
    pub drift_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub slices: usize,
    pub tau: f64,
    pub total_time: f64,
    pub threshold: f64,
    pub pairs: Vec<PairFluctuation>,
    /// ξ fitted from all pairs pooled.
    pub xi_pooled: XiFit,
    pub sigma_max: f64,
    pub sigma_mean: f64,
    pub kappa_max: f64,
    pub kappa_mean: f64,
    pub tau_condition_satisfied: bool,
}

pub const DEFAULT_RATIO_THRESHOLD: f64 = 10.0;

fn complex_std(xs: &[c64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<c64>() / n;
    (xs.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n).sqrt()
}

/// σ, κ and ξ over the pairs α ≤ β from a sequence of slice ledgers.
pub fn fluctuation_report(ledgers: &[GTermLedger], tau: f64, threshold: f64) -> Result<FluctuationReport> {
    let m = ledgers.len();
    if m < 16 {
        return invalid(format!("fluctuation report needs at least 16 slices, got {m}"));
    }
    if !(tau > 0.0) || !(threshold > 0.0) {
        return invalid("τ and the ratio threshold must be positive");
    }
    let ds = ledgers[0].g1.nrows();
    let total_time = m as f64 * tau;
    let series = |k: usize, l: usize, eta: usize, a: usize, b: usize| -> Vec<c64> {
        ledgers.iter().map(|g| g.get(k, eta, l)[(a, b)]).collect()
    };
    let mut pairs = Vec::new();
    let mut fluct_series = Vec::new();
    for a in 0..ds {
        for b in a..ds {
            let fl = series(1, 4, 2, a, b);
            let drift = series(2, 1, 4, a, b);
            let other = series(2, 2, 4, a, b);
            let sigma = complex_std(&fl);
            let kappa = (drift.iter().sum::<c64>() / m as f64).norm();
            let xi = fit_xi(&[&fl])?;
            let vacuous = sigma == 0.0 && kappa == 0.0;
            let tau_ratio =
                (sigma > 0.0).then(|| tau.powf(xi.xi) * kappa * total_time.powf(1.0 - xi.xi) / sigma);
            let tau_condition_satisfied = vacuous || tau_ratio.map_or(true, |r| r >= threshold);
            let den = other.iter().sum::<c64>().norm();
            let drift_ratio = (den > 0.0).then(|| drift.iter().sum::<c64>().norm() / den);
            pairs.push(PairFluctuation {
                alpha: a,
                beta: b,
                sigma,
                kappa,
                xi,
                tau_ratio,
                tau_condition_satisfied,
                vacuous,
                drift_ratio,
            });
            fluct_series.push(fl);
        }
    }
    let refs: Vec<&[c64]> = fluct_series.iter().map(|s| s.as_slice()).collect();
    let xi_pooled = fit_xi(&refs)?;
    let n = pairs.len() as f64;
    Ok(FluctuationReport {
        slices: m,
        tau,
        total_time,
        threshold,
        xi_pooled,
        sigma_max: pairs.iter().map(|p| p.sigma).fold(0.0, f64::max),
        sigma_mean: pairs.iter().map(|p| p.sigma).sum::<f64>() / n,
        kappa_max: pairs.iter().map(|p| p.kappa).fold(0.0, f64::max),
        kappa_mean: pairs.iter().map(|p| p.kappa).sum::<f64>() / n,
        tau_condition_satisfied: pairs.iter().all(|p| p.tau_condition_satisfied),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branch::Propagator;
    use crate::linalg::{conjugate_by, diagonalize, trace, ZERO};
    use crate::random::{gaussian, random_hermitian, random_state};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(ds: usize, de: usize, coupling: f64, seed: u64) -> BranchModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = diagonalize(&random_hermitian(de, 1.0 / (de as f64).sqrt(), &mut rng)).unwrap();
        let v = conjugate_by(&env.eigenvectors, &random_hermitian(de, 1.0 / (de as f64).sqrt(), &mut rng)).unwrap();
        let mut e_s: Vec<f64> = (0..ds).map(|_| gaussian(&mut rng)).collect();
        e_s.sort_by(f64::total_cmp);
        let h = linalg::scale(&random_hermitian(ds, 1.0, &mut rng), c64::new(coupling, 0.0));
        BranchModel::from_parts(e_s, h, env.eigenvalues, v).unwrap()
    }

    fn random_branches(ds: usize, de: usize, seed: u64) -> BranchSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BranchSet::from_state(&random_state(ds * de, &mut rng), ds, 0.0).unwrap()
    }

    fn window_splits(m: &BranchModel, ys: &YOperatorSet) -> YSplits {
        let w = AnalysisWindow::central(&m.env, 0.8).unwrap();
        YSplits::fit(ys, &m.env, &w, (w.len() / 10).clamp(1, 2)).unwrap()
    }

    #[test]
    fn y3_has_zero_diagonal_and_matches_commutator() {
        let m = random_model(2, 12, 0.5, 1);
        let ys = build_y_operators(&m);
        for i in 0..12 {
            assert_eq!(ys.y[2][(i, i)], ZERO);
        }
        assert!(ys.y3_defect <= 1e-10);
        let y4 = diagonalize(&ys.y[3]).unwrap();
        assert!(y4.eigenvalues[0] > -1e-12);
    }

    #[test]
    fn commuting_interaction_gives_zero_y3() {
        let mut m = random_model(2, 8, 0.5, 2);
        m.v = linalg::diag_matrix(&m.env.iter().map(|e| e * e).collect::<Vec<_>>());
        let ys = build_y_operators(&m);
        assert_eq!(max_abs(&ys.y[2]), 0.0);
    }

    #[test]
    fn decoupled_terms_are_phase_factors() {
        let m = random_model(3, 10, 0.0, 3);
        let b = random_branches(3, 10, 4);
        let ys = build_y_operators(&m);
        let rho = rdm_from_branches(&b);
        let g1 = g1_term(&b, &m, &ys).unwrap();
        let g2 = g2_term(&b, &m, &ys).unwrap();
        for a in 0..3 {
            for c in 0..3 {
                let w = m.e_s[c] - m.e_s[a];
                assert!((g1.total[(a, c)] - I * w * rho[(a, c)]).norm() < 1e-12);
                assert!((g2.direct[(a, c)] + 0.5 * w * w * rho[(a, c)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn routes_agree_and_terms_are_traceless() {
        for seed in 0..20 {
            let m = random_model(3, 9, 0.3 + 0.1 * seed as f64, 100 + seed);
            let b = random_branches(3, 9, 200 + seed);
            let ys = build_y_operators(&m);
            let g1 = g1_term(&b, &m, &ys).unwrap();
            let g2 = g2_term(&b, &m, &ys).unwrap();
            assert!(g2.route_defect() <= 1e-9, "route defect {}", g2.route_defect());
            assert!(max_abs_diff(&g1.total, &sum_all(&g1.eta)) <= 1e-12);
            assert!(trace(&g1.total).norm() <= 1e-10 && trace(&g2.direct).norm() <= 1e-10);
            assert!(linalg::hermitian_defect(&g1.total) <= 1e-12);
            assert!(linalg::hermitian_defect(&g2.direct) <= 1e-12);
        }
    }

    #[test]
    fn second_difference_oracle() {
        let m = random_model(2, 8, 0.7, 5);
        let b = random_branches(2, 8, 6);
        let ys = build_y_operators(&m);
        let p = Propagator::new(&m).unwrap();
        let h = 1e-3;
        let r = |t: f64| rdm_from_branches(&p.propagate(&b, t).unwrap());
        let second = linalg::scale(&(r(h) + r(-h) - linalg::scale(&r(0.0), c64::new(2.0, 0.0))), c64::new(0.5 / (h * h), 0.0));
        let g2 = g2_term(&b, &m, &ys).unwrap().direct;
        assert!(max_abs_diff(&second, &g2) / max_abs(&g2) <= 1e-4);
    }

    #[test]
    fn ledger_partitions_and_zeros() {
        let m = random_model(2, 40, 0.5, 7);
        let b = random_branches(2, 40, 8);
        let ys = build_y_operators(&m);
        let led = split_g_terms(&b, &m, &ys, &window_splits(&m, &ys)).unwrap();
        led.check().unwrap();
        assert_eq!(max_abs_diff(led.get(1, 1, 1), &g1_term(&b, &m, &ys).unwrap().eta[0]), 0.0);
        for l in 1..=2 {
            assert_eq!(max_abs(led.get(2, 3, l)), 0.0);
        }
        let mut g1 = CMat::zeros(2, 2);
        let mut g2 = CMat::zeros(2, 2);
        for eta in 1..=4 {
            g1 += led.eta_part(1, eta);
            g2 += led.eta_part(2, eta);
        }
        assert!(max_abs_diff(&g1, &led.g1) <= 1e-10 && max_abs_diff(&g2, &led.g2) <= 1e-10);
        assert_eq!(led.rows().len(), 2 * 4 * 4 * 4);
    }

    #[test]
    fn taylor_step_orders() {
        let m = random_model(2, 24, 0.6, 9);
        let b = random_branches(2, 24, 10);
        let ys = build_y_operators(&m);
        let led = split_g_terms(&b, &m, &ys, &window_splits(&m, &ys)).unwrap();
        assert_eq!(max_abs(&taylor_rdm_step(&led, 0.0).unwrap()), 0.0);
        assert!(taylor_rdm_step(&led, -1.0).is_err());
        let p = Propagator::new(&m).unwrap();
        let rho0 = rdm_from_branches(&b);
        let err = |tau: f64| {
            let exact = rdm_from_branches(&p.propagate(&b, tau).unwrap());
            let step = taylor_rdm_step(&led, tau).unwrap();
            assert!(trace(&step).norm() <= 1e-10);
            max_abs(&(exact - &rho0 - step))
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e1 / e2 >= 7.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn xi_of_synthetic_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seqs: Vec<Vec<c64>> = (0..64)
            .map(|_| (0..1024).map(|_| c64::new(gaussian(&mut rng), gaussian(&mut rng))).collect())
            .collect();
        let refs: Vec<&[c64]> = seqs.iter().map(|s| s.as_slice()).collect();
        let xi = fit_xi(&refs).unwrap();
        assert!((xi.xi - 0.5).abs() <= 0.1, "xi = {}", xi.xi);
        let frozen = vec![c64::new(0.3, -0.1); 256];
        assert!((fit_xi(&[&frozen]).unwrap().xi - 1.0).abs() <= 0.05);
        assert!(fit_xi(&[&frozen[..8]]).is_err());
    }

    #[test]
    fn decoupled_report_is_vacuous() {
        let m = random_model(2, 20, 0.0, 12);
        let b = random_branches(2, 20, 13);
        let ys = build_y_operators(&m);
        let sp = window_splits(&m, &ys);
        let p = Propagator::new(&m).unwrap();
        let tau = 0.1;
        let times: Vec<f64> = (0..16).map(|k| k as f64 * tau).collect();
        let leds: Vec<GTermLedger> = p
            .propagate_many(&b, &times)
            .unwrap()
            .iter()
            .map(|s| split_g_terms(s, &m, &ys, &sp).unwrap())
            .collect();
        let r = fluctuation_report(&leds, tau, DEFAULT_RATIO_THRESHOLD).unwrap();
        assert_eq!(r.sigma_max, 0.0);
        assert_eq!(r.kappa_max, 0.0);
        assert!(r.pairs.iter().all(|p| p.vacuous && p.tau_condition_satisfied));
        assert!(fluctuation_report(&leds[..8], tau, 10.0).is_err());
    }
}
