//! System, environment and interaction operators and the total Hamiltonian.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::{self, c64, diagonalize, hermitian_defect, kron, max_abs, CMat, ONE, ZERO};
use crate::random::goe_matrix;

const HERMITIAN_TOL: f64 = 1e-12;

/// The small system: energies and interaction factor in its current eigenbasis.
///
/// `frame` holds the current basis vectors as columns, expressed in the basis
/// the model was first written in. It stays the identity until `renormalize`
/// rotates the system basis.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub energies: Vec<f64>,
    pub h_is: CMat,
    pub frame: CMat,
}

impl SystemSpec {
    pub fn new(energies: Vec<f64>, h_is: CMat) -> Result<Self> {
        let d = energies.len();
        if d == 0 {
            return dim_err("system dimension must be positive");
        }
        if h_is.nrows() != d || h_is.ncols() != d {
            return dim_err(format!("H_IS is {}x{}, expected {d}x{d}", h_is.nrows(), h_is.ncols()));
        }
        if !energies.windows(2).all(|w| w[0] <= w[1]) {
            return invalid("system energies must be sorted ascending");
        }
        if hermitian_defect(&h_is) > HERMITIAN_TOL * max_abs(&h_is).max(1.0) {
            return invalid("H_IS is not Hermitian");
        }
        Ok(SystemSpec { energies, h_is, frame: linalg::identity(d) })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// H^S and H^IS in the original frame.
    pub fn original_frame(&self) -> (CMat, CMat) {
        let f = &self.frame;
        let hs = f * linalg::diag_matrix(&self.energies) * f.adjoint();
        let his = f * &self.h_is * f.adjoint();
        (hs, his)
    }
}

/// Open-boundary Ising chain with transverse field `g`, longitudinal field
/// `h` and an extra longitudinal field on site 0 that breaks reflection
/// symmetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainParams {
    pub j: f64,
    pub g: f64,
    pub h: f64,
    pub edge_field: f64,
    /// Site carrying the σ_z probe used as H^IE; defaults to L/2.
    pub probe_site: Option<usize>,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams { j: 1.0, g: 1.05, h: 0.5, edge_field: 0.1, probe_site: None }
    }
}

#[derive(Debug, Clone)]
pub enum EnvironmentKind {
    SpinChain(ChainParams),
    /// Element variance σ²; `None` means 1/d_E.
    Goe { variance: Option<f64> },
    Explicit { h_e: CMat, h_ie: CMat },
}

#[derive(Debug, Clone)]
pub struct EnvironmentSpec {
    pub kind: EnvironmentKind,
    pub dim: usize,
    pub seed: u64,
}

pub fn build_environment(spec: &EnvironmentSpec) -> Result<(CMat, CMat)> {
    match &spec.kind {
        EnvironmentKind::SpinChain(_) => build_spin_chain_environment(spec),
        EnvironmentKind::Goe { .. } => build_goe_environment(spec),
        EnvironmentKind::Explicit { h_e, h_ie } => {
            check_env_dim(spec.dim)?;
            for (name, m) in [("H_E", h_e), ("H_IE", h_ie)] {
                if m.nrows() != spec.dim || m.ncols() != spec.dim {
                    return dim_err(format!("{name} does not have dimension {}", spec.dim));
                }
                if hermitian_defect(m) > HERMITIAN_TOL * max_abs(m).max(1.0) {
                    return invalid(format!("{name} is not Hermitian"));
                }
            }
            Ok((h_e.clone(), h_ie.clone()))
        }
    }
}

fn check_env_dim(d: usize) -> Result<()> {
    if d < 2 {
        return dim_err(format!("environment dimension must be at least 2, got {d}"));
    }
    Ok(())
}

/// Builds the chain Hamiltonian and a σ_z probe, both dense.
///
/// Basis state `b` has site `k` up when bit `k` is set, and σ_z acts as
/// `2 b_k - 1`.
pub fn build_spin_chain_environment(spec: &EnvironmentSpec) -> Result<(CMat, CMat)> {
    let EnvironmentKind::SpinChain(p) = &spec.kind else {
        return invalid("spin-chain builder called with a non-chain spec");
    };
    let d = spec.dim;
    if d < 2 || !d.is_power_of_two() {
        return dim_err(format!("spin chain needs d_E = 2^L, got {d}"));
    }
    let l = d.trailing_zeros() as usize;
    let site = p.probe_site.unwrap_or(l / 2);
    if site >= l {
        return dim_err(format!("probe site {site} outside chain of length {l}"));
    }
    let sz = |b: usize, k: usize| if (b >> k) & 1 == 1 { 1.0 } else { -1.0 };
    let mut h = CMat::zeros(d, d);
    let mut probe = CMat::zeros(d, d);
    for b in 0..d {
        let mut diag = p.edge_field * sz(b, 0);
        for k in 0..l {
            diag += p.h * sz(b, k);
            if k + 1 < l {
                diag += p.j * sz(b, k) * sz(b, k + 1);
            }
            h[(b ^ (1 << k), b)] += c64::new(p.g, 0.0);
        }
        h[(b, b)] += c64::new(diag, 0.0);
        probe[(b, b)] = c64::new(sz(b, site), 0.0);
    }
    Ok((h, probe))
}

/// Two independent GOE matrices drawn from one seeded stream, H_E first.
pub fn build_goe_environment(spec: &EnvironmentSpec) -> Result<(CMat, CMat)> {
    let EnvironmentKind::Goe { variance } = &spec.kind else {
        return invalid("GOE builder called with a non-GOE spec");
    };
    check_env_dim(spec.dim)?;
    let var = variance.unwrap_or(1.0 / spec.dim as f64);
    if !(var > 0.0 && var.is_finite()) {
        return invalid(format!("GOE variance must be positive, got {var}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h_e = goe_matrix(spec.dim, var, &mut rng);
    let h_ie = goe_matrix(spec.dim, var, &mut rng);
    Ok((h_e, h_ie))
}

/// H = H^S ⊗ I + I ⊗ H^E + coupling · H^IS ⊗ H^IE.
#[derive(Debug, Clone)]
pub struct TotalModel {
    pub system: SystemSpec,
    pub h_e: CMat,
    pub h_ie: CMat,
    pub coupling: f64,
    pub renormalized: bool,
    pub h0_ie: f64,
}

impl TotalModel {
    pub fn new(system: SystemSpec, h_e: CMat, h_ie: CMat, coupling: f64) -> Result<Self> {
        let d = h_e.nrows();
        check_env_dim(d)?;
        if h_e.ncols() != d || h_ie.nrows() != d || h_ie.ncols() != d {
            return dim_err("H_E and H_IE must be square with equal dimensions");
        }
        for (name, m) in [("H_E", &h_e), ("H_IE", &h_ie)] {
            if hermitian_defect(m) > HERMITIAN_TOL * max_abs(m).max(1.0) {
                return invalid(format!("{name} is not Hermitian"));
            }
        }
        if !coupling.is_finite() {
            return invalid("coupling must be finite");
        }
        Ok(TotalModel { system, h_e, h_ie, coupling, renormalized: false, h0_ie: 0.0 })
    }

    pub fn d_s(&self) -> usize {
        self.system.dim()
    }

    pub fn d_e(&self) -> usize {
        self.h_e.nrows()
    }
}

/// Assembles H in the product basis (α, i) with α the slow index. The system
/// factors are taken in the original frame so that renormalization does not
/// change the result.
pub fn assemble_total_hamiltonian(model: &TotalModel) -> Result<CMat> {
    let (ds, de) = (model.d_s(), model.d_e());
    if model.h_ie.nrows() != de || model.system.h_is.nrows() != ds {
        return dim_err("inconsistent model dimensions");
    }
    let (hs, his) = model.system.original_frame();
    let ie = linalg::identity(de);
    let is = linalg::identity(ds);
    let c = c64::new(model.coupling, 0.0);
    Ok(kron(&hs, &ie) + kron(&is, &model.h_e) + kron(&linalg::scale(&his, c), &model.h_ie))
}

/// Moves the mean interaction `h0 · H^IS` into the system Hamiltonian and
/// rotates the system basis to the eigenbasis of the shifted H^S.
pub fn renormalize(model: &TotalModel, h0: f64) -> Result<TotalModel> {
    if model.renormalized {
        return Err(Error::State("model is already renormalized".into()));
    }
    if !h0.is_finite() {
        return invalid("h0 must be finite");
    }
    let mut out = model.clone();
    out.renormalized = true;
    out.h0_ie = h0;
    if h0 == 0.0 {
        return Ok(out);
    }
    let d = model.d_e();
    for i in 0..d {
        out.h_ie[(i, i)] -= c64::new(h0, 0.0);
    }
    let sys = &model.system;
    let shift = c64::new(model.coupling * h0, 0.0);
    let hs = linalg::diag_matrix(&sys.energies) + linalg::scale(&sys.h_is, shift);
    let spec = diagonalize(&hs)?;
    let q = &spec.eigenvectors;
    out.system = SystemSpec {
        energies: spec.eigenvalues.clone(),
        h_is: q.adjoint() * &sys.h_is * q,
        frame: &sys.frame * q,
    };
    linalg::symmetrize(&mut out.system.h_is);
    Ok(out)
}

pub fn pauli_x() -> CMat {
    CMat::from_fn(2, 2, |i, j| if i != j { ONE } else { ZERO })
}

pub fn pauli_z() -> CMat {
    linalg::diag_matrix(&[1.0, -1.0])
}
