//! ETH statistics of an environment observable in the H^E eigenbasis.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::{conjugate_by, CMat, SpectralData};
use crate::stats::{interp, linear_fit, mean, moving_average};

/// Matrix elements O_ij = ⟨i|O|j⟩ in the eigenbasis of H^E.
#[derive(Debug, Clone)]
pub struct ElementTable {
    pub energies: Vec<f64>,
    pub o_eig: CMat,
}

impl ElementTable {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.o_eig[(i, i)].re).collect()
    }
}

pub fn matrix_elements_in_eigenbasis(o: &CMat, spectral: &SpectralData) -> Result<ElementTable> {
    let o_eig = conjugate_by(&spectral.eigenvectors, o)?;
    Ok(ElementTable { energies: spectral.eigenvalues.clone(), o_eig })
}

/// Contiguous range of levels `first..last` and its energy bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub e_min: f64,
    pub e_max: f64,
    pub first: usize,
    pub last: usize,
}

impl AnalysisWindow {
    /// The central `fraction` of the levels by count.
    pub fn central(energies: &[f64], fraction: f64) -> Result<Self> {
        let n = energies.len();
        if !(fraction > 0.0 && fraction <= 1.0) {
            return invalid(format!("window fraction must lie in (0, 1], got {fraction}"));
        }
        let count = ((n as f64 * fraction).round() as usize).clamp(1, n);
        let first = (n - count) / 2;
        let last = first + count;
        Ok(AnalysisWindow { e_min: energies[first], e_max: energies[last - 1], first, last })
    }

    /// All levels with energy in `[e_min, e_max]`.
    pub fn from_energies(energies: &[f64], e_min: f64, e_max: f64) -> Result<Self> {
        let first = energies.partition_point(|&e| e < e_min);
        let last = energies.partition_point(|&e| e <= e_max);
        if last <= first {
            return invalid(format!("no levels in [{e_min}, {e_max}]"));
        }
        Ok(AnalysisWindow { e_min, e_max, first, last })
    }

    pub fn len(&self) -> usize {
        self.last - self.first
    }

    pub fn is_empty(&self) -> bool {
        self.last == self.first
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.e_min + self.e_max)
    }

    pub fn mean_spacing(&self, energies: &[f64]) -> f64 {
        let n = self.len();
        if n < 2 {
            return f64::NAN;
        }
        (energies[self.last - 1] - energies[self.first]) / (n - 1) as f64
    }
}

pub fn default_half_width(d_e: usize) -> usize {
    (d_e / 200).max(5)
}

/// Smooth diagonal function O(e) and its linearization at the window center.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagonalFit {
    /// (mean energy, mean diagonal element) over each moving-average window.
    pub samples: Vec<(f64, f64)>,
    /// O(e_i) at every level.
    pub smooth: Vec<f64>,
    pub slope0: f64,
    /// O(e) at the window center.
    pub o0: f64,
    pub center: f64,
    pub half_width: usize,
}

impl DiagonalFit {
    pub fn value_at(&self, e: f64) -> f64 {
        let xs: Vec<f64> = self.samples.iter().map(|s| s.0).collect();
        let ys: Vec<f64> = self.samples.iter().map(|s| s.1).collect();
        interp(&xs, &ys, e)
    }
}

pub fn fit_diagonal_function(
    table: &ElementTable,
    window: &AnalysisWindow,
    half_width: usize,
) -> Result<DiagonalFit> {
    let n = table.dim();
    if window.last > n || window.is_empty() {
        return dim_err("window exceeds the table");
    }
    if window.len() < 10 * half_width.max(1) {
        return invalid(format!(
            "window holds {} levels, need at least {}",
            window.len(),
            10 * half_width.max(1)
        ));
    }
    let diag = table.diagonal();
    let ma_e = moving_average(&table.energies, half_width);
    let ma_o = moving_average(&diag, half_width);
    let samples: Vec<(f64, f64)> = ma_e.iter().copied().zip(ma_o.iter().copied()).collect();
    let smooth: Vec<f64> = table.energies.iter().map(|&e| interp(&ma_e, &ma_o, e)).collect();
    let xs = &table.energies[window.first..window.last];
    let ys = &diag[window.first..window.last];
    let slope0 = linear_fit(xs, ys).slope;
    let center = window.center();
    let o0 = interp(&ma_e, &ma_o, center);
    Ok(DiagonalFit { samples, smooth, slope0, o0, center, half_width })
}

/// Gaussian-kernel level density on a uniform grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityOfStates {
    pub grid: Vec<f64>,
    pub rho: Vec<f64>,
    pub drho: Vec<f64>,
    pub smoothing: f64,
    pub levels: usize,
}

impl DensityOfStates {
    pub fn rho_at(&self, e: f64) -> f64 {
        self.lookup(&self.rho, e)
    }

    /// d ln ρ / de.
    pub fn beta_at(&self, e: f64) -> f64 {
        self.lookup(&self.drho, e) / self.rho_at(e)
    }

    pub fn integral(&self) -> f64 {
        let h = self.grid[1] - self.grid[0];
        let n = self.rho.len();
        h * (self.rho.iter().sum::<f64>() - 0.5 * (self.rho[0] + self.rho[n - 1]))
    }

    fn lookup(&self, ys: &[f64], e: f64) -> f64 {
        let n = self.grid.len();
        let h = self.grid[1] - self.grid[0];
        let x = (e - self.grid[0]) / h;
        if x <= 0.0 {
            return ys[0];
        }
        if x >= (n - 1) as f64 {
            return ys[n - 1];
        }
        let k = x.floor() as usize;
        let t = x - k as f64;
        ys[k] * (1.0 - t) + ys[k + 1] * t
    }
}

pub const MIN_DOS_LEVELS: usize = 100;

pub fn estimate_density_of_states(eigenvalues: &[f64], smoothing_width: f64) -> Result<DensityOfStates> {
    let n = eigenvalues.len();
    if n < MIN_DOS_LEVELS {
        return invalid(format!("need at least {MIN_DOS_LEVELS} levels for a density estimate, got {n}"));
    }
    let s = smoothing_width;
    if !(s > 0.0 && s.is_finite()) {
        return invalid(format!("smoothing width must be positive, got {s}"));
    }
    let (lo, hi) = (eigenvalues[0] - 4.0 * s, eigenvalues[n - 1] + 4.0 * s);
    let points = (((hi - lo) / (0.25 * s)).ceil() as usize + 1).clamp(256, 400_000);
    let h = (hi - lo) / (points - 1) as f64;
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * s);
    let cut = 8.0 * s;
    let mut grid = Vec::with_capacity(points);
    let mut rho = Vec::with_capacity(points);
    let mut drho = Vec::with_capacity(points);
    for k in 0..points {
        let e = lo + h * k as f64;
        let a = eigenvalues.partition_point(|&x| x < e - cut);
        let b = eigenvalues.partition_point(|&x| x <= e + cut);
        let (mut r, mut d) = (0.0, 0.0);
        for &ek in &eigenvalues[a..b] {
            let u = (e - ek) / s;
            let w = norm * (-0.5 * u * u).exp();
            r += w;
            d -= u / s * w;
        }
        grid.push(e);
        rho.push(r);
        drho.push(d);
    }
    Ok(DensityOfStates { grid, rho, drho, smoothing: s, levels: n })
}

/// Uniform (e⁰, ω) binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FGrid {
    pub e0_edges: Vec<f64>,
    pub omega_edges: Vec<f64>,
}

impl FGrid {
    /// `e0_bins` bins spanning `[e0_lo, e0_hi]`; ω bins of width `omega_bin`
    /// centered on ω = 0 and covering at least `±omega_max`.
    pub fn new(e0_lo: f64, e0_hi: f64, e0_bins: usize, omega_bin: f64, omega_max: f64) -> Result<Self> {
        if e0_bins == 0 || !(e0_hi > e0_lo) {
            return invalid("empty e0 range");
        }
        if !(omega_bin > 0.0) || !(omega_max > 0.0) {
            return invalid("omega bin width and range must be positive");
        }
        let de = (e0_hi - e0_lo) / e0_bins as f64;
        let e0_edges = (0..=e0_bins).map(|k| e0_lo + de * k as f64).collect();
        let half = (omega_max / omega_bin - 0.5).ceil().max(0.0) as usize;
        let omega_edges = (0..=2 * half + 1)
            .map(|k| (k as f64 - half as f64 - 0.5) * omega_bin)
            .collect();
        Ok(FGrid { e0_edges, omega_edges })
    }

    pub fn n_e0(&self) -> usize {
        self.e0_edges.len() - 1
    }

    pub fn n_omega(&self) -> usize {
        self.omega_edges.len() - 1
    }

    fn bin(edges: &[f64], x: f64) -> Option<usize> {
        let n = edges.len() - 1;
        let w = (edges[n] - edges[0]) / n as f64;
        let k = ((x - edges[0]) / w).floor();
        if k < 0.0 {
            return None;
        }
        let k = k as usize;
        if k < n {
            Some(k)
        } else if x == edges[n] {
            Some(n - 1)
        } else {
            None
        }
    }

    pub fn cell(&self, e0: f64, omega: f64) -> Option<(usize, usize)> {
        Some((Self::bin(&self.e0_edges, e0)?, Self::bin(&self.omega_edges, omega)?))
    }
}

/// Binned |f(e⁰, ω)|² with per-cell sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FTable {
    pub grid: FGrid,
    /// Row-major over (e⁰ bin, ω bin).
    pub f2: Vec<f64>,
    pub count: Vec<usize>,
    pub min_count: usize,
    /// Full spectral width of H^E, used when no decay is found.
    pub spectral_range: f64,
}

impl FTable {
    pub fn index(&self, e0_bin: usize, omega_bin: usize) -> usize {
        e0_bin * self.grid.n_omega() + omega_bin
    }

    pub fn populated(&self, e0_bin: usize, omega_bin: usize) -> bool {
        self.count[self.index(e0_bin, omega_bin)] >= self.min_count
    }

    pub fn e0_center(&self, k: usize) -> f64 {
        0.5 * (self.grid.e0_edges[k] + self.grid.e0_edges[k + 1])
    }

    pub fn omega_center(&self, k: usize) -> f64 {
        0.5 * (self.grid.omega_edges[k] + self.grid.omega_edges[k + 1])
    }

    /// |f|² per cell where under-populated cells take the value of the
    /// nearest populated cell in the same row (or nearest populated row).
    pub fn filled_f2(&self) -> Vec<f64> {
        let (ne, nw) = (self.grid.n_e0(), self.grid.n_omega());
        let mut out = vec![f64::NAN; ne * nw];
        let mut row_ok = vec![false; ne];
        for a in 0..ne {
            let pop: Vec<usize> = (0..nw).filter(|&b| self.populated(a, b)).collect();
            if pop.is_empty() {
                continue;
            }
            row_ok[a] = true;
            for b in 0..nw {
                let k = pop.partition_point(|&p| p < b);
                let near = match (k.checked_sub(1).map(|i| pop[i]), pop.get(k).copied()) {
                    (Some(l), Some(r)) => if b - l <= r - b { l } else { r },
                    (Some(l), None) => l,
                    (None, Some(r)) => r,
                    (None, None) => unreachable!(),
                };
                out[a * nw + b] = self.f2[self.index(a, near)];
            }
        }
        if !row_ok.iter().any(|&x| x) {
            return vec![0.0; ne * nw];
        }
        for a in 0..ne {
            if row_ok[a] {
                continue;
            }
            let src = (0..ne).filter(|&r| row_ok[r]).min_by_key(|&r| r.abs_diff(a)).unwrap();
            for b in 0..nw {
                out[a * nw + b] = out[src * nw + b];
            }
        }
        out
    }

    /// ω-profile (count-weighted merge of the rows touching `e0`).
    pub fn profile_at(&self, e0: f64) -> Vec<(f64, f64, usize)> {
        let ne = self.grid.n_e0();
        let width = (self.grid.e0_edges[ne] - self.grid.e0_edges[0]) / ne as f64;
        let rows: Vec<usize> = (0..ne)
            .filter(|&k| (self.e0_center(k) - e0).abs() <= 0.5 * width * (1.0 + 1e-9))
            .collect();
        (0..self.grid.n_omega())
            .map(|b| {
                let (mut s, mut c) = (0.0, 0usize);
                for &r in &rows {
                    let i = self.index(r, b);
                    s += self.f2[i] * self.count[i] as f64;
                    c += self.count[i];
                }
                (self.omega_center(b), if c > 0 { s / c as f64 } else { 0.0 }, c)
            })
            .collect()
    }
}

pub const DEFAULT_MIN_CELL_COUNT: usize = 20;

/// |f(e⁰, ω)|² per cell as the mean of ρ(e⁰_ij)·|O_ij|² over ordered pairs i ≠ j.
pub fn extract_offdiagonal_function(
    table: &ElementTable,
    dos: &DensityOfStates,
    grid: &FGrid,
) -> Result<FTable> {
    let n = table.dim();
    if n < 2 {
        return invalid("empty window");
    }
    let cells = grid.n_e0() * grid.n_omega();
    let mut sum = vec![0.0; cells];
    let mut count = vec![0usize; cells];
    let e = &table.energies;
    let lo = grid.e0_edges[0];
    let hi = *grid.e0_edges.last().unwrap();
    for j in 0..n {
        let col = table.o_eig.col_as_slice(j);
        for i in 0..n {
            if i == j {
                continue;
            }
            let e0 = 0.5 * (e[i] + e[j]);
            if e0 < lo || e0 > hi {
                continue;
            }
            let Some((a, b)) = grid.cell(e0, e[i] - e[j]) else { continue };
            let k = a * grid.n_omega() + b;
            sum[k] += dos.rho_at(e0) * col[i].norm_sqr();
            count[k] += 1;
        }
    }
    if count.iter().all(|&c| c == 0) {
        return invalid("no level pairs fall inside the grid");
    }
    let f2 = sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    Ok(FTable {
        grid: grid.clone(),
        f2,
        count,
        min_count: DEFAULT_MIN_CELL_COUNT,
        spectral_range: e[n - 1] - e[0],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub w_f: f64,
    pub f0: f64,
    /// Set when the profile never drops below f0/e; `w_f` is then the full
    /// spectral range.
    pub no_decay: bool,
    /// Smoothed (ω, |f|) on populated bins.
    pub profile: Vec<(f64, f64)>,
}

/// w_f as the full width where the smoothed |f(ω)| falls below f0/e, taken
/// at the center row of the table.
pub fn estimate_bandwidth_and_plateau(ft: &FTable, e0: f64) -> Result<Bandwidth> {
    let raw: Vec<(f64, f64)> = ft
        .profile_at(e0)
        .into_iter()
        .filter(|p| p.2 >= ft.min_count)
        .map(|p| (p.0, p.1))
        .collect();
    if raw.len() < 5 {
        return invalid("f table is not populated near omega = 0");
    }
    let omegas: Vec<f64> = raw.iter().map(|p| p.0).collect();
    let fs: Vec<f64> = raw.iter().map(|p| p.1.max(0.0).sqrt()).collect();
    let smooth = moving_average(&fs, 2);
    let c = omegas
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|p| p.0)
        .unwrap();
    if omegas[c].abs() > 0.5 * (ft.grid.omega_edges[1] - ft.grid.omega_edges[0]) * 3.0 {
        return invalid("f table is not populated near omega = 0");
    }
    let lo = c.saturating_sub(2);
    let hi = (c + 3).min(raw.len());
    let f0_init = mean(&raw[lo..hi].iter().map(|p| p.1).collect::<Vec<_>>()).sqrt();
    let thr = f0_init / std::f64::consts::E;
    let cross = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = c;
        for k in range {
            if smooth[k] < thr {
                let (x0, x1, y0, y1) = (omegas[prev], omegas[k], smooth[prev], smooth[k]);
                return Some(if y0 == y1 { x1 } else { x0 + (thr - y0) * (x1 - x0) / (y1 - y0) });
            }
            prev = k;
        }
        None
    };
    let right = cross(&mut (c + 1..raw.len()));
    let left = cross(&mut (0..c).rev());
    let (w_f, no_decay) = match (left, right) {
        (Some(l), Some(r)) if f0_init > 0.0 => (r - l, false),
        _ => (ft.spectral_range, true),
    };
    let inside: Vec<f64> = raw.iter().filter(|p| p.0.abs() < 0.5 * w_f).map(|p| p.1).collect();
    let f0 = if inside.is_empty() { f0_init } else { mean(&inside).sqrt() };
    let profile = omegas.into_iter().zip(smooth).collect();
    Ok(Bandwidth { w_f, f0, no_decay, profile })
}

/// var(O_ii − O(e_i)) over the window divided by the mean |O_ij|² of
/// near-diagonal pairs 0 < |i − j| ≤ half_width.
pub fn diagonal_fluctuation_factor(table: &ElementTable, window: &AnalysisWindow, fit: &DiagonalFit) -> Result<f64> {
    let hw = fit.half_width.max(1);
    if window.len() < 2 * hw + 2 || window.last > table.dim() {
        return invalid("window too small for the diagonal fluctuation factor");
    }
    let res: Vec<f64> = (window.first..window.last).map(|i| table.o_eig[(i, i)].re - fit.smooth[i]).collect();
    let m = mean(&res);
    let num = res.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / res.len() as f64;
    if num == 0.0 {
        return Ok(0.0);
    }
    let n = table.dim();
    let (mut s, mut c) = (0.0, 0usize);
    for i in window.first..window.last {
        for j in i.saturating_sub(hw)..(i + hw + 1).min(n) {
            if j != i {
                s += table.o_eig[(i, j)].norm_sqr();
                c += 1;
            }
        }
    }
    let den = s / c as f64;
    if den == 0.0 {
        return Err(Error::Numerical("off-diagonal elements vanish; eta is undefined".into()));
    }
    Ok(num / den)
}

/// h^IE2(e) from (a) the moving-averaged diagonal of O² and (b) the sum
/// Σ_j f²(e⁰, ω)/ρ(e⁰) over a full-spectrum f table, both averaged per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H2Profile {
    pub bin_edges: Vec<f64>,
    pub centers: Vec<f64>,
    pub direct: Vec<f64>,
    pub from_f: Vec<f64>,
    /// Moving-averaged diagonal of O² per level, for interpolation.
    pub level_energies: Vec<f64>,
    pub level_direct: Vec<f64>,
}

impl H2Profile {
    pub fn direct_at(&self, e: f64) -> f64 {
        interp(&self.level_energies, &self.level_direct, e)
    }

    pub fn max_relative_deviation(&self) -> f64 {
        self.direct
            .iter()
            .zip(&self.from_f)
            .map(|(a, b)| ((a - b) / a).abs())
            .fold(0.0, f64::max)
    }
}

pub fn compute_h_ie2_diagonal(
    table: &ElementTable,
    dos: &DensityOfStates,
    window: &AnalysisWindow,
    params: &EthParams,
) -> Result<H2Profile> {
    let n = table.dim();
    let e = &table.energies;
    let o2: Vec<f64> = (0..n).map(|i| (0..n).map(|j| table.o_eig[(i, j)].norm_sqr()).sum()).collect();
    let hw = params.half_width.unwrap_or_else(|| default_half_width(n));
    let level_direct = moving_average(&o2, hw);

    let range = e[n - 1] - e[0];
    let spacing = window.mean_spacing(e);
    let full = FGrid::new(e[0], e[n - 1], params.full_e0_bins, params.omega_bin_spacings * spacing, range)?;
    let mut ft = extract_offdiagonal_function(table, dos, &full)?;
    ft.min_count = params.min_cell_count;
    let filled = ft.filled_f2();
    let nw = full.n_omega();
    let per_level: Vec<f64> = (0..n)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let e0 = 0.5 * (e[i] + e[j]);
                if let Some((a, b)) = full.cell(e0, e[i] - e[j]) {
                    s += filled[a * nw + b] / dos.rho_at(e0);
                }
            }
            s
        })
        .collect();

    let bins = params.h2_bins.max(1);
    let width = (window.e_max - window.e_min) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|k| window.e_min + width * k as f64).collect();
    let mut centers = Vec::with_capacity(bins);
    let mut direct = Vec::with_capacity(bins);
    let mut from_f = Vec::with_capacity(bins);
    for k in 0..bins {
        let idx: Vec<usize> = (window.first..window.last)
            .filter(|&i| e[i] >= bin_edges[k] && (e[i] < bin_edges[k + 1] || (k + 1 == bins && e[i] <= bin_edges[k + 1])))
            .collect();
        if idx.is_empty() {
            continue;
        }
        centers.push(0.5 * (bin_edges[k] + bin_edges[k + 1]));
        direct.push(mean(&idx.iter().map(|&i| level_direct[i]).collect::<Vec<_>>()));
        from_f.push(mean(&idx.iter().map(|&i| per_level[i]).collect::<Vec<_>>()));
    }
    Ok(H2Profile { bin_edges, centers, direct, from_f, level_energies: e.clone(), level_direct })
}

/// Tunable analysis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EthParams {
    pub window_fraction: f64,
    /// Moving-average half-width for O(e); defaults to max(5, d_E/200).
    pub half_width: Option<usize>,
    pub omega_bin_spacings: f64,
    pub e0_bins: usize,
    pub smoothing_spacings: f64,
    pub min_cell_count: usize,
    pub h2_bins: usize,
    pub full_e0_bins: usize,
    /// Compute the f-table route of h^IE2 (quadratic cost in d_E).
    pub h2_from_f: bool,
}

impl Default for EthParams {
    fn default() -> Self {
        EthParams {
            window_fraction: 0.6,
            half_width: None,
            omega_bin_spacings: 20.0,
            e0_bins: 8,
            smoothing_spacings: 30.0,
            min_cell_count: DEFAULT_MIN_CELL_COUNT,
            h2_bins: 8,
            full_e0_bins: 16,
            h2_from_f: true,
        }
    }
}

/// Everything extracted for one observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EthStatistics {
    pub window: AnalysisWindow,
    pub diag_samples: Vec<(f64, f64)>,
    pub slope0: f64,
    pub o0: f64,
    pub f_table: FTable,
    /// (e, ρ_dos(e)) across the window.
    pub rho_dos: Vec<(f64, f64)>,
    pub dos_smoothing: f64,
    pub beta: f64,
    pub w_f: f64,
    pub f0: f64,
    pub w_f_no_decay: bool,
    pub eta_diag: f64,
    pub h_ie2: Option<H2Profile>,
    pub params: EthParams,
}

/// Intermediate products of `analyze_operator` that later stages reuse.
#[derive(Debug, Clone)]
pub struct EthAnalysis {
    pub stats: EthStatistics,
    pub fit: DiagonalFit,
    pub dos: DensityOfStates,
}

pub fn analyze_operator(table: &ElementTable, params: &EthParams) -> Result<EthAnalysis> {
    let e = &table.energies;
    let n = e.len();
    let window = AnalysisWindow::central(e, params.window_fraction)?;
    let hw = params.half_width.unwrap_or_else(|| default_half_width(n));
    let fit = fit_diagonal_function(table, &window, hw)?;
    let spacing = window.mean_spacing(e);
    let dos = estimate_density_of_states(e, params.smoothing_spacings * spacing)?;
    let grid = FGrid::new(window.e_min, window.e_max, params.e0_bins, params.omega_bin_spacings * spacing, e[n - 1] - e[0])?;
    let mut f_table = extract_offdiagonal_function(table, &dos, &grid)?;
    f_table.min_count = params.min_cell_count;
    let bw = estimate_bandwidth_and_plateau(&f_table, window.center())?;
    let eta_diag = diagonal_fluctuation_factor(table, &window, &fit)?;
    let h_ie2 = if params.h2_from_f { Some(compute_h_ie2_diagonal(table, &dos, &window, params)?) } else { None };
    let samples = 64;
    let rho_dos = (0..samples)
        .map(|k| {
            let x = window.e_min + (window.e_max - window.e_min) * k as f64 / (samples - 1) as f64;
            (x, dos.rho_at(x))
        })
        .collect();
    let stats = EthStatistics {
        window,
        diag_samples: fit.samples.clone(),
        slope0: fit.slope0,
        o0: fit.o0,
        f_table,
        rho_dos,
        dos_smoothing: dos.smoothing,
        beta: dos.beta_at(window.center()),
        w_f: bw.w_f,
        f0: bw.f0,
        w_f_no_decay: bw.no_decay,
        eta_diag,
        h_ie2,
        params: params.clone(),
    };
    Ok(EthAnalysis { stats, fit, dos })
}
