//! Dense matrix helpers, Hermitian diagonalization and the binary matrix container.

use std::io::{Read, Write};

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};

pub use faer::c64;

pub type CMat = Mat<c64>;
pub type RMat = Mat<f64>;

pub const ZERO: c64 = c64 { re: 0.0, im: 0.0 };
pub const ONE: c64 = c64 { re: 1.0, im: 0.0 };
pub const I: c64 = c64 { re: 0.0, im: 1.0 };

pub fn zeros(r: usize, c: usize) -> CMat {
    CMat::zeros(r, c)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn diag_matrix(d: &[f64]) -> CMat {
    let n = d.len();
    CMat::from_fn(n, n, |i, j| if i == j { c64::new(d[i], 0.0) } else { ZERO })
}

pub fn from_real(a: &RMat) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| c64::new(a[(i, j)], 0.0))
}

pub fn real_part(a: &CMat) -> RMat {
    RMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].re)
}

/// True when every entry has an exactly zero imaginary part.
pub fn is_real(a: &CMat) -> bool {
    (0..a.ncols()).all(|j| a.col_as_slice(j).iter().all(|z| z.im == 0.0))
}

pub fn max_abs(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for z in a.col_as_slice(j) {
            m = m.max(z.norm());
        }
    }
    m
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for (x, y) in a.col_as_slice(j).iter().zip(b.col_as_slice(j)) {
            m = m.max((x - y).norm());
        }
    }
    m
}

/// max |A_ij - conj(A_ji)|.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut m = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            m = m.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    m
}

pub fn trace(a: &CMat) -> c64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

pub fn adjoint(a: &CMat) -> CMat {
    a.adjoint().to_owned()
}

pub fn transpose(a: &CMat) -> CMat {
    a.transpose().to_owned()
}

pub fn scale(a: &CMat, s: c64) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

pub fn add(a: &CMat, b: &CMat) -> CMat {
    a + b
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// Kronecker product with `a` as the slow index.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    CMat::from_fn(ar * br, ac * bc, |r, c| a[(r / br, c / bc)] * b[(r % br, c % bc)])
}

/// Replaces the matrix by its Hermitian part in place.
pub fn symmetrize(a: &mut CMat) -> f64 {
    let n = a.nrows();
    let mut drift = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            let x = a[(i, j)];
            let y = a[(j, i)].conj();
            drift = drift.max((x - y).norm());
            let m = (x + y) * 0.5;
            a[(i, j)] = m;
            a[(j, i)] = m.conj();
        }
    }
    drift
}

/// `U† O U`, using real arithmetic when both inputs are real.
pub fn conjugate_by(u: &CMat, o: &CMat) -> Result<CMat> {
    if u.nrows() != o.nrows() || o.nrows() != o.ncols() {
        return dim_err(format!(
            "operator {}x{} does not match basis {}x{}",
            o.nrows(),
            o.ncols(),
            u.nrows(),
            u.ncols()
        ));
    }
    if is_real(u) && is_real(o) {
        let ur = real_part(u);
        let or = real_part(o);
        let t = &or * &ur;
        let r = ur.transpose() * &t;
        return Ok(from_real(&r));
    }
    let t = o * u;
    Ok(u.adjoint() * &t)
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMat,
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn reconstruct(&self) -> CMat {
        let u = &self.eigenvectors;
        let ud = CMat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * self.eigenvalues[j]);
        &ud * u.adjoint()
    }

    /// ‖U†U − I‖_max.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.eigenvectors.adjoint() * &self.eigenvectors;
        max_abs_diff(&g, &identity(self.dim()))
    }

    pub fn spectral_range(&self) -> f64 {
        match (self.eigenvalues.first(), self.eigenvalues.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Expresses a state given in the original basis in the eigenbasis.
    pub fn to_eigenbasis(&self, v: &[c64]) -> Vec<c64> {
        let u = &self.eigenvectors;
        (0..u.ncols())
            .map(|n| u.col_as_slice(n).iter().zip(v).map(|(a, b)| a.conj() * b).sum())
            .collect()
    }
}

/// Diagonalizes a Hermitian matrix. Real symmetric input is routed to the
/// real solver, which is several times faster.
pub fn diagonalize(a: &CMat) -> Result<SpectralData> {
    let n = a.nrows();
    if n != a.ncols() {
        return dim_err(format!("cannot diagonalize a {}x{} matrix", n, a.ncols()));
    }
    if n == 0 {
        return dim_err("cannot diagonalize an empty matrix");
    }
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let defect = hermitian_defect(a);
    if defect > 1e-10 * scale {
        return invalid(format!("matrix is not Hermitian (defect {defect:.3e})"));
    }
    if is_real(a) {
        let r = RMat::from_fn(n, n, |i, j| 0.5 * (a[(i, j)].re + a[(j, i)].re));
        let e = r
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
        let eigenvalues: Vec<f64> = e.S().column_vector().iter().copied().collect();
        let eigenvectors = from_real(&e.U().to_owned());
        return Ok(sorted(eigenvalues, eigenvectors));
    }
    let e = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
    let eigenvalues: Vec<f64> = e.S().column_vector().iter().map(|z| z.re).collect();
    Ok(sorted(eigenvalues, e.U().to_owned()))
}

fn sorted(values: Vec<f64>, vectors: CMat) -> SpectralData {
    if values.windows(2).all(|w| w[0] <= w[1]) {
        return SpectralData { eigenvalues: values, eigenvectors: vectors };
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let eigenvalues = idx.iter().map(|&k| values[k]).collect();
    let eigenvectors = CMat::from_fn(vectors.nrows(), vectors.ncols(), |i, j| vectors[(i, idx[j])]);
    SpectralData { eigenvalues, eigenvectors }
}

const MAGIC: &[u8; 4] = b"EBMX";
const CONTAINER_VERSION: u32 = 1;
const ELEM_COMPLEX_F64: u32 = 1;

/// Writes a matrix as: magic `EBMX`, u32 version, u32 element type
/// (1 = complex f64), u64 rows, u64 cols, then row-major little-endian
/// (re, im) pairs.
pub fn write_matrix<W: Write>(mut w: W, a: &CMat) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    w.write_all(&ELEM_COMPLEX_F64.to_le_bytes())?;
    w.write_all(&(a.nrows() as u64).to_le_bytes())?;
    w.write_all(&(a.ncols() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(a.ncols() * 16);
    for i in 0..a.nrows() {
        buf.clear();
        for j in 0..a.ncols() {
            let z = a[(i, j)];
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<CMat> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a matrix container".into()));
    }
    let version = read_u32(&mut r)?;
    if version > CONTAINER_VERSION {
        return Err(Error::SchemaVersion { found: version, supported: CONTAINER_VERSION });
    }
    let elem = read_u32(&mut r)?;
    if elem != ELEM_COMPLEX_F64 {
        return Err(Error::Format(format!("unsupported element type {elem}")));
    }
    let rows = read_u64(&mut r)? as usize;
    let cols = read_u64(&mut r)? as usize;
    let mut body = vec![0u8; rows * cols * 16];
    r.read_exact(&mut body)?;
    let f = |k: usize| f64::from_le_bytes(body[k..k + 8].try_into().unwrap());
    Ok(CMat::from_fn(rows, cols, |i, j| {
        let k = (i * cols + j) * 16;
        c64::new(f(k), f(k + 8))
    }))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Plain serializable form of a complex matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&CMat> for MatrixRecord {
    fn from(a: &CMat) -> Self {
        let mut re = Vec::with_capacity(a.nrows() * a.ncols());
        let mut im = Vec::with_capacity(a.nrows() * a.ncols());
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                re.push(a[(i, j)].re);
                im.push(a[(i, j)].im);
            }
        }
        MatrixRecord { rows: a.nrows(), cols: a.ncols(), re, im }
    }
}

impl MatrixRecord {
    pub fn to_mat(&self) -> CMat {
        CMat::from_fn(self.rows, self.cols, |i, j| {
            let k = i * self.cols + j;
            c64::new(self.re[k], self.im[k])
        })
    }
}
