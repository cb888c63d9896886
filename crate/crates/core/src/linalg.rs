//! Dense complex SVD and non-Hermitian eigendecomposition.
//!
//! The SVD runs on faer; the eigendecomposition starts from nalgebra's
//! complex Schur form and recovers eigenvectors from the triangular factor
//! by back substitution.

use faer::Mat;
use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 10_000;

/// Thin SVD `H = U diag(S) V^H` with `U: m x k`, `V: n x k`, `k = min(m, n)`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: DMatrix<Complex64>,
    /// Non-increasing singular values.
    pub s: Vec<f64>,
    /// Conjugate transpose of the right singular vectors, `k x n`.
    pub v_star: DMatrix<Complex64>,
}

impl SvdResult {
    /// First `r` left singular vectors as columns.
    pub fn left(&self, r: usize) -> DMatrix<Complex64> {
        self.u.columns(0, r).into_owned()
    }

    /// First `r` right singular vectors as columns, i.e. the leading `r`
    /// columns of `V` where `H = U S V^H`.
    pub fn right(&self, r: usize) -> DMatrix<Complex64> {
        self.v_star.rows(0, r).adjoint()
    }

    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let mut us = self.u.clone();
        for (j, &s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * &self.v_star
    }
}

pub fn svd(h: &DMatrix<Complex64>) -> Result<SvdResult> {
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let (m, n) = h.shape();
    let k = m.min(n);
    if k == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let a = Mat::<Complex64>::from_fn(m, n, |i, j| h[(i, j)]);
    let dec = a.thin_svd().map_err(|_| Error::NonConvergence("svd"))?;
    let (fu, fs, fv) = (dec.U(), dec.S(), dec.V());
    let s = (0..k).map(|j| fs[j].re).collect();
    let u = DMatrix::from_fn(m, k, |i, j| fu[(i, j)]);
    let v_star = DMatrix::from_fn(k, n, |i, j| fv[(j, i)].conj());
    Ok(SvdResult { u, s, v_star })
}

#[derive(Clone, Debug)]
pub struct EigResult {
    pub values: Vec<Complex64>,
    /// Unit-norm eigenvectors as columns; largest-modulus entry real positive.
    pub vectors: DMatrix<Complex64>,
    /// Smallest pairwise eigenvalue distance.
    pub min_gap: f64,
    /// `min_gap < 1e-8 * ||M||_F`; eigenvectors are then unreliable.
    pub near_defective: bool,
}

pub const NEAR_DEFECTIVE_RTOL: f64 = 1e-8;

pub fn eig(m: &DMatrix<Complex64>) -> Result<EigResult> {
    let (rows, cols) = m.shape();
    if rows != cols || rows == 0 {
        return Err(Error::InvalidInput(format!(
            "eigendecomposition needs a nonempty square matrix, got {rows}x{cols}"
        )));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let size = rows;
    let norm = m.norm();
    let (q, t) = Schur::try_new(m.clone(), f64::EPSILON, MAX_SWEEPS)
        .ok_or(Error::NonConvergence("schur"))?
        .unpack();

    let values: Vec<Complex64> = (0..size).map(|k| t[(k, k)]).collect();
    let small = (f64::EPSILON * norm).max(f64::MIN_POSITIVE);
    let mut vectors = DMatrix::zeros(size, size);
    for k in 0..size {
        let lambda = values[k];
        let mut y = DVector::<Complex64>::zeros(size);
        y[k] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let s: Complex64 = (j + 1..=k).map(|l| t[(j, l)] * y[l]).sum();
            let mut denom = t[(j, j)] - lambda;
            if denom.norm() < small {
                denom = Complex64::new(small, 0.0);
            }
            y[j] = -s / denom;
        }
        let mut v = &q * y;
        normalize_phase(&mut v);
        vectors.set_column(k, &v);
    }

    let mut min_gap = f64::INFINITY;
    for a in 0..size {
        for b in a + 1..size {
            min_gap = min_gap.min((values[a] - values[b]).norm());
        }
    }
    Ok(EigResult {
        values,
        vectors,
        min_gap,
        near_defective: min_gap < NEAR_DEFECTIVE_RTOL * norm,
    })
}

/// Scales `v` to unit 2-norm with its largest-modulus component real positive.
pub fn normalize_phase(v: &mut DVector<Complex64>) {
    let norm = v.norm();
    if norm == 0.0 {
        return;
    }
    let (idx, _) = v
        .iter()
        .enumerate()
        .fold((0, 0.0), |best, (i, z)| if z.norm() > best.1 { (i, z.norm()) } else { best });
    let pivot = v[idx];
    let phase = pivot.conj() / pivot.norm();
    *v *= phase / norm;
    v[idx] = Complex64::new(v[idx].norm(), 0.0);
}
