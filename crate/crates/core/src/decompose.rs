//! Recovery of frequencies and weights from a truncated moment sequence.
//!
//! Pipeline: assemble `H = H_sigma^{d1,d2}` and the shifted matrices
//! `H_i = H_{x_i * sigma}^{d1,d2}`; take the SVD `H = U S V^H`; keep the
//! numerical rank `r`; form the multiplication matrices
//! `M_i = S_r^{-1} U_r^H H_i V_r` in the basis given by the first `r` right
//! singular vectors; diagonalize a random real combination `sum l_i M_i`.
//! Each eigenvector `v_j` yields the frequency `xi_j` (one Rayleigh quotient
//! per `M_i`) and the weight
//!
//! ```text
//! w_j = (row_1(H) V_r v_j) / (sum_beta xi_j^beta (V_r v_j)_beta)
//! ```
//!
//! where `row_1(H)` is the row of the constant monomial.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hankel::{build_hankel, build_shifted_hankel, degree_split, HankelMatrix};
use crate::linalg::{eig, svd, SvdResult};
use crate::model::{cmp_freq, PolyExpModel, Term};
use crate::moments::{MomentSequence, MonomialSet};

pub const DEFAULT_RANK_TOL: f64 = 1e-6;

/// Attempts at drawing a combination `sum l_i M_i` with separated eigenvalues.
pub const MAX_COMBINATION_ATTEMPTS: usize = 3;

/// Relative eigen-residual above which the Rayleigh quotient is replaced by
/// the pivot-entry ratio, if that ratio does better.
const RAYLEIGH_FALLBACK_RTOL: f64 = 1e-8;

const WEIGHT_DENOM_RTOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    /// Keep singular values with `s_k / s_1 >= rank_tol`.
    pub rank_tol: f64,
    /// Seed for the random combination coefficients.
    pub seed: u64,
    /// Overrides the default `(d1, d2)` split.
    pub degrees: Option<(usize, usize)>,
    /// Forces the rank instead of thresholding singular values.
    pub rank: Option<usize>,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions {
            rank_tol: DEFAULT_RANK_TOL,
            seed: 0,
            degrees: None,
            rank: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub d1: usize,
    pub d2: usize,
    pub rows: usize,
    pub cols: usize,
    /// The rank hit `min(rows, cols)`, so the true rank may be larger.
    pub rank_possibly_truncated: bool,
    /// Coefficients `l_i` of the combination that was diagonalized.
    pub combination: Vec<f64>,
    pub combination_attempts: usize,
    pub min_eigengap: f64,
    /// `max_{i<k} ||M_i M_k - M_k M_i||_F / (||M_i||_F ||M_k||_F)`.
    pub max_commutator: f64,
    /// `||M_i v_j - xi_{j,i} v_j||_2`, indexed `[j][i]` in output term order.
    pub eigen_residuals: Vec<Vec<f64>>,
    pub max_eigen_residual: f64,
}

#[derive(Clone, Debug)]
pub struct DecomposeResult {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// `M_1, ..., M_n`, each `r x r`.
    pub multiplication: Vec<DMatrix<Complex64>>,
    /// Eigenvectors `v_j` as columns, in output term order.
    pub eigenvectors: DMatrix<Complex64>,
    pub model: PolyExpModel,
    pub diagnostics: Diagnostics,
}

/// Largest `r` with `s_r / s_1 >= tol`.
pub fn numerical_rank(s: &[f64], tol: f64) -> Result<usize> {
    let s1 = match s.first() {
        Some(&s1) if s1 > 0.0 && s1.is_finite() => s1,
        _ => return Err(Error::RankZero),
    };
    Ok(s.iter().take_while(|&&sk| sk / s1 >= tol).count())
}

/// `M_i = S_r^{-1} U_r^H H_i V_r` for every shifted matrix `H_i`.
pub fn multiplication_matrices(
    shifted: &[HankelMatrix],
    dec: &SvdResult,
    r: usize,
) -> Result<Vec<DMatrix<Complex64>>> {
    let max = dec.s.len();
    if r == 0 || r > max {
        return Err(Error::RankTooLarge { rank: r, max });
    }
    let sr = dec.s[r - 1];
    // s_r at rounding level of s_1 is zero
    if !(sr > f64::EPSILON * dec.s[0]) {
        return Err(Error::SingularBlock(sr));
    }
    let ur_h = dec.left(r).adjoint();
    let vr = dec.right(r);
    Ok(shifted
        .iter()
        .map(|h| {
            let mut m = &ur_h * &h.entries * &vr;
            for (k, mut row) in m.row_iter_mut().enumerate() {
                row /= Complex64::new(dec.s[k], 0.0);
            }
            m
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct JointEigen {
    /// Unit-norm common eigenvectors as columns.
    pub vectors: DMatrix<Complex64>,
    /// `freqs[j][i] = xi_{j,i}`.
    pub freqs: Vec<Vec<Complex64>>,
    /// `residuals[j][i] = ||M_i v_j - xi_{j,i} v_j||_2`.
    pub residuals: Vec<Vec<f64>>,
    pub combination: Vec<f64>,
    pub attempts: usize,
    pub min_gap: f64,
}

/// Diagonalizes `sum_i l_i M_i` with `l_i ~ U[-1, 1]` and reads each
/// frequency coordinate off the eigenvectors.
pub fn joint_eigenvectors(ms: &[DMatrix<Complex64>], seed: u64) -> Result<JointEigen> {
    let Some(first) = ms.first() else {
        return Err(Error::InvalidInput("no multiplication matrices".into()));
    };
    let r = first.nrows();
    if ms.iter().any(|m| m.shape() != (r, r)) {
        return Err(Error::InvalidInput(
            "multiplication matrices must be square and equally sized".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut last_gap = 0.0;
    for attempt in 1..=MAX_COMBINATION_ATTEMPTS {
        let combination: Vec<f64> = ms.iter().map(|_| rng.random_range(-1.0..=1.0)).collect();
        let combined = ms
            .iter()
            .zip(&combination)
            .fold(DMatrix::zeros(r, r), |acc, (m, &l)| acc + m * Complex64::new(l, 0.0));
        let e = eig(&combined)?;
        if e.near_defective {
            last_gap = e.min_gap;
            continue;
        }
        let mut freqs = Vec::with_capacity(r);
        let mut residuals = Vec::with_capacity(r);
        for v in e.vectors.column_iter() {
            let v = v.into_owned();
            let (xi, res): (Vec<_>, Vec<_>) = ms.iter().map(|m| eigenvalue_for(m, &v)).unzip();
            freqs.push(xi);
            residuals.push(res);
        }
        return Ok(JointEigen {
            vectors: e.vectors,
            freqs,
            residuals,
            combination,
            attempts: attempt,
            min_gap: e.min_gap,
        });
    }
    Err(Error::NearDefective {
        attempts: MAX_COMBINATION_ATTEMPTS,
        gap: last_gap,
    })
}

/// Rayleigh quotient `v^H M v / v^H v`, falling back to `(M v)_k / v_k` at the
/// largest entry of `v` when that has the smaller residual.
fn eigenvalue_for(m: &DMatrix<Complex64>, v: &DVector<Complex64>) -> (Complex64, f64) {
    let mv = m * v;
    let residual = |lambda: Complex64| (&mv - v * lambda).norm();
    let rayleigh = v.dotc(&mv) / v.dotc(v);
    let res = residual(rayleigh);
    if res <= RAYLEIGH_FALLBACK_RTOL * m.norm() {
        return (rayleigh, res);
    }
    let k = (0..v.len()).fold(0, |best, i| if v[i].norm() > v[best].norm() { i } else { best });
    let ratio = mv[k] / v[k];
    let res_ratio = residual(ratio);
    if res_ratio < res {
        (ratio, res_ratio)
    } else {
        (rayleigh, res)
    }
}

/// `w_j = (row_1(H) V_r v_j) / ([xi_j^beta]_beta . V_r v_j)`.
///
/// `vr` holds the first `r` right singular vectors (`|A2| x r`), `cols` is
/// the column monomial set `A2`.
pub fn recover_weights(
    h: &HankelMatrix,
    vr: &DMatrix<Complex64>,
    vectors: &DMatrix<Complex64>,
    freqs: &[Vec<Complex64>],
) -> Result<Vec<Complex64>> {
    let cols: &MonomialSet = &h.cols;
    let constant_row = h.entries.row(0);
    vectors
        .column_iter()
        .zip(freqs)
        .enumerate()
        .map(|(j, (v, xi))| {
            let coeffs = vr * v;
            let numerator = (constant_row * &coeffs)[(0, 0)];
            let eval = DVector::from_iterator(cols.len(), cols.iter().map(|b| b.eval(xi)));
            let denominator = eval.dot(&coeffs);
            if denominator.norm() < WEIGHT_DENOM_RTOL * eval.norm() * coeffs.norm()
                || denominator.norm() == 0.0
            {
                return Err(Error::UnstableWeight {
                    term: j,
                    denominator: denominator.norm(),
                });
            }
            Ok(numerator / denominator)
        })
        .collect()
}

pub fn decompose(seq: &MomentSequence, opts: &DecomposeOptions) -> Result<DecomposeResult> {
    if !(opts.rank_tol > 0.0 && opts.rank_tol < 1.0) {
        return Err(Error::InvalidInput(format!(
            "rank threshold must lie in (0, 1), got {}",
            opts.rank_tol
        )));
    }
    let n = seq.n();
    let (d1, d2) = match opts.degrees {
        Some(split) => split,
        None => degree_split(seq.d())?,
    };
    let h = build_hankel(seq, d1, d2)?;
    let shifted = (0..n)
        .map(|i| build_shifted_hankel(seq, d1, d2, i))
        .collect::<Result<Vec<_>>>()?;
    let dec = svd(&h.entries)?;
    let (rows, cols) = h.shape();
    let max_rank = rows.min(cols);
    let r = match opts.rank {
        Some(r) if r > max_rank => return Err(Error::RankTooLarge { rank: r, max: max_rank }),
        Some(0) => return Err(Error::InvalidInput("forced rank must be positive".into())),
        Some(r) => r,
        None => numerical_rank(&dec.s, opts.rank_tol)?,
    };
    let ms = multiplication_matrices(&shifted, &dec, r)?;
    let joint = joint_eigenvectors(&ms, opts.seed)?;
    let vr = dec.right(r);
    let weights = recover_weights(&h, &vr, &joint.vectors, &joint.freqs)?;

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| cmp_freq(&joint.freqs[a], &joint.freqs[b]));
    let terms = order
        .iter()
        .map(|&j| Term {
            weight: weights[j],
            freq: joint.freqs[j].clone(),
        })
        .collect();
    let eigenvectors = DMatrix::from_fn(r, r, |i, k| joint.vectors[(i, order[k])]);
    let eigen_residuals: Vec<Vec<f64>> = order.iter().map(|&j| joint.residuals[j].clone()).collect();
    let max_eigen_residual = eigen_residuals.iter().flatten().copied().fold(0.0, f64::max);

    let diagnostics = Diagnostics {
        d1,
        d2,
        rows,
        cols,
        rank_possibly_truncated: r == max_rank,
        combination: joint.combination,
        combination_attempts: joint.attempts,
        min_eigengap: joint.min_gap,
        max_commutator: max_commutator(&ms),
        eigen_residuals,
        max_eigen_residual,
    };
    Ok(DecomposeResult {
        rank: r,
        singular_values: dec.s,
        multiplication: ms,
        eigenvectors,
        model: PolyExpModel::from_terms(n, terms),
        diagnostics,
    })
}

pub fn max_commutator(ms: &[DMatrix<Complex64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in ms.iter().enumerate() {
        for b in &ms[i + 1..] {
            let scale = a.norm() * b.norm();
            if scale > 0.0 {
                worst = worst.max((a * b - b * a).norm() / scale);
            }
        }
    }
    worst
}
