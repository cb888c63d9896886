//! Matching recovered terms to ground truth and the max-error statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PolyExpModel;
use crate::Complex64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `matching[i]` is the estimate term paired with truth term `i`.
    pub matching: Vec<usize>,
    /// `max(max_i |w_i - w'_i|, max_i ||xi_i - xi'_i||_2)`.
    pub err: f64,
    /// Same as `err` with frequency errors divided by `||xi_i||_2`.
    pub rel_err: f64,
    pub freq_errors: Vec<f64>,
    pub weight_errors: Vec<f64>,
    pub rank_mismatch: bool,
}

impl ErrorReport {
    fn mismatch() -> Self {
        ErrorReport {
            matching: Vec::new(),
            err: f64::INFINITY,
            rel_err: f64::INFINITY,
            freq_errors: Vec::new(),
            weight_errors: Vec::new(),
            rank_mismatch: true,
        }
    }
}

pub fn freq_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Pairs terms by a minimum-cost assignment on frequency distance, then
/// scores the pairing. Differing term counts give a rank-mismatch report
/// with infinite errors.
pub fn match_and_score(truth: &PolyExpModel, est: &PolyExpModel) -> Result<ErrorReport> {
    if truth.n() != est.n() {
        return Err(Error::Dimension {
            expected: truth.n(),
            got: est.n(),
        });
    }
    if truth.rank() != est.rank() {
        return Ok(ErrorReport::mismatch());
    }
    let (t, e) = (truth.terms(), est.terms());
    let cost: Vec<Vec<f64>> = t
        .iter()
        .map(|a| e.iter().map(|b| freq_distance(&a.freq, &b.freq)).collect())
        .collect();
    let matching = min_cost_assignment(&cost);
    let mut freq_errors = Vec::with_capacity(t.len());
    let mut weight_errors = Vec::with_capacity(t.len());
    let mut rel_freq: f64 = 0.0;
    for (i, &j) in matching.iter().enumerate() {
        let fe = cost[i][j];
        freq_errors.push(fe);
        weight_errors.push((t[i].weight - e[j].weight).norm());
        let scale = t[i].freq.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        rel_freq = rel_freq.max(if scale > 0.0 { fe / scale } else { fe });
    }
    let max_w = weight_errors.iter().copied().fold(0.0, f64::max);
    let max_f = freq_errors.iter().copied().fold(0.0, f64::max);
    Ok(ErrorReport {
        matching,
        err: max_f.max(max_w),
        rel_err: rel_freq.max(max_w),
        freq_errors,
        weight_errors,
        rank_mismatch: false,
    })
}

/// Hungarian algorithm (shortest augmenting paths with potentials) for a
/// square cost matrix. Returns `assignment[row] = col`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based internals; column 0 is a virtual start node
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[col_owner[j] - 1] = j - 1;
    }
    assignment
}
